//! `bench`: runs one workload against HIRE or the baseline B+-tree and
//! writes a JSON report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use hire_bench::btree::DEFAULT_FANOUT;
use hire_bench::runner::hire_params;
use hire_bench::{
    run_benchmark, DatasetSource, IndexKind, Ratio, RunConfig, RunError, WorkloadSpec,
};
use hire_core::ExecMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IndexArg {
    Hire,
    Btree,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExecArg {
    /// Threaded on multi-core machines, stepped otherwise.
    Auto,
    Threaded,
    Stepped,
}

#[derive(Debug, Parser)]
#[command(
    name = "bench",
    version,
    about = "Benchmark HIRE against a baseline B+-tree"
)]
struct Args {
    #[arg(long, value_enum)]
    index: IndexArg,
    /// sosd:PATH, uniform:N, lognormal:N or segmented:N
    #[arg(long)]
    dataset: DatasetSource,
    #[arg(long, default_value_t = 0.2)]
    bulk_frac: f64,
    #[arg(long, default_value_t = 0.75)]
    ops_frac: f64,
    /// Query:insert:delete weights.
    #[arg(long, default_value = "1:1:1")]
    ratio: Ratio,
    /// Expected results per range query; 1 means point lookups.
    #[arg(long, default_value_t = 256)]
    match_rate: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node fanout (HIRE internal nodes or B+-tree nodes).
    #[arg(long)]
    fanout: Option<usize>,
    #[arg(long, value_enum, default_value_t = ExecArg::Auto)]
    exec: ExecArg,
    #[arg(long)]
    no_legacy_leaves: bool,
    #[arg(long)]
    blocking_recalibration: bool,
    /// Co-replay on a sorted map and fail on the first disagreement.
    #[arg(long)]
    oracle_check: bool,
    /// Halve SOSD keys instead of rejecting keys at or above 2^63.
    #[arg(long)]
    shift_keys: bool,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump per-op latencies (op index, nanoseconds).
    #[arg(long)]
    latency_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> anyhow::Result<()> {
    let mut spec = WorkloadSpec::new(args.dataset.clone(), args.seed);
    spec.bulk_fraction = args.bulk_frac;
    spec.ops_fraction = args.ops_frac;
    spec.ratio = args.ratio;
    spec.match_rate = args.match_rate;

    let mut cfg = RunConfig::new(match args.index {
        IndexArg::Hire => IndexKind::Hire,
        IndexArg::Btree => IndexKind::Btree,
    });
    let fanout = args.fanout.unwrap_or(DEFAULT_FANOUT);
    cfg.params = hire_params(fanout, args.no_legacy_leaves, args.blocking_recalibration);
    cfg.params.exec_mode = match args.exec {
        ExecArg::Auto => ExecMode::auto(),
        ExecArg::Threaded => ExecMode::Threaded,
        ExecArg::Stepped => ExecMode::Stepped,
    };
    cfg.btree_fanout = fanout;
    cfg.oracle_check = args.oracle_check;

    let out = match run_benchmark(&spec, &cfg, args.shift_keys) {
        Err(e @ (RunError::Mismatch { .. } | RunError::FinalMismatch(_))) => {
            anyhow::bail!("oracle check failed: {e}")
        }
        r => r.context("benchmark run failed")?,
    };

    let json = out.report.to_json();
    match &args.out {
        Some(p) => {
            std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{json}"),
    }
    if let Some(p) = &args.latency_csv {
        let ctx = || format!("writing {}", p.display());
        let mut w = BufWriter::new(File::create(p).with_context(ctx)?);
        writeln!(w, "op,latency_ns").with_context(ctx)?;
        for (i, ns) in out.latencies.iter().enumerate() {
            writeln!(w, "{i},{ns}").with_context(ctx)?;
        }
        w.flush().with_context(ctx)?;
    }
    let r = &out.report;
    eprintln!(
        "{} on {}: {} ops, {:.0} ops/s, p99.9 {} ns",
        r.index, r.dataset, r.ops, r.throughput_ops_per_sec, r.latency_ns["p99.9"]
    );
    Ok(())
}
