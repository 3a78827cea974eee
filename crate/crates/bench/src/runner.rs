//! Replays a workload on one index, timing every operation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use hire_core::{Entry, HireError, HireIndex, IndexParams};

use crate::btree::{BaselineBTree, DEFAULT_FANOUT};
use crate::datasets::DatasetError;
use crate::index::BenchIndex;
use crate::oracle::SortedMapOracle;
use crate::report::{
    BenchReport, ConfigEcho, HireSummary, MemoryReport, MemorySample, OracleSummary,
};
use crate::workload::{gen_workload, Op, SpecError, Workload, WorkloadSpec};

pub const PERCENTILE_RANKS: [f64; 5] = [50.0, 75.0, 90.0, 99.0, 99.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Hire,
    Btree,
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndexKind::Hire => "hire",
            IndexKind::Btree => "btree",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub index: IndexKind,
    /// HIRE parameters, including ablation switches and execution mode.
    pub params: IndexParams,
    pub btree_fanout: usize,
    /// Co-replay every operation on a sorted map and compare results.
    pub oracle_check: bool,
    /// Target number of memory samples over the run.
    pub memory_samples: usize,
    /// Audit the structure every this many operations.
    pub audit_every: Option<usize>,
}

impl RunConfig {
    pub fn new(index: IndexKind) -> Self {
        RunConfig {
            index,
            params: IndexParams::default(),
            btree_fanout: DEFAULT_FANOUT,
            oracle_check: false,
            memory_samples: 100,
            audit_every: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("bulk load failed: {0}")]
    BulkLoad(HireError),
    #[error("op {op_index} ({op:?}) failed: {source}")]
    Index {
        op_index: usize,
        op: Op,
        source: HireError,
    },
    #[error("op {op_index} ({op:?}) disagrees with the oracle: {detail}")]
    Mismatch {
        op_index: usize,
        op: Op,
        detail: String,
    },
    #[error("final contents disagree with the oracle: {0}")]
    FinalMismatch(String),
    #[error("no latencies to summarize")]
    EmptyLatencies,
}

/// A finished run: the report plus the raw per-op latencies.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: BenchReport,
    /// Nanoseconds, in op order.
    pub latencies: Vec<u64>,
}

/// Nearest-rank percentiles: the value at position `ceil(r/100 * n)` of the
/// sorted sample (1-based), for each rank `r`.
pub fn percentiles(latencies: &[u64], ranks: &[f64]) -> Result<Vec<(f64, u64)>, RunError> {
    if latencies.is_empty() {
        return Err(RunError::EmptyLatencies);
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok(ranks
        .iter()
        .map(|&r| {
            let pos = ((r / 100.0) * n as f64).ceil() as usize;
            (r, sorted[pos.clamp(1, n) - 1])
        })
        .collect())
}

/// Loads the dataset, generates the workload and runs it.
pub fn run_benchmark(
    spec: &WorkloadSpec,
    cfg: &RunConfig,
    shift_keys: bool,
) -> Result<RunOutput, RunError> {
    spec.validate()?;
    let keys = spec.dataset.keys(spec.seed, shift_keys)?;
    let w = gen_workload(&keys, spec)?;
    run_workload(&w, spec, keys.len(), cfg)
}

/// Runs a prepared workload. `spec` and `n_keys` are echoed in the report.
pub fn run_workload(
    w: &Workload,
    spec: &WorkloadSpec,
    n_keys: usize,
    cfg: &RunConfig,
) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    match cfg.index {
        IndexKind::Hire => {
            let mut idx =
                HireIndex::bulk_load(&w.bulk, cfg.params.clone()).map_err(RunError::BulkLoad)?;
            let load_ns = start.elapsed().as_nanos() as u64;
            let mut out = drive(&mut idx, w, spec, n_keys, cfg, load_ns)?;
            let audit = idx.check_invariants();
            out.report.hire = Some(HireSummary::new(
                &idx.metrics(),
                &idx.stats(),
                audit.violations.len(),
            ));
            Ok(out)
        }
        IndexKind::Btree => {
            let mut idx = BaselineBTree::bulk_load(&w.bulk, cfg.btree_fanout);
            let load_ns = start.elapsed().as_nanos() as u64;
            let mut out = drive(&mut idx, w, spec, n_keys, cfg, load_ns)?;
            out.report.btree_violations = Some(idx.check_invariants().len());
            Ok(out)
        }
    }
}

/// Order-sensitive hash of the contents.
pub fn content_hash(entries: &[Entry]) -> u64 {
    let mut h = DefaultHasher::new();
    for e in entries {
        (e.key, e.value).hash(&mut h);
    }
    h.finish()
}

fn drive<I: BenchIndex>(
    idx: &mut I,
    w: &Workload,
    spec: &WorkloadSpec,
    n_keys: usize,
    cfg: &RunConfig,
    bulk_load_ns: u64,
) -> Result<RunOutput, RunError> {
    let mut oracle = cfg
        .oracle_check
        .then(|| SortedMapOracle::from_entries(&w.bulk));
    let mut latencies = vec![0u64; w.ops.len()];
    let interval = (w.ops.len() / cfg.memory_samples.max(1)).max(1);
    let mut samples = vec![MemorySample {
        op: 0,
        bytes: idx.memory_bytes(),
    }];
    let (mut got, mut want) = (Vec::new(), Vec::new());
    let mut audits = AuditTally::default();
    let wall = Instant::now();
    for (i, &op) in w.ops.iter().enumerate() {
        let fail = |source| RunError::Index {
            op_index: i,
            op,
            source,
        };
        let mismatch = |detail: String| RunError::Mismatch {
            op_index: i,
            op,
            detail,
        };
        let t = Instant::now();
        match op {
            Op::Get(k) => {
                let v = idx.get(k);
                latencies[i] = t.elapsed().as_nanos() as u64;
                if let Some(o) = &oracle {
                    if v != o.get(k) {
                        return Err(mismatch(format!("got {v:?}, expected {:?}", o.get(k))));
                    }
                }
            }
            Op::Range(lo, hi) => {
                idx.range_into(lo, hi, None, &mut got).map_err(fail)?;
                latencies[i] = t.elapsed().as_nanos() as u64;
                if let Some(o) = &oracle {
                    o.range_into(lo, hi, None, &mut want);
                    if got != want {
                        return Err(mismatch(first_difference(&got, &want)));
                    }
                }
            }
            Op::Insert(k, v) => {
                idx.insert(k, v).map_err(fail)?;
                latencies[i] = t.elapsed().as_nanos() as u64;
                if let Some(o) = &mut oracle {
                    o.insert(k, v);
                }
            }
            Op::Delete(k) => {
                let hit = idx.delete(k).map_err(fail)?;
                latencies[i] = t.elapsed().as_nanos() as u64;
                if let Some(o) = &mut oracle {
                    let expected = o.delete(k);
                    if hit != expected {
                        return Err(mismatch(format!(
                            "delete returned {hit}, expected {expected}"
                        )));
                    }
                }
            }
        }
        if let Some(o) = &oracle {
            if idx.len() != o.len() {
                return Err(mismatch(format!(
                    "length {} after op, expected {}",
                    idx.len(),
                    o.len()
                )));
            }
        }
        if cfg.audit_every.is_some_and(|n| (i + 1) % n.max(1) == 0) {
            audits.record(i + 1, idx.structural_violations());
        }
        if (i + 1) % interval == 0 {
            samples.push(MemorySample {
                op: i + 1,
                bytes: idx.memory_bytes(),
            });
        }
    }
    let wall_ns = wall.elapsed().as_nanos() as u64;
    idx.settle();
    let entries = idx.entries();
    if let Some(o) = &oracle {
        let want = o.entries();
        if entries != want {
            return Err(RunError::FinalMismatch(first_difference(&entries, &want)));
        }
    }
    let busy: u64 = latencies.iter().sum();
    let latency_ns = if latencies.is_empty() {
        Default::default()
    } else {
        percentiles(&latencies, &PERCENTILE_RANKS)?
            .into_iter()
            .map(|(r, v)| (format!("p{r}"), v))
            .collect()
    };
    let report = BenchReport {
        index: cfg.index,
        dataset: spec.dataset.to_string(),
        config: ConfigEcho::new(spec, cfg),
        keys: n_keys,
        bulk_loaded: w.bulk.len(),
        ops: w.ops.len(),
        op_counts: w.counts(),
        inserts_as_queries: w.inserts_as_queries,
        reads_as_inserts: w.reads_as_inserts,
        bulk_load_ns,
        wall_ns,
        throughput_ops_per_sec: if busy == 0 {
            0.0
        } else {
            w.ops.len() as f64 * 1e9 / busy as f64
        },
        mean_latency_ns: if latencies.is_empty() {
            0.0
        } else {
            busy as f64 / latencies.len() as f64
        },
        latency_ns,
        memory: MemoryReport::new(interval, samples),
        final_len: entries.len(),
        content_hash: format!("{:016x}", content_hash(&entries)),
        oracle: oracle.map(|_| OracleSummary {
            checked_ops: w.ops.len(),
            mismatches: 0,
        }),
        mid_run_audits: audits.runs,
        mid_run_violations: audits.violations,
        first_mid_run_violation: audits.first,
        hire: None,
        btree_violations: None,
    };
    Ok(RunOutput { report, latencies })
}

#[derive(Default)]
struct AuditTally {
    runs: usize,
    violations: usize,
    first: Option<String>,
}

impl AuditTally {
    fn record(&mut self, op: usize, found: Vec<String>) {
        self.runs += 1;
        self.violations += found.len();
        if self.first.is_none() {
            self.first = found
                .into_iter()
                .next()
                .map(|m| format!("after op {op}: {m}"));
        }
    }
}

fn first_difference(got: &[Entry], want: &[Entry]) -> String {
    match got.iter().zip(want).position(|(a, b)| a != b) {
        Some(i) => format!("entry {i}: got {:?}, expected {:?}", got[i], want[i]),
        None => format!("got {} entries, expected {}", got.len(), want.len()),
    }
}

/// HIRE parameters for a bench run: the given fanout's defaults with the
/// two ablation switches applied.
pub fn hire_params(fanout: usize, no_legacy: bool, blocking: bool) -> IndexParams {
    let mut p = IndexParams::with_fanout(fanout);
    p.ablation.disable_legacy_leaves = no_legacy;
    p.ablation.blocking_recalibration = blocking;
    p
}

#[cfg(test)]
mod tests {
    use hire_core::ExecMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    use super::*;
    use crate::workload::Ratio;

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let xs: Vec<u64> = (1..=100).collect();
        let p = percentiles(&xs, &[50.0, 99.0, 99.9, 100.0, 0.0]).unwrap();
        assert_eq!(
            p.iter().map(|x| x.1).collect::<Vec<_>>(),
            vec![50, 99, 100, 100, 1]
        );
    }

    #[test]
    fn constant_sample() {
        let p = percentiles(&[5, 5, 5], &PERCENTILE_RANKS).unwrap();
        assert!(p.iter().all(|&(_, v)| v == 5));
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(matches!(
            percentiles(&[], &[50.0]),
            Err(RunError::EmptyLatencies)
        ));
    }

    /// Oracle: the smallest sample value with at least r% of the sample at
    /// or below it, found by counting.
    #[test]
    fn exponential_tail_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Exp::new(1e-3).unwrap();
        let xs: Vec<u64> = (0..1_000_000).map(|_| d.sample(&mut rng) as u64).collect();
        let got = percentiles(&xs, &PERCENTILE_RANKS).unwrap();
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        for (r, v) in got {
            let need = r / 100.0 * xs.len() as f64;
            let at_or_below = sorted.partition_point(|&x| x <= v) as f64;
            let below = sorted.partition_point(|&x| x < v) as f64;
            assert!(at_or_below >= need && below < need, "p{r} = {v}");
        }
    }

    fn tiny_spec(ratio: Ratio) -> WorkloadSpec {
        let mut s = WorkloadSpec::new("uniform:1000".parse().unwrap(), 3);
        s.ratio = ratio;
        s.match_rate = 16;
        s
    }

    fn stepped(fanout: usize) -> IndexParams {
        let mut p = hire_params(fanout, false, false);
        p.exec_mode = ExecMode::Stepped;
        p
    }

    #[test]
    fn tiny_run_fills_every_field() {
        for kind in [IndexKind::Hire, IndexKind::Btree] {
            let mut cfg = RunConfig::new(kind);
            cfg.params = stepped(16);
            cfg.oracle_check = true;
            cfg.audit_every = Some(50);
            let out = run_benchmark(&tiny_spec(Ratio::BALANCED), &cfg, false).unwrap();
            let r = &out.report;
            assert_eq!((r.ops, r.keys, r.bulk_loaded), (750, 1000, 200));
            assert_eq!(out.latencies.len(), 750);
            assert_eq!(r.op_counts.total(), 750);
            assert!(r.throughput_ops_per_sec > 0.0);
            let ps: Vec<u64> = ["p50", "p75", "p90", "p99", "p99.9"]
                .iter()
                .map(|k| r.latency_ns[*k])
                .collect();
            assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{ps:?}");
            assert_eq!(r.memory.samples.len(), 1 + r.ops / r.memory.interval_ops);
            assert!(r.memory.mean_bytes > 0.0);
            assert_eq!(r.oracle.as_ref().unwrap().mismatches, 0);
            assert_eq!((r.mid_run_audits, r.mid_run_violations), (15, 0));
            assert_eq!(kind == IndexKind::Hire, r.hire.is_some());
            serde_json::to_string(r).unwrap();
        }
    }

    #[test]
    fn same_seed_same_contents() {
        let mut spec = tiny_spec(Ratio::WRITE_HEAVY);
        spec.dataset = "segmented:20000".parse().unwrap();
        let mut cfg = RunConfig::new(IndexKind::Hire);
        cfg.params = stepped(16);
        let a = run_benchmark(&spec, &cfg, false).unwrap().report;
        let b = run_benchmark(&spec, &cfg, false).unwrap().report;
        assert_eq!(a.content_hash, b.content_hash);
        assert_eq!(a.op_counts, b.op_counts);
        cfg.index = IndexKind::Btree;
        let c = run_benchmark(&spec, &cfg, false).unwrap().report;
        assert_eq!(a.content_hash, c.content_hash);
        spec.seed += 1;
        assert_ne!(
            run_benchmark(&spec, &cfg, false)
                .unwrap()
                .report
                .content_hash,
            c.content_hash
        );
    }

    #[test]
    fn index_errors_carry_the_op() {
        let spec = tiny_spec(Ratio::BALANCED);
        let w = Workload {
            bulk: vec![Entry::new(1, 1)],
            ops: vec![Op::Get(1), Op::Range(9, 3)],
            inserts_as_queries: 0,
            reads_as_inserts: 0,
        };
        for kind in [IndexKind::Hire, IndexKind::Btree] {
            let mut cfg = RunConfig::new(kind);
            cfg.params = stepped(16);
            let err = run_workload(&w, &spec, 1, &cfg).unwrap_err();
            assert!(matches!(err, RunError::Index { op_index: 1, .. }), "{err}");
        }
    }

    /// Loses every delete.
    struct Forgetful(BaselineBTree);

    impl BenchIndex for Forgetful {
        fn get(&self, k: u64) -> Option<u64> {
            self.0.get(k)
        }
        fn range_into(
            &self,
            lo: u64,
            hi: u64,
            limit: Option<usize>,
            out: &mut Vec<Entry>,
        ) -> Result<(), HireError> {
            BenchIndex::range_into(&self.0, lo, hi, limit, out)
        }
        fn insert(&mut self, k: u64, v: u64) -> Result<(), HireError> {
            BenchIndex::insert(&mut self.0, k, v)
        }
        fn delete(&mut self, k: u64) -> Result<bool, HireError> {
            Ok(self.0.get(k).is_some())
        }
        fn len(&self) -> usize {
            self.0.len()
        }
        fn memory_bytes(&self) -> usize {
            0
        }
        fn entries(&self) -> Vec<Entry> {
            self.0.entries()
        }
        fn structural_violations(&self) -> Vec<String> {
            Vec::new()
        }
    }

    #[test]
    fn oracle_flags_a_wrong_answer() {
        let spec = tiny_spec(Ratio::BALANCED);
        let w = Workload {
            bulk: vec![Entry::new(1, 1), Entry::new(2, 2)],
            ops: vec![Op::Get(2), Op::Delete(1), Op::Get(1)],
            inserts_as_queries: 0,
            reads_as_inserts: 0,
        };
        let mut cfg = RunConfig::new(IndexKind::Btree);
        cfg.oracle_check = true;
        let mut idx = Forgetful(BaselineBTree::bulk_load(&w.bulk, 4));
        let err = drive(&mut idx, &w, &spec, 2, &cfg, 0).unwrap_err();
        assert!(
            matches!(err, RunError::Mismatch { op_index: 1, .. }),
            "{err}"
        );

        let r = run_workload(&w, &spec, 2, &cfg).unwrap().report;
        assert_eq!(r.final_len, 1);
        assert_eq!(
            r.content_hash,
            format!("{:016x}", content_hash(&[Entry::new(2, 2)]))
        );
    }
}
