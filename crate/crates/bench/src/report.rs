//! The JSON report of one run and the optional latency dump.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use hire_core::{IndexStats, JobKind, Metrics};
use serde::Serialize;

use crate::runner::{IndexKind, RunConfig};
use crate::workload::{Op, OpCounts, WorkloadSpec};

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub index: IndexKind,
    pub dataset: String,
    pub config: ConfigEcho,
    pub keys: usize,
    pub bulk_loaded: usize,
    pub ops: usize,
    pub op_counts: OpCounts,
    pub inserts_as_queries: usize,
    pub reads_as_inserts: usize,
    pub bulk_load_ns: u64,
    /// Wall time of the op loop, including oracle checks and sampling.
    pub wall_ns: u64,
    /// Operations divided by the summed per-op latencies.
    pub throughput_ops_per_sec: f64,
    pub mean_latency_ns: f64,
    /// Nearest-rank percentiles keyed `p50`, `p75`, `p90`, `p99`, `p99.9`.
    pub latency_ns: BTreeMap<String, u64>,
    pub memory: MemoryReport,
    pub final_len: usize,
    pub content_hash: String,
    pub oracle: Option<OracleSummary>,
    /// Structural audits between operations and what they found.
    pub mid_run_audits: usize,
    pub mid_run_violations: usize,
    pub first_mid_run_violation: Option<String>,
    pub hire: Option<HireSummary>,
    pub btree_violations: Option<usize>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub bulk_fraction: f64,
    pub ops_fraction: f64,
    pub ratio: String,
    pub match_rate: usize,
    pub seed: u64,
    pub fanout: usize,
    pub epsilon: usize,
    pub exec_mode: String,
    pub no_legacy_leaves: bool,
    pub blocking_recalibration: bool,
    pub oracle_check: bool,
}

impl ConfigEcho {
    pub fn new(spec: &WorkloadSpec, cfg: &RunConfig) -> Self {
        let p = &cfg.params;
        let hire = cfg.index == IndexKind::Hire;
        ConfigEcho {
            bulk_fraction: spec.bulk_fraction,
            ops_fraction: spec.ops_fraction,
            ratio: spec.ratio.to_string(),
            match_rate: spec.match_rate,
            seed: spec.seed,
            fanout: if hire { p.fanout } else { cfg.btree_fanout },
            epsilon: if hire { p.epsilon } else { 0 },
            exec_mode: if hire {
                format!("{:?}", p.effective_mode()).to_lowercase()
            } else {
                "none".into()
            },
            no_legacy_leaves: hire && p.ablation.disable_legacy_leaves,
            blocking_recalibration: hire && p.ablation.blocking_recalibration,
            oracle_check: cfg.oracle_check,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MemorySample {
    pub op: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub accounting: &'static str,
    pub interval_ops: usize,
    pub samples: Vec<MemorySample>,
    pub mean_bytes: f64,
}

impl MemoryReport {
    pub fn new(interval_ops: usize, samples: Vec<MemorySample>) -> Self {
        let mean_bytes =
            samples.iter().map(|s| s.bytes as f64).sum::<f64>() / samples.len().max(1) as f64;
        MemoryReport {
            accounting: "structural bytes: node headers plus key, value, model and child arrays",
            interval_ops,
            samples,
            mean_bytes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub checked_ops: usize,
    pub mismatches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobTally {
    pub started: u64,
    pub completed: u64,
    pub aborted: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HireSummary {
    pub height: usize,
    pub internal_nodes: usize,
    pub model_leaves: usize,
    pub legacy_leaves: usize,
    pub buffered: usize,
    pub jobs: BTreeMap<String, JobTally>,
    pub jobs_dropped: u64,
    pub job_work_ns: u64,
    pub active_triggers: u64,
    pub passive_triggers: u64,
    pub diverted: u64,
    pub replayed: u64,
    pub max_log_len: usize,
    pub pap_overruns: u64,
    pub job_violations: u64,
    pub buffer_ops: u64,
    pub buffer_touches: u64,
    pub mean_buffer_touches: f64,
    pub audit_violations: usize,
}

impl HireSummary {
    pub fn new(m: &Metrics, s: &IndexStats, audit_violations: usize) -> Self {
        let jobs = JobKind::ALL
            .iter()
            .map(|&k| {
                let t = JobTally {
                    started: m.started(k),
                    completed: m.completed(k),
                    aborted: m.aborted(k),
                };
                (format!("{k:?}").to_lowercase(), t)
            })
            .collect();
        HireSummary {
            height: s.height,
            internal_nodes: s.internal_nodes,
            model_leaves: s.model_leaves,
            legacy_leaves: s.legacy_leaves,
            buffered: s.buffered,
            jobs,
            jobs_dropped: m.jobs_dropped,
            job_work_ns: m.job_work_ns,
            active_triggers: m.active_triggers,
            passive_triggers: m.passive_triggers,
            diverted: m.diverted,
            replayed: m.replayed,
            max_log_len: m.max_log_len,
            pap_overruns: m.pap_overruns,
            job_violations: m.job_violations,
            buffer_ops: m.buffer_ops,
            buffer_touches: m.buffer_touches,
            mean_buffer_touches: if m.buffer_ops == 0 {
                0.0
            } else {
                m.buffer_touches as f64 / m.buffer_ops as f64
            },
            audit_violations,
        }
    }
}

/// Writes `op_index,kind,latency_ns` rows.
pub fn write_latency_csv(path: &Path, ops: &[Op], latencies: &[u64]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "op_index,kind,latency_ns")?;
    for (i, (op, ns)) in ops.iter().zip(latencies).enumerate() {
        let kind = match op {
            Op::Get(_) => "get",
            Op::Range(..) => "range",
            Op::Insert(..) => "insert",
            Op::Delete(_) => "delete",
        };
        writeln!(w, "{i},{kind},{ns}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lat.csv");
        write_latency_csv(&p, &[Op::Get(1), Op::Insert(2, 3)], &[40, 75]).unwrap();
        let s = std::fs::read_to_string(p).unwrap();
        assert_eq!(s, "op_index,kind,latency_ns\n0,get,40\n1,insert,75\n");
    }
}
