//! Benchmark harness for hire-core: datasets, workloads, a baseline
//! B+-tree, a sorted-map oracle and the run driver.

pub mod btree;
pub mod datasets;
pub mod index;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod workload;

pub use btree::BaselineBTree;
pub use datasets::{gen_synthetic, load_sosd, DatasetError, DatasetSource, SyntheticKind};
pub use index::BenchIndex;
pub use oracle::SortedMapOracle;
pub use report::BenchReport;
pub use runner::{
    percentiles, run_benchmark, run_workload, IndexKind, RunConfig, RunError, RunOutput,
};
pub use workload::{gen_workload, Op, Ratio, Workload, WorkloadSpec};
