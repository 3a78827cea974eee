//! HIRE: a hybrid learned index.
//!
//! A balanced tree whose leaves are either model leaves (a compact sorted
//! array searched through a bounded-error linear model, plus an unsorted
//! insert buffer) or legacy leaves (B+-tree style sorted arrays). Internal
//! nodes place their children with a linear model over a gap array.
//! Model leaves are rebuilt off the critical path when their buffers fill
//! up or when they become hot, and legacy runs that turn out to be linear are
//! merged back into model leaves.

pub mod error;
pub mod internal;
pub mod key;
pub mod leaf;
pub mod params;
pub mod plm;
pub mod recal;
mod tree;

pub use error::{HireError, Result};
pub use key::{is_masked, mask_key, Entry, Key, MASK_BIT, MAX_KEY};
pub use params::{Ablation, CostModelParams, ExecMode, IndexParams};
pub use plm::{fit_least_squares, rls_update, ConeFitter, LinearModel, RlsState};
pub use recal::{should_retrain, update_cost_estimates, CostModel, JobKind, Observation, Trigger};
pub use tree::{AuditReport, HireIndex, IndexStats, Metrics, Violation};
