//! Leaf nodes.
//!
//! A [`ModelLeaf`] keeps a gap-free sorted array indexed by a bounded-error
//! linear model plus an unsorted insert buffer with a hash index. A
//! [`LegacyLeaf`] is a plain sorted array with in-place updates, used where
//! the data does not fit a line well enough to be worth a model.

mod legacy;
mod model;
mod stats;

pub use legacy::{LegacyDelete, LegacyInsert, LegacyLeaf, RegressionSums};
pub(crate) use model::LeafBuilder;
pub use model::{InsertOutcome, ModelLeaf};
pub use stats::LeafStats;

/// Appends `sorted_extra` into `out` so that the tail starting at `from`
/// stays ascending. Both inputs must be ascending and key-disjoint.
pub(crate) fn merge_tail(out: &mut Vec<crate::Entry>, from: usize, sorted_extra: &[crate::Entry]) {
    if sorted_extra.is_empty() {
        return;
    }
    let (mut i, mut j) = (out.len(), sorted_extra.len());
    out.extend_from_slice(sorted_extra);
    // Merge from the back so nothing is read after it is overwritten.
    let mut w = out.len();
    while j > 0 {
        w -= 1;
        if i > from && out[i - 1].key > sorted_extra[j - 1].key {
            out[w] = out[i - 1];
            i -= 1;
        } else {
            out[w] = sorted_extra[j - 1];
            j -= 1;
        }
    }
}
