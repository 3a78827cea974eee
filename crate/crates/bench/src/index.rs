//! The operations the runner drives, implemented for HIRE and the baseline.

use hire_core::{Entry, HireError, HireIndex};

use crate::btree::BaselineBTree;

pub trait BenchIndex {
    fn get(&self, k: u64) -> Option<u64>;
    fn range_into(
        &self,
        lo: u64,
        hi: u64,
        limit: Option<usize>,
        out: &mut Vec<Entry>,
    ) -> Result<(), HireError>;
    fn insert(&mut self, k: u64, v: u64) -> Result<(), HireError>;
    fn delete(&mut self, k: u64) -> Result<bool, HireError>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn memory_bytes(&self) -> usize;
    fn entries(&self) -> Vec<Entry>;
    /// Finishes deferred work before the final check.
    fn settle(&mut self) {}
    /// Violations of the invariants that must hold between any two
    /// operations.
    fn structural_violations(&self) -> Vec<String>;
}

/// Audit findings that are expected while a job is in flight: the length
/// counts logged updates, a leaf may wait below its floor for conversion and
/// a buffer may overflow while its rebuild is queued. All three are repaired
/// by the time the index is quiescent.
pub fn is_transient(message: &str) -> bool {
    message.contains("length says")
        || message.starts_with("model leaf holds")
        || message.starts_with("buffer holds")
}

impl BenchIndex for HireIndex {
    fn get(&self, k: u64) -> Option<u64> {
        HireIndex::get(self, k)
    }

    fn range_into(
        &self,
        lo: u64,
        hi: u64,
        limit: Option<usize>,
        out: &mut Vec<Entry>,
    ) -> Result<(), HireError> {
        HireIndex::range_into(self, lo, hi, limit, out)
    }

    fn insert(&mut self, k: u64, v: u64) -> Result<(), HireError> {
        HireIndex::insert(self, k, v)
    }

    fn delete(&mut self, k: u64) -> Result<bool, HireError> {
        HireIndex::delete(self, k)
    }

    fn len(&self) -> usize {
        HireIndex::len(self)
    }

    fn memory_bytes(&self) -> usize {
        HireIndex::memory_bytes(self)
    }

    fn entries(&self) -> Vec<Entry> {
        HireIndex::entries(self)
    }

    fn settle(&mut self) {
        self.quiesce();
    }

    fn structural_violations(&self) -> Vec<String> {
        let report = self.check_invariants();
        report
            .violations
            .into_iter()
            .filter(|v| !is_transient(&v.message))
            .map(|v| v.to_string())
            .collect()
    }
}

impl BenchIndex for BaselineBTree {
    fn get(&self, k: u64) -> Option<u64> {
        BaselineBTree::get(self, k)
    }

    fn range_into(
        &self,
        lo: u64,
        hi: u64,
        limit: Option<usize>,
        out: &mut Vec<Entry>,
    ) -> Result<(), HireError> {
        if lo > hi {
            return Err(HireError::InvertedRange { lo, hi });
        }
        BaselineBTree::range_into(self, lo, hi, limit, out);
        Ok(())
    }

    fn insert(&mut self, k: u64, v: u64) -> Result<(), HireError> {
        BaselineBTree::insert(self, k, v);
        Ok(())
    }

    fn delete(&mut self, k: u64) -> Result<bool, HireError> {
        Ok(BaselineBTree::delete(self, k))
    }

    fn len(&self) -> usize {
        BaselineBTree::len(self)
    }

    fn memory_bytes(&self) -> usize {
        BaselineBTree::memory_bytes(self)
    }

    fn entries(&self) -> Vec<Entry> {
        BaselineBTree::entries(self)
    }

    fn structural_violations(&self) -> Vec<String> {
        self.check_invariants()
    }
}
