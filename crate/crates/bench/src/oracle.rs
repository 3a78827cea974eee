//! Sorted-map reference used to check every other index.

use std::collections::BTreeMap;

use hire_core::Entry;

#[derive(Debug, Clone, Default)]
pub struct SortedMapOracle {
    map: BTreeMap<u64, u64>,
}

impl SortedMapOracle {
    pub fn from_entries(entries: &[Entry]) -> Self {
        SortedMapOracle {
            map: entries.iter().map(|e| (e.key, e.value)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, k: u64) -> Option<u64> {
        self.map.get(&k).copied()
    }

    /// Returns true if the key was new.
    pub fn insert(&mut self, k: u64, v: u64) -> bool {
        self.map.insert(k, v).is_none()
    }

    pub fn delete(&mut self, k: u64) -> bool {
        self.map.remove(&k).is_some()
    }

    pub fn range_into(&self, lo: u64, hi: u64, limit: Option<usize>, out: &mut Vec<Entry>) {
        out.clear();
        if lo <= hi {
            let it = self.map.range(lo..=hi).map(|(&k, &v)| Entry::new(k, v));
            out.extend(it.take(limit.unwrap_or(usize::MAX)));
        }
    }

    pub fn entries(&self) -> Vec<Entry> {
        self.map.iter().map(|(&k, &v)| Entry::new(k, v)).collect()
    }
}
