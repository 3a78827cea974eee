use std::collections::{BTreeMap, VecDeque};

use crate::key::Entry;

/// Updates diverted away from a subtree while it is being rebuilt. Kept in
/// arrival order for replay, with a per-key view of the newest pending state
/// for readers.
#[derive(Debug, Default, Clone)]
pub struct MlsLog {
    order: VecDeque<(u64, Option<u64>)>,
    latest: BTreeMap<u64, (u32, Option<u64>)>,
}

impl MlsLog {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Records an insert (`Some(value)`) or a delete (`None`).
    pub fn push(&mut self, key: u64, op: Option<u64>) {
        self.order.push_back((key, op));
        let slot = self.latest.entry(key).or_insert((0, None));
        slot.0 += 1;
        slot.1 = op;
    }

    /// The newest pending state of `key`: `Some(Some(v))` if it will be
    /// live with value `v`, `Some(None)` if it will be deleted.
    pub fn get(&self, key: u64) -> Option<Option<u64>> {
        self.latest.get(&key).map(|s| s.1)
    }

    /// Oldest pending update.
    pub fn pop(&mut self) -> Option<(u64, Option<u64>)> {
        let (k, op) = self.order.pop_front()?;
        let slot = self.latest.get_mut(&k).expect("log index out of sync");
        slot.0 -= 1;
        if slot.0 == 0 {
            self.latest.remove(&k);
        }
        Some((k, op))
    }

    /// Pending keys in `[lo, hi]` with their newest state.
    pub fn range(&self, lo: u64, hi: u64) -> impl Iterator<Item = (u64, Option<u64>)> + '_ {
        self.latest.range(lo..=hi).map(|(&k, s)| (k, s.1))
    }

    /// Applies the pending states in `[lo, hi]` on top of `base` (ascending).
    pub fn overlay(&self, lo: u64, hi: u64, base: &mut Vec<Entry>) {
        let mut over = self.range(lo, hi).peekable();
        if over.peek().is_none() {
            return;
        }
        let old = std::mem::take(base);
        let mut old = old.into_iter().peekable();
        loop {
            match (old.peek(), over.peek()) {
                (Some(a), Some(&(k, _))) if a.key < k => base.push(old.next().unwrap()),
                (Some(a), Some(&(k, op))) => {
                    if a.key == k {
                        old.next();
                    }
                    if let Some(v) = op {
                        base.push(Entry::new(k, v));
                    }
                    over.next();
                }
                (None, Some(&(k, op))) => {
                    if let Some(v) = op {
                        base.push(Entry::new(k, v));
                    }
                    over.next();
                }
                (Some(_), None) => base.push(old.next().unwrap()),
                (None, None) => return,
            }
        }
    }
}
