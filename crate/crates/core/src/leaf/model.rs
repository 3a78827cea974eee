use rustc_hash::FxHashMap;

use std::cell::RefCell;

use super::{merge_tail, LeafStats};
use crate::error::{HireError, Result};
use crate::key::{cleared, masked, Entry, MASK_BIT};
use crate::plm::{ConeFitter, LinearModel};

thread_local! {
    static SCRATCH: RefCell<Vec<Entry>> = const { RefCell::new(Vec::new()) };
}

/// Result of inserting into a model leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The key was already live; its value was replaced.
    Replaced,
    /// The entry took over a tombstoned slot at its predicted position.
    ReusedSlot,
    /// The entry was appended to the buffer.
    Buffered,
    /// Appended, and the buffer reached its capacity.
    BufferedAndTrigger,
}

#[derive(Debug, Clone)]
pub struct ModelLeaf {
    keys: Box<[u64]>,
    vals: Box<[u64]>,
    model: LinearModel,
    buffer: Vec<Entry>,
    slots: FxHashMap<u64, u32>,
    data_live: usize,
    pub(crate) stats: LeafStats,
}

impl ModelLeaf {
    pub fn empty(epsilon: usize) -> Self {
        ModelLeaf::from_parts(
            Vec::new(),
            Vec::new(),
            ConeFitter::new(epsilon).current_model(),
        )
    }

    /// Builds a leaf over ascending, live `keys`. The model's measured error
    /// is recomputed over the data.
    pub(crate) fn from_parts(keys: Vec<u64>, vals: Vec<u64>, mut model: LinearModel) -> Self {
        model.max_error = measured_error(&model, &keys);
        ModelLeaf::assemble(keys, vals, model)
    }

    fn assemble(keys: Vec<u64>, vals: Vec<u64>, model: LinearModel) -> Self {
        debug_assert_eq!(keys.len(), vals.len());
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        ModelLeaf {
            data_live: keys.len(),
            keys: keys.into_boxed_slice(),
            vals: vals.into_boxed_slice(),
            model,
            buffer: Vec::new(),
            slots: FxHashMap::default(),
            stats: LeafStats::default(),
        }
    }

    /// Fits `entries` (ascending) with a single bounded-error segment.
    /// Returns `None` if they do not fit within `epsilon`.
    pub fn build(entries: &[Entry], epsilon: usize) -> Option<Self> {
        let mut cone = ConeFitter::new(epsilon);
        for (i, e) in entries.iter().enumerate() {
            if !cone.add_point(e.key, i).ok()? {
                return None;
            }
        }
        Some(ModelLeaf::from_parts(
            entries.iter().map(|e| e.key).collect(),
            entries.iter().map(|e| e.value).collect(),
            cone.current_model(),
        ))
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    /// Live entries, data plus buffer.
    pub fn live(&self) -> usize {
        self.data_live + self.buffer.len()
    }

    pub fn data_len(&self) -> usize {
        self.keys.len()
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub(crate) fn data_keys(&self) -> &[u64] {
        &self.keys
    }

    pub(crate) fn data_vals(&self) -> &[u64] {
        &self.vals
    }

    pub(crate) fn buffer(&self) -> &[Entry] {
        &self.buffer
    }

    /// Search window `[lo, hi)` that must contain the lower bound of `k`.
    #[inline]
    fn window(&self, k: u64) -> (usize, usize) {
        let n = self.keys.len();
        let p = self.model.predict(k, n);
        let e = self.model.max_error;
        (p.saturating_sub(e), (p + e + 2).min(n))
    }

    /// `Ok(i)` if `k` is live at data slot `i`, otherwise `Err(lower_bound)`
    /// over flag-cleared keys.
    #[inline]
    fn search(&self, k: u64) -> std::result::Result<usize, usize> {
        let n = self.keys.len();
        if n == 0 {
            return Err(0);
        }
        let (lo, hi) = self.window(k);
        let mut i = lo + self.keys[lo..hi].partition_point(|&x| cleared(x) < k);
        let escaped = (i == hi && hi < n && cleared(self.keys[hi]) < k)
            || (i == lo && lo > 0 && cleared(self.keys[lo - 1]) >= k);
        if escaped {
            debug_assert!(false, "key {k} escaped its error window");
            i = self.keys.partition_point(|&x| cleared(x) < k);
        }
        if i < n && self.keys[i] == k {
            Ok(i)
        } else {
            Err(i)
        }
    }

    /// Point lookup. Also returns how many buffer entries were touched.
    pub fn lookup_traced(&self, k: u64) -> (Option<u64>, usize) {
        if let Ok(i) = self.search(k) {
            return (Some(self.vals[i]), 0);
        }
        if self.buffer.is_empty() {
            return (None, 0);
        }
        match self.slots.get(&k) {
            Some(&b) => (Some(self.buffer[b as usize].value), 1),
            None => (None, 0),
        }
    }

    pub fn lookup(&self, k: u64) -> Option<u64> {
        self.lookup_traced(k).0
    }

    /// Inserts without enforcing the buffer capacity; used when a
    /// recalibration engine will drain the buffer.
    pub(crate) fn insert_unbounded(&mut self, e: Entry, tau: usize) -> InsertOutcome {
        match self.insert_inner(e, None) {
            Ok(InsertOutcome::Buffered) if self.buffer.len() >= tau => {
                InsertOutcome::BufferedAndTrigger
            }
            Ok(out) => out,
            Err(_) => unreachable!("unbounded insert cannot fail"),
        }
    }

    /// Standalone insert: fails instead of growing the buffer past `tau`.
    pub fn insert(&mut self, e: Entry, tau: usize) -> Result<InsertOutcome> {
        match self.insert_inner(e, Some(tau))? {
            InsertOutcome::Buffered if self.buffer.len() >= tau => {
                Ok(InsertOutcome::BufferedAndTrigger)
            }
            out => Ok(out),
        }
    }

    fn insert_inner(&mut self, e: Entry, cap: Option<usize>) -> Result<InsertOutcome> {
        let k = e.key;
        debug_assert!(!masked(k));
        if let Ok(i) = self.search(k) {
            self.vals[i] = e.value;
            return Ok(InsertOutcome::Replaced);
        }
        if let Some(&b) = self.slots.get(&k) {
            self.buffer[b as usize].value = e.value;
            return Ok(InsertOutcome::Replaced);
        }
        let n = self.keys.len();
        if n > 0 {
            let p = self.model.predict(k, n);
            let reusable = masked(self.keys[p])
                && (p == 0 || cleared(self.keys[p - 1]) < k)
                && (p + 1 == n || k < cleared(self.keys[p + 1]));
            if reusable {
                self.keys[p] = k;
                self.vals[p] = e.value;
                self.data_live += 1;
                return Ok(InsertOutcome::ReusedSlot);
            }
        }
        if let Some(cap) = cap {
            if self.buffer.len() >= cap {
                return Err(HireError::BufferFull { capacity: cap });
            }
        }
        self.buffer.push(e);
        self.slots.insert(k, (self.buffer.len() - 1) as u32);
        Ok(InsertOutcome::Buffered)
    }

    /// Deletes `k`. Data entries are masked in place; buffered entries are
    /// swap-removed. Returns whether something was deleted and how many
    /// buffer entries were touched.
    pub fn delete_traced(&mut self, k: u64) -> (bool, usize) {
        if let Ok(i) = self.search(k) {
            self.keys[i] |= MASK_BIT;
            self.data_live -= 1;
            return (true, 0);
        }
        let Some(b) = self.slots.remove(&k) else {
            return (false, 0);
        };
        let b = b as usize;
        let last = self.buffer.len() - 1;
        self.buffer.swap_remove(b);
        if b != last {
            self.slots.insert(self.buffer[b].key, b as u32);
            (true, 2)
        } else {
            (true, 1)
        }
    }

    pub fn delete(&mut self, k: u64) -> bool {
        self.delete_traced(k).0
    }

    /// Appends the live entries in `[lo, hi]` to `out` in ascending order,
    /// stopping once `out` holds `limit` entries. Returns true iff the scan
    /// should continue into the next leaf.
    pub fn scan(&self, lo: u64, hi: u64, limit: usize, out: &mut Vec<Entry>) -> bool {
        if lo > hi {
            return false;
        }
        SCRATCH.with(|cell| {
            let mut extra = cell.borrow_mut();
            extra.clear();
            let width = hi - lo;
            // Branch-free: buffer keys hit the range at random.
            extra.resize(self.buffer.len(), Entry::default());
            let mut w = 0;
            for e in &self.buffer {
                extra[w] = *e;
                w += (e.key.wrapping_sub(lo) <= width) as usize;
            }
            extra.truncate(w);
            if extra.len() > 1 {
                extra.sort_unstable_by_key(|e| e.key);
            }
            let start = self.search(lo).unwrap_or_else(|i| i);
            // Slots are ordered by cleared key, tombstoned or not.
            let end = self.gallop(start, |raw| cleared(raw) <= hi);
            let room = limit.saturating_sub(out.len());
            if end - start + extra.len() <= room {
                self.merge_into(start, end, &extra, out);
                if out.len() >= limit || end < self.keys.len() {
                    return false;
                }
                return self.continues_past(hi);
            }
            let mut i = start;
            for e in extra.iter() {
                let stop = i + self.keys[i..end]
                    .iter()
                    .take_while(|&&raw| cleared(raw) < e.key)
                    .count();
                self.copy_live(i, stop, limit, out);
                if out.len() >= limit {
                    return false;
                }
                out.push(*e);
                i = stop;
            }
            self.copy_live(i, end, limit, out);
            if out.len() >= limit || end < self.keys.len() {
                return false;
            }
            self.continues_past(hi)
        })
    }

    /// Whether a scan that consumed everything up to `hi` goes on to the
    /// next leaf.
    fn continues_past(&self, hi: u64) -> bool {
        let last_live = self.keys.iter().rev().find(|&&x| !masked(x)).copied();
        let buffer_max = self.buffer.iter().map(|e| e.key).max();
        match last_live.max(buffer_max) {
            Some(m) => hi > m,
            None => true,
        }
    }

    /// Appends the live slots in `[from, to)` merged with `extra`, which
    /// must be ascending and fall inside the same key span.
    fn merge_into(&self, from: usize, to: usize, extra: &[Entry], out: &mut Vec<Entry>) {
        let base = out.len();
        out.resize(base + (to - from) + extra.len(), Entry::default());
        let dst = &mut out[base..];
        let (mut w, mut j) = (0, 0);
        for (&k, &v) in self.keys[from..to].iter().zip(&self.vals[from..to]) {
            while j < extra.len() && extra[j].key < cleared(k) {
                dst[w] = extra[j];
                w += 1;
                j += 1;
            }
            dst[w] = Entry { key: k, value: v };
            w += !masked(k) as usize;
        }
        for e in &extra[j..] {
            dst[w] = *e;
            w += 1;
        }
        out.truncate(base + w);
    }

    /// First slot at or after `from` where `below` turns false. `below`
    /// must hold on a prefix of the slots.
    fn gallop(&self, from: usize, below: impl Fn(u64) -> bool) -> usize {
        let keys = &self.keys[from..];
        let (mut lo, mut step) = (0, 1);
        while lo + step <= keys.len() && below(keys[lo + step - 1]) {
            lo += step;
            step *= 2;
        }
        let top = (lo + step).min(keys.len());
        from + lo + keys[lo..top].partition_point(|&raw| below(raw))
    }

    /// Appends the live slots in `[from, to)` until `out` holds `limit`
    /// entries.
    fn copy_live(&self, from: usize, to: usize, limit: usize, out: &mut Vec<Entry>) {
        let room = limit.saturating_sub(out.len());
        let live = self.keys[from..to]
            .iter()
            .zip(&self.vals[from..to])
            .filter(|(&k, _)| !masked(k));
        out.extend(live.take(room).map(|(&k, &v)| Entry::new(k, v)));
    }

    /// Ascending live entries (buffer merged, tombstones dropped).
    pub fn live_entries(&self) -> Vec<Entry> {
        let mut out: Vec<Entry> = self
            .keys
            .iter()
            .zip(self.vals.iter())
            .filter(|(&k, _)| !masked(k))
            .map(|(&k, &v)| Entry::new(k, v))
            .collect();
        let mut buf = self.buffer.clone();
        buf.sort_unstable_by_key(|e| e.key);
        merge_tail(&mut out, 0, &buf);
        out
    }

    pub fn max_live_key(&self) -> Option<u64> {
        let d = self.keys.iter().rev().find(|&&x| !masked(x)).copied();
        let b = self.buffer.iter().map(|e| e.key).max();
        d.max(b)
    }

    pub fn memory_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.keys.len() * 16
            + self.buffer.capacity() * std::mem::size_of::<Entry>()
            + self.slots.capacity() * (std::mem::size_of::<(u64, u32)>() + 1)
    }

    /// Structural problems, for the auditor.
    pub(crate) fn problems(&self, epsilon: usize, tau: usize) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(w) = self
            .keys
            .windows(2)
            .position(|w| cleared(w[0]) >= cleared(w[1]))
        {
            out.push(format!("data keys not strictly increasing at slot {w}"));
        }
        let n = self.keys.len();
        for (i, &k) in self.keys.iter().enumerate() {
            if masked(k) {
                continue;
            }
            let p = self.model.predict(k, n);
            if p.abs_diff(i) > epsilon {
                out.push(format!(
                    "key {k} at slot {i} predicted at {p}, beyond epsilon {epsilon}"
                ));
                break;
            }
        }
        if self.buffer.len() > tau {
            out.push(format!(
                "buffer holds {} entries, capacity {tau}",
                self.buffer.len()
            ));
        }
        if self.slots.len() != self.buffer.len()
            || self
                .buffer
                .iter()
                .enumerate()
                .any(|(i, e)| self.slots.get(&e.key) != Some(&(i as u32)))
        {
            out.push("buffer hash index disagrees with buffer".into());
        }
        if self.buffer.iter().any(|e| self.search(e.key).is_ok()) {
            out.push("key present in both data and buffer".into());
        }
        let live = self.keys.iter().filter(|&&k| !masked(k)).count();
        if live != self.data_live {
            out.push(format!(
                "live counter {} but {live} live slots",
                self.data_live
            ));
        }
        out
    }
}

/// A model leaf assembled a chunk at a time, so that no single job step
/// has to copy and check a whole segment.
#[derive(Debug)]
pub(crate) struct LeafBuilder {
    keys: Vec<u64>,
    vals: Vec<u64>,
    model: LinearModel,
    len: usize,
    err: usize,
}

impl LeafBuilder {
    /// A builder for a leaf of exactly `len` entries.
    pub fn new(model: LinearModel, len: usize) -> Self {
        LeafBuilder {
            keys: Vec::with_capacity(len),
            vals: Vec::with_capacity(len),
            model,
            len,
            err: 0,
        }
    }

    pub fn fed(&self) -> usize {
        self.keys.len()
    }

    pub fn feed(&mut self, part: &[Entry]) {
        debug_assert!(self.keys.len() + part.len() <= self.len);
        for e in part {
            let i = self.keys.len();
            self.err = self
                .err
                .max(self.model.predict(e.key, self.len).abs_diff(i));
            self.keys.push(e.key);
            self.vals.push(e.value);
        }
    }

    pub fn finish(self) -> ModelLeaf {
        debug_assert_eq!(self.keys.len(), self.len);
        let mut model = self.model;
        model.max_error = self.err;
        ModelLeaf::assemble(self.keys, self.vals, model)
    }
}

fn measured_error(model: &LinearModel, keys: &[u64]) -> usize {
    let n = keys.len();
    if n == 0 {
        return 0;
    }
    keys.iter()
        .enumerate()
        .map(|(i, &k)| model.predict(k, n).abs_diff(i))
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf_of(keys: &[u64], eps: usize) -> ModelLeaf {
        let entries: Vec<Entry> = keys.iter().map(|&k| Entry::new(k, k * 10)).collect();
        ModelLeaf::build(&entries, eps).expect("fixture must fit")
    }

    #[test]
    fn buffer_probe_after_data_miss() {
        let mut leaf = leaf_of(&[10, 20, 30, 40, 50, 60, 70, 82], 2);
        assert_eq!(
            leaf.insert(Entry::new(56, 560), 8).unwrap(),
            InsertOutcome::Buffered
        );
        assert_eq!(leaf.lookup_traced(56), (Some(560), 1));
        assert_eq!(leaf.lookup(55), None);
    }

    #[test]
    fn empty_leaf_finds_nothing() {
        let leaf = ModelLeaf::empty(4);
        assert_eq!(leaf.lookup(0), None);
        assert_eq!(leaf.lookup(u64::MAX >> 1), None);
    }

    #[test]
    fn tombstoned_slot_is_reused() {
        let mut leaf = leaf_of(&[2, 5, 8, 11, 14, 17, 20, 23], 1);
        assert!(leaf.delete(14));
        assert_eq!(leaf.lookup(14), None);
        assert_eq!(
            leaf.insert(Entry::new(14, 1), 4).unwrap(),
            InsertOutcome::ReusedSlot
        );
        assert_eq!(leaf.lookup(14), Some(1));
        assert_eq!(leaf.buffer_len(), 0);
    }

    #[test]
    fn occupied_slot_goes_to_buffer() {
        let mut leaf = leaf_of(&[2, 5, 8, 11, 14, 17, 20, 23], 1);
        assert_eq!(
            leaf.insert(Entry::new(7, 70), 4).unwrap(),
            InsertOutcome::Buffered
        );
        assert_eq!(leaf.slots[&7], (leaf.buffer_len() - 1) as u32);
    }

    #[test]
    fn reuse_requires_order() {
        // Slot 2 (key 8) is masked; key 12 predicts slot 3 which is live.
        let mut leaf = leaf_of(&[2, 5, 8, 11, 14, 17, 20, 23], 1);
        leaf.delete(8);
        assert_eq!(
            leaf.insert(Entry::new(12, 0), 4).unwrap(),
            InsertOutcome::Buffered
        );
    }

    #[test]
    fn buffer_full_trigger_and_error() {
        let keys: Vec<u64> = (0..64).map(|i| i * 100).collect();
        let mut leaf = leaf_of(&keys, 4);
        let tau = 4;
        let mut outcomes = Vec::new();
        for i in 0..tau as u64 {
            outcomes.push(leaf.insert(Entry::new(i * 100 + 50, i), tau).unwrap());
        }
        assert_eq!(outcomes[..3], [InsertOutcome::Buffered; 3]);
        assert_eq!(outcomes[3], InsertOutcome::BufferedAndTrigger);
        assert_eq!(
            leaf.insert(Entry::new(999, 0), tau),
            Err(HireError::BufferFull { capacity: tau })
        );
    }

    #[test]
    fn tau_256_trigger() {
        let keys: Vec<u64> = (0..1024).map(|i| i * 1000).collect();
        let mut leaf = leaf_of(&keys, 64);
        for i in 0..255u64 {
            assert_eq!(
                leaf.insert(Entry::new(i * 1000 + 1, 0), 256).unwrap(),
                InsertOutcome::Buffered
            );
        }
        assert_eq!(
            leaf.insert(Entry::new(255_001, 0), 256).unwrap(),
            InsertOutcome::BufferedAndTrigger
        );
    }

    #[test]
    fn data_delete_masks_in_place() {
        let mut leaf = leaf_of(&[1, 2, 3, 4, 5], 1);
        let model = *leaf.model();
        assert!(leaf.delete(3));
        assert_eq!(leaf.data_len(), 5);
        assert!(masked(leaf.data_keys()[2]));
        assert_eq!(*leaf.model(), model);
        assert_eq!(leaf.live(), 4);
    }

    #[test]
    fn buffer_delete_swaps_last() {
        let mut leaf = leaf_of(&[0, 100, 200, 300], 1);
        for k in [10, 20, 30, 40] {
            leaf.insert(Entry::new(k, k), 8).unwrap();
        }
        assert_eq!(leaf.delete_traced(20), (true, 2));
        assert_eq!(leaf.buffer()[1].key, 40);
        assert_eq!(leaf.slots[&40], 1);
        assert!(!leaf.slots.contains_key(&20));
        assert!(leaf.problems(1, 8).is_empty());
        assert_eq!(leaf.delete_traced(30), (true, 1));
    }

    #[test]
    fn delete_absent_is_noop() {
        let mut leaf = leaf_of(&[1, 2, 3], 1);
        let before = leaf.live_entries();
        assert!(!leaf.delete(7));
        assert_eq!(leaf.live_entries(), before);
    }

    #[test]
    fn scan_merges_buffer() {
        let mut leaf = leaf_of(&[10, 20, 30, 40, 50], 1);
        leaf.delete(30);
        for k in [25, 35, 5] {
            leaf.insert(Entry::new(k, k), 8).unwrap();
        }
        let mut out = Vec::new();
        assert!(!leaf.scan(15, 45, usize::MAX, &mut out));
        let keys: Vec<u64> = out.iter().map(|e| e.key).collect();
        assert_eq!(keys, [20, 25, 35, 40]);
        out.clear();
        assert!(leaf.scan(45, 100, usize::MAX, &mut out));
        assert_eq!(out, [Entry::new(50, 500)]);
    }

    #[test]
    fn scan_contiguous_without_buffer() {
        let leaf = leaf_of(&[1, 2, 3, 4, 5, 6], 1);
        let mut out = Vec::new();
        assert!(!leaf.scan(2, 4, usize::MAX, &mut out));
        assert_eq!(out.iter().map(|e| e.key).collect::<Vec<_>>(), [2, 3, 4]);
    }

    #[test]
    fn random_inserts_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<u64> = (0..2000).map(|i| i * 7).collect();
        let mut leaf = leaf_of(&base, 16);
        let mut oracle: BTreeMap<u64, u64> = base.iter().map(|&k| (k, k * 10)).collect();
        for _ in 0..1000 {
            let k = rng.random_range(0..14_000u64);
            let v = rng.random();
            if rng.random_bool(0.3) {
                assert_eq!(leaf.delete(k), oracle.remove(&k).is_some());
            } else {
                leaf.insert_unbounded(Entry::new(k, v), usize::MAX);
                oracle.insert(k, v);
            }
        }
        for k in 0..14_000u64 {
            assert_eq!(leaf.lookup(k), oracle.get(&k).copied(), "key {k}");
        }
        let all: Vec<Entry> = oracle.iter().map(|(&k, &v)| Entry::new(k, v)).collect();
        assert_eq!(leaf.live_entries(), all);
        assert!(leaf.problems(16, usize::MAX).is_empty());
        for _ in 0..200 {
            let lo = rng.random_range(0..14_000u64);
            let hi = lo + rng.random_range(0..500);
            let mut out = Vec::new();
            let cont = leaf.scan(lo, hi, usize::MAX, &mut out);
            let want: Vec<Entry> = oracle
                .range(lo..=hi)
                .map(|(&k, &v)| Entry::new(k, v))
                .collect();
            assert_eq!(out, want);
            let last = oracle.keys().next_back().copied().unwrap();
            assert_eq!(cont, hi > last);
            let limit = rng.random_range(1..40);
            out.clear();
            let cont = leaf.scan(lo, hi, limit, &mut out);
            assert_eq!(out, want[..want.len().min(limit)]);
            assert_eq!(cont, hi > last && want.len() < limit);
        }
    }

    #[test]
    fn correction_search_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut keys: Vec<u64> = (0..5000).map(|_| rng.random_range(0..1u64 << 40)).collect();
        keys.sort_unstable();
        keys.dedup();
        let entries: Vec<Entry> = keys.iter().map(|&k| Entry::new(k, 0)).collect();
        let mut cone = ConeFitter::new(64);
        let mut n = 0;
        while n < entries.len() && cone.add_point(entries[n].key, n).unwrap() {
            n += 1;
        }
        let leaf = ModelLeaf::build(&entries[..n], 64).unwrap();
        assert!(leaf.model().max_error <= 64);
        for &k in &keys[..n] {
            let (lo, hi) = leaf.window(k);
            assert!(hi - lo <= 2 * 64 + 2);
            assert!(leaf.search(k).is_ok());
        }
    }
}
