use crate::key::Entry;
use crate::plm::{key_offset, LinearModel};

/// Running sums for the regression of rank on key. Keys are taken relative
/// to a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionSums {
    pub origin: u64,
    pub n: f64,
    pub sk: f64,
    pub sr: f64,
    pub skk: f64,
    pub skr: f64,
}

impl RegressionSums {
    fn over(keys: &[u64]) -> Self {
        let origin = keys.first().copied().unwrap_or(0);
        let mut s = RegressionSums {
            origin,
            ..Default::default()
        };
        for (i, &k) in keys.iter().enumerate() {
            s.add(k, i as f64);
        }
        s
    }

    fn add(&mut self, k: u64, r: f64) {
        let x = key_offset(k, self.origin);
        self.n += 1.0;
        self.sk += x;
        self.sr += r;
        self.skk += x * x;
        self.skr += x * r;
    }

    fn remove(&mut self, k: u64, r: f64) {
        let x = key_offset(k, self.origin);
        self.n -= 1.0;
        self.sk -= x;
        self.sr -= r;
        self.skk -= x * x;
        self.skr -= x * r;
    }

    /// Every rank after the change point moves by `delta`; `count` of them
    /// with key offsets summing to `suffix_k`.
    fn shift_ranks(&mut self, count: usize, suffix_k: f64, delta: f64) {
        self.sr += delta * count as f64;
        self.skr += delta * suffix_k;
    }

    /// The regression line over local ranks. Slope is clamped at zero.
    pub fn model(&self) -> LinearModel {
        if self.n < 1.0 {
            return LinearModel::default();
        }
        let den = self.n * self.skk - self.sk * self.sk;
        let slope = if self.n >= 2.0 && den > 0.0 {
            ((self.n * self.skr - self.sk * self.sr) / den).max(0.0)
        } else {
            0.0
        };
        let intercept = (self.sr - slope * self.sk) / self.n;
        LinearModel::with_origin(slope, intercept, self.origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegacyInsert {
    Inserted,
    Replaced,
    /// The leaf overflowed and was split. `left` holds the lower half and
    /// must be linked in front of this leaf with separator `sep`.
    Overflow {
        sep: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegacyDelete {
    Absent,
    Removed,
    /// Removed, and the leaf fell below half capacity.
    Underflow,
}

/// B+-tree style sorted leaf.
#[derive(Debug, Clone, Default)]
pub struct LegacyLeaf {
    keys: Vec<u64>,
    vals: Vec<u64>,
    sums: RegressionSums,
    /// Inserts since the last transformation check.
    pub(crate) since_check: u32,
}

impl LegacyLeaf {
    pub fn new() -> Self {
        LegacyLeaf::default()
    }

    /// Builds a leaf over ascending, live `entries`.
    pub fn from_entries(entries: &[Entry]) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].key < w[1].key));
        let keys: Vec<u64> = entries.iter().map(|e| e.key).collect();
        LegacyLeaf {
            sums: RegressionSums::over(&keys),
            vals: entries.iter().map(|e| e.value).collect(),
            keys,
            since_check: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub(crate) fn vals(&self) -> &[u64] {
        &self.vals
    }

    pub fn first_key(&self) -> Option<u64> {
        self.keys.first().copied()
    }

    pub fn last_key(&self) -> Option<u64> {
        self.keys.last().copied()
    }

    pub fn sums(&self) -> &RegressionSums {
        &self.sums
    }

    pub fn regression(&self) -> LinearModel {
        self.sums.model()
    }

    /// Number of keys below `k`. Written as a branch-free count so the
    /// compiler can vectorize it.
    #[inline]
    fn lower_bound(&self, k: u64) -> usize {
        if self.keys.len() > 64 {
            return self.keys.partition_point(|&x| x < k);
        }
        self.keys.iter().map(|&x| (x < k) as usize).sum()
    }

    pub fn lookup(&self, k: u64) -> Option<u64> {
        let i = self.lower_bound(k);
        (i < self.keys.len() && self.keys[i] == k).then(|| self.vals[i])
    }

    /// Inserts or replaces `e`. Overflow beyond `cap` splits the leaf: the
    /// lower half is returned and this leaf keeps the upper half.
    pub fn insert(&mut self, e: Entry, cap: usize) -> (LegacyInsert, Option<LegacyLeaf>) {
        let i = self.lower_bound(e.key);
        if i < self.keys.len() && self.keys[i] == e.key {
            self.vals[i] = e.value;
            return (LegacyInsert::Replaced, None);
        }
        if self.keys.is_empty() {
            self.sums = RegressionSums {
                origin: e.key,
                ..Default::default()
            };
        }
        let suffix_k: f64 = self.keys[i..]
            .iter()
            .map(|&k| key_offset(k, self.sums.origin))
            .sum();
        self.sums.shift_ranks(self.keys.len() - i, suffix_k, 1.0);
        self.sums.add(e.key, i as f64);
        self.keys.insert(i, e.key);
        self.vals.insert(i, e.value);
        self.since_check += 1;
        if self.keys.len() <= cap {
            return (LegacyInsert::Inserted, None);
        }
        let mid = self.keys.len() / 2;
        let keys: Vec<u64> = self.keys.drain(..mid).collect();
        let left = LegacyLeaf {
            sums: RegressionSums::over(&keys),
            keys,
            vals: self.vals.drain(..mid).collect(),
            since_check: 0,
        };
        self.sums = RegressionSums::over(&self.keys);
        self.since_check = 0;
        let sep = *left.keys.last().unwrap();
        (LegacyInsert::Overflow { sep }, Some(left))
    }

    pub fn delete(&mut self, k: u64, cap: usize) -> LegacyDelete {
        let i = self.lower_bound(k);
        if i >= self.keys.len() || self.keys[i] != k {
            return LegacyDelete::Absent;
        }
        self.sums.remove(k, i as f64);
        self.keys.remove(i);
        self.vals.remove(i);
        let suffix_k: f64 = self.keys[i..]
            .iter()
            .map(|&k| key_offset(k, self.sums.origin))
            .sum();
        self.sums.shift_ranks(self.keys.len() - i, suffix_k, -1.0);
        if self.keys.len() < cap / 2 {
            LegacyDelete::Underflow
        } else {
            LegacyDelete::Removed
        }
    }

    /// Appends entries in `[lo, hi]` to `out` until it holds `limit`
    /// entries. Returns true iff the scan should continue into the next leaf.
    pub fn scan(&self, lo: u64, hi: u64, limit: usize, out: &mut Vec<Entry>) -> bool {
        let mut i = self.lower_bound(lo);
        while i < self.keys.len() && self.keys[i] <= hi {
            if out.len() >= limit {
                return false;
            }
            out.push(Entry::new(self.keys[i], self.vals[i]));
            i += 1;
        }
        match self.keys.last() {
            Some(&m) => hi > m && out.len() < limit,
            None => true,
        }
    }

    pub fn entries(&self) -> Vec<Entry> {
        self.keys
            .iter()
            .zip(&self.vals)
            .map(|(&k, &v)| Entry::new(k, v))
            .collect()
    }

    /// Moves every entry of `right` (all keys above ours) into this leaf.
    pub fn absorb(&mut self, right: LegacyLeaf) {
        debug_assert!(match (self.last_key(), right.first_key()) {
            (Some(a), Some(b)) => a < b,
            _ => true,
        });
        self.keys.extend_from_slice(&right.keys);
        self.vals.extend_from_slice(&right.vals);
        self.sums = RegressionSums::over(&self.keys);
    }

    /// Evens out the sizes of `left` and `right` (adjacent, left first).
    /// Returns the new maximum key of `left`.
    pub fn rebalance(left: &mut LegacyLeaf, right: &mut LegacyLeaf) -> u64 {
        let total = left.len() + right.len();
        let want = total / 2;
        if left.len() < want {
            let take = want - left.len();
            left.keys.extend(right.keys.drain(..take));
            left.vals.extend(right.vals.drain(..take));
        } else if left.len() > want {
            let at = want;
            let mut k: Vec<u64> = left.keys.drain(at..).collect();
            let mut v: Vec<u64> = left.vals.drain(at..).collect();
            k.append(&mut right.keys);
            v.append(&mut right.vals);
            right.keys = k;
            right.vals = v;
        }
        left.sums = RegressionSums::over(&left.keys);
        right.sums = RegressionSums::over(&right.keys);
        *left.keys.last().expect("rebalanced leaf is non-empty")
    }

    pub fn memory_bytes(&self) -> usize {
        std::mem::size_of::<Self>() + (self.keys.capacity() + self.vals.capacity()) * 8
    }

    pub(crate) fn problems(&self, cap: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.keys.len() > cap {
            out.push(format!(
                "legacy leaf holds {} entries, capacity {cap}",
                self.keys.len()
            ));
        }
        if let Some(w) = self.keys.windows(2).position(|w| w[0] >= w[1]) {
            out.push(format!("legacy keys not strictly increasing at {w}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plm::fit_positions;
    use proptest::prelude::*;

    fn leaf(range: std::ops::Range<u64>) -> LegacyLeaf {
        let e: Vec<Entry> = range.map(|k| Entry::new(k * 2, k)).collect();
        LegacyLeaf::from_entries(&e)
    }

    #[test]
    fn insert_into_half_full() {
        let mut l = leaf(0..128);
        assert_eq!(l.insert(Entry::new(7, 1), 256).0, LegacyInsert::Inserted);
        assert!(l.keys().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(l.lookup(7), Some(1));
        assert_eq!(l.len(), 129);
    }

    #[test]
    fn full_leaf_splits_at_midpoint() {
        let mut l = leaf(0..256);
        let (out, left) = l.insert(Entry::new(1001, 0), 256);
        let left = left.unwrap();
        assert_eq!((left.len(), l.len()), (128, 129));
        assert_eq!(
            out,
            LegacyInsert::Overflow {
                sep: left.last_key().unwrap()
            }
        );
        assert!(left.last_key().unwrap() < l.first_key().unwrap());
        assert_eq!(l.lookup(1001), Some(0));
    }

    #[test]
    fn duplicate_is_upsert() {
        let mut l = leaf(0..10);
        assert_eq!(l.insert(Entry::new(4, 99), 256).0, LegacyInsert::Replaced);
        assert_eq!(l.len(), 10);
        assert_eq!(l.lookup(4), Some(99));
    }

    #[test]
    fn delete_outcomes() {
        let mut l = leaf(0..200);
        assert_eq!(l.delete(0, 256), LegacyDelete::Removed);
        assert_eq!(l.len(), 199);
        let mut l = leaf(0..128);
        assert_eq!(l.delete(2, 256), LegacyDelete::Underflow);
        assert_eq!(l.len(), 127);
        let before = l.entries();
        assert_eq!(l.delete(3, 256), LegacyDelete::Absent);
        assert_eq!(l.entries(), before);
    }

    #[test]
    fn scan_cases() {
        let l = leaf(5..10);
        let mut out = Vec::new();
        assert!(!l.scan(10, 16, usize::MAX, &mut out));
        assert_eq!(
            out.iter().map(|e| e.key).collect::<Vec<_>>(),
            [10, 12, 14, 16]
        );
        out.clear();
        assert!(!l.scan(0, 9, usize::MAX, &mut out));
        assert!(out.is_empty());
        out.clear();
        assert!(l.scan(17, 100, usize::MAX, &mut out));
        assert_eq!(out.iter().map(|e| e.key).collect::<Vec<_>>(), [18]);
    }

    #[test]
    fn rebalance_evens_sizes() {
        let mut a = leaf(0..200);
        let mut b = leaf(300..310);
        let sep = LegacyLeaf::rebalance(&mut a, &mut b);
        assert_eq!((a.len(), b.len()), (105, 105));
        assert_eq!(sep, a.last_key().unwrap());
        assert!(sep < b.first_key().unwrap());
        let mut c = leaf(0..10);
        let mut d = leaf(300..500);
        LegacyLeaf::rebalance(&mut c, &mut d);
        assert_eq!((c.len(), d.len()), (105, 105));
    }

    proptest! {
        #[test]
        fn running_regression_matches_batch(
            ops in proptest::collection::vec((0u64..5000, any::<bool>()), 1..300)
        ) {
            let mut l = LegacyLeaf::new();
            let mut set = std::collections::BTreeSet::new();
            for (k, ins) in ops {
                if ins || set.is_empty() {
                    l.insert(Entry::new(k, 0), usize::MAX);
                    set.insert(k);
                } else {
                    let k = *set.iter().next().unwrap();
                    l.delete(k, usize::MAX);
                    set.remove(&k);
                }
            }
            let keys: Vec<u64> = set.into_iter().collect();
            prop_assert_eq!(l.keys(), &keys[..]);
            if keys.len() >= 2 {
                let got = l.regression();
                let want = fit_positions(&keys);
                let tol = 1e-6 * (1.0 + want.slope.abs());
                prop_assert!((got.slope - want.slope).abs() <= tol, "{} vs {}", got.slope, want.slope);
                let (kg, kw) = (got.predict_raw(keys[0]), want.predict_raw(keys[0]));
                prop_assert!((kg - kw).abs() <= 1e-4 * (1.0 + kw.abs()));
            }
        }
    }
}
