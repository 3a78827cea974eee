//! Mixed workloads: a bulk-loaded prefix of the dataset followed by a
//! random sequence of queries, inserts and deletes.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use hire_core::Entry;

use crate::datasets::DatasetSource;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("ratio `{0}` is not Q:I:D with non-negative weights, not all zero")]
    BadRatio(String),
    #[error("bulk fraction must be in (0, 1], got {0}")]
    BadBulkFraction(f64),
    #[error("ops fraction must be non-negative, got {0}")]
    BadOpsFraction(f64),
}

/// Weights of queries, inserts and deletes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio {
    pub query: f64,
    pub insert: f64,
    pub delete: f64,
}

impl Ratio {
    pub const BALANCED: Ratio = Ratio::new(1.0, 1.0, 1.0);
    pub const READ_HEAVY: Ratio = Ratio::new(8.0, 1.0, 1.0);
    pub const WRITE_HEAVY: Ratio = Ratio::new(1.0, 8.0, 1.0);

    pub const fn new(query: f64, insert: f64, delete: f64) -> Self {
        Ratio {
            query,
            insert,
            delete,
        }
    }

    fn weights(&self) -> [f64; 3] {
        [self.query, self.insert, self.delete]
    }

    fn is_valid(&self) -> bool {
        let w = self.weights();
        w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().sum::<f64>() > 0.0
    }
}

impl FromStr for Ratio {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SpecError::BadRatio(s.to_string());
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [q, i, d] = parts[..] else {
            return Err(bad());
        };
        let r = Ratio::new(q, i, d);
        r.is_valid().then_some(r).ok_or_else(bad)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.query, self.insert, self.delete)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub bulk_fraction: f64,
    /// Number of operations as a fraction of the dataset size.
    pub ops_fraction: f64,
    pub ratio: Ratio,
    /// Expected results per range query. At most 1 turns queries into
    /// point lookups.
    pub match_rate: usize,
    pub seed: u64,
    pub dataset: DatasetSource,
}

impl WorkloadSpec {
    pub fn new(dataset: DatasetSource, seed: u64) -> Self {
        WorkloadSpec {
            bulk_fraction: 0.2,
            ops_fraction: 0.75,
            ratio: Ratio::BALANCED,
            match_rate: 256,
            seed,
            dataset,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !self.ratio.is_valid() {
            return Err(SpecError::BadRatio(self.ratio.to_string()));
        }
        if !(self.bulk_fraction > 0.0 && self.bulk_fraction <= 1.0) {
            return Err(SpecError::BadBulkFraction(self.bulk_fraction));
        }
        if !(self.ops_fraction >= 0.0 && self.ops_fraction.is_finite()) {
            return Err(SpecError::BadOpsFraction(self.ops_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Get(u64),
    /// Inclusive bounds.
    Range(u64, u64),
    Insert(u64, u64),
    Delete(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub get: u64,
    pub range: u64,
    pub insert: u64,
    pub delete: u64,
}

impl OpCounts {
    pub fn add(&mut self, op: &Op) {
        match op {
            Op::Get(_) => self.get += 1,
            Op::Range(..) => self.range += 1,
            Op::Insert(..) => self.insert += 1,
            Op::Delete(_) => self.delete += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.get + self.range + self.insert + self.delete
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    /// Ascending entries to bulk load.
    pub bulk: Vec<Entry>,
    pub ops: Vec<Op>,
    /// Insert draws that found the pool empty and became queries.
    pub inserts_as_queries: usize,
    /// Query or delete draws that found the index empty and became inserts.
    pub reads_as_inserts: usize,
}

impl Workload {
    pub fn counts(&self) -> OpCounts {
        let mut c = OpCounts::default();
        self.ops.iter().for_each(|o| c.add(o));
        c
    }
}

/// Counts over `0..n` with prefix sums and rank selection.
#[derive(Debug, Clone)]
pub struct Fenwick {
    tree: Vec<u32>,
    total: usize,
}

impl Fenwick {
    pub fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
            total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn add(&mut self, i: usize, delta: i32) {
        self.total = (self.total as i64 + delta as i64) as usize;
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] = (self.tree[j] as i64 + delta as i64) as u32;
            j += j & j.wrapping_neg();
        }
    }

    /// Number of set positions below `i`.
    pub fn rank(&self, i: usize) -> usize {
        let mut j = i;
        let mut s = 0;
        while j > 0 {
            s += self.tree[j] as usize;
            j &= j - 1;
        }
        s
    }

    /// Position of the set element with rank `r` (0-based).
    pub fn select(&self, mut r: usize) -> usize {
        debug_assert!(r < self.total);
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && (self.tree[next] as usize) <= r {
                pos = next;
                r -= self.tree[next] as usize;
            }
            step >>= 1;
        }
        pos
    }
}

/// Builds the bulk set and operation sequence for `keys` (ascending,
/// unique). Fully determined by `keys` and `spec`.
pub fn gen_workload(keys: &[u64], spec: &WorkloadSpec) -> Result<Workload, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = keys.len();
    let bulk_n = ((n as f64 * spec.bulk_fraction).round() as usize).min(n);
    let mut live = Fenwick::new(n);
    let mut in_bulk = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, bulk_n) {
        in_bulk[i] = true;
    }
    let mut bulk = Vec::with_capacity(bulk_n);
    let mut pool = Vec::with_capacity(n - bulk_n);
    for (i, &k) in keys.iter().enumerate() {
        if in_bulk[i] {
            live.add(i, 1);
            bulk.push(Entry::new(k, rng.random()));
        } else {
            pool.push(i);
        }
    }
    let n_ops = (n as f64 * spec.ops_fraction).round() as usize;
    let pick = WeightedIndex::new(spec.ratio.weights()).expect("validated weights");
    let mut w = Workload {
        bulk,
        ops: Vec::with_capacity(n_ops),
        inserts_as_queries: 0,
        reads_as_inserts: 0,
    };
    for _ in 0..n_ops {
        let mut kind = pick.sample(&mut rng);
        if kind == 1 && pool.is_empty() {
            w.inserts_as_queries += 1;
            kind = 0;
        }
        if kind != 1 && live.is_empty() {
            if pool.is_empty() {
                break;
            }
            w.reads_as_inserts += 1;
            kind = 1;
        }
        let op = match kind {
            0 => {
                let r = rng.random_range(0..live.len());
                let lo = keys[live.select(r)];
                if spec.match_rate <= 1 {
                    Op::Get(lo)
                } else {
                    let last = (r + spec.match_rate - 1).min(live.len() - 1);
                    Op::Range(lo, keys[live.select(last)])
                }
            }
            1 => {
                let i = pool.swap_remove(rng.random_range(0..pool.len()));
                live.add(i, 1);
                Op::Insert(keys[i], rng.random())
            }
            _ => {
                let i = live.select(rng.random_range(0..live.len()));
                live.add(i, -1);
                Op::Delete(keys[i])
            }
        };
        w.ops.push(op);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::datasets::{gen_synthetic, SyntheticKind};

    fn spec(ratio: Ratio, match_rate: usize) -> WorkloadSpec {
        let mut s = WorkloadSpec::new("uniform:1000".parse().unwrap(), 9);
        s.ratio = ratio;
        s.match_rate = match_rate;
        s
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("1:8:1".parse::<Ratio>().unwrap(), Ratio::WRITE_HEAVY);
        assert!("1:1".parse::<Ratio>().is_err());
        assert!("0:0:0".parse::<Ratio>().is_err());
        assert!("1:-1:1".parse::<Ratio>().is_err());
        assert!("a:1:1".parse::<Ratio>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(Ratio::BALANCED, 256);
        assert_eq!(s.validate(), Ok(()));
        s.bulk_fraction = 0.0;
        assert!(s.validate().is_err());
        s.bulk_fraction = 1.0;
        s.ratio = Ratio::new(0.0, 0.0, 0.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn fenwick_matches_a_sorted_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = Fenwick::new(1_000);
        let mut set = BTreeSet::new();
        for _ in 0..5_000 {
            let i = rng.random_range(0..1_000);
            if set.insert(i) {
                f.add(i, 1);
            } else {
                set.remove(&i);
                f.add(i, -1);
            }
            assert_eq!(f.len(), set.len());
            if !set.is_empty() {
                let r = rng.random_range(0..set.len());
                assert_eq!(f.select(r), *set.iter().nth(r).unwrap());
                let q = rng.random_range(0..1_001);
                assert_eq!(f.rank(q), set.range(..q).count());
            }
        }
    }

    #[test]
    fn queries_only() {
        let keys: Vec<u64> = (0..1_000).map(|i| i * 2).collect();
        let w = gen_workload(&keys, &spec(Ratio::new(1.0, 0.0, 0.0), 256)).unwrap();
        let c = w.counts();
        assert_eq!((c.insert, c.delete, c.range), (0, 0, 750));
        assert_eq!(w.bulk.len(), 200);
        assert!(w.bulk.windows(2).all(|p| p[0].key < p[1].key));
    }

    #[test]
    fn point_lookups_at_match_rate_one() {
        let keys: Vec<u64> = (0..1_000).collect();
        let w = gen_workload(&keys, &spec(Ratio::new(1.0, 0.0, 0.0), 1)).unwrap();
        assert_eq!(w.counts().get, 750);
    }

    /// Replays against a set: deletes and queries always hit live keys,
    /// inserts never do, and ranges hold exactly `match_rate` keys when
    /// enough keys remain.
    #[test]
    fn balanced_mix_targets_live_keys() {
        let keys: Vec<u64> = (0..400).map(|i| i * 3 + 1).collect();
        let mut s = spec(Ratio::BALANCED, 8);
        s.ops_fraction = 0.75;
        let w = gen_workload(&keys, &s).unwrap();
        assert_eq!(w.ops.len(), 300);
        let c = w.counts();
        for n in [c.range, c.insert, c.delete] {
            // 100 expected each; 4 sigma of a binomial(300, 1/3).
            assert!((68..=132).contains(&n), "{c:?}");
        }
        let mut live: BTreeSet<u64> = w.bulk.iter().map(|e| e.key).collect();
        for op in &w.ops {
            match *op {
                Op::Insert(k, _) => assert!(live.insert(k)),
                Op::Delete(k) => assert!(live.remove(&k)),
                Op::Get(k) => assert!(live.contains(&k)),
                Op::Range(lo, hi) => {
                    assert!(live.contains(&lo) && live.contains(&hi));
                    let n = live.range(lo..=hi).count();
                    assert_eq!(n, 8.min(live.range(lo..).count()));
                }
            }
        }
    }

    #[test]
    fn exhausted_pool_turns_inserts_into_queries() {
        let keys: Vec<u64> = (0..100).collect();
        let mut s = spec(Ratio::new(0.0, 1.0, 0.0), 4);
        s.bulk_fraction = 0.9;
        s.ops_fraction = 0.5;
        let w = gen_workload(&keys, &s).unwrap();
        assert_eq!(w.counts().insert, 10);
        assert_eq!(w.inserts_as_queries, 40);
        assert_eq!(w.counts().range, 40);
    }

    #[test]
    fn same_spec_same_sequence() {
        let keys = gen_synthetic(SyntheticKind::Uniform, 5_000, 1);
        let s = spec(Ratio::BALANCED, 16);
        let (a, b) = (
            gen_workload(&keys, &s).unwrap(),
            gen_workload(&keys, &s).unwrap(),
        );
        assert_eq!(a.ops, b.ops);
        assert_eq!(a.bulk, b.bulk);
        let mut s2 = s.clone();
        s2.seed += 1;
        assert_ne!(gen_workload(&keys, &s2).unwrap().ops, a.ops);
    }
}
