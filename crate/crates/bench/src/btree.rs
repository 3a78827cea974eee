//! Baseline B+-tree: sorted-array nodes in an arena, sibling-chained leaves.

use hire_core::Entry;

pub const DEFAULT_FANOUT: usize = 256;

type Id = usize;
const NIL: Id = usize::MAX;

#[derive(Debug, Clone)]
enum Node {
    /// `keys[i]` is the smallest key under `children[i + 1]`.
    Internal {
        keys: Vec<u64>,
        children: Vec<Id>,
    },
    Leaf {
        keys: Vec<u64>,
        vals: Vec<u64>,
        next: Id,
    },
    Free,
}

#[derive(Debug, Clone)]
pub struct BaselineBTree {
    nodes: Vec<Node>,
    free: Vec<Id>,
    root: Id,
    first_leaf: Id,
    height: usize,
    len: usize,
    fanout: usize,
}

impl Default for BaselineBTree {
    fn default() -> Self {
        Self::new()
    }
}

/// Near-equal chunk count for `n` items aiming at `fill` per chunk, with
/// every chunk in `[min, max]` whenever `n >= min`.
fn chunks(n: usize, fill: usize, min: usize, max: usize) -> usize {
    let c = n.div_ceil(fill).max(1);
    if n / c >= min {
        c
    } else {
        n.div_ceil(max).max(1)
    }
}

fn split_sizes(n: usize, c: usize) -> impl Iterator<Item = usize> {
    (0..c).map(move |i| n / c + usize::from(i < n % c))
}

impl BaselineBTree {
    pub fn new() -> Self {
        Self::with_fanout(DEFAULT_FANOUT)
    }

    pub fn with_fanout(fanout: usize) -> Self {
        assert!(fanout >= 4, "fanout must be at least 4");
        BaselineBTree {
            nodes: vec![Node::Leaf {
                keys: Vec::new(),
                vals: Vec::new(),
                next: NIL,
            }],
            free: Vec::new(),
            root: 0,
            first_leaf: 0,
            height: 1,
            len: 0,
            fanout,
        }
    }

    /// Builds from ascending unique entries, filling nodes to three
    /// quarters.
    pub fn bulk_load(entries: &[Entry], fanout: usize) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].key < w[1].key));
        let mut t = Self::with_fanout(fanout);
        if entries.is_empty() {
            return t;
        }
        t.nodes.clear();
        let (fill, min) = (fanout * 3 / 4, fanout / 2);
        // (smallest key, id) per node of the level being built.
        let mut level: Vec<(u64, Id)> = Vec::new();
        let mut rest = entries;
        for size in split_sizes(entries.len(), chunks(entries.len(), fill, min, fanout)) {
            let (chunk, tail) = rest.split_at(size);
            rest = tail;
            let id = t.nodes.len();
            if let Some(&(_, prev)) = level.last() {
                if let Node::Leaf { next, .. } = &mut t.nodes[prev] {
                    *next = id;
                }
            }
            t.nodes.push(Node::Leaf {
                keys: chunk.iter().map(|e| e.key).collect(),
                vals: chunk.iter().map(|e| e.value).collect(),
                next: NIL,
            });
            level.push((chunk[0].key, id));
        }
        t.first_leaf = level[0].1;
        t.height = 1;
        while level.len() > 1 {
            let mut up = Vec::new();
            let mut rest = &level[..];
            for size in split_sizes(level.len(), chunks(level.len(), fill, min, fanout)) {
                let (chunk, tail) = rest.split_at(size);
                rest = tail;
                let id = t.nodes.len();
                t.nodes.push(Node::Internal {
                    keys: chunk[1..].iter().map(|c| c.0).collect(),
                    children: chunk.iter().map(|c| c.1).collect(),
                });
                up.push((chunk[0].0, id));
            }
            level = up;
            t.height += 1;
        }
        t.root = level[0].1;
        t.len = entries.len();
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn min_fill(&self) -> usize {
        self.fanout / 2
    }

    fn alloc(&mut self, n: Node) -> Id {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = n;
                id
            }
            None => {
                self.nodes.push(n);
                self.nodes.len() - 1
            }
        }
    }

    fn release(&mut self, id: Id) {
        self.nodes[id] = Node::Free;
        self.free.push(id);
    }

    fn leaf_for(&self, k: u64) -> Id {
        let mut id = self.root;
        while let Node::Internal { keys, children } = &self.nodes[id] {
            id = children[keys.partition_point(|&s| s <= k)];
        }
        id
    }

    pub fn get(&self, k: u64) -> Option<u64> {
        match &self.nodes[self.leaf_for(k)] {
            Node::Leaf { keys, vals, .. } => keys.binary_search(&k).ok().map(|i| vals[i]),
            _ => unreachable!("descent ends at a leaf"),
        }
    }

    /// Entries in `[lo, hi]`, ascending, at most `limit`, appended to `out`
    /// after clearing it.
    pub fn range_into(&self, lo: u64, hi: u64, limit: Option<usize>, out: &mut Vec<Entry>) {
        out.clear();
        let limit = limit.unwrap_or(usize::MAX);
        if lo > hi {
            return;
        }
        let mut id = self.leaf_for(lo);
        let mut from = match &self.nodes[id] {
            Node::Leaf { keys, .. } => keys.partition_point(|&k| k < lo),
            _ => unreachable!(),
        };
        while id != NIL {
            let Node::Leaf { keys, vals, next } = &self.nodes[id] else {
                unreachable!("leaf chain holds leaves only");
            };
            for i in from..keys.len() {
                if keys[i] > hi || out.len() >= limit {
                    return;
                }
                out.push(Entry::new(keys[i], vals[i]));
            }
            id = *next;
            from = 0;
        }
    }

    pub fn range(&self, lo: u64, hi: u64, limit: Option<usize>) -> Vec<Entry> {
        let mut out = Vec::new();
        self.range_into(lo, hi, limit, &mut out);
        out
    }

    pub fn entries(&self) -> Vec<Entry> {
        self.range(0, u64::MAX, None)
    }

    /// Inserts or overwrites. Returns true if the key was new.
    pub fn insert(&mut self, k: u64, v: u64) -> bool {
        let (fresh, split) = self.insert_rec(self.root, k, v);
        if let Some((sep, right)) = split {
            self.root = self.alloc(Node::Internal {
                keys: vec![sep],
                children: vec![self.root, right],
            });
            self.height += 1;
        }
        self.len += usize::from(fresh);
        fresh
    }

    fn insert_rec(&mut self, id: Id, k: u64, v: u64) -> (bool, Option<(u64, Id)>) {
        let f = self.fanout;
        match &mut self.nodes[id] {
            Node::Leaf { keys, vals, next } => {
                let i = match keys.binary_search(&k) {
                    Ok(i) => {
                        vals[i] = v;
                        return (false, None);
                    }
                    Err(i) => i,
                };
                keys.insert(i, k);
                vals.insert(i, v);
                if keys.len() <= f {
                    return (true, None);
                }
                let mid = keys.len() / 2;
                let right = Node::Leaf {
                    keys: keys.split_off(mid),
                    vals: vals.split_off(mid),
                    next: *next,
                };
                let sep = match &right {
                    Node::Leaf { keys, .. } => keys[0],
                    _ => unreachable!(),
                };
                let r = self.alloc(right);
                if let Node::Leaf { next, .. } = &mut self.nodes[id] {
                    *next = r;
                }
                (true, Some((sep, r)))
            }
            Node::Internal { keys, children } => {
                let slot = keys.partition_point(|&s| s <= k);
                let child = children[slot];
                let (fresh, split) = self.insert_rec(child, k, v);
                let Some((sep, r)) = split else {
                    return (fresh, None);
                };
                let Node::Internal { keys, children } = &mut self.nodes[id] else {
                    unreachable!();
                };
                keys.insert(slot, sep);
                children.insert(slot + 1, r);
                if children.len() <= f {
                    return (fresh, None);
                }
                let mid = keys.len() / 2;
                let rk = keys.split_off(mid + 1);
                let up = keys.pop().expect("separator at mid");
                let rc = children.split_off(mid + 1);
                let r = self.alloc(Node::Internal {
                    keys: rk,
                    children: rc,
                });
                (fresh, Some((up, r)))
            }
            Node::Free => unreachable!("reached a freed node"),
        }
    }

    /// Returns true if the key was present.
    pub fn delete(&mut self, k: u64) -> bool {
        let gone = self.delete_rec(self.root, k);
        if gone {
            self.len -= 1;
        }
        if let Node::Internal { children, .. } = &self.nodes[self.root] {
            if children.len() == 1 {
                let old = self.root;
                self.root = children[0];
                self.release(old);
                self.height -= 1;
            }
        }
        gone
    }

    fn delete_rec(&mut self, id: Id, k: u64) -> bool {
        let (slot, child) = match &mut self.nodes[id] {
            Node::Leaf { keys, vals, .. } => {
                return match keys.binary_search(&k) {
                    Ok(i) => {
                        keys.remove(i);
                        vals.remove(i);
                        true
                    }
                    Err(_) => false,
                };
            }
            Node::Internal { keys, children } => {
                let s = keys.partition_point(|&s| s <= k);
                (s, children[s])
            }
            Node::Free => unreachable!("reached a freed node"),
        };
        if !self.delete_rec(child, k) {
            return false;
        }
        if self.size(child) < self.min_fill() {
            self.rebalance(id, slot);
        }
        true
    }

    fn size(&self, id: Id) -> usize {
        match &self.nodes[id] {
            Node::Leaf { keys, .. } => keys.len(),
            Node::Internal { children, .. } => children.len(),
            Node::Free => 0,
        }
    }

    /// Fixes an underfull child at `slot` of `parent` by borrowing from a
    /// sibling or merging with one.
    fn rebalance(&mut self, parent: Id, slot: usize) {
        let Node::Internal { children, .. } = &self.nodes[parent] else {
            unreachable!();
        };
        let left = slot.checked_sub(1).map(|s| children[s]);
        let right = children.get(slot + 1).copied();
        let min = self.min_fill();
        if let Some(l) = left.filter(|&l| self.size(l) > min) {
            self.borrow_from_left(parent, slot, l);
        } else if let Some(r) = right.filter(|&r| self.size(r) > min) {
            self.borrow_from_right(parent, slot, r);
        } else if left.is_some() {
            self.merge(parent, slot - 1);
        } else if right.is_some() {
            self.merge(parent, slot);
        }
    }

    fn take(&mut self, id: Id) -> Node {
        std::mem::replace(&mut self.nodes[id], Node::Free)
    }

    fn separator(&mut self, parent: Id, i: usize) -> &mut u64 {
        match &mut self.nodes[parent] {
            Node::Internal { keys, .. } => &mut keys[i],
            _ => unreachable!(),
        }
    }

    fn borrow_from_left(&mut self, parent: Id, slot: usize, l: Id) {
        let c = match &self.nodes[parent] {
            Node::Internal { children, .. } => children[slot],
            _ => unreachable!(),
        };
        let (mut ln, mut cn) = (self.take(l), self.take(c));
        let sep = *self.separator(parent, slot - 1);
        let new_sep = match (&mut ln, &mut cn) {
            (
                Node::Leaf {
                    keys: lk, vals: lv, ..
                },
                Node::Leaf {
                    keys: ck, vals: cv, ..
                },
            ) => {
                ck.insert(0, lk.pop().unwrap());
                cv.insert(0, lv.pop().unwrap());
                ck[0]
            }
            (
                Node::Internal {
                    keys: lk,
                    children: lc,
                },
                Node::Internal {
                    keys: ck,
                    children: cc,
                },
            ) => {
                ck.insert(0, sep);
                cc.insert(0, lc.pop().unwrap());
                lk.pop().unwrap()
            }
            _ => unreachable!("siblings share a level"),
        };
        *self.separator(parent, slot - 1) = new_sep;
        self.nodes[l] = ln;
        self.nodes[c] = cn;
    }

    fn borrow_from_right(&mut self, parent: Id, slot: usize, r: Id) {
        let c = match &self.nodes[parent] {
            Node::Internal { children, .. } => children[slot],
            _ => unreachable!(),
        };
        let (mut cn, mut rn) = (self.take(c), self.take(r));
        let sep = *self.separator(parent, slot);
        let new_sep = match (&mut cn, &mut rn) {
            (
                Node::Leaf {
                    keys: ck, vals: cv, ..
                },
                Node::Leaf {
                    keys: rk, vals: rv, ..
                },
            ) => {
                ck.push(rk.remove(0));
                cv.push(rv.remove(0));
                rk[0]
            }
            (
                Node::Internal {
                    keys: ck,
                    children: cc,
                },
                Node::Internal {
                    keys: rk,
                    children: rc,
                },
            ) => {
                ck.push(sep);
                cc.push(rc.remove(0));
                rk.remove(0)
            }
            _ => unreachable!("siblings share a level"),
        };
        *self.separator(parent, slot) = new_sep;
        self.nodes[c] = cn;
        self.nodes[r] = rn;
    }

    /// Merges child `i + 1` of `parent` into child `i`.
    fn merge(&mut self, parent: Id, i: usize) {
        let Node::Internal { keys, children } = &mut self.nodes[parent] else {
            unreachable!();
        };
        let sep = keys.remove(i);
        let r = children.remove(i + 1);
        let l = children[i];
        let rn = self.take(r);
        match (&mut self.nodes[l], rn) {
            (
                Node::Leaf {
                    keys: lk,
                    vals: lv,
                    next,
                },
                Node::Leaf {
                    keys: rk,
                    vals: rv,
                    next: rnext,
                },
            ) => {
                lk.extend(rk);
                lv.extend(rv);
                *next = rnext;
            }
            (
                Node::Internal {
                    keys: lk,
                    children: lc,
                },
                Node::Internal {
                    keys: rk,
                    children: rc,
                },
            ) => {
                lk.push(sep);
                lk.extend(rk);
                lc.extend(rc);
            }
            _ => unreachable!("siblings share a level"),
        }
        self.free.push(r);
    }

    /// Structural bytes: node headers plus key, value and child arrays.
    pub fn memory_bytes(&self) -> usize {
        let word = std::mem::size_of::<u64>();
        self.nodes
            .iter()
            .map(|n| {
                std::mem::size_of::<Node>()
                    + match n {
                        Node::Leaf { keys, vals, .. } => (keys.capacity() + vals.capacity()) * word,
                        Node::Internal { keys, children } => {
                            (keys.capacity() + children.capacity()) * word
                        }
                        Node::Free => 0,
                    }
            })
            .sum()
    }

    /// Checks balance, fill, ordering, separators and the leaf chain.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut leaves = Vec::new();
        let count = self.check_rec(self.root, 1, None, None, true, &mut leaves, &mut errs);
        if count != self.len {
            errs.push(format!("len says {}, tree holds {count}", self.len));
        }
        let mut chain = Vec::new();
        let mut id = self.first_leaf;
        while id != NIL && chain.len() <= leaves.len() {
            chain.push(id);
            id = match &self.nodes[id] {
                Node::Leaf { next, .. } => *next,
                _ => {
                    errs.push(format!("leaf chain reaches non-leaf {id}"));
                    NIL
                }
            };
        }
        if chain != leaves {
            errs.push("leaf chain differs from in-order leaves".into());
        }
        errs
    }

    #[allow(clippy::too_many_arguments)]
    fn check_rec(
        &self,
        id: Id,
        depth: usize,
        lo: Option<u64>,
        hi: Option<u64>,
        is_root: bool,
        leaves: &mut Vec<Id>,
        errs: &mut Vec<String>,
    ) -> usize {
        let in_bounds = |k: u64| lo.is_none_or(|l| k >= l) && hi.is_none_or(|h| k < h);
        let min = if is_root { 0 } else { self.min_fill() };
        match &self.nodes[id] {
            Node::Leaf { keys, vals, .. } => {
                if depth != self.height {
                    errs.push(format!(
                        "leaf {id} at depth {depth}, height {}",
                        self.height
                    ));
                }
                if keys.len() != vals.len() {
                    errs.push(format!(
                        "leaf {id} has {} keys and {} values",
                        keys.len(),
                        vals.len()
                    ));
                }
                if keys.len() < min || keys.len() > self.fanout {
                    errs.push(format!("leaf {id} holds {} keys", keys.len()));
                }
                if !keys.windows(2).all(|w| w[0] < w[1]) {
                    errs.push(format!("leaf {id} is not sorted"));
                }
                if !keys.iter().all(|&k| in_bounds(k)) {
                    errs.push(format!("leaf {id} has keys outside its separators"));
                }
                leaves.push(id);
                keys.len()
            }
            Node::Internal { keys, children } => {
                let min = if is_root { 2 } else { min };
                if children.len() < min || children.len() > self.fanout {
                    errs.push(format!("internal {id} has {} children", children.len()));
                }
                if keys.len() + 1 != children.len() {
                    errs.push(format!(
                        "internal {id} has {} keys for {} children",
                        keys.len(),
                        children.len()
                    ));
                    return 0;
                }
                if !keys.windows(2).all(|w| w[0] < w[1]) || !keys.iter().all(|&k| in_bounds(k)) {
                    errs.push(format!("internal {id} separators out of order"));
                }
                (0..children.len())
                    .map(|i| {
                        let l = if i == 0 { lo } else { Some(keys[i - 1]) };
                        let h = keys.get(i).copied().or(hi);
                        self.check_rec(children[i], depth + 1, l, h, false, leaves, errs)
                    })
                    .sum()
            }
            Node::Free => {
                errs.push(format!("freed node {id} is reachable"));
                0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;

    fn entries(keys: impl IntoIterator<Item = u64>) -> Vec<Entry> {
        keys.into_iter().map(|k| Entry::new(k, k * 3)).collect()
    }

    #[test]
    fn chunking_keeps_nodes_half_full() {
        for n in 128..3_000 {
            let c = chunks(n, 192, 128, 256);
            let sizes: Vec<usize> = split_sizes(n, c).collect();
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(
                sizes.iter().all(|&s| (128..=256).contains(&s)),
                "{n}: {sizes:?}"
            );
        }
    }

    #[test]
    fn bulk_load_shapes() {
        for n in [0, 1, 100, 256, 257, 5_000, 100_000] {
            let t = BaselineBTree::bulk_load(&entries(0..n), DEFAULT_FANOUT);
            assert!(
                t.check_invariants().is_empty(),
                "{n}: {:?}",
                t.check_invariants()
            );
            assert_eq!(t.len(), n as usize);
            assert_eq!(t.entries(), entries(0..n));
        }
        assert_eq!(
            BaselineBTree::bulk_load(&entries(0..100_000), 256).height(),
            3
        );
    }

    #[test]
    fn grows_and_shrinks_back() {
        let mut t = BaselineBTree::with_fanout(4);
        for k in 0..500 {
            assert!(t.insert(k * 7 % 500, k));
        }
        assert!(t.check_invariants().is_empty());
        assert!(t.height() > 3);
        assert!(!t.insert(3, 0));
        for k in 0..500 {
            assert!(t.delete(k));
            assert!(
                t.check_invariants().is_empty(),
                "after {k}: {:?}",
                t.check_invariants()
            );
        }
        assert_eq!((t.len(), t.height()), (0, 1));
        assert!(!t.delete(3));
    }

    #[test]
    fn range_limits_and_bounds() {
        let t = BaselineBTree::bulk_load(&entries((0..1_000).map(|k| k * 2)), 8);
        assert_eq!(t.range(10, 16, None), entries([10, 12, 14, 16]));
        assert_eq!(t.range(11, 11, None), vec![]);
        assert_eq!(t.range(1_990, u64::MAX, Some(5)).len(), 5);
        assert_eq!(t.range(5, 3, None), vec![]);
        assert_eq!(t.get(1_998), Some(1_998 * 3));
        assert_eq!(t.get(1_999), None);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(u64, u64),
        Delete(u64),
        Get(u64),
        Range(u64, u64, Option<usize>),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            4 => (0..3_000u64, any::<u64>()).prop_map(|(k, v)| Op::Insert(k, v)),
            4 => (0..3_000u64).prop_map(Op::Delete),
            1 => (0..3_000u64).prop_map(Op::Get),
            1 => (0..3_000u64, 0..300u64, proptest::option::of(0..50usize)).prop_map(|(l, w, n)| Op::Range(l, l + w, n)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn matches_a_sorted_map(
            bulk in proptest::collection::btree_set(0u64..3_000, 0..800),
            ops in proptest::collection::vec(op(), 1..2_000),
            f in prop_oneof![Just(4usize), Just(5), Just(16), Just(256)],
        ) {
            let mut t = BaselineBTree::bulk_load(&entries(bulk.iter().copied()), f);
            let mut oracle: BTreeMap<u64, u64> = bulk.iter().map(|&k| (k, k * 3)).collect();
            for o in ops {
                match o {
                    Op::Insert(k, v) => prop_assert_eq!(t.insert(k, v), oracle.insert(k, v).is_none()),
                    Op::Delete(k) => prop_assert_eq!(t.delete(k), oracle.remove(&k).is_some()),
                    Op::Get(k) => prop_assert_eq!(t.get(k), oracle.get(&k).copied()),
                    Op::Range(lo, hi, n) => {
                        let want: Vec<Entry> = oracle
                            .range(lo..=hi)
                            .take(n.unwrap_or(usize::MAX))
                            .map(|(&k, &v)| Entry::new(k, v))
                            .collect();
                        prop_assert_eq!(t.range(lo, hi, n), want);
                    }
                }
            }
            let errs = t.check_invariants();
            prop_assert!(errs.is_empty(), "{:?}", errs);
            let want: Vec<Entry> = oracle.iter().map(|(&k, &v)| Entry::new(k, v)).collect();
            prop_assert_eq!(t.entries(), want);
        }
    }
}
