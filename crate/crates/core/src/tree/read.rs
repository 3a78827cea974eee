use std::sync::atomic::Ordering::Relaxed;
use std::time::Instant;

use super::{Body, HireIndex, Node};
use crate::internal::{InternalNode, Pos};
use crate::key::Entry;
use crate::leaf::ModelLeaf;
use crate::recal::{JobKind, Observation, Request};

/// Operations between cost samples.
const SAMPLE_EVERY: u64 = 256;

type Frame<'a> = (&'a InternalNode<super::Link>, Pos);

impl HireIndex {
    /// Tree lookup without the job log. `op` is the operation number when
    /// the lookup should count towards the leaf's query statistics.
    pub(super) fn lookup(&self, k: u64, op: Option<u64>) -> Option<u64> {
        let mut node: &Node = self.root.as_deref()?;
        loop {
            match &node.body {
                Body::Internal(i) => node = i.route(k),
                Body::Legacy(l) => return l.lookup(k),
                Body::Model(m) => {
                    let (v, touches) = m.lookup_traced(k);
                    self.reads.touched(touches);
                    if let Some(op) = op {
                        self.note_query(node, m, k, op);
                    }
                    return v;
                }
            }
        }
    }

    /// Counts a query against a model leaf and raises the active trigger.
    fn note_query(&self, node: &Node, m: &ModelLeaf, k: u64, op: u64) {
        let window = op / self.params.cost.window_ops.max(1);
        m.stats.record_query(window);
        let b = m.buffer_len();
        if b == 0 {
            return;
        }
        if op % SAMPLE_EVERY == 0 {
            let (model_ns, buffer_ns) = probe_costs(m, k);
            self.engine.observe(Observation::ModelSearch(model_ns));
            self.engine.observe(Observation::BufferScan {
                len: b,
                ns: buffer_ns,
            });
        }
        let (q_th, b_th) = self.engine.thresholds();
        if b < b_th || b >= self.params.tau || node.mark != 0 {
            return;
        }
        let q = m.stats.queries(window) as f64;
        // Fire on crossing the threshold and every 1024 queries after, in
        // case the first request went stale.
        if q >= q_th && (q - q_th.ceil()) as u64 % 1024 == 0 {
            let _ = self.engine.hot_tx.send(Request {
                kind: JobKind::Rebuild,
                anchor: k,
                leaf: node as *const Node as usize,
                span: 1,
            });
        }
    }

    /// Appends up to `limit` entries of `[lo, hi]` from the tree alone.
    pub(super) fn scan(&self, lo: u64, hi: u64, limit: usize, out: &mut Vec<Entry>) {
        let Some(root) = self.root.as_deref() else {
            return;
        };
        let op = self.reads.ops.load(Relaxed);
        let mut stack: Vec<Frame<'_>> = Vec::with_capacity(self.height);
        let mut node = root;
        while let Body::Internal(i) = &node.body {
            let p = i.route_pos(lo);
            stack.push((i, p));
            node = i.child(p);
        }
        let mut first = true;
        loop {
            let more = match &node.body {
                Body::Model(m) => {
                    if first {
                        self.note_query(node, m, lo, op);
                    }
                    m.scan(lo, hi, limit, out)
                }
                Body::Legacy(l) => l.scan(lo, hi, limit, out),
                Body::Internal(_) => unreachable!("cursor stops at leaves"),
            };
            first = false;
            if !more {
                return;
            }
            match next_leaf(&mut stack) {
                Some(n) => node = n,
                None => return,
            }
        }
    }
}

/// Advances a root-to-leaf cursor to the following leaf.
fn next_leaf<'a>(stack: &mut Vec<Frame<'a>>) -> Option<&'a Node> {
    loop {
        let (i, p) = stack.last_mut()?;
        match i.next_after(i.sep(*p)) {
            Some(np) => {
                *p = np;
                break;
            }
            None => {
                stack.pop();
            }
        }
    }
    let &(i, p) = stack.last()?;
    let mut node: &Node = i.child(p);
    while let Body::Internal(i) = &node.body {
        let p = i.first_pos()?;
        stack.push((i, p));
        node = i.child(p);
    }
    Some(node)
}

/// Times one model search and one pass over the buffer.
fn probe_costs(m: &ModelLeaf, k: u64) -> (f64, f64) {
    let t = Instant::now();
    std::hint::black_box(m.lookup(std::hint::black_box(k)));
    let model_ns = t.elapsed().as_nanos() as f64;
    let t = Instant::now();
    let hits = m.buffer().iter().filter(|e| e.key >= k).count();
    std::hint::black_box(hits);
    (model_ns, t.elapsed().as_nanos() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ExecMode, IndexParams};

    #[test]
    fn hot_leaf_with_buffer_raises_active_rebuild() {
        let mut p = IndexParams::with_fanout(16);
        p.exec_mode = ExecMode::Stepped;
        let e: Vec<Entry> = (0..1_000u64).map(|i| Entry::new(i * 10, i)).collect();
        let mut idx = HireIndex::bulk_load(&e, p).unwrap();
        for k in [5, 15, 25, 35, 45] {
            idx.insert(k, k).unwrap();
        }
        idx.engine.cost.lock().unwrap().q_th = 3.0;
        idx.engine.refresh();
        let (_, b_th) = idx.engine.thresholds();
        assert!(b_th <= 5);
        // Operation numbers that are not cost-sampling points.
        for op in 1..=5 {
            assert_eq!(idx.lookup(20, Some(op)), Some(2));
        }
        assert_eq!(idx.metrics().active_triggers, 0);
        idx.tick();
        assert_eq!(idx.metrics().active_triggers, 1);
        idx.quiesce();
        assert_eq!(idx.metrics().completed(JobKind::Rebuild), 1);
        assert_eq!(idx.stats().buffered, 0);
        assert_eq!(idx.get(25), Some(25));
    }

    #[test]
    fn cold_leaf_is_left_alone() {
        let mut p = IndexParams::with_fanout(16);
        p.exec_mode = ExecMode::Stepped;
        let e: Vec<Entry> = (0..1_000u64).map(|i| Entry::new(i * 10, i)).collect();
        let mut idx = HireIndex::bulk_load(&e, p).unwrap();
        for k in [5, 15, 25, 35, 45] {
            idx.insert(k, k).unwrap();
        }
        idx.engine.cost.lock().unwrap().q_th = 1_000.0;
        idx.engine.refresh();
        for op in 1..=5 {
            idx.lookup(20, Some(op));
        }
        idx.tick();
        assert_eq!(idx.metrics().active_triggers, 0);
        assert_eq!(idx.stats().buffered, 5);
    }

    /// Leaves ending at 30, 82, 90 and 160; 56 sits in the buffer of the
    /// model leaf that ends at 82.
    fn figure_tree() -> HireIndex {
        use crate::leaf::{LegacyLeaf, ModelLeaf};
        let mut p = IndexParams::with_fanout(16);
        p.exec_mode = ExecMode::Stepped;
        let ents = |ks: &[u64]| {
            ks.iter()
                .map(|&k| Entry::new(k, k * 100))
                .collect::<Vec<_>>()
        };
        let a: Vec<u64> = (10..=30).step_by(4).collect();
        let mut b: Vec<u64> = (31..82).step_by(2).collect();
        b.push(82);
        let mut model = ModelLeaf::build(&ents(&b), 4).unwrap();
        model.insert(Entry::new(56, 5_600), 16).unwrap();
        assert_eq!(model.buffer_len(), 1);
        let leaves = vec![
            Node::new(Body::Legacy(LegacyLeaf::from_entries(&ents(&a)))),
            Node::new(Body::Model(model)),
            Node::new(Body::Legacy(LegacyLeaf::from_entries(&ents(&[84, 88, 90])))),
            Node::new(Body::Legacy(LegacyLeaf::from_entries(&ents(&[
                100, 120, 156, 160,
            ])))),
        ];
        HireIndex::from_leaves(leaves, p)
    }

    #[test]
    fn figure_walk_finds_buffered_key() {
        let idx = figure_tree();
        assert_eq!(idx.len(), 41);
        assert_eq!(idx.get(56), Some(5_600));
        assert_eq!(idx.get(57), Some(5_700));
        assert_eq!(idx.get(58), None);
    }

    #[test]
    fn figure_range_spans_leaves() {
        let idx = figure_tree();
        let keys: Vec<u64> = idx
            .range(56, 156, None)
            .unwrap()
            .iter()
            .map(|e| e.key)
            .collect();
        let mut want: Vec<u64> = (57..82).step_by(2).collect();
        want.insert(0, 56);
        want.extend([82, 84, 88, 90, 100, 120, 156]);
        assert_eq!(keys, want);
        assert_eq!(
            idx.range(57, 57, None).unwrap(),
            vec![Entry::new(57, 5_700)]
        );
        assert_eq!(idx.range(56, 156, Some(3)).unwrap().len(), 3);
    }
}
