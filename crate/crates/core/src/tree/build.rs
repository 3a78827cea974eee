//! Bottom-up bulk loading.
//!
//! Leaves come from the same greedy segmentation as retraining. Where a
//! partition boundary may move (by up to δ/2 keys), it is placed where the
//! parent's running rank model `F` (fitted by recursive least squares over
//! the partition keys seen so far) deviates least from the true rank.
//! Upper levels are grouped the same way over child counts.

use super::{Body, HireIndex, Link, Node};
use crate::error::{HireError, Result};
use crate::internal::InternalNode;
use crate::key::{check_live, Entry};
use crate::leaf::{LegacyLeaf, ModelLeaf};
use crate::params::IndexParams;
use crate::plm::{LinearModel, RlsState};
use crate::recal::partition::{pack_sizes, Segmenter, Shape, Sink};

/// A node of the level being built with its separator and the global rank
/// of that separator.
type Item = (u64, f64, Link);

impl HireIndex {
    /// Builds an index over strictly ascending, live entries.
    pub fn bulk_load(entries: &[Entry], params: IndexParams) -> Result<Self> {
        let mut idx = HireIndex::new(params)?;
        for (i, e) in entries.iter().enumerate() {
            check_live(e.key)?;
            if i > 0 && entries[i - 1].key >= e.key {
                return Err(HireError::NotSorted { index: i });
            }
        }
        if entries.is_empty() {
            return Ok(idx);
        }
        let leaves = build_leaves(entries, &idx.params);
        let (root, height) = stack_levels(leaves, &idx.params, true);
        idx.root = Some(root);
        idx.height = height;
        idx.len = entries.len();
        Ok(idx)
    }

    /// Assembles an index over ready-made leaves (ascending, non-empty).
    #[cfg(test)]
    pub(crate) fn from_leaves(leaves: Vec<Node>, params: IndexParams) -> Self {
        let mut idx = HireIndex::new(params).unwrap();
        let mut len = 0;
        let items: Vec<Item> = leaves
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                len += n.leaf_live();
                (
                    n.upper().expect("non-empty leaf"),
                    i as f64,
                    std::sync::Arc::new(n),
                )
            })
            .collect();
        if !items.is_empty() {
            let (root, height) = stack_levels(items, &idx.params, false);
            idx.root = Some(root);
            idx.height = height;
        }
        idx.len = len;
        idx
    }
}

fn build_leaves(entries: &[Entry], p: &IndexParams) -> Vec<Item> {
    let mut shape = Shape::of(p);
    shape.slack = p.delta / 2;
    let span = (entries[entries.len() - 1].key - entries[0].key).max(1) as f64;
    let mut sink = BulkSink {
        p,
        half: p.delta / 2,
        scale: entries.len() as f64 / span,
        rls: RlsState::new(entries.len() as f64 / span),
        group_len: 0,
        out: Vec::new(),
    };
    let mut seg = Segmenter::new(shape);
    while !seg.run(entries, usize::MAX, &mut sink) {}
    sink.out
}

/// Receives leaf partitions and picks tolerant boundaries.
struct BulkSink<'a> {
    p: &'a IndexParams,
    half: usize,
    scale: f64,
    /// Rank model of the parent under construction.
    rls: RlsState,
    /// Children emitted into that parent so far.
    group_len: usize,
    out: Vec<Item>,
}

impl BulkSink<'_> {
    fn seeded(&self) -> bool {
        self.group_len >= (self.p.fanout / 4).max(1) && self.group_len < self.p.bulk_internal_fill
    }

    fn deviation(&self, e: &[Entry], end: usize) -> f64 {
        (self.rls.predict(e[end - 1].key) - (end - 1) as f64).abs()
    }

    /// The end in `[lo, hi]` with the least deviation; `default` on ties.
    fn best_end(&self, e: &[Entry], lo: usize, hi: usize, default: usize) -> usize {
        if !self.seeded() || lo >= hi {
            return default;
        }
        let mut best = (self.deviation(e, default), default);
        for end in lo..=hi {
            let d = self.deviation(e, end);
            if d < best.0 {
                best = (d, end);
            }
        }
        best.1
    }

    fn emit(&mut self, e: &[Entry], end: usize, body: Body) {
        if self.group_len >= self.p.bulk_internal_fill {
            self.rls = RlsState::new(self.scale);
            self.group_len = 0;
        }
        let (sep, rank) = (e[end - 1].key, (end - 1) as f64);
        self.rls.update(sep, rank);
        self.group_len += 1;
        self.out.push((sep, rank, Node::link(0, body)));
    }
}

impl Sink for BulkSink<'_> {
    fn choose_end(&mut self, e: &[Entry], _start: usize, lo: usize, hi: usize) -> usize {
        self.best_end(e, lo, hi, hi)
    }

    fn model(&mut self, e: &[Entry], start: usize, end: usize, model: LinearModel) {
        let part = &e[start..end];
        let leaf = ModelLeaf::from_parts(
            part.iter().map(|x| x.key).collect(),
            part.iter().map(|x| x.value).collect(),
            model,
        );
        self.emit(e, end, Body::Model(leaf));
    }

    fn legacy_run(&mut self, e: &[Entry], start: usize, end: usize) {
        let f = self.p.fanout;
        let count = pack_sizes(end - start, f).len();
        let mut at = start;
        for j in 0..count {
            let left = count - j;
            let remaining = end - at;
            let size = if left == 1 {
                remaining
            } else {
                let def = remaining.div_ceil(left);
                let min = (f / 2).min(remaining / left);
                let lo = def
                    .saturating_sub(self.half)
                    .max(min)
                    .max(remaining.saturating_sub((left - 1) * f));
                let hi = (def + self.half).min(f).min(remaining - (left - 1) * min);
                if lo <= hi {
                    self.best_end(e, at + lo, at + hi, at + def.clamp(lo, hi)) - at
                } else {
                    def
                }
            };
            let leaf = LegacyLeaf::from_entries(&e[at..at + size]);
            self.emit(e, at + size, Body::Legacy(leaf));
            at += size;
        }
    }
}

/// Groups levels until one node remains; returns it and the height.
fn stack_levels(mut items: Vec<Item>, p: &IndexParams, tolerant: bool) -> (Link, usize) {
    let mut height = 1;
    while items.len() > 1 {
        items = group_level(items, p, tolerant);
        height += 1;
    }
    let (_, _, root) = items.pop().expect("at least one node");
    (root, height)
}

fn group_level(items: Vec<Item>, p: &IndexParams, tolerant: bool) -> Vec<Item> {
    let (f, fill, half) = (p.fanout, p.bulk_internal_fill, p.delta / 2);
    let n = items.len();
    let span = (items[n - 1].0 - items[0].0).max(1) as f64;
    let scale = (items[n - 1].1 - items[0].1).max(1.0) / span;
    let mut rls = RlsState::new(scale);
    let mut group = 0;
    let mut sizes = Vec::new();
    let mut at = 0;
    while at < n {
        let remaining = n - at;
        let mut size = remaining.min(fill);
        if tolerant && remaining > fill && group >= (f / 4).max(1) && group < fill {
            let lo = fill.saturating_sub(half).max(f / 2).max(1);
            let hi = (fill + half).min(f).min(remaining);
            let dev = |c: usize| {
                let (s, r, _) = &items[at + c - 1];
                (rls.predict(*s) - r).abs()
            };
            let mut best = (dev(size), size);
            for c in lo..=hi {
                let d = dev(c);
                if d < best.0 {
                    best = (d, c);
                }
            }
            size = best.1;
        }
        if group >= fill {
            rls = RlsState::new(scale);
            group = 0;
        }
        let (s, r, _) = &items[at + size - 1];
        rls.update(*s, *r);
        group += 1;
        sizes.push(size);
        at += size;
    }
    if sizes.len() >= 2 && *sizes.last().unwrap() < f / 2 {
        let b = sizes.pop().unwrap();
        let a = sizes.pop().unwrap();
        let t = a + b;
        if t <= f {
            sizes.push(t);
        } else {
            sizes.push(t - t / 2);
            sizes.push(t / 2);
        }
    }
    let mut it = items.into_iter();
    sizes
        .into_iter()
        .map(|size| {
            let part: Vec<Item> = it.by_ref().take(size).collect();
            let (sep, rank, _) = part[part.len() - 1];
            let kids = part.into_iter().map(|(s, _, l)| (s, l)).collect();
            (
                sep,
                rank,
                Node::link(0, Body::Internal(InternalNode::build(kids, f, p.log_cap))),
            )
        })
        .collect()
}
