use std::sync::Arc;

use super::{Body, HireIndex, Link, Metrics, Node};
use crate::internal::{InternalNode, Pos};
use crate::key::Entry;
use crate::leaf::{InsertOutcome, LegacyDelete, LegacyInsert, LegacyLeaf};
use crate::params::IndexParams;
use crate::recal::{similar, JobKind, Request};

/// What a recursive update needs besides the node.
pub(super) struct Env<'a> {
    pub p: &'a IndexParams,
    /// Id of the active job, or 0.
    pub active: u64,
    /// Replaying the job log: the job is installed and its marks no
    /// longer freeze anything.
    pub bypass: bool,
    pub reqs: &'a mut Vec<Request>,
    pub m: &'a mut Metrics,
}

impl Env<'_> {
    pub fn frozen(&self, n: &Node) -> bool {
        !self.bypass && self.active != 0 && n.mark == self.active
    }

    fn request(&mut self, kind: JobKind, anchor: u64, leaf: usize, span: usize) {
        self.reqs.push(Request {
            kind,
            anchor,
            leaf,
            span,
        });
    }
}

pub(super) enum Ins {
    Diverted,
    Done {
        added: bool,
    },
    /// The child split; `left` holds the lower half and goes before it.
    Split {
        added: bool,
        sep: u64,
        left: Link,
    },
}

pub(super) enum Del {
    Diverted,
    Absent,
    Removed { underflow: bool },
}

pub(super) fn addr(n: &Node) -> usize {
    n as *const Node as usize
}

pub(super) fn insert_rec(link: &mut Link, e: Entry, env: &mut Env<'_>) -> Ins {
    if env.frozen(link) {
        return Ins::Diverted;
    }
    let node = Arc::make_mut(link);
    let here = addr(node);
    let mark = node.mark;
    let f = env.p.fanout;
    match &mut node.body {
        Body::Internal(inner) => {
            let pos = inner.route_pos(e.key);
            if inner.sep(pos) < e.key {
                inner.set_sep(pos, e.key);
            }
            match insert_rec(inner.child_mut(pos), e, env) {
                Ins::Split { added, sep, left } => match inner.insert_or_remap(sep, left) {
                    (_, Some(lower)) => {
                        let sep = lower
                            .last_pos()
                            .map(|p| lower.sep(p))
                            .expect("split half is non-empty");
                        Ins::Split {
                            added,
                            sep,
                            left: Node::link(mark, Body::Internal(lower)),
                        }
                    }
                    (_, None) => Ins::Done { added },
                },
                Ins::Done { added } => {
                    maybe_transform(inner, pos, env);
                    Ins::Done { added }
                }
                Ins::Diverted => Ins::Diverted,
            }
        }
        Body::Model(leaf) => {
            let out = leaf.insert_unbounded(e, env.p.tau);
            if matches!(
                out,
                InsertOutcome::Buffered | InsertOutcome::BufferedAndTrigger
            ) {
                env.m.buffer_ops += 1;
                env.m.buffer_touches += 1;
            }
            if out == InsertOutcome::BufferedAndTrigger {
                env.m.passive_triggers += 1;
                env.request(JobKind::Rebuild, e.key, here, 1);
            }
            Ins::Done {
                added: out != InsertOutcome::Replaced,
            }
        }
        Body::Legacy(leaf) => match leaf.insert(e, f) {
            (LegacyInsert::Replaced, _) => Ins::Done { added: false },
            (LegacyInsert::Inserted, _) => Ins::Done { added: true },
            (LegacyInsert::Overflow { sep }, left) => Ins::Split {
                added: true,
                sep,
                left: Node::link(
                    mark,
                    Body::Legacy(left.expect("overflow returns the lower half")),
                ),
            },
        },
    }
}

pub(super) fn delete_rec(link: &mut Link, k: u64, env: &mut Env<'_>) -> Del {
    if env.frozen(link) {
        return Del::Diverted;
    }
    let node = Arc::make_mut(link);
    let here = addr(node);
    let half = env.p.half();
    match &mut node.body {
        Body::Internal(inner) => {
            let pos = inner.route_pos(k);
            match delete_rec(inner.child_mut(pos), k, env) {
                Del::Removed { underflow: true } => {
                    fix_child(inner, pos, env);
                    Del::Removed {
                        underflow: inner.len() < half,
                    }
                }
                Del::Removed { .. } => Del::Removed { underflow: false },
                other => other,
            }
        }
        Body::Model(leaf) => {
            let (hit, touches) = leaf.delete_traced(k);
            if !hit {
                return Del::Absent;
            }
            if touches > 0 {
                env.m.buffer_ops += 1;
                env.m.buffer_touches += touches as u64;
            }
            let live = leaf.live();
            if live == 0 || (env.p.legacy_enabled() && live < env.p.alpha) {
                env.request(JobKind::Convert, k, here, 1);
            }
            Del::Removed { underflow: false }
        }
        Body::Legacy(leaf) => match leaf.delete(k, env.p.fanout) {
            LegacyDelete::Absent => Del::Absent,
            LegacyDelete::Removed => Del::Removed { underflow: false },
            LegacyDelete::Underflow => Del::Removed { underflow: true },
        },
    }
}

/// Repairs the underflowing child at `pos` by removing it when empty or
/// by merging with or borrowing from an adjacent sibling of the same kind.
/// Frozen nodes are left alone.
fn fix_child(inner: &mut InternalNode<Link>, pos: Pos, env: &Env<'_>) {
    let child = inner.child(pos);
    if env.frozen(child) {
        return;
    }
    let empty = match &child.body {
        Body::Internal(i) => i.is_empty(),
        Body::Legacy(l) => l.is_empty(),
        Body::Model(_) => false,
    };
    if empty {
        inner.remove_at(pos);
        return;
    }
    let sep = inner.sep(pos);
    let pairs = [
        inner.prev_before(sep).map(|p| (p, pos)),
        inner.next_after(sep).map(|p| (pos, p)),
    ];
    for (lp, rp) in pairs.into_iter().flatten() {
        let (l, r) = (inner.child(lp), inner.child(rp));
        if env.frozen(l) || env.frozen(r) {
            continue;
        }
        match (&l.body, &r.body) {
            (Body::Legacy(_), Body::Legacy(_)) => return merge_legacy(inner, lp, rp, env.p.fanout),
            (Body::Internal(_), Body::Internal(_)) => return merge_internal(inner, lp, rp, env.p),
            _ => {}
        }
    }
}

/// Merges two adjacent legacy leaves into the right one's slot, or evens
/// them out when they do not fit in one.
fn merge_legacy(inner: &mut InternalNode<Link>, lp: Pos, rp: Pos, cap: usize) {
    let (la, ra) = inner.pair_mut(lp, rp);
    let (Body::Legacy(l), Body::Legacy(r)) =
        (&mut Arc::make_mut(la).body, &mut Arc::make_mut(ra).body)
    else {
        unreachable!("caller checked kinds");
    };
    if l.len() + r.len() <= cap {
        let right = std::mem::take(r);
        l.absorb(right);
        std::mem::swap(la, ra);
        inner.remove_at(lp);
    } else {
        let sep = LegacyLeaf::rebalance(l, r);
        inner.set_sep(lp, sep);
    }
}

fn merge_internal(inner: &mut InternalNode<Link>, lp: Pos, rp: Pos, p: &IndexParams) {
    let f = p.fanout;
    let (la, ra) = inner.pair_mut(lp, rp);
    let (Body::Internal(l), Body::Internal(r)) =
        (&mut Arc::make_mut(la).body, &mut Arc::make_mut(ra).body)
    else {
        unreachable!("caller checked kinds");
    };
    let mut items = l.take_children();
    items.extend(r.take_children());
    if items.len() <= f {
        *r = InternalNode::build(items, f, p.log_cap);
        inner.remove_at(lp);
    } else {
        let right = items.split_off(items.len() / 2);
        let sep = items.last().expect("non-empty half").0;
        *l = InternalNode::build(items, f, p.log_cap);
        *r = InternalNode::build(right, f, p.log_cap);
        inner.set_sep(lp, sep);
    }
}

/// After an insert into a legacy leaf, periodically checks whether it and
/// its neighbours have become linear enough to merge into a model leaf.
fn maybe_transform(inner: &mut InternalNode<Link>, pos: Pos, env: &mut Env<'_>) {
    let p = env.p;
    if !p.legacy_enabled() {
        return;
    }
    match &inner.child(pos).body {
        Body::Legacy(l) if l.since_check as usize >= (p.fanout / 4).max(1) => {}
        _ => return,
    }
    if let Body::Legacy(l) = &mut Arc::make_mut(inner.child_mut(pos)).body {
        l.since_check = 0;
    }
    let node = inner.child(pos);
    let Body::Legacy(leaf) = &node.body else {
        return;
    };
    if env.frozen(node) || leaf.is_empty() {
        return;
    }
    let sep = inner.sep(pos);
    let (first, last) = (leaf.first_key().unwrap(), leaf.last_key().unwrap());
    if let Some(pp) = inner.prev_before(sep) {
        let prev = inner.child(pp);
        if let Body::Model(m) = &prev.body {
            if !env.frozen(prev)
                && m.live() + leaf.len() <= p.beta
                && similar(
                    m.model(),
                    m.data_len(),
                    &leaf.regression(),
                    first,
                    last,
                    leaf.len(),
                    p.epsilon,
                    &p.cost,
                )
            {
                let anchor = inner.sep(pp);
                env.request(JobKind::ForwardMerge, anchor, addr(prev), 2);
                return;
            }
        }
    }
    // Grow a run of similar legacy leaves around `pos`.
    let legacy = |q: Pos| match &inner.child(q).body {
        Body::Legacy(l) if !env.frozen(inner.child(q)) && !l.is_empty() => Some(l),
        _ => None,
    };
    let pair_ok = |a: &LegacyLeaf, b: &LegacyLeaf| {
        similar(
            &a.regression(),
            a.len(),
            &b.regression(),
            b.first_key().unwrap(),
            b.last_key().unwrap(),
            b.len(),
            p.epsilon,
            &p.cost,
        )
    };
    let mut start = pos;
    let mut total = leaf.len();
    let mut span = 1;
    while let Some(q) = inner.prev_before(inner.sep(start)) {
        match legacy(q) {
            Some(a) if total + a.len() <= p.beta && pair_ok(a, legacy(start).unwrap()) => {
                total += a.len();
                span += 1;
                start = q;
            }
            _ => break,
        }
    }
    let mut end = pos;
    while total < p.alpha {
        let Some(q) = inner.next_after(inner.sep(end)) else {
            break;
        };
        match legacy(q) {
            Some(b) if total + b.len() <= p.beta && pair_ok(legacy(end).unwrap(), b) => {
                total += b.len();
                span += 1;
                end = q;
            }
            _ => break,
        }
    }
    if span >= 2 && total >= p.alpha {
        let anchor = inner.sep(start);
        let first = addr(inner.child(start));
        env.request(JobKind::BackwardMerge, anchor, first, span);
    }
}

impl HireIndex {
    /// Applies an insert (`Some(v)`) or delete (`None`) of `k`. Returns
    /// whether the key was added (insert) or removed (delete). With
    /// `bypass`, frozen nodes are updated in place (log replay).
    pub(super) fn apply(&mut self, k: u64, op: Option<u64>, bypass: bool) -> bool {
        if !bypass
            && self
                .engine
                .active
                .as_ref()
                .is_some_and(|j| j.log.get(k).is_some())
        {
            // Keep updates of a key with pending log entries in order.
            let hit = self.divert(k, op);
            self.account(op, hit);
            return hit;
        }
        let mut reqs = Vec::new();
        let active = self.engine.active_id();
        let Some(root) = self.root.as_mut() else {
            let Some(v) = op else {
                return false;
            };
            let leaf = LegacyLeaf::from_entries(&[Entry::new(k, v)]);
            self.root = Some(Node::link(0, Body::Legacy(leaf)));
            self.height = 1;
            // A replayed insert was counted when it was diverted.
            if !bypass {
                self.len += 1;
            }
            return true;
        };
        let mut env = Env {
            p: &self.params,
            active,
            bypass,
            reqs: &mut reqs,
            m: &mut self.metrics,
        };
        let outcome = match op {
            Some(v) => match insert_rec(root, Entry::new(k, v), &mut env) {
                Ins::Diverted => None,
                Ins::Done { added } => Some(added),
                Ins::Split { added, sep, left } => {
                    let upper = root.upper().unwrap_or(crate::MAX_KEY).max(k);
                    let old =
                        std::mem::replace(root, Node::link(0, Body::Legacy(LegacyLeaf::new())));
                    let grown = InternalNode::build(
                        vec![(sep, left), (upper, old)],
                        self.params.fanout,
                        self.params.log_cap,
                    );
                    *root = Node::link(0, Body::Internal(grown));
                    self.height += 1;
                    Some(added)
                }
            },
            None => match delete_rec(root, k, &mut env) {
                Del::Diverted => None,
                Del::Absent => Some(false),
                Del::Removed { .. } => Some(true),
            },
        };
        let hit = match outcome {
            Some(hit) => hit,
            None => self.divert(k, op),
        };
        if !bypass {
            self.account(op, hit);
        }
        self.normalize_root();
        for r in reqs {
            self.engine.enqueue(r);
        }
        hit
    }

    fn account(&mut self, op: Option<u64>, hit: bool) {
        match (op, hit) {
            (Some(_), true) => self.len += 1,
            (None, true) => self.len -= 1,
            _ => {}
        }
    }

    /// Records an update for the frozen subtree in the job log.
    fn divert(&mut self, k: u64, op: Option<u64>) -> bool {
        let existed = self.current(k).is_some();
        let job = self.engine.active.as_mut().expect("diverted without a job");
        if op.is_none() && !existed {
            return false;
        }
        job.log.push(k, op);
        self.metrics.diverted += 1;
        self.metrics.max_log_len = self.metrics.max_log_len.max(job.log.len());
        match op {
            Some(_) => !existed,
            None => true,
        }
    }

    /// The value of `k` as readers see it, without touching statistics.
    pub(super) fn current(&self, k: u64) -> Option<u64> {
        if let Some(job) = &self.engine.active {
            if let Some(state) = job.log.get(k) {
                return state;
            }
        }
        self.lookup(k, None)
    }

    /// Collapses single-child roots and drops an empty tree.
    pub(super) fn normalize_root(&mut self) {
        let active = self.engine.freezing_id();
        while let Some(root) = self.root.as_ref() {
            if active != 0 && root.mark == active {
                return;
            }
            let next = match &root.body {
                Body::Internal(i) if i.is_empty() => None,
                Body::Internal(i) if i.len() == 1 => {
                    Some(Arc::clone(i.child(i.first_pos().unwrap())))
                }
                Body::Legacy(l) if l.is_empty() => None,
                _ => return,
            };
            self.root = next;
            self.height -= 1;
        }
        self.height = 0;
    }
}
