//! Running recalibration jobs against the tree: freezing the affected
//! path, installing the replacement leaves and replaying the job log.

use std::sync::Arc;
use std::time::Instant;

use super::update::addr;
use super::{Body, HireIndex, Link, Node};
use crate::internal::InternalNode;
use crate::params::ExecMode;
use crate::recal::partition::{pack_sizes, Shape};
use crate::recal::{
    ActiveJob, JobKind, JobOutcome, JobState, JobWork, MlsLog, Observation, Request,
};

/// Upper bound on sweep rounds in [`HireIndex::quiesce`].
const QUIESCE_ROUNDS: usize = 64;

enum Progress {
    Wait,
    Computed(JobOutcome, f64),
    Replay,
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// New leaves beyond the first that a job over `total` entries may create.
fn push_up_budget(total: usize, f: i64) -> i64 {
    ceil_div(total as i64, f) - 1
}

/// First level (root is 0) that can receive pushed-up children, given the
/// child counts along the path. Each level absorbs what its free slots
/// allow and passes on the rest, in nodes.
fn frozen_from(total: usize, f: i64, sizes: &[i64]) -> usize {
    let mut sigma = push_up_budget(total, f);
    let mut level = sizes.len();
    while sigma > 0 && level > 0 {
        level -= 1;
        sigma = ceil_div(sigma - (f - sizes[level]), f);
    }
    level
}

impl HireIndex {
    pub(super) fn after_op(&mut self) {
        self.metrics.active_triggers += self.engine.drain_hot();
        if self.engine.mode == ExecMode::Blocking {
            while self.engine.active.is_some() || !self.engine.pending.is_empty() {
                self.drive(true);
            }
        } else {
            self.drive(false);
        }
    }

    /// Starts a job if none is active, then advances the active one by one
    /// operation's worth of work, or to completion with `finish`.
    fn drive(&mut self, finish: bool) {
        while self.engine.active.is_none() {
            let Some(req) = self.engine.next_request() else {
                return;
            };
            self.start_job(req);
        }
        loop {
            let step = {
                let job = self.engine.active.as_mut().expect("active job");
                match &mut job.state {
                    JobState::Computing(work) => {
                        let budget = if finish {
                            usize::MAX
                        } else {
                            self.params.step_budget
                        };
                        let t = Instant::now();
                        let out = work.step(budget);
                        job.work_ns += t.elapsed().as_nanos() as f64;
                        match out {
                            Some(o) => Progress::Computed(o, job.work_ns),
                            None => Progress::Wait,
                        }
                    }
                    JobState::Remote => {
                        let worker = self
                            .engine
                            .worker
                            .as_ref()
                            .expect("threaded mode has a worker");
                        let done = if finish {
                            Some(worker.wait())
                        } else {
                            worker.try_take()
                        };
                        match done {
                            Some(d) => {
                                debug_assert_eq!(d.id, job.id);
                                Progress::Computed(d.outcome, d.ns)
                            }
                            None => Progress::Wait,
                        }
                    }
                    JobState::Replaying => Progress::Replay,
                }
            };
            match step {
                Progress::Wait => return,
                Progress::Computed(out, ns) => {
                    self.publish(out, ns);
                    if !finish {
                        return;
                    }
                }
                Progress::Replay => {
                    let n = if finish {
                        usize::MAX
                    } else {
                        self.params.replay_per_op
                    };
                    self.replay(n);
                    if self.pending_log_len() == 0 {
                        self.engine.active = None;
                        self.normalize_root();
                    }
                    return;
                }
            }
        }
    }

    /// Validates `req` against the current tree, freezes the affected path
    /// and launches the job. Returns false if the request went stale.
    fn start_job(&mut self, req: Request) -> bool {
        let Some(total) = self.validate(req) else {
            self.metrics.jobs_dropped += 1;
            return false;
        };
        let id = self.engine.next_id;
        self.engine.next_id += 1;
        self.metrics.jobs_started[req.kind.index()] += 1;
        let targets = self.mark_path(id, req, total);
        let work = JobWork::new(req.kind, Shape::of(&self.params), targets.clone());
        let state = match &self.engine.worker {
            Some(w) if self.engine.mode == ExecMode::Threaded => {
                w.submit(id, work);
                JobState::Remote
            }
            _ => JobState::Computing(Box::new(work)),
        };
        self.engine.active = Some(ActiveJob {
            id,
            kind: req.kind,
            anchor: req.anchor,
            targets,
            state,
            log: MlsLog::default(),
            work_ns: 0.0,
        });
        true
    }

    /// Entries held by the sources of `req`, or `None` if the request no
    /// longer applies.
    fn validate(&self, req: Request) -> Option<usize> {
        let root = self.root.as_ref()?;
        let p = &self.params;
        let mut parent: Option<&InternalNode<Link>> = None;
        let mut pos = None;
        let mut link = root;
        while let Body::Internal(i) = &link.body {
            let q = i.route_pos(req.anchor);
            parent = Some(i);
            pos = Some(q);
            link = i.child(q);
        }
        if addr(link) != req.leaf {
            return None;
        }
        match (req.kind, &link.body) {
            (JobKind::Rebuild, Body::Model(m)) => Some(m.data_len() + m.buffer_len()),
            (JobKind::Rebuild, Body::Legacy(l)) => Some(l.len()),
            (JobKind::Convert, Body::Model(m)) => {
                let live = m.live();
                (live == 0 || (p.legacy_enabled() && live < p.alpha))
                    .then_some(m.data_len() + m.buffer_len())
            }
            (JobKind::ForwardMerge, Body::Model(m)) => {
                let (i, q) = (parent?, pos?);
                let Body::Legacy(l) = &i.child(i.next_after(i.sep(q))?).body else {
                    return None;
                };
                let total = m.live() + l.len();
                (total >= p.alpha && total <= p.beta).then_some(total)
            }
            (JobKind::BackwardMerge, Body::Legacy(l)) => {
                let (i, mut q) = (parent?, pos?);
                let mut total = l.len();
                for _ in 1..req.span {
                    q = i.next_after(i.sep(q))?;
                    let Body::Legacy(l) = &i.child(q).body else {
                        return None;
                    };
                    total += l.len();
                }
                (req.span >= 2 && total >= p.alpha && total <= p.beta).then_some(total)
            }
            _ => None,
        }
    }

    /// Marks the sources and the ancestors that may receive new children,
    /// following the push-up budget recurrence, and returns the sources.
    fn mark_path(&mut self, id: u64, req: Request, total: usize) -> Vec<Link> {
        let f = self.params.fanout as i64;
        // Child counts along the path, root first.
        let mut sizes = Vec::new();
        let mut node: &Node = self.root.as_ref().expect("job on empty tree");
        while let Body::Internal(i) = &node.body {
            sizes.push(i.len() as i64);
            node = i.route(req.anchor);
        }
        let frozen_from = frozen_from(total, f, &sizes);
        let mut targets = Vec::with_capacity(req.span);
        let root = self.root.as_mut().expect("job on empty tree");
        if root.is_leaf() {
            Arc::make_mut(root).mark = id;
            targets.push(Arc::clone(root));
            return targets;
        }
        let mut cur: &mut Link = root;
        let mut depth = 0;
        loop {
            let n = Arc::make_mut(cur);
            if depth >= frozen_from {
                n.mark = id;
            }
            let Body::Internal(i) = &mut n.body else {
                unreachable!("stopped at the leaf parent");
            };
            let p = i.route_pos(req.anchor);
            if i.child(p).is_leaf() {
                let mut q = p;
                for t in 0..req.span {
                    Arc::make_mut(i.child_mut(q)).mark = id;
                    targets.push(Arc::clone(i.child(q)));
                    if t + 1 < req.span {
                        q = i.next_after(i.sep(q)).expect("validated span");
                    }
                }
                return targets;
            }
            cur = i.child_mut(p);
            depth += 1;
        }
    }

    /// Installs a finished job's result and switches it to log replay.
    fn publish(&mut self, out: JobOutcome, ns: f64) {
        let job = self.engine.active.as_mut().expect("active job");
        job.state = JobState::Replaying;
        let (id, kind, anchor) = (job.id, job.kind, job.anchor);
        let targets = std::mem::take(&mut job.targets);
        self.metrics.job_work_ns += ns as u64;
        let ok = match out {
            JobOutcome::Abort => false,
            JobOutcome::Pieces(pieces) => {
                if self.params.verify_jobs {
                    for (_, n) in &pieces {
                        if let Body::Model(m) = &n.body {
                            if !m.problems(self.params.epsilon, self.params.tau).is_empty() {
                                self.metrics.job_violations += 1;
                            }
                        }
                    }
                }
                self.install(id, anchor, targets, pieces)
            }
        };
        if ok {
            self.metrics.jobs_completed[kind.index()] += 1;
            if kind == JobKind::Rebuild {
                self.engine.observe(Observation::RetrainTime(ns));
            }
        } else {
            self.metrics.jobs_aborted[kind.index()] += 1;
        }
        self.normalize_root();
    }

    fn install(
        &mut self,
        id: u64,
        anchor: u64,
        targets: Vec<Link>,
        pieces: Vec<(u64, Node)>,
    ) -> bool {
        let mut cx = Install {
            anchor,
            targets,
            pieces: Some(pieces),
            id,
            fanout: self.params.fanout,
            log_cap: self.params.log_cap,
            overruns: 0,
        };
        let height = self.height;
        let Some(root) = self.root.as_mut() else {
            return false;
        };
        let (extras, empty) = match install_rec(root, 0, height, &mut cx) {
            None => return false,
            Some(r) => r,
        };
        self.metrics.pap_overruns += cx.overruns;
        if empty {
            self.root = None;
            self.height = 0;
        } else if !extras.is_empty() {
            self.grow_root(extras);
        }
        true
    }

    /// Puts new top-level siblings and the current root under new levels.
    fn grow_root(&mut self, mut items: Vec<(u64, Link)>) {
        let f = self.params.fanout;
        let old = self.root.take().expect("growing a non-empty tree");
        items.push((old.upper().unwrap_or(crate::MAX_KEY), old));
        loop {
            self.height += 1;
            if items.len() <= f {
                let node = InternalNode::build(items, f, self.params.log_cap);
                self.root = Some(Node::link(0, Body::Internal(node)));
                return;
            }
            items = chunk(items, 0, f, self.params.log_cap);
        }
    }

    fn replay(&mut self, n: usize) {
        for _ in 0..n {
            let next = self.engine.active.as_mut().and_then(|j| j.log.pop());
            let Some((k, op)) = next else {
                return;
            };
            self.metrics.replayed += 1;
            self.apply(k, op, true);
        }
    }

    /// Runs every queued job to completion, then sweeps the tree for leaves
    /// outside their size bounds and repairs them, until nothing is left.
    pub fn quiesce(&mut self) {
        for _ in 0..QUIESCE_ROUNDS {
            self.metrics.active_triggers += self.engine.drain_hot();
            while self.engine.active.is_some() || !self.engine.pending.is_empty() {
                self.drive(true);
                self.metrics.active_triggers += self.engine.drain_hot();
            }
            let reqs = self.sweep();
            if reqs.is_empty() {
                break;
            }
            for r in reqs {
                self.engine.enqueue(r);
            }
        }
        self.normalize_root();
    }

    /// Queues a rebuild of every leaf.
    pub fn force_recalibrate_all(&mut self) {
        for (anchor, leaf) in self.leaves() {
            self.engine.enqueue(Request {
                kind: JobKind::Rebuild,
                anchor,
                leaf,
                span: 1,
            });
        }
    }

    fn sweep(&self) -> Vec<Request> {
        let p = &self.params;
        let mut out = Vec::new();
        let mut walk = |anchor: u64, n: &Node| {
            let Body::Model(m) = &n.body else {
                return;
            };
            let live = m.live();
            let kind = if live == 0 || (p.legacy_enabled() && live < p.alpha) {
                JobKind::Convert
            } else if live > p.beta || m.buffer_len() >= p.tau {
                JobKind::Rebuild
            } else {
                return;
            };
            out.push(Request {
                kind,
                anchor,
                leaf: addr(n),
                span: 1,
            });
        };
        if let Some(r) = &self.root {
            visit_leaves(r, 0, &mut walk);
        }
        out
    }

    /// `(anchor, address)` of every leaf, in key order.
    fn leaves(&self) -> Vec<(u64, usize)> {
        let mut out = Vec::new();
        if let Some(r) = &self.root {
            visit_leaves(r, 0, &mut |a, n| out.push((a, addr(n))));
        }
        out
    }
}

fn visit_leaves(n: &Node, anchor: u64, f: &mut dyn FnMut(u64, &Node)) {
    match &n.body {
        Body::Internal(i) => {
            for (sep, c) in i.children() {
                visit_leaves(c, sep, f);
            }
        }
        _ => f(anchor, n),
    }
}

struct Install {
    anchor: u64,
    targets: Vec<Link>,
    pieces: Option<Vec<(u64, Node)>>,
    id: u64,
    fanout: usize,
    log_cap: usize,
    overruns: u64,
}

impl Install {
    fn take_pieces(&mut self) -> Vec<(u64, Link)> {
        let id = self.id;
        self.pieces
            .take()
            .unwrap_or_default()
            .into_iter()
            .map(|(s, mut n)| {
                n.mark = id;
                (s, Arc::new(n))
            })
            .collect()
    }
}

/// Replaces the targets under `link` with the job's pieces. Returns the
/// siblings `link` pushes up and whether it became empty; `None` aborts.
fn install_rec(
    link: &mut Link,
    depth: usize,
    height: usize,
    cx: &mut Install,
) -> Option<(Vec<(u64, Link)>, bool)> {
    if depth + 1 == height {
        // The root is the only leaf.
        if cx.targets.len() != 1 || !Arc::ptr_eq(link, &cx.targets[0]) {
            return None;
        }
        let mut pieces = cx.take_pieces();
        let Some((_, last)) = pieces.pop() else {
            return Some((Vec::new(), true));
        };
        *link = last;
        return Some((pieces, false));
    }
    let node = Arc::make_mut(link);
    let mark = node.mark;
    let Body::Internal(inner) = &mut node.body else {
        return None;
    };
    let pos = inner.route_pos(cx.anchor);
    let extras = if depth + 2 == height {
        let mut at = vec![pos];
        for _ in 1..cx.targets.len() {
            let q = inner.next_after(inner.sep(*at.last().unwrap()))?;
            at.push(q);
        }
        if at
            .iter()
            .zip(&cx.targets)
            .any(|(&q, t)| !Arc::ptr_eq(inner.child(q), t))
        {
            return None;
        }
        let seps: Vec<u64> = at.iter().map(|&q| inner.sep(q)).collect();
        let mut pieces = cx.take_pieces();
        for &s in &seps[..seps.len() - 1] {
            inner.remove_sep(s).ok()?;
        }
        let last = inner.find_sep(*seps.last().unwrap())?;
        match pieces.pop() {
            Some((_, piece)) => *inner.child_mut(last) = piece,
            None => {
                inner.remove_at(last);
            }
        }
        pieces
    } else {
        let (extras, empty) = install_rec(inner.child_mut(pos), depth + 1, height, cx)?;
        if empty {
            inner.remove_at(pos);
        }
        extras
    };
    if !extras.is_empty() && mark != cx.id {
        cx.overruns += 1;
    }
    let up = absorb(inner, mark, extras, cx.fanout, cx.log_cap);
    Some((up, inner.is_empty()))
}

/// Adds `extras` as children of `inner`. When they do not fit, the node's
/// children are redistributed over several nodes; all but the last are
/// returned for the parent.
fn absorb(
    inner: &mut InternalNode<Link>,
    mark: u64,
    extras: Vec<(u64, Link)>,
    fanout: usize,
    log_cap: usize,
) -> Vec<(u64, Link)> {
    if extras.is_empty() {
        return extras;
    }
    if inner.len() + extras.len() <= fanout {
        for (s, c) in extras {
            inner.insert_or_remap(s, c);
        }
        return Vec::new();
    }
    let mut items = inner.take_children();
    items.extend(extras);
    items.sort_unstable_by_key(|e| e.0);
    let sizes = pack_sizes(items.len(), fanout);
    let mut it = items.into_iter();
    let mut up = Vec::with_capacity(sizes.len() - 1);
    for (j, &n) in sizes.iter().enumerate() {
        let part: Vec<(u64, Link)> = it.by_ref().take(n).collect();
        if j + 1 == sizes.len() {
            *inner = InternalNode::build(part, fanout, log_cap);
        } else {
            let sep = part.last().expect("non-empty chunk").0;
            up.push((
                sep,
                Node::link(
                    mark,
                    Body::Internal(InternalNode::build(part, fanout, log_cap)),
                ),
            ));
        }
    }
    up
}

/// Packs children into near-equal internal nodes.
fn chunk(items: Vec<(u64, Link)>, mark: u64, fanout: usize, log_cap: usize) -> Vec<(u64, Link)> {
    let mut it = items.into_iter();
    pack_sizes(it.len(), fanout)
        .into_iter()
        .map(|n| {
            let part: Vec<(u64, Link)> = it.by_ref().take(n).collect();
            let sep = part.last().expect("non-empty chunk").0;
            (
                sep,
                Node::link(
                    mark,
                    Body::Internal(InternalNode::build(part, fanout, log_cap)),
                ),
            )
        })
        .collect()
}
