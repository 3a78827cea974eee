//! The index facade: routing, updates, range scans, bulk loading and
//! structural auditing.
//!
//! Nodes are reference counted. Updates copy-on-write along their descent
//! path, so a job holding its source leaves sees a stable snapshot while the
//! foreground keeps going. Nodes belonging to the active job carry its id
//! in `mark`; updates that reach such a node are diverted to the job's log.

mod audit;
mod build;
mod jobs;
mod read;
mod update;

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::sync::Arc;

pub use audit::{AuditReport, Violation};

use crate::error::{HireError, Result};
use crate::internal::InternalNode;
use crate::key::{check_live, Entry};
use crate::leaf::{LegacyLeaf, ModelLeaf};
use crate::params::IndexParams;
use crate::recal::{Engine, JobKind};

pub(crate) type Link = Arc<Node>;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    /// Id of the job that froze this node, or 0.
    pub mark: u64,
    pub body: Body,
}

#[derive(Debug, Clone)]
pub(crate) enum Body {
    Internal(InternalNode<Link>),
    Model(ModelLeaf),
    Legacy(LegacyLeaf),
}

impl Node {
    #[cfg(test)]
    pub fn new(body: Body) -> Self {
        Node { mark: 0, body }
    }

    pub fn link(mark: u64, body: Body) -> Link {
        Arc::new(Node { mark, body })
    }

    /// Largest key reachable under this node (its separator if it were a
    /// child), `None` for an empty leaf.
    pub fn upper(&self) -> Option<u64> {
        match &self.body {
            Body::Internal(i) => i.last_pos().map(|p| i.sep(p)),
            Body::Model(m) => m.max_live_key(),
            Body::Legacy(l) => l.last_key(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self.body, Body::Internal(_))
    }

    /// Live entries of a leaf.
    #[cfg(test)]
    pub fn leaf_live(&self) -> usize {
        match &self.body {
            Body::Internal(_) => 0,
            Body::Model(m) => m.live(),
            Body::Legacy(l) => l.len(),
        }
    }
}

/// Operation and recalibration counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub gets: u64,
    pub ranges: u64,
    pub inserts: u64,
    pub deletes: u64,
    /// Per [`JobKind`], in `JobKind::ALL` order.
    pub jobs_started: [u64; 4],
    pub jobs_completed: [u64; 4],
    pub jobs_aborted: [u64; 4],
    /// Requests dropped because their leaf changed before they ran.
    pub jobs_dropped: u64,
    /// Time spent computing job output, wherever it ran.
    pub job_work_ns: u64,
    pub active_triggers: u64,
    pub passive_triggers: u64,
    /// Updates diverted to a job log.
    pub diverted: u64,
    pub replayed: u64,
    pub max_log_len: usize,
    /// New children pushed into an ancestor the job had not frozen.
    pub pap_overruns: u64,
    /// Published model leaves that failed the exhaustive error check.
    pub job_violations: u64,
    /// Buffer-touching operations and the buffer entries they touched.
    pub buffer_ops: u64,
    pub buffer_touches: u64,
}

impl Metrics {
    pub fn started(&self, k: JobKind) -> u64 {
        self.jobs_started[k.index()]
    }

    pub fn completed(&self, k: JobKind) -> u64 {
        self.jobs_completed[k.index()]
    }

    pub fn aborted(&self, k: JobKind) -> u64 {
        self.jobs_aborted[k.index()]
    }
}

/// Counters bumped through `&self`.
#[derive(Debug, Default)]
struct ReadCounters {
    ops: AtomicU64,
    gets: AtomicU64,
    ranges: AtomicU64,
    buffer_ops: AtomicU64,
    buffer_touches: AtomicU64,
}

impl ReadCounters {
    fn touched(&self, n: usize) {
        if n > 0 {
            self.buffer_ops.fetch_add(1, Relaxed);
            self.buffer_touches.fetch_add(n as u64, Relaxed);
        }
    }
}

/// Shape summary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexStats {
    pub entries: usize,
    pub height: usize,
    pub internal_nodes: usize,
    pub model_leaves: usize,
    pub legacy_leaves: usize,
    pub buffered: usize,
    pub memory_bytes: usize,
}

/// The hybrid index. One thread mutates; any number may read through `&self`.
#[derive(Debug)]
pub struct HireIndex {
    params: IndexParams,
    root: Option<Link>,
    height: usize,
    len: usize,
    engine: Engine,
    metrics: Metrics,
    reads: ReadCounters,
}

impl HireIndex {
    pub fn new(params: IndexParams) -> Result<Self> {
        params.validate()?;
        Ok(HireIndex {
            engine: Engine::new(&params),
            params,
            root: None,
            height: 0,
            len: 0,
            metrics: Metrics::default(),
            reads: ReadCounters::default(),
        })
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Levels including the leaf level; 0 when empty.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn metrics(&self) -> Metrics {
        let mut m = self.metrics.clone();
        m.gets = self.reads.gets.load(Relaxed);
        m.ranges = self.reads.ranges.load(Relaxed);
        m.buffer_ops += self.reads.buffer_ops.load(Relaxed);
        m.buffer_touches += self.reads.buffer_touches.load(Relaxed);
        m
    }

    /// Whether a job is running or waiting.
    pub fn recalibrating(&self) -> bool {
        !self.engine.idle()
    }

    /// Entries waiting in the active job's log.
    pub fn pending_log_len(&self) -> usize {
        self.engine.active.as_ref().map_or(0, |j| j.log.len())
    }

    pub fn insert(&mut self, k: u64, v: u64) -> Result<()> {
        check_live(k)?;
        self.metrics.inserts += 1;
        self.apply(k, Some(v), false);
        self.after_op();
        Ok(())
    }

    /// Removes `k`; false if it was absent.
    pub fn delete(&mut self, k: u64) -> Result<bool> {
        check_live(k)?;
        self.metrics.deletes += 1;
        let hit = self.apply(k, None, false);
        self.after_op();
        Ok(hit)
    }

    pub fn get(&self, k: u64) -> Option<u64> {
        self.reads.gets.fetch_add(1, Relaxed);
        let op = self.reads.ops.fetch_add(1, Relaxed);
        if check_live(k).is_err() {
            return None;
        }
        if let Some(job) = &self.engine.active {
            if let Some(state) = job.log.get(k) {
                return state;
            }
        }
        self.lookup(k, Some(op))
    }

    /// Entries with keys in `[lo, hi]`, ascending, at most `limit` of them.
    pub fn range(&self, lo: u64, hi: u64, limit: Option<usize>) -> Result<Vec<Entry>> {
        let mut out = Vec::new();
        self.range_into(lo, hi, limit, &mut out)?;
        Ok(out)
    }

    /// Like [`HireIndex::range`], reusing `out` (cleared first).
    pub fn range_into(
        &self,
        lo: u64,
        hi: u64,
        limit: Option<usize>,
        out: &mut Vec<Entry>,
    ) -> Result<()> {
        out.clear();
        if lo > hi {
            return Err(HireError::InvertedRange { lo, hi });
        }
        self.reads.ranges.fetch_add(1, Relaxed);
        self.reads.ops.fetch_add(1, Relaxed);
        let limit = limit.unwrap_or(usize::MAX);
        if limit == 0 {
            return Ok(());
        }
        let hi = hi.min(crate::MAX_KEY);
        match &self.engine.active {
            Some(job) if !job.log.is_empty() => {
                let pending = job.log.range(lo, hi).count();
                self.scan(lo, hi, limit.saturating_add(pending), out);
                job.log.overlay(lo, hi, out);
                out.truncate(limit);
            }
            _ => self.scan(lo, hi, limit, out),
        }
        Ok(())
    }

    /// All entries, ascending.
    pub fn entries(&self) -> Vec<Entry> {
        self.range(0, crate::MAX_KEY, None).unwrap_or_default()
    }

    /// Lets a stepped job make progress without an update.
    pub fn tick(&mut self) {
        self.after_op();
    }

    pub fn stats(&self) -> IndexStats {
        let mut s = IndexStats {
            entries: self.len,
            height: self.height,
            ..Default::default()
        };
        if let Some(r) = &self.root {
            stats_rec(r, &mut s);
        }
        s
    }

    pub fn memory_bytes(&self) -> usize {
        self.stats().memory_bytes
    }
}

fn stats_rec(n: &Node, s: &mut IndexStats) {
    s.memory_bytes += std::mem::size_of::<Node>();
    match &n.body {
        Body::Internal(i) => {
            s.internal_nodes += 1;
            s.memory_bytes += i.memory_bytes();
            for (_, c) in i.children() {
                stats_rec(c, s);
            }
        }
        Body::Model(m) => {
            s.model_leaves += 1;
            s.buffered += m.buffer_len();
            s.memory_bytes += m.memory_bytes();
        }
        Body::Legacy(l) => {
            s.legacy_leaves += 1;
            s.memory_bytes += l.memory_bytes();
        }
    }
}
