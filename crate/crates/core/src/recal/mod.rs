//! Recalibration: deciding when leaves are rebuilt and running the rebuilds
//! off the update path.
//!
//! A job freezes a small subtree (its marked nodes), computes replacement
//! leaves from the frozen leaves, installs them and then replays the updates
//! that arrived for the frozen subtree in the meantime.

mod cost;
mod job;
mod mls;
pub(crate) mod partition;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering::Relaxed};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam_channel::{Receiver, Sender};
use rustc_hash::FxHashSet;

pub use cost::{should_retrain, update_cost_estimates, CostModel, Observation, Trigger};
pub(crate) use job::{JobOutcome, JobWork};
pub use mls::MlsLog;

use crate::params::{CostModelParams, ExecMode, IndexParams};
use crate::plm::LinearModel;
use crate::tree::Node;

/// What a job does to its source leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobKind {
    /// Re-segment one leaf (drains a model leaf's buffer).
    Rebuild,
    /// Turn a shrunken model leaf into legacy leaves.
    Convert,
    /// Fold a legacy leaf into the model leaf on its left.
    ForwardMerge,
    /// Fold a run of adjacent legacy leaves into one model leaf.
    BackwardMerge,
}

impl JobKind {
    pub const ALL: [JobKind; 4] = [
        JobKind::Rebuild,
        JobKind::Convert,
        JobKind::ForwardMerge,
        JobKind::BackwardMerge,
    ];

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// A queued job. `anchor` is a key routed to the first source leaf, `leaf`
/// that leaf's address at enqueue time and `span` the number of sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Request {
    pub kind: JobKind,
    pub anchor: u64,
    pub leaf: usize,
    pub span: usize,
}

/// Do two adjacent key runs look like one line? `a` maps keys of the left
/// run to ranks `0..a_len`; the right run holds `b_len` keys from `b_first`
/// to `b_last` and has its own fit `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn similar(
    a: &LinearModel,
    a_len: usize,
    b: &LinearModel,
    b_first: u64,
    b_last: u64,
    b_len: usize,
    epsilon: usize,
    cm: &CostModelParams,
) -> bool {
    let (sa, sb) = (a.slope, b.slope);
    let scale = sa.abs().max(sb.abs());
    if scale > 0.0 && (sa - sb).abs() / scale > cm.slope_similarity {
        return false;
    }
    let tol = cm.rank_deviation_eps * epsilon as f64;
    let first = (a.predict_raw(b_first) - a_len as f64).abs();
    let last = (a.predict_raw(b_last) - (a_len + b_len.saturating_sub(1)) as f64).abs();
    first <= tol && last <= tol
}

/// Where the active job is.
#[derive(Debug)]
pub(crate) enum JobState {
    /// Being computed in steps on the foreground.
    Computing(Box<JobWork>),
    /// Handed to the worker thread.
    Remote,
    /// Installed; draining the log.
    Replaying,
}

#[derive(Debug)]
pub(crate) struct ActiveJob {
    pub id: u64,
    pub kind: JobKind,
    pub anchor: u64,
    pub targets: Vec<Arc<Node>>,
    pub state: JobState,
    pub log: MlsLog,
    pub work_ns: f64,
}

pub(crate) struct Done {
    pub id: u64,
    pub outcome: JobOutcome,
    pub ns: f64,
}

/// Background thread computing jobs one at a time.
pub(crate) struct Worker {
    tx: Option<Sender<(u64, JobWork)>>,
    rx: Receiver<Done>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    pub fn spawn() -> Self {
        let (tx, jobs) = crossbeam_channel::unbounded::<(u64, JobWork)>();
        let (done, rx) = crossbeam_channel::unbounded();
        let handle = std::thread::Builder::new()
            .name("hire-recal".into())
            .spawn(move || {
                for (id, work) in jobs {
                    let t = Instant::now();
                    let outcome = work.run();
                    let ns = t.elapsed().as_nanos() as f64;
                    if done.send(Done { id, outcome, ns }).is_err() {
                        return;
                    }
                }
            })
            .expect("spawn recalibration worker");
        Worker {
            tx: Some(tx),
            rx,
            handle: Some(handle),
        }
    }

    pub fn submit(&self, id: u64, work: JobWork) {
        self.tx
            .as_ref()
            .expect("worker is running")
            .send((id, work))
            .expect("worker thread exited");
    }

    pub fn try_take(&self) -> Option<Done> {
        self.rx.try_recv().ok()
    }

    pub fn wait(&self) -> Done {
        self.rx.recv().expect("worker thread exited")
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.tx = None;
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl std::fmt::Debug for Worker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Worker")
    }
}

/// Job queue, active job and cost model of one index.
#[derive(Debug)]
pub(crate) struct Engine {
    pub mode: ExecMode,
    pub next_id: u64,
    pub pending: VecDeque<Request>,
    queued: FxHashSet<usize>,
    /// Requests raised by readers (active trigger).
    pub hot_tx: Sender<Request>,
    hot_rx: Receiver<Request>,
    pub active: Option<ActiveJob>,
    pub worker: Option<Worker>,
    pub cost: Mutex<CostModel>,
    q_th: AtomicU64,
    b_th: AtomicUsize,
}

impl Engine {
    pub fn new(p: &IndexParams) -> Self {
        let mode = p.effective_mode();
        let (hot_tx, hot_rx) = crossbeam_channel::unbounded();
        let cost = CostModel::new(&p.cost);
        let e = Engine {
            mode,
            next_id: 1,
            pending: VecDeque::new(),
            queued: FxHashSet::default(),
            hot_tx,
            hot_rx,
            active: None,
            worker: (mode == ExecMode::Threaded).then(Worker::spawn),
            q_th: AtomicU64::new(0),
            b_th: AtomicUsize::new(0),
            cost: Mutex::new(cost),
        };
        e.refresh();
        e
    }

    /// Publishes the thresholds for lock-free reads.
    pub fn refresh(&self) {
        let cm = self.cost.lock().unwrap();
        self.q_th.store(cm.q_th.to_bits(), Relaxed);
        self.b_th.store(cm.b_th, Relaxed);
    }

    pub fn thresholds(&self) -> (f64, usize) {
        (
            f64::from_bits(self.q_th.load(Relaxed)),
            self.b_th.load(Relaxed),
        )
    }

    pub fn observe(&self, obs: Observation) {
        if let Ok(mut cm) = self.cost.try_lock() {
            update_cost_estimates(&mut cm, obs);
            self.q_th.store(cm.q_th.to_bits(), Relaxed);
        }
    }

    /// Frozen-node marker of the active job, or 0.
    pub fn active_id(&self) -> u64 {
        self.active.as_ref().map_or(0, |j| j.id)
    }

    /// The id whose marks freeze nodes: none once the job is replaying.
    pub fn freezing_id(&self) -> u64 {
        match &self.active {
            Some(j) if !matches!(j.state, JobState::Replaying) => j.id,
            _ => 0,
        }
    }

    /// Queues `r` unless a request for the same leaf is already waiting.
    pub fn enqueue(&mut self, r: Request) {
        if self.queued.insert(r.leaf) {
            self.pending.push_back(r);
        }
    }

    pub fn next_request(&mut self) -> Option<Request> {
        let r = self.pending.pop_front()?;
        self.queued.remove(&r.leaf);
        Some(r)
    }

    /// Moves reader-raised requests into the queue; returns how many.
    pub fn drain_hot(&mut self) -> u64 {
        let mut n = 0;
        while let Ok(r) = self.hot_rx.try_recv() {
            self.enqueue(r);
            n += 1;
        }
        n
    }

    pub fn idle(&self) -> bool {
        self.active.is_none() && self.pending.is_empty() && self.hot_rx.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_of_one_line_split_in_two() {
        let cm = CostModelParams::for_tau(256);
        // Keys 10 apart; left run ranks 0..100, right run continues.
        let a = LinearModel::with_origin(0.1, 0.0, 0);
        let b = LinearModel::with_origin(0.1, 0.0, 1000);
        assert!(similar(&a, 100, &b, 1000, 1990, 100, 4, &cm));
        // A jump of 200 keys shifts the right run by 20 ranks.
        assert!(!similar(&a, 100, &b, 1200, 2190, 100, 4, &cm));
        let steep = LinearModel::with_origin(0.2, 0.0, 1000);
        assert!(!similar(&a, 100, &steep, 1000, 1495, 100, 4, &cm));
    }

    #[test]
    fn enqueue_dedupes_by_leaf() {
        let mut p = IndexParams::with_fanout(16);
        p.exec_mode = ExecMode::Stepped;
        let mut e = Engine::new(&p);
        let r = Request {
            kind: JobKind::Rebuild,
            anchor: 5,
            leaf: 42,
            span: 1,
        };
        e.enqueue(r);
        e.enqueue(r);
        assert_eq!(e.pending.len(), 1);
        assert_eq!(e.next_request(), Some(r));
        e.enqueue(r);
        assert_eq!(e.pending.len(), 1);
    }
}
