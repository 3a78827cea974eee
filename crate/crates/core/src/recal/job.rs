use std::sync::Arc;

use super::partition::{pack_sizes, single_fit, Collect, Seg, Segmenter, Shape};
use super::JobKind;
use crate::key::{masked, Entry};
use crate::leaf::{LeafBuilder, LegacyLeaf};
use crate::tree::{Body, Node};

/// Replacement leaves, in key order, each with its largest key.
pub(crate) type Pieces = Vec<(u64, Node)>;

#[derive(Debug)]
pub(crate) enum JobOutcome {
    Pieces(Pieces),
    Abort,
}

#[derive(Debug)]
enum Phase {
    Gather,
    Partition,
    Build,
    Done,
}

/// The off-path part of a recalibration job: reads the frozen source
/// leaves and produces their replacements. It can run to completion in one
/// call or be advanced in bounded steps.
#[derive(Debug)]
pub(crate) struct JobWork {
    kind: JobKind,
    shape: Shape,
    sources: Vec<Arc<Node>>,
    phase: Phase,
    entries: Vec<Entry>,
    // Gather cursor: source index, data position, sorted buffer and its position.
    src: usize,
    di: usize,
    buf: Option<Vec<Entry>>,
    bi: usize,
    seg: Segmenter,
    segs: Collect,
    built: usize,
    // Progress inside the segment being built.
    leaf: Option<LeafBuilder>,
    pack: Option<(Vec<usize>, usize, usize)>,
    pieces: Pieces,
    abort: bool,
}

impl JobWork {
    pub fn new(kind: JobKind, shape: Shape, sources: Vec<Arc<Node>>) -> Self {
        let slots = sources
            .iter()
            .map(|n| match &n.body {
                Body::Legacy(l) => l.keys().len(),
                Body::Model(m) => m.data_keys().len() + m.buffer().len(),
                Body::Internal(_) => 0,
            })
            .sum();
        JobWork {
            kind,
            shape,
            sources,
            phase: Phase::Gather,
            entries: Vec::with_capacity(slots),
            src: 0,
            di: 0,
            buf: None,
            bi: 0,
            seg: Segmenter::new(shape),
            segs: Collect::default(),
            built: 0,
            leaf: None,
            pack: None,
            pieces: Vec::new(),
            abort: false,
        }
    }

    /// Advances by roughly `budget` entries of work. Returns the outcome
    /// once the job is finished.
    pub fn step(&mut self, budget: usize) -> Option<JobOutcome> {
        let mut left = budget.max(1);
        while left > 0 {
            match self.phase {
                Phase::Gather => {
                    left = self.gather(left);
                    if self.src == self.sources.len() {
                        self.sources.clear();
                        self.phase = Phase::Partition;
                    }
                }
                Phase::Partition => {
                    if self.partition(left) {
                        self.phase = if self.abort {
                            Phase::Done
                        } else {
                            Phase::Build
                        };
                    }
                    // The segmenter consumes the whole budget unless it finishes.
                    left = 0;
                }
                Phase::Build => {
                    left = self.build(left);
                    if self.built == self.segs.segs.len() {
                        self.phase = Phase::Done;
                    }
                }
                Phase::Done => break,
            }
        }
        match self.phase {
            Phase::Done if self.abort => Some(JobOutcome::Abort),
            Phase::Done => Some(JobOutcome::Pieces(std::mem::take(&mut self.pieces))),
            _ => None,
        }
    }

    pub fn run(mut self) -> JobOutcome {
        loop {
            if let Some(out) = self.step(usize::MAX) {
                return out;
            }
        }
    }

    /// Sort-merges the live entries of the sources into `entries`.
    fn gather(&mut self, mut left: usize) -> usize {
        while left > 0 && self.src < self.sources.len() {
            let node = Arc::clone(&self.sources[self.src]);
            let finished = match &node.body {
                Body::Legacy(l) => {
                    let keys = l.keys();
                    let end = (self.di + left).min(keys.len());
                    let vals = &l.vals()[self.di..end];
                    self.entries.extend(
                        keys[self.di..end]
                            .iter()
                            .zip(vals)
                            .map(|(&k, &v)| Entry::new(k, v)),
                    );
                    left -= end - self.di;
                    self.di = end;
                    end == keys.len()
                }
                Body::Model(m) => {
                    let buf = self.buf.get_or_insert_with(|| {
                        let mut b = m.buffer().to_vec();
                        b.sort_unstable_by_key(|e| e.key);
                        b
                    });
                    let (keys, vals) = (m.data_keys(), m.data_vals());
                    while left > 0 && (self.di < keys.len() || self.bi < buf.len()) {
                        let take_data = self.di < keys.len()
                            && (self.bi == buf.len()
                                || (keys[self.di] & !crate::MASK_BIT) < buf[self.bi].key);
                        if take_data {
                            if !masked(keys[self.di]) {
                                self.entries.push(Entry::new(keys[self.di], vals[self.di]));
                            }
                            self.di += 1;
                        } else {
                            self.entries.push(buf[self.bi]);
                            self.bi += 1;
                        }
                        left -= 1;
                    }
                    self.di == keys.len() && self.bi == buf.len()
                }
                Body::Internal(_) => unreachable!("jobs only read leaves"),
            };
            if finished {
                self.src += 1;
                self.di = 0;
                self.bi = 0;
                self.buf = None;
            }
        }
        left
    }

    fn partition(&mut self, budget: usize) -> bool {
        let n = self.entries.len();
        match self.kind {
            JobKind::Rebuild => self.seg.run(&self.entries, budget, &mut self.segs),
            JobKind::Convert => {
                if n > 0 {
                    self.segs.segs.push(Seg::Legacy { start: 0, end: n });
                }
                true
            }
            JobKind::ForwardMerge | JobKind::BackwardMerge => {
                let fit = (n >= self.shape.alpha && n <= self.shape.beta)
                    .then(|| single_fit(&self.entries, self.shape.epsilon))
                    .flatten();
                match fit {
                    Some(model) => self.segs.segs.push(Seg::Model {
                        start: 0,
                        end: n,
                        model,
                    }),
                    None => self.abort = true,
                }
                true
            }
        }
    }

    /// Turns segments into leaves, at most about `left` entries per call.
    fn build(&mut self, mut left: usize) -> usize {
        while left > 0 && self.built < self.segs.segs.len() {
            match self.segs.segs[self.built].clone() {
                Seg::Model { start, end, model } => {
                    let b = self
                        .leaf
                        .get_or_insert_with(|| LeafBuilder::new(model, end - start));
                    let from = start + b.fed();
                    let to = end.min(from.saturating_add(left));
                    b.feed(&self.entries[from..to]);
                    left -= to - from;
                    if to < end {
                        return left;
                    }
                    let leaf = self.leaf.take().expect("builder").finish();
                    self.push(self.entries[end - 1].key, Body::Model(leaf));
                }
                Seg::Legacy { start, end } => {
                    let fanout = self.shape.fanout;
                    let (sizes, next, at) = self
                        .pack
                        .get_or_insert_with(|| (pack_sizes(end - start, fanout), 0, start));
                    let mut done = Vec::new();
                    while left > 0 && *next < sizes.len() {
                        let size = sizes[*next];
                        let part = &self.entries[*at..*at + size];
                        done.push((
                            part[size - 1].key,
                            Body::Legacy(LegacyLeaf::from_entries(part)),
                        ));
                        *at += size;
                        *next += 1;
                        left = left.saturating_sub(size);
                    }
                    let finished = *next == sizes.len();
                    for (sep, body) in done {
                        self.push(sep, body);
                    }
                    if !finished {
                        return left;
                    }
                    self.pack = None;
                }
            }
            self.built += 1;
        }
        left
    }

    fn push(&mut self, sep: u64, body: Body) {
        self.pieces.push((sep, Node { mark: 0, body }));
    }
}
