//! Splitting a sorted run of entries into leaves.
//!
//! The greedy rule is shared by retraining and bulk loading: grow a
//! bounded-error segment until the next point no longer fits or the segment
//! reaches `beta`; segments shorter than `alpha` are collected into runs that
//! become legacy leaves.

use crate::key::Entry;
use crate::params::IndexParams;
use crate::plm::{ConeFitter, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub epsilon: usize,
    pub alpha: usize,
    pub beta: usize,
    pub fanout: usize,
    pub legacy: bool,
    /// How far a model segment may be shortened to please the sink.
    pub slack: usize,
}

impl Shape {
    pub fn of(p: &IndexParams) -> Self {
        Shape {
            epsilon: p.epsilon,
            alpha: p.alpha,
            beta: p.beta,
            fanout: p.fanout,
            legacy: p.legacy_enabled(),
            slack: 0,
        }
    }
}

/// Receives segments in key order.
pub(crate) trait Sink {
    /// Picks the end of a model segment starting at `start`, in `[lo, hi]`.
    fn choose_end(&mut self, _entries: &[Entry], _start: usize, _lo: usize, hi: usize) -> usize {
        hi
    }
    fn model(&mut self, entries: &[Entry], start: usize, end: usize, model: LinearModel);
    fn legacy_run(&mut self, entries: &[Entry], start: usize, end: usize);
}

/// Resumable greedy segmentation.
#[derive(Debug, Clone)]
pub(crate) struct Segmenter {
    shape: Shape,
    pos: usize,
    seg_start: usize,
    cone: ConeFitter,
    run_start: Option<usize>,
    done: bool,
}

impl Segmenter {
    pub fn new(shape: Shape) -> Self {
        Segmenter {
            shape,
            pos: 0,
            seg_start: 0,
            cone: ConeFitter::new(shape.epsilon),
            run_start: None,
            done: false,
        }
    }

    /// Consumes up to `budget` points; returns true once every segment has
    /// been handed to the sink.
    pub fn run(&mut self, entries: &[Entry], mut budget: usize, sink: &mut dyn Sink) -> bool {
        if self.done {
            return true;
        }
        let n = entries.len();
        while self.pos < n && budget > 0 {
            let rank = self.pos - self.seg_start;
            let fits = rank < self.shape.beta
                && self
                    .cone
                    .add_point(entries[self.pos].key, rank)
                    .expect("entries are strictly increasing");
            if !fits {
                self.close(entries, self.pos, sink);
                continue;
            }
            self.pos += 1;
            budget -= 1;
        }
        if self.pos < n {
            return false;
        }
        if self.seg_start < n {
            self.close(entries, n, sink);
        }
        self.flush(entries, n, sink);
        self.done = true;
        true
    }

    fn flush(&mut self, entries: &[Entry], end: usize, sink: &mut dyn Sink) {
        if let Some(s) = self.run_start.take() {
            if s < end {
                sink.legacy_run(entries, s, end);
            }
        }
    }

    fn close(&mut self, entries: &[Entry], end: usize, sink: &mut dyn Sink) {
        let s = self.seg_start;
        let len = end - s;
        let mut stop = end;
        if len >= self.shape.alpha || !self.shape.legacy {
            self.flush(entries, s, sink);
            if end < entries.len() && self.shape.slack > 0 {
                let lo = end
                    .saturating_sub(self.shape.slack)
                    .max(s + self.shape.alpha.min(len));
                stop = sink.choose_end(entries, s, lo, end).clamp(lo, end);
            }
            sink.model(entries, s, stop, self.cone.current_model());
        } else {
            self.run_start.get_or_insert(s);
        }
        self.seg_start = stop;
        self.pos = stop;
        self.cone = ConeFitter::new(self.shape.epsilon);
    }
}

/// Near-equal chunk sizes for packing `len` entries into leaves of at most
/// `cap` entries.
pub(crate) fn pack_sizes(len: usize, cap: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let c = len.div_ceil(cap);
    let (base, rem) = (len / c, len % c);
    (0..c).map(|i| base + usize::from(i < rem)).collect()
}

/// Fits every entry with one segment, or `None`.
pub(crate) fn single_fit(entries: &[Entry], epsilon: usize) -> Option<LinearModel> {
    let mut cone = ConeFitter::new(epsilon);
    for (i, e) in entries.iter().enumerate() {
        if !cone.add_point(e.key, i).ok()? {
            return None;
        }
    }
    Some(cone.current_model())
}

/// Records segments as index ranges.
#[derive(Debug, Default)]
pub(crate) struct Collect {
    pub segs: Vec<Seg>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Seg {
    Model {
        start: usize,
        end: usize,
        model: LinearModel,
    },
    Legacy {
        start: usize,
        end: usize,
    },
}

impl Sink for Collect {
    fn model(&mut self, _: &[Entry], start: usize, end: usize, model: LinearModel) {
        self.segs.push(Seg::Model { start, end, model });
    }

    fn legacy_run(&mut self, _: &[Entry], start: usize, end: usize) {
        self.segs.push(Seg::Legacy { start, end });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(eps: usize, alpha: usize, beta: usize) -> Shape {
        Shape {
            epsilon: eps,
            alpha,
            beta,
            fanout: 8,
            legacy: true,
            slack: 0,
        }
    }

    fn segs(keys: &[u64], s: Shape) -> Vec<Seg> {
        let e: Vec<Entry> = keys.iter().map(|&k| Entry::new(k, 0)).collect();
        let mut c = Collect::default();
        let mut seg = Segmenter::new(s);
        while !seg.run(&e, 7, &mut c) {}
        c.segs
    }

    fn bounds(s: &Seg) -> (usize, usize, bool) {
        match *s {
            Seg::Model { start, end, .. } => (start, end, true),
            Seg::Legacy { start, end } => (start, end, false),
        }
    }

    #[test]
    fn linear_run_splits_at_beta() {
        let keys: Vec<u64> = (0..40_000).collect();
        let got: Vec<_> = segs(&keys, shape(64, 512, 32_768))
            .iter()
            .map(bounds)
            .collect();
        assert_eq!(got, [(0, 32_768, true), (32_768, 40_000, true)]);
    }

    #[test]
    fn short_segments_become_a_legacy_run() {
        // Three short linear pieces separated by huge jumps, then a long one.
        let mut keys = Vec::new();
        let mut base = 0u64;
        for len in [100u64, 150, 50] {
            keys.extend((0..len).map(|i| base + i));
            base += 1 << 40;
        }
        keys.extend((0..600).map(|i| base + i));
        let got: Vec<_> = segs(&keys, shape(4, 512, 32_768))
            .iter()
            .map(bounds)
            .collect();
        assert_eq!(got, [(0, 300, false), (300, 900, true)]);
    }

    #[test]
    fn segments_cover_input_and_respect_epsilon() {
        let mut keys = Vec::new();
        let mut k = 0u64;
        for i in 0..5000u64 {
            k += 1 + (i * i) % 97;
            keys.push(k);
        }
        let s = shape(8, 64, 1000);
        let out = segs(&keys, s);
        let mut next = 0;
        for seg in &out {
            let (a, b, is_model) = bounds(seg);
            assert_eq!(a, next);
            assert!(b > a);
            next = b;
            if let Seg::Model { model, .. } = seg {
                assert!(b - a >= 64 && b - a <= 1000);
                for (r, &key) in keys[a..b].iter().enumerate() {
                    assert!(model.residual(key, r) <= 8.0);
                }
            }
            let _ = is_model;
        }
        assert_eq!(next, keys.len());
    }

    #[test]
    fn packing_arithmetic() {
        assert_eq!(pack_sizes(511, 256), [256, 255]);
        assert_eq!(pack_sizes(300, 256), [150, 150]);
        assert_eq!(pack_sizes(256, 256), [256]);
        assert!(pack_sizes(0, 256).is_empty());
    }
}
