//! Model-accelerated internal nodes.
//!
//! Children live in a fixed-capacity gap array (separator `K` and child `P`
//! per slot) placed by a linear model, plus a short append log for children
//! whose predicted slot was taken. A separator is an upper bound on the keys
//! of its child's subtree.
//!
//! Unused slots carry a masked key so that flag-cleared keys never decrease
//! along the array; this keeps lower-bound searches valid over the whole
//! array, gaps included.

use crate::error::{HireError, Result};
use crate::key::{cleared, masked, MASK_BIT};
use crate::plm::{fit_least_squares, LinearModel};

/// Where a child sits inside a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Slot(usize),
    Log(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InternalInsert {
    /// Written into a free slot of the gap array.
    Placed,
    /// Appended to the log.
    Logged,
    /// The node overflowed and was split; the lower half must be linked in
    /// front of this node with separator `sep`.
    Split { sep: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InternalDelete {
    Ok,
    Underflow,
}

#[derive(Debug, Clone)]
pub struct InternalNode<C> {
    keys: Box<[u64]>,
    kids: Box<[Option<C>]>,
    model: LinearModel,
    log: Vec<(u64, C)>,
    kp_live: usize,
    log_cap: usize,
}

impl<C> InternalNode<C> {
    /// Builds a node over ascending `(separator, child)` pairs and places
    /// them with a freshly trained model.
    pub fn build(items: Vec<(u64, C)>, fanout: usize, log_cap: usize) -> Self {
        assert!(
            items.len() <= fanout,
            "{} children exceed fanout {fanout}",
            items.len()
        );
        let mut node = InternalNode {
            keys: vec![MASK_BIT; fanout].into_boxed_slice(),
            kids: (0..fanout).map(|_| None).collect(),
            model: LinearModel::default(),
            log: Vec::with_capacity(log_cap),
            kp_live: 0,
            log_cap,
        };
        node.place_all(items);
        node
    }

    pub fn fanout(&self) -> usize {
        self.keys.len()
    }

    /// Live children, gap array and log together.
    pub fn len(&self) -> usize {
        self.kp_live + self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    #[inline]
    fn live(&self, i: usize) -> bool {
        self.kids[i].is_some()
    }

    /// First slot whose flag-cleared key is `>= k`, or `fanout`.
    #[inline]
    fn lower_bound(&self, k: u64) -> usize {
        let f = self.keys.len();
        if self.model.max_error >= f / 2 {
            return self.keys.iter().map(|&x| (cleared(x) < k) as usize).sum();
        }
        let p = self.model.predict(k, f);
        let below = |i: usize| cleared(self.keys[i]) < k;
        let (mut lo, mut hi);
        if below(p) {
            lo = p + 1;
            let mut step = 1;
            hi = (lo + step).min(f);
            while hi < f && below(hi - 1) {
                lo = hi;
                step *= 2;
                hi = (lo + step).min(f);
            }
        } else {
            hi = p;
            let mut step = 1;
            lo = hi.saturating_sub(step);
            while lo > 0 && !below(lo) {
                hi = lo;
                step *= 2;
                lo = hi.saturating_sub(step);
            }
        }
        lo + self.keys[lo..hi].partition_point(|&x| cleared(x) < k)
    }

    /// Smallest live slot at or after `i`.
    #[inline]
    fn next_live(&self, mut i: usize) -> Option<usize> {
        while i < self.kids.len() {
            if self.live(i) {
                return Some(i);
            }
            i += 1;
        }
        None
    }

    fn prev_live(&self, i: usize) -> Option<usize> {
        (0..i).rev().find(|&j| self.live(j))
    }

    fn last_slot(&self) -> Option<usize> {
        self.prev_live(self.kids.len())
    }

    /// The child whose separator is the tightest upper bound of `k`, or the
    /// rightmost child when every separator is below `k`.
    #[inline]
    pub fn route_pos(&self, k: u64) -> Pos {
        debug_assert!(!self.is_empty(), "routing through an empty node");
        let kp = self.next_live(self.lower_bound(k));
        // Separators stay below 2^63, so u64::MAX means "none yet".
        let mut best = kp.map_or(u64::MAX, |i| self.keys[i]);
        let mut best_log = usize::MAX;
        for (j, &(s, _)) in self.log.iter().enumerate() {
            let c = if s >= k { s } else { u64::MAX };
            let better = c < best;
            best = if better { c } else { best };
            best_log = if better { j } else { best_log };
        }
        if best_log != usize::MAX {
            Pos::Log(best_log)
        } else if let Some(i) = kp {
            Pos::Slot(i)
        } else {
            self.last_pos().expect("node has children")
        }
    }

    pub fn route(&self, k: u64) -> &C {
        self.child(self.route_pos(k))
    }

    pub fn child(&self, p: Pos) -> &C {
        match p {
            Pos::Slot(i) => self.kids[i].as_ref().expect("live slot"),
            Pos::Log(j) => &self.log[j].1,
        }
    }

    pub fn child_mut(&mut self, p: Pos) -> &mut C {
        match p {
            Pos::Slot(i) => self.kids[i].as_mut().expect("live slot"),
            Pos::Log(j) => &mut self.log[j].1,
        }
    }

    /// Mutable access to two distinct children.
    pub fn pair_mut(&mut self, a: Pos, b: Pos) -> (&mut C, &mut C) {
        match (a, b) {
            (Pos::Slot(i), Pos::Slot(j)) => {
                let (x, y) = two_mut(&mut self.kids, i, j);
                (
                    x.as_mut().expect("live slot"),
                    y.as_mut().expect("live slot"),
                )
            }
            (Pos::Log(i), Pos::Log(j)) => {
                let (x, y) = two_mut(&mut self.log, i, j);
                (&mut x.1, &mut y.1)
            }
            (Pos::Slot(i), Pos::Log(j)) => (
                self.kids[i].as_mut().expect("live slot"),
                &mut self.log[j].1,
            ),
            (Pos::Log(i), Pos::Slot(j)) => (
                &mut self.log[i].1,
                self.kids[j].as_mut().expect("live slot"),
            ),
        }
    }

    pub fn sep(&self, p: Pos) -> u64 {
        match p {
            Pos::Slot(i) => self.keys[i],
            Pos::Log(j) => self.log[j].0,
        }
    }

    /// Position of the child with the largest separator.
    pub fn last_pos(&self) -> Option<Pos> {
        let mut best = self.last_slot().map(|i| (self.keys[i], Pos::Slot(i)));
        for (j, &(s, _)) in self.log.iter().enumerate() {
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, Pos::Log(j)));
            }
        }
        best.map(|(_, p)| p)
    }

    pub fn first_pos(&self) -> Option<Pos> {
        let mut best = self.next_live(0).map(|i| (self.keys[i], Pos::Slot(i)));
        for (j, &(s, _)) in self.log.iter().enumerate() {
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, Pos::Log(j)));
            }
        }
        best.map(|(_, p)| p)
    }

    /// The child following the one with separator `sep`.
    pub fn next_after(&self, sep: u64) -> Option<Pos> {
        if sep == u64::MAX {
            return None;
        }
        let kp = self.next_live(self.lower_bound(sep + 1));
        let mut best = kp.map(|i| (self.keys[i], Pos::Slot(i)));
        for (j, &(s, _)) in self.log.iter().enumerate() {
            if s > sep && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, Pos::Log(j)));
            }
        }
        best.map(|(_, p)| p)
    }

    /// The child preceding the one with separator `sep`.
    pub fn prev_before(&self, sep: u64) -> Option<Pos> {
        let kp = self.prev_live(self.lower_bound(sep));
        let mut best = kp.map(|i| (self.keys[i], Pos::Slot(i)));
        for (j, &(s, _)) in self.log.iter().enumerate() {
            if s < sep && best.is_none_or(|(b, _)| s > b) {
                best = Some((s, Pos::Log(j)));
            }
        }
        best.map(|(_, p)| p)
    }

    /// Position of the child with exactly this separator.
    pub fn find_sep(&self, sep: u64) -> Option<Pos> {
        if let Some(i) = self.next_live(self.lower_bound(sep)) {
            if self.keys[i] == sep {
                return Some(Pos::Slot(i));
            }
        }
        self.log.iter().position(|&(s, _)| s == sep).map(Pos::Log)
    }

    /// Positions of all children in separator order.
    pub fn positions(&self) -> Vec<Pos> {
        let mut slots = (0..self.kids.len()).filter(|&i| self.live(i)).peekable();
        let mut logged: Vec<usize> = (0..self.log.len()).collect();
        logged.sort_unstable_by_key(|&j| self.log[j].0);
        let mut logged = logged.into_iter().peekable();
        let mut out = Vec::with_capacity(self.len());
        loop {
            match (slots.peek(), logged.peek()) {
                (Some(&i), Some(&j)) if self.keys[i] < self.log[j].0 => {
                    out.push(Pos::Slot(i));
                    slots.next();
                }
                (_, Some(&j)) => {
                    out.push(Pos::Log(j));
                    logged.next();
                }
                (Some(&i), None) => {
                    out.push(Pos::Slot(i));
                    slots.next();
                }
                (None, None) => return out,
            }
        }
    }

    /// `(separator, child)` pairs in separator order.
    pub fn children(&self) -> Vec<(u64, &C)> {
        self.positions()
            .into_iter()
            .map(|p| (self.sep(p), self.child(p)))
            .collect()
    }

    /// Removes and returns every child in separator order.
    pub fn take_children(&mut self) -> Vec<(u64, C)> {
        let mut slots: Vec<(u64, C)> = Vec::with_capacity(self.len());
        for i in 0..self.kids.len() {
            if let Some(c) = self.kids[i].take() {
                slots.push((self.keys[i], c));
            }
            self.keys[i] = MASK_BIT;
        }
        self.kp_live = 0;
        let mut logged = std::mem::take(&mut self.log);
        logged.sort_unstable_by_key(|e| e.0);
        merge_sorted(slots, logged)
    }

    /// Tries the predicted slot for `sep`: it must be free and sit strictly
    /// between the neighbouring live separators.
    fn try_place(&mut self, sep: u64, child: C) -> std::result::Result<(), C> {
        let f = self.keys.len();
        let p = self.model.predict(sep, f);
        if self.live(p) {
            return Err(child);
        }
        let prev = self.prev_live(p);
        let next = self.next_live(p + 1);
        if prev.is_some_and(|i| self.keys[i] >= sep) || next.is_some_and(|i| self.keys[i] <= sep) {
            return Err(child);
        }
        self.keys[p] = sep;
        self.kids[p] = Some(child);
        self.kp_live += 1;
        self.fix_fills(p, prev, next);
        Ok(())
    }

    /// Restores the non-decreasing order of gap keys around live slot `p`.
    fn fix_fills(&mut self, p: usize, prev: Option<usize>, next: Option<usize>) {
        let x = self.keys[p];
        for i in prev.map_or(0, |i| i + 1)..p {
            self.keys[i] = cleared(self.keys[i]).min(x) | MASK_BIT;
        }
        for i in p + 1..next.unwrap_or(self.keys.len()) {
            self.keys[i] = cleared(self.keys[i]).max(x) | MASK_BIT;
        }
    }

    /// Inserts a pushed-up child. Fails with `LogFull` when the predicted
    /// slot is taken and the log has no room, unless the node overflows
    /// anyway, in which case it splits.
    pub fn insert(&mut self, sep: u64, child: C) -> Result<(InternalInsert, Option<Self>)> {
        debug_assert!(!masked(sep));
        debug_assert!(self.find_sep(sep).is_none(), "duplicate separator {sep}");
        let outcome = match self.try_place(sep, child) {
            Ok(()) => InternalInsert::Placed,
            Err(child) => {
                if self.log.len() >= self.log_cap && self.len() < self.fanout() {
                    return Err(HireError::LogFull {
                        capacity: self.log_cap,
                    });
                }
                self.log.push((sep, child));
                InternalInsert::Logged
            }
        };
        if self.len() > self.fanout() {
            let (left, sep) = self.split();
            return Ok((InternalInsert::Split { sep }, Some(left)));
        }
        Ok((outcome, None))
    }

    /// Like [`insert`](Self::insert), but a full log is absorbed by an
    /// immediate retrain-and-remap instead of an error.
    pub fn insert_or_remap(&mut self, sep: u64, child: C) -> (InternalInsert, Option<Self>) {
        if self.log.len() >= self.log_cap {
            self.retrain_and_remap();
        }
        self.insert(sep, child).expect("log has room after remap")
    }

    /// Splits at the midpoint of the live children. This node keeps the
    /// upper half; the lower half is returned with its separator.
    pub fn split(&mut self) -> (Self, u64) {
        let mut items = self.take_children();
        let right = items.split_off(items.len() / 2);
        let sep = items.last().expect("split of a node with children").0;
        let left = InternalNode::build(items, self.fanout(), self.log_cap);
        self.place_all(right);
        (left, sep)
    }

    /// Removes the child at `p`. Gap-array children leave a tombstone.
    pub fn remove_at(&mut self, p: Pos) -> (C, InternalDelete) {
        let child = match p {
            Pos::Slot(i) => {
                self.kp_live -= 1;
                self.keys[i] |= MASK_BIT;
                self.kids[i].take().expect("live slot")
            }
            Pos::Log(j) => self.log.remove(j).1,
        };
        let d = if self.len() < self.fanout() / 2 {
            InternalDelete::Underflow
        } else {
            InternalDelete::Ok
        };
        (child, d)
    }

    pub fn remove_sep(&mut self, sep: u64) -> Result<(C, InternalDelete)> {
        let p = self.find_sep(sep).ok_or(HireError::MissingSeparator(sep))?;
        Ok(self.remove_at(p))
    }

    /// Changes the separator of the child at `p`. The new value must keep
    /// the separators strictly ordered.
    pub fn set_sep(&mut self, p: Pos, sep: u64) {
        match p {
            Pos::Log(j) => self.log[j].0 = sep,
            Pos::Slot(i) => {
                let prev = self.prev_live(i);
                let next = self.next_live(i + 1);
                debug_assert!(prev.is_none_or(|j| self.keys[j] < sep));
                debug_assert!(next.is_none_or(|j| self.keys[j] > sep));
                self.keys[i] = sep;
                self.fix_fills(i, prev, next);
            }
        }
    }

    /// Re-fits the routing model over all children and rewrites the gap
    /// array, emptying the log.
    pub fn retrain_and_remap(&mut self) {
        let items = self.take_children();
        self.place_all(items);
    }

    fn place_all(&mut self, items: Vec<(u64, C)>) {
        debug_assert!(self.kp_live == 0 && self.log.is_empty());
        debug_assert!(items.windows(2).all(|w| w[0].0 < w[1].0));
        let f = self.keys.len();
        let n = items.len();
        assert!(n <= f);
        for k in self.keys.iter_mut() {
            *k = MASK_BIT;
        }
        if n == 0 {
            self.model = LinearModel::default();
            return;
        }
        let pts: Vec<(u64, f64)> = items
            .iter()
            .enumerate()
            .map(|(i, e)| (e.0, i as f64))
            .collect();
        let mut model = fit_least_squares(&pts).scaled(f as f64 / n as f64);
        let mut prev: Option<usize> = None;
        let mut worst = 0;
        for (i, (sep, child)) in items.into_iter().enumerate() {
            let p = model.predict(sep, f);
            let lo = prev.map_or(0, |q| q + 1);
            let hi = f - (n - i);
            let slot = p.clamp(lo, hi);
            worst = worst.max(slot.abs_diff(p));
            self.keys[slot] = sep;
            self.kids[slot] = Some(child);
            prev = Some(slot);
        }
        model.max_error = worst;
        model.epsilon = None;
        self.model = model;
        self.kp_live = n;
        let mut fill = MASK_BIT;
        for i in 0..f {
            if self.live(i) {
                fill = self.keys[i] | MASK_BIT;
            } else {
                self.keys[i] = fill;
            }
        }
    }

    pub fn memory_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.keys.len() * (8 + std::mem::size_of::<Option<C>>())
            + self.log.capacity() * std::mem::size_of::<(u64, C)>()
    }

    /// Structural problems, for the auditor.
    pub(crate) fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.log.len() > self.log_cap {
            out.push(format!(
                "log holds {} entries, capacity {}",
                self.log.len(),
                self.log_cap
            ));
        }
        if self.len() > self.fanout() {
            out.push(format!(
                "{} children exceed fanout {}",
                self.len(),
                self.fanout()
            ));
        }
        if let Some(i) = self
            .keys
            .windows(2)
            .position(|w| cleared(w[0]) > cleared(w[1]))
        {
            out.push(format!("gap array keys decrease at slot {i}"));
        }
        let mut last = None;
        for i in 0..self.keys.len() {
            if self.live(i) {
                if masked(self.keys[i]) {
                    out.push(format!("live slot {i} carries a masked separator"));
                }
                if last.is_some_and(|l| l >= self.keys[i]) {
                    out.push(format!("separator at slot {i} not above its predecessor"));
                }
                last = Some(self.keys[i]);
            }
        }
        let seps: Vec<u64> = self.positions().into_iter().map(|p| self.sep(p)).collect();
        if seps.windows(2).any(|w| w[0] >= w[1]) {
            out.push("log separator duplicates a gap-array separator".into());
        }
        if self.kp_live != (0..self.kids.len()).filter(|&i| self.live(i)).count() {
            out.push("live slot counter is stale".into());
        }
        out
    }
}

fn two_mut<T>(s: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j, "two_mut needs distinct indices");
    if i < j {
        let (l, r) = s.split_at_mut(j);
        (&mut l[i], &mut r[0])
    } else {
        let (l, r) = s.split_at_mut(i);
        (&mut r[0], &mut l[j])
    }
}

fn merge_sorted<C>(a: Vec<(u64, C)>, b: Vec<(u64, C)>) -> Vec<(u64, C)> {
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut a = a.into_iter().peekable();
    let mut b = b.into_iter().peekable();
    loop {
        let take_a = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => x.0 < y.0,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return out,
        };
        out.push(if take_a { a.next() } else { b.next() }.unwrap());
    }
}
