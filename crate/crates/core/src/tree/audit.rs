use std::fmt;

use rustc_hash::FxHashSet;

use super::update::addr;
use super::{Body, HireIndex, Node};

/// One broken invariant, located by the child positions from the root
/// (`root/3/17` is the 18th child of the root's 4th child).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
    pub leaves: usize,
    pub entries: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl HireIndex {
    /// Checks every structural invariant. Meant for a quiesced index.
    pub fn check_invariants(&self) -> AuditReport {
        let mut a = Auditor {
            idx: self,
            report: AuditReport::default(),
            last: None,
            seen: FxHashSet::default(),
        };
        match &self.root {
            Some(r) => a.node(r, "root".into(), 0, None, None),
            None if self.height != 0 => {
                a.fail("root", format!("empty tree with height {}", self.height))
            }
            None => {}
        }
        if a.report.entries != self.len {
            let msg = format!(
                "found {} entries, length says {}",
                a.report.entries, self.len
            );
            a.fail("root", msg);
        }
        a.report
    }
}

struct Auditor<'a> {
    idx: &'a HireIndex,
    report: AuditReport,
    last: Option<u64>,
    seen: FxHashSet<usize>,
}

impl Auditor<'_> {
    fn fail(&mut self, node: &str, message: String) {
        self.report.violations.push(Violation {
            node: node.to_string(),
            message,
        });
    }

    /// `lo` is the exclusive lower bound (previous separator), `hi` the
    /// inclusive upper bound (own separator).
    fn node(&mut self, n: &Node, path: String, depth: usize, lo: Option<u64>, hi: Option<u64>) {
        let p = &self.idx.params;
        let leaf_depth = self.idx.height.saturating_sub(1);
        if !self.seen.insert(addr(n)) {
            self.fail(&path, "node reachable through two links".into());
            return;
        }
        if n.is_leaf() != (depth == leaf_depth) {
            self.fail(
                &path,
                format!("node at depth {depth}, leaves belong at depth {leaf_depth}"),
            );
        }
        match &n.body {
            Body::Internal(i) => {
                for m in i.problems() {
                    self.fail(&path, m);
                }
                if i.is_empty() {
                    self.fail(&path, "internal node without children".into());
                }
                let mut prev = lo;
                for (j, (sep, c)) in i.children().into_iter().enumerate() {
                    if hi.is_some_and(|h| sep > h) {
                        self.fail(
                            &path,
                            format!(
                                "child separator {sep} above the node's bound {}",
                                hi.unwrap()
                            ),
                        );
                    }
                    if prev.is_some_and(|q| sep <= q) {
                        self.fail(
                            &path,
                            format!("child separator {sep} not above {}", prev.unwrap()),
                        );
                    }
                    self.node(c, format!("{path}/{j}"), depth + 1, prev, Some(sep));
                    prev = Some(sep);
                }
            }
            Body::Model(m) => {
                for msg in m.problems(p.epsilon, p.tau) {
                    self.fail(&path, msg);
                }
                let live = m.live();
                let floor = if p.legacy_enabled() { p.alpha } else { 1 };
                if live < floor || live > p.beta {
                    self.fail(
                        &path,
                        format!(
                            "model leaf holds {live} entries, allowed [{floor}, {}]",
                            p.beta
                        ),
                    );
                }
                let keys: Vec<u64> = m.live_entries().iter().map(|e| e.key).collect();
                self.keys(&path, &keys, lo, hi);
            }
            Body::Legacy(l) => {
                for msg in l.problems(p.fanout) {
                    self.fail(&path, msg);
                }
                if l.is_empty() {
                    self.fail(&path, "empty legacy leaf".into());
                }
                self.keys(&path, l.keys(), lo, hi);
            }
        }
    }

    /// Keys of one leaf: within the parent's bounds and above every key of
    /// the previous leaf. Reports at most one problem per leaf.
    fn keys(&mut self, path: &str, keys: &[u64], lo: Option<u64>, hi: Option<u64>) {
        self.report.leaves += 1;
        self.report.entries += keys.len();
        let (Some(&first), Some(&last)) = (keys.first(), keys.last()) else {
            return;
        };
        if let Some(l) = lo.filter(|&l| first <= l) {
            self.fail(
                path,
                format!("key {first} not above the previous separator {l}"),
            );
        } else if let Some(h) = hi.filter(|&h| last > h) {
            self.fail(path, format!("key {last} above the separator {h}"));
        } else if let Some(prev) = self.last.filter(|&q| first <= q) {
            self.fail(
                path,
                format!("key {first} not above the previous leaf's last key {prev}"),
            );
        }
        self.last = Some(last);
    }
}
