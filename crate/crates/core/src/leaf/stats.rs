use std::sync::atomic::{AtomicU32, AtomicU64, Ordering::Relaxed};

/// Per-leaf query counter over a count-based window. Readers update it
/// through a shared reference, so both fields are atomics; races between
/// readers only make the count approximate.
#[derive(Debug, Default)]
pub struct LeafStats {
    q_count: AtomicU32,
    window_id: AtomicU64,
}

impl LeafStats {
    pub fn record_query(&self, window_id: u64) {
        if self.window_id.load(Relaxed) != window_id {
            self.window_id.store(window_id, Relaxed);
            self.q_count.store(0, Relaxed);
        }
        self.q_count.fetch_add(1, Relaxed);
    }

    /// Queries seen in `window_id`; zero if the counter belongs to an older window.
    pub fn queries(&self, window_id: u64) -> u32 {
        if self.window_id.load(Relaxed) == window_id {
            self.q_count.load(Relaxed)
        } else {
            0
        }
    }
}

impl Clone for LeafStats {
    fn clone(&self) -> Self {
        LeafStats {
            q_count: AtomicU32::new(self.q_count.load(Relaxed)),
            window_id: AtomicU64::new(self.window_id.load(Relaxed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_resets_on_new_window() {
        let s = LeafStats::default();
        s.record_query(3);
        s.record_query(3);
        assert_eq!(s.queries(3), 2);
        assert_eq!(s.queries(4), 0);
        s.record_query(4);
        assert_eq!(s.queries(4), 1);
        assert_eq!(s.queries(3), 0);
    }
}
