use crate::error::{HireError, Result};

/// How recalibration jobs are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Jobs run on a dedicated background thread against a snapshot.
    Threaded,
    /// No worker thread: the foreground advances the active job by a bounded
    /// amount of work at each operation boundary. Deterministic.
    Stepped,
    /// Jobs run to completion inline, at the moment they are triggered.
    Blocking,
}

impl ExecMode {
    /// `Threaded` when the machine has more than one hardware thread,
    /// `Stepped` otherwise.
    pub fn auto() -> Self {
        match std::thread::available_parallelism() {
            Ok(n) if n.get() > 1 => ExecMode::Threaded,
            _ => ExecMode::Stepped,
        }
    }
}

/// Settings of the retraining cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModelParams {
    /// Query-count window length, in index operations.
    pub window_ops: u64,
    /// Smoothing weight of the running cost averages.
    pub ewma_alpha: f64,
    /// Floor for the buffer-size threshold of the active trigger.
    pub buffer_threshold_floor: usize,
    /// Seed for the model-path search cost (ns).
    pub seed_model_cost_ns: f64,
    /// Seed for the per-entry buffer scan cost (ns).
    pub seed_buffer_unit_ns: f64,
    /// Seed for the cost of one retraining job (ns).
    pub seed_retrain_cost_ns: f64,
    /// Maximum relative slope difference for two regressions to count as similar.
    pub slope_similarity: f64,
    /// Maximum rank deviation (in multiples of epsilon) of a neighbour's
    /// entries under the other side's model.
    pub rank_deviation_eps: f64,
}

impl CostModelParams {
    pub fn for_tau(tau: usize) -> Self {
        CostModelParams {
            window_ops: 100_000,
            ewma_alpha: 0.2,
            buffer_threshold_floor: (tau / 4).max(1),
            seed_model_cost_ns: 30.0,
            seed_buffer_unit_ns: 2.0,
            seed_retrain_cost_ns: 200_000.0,
            slope_similarity: 0.10,
            rank_deviation_eps: 2.0,
        }
    }
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Every leaf is a model leaf; short segments are not demoted.
    pub disable_legacy_leaves: bool,
    /// Run recalibration inline on the foreground thread.
    pub blocking_recalibration: bool,
}

/// Tunables threaded through every part of the index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexParams {
    /// Internal-node fanout and legacy-leaf capacity.
    pub fanout: usize,
    /// Model-leaf error bound in slots.
    pub epsilon: usize,
    /// Minimum model-leaf size.
    pub alpha: usize,
    /// Maximum model-leaf size.
    pub beta: usize,
    /// Model-leaf buffer capacity.
    pub tau: usize,
    /// Bulk-load candidate window, in keys.
    pub delta: usize,
    /// Internal-node log capacity.
    pub log_cap: usize,
    pub cost: CostModelParams,
    pub ablation: Ablation,
    /// Execution mode for recalibration when the blocking ablation is off.
    pub exec_mode: ExecMode,
    /// Work units (entries) a stepped job may consume per operation.
    pub step_budget: usize,
    /// Logged updates replayed per operation once a job has been published.
    pub replay_per_op: usize,
    /// Children per internal node produced by bulk loading.
    pub bulk_internal_fill: usize,
    /// Exhaustively re-check the error bound of every leaf a job publishes.
    pub verify_jobs: bool,
}

impl IndexParams {
    /// Derives every size from the fanout: alpha = 2f, beta = f*f/2,
    /// epsilon = f/4, tau = f, log capacity = ceil(f/10).
    pub fn with_fanout(fanout: usize) -> Self {
        let tau = fanout;
        IndexParams {
            fanout,
            epsilon: fanout / 4,
            alpha: 2 * fanout,
            beta: fanout * (fanout / 2),
            tau,
            delta: 8,
            log_cap: fanout.div_ceil(10),
            cost: CostModelParams::for_tau(tau),
            ablation: Ablation::default(),
            exec_mode: ExecMode::auto(),
            step_budget: 2048,
            replay_per_op: 4,
            bulk_internal_fill: fanout * 3 / 4,
            verify_jobs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HireError::InvalidParams(m.to_string()));
        if self.fanout < 4 {
            return bad("fanout must be at least 4");
        }
        if self.epsilon == 0 || self.alpha == 0 || self.beta == 0 || self.tau == 0 {
            return bad("epsilon, alpha, beta and tau must be positive");
        }
        if self.alpha > self.beta {
            return bad("alpha must not exceed beta");
        }
        if self.epsilon > self.fanout {
            return bad("epsilon must not exceed the fanout");
        }
        if self.log_cap == 0 || self.log_cap >= self.fanout {
            return bad("log capacity must be in [1, fanout)");
        }
        if self.bulk_internal_fill < self.fanout / 2 || self.bulk_internal_fill > self.fanout {
            return bad("bulk internal fill must be in [f/2, f]");
        }
        if self.step_budget == 0 || self.replay_per_op == 0 {
            return bad("step budget and replay rate must be positive");
        }
        Ok(())
    }

    /// The mode jobs actually run in, after the blocking ablation.
    pub fn effective_mode(&self) -> ExecMode {
        if self.ablation.blocking_recalibration {
            ExecMode::Blocking
        } else {
            self.exec_mode
        }
    }

    pub(crate) fn legacy_enabled(&self) -> bool {
        !self.ablation.disable_legacy_leaves
    }

    /// Underflow threshold shared by legacy leaves and internal nodes.
    pub(crate) fn half(&self) -> usize {
        self.fanout / 2
    }
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams::with_fanout(256)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_fanout() {
        let p = IndexParams::default();
        assert_eq!(
            (p.fanout, p.alpha, p.beta, p.epsilon, p.tau, p.delta),
            (256, 512, 32768, 64, 256, 8)
        );
        assert_eq!(p.log_cap, 26);
        assert_eq!(p.cost.buffer_threshold_floor, 64);
        p.validate().unwrap();
    }

    #[test]
    fn log_cap_rounds_up() {
        assert_eq!(IndexParams::with_fanout(16).log_cap, 2);
        assert_eq!(IndexParams::with_fanout(64).log_cap, 7);
    }

    #[test]
    fn rejects_alpha_above_beta() {
        let mut p = IndexParams::with_fanout(16);
        p.alpha = p.beta + 1;
        assert!(p.validate().is_err());
    }
}
