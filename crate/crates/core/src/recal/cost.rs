use crate::params::CostModelParams;

/// Outcome of the retraining trigger check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    No,
    /// Hot leaf with a sizeable buffer.
    Active,
    /// Buffer reached capacity.
    Passive,
}

/// A cost measurement fed to the model. Times are in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    RetrainTime(f64),
    BufferScan { len: usize, ns: f64 },
    ModelSearch(f64),
}

/// Running cost estimates and the thresholds derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub c_model: f64,
    pub c_buffer_unit: f64,
    pub c_retrain: f64,
    pub q_th: f64,
    pub b_th: usize,
    pub ewma_alpha: f64,
    seen_model: bool,
    seen_buffer: bool,
    seen_retrain: bool,
}

impl CostModel {
    pub fn new(p: &CostModelParams) -> Self {
        let mut cm = CostModel {
            c_model: p.seed_model_cost_ns,
            c_buffer_unit: p.seed_buffer_unit_ns,
            c_retrain: p.seed_retrain_cost_ns,
            q_th: f64::INFINITY,
            b_th: p.buffer_threshold_floor.max(1),
            ewma_alpha: p.ewma_alpha,
            seen_model: false,
            seen_buffer: false,
            seen_retrain: false,
        };
        cm.recompute();
        cm
    }

    /// Expected cost of probing a buffer of `len` entries.
    pub fn c_buffer(&self, len: usize) -> f64 {
        self.c_buffer_unit * len as f64 / 2.0
    }

    fn recompute(&mut self) {
        let gain = self.c_buffer(self.b_th) - self.c_model;
        self.q_th = if gain > 0.0 {
            (self.c_retrain / gain).max(1.0)
        } else {
            f64::INFINITY
        };
    }
}

fn ewma(cur: &mut f64, seen: &mut bool, x: f64, a: f64) {
    if *seen {
        *cur = a * x + (1.0 - a) * *cur;
    } else {
        *cur = x;
        *seen = true;
    }
}

/// Passive wins over active; the active trigger needs both thresholds.
pub fn should_retrain(q_count: u32, buffer_len: usize, tau: usize, cm: &CostModel) -> Trigger {
    if buffer_len >= tau {
        Trigger::Passive
    } else if buffer_len >= cm.b_th && q_count as f64 >= cm.q_th {
        Trigger::Active
    } else {
        Trigger::No
    }
}

/// Folds one observation into the running averages and re-derives the
/// query threshold. The first observation of each kind replaces the seed.
pub fn update_cost_estimates(cm: &mut CostModel, obs: Observation) {
    let a = cm.ewma_alpha;
    match obs {
        Observation::RetrainTime(ns) if ns > 0.0 => {
            ewma(&mut cm.c_retrain, &mut cm.seen_retrain, ns, a)
        }
        Observation::BufferScan { len, ns } if len > 0 && ns > 0.0 => ewma(
            &mut cm.c_buffer_unit,
            &mut cm.seen_buffer,
            ns / len as f64,
            a,
        ),
        Observation::ModelSearch(ns) if ns > 0.0 => {
            ewma(&mut cm.c_model, &mut cm.seen_model, ns, a)
        }
        _ => return,
    }
    cm.recompute();
}
