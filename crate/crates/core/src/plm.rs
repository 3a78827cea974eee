//! Linear models and the routines that fit them.
//!
//! Three fitters live here: a one-pass shrinking-cone fit with a hard error
//! bound (leaf construction and retraining), ordinary least squares (internal
//! node routing models), and recursive least squares (parent models during
//! bulk loading).
//!
//! Every model predicts relative to an `origin` key so that 64-bit keys can
//! be turned into `f64` offsets without losing the low bits that matter.

use crate::error::{HireError, Result};

/// Round half up, the rounding used for every slot computation.
#[inline(always)]
pub(crate) fn round_half_up(x: f64) -> f64 {
    floor(x + 0.5)
}

/// `f64::floor` without the libm call that baseline x86-64 lowers it to.
#[inline(always)]
fn floor(y: f64) -> f64 {
    // Every float this large is already integral; NaN passes through.
    if y.is_nan() || y.abs() >= 4_503_599_627_370_496.0 {
        return y;
    }
    let t = y as i64 as f64;
    if t > y {
        t - 1.0
    } else {
        t
    }
}

#[inline(always)]
pub(crate) fn key_offset(k: u64, origin: u64) -> f64 {
    if k >= origin {
        (k - origin) as f64
    } else {
        -((origin - k) as f64)
    }
}

/// `slope * (k - origin) + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    /// Slots per key unit.
    pub slope: f64,
    /// Prediction at `origin`, in slots.
    pub intercept: f64,
    pub origin: u64,
    /// Error bound the model was fitted under, if any.
    pub epsilon: Option<usize>,
    /// Largest absolute slot error measured over the points the model serves.
    pub max_error: usize,
}

impl Default for LinearModel {
    fn default() -> Self {
        LinearModel::new(0.0, 0.0)
    }
}

impl LinearModel {
    pub fn new(slope: f64, intercept: f64) -> Self {
        LinearModel {
            slope,
            intercept,
            origin: 0,
            epsilon: None,
            max_error: 0,
        }
    }

    pub fn with_origin(slope: f64, intercept: f64, origin: u64) -> Self {
        LinearModel {
            origin,
            ..LinearModel::new(slope, intercept)
        }
    }

    /// Unclamped, unrounded prediction.
    #[inline(always)]
    pub fn predict_raw(&self, k: u64) -> f64 {
        self.slope * key_offset(k, self.origin) + self.intercept
    }

    /// Predicted slot in `[0, len - 1]`.
    #[inline(always)]
    pub fn predict(&self, k: u64, len: usize) -> usize {
        debug_assert!(len >= 1);
        let r = round_half_up(self.predict_raw(k));
        if r.is_nan() || r <= 0.0 {
            0
        } else if r >= (len - 1) as f64 {
            len - 1
        } else {
            r as usize
        }
    }

    /// Rounded, unclamped prediction error against `rank`.
    #[inline]
    pub fn residual(&self, k: u64, rank: usize) -> f64 {
        (round_half_up(self.predict_raw(k)) - rank as f64).abs()
    }

    /// Multiplies the prediction by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        LinearModel {
            slope: self.slope * factor,
            intercept: self.intercept * factor,
            ..*self
        }
    }
}

/// Greedy one-pass bounded-error fit. Lines are anchored at the first point;
/// the fitter keeps the interval of slopes for which every accepted point is
/// within `epsilon` of its rank.
#[derive(Debug, Clone)]
pub struct ConeFitter {
    anchor_key: u64,
    anchor_rank: f64,
    slope_lo: f64,
    slope_hi: f64,
    epsilon: f64,
    count: usize,
    last_key: u64,
}

impl ConeFitter {
    pub fn new(epsilon: usize) -> Self {
        ConeFitter {
            anchor_key: 0,
            anchor_rank: 0.0,
            slope_lo: 0.0,
            slope_hi: f64::INFINITY,
            epsilon: epsilon as f64,
            count: 0,
            last_key: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// The current feasible slope interval.
    pub fn slope_bounds(&self) -> (f64, f64) {
        (self.slope_lo, self.slope_hi)
    }

    /// Tries to extend the segment with `(k, rank)`. Returns `false`, leaving
    /// the fitter untouched, when no anchored line keeps every point within
    /// the error bound.
    pub fn add_point(&mut self, k: u64, rank: usize) -> Result<bool> {
        if self.count == 0 {
            self.anchor_key = k;
            self.anchor_rank = rank as f64;
            self.last_key = k;
            self.count = 1;
            return Ok(true);
        }
        if k <= self.last_key {
            return Err(HireError::NonIncreasingKey {
                key: k,
                last: self.last_key,
            });
        }
        let dk = (k - self.anchor_key) as f64;
        let dr = rank as f64 - self.anchor_rank;
        let lo = self.slope_lo.max((dr - self.epsilon) / dk);
        let hi = self.slope_hi.min((dr + self.epsilon) / dk);
        if lo > hi {
            return Ok(false);
        }
        self.slope_lo = lo;
        self.slope_hi = hi;
        self.last_key = k;
        self.count += 1;
        Ok(true)
    }

    /// Midpoint of the cone, exact at the anchor.
    pub fn current_model(&self) -> LinearModel {
        let slope = if self.count < 2 {
            0.0
        } else {
            0.5 * (self.slope_lo + self.slope_hi)
        };
        LinearModel {
            slope,
            intercept: self.anchor_rank,
            origin: self.anchor_key,
            epsilon: Some(self.epsilon as usize),
            max_error: 0,
        }
    }
}

/// Ordinary least squares over `(key, rank)` points. A single point yields a
/// flat line through its rank. The measured maximum error is recorded.
pub fn fit_least_squares(points: &[(u64, f64)]) -> LinearModel {
    assert!(!points.is_empty(), "least squares needs at least one point");
    let origin = points[0].0;
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(k, r) in points {
        sx += key_offset(k, origin);
        sy += r;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(k, r) in points {
        let dx = key_offset(k, origin) - mx;
        sxx += dx * dx;
        sxy += dx * (r - my);
    }
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let mut model = LinearModel::with_origin(slope, my - slope * mx, origin);
    let mut worst = 0.0f64;
    for &(k, r) in points {
        worst = worst.max((round_half_up(model.predict_raw(k)) - r).abs());
    }
    model.max_error = worst as usize;
    model
}

/// Least squares of keys against their positions.
#[cfg(test)]
pub(crate) fn fit_positions(keys: &[u64]) -> LinearModel {
    let pts: Vec<(u64, f64)> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i as f64))
        .collect();
    fit_least_squares(&pts)
}

/// Recursive least squares with forgetting factor 1 over `rank ≈ a·x + b`,
/// where `x = (k - origin) * scale`. The gain matrix starts at `I / lambda`.
#[derive(Debug, Clone)]
pub struct RlsState {
    coef: [f64; 2],
    gain: [[f64; 2]; 2],
    origin: Option<u64>,
    scale: f64,
    count: usize,
}

pub const RLS_LAMBDA: f64 = 1e-6;

impl Default for RlsState {
    fn default() -> Self {
        RlsState::new(1.0)
    }
}

impl RlsState {
    /// `scale` maps key offsets into a well-conditioned range.
    pub fn new(scale: f64) -> Self {
        let g = 1.0 / RLS_LAMBDA;
        RlsState {
            coef: [0.0, 0.0],
            gain: [[g, 0.0], [0.0, g]],
            origin: None,
            scale,
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gain_matrix(&self) -> [[f64; 2]; 2] {
        self.gain
    }

    /// Folds one observation into the estimate.
    pub fn update(&mut self, k: u64, rank: f64) {
        let origin = *self.origin.get_or_insert(k);
        let phi = [key_offset(k, origin) * self.scale, 1.0];
        let p = &self.gain;
        let pphi = [
            p[0][0] * phi[0] + p[0][1] * phi[1],
            p[1][0] * phi[0] + p[1][1] * phi[1],
        ];
        let denom = 1.0 + phi[0] * pphi[0] + phi[1] * pphi[1];
        let gain = [pphi[0] / denom, pphi[1] / denom];
        let err = rank - (self.coef[0] * phi[0] + self.coef[1] * phi[1]);
        self.coef[0] += gain[0] * err;
        self.coef[1] += gain[1] * err;
        let mut next = [[0.0; 2]; 2];
        for (i, row) in next.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = p[i][j] - gain[i] * pphi[j];
            }
        }
        let off = 0.5 * (next[0][1] + next[1][0]);
        next[0][1] = off;
        next[1][0] = off;
        self.gain = next;
        self.count += 1;
    }

    /// Current estimate as a model in key units.
    pub fn model(&self) -> LinearModel {
        LinearModel::with_origin(
            self.coef[0] * self.scale,
            self.coef[1],
            self.origin.unwrap_or(0),
        )
    }

    pub fn predict(&self, k: u64) -> f64 {
        self.model().predict_raw(k)
    }
}

/// Functional form of [`RlsState::update`].
pub fn rls_update(mut s: RlsState, k: u64, rank: f64) -> RlsState {
    s.update(k, rank);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn predict_examples() {
        let m = LinearModel::new(2.0, 3.0);
        assert_eq!(m.predict(10, 100), 23);
        assert_eq!(m.predict(1000, 100), 99);
        assert_eq!(LinearModel::new(0.5, -10.0).predict(2, 100), 0);
    }

    #[test]
    fn predict_rounds_half_up() {
        let m = LinearModel::new(0.5, 0.0);
        assert_eq!(m.predict(1, 10), 1);
        assert_eq!(m.predict(3, 10), 2);
    }

    #[test]
    fn cone_accepts_collinear_points() {
        let mut c = ConeFitter::new(1);
        for i in 0..3 {
            assert!(c.add_point(i, i as usize).unwrap());
        }
    }

    #[test]
    fn cone_rejects_jump() {
        // After (1,1) the slope interval is [0, 2]; (2,100) needs [49.5, 50.5].
        let mut c = ConeFitter::new(1);
        assert!(c.add_point(0, 0).unwrap());
        assert!(c.add_point(1, 1).unwrap());
        assert_eq!(c.slope_bounds(), (0.0, 2.0));
        assert!(!c.add_point(2, 100).unwrap());
        assert_eq!(c.len(), 2);
        assert_eq!(c.slope_bounds(), (0.0, 2.0));
    }

    #[test]
    fn cone_rejects_non_increasing_key() {
        let mut c = ConeFitter::new(4);
        c.add_point(10, 0).unwrap();
        assert!(c.add_point(10, 1).is_err());
        assert!(c.add_point(9, 1).is_err());
    }

    #[test]
    fn cone_identity_ten_thousand() {
        let mut c = ConeFitter::new(64);
        for i in 0..10_000u64 {
            assert!(c.add_point(i, i as usize).unwrap());
        }
        let m = c.current_model();
        let worst = (0..10_000u64)
            .map(|i| m.residual(i, i as usize))
            .fold(0.0, f64::max);
        assert!(worst <= 64.0);
    }

    #[test]
    fn least_squares_examples() {
        let m = fit_least_squares(&[(0, 0.0), (10, 10.0)]);
        assert!((m.slope - 1.0).abs() < 1e-12 && m.intercept.abs() < 1e-12);
        let m = fit_least_squares(&[(5, 7.0)]);
        assert_eq!((m.slope, m.intercept), (0.0, 7.0));
        // x̄ = 1, ȳ = 1, Sxy = 3, Sxx = 2.
        let m = fit_least_squares(&[(0, 0.0), (1, 0.0), (2, 3.0)]);
        assert!((m.slope - 1.5).abs() < 1e-12);
        assert!((m.intercept + 0.5).abs() < 1e-12);
        assert_eq!(m.max_error, 1);
    }

    #[test]
    fn rls_recovers_exact_line() {
        let mut s = RlsState::default();
        for i in 0..3u64 {
            s.update(i, i as f64);
        }
        let m = s.model();
        assert!((m.slope - 1.0).abs() < 1e-6, "{m:?}");
        assert!(m.intercept.abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn rls_single_update_moves_toward_target() {
        let fresh = RlsState::default();
        let before = fresh.predict(5);
        let after = rls_update(fresh, 5, 7.0).predict(5);
        assert!((after - 7.0).abs() < (before - 7.0).abs());
    }

    #[test]
    fn rls_matches_batch_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut keys: Vec<u64> = (0..1000).map(|_| rng.random_range(0..1_000_000)).collect();
        keys.sort_unstable();
        keys.dedup();
        let pts: Vec<(u64, f64)> = keys
            .iter()
            .map(|&k| (k, 0.003 * k as f64 + rng.random_range(-5.0..5.0)))
            .collect();
        let mut s = RlsState::default();
        for &(k, r) in &pts {
            s.update(k, r);
        }
        let batch = fit_least_squares(&pts);
        let online = s.model();
        assert_eq!(online.origin, batch.origin);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(
            rel(online.slope, batch.slope) <= 1e-6,
            "{online:?} {batch:?}"
        );
        assert!(
            rel(online.intercept, batch.intercept) <= 1e-6,
            "{online:?} {batch:?}"
        );
        let g = s.gain_matrix();
        assert_eq!(g[0][1], g[1][0]);
        assert!(g[0][0] > 0.0 && g[0][0] * g[1][1] - g[0][1] * g[1][0] > 0.0);
    }

    #[test]
    fn floor_edge_cases() {
        for y in [
            -0.5,
            -1.0,
            -0.0,
            0.0,
            0.5,
            2.0,
            -2.5,
            1e300,
            -1e300,
            4_503_599_627_370_495.5,
            f64::INFINITY,
        ] {
            assert_eq!(floor(y), y.floor(), "{y}");
        }
        assert!(floor(f64::NAN).is_nan());
    }

    proptest! {
        #[test]
        fn floor_matches_std(y in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(floor(y), y.floor());
        }

        #[test]
        fn predict_is_monotone(slope in 0.0f64..10.0, icpt in -100.0f64..100.0,
                               a in 0u64..1_000_000, b in 0u64..1_000_000) {
            let m = LinearModel::new(slope, icpt);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.predict(lo, 1000) <= m.predict(hi, 1000));
        }

        #[test]
        fn cone_is_sound(gaps in proptest::collection::vec(1u64..50, 1..400), eps in 1usize..16) {
            let mut c = ConeFitter::new(eps);
            let mut keys = Vec::new();
            let mut k = 0u64;
            for g in gaps {
                k += g;
                if !c.add_point(k, keys.len()).unwrap() {
                    break;
                }
                keys.push(k);
            }
            let m = c.current_model();
            for (i, &k) in keys.iter().enumerate() {
                prop_assert!(m.residual(k, i) <= eps as f64);
            }
        }
    }
}
