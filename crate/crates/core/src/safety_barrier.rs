//! Affine discrete-time control barrier functions and their robust
//! constraint rows.
//!
//! A barrier `h(x) = a.x + b` is safe where `h >= 0`. The discrete condition
//! `h(x+) - h(x) + alpha h(x) >= 0` is imposed on the predicted next state,
//! with the learned disturbance entering through a box `[mu - c sigma, mu + c sigma]`.

use serde::{Deserialize, Serialize};

use crate::disturbance_learner::DisturbanceEstimate;
use crate::error::{Error, Result};

/// Stand-in for the strict inequality of the barrier condition.
pub const CBF_MARGIN: f64 = 1e-6;

/// How the disturbance spread is folded into the linear barrier functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustNorm {
    /// `sum_j |a_j| sigma_j`: exact worst case over the box.
    #[default]
    WeightedL1,
    /// `sqrt(sum_j (a_j sigma_j)^2)`: tighter, ellipsoidal.
    WeightedL2,
}

impl RobustNorm {
    pub fn apply(self, a: &[f64], sigma: &[f64]) -> f64 {
        let terms = a.iter().zip(sigma).map(|(a, s)| (a * s).abs());
        match self {
            RobustNorm::WeightedL1 => terms.sum(),
            RobustNorm::WeightedL2 => terms.map(|t| t * t).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineBarrier {
    pub a: Vec<f64>,
    pub b: f64,
    pub alpha: f64,
}

impl AffineBarrier {
    pub fn new(a: Vec<f64>, b: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        if a.iter().all(|v| *v == 0.0) || a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidParameter("barrier needs a finite, nonzero coefficient vector".into()));
        }
        Ok(Self { a, b, alpha })
    }

    /// `s3 - p - d1 >= 0` over `[p, v, s3, v3]`: keep at least `d1` behind the front vehicle.
    pub fn min_headway(d1: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![-1.0, 0.0, 1.0, 0.0], -d1, alpha)
    }

    /// `p - s3 + d2 >= 0`: stay within `d2` of the front vehicle.
    pub fn max_headway(d2: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![1.0, 0.0, -1.0, 0.0], d2, alpha)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `a.x` without the offset.
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum()
    }

    pub fn h_eval(&self, x: &[f64]) -> Result<f64> {
        self.check(x.len())?;
        Ok(self.linear(x) + self.b)
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.a.len() {
            return Err(Error::DimensionMismatch {
                expected: self.a.len(),
                got,
            });
        }
        Ok(())
    }
}

pub fn classk_gamma(alpha: f64, h: f64) -> f64 {
    alpha * h
}

/// `(h_next - h_cur) + alpha h_cur`; nonnegative when the step satisfies the
/// discrete barrier condition.
pub fn cbf_residual(h_next: f64, h_cur: f64, alpha: f64) -> f64 {
    (h_next - h_cur) + classk_gamma(alpha, h_cur)
}

/// Guaranteed lower bound `(1 - alpha)^k h0` on `h` after `k` steps.
pub fn convergence_envelope(h0: f64, alpha: f64, k: u64) -> f64 {
    (1.0 - alpha).powf(k as f64) * h0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfDiagnostics {
    pub h_now: f64,
    /// `a.mu - c * spread(a, sigma)`.
    pub eps_term: f64,
    /// `h` at the disturbance-free prediction with zero control.
    pub nominal_term: f64,
}

/// Linear row `coef_u * u + coef_zeta * zeta >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfConstraintRow {
    pub coef_u: f64,
    pub coef_zeta: f64,
    pub rhs: f64,
    pub diagnostics: CbfDiagnostics,
    /// The control cannot move this barrier within one step and the row is
    /// already violated at `zeta = 0`.
    pub unactuated_violation: bool,
}

impl CbfConstraintRow {
    /// Smallest slack that satisfies the row at `u`.
    pub fn deficit(&self, u: f64) -> f64 {
        (self.rhs - self.coef_u * u).max(0.0)
    }

    pub fn holds(&self, u: f64, zeta: f64, tol: f64) -> bool {
        self.coef_u * u + self.coef_zeta * zeta >= self.rhs - tol
    }

    pub fn is_finite(&self) -> bool {
        self.coef_u.is_finite() && self.rhs.is_finite()
    }
}

/// Robust barrier row for one step.
///
/// `nominal_next` is the disturbance-free prediction at zero control,
/// `u_channel` the sensitivity of the next state to the control. The row
/// certifies `h(x+) >= (1 - alpha) h(x) + margin` for every disturbance in
/// the box `est.mu +/- c est.sigma` (exactly for the weighted 1-norm).
#[allow(clippy::too_many_arguments)]
pub fn build_cbf_row(
    bar: &AffineBarrier,
    x: &[f64],
    nominal_next: &[f64],
    u_channel: &[f64],
    est: &DisturbanceEstimate,
    c: f64,
    margin: f64,
    norm: RobustNorm,
) -> Result<CbfConstraintRow> {
    bar.check(x.len())?;
    bar.check(nominal_next.len())?;
    bar.check(u_channel.len())?;
    bar.check(est.mu.len())?;
    bar.check(est.sigma.len())?;
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!("confidence multiplier {c} must be >= 0")));
    }

    let h_now = bar.linear(x) + bar.b;
    let nominal_term = bar.linear(nominal_next) + bar.b;
    let eps_term = bar.linear(&est.mu) - c * norm.apply(&bar.a, &est.sigma);
    let coef_u = bar.linear(u_channel);
    let rhs = (1.0 - bar.alpha) * h_now + margin - nominal_term - eps_term;
    Ok(CbfConstraintRow {
        coef_u,
        coef_zeta: 1.0,
        rhs,
        diagnostics: CbfDiagnostics {
            h_now,
            eps_term,
            nominal_term,
        },
        unactuated_violation: coef_u == 0.0 && rhs > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(mu: Vec<f64>, sigma: Vec<f64>) -> DisturbanceEstimate {
        DisturbanceEstimate { mu, sigma }
    }

    #[test]
    fn h_eval_at_initial_states() {
        let h1 = AffineBarrier::min_headway(25.0, 0.05).unwrap();
        let h2 = AffineBarrier::max_headway(100.0, 0.05).unwrap();
        let x = [25.0, 18.0, 120.0, 18.0];
        assert_eq!(h1.h_eval(&x).unwrap(), 70.0);
        assert_eq!(h2.h_eval(&x).unwrap(), 5.0);
        let x = [110.0, 18.0, 120.0, 18.0];
        assert_eq!(h1.h_eval(&x).unwrap(), -15.0);
        assert!(h1.h_eval(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn barrier_validation() {
        assert!(AffineBarrier::new(vec![1.0], 0.0, 1.0).is_err());
        assert!(AffineBarrier::new(vec![1.0], 0.0, 0.0).is_err());
        assert!(AffineBarrier::new(vec![0.0, 0.0], 0.0, 0.5).is_err());
    }

    #[test]
    fn gamma_and_residual() {
        assert_eq!(classk_gamma(0.05, 0.0), 0.0);
        assert!((classk_gamma(0.05, 70.0) - 3.5).abs() < 1e-12);
        for h in [-3.0, -1e-9, 2.0] {
            assert_eq!(classk_gamma(0.3, h).signum(), h.signum());
        }
        assert_eq!(cbf_residual(0.0, 0.0, 0.05), 0.0);
        assert!((cbf_residual(-14.0, -15.0, 0.05) - 0.25).abs() < 1e-12);
        let h = -7.3;
        assert!(cbf_residual(0.95 * h, h, 0.05).abs() < 1e-15);
    }

    #[test]
    fn envelope_values() {
        assert_eq!(convergence_envelope(-15.0, 0.05, 0), -15.0);
        assert!((convergence_envelope(-15.0, 0.05, 60) + 0.691_047).abs() < 1e-6);
        let mut last = -15.0;
        for k in 1..500 {
            let e = convergence_envelope(-15.0, 0.05, k);
            assert!(e > last && e < 0.0);
            last = e;
        }
    }

    #[test]
    fn affinity() {
        let bar = AffineBarrier::new(vec![0.3, -1.2, 2.0], 4.0, 0.1).unwrap();
        let x = [1.0, 2.0, -0.5];
        let y = [-3.0, 0.25, 7.0];
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let lhs = bar.h_eval(&xy).unwrap() - bar.h_eval(&y).unwrap();
        assert!((lhs - bar.linear(&x)).abs() < 1e-12);
    }

    #[test]
    fn disturbance_free_row_is_plain_condition() {
        let bar = AffineBarrier::min_headway(25.0, 0.05).unwrap();
        let x = [110.0, 18.0, 120.0, 18.0];
        let next = [110.36, 18.0, 120.36, 18.0];
        let ch = [0.02 * 0.02 / 1650.0, 0.02 / 1650.0, 0.0, 0.0];
        let row = build_cbf_row(&bar, &x, &next, &ch, &est(vec![0.0; 4], vec![0.0; 4]), 3.0, 0.0, RobustNorm::WeightedL1).unwrap();
        assert_eq!(row.diagnostics.eps_term, 0.0);
        // coef_u u >= rhs  <=>  h(next + ch u) - h(x) + alpha h(x) >= 0
        for u in [-4000.0, 0.0, 2500.0] {
            let next_u: Vec<f64> = next.iter().zip(&ch).map(|(n, c)| n + c * u).collect();
            let h_next = bar.h_eval(&next_u).unwrap();
            let res = cbf_residual(h_next, -15.0, 0.05);
            let lhs = row.coef_u * u - row.rhs;
            assert!((res - lhs).abs() < 1e-9, "{res} vs {lhs}");
        }
    }

    #[test]
    fn robust_term_linear_in_c() {
        let bar = AffineBarrier::new(vec![1.0, -2.0, 0.5, 0.0], 3.0, 0.2).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let e = est(vec![0.1, -0.2, 0.0, 1.0], vec![0.05, 0.01, 0.2, 9.0]);
        let spread = RobustNorm::WeightedL1.apply(&bar.a, &e.sigma);
        assert!((spread - (0.05 + 0.02 + 0.1)).abs() < 1e-15);
        let r1 = build_cbf_row(&bar, &x, &x, &[1.0, 0.0, 0.0, 0.0], &e, 1.5, 0.0, RobustNorm::WeightedL1).unwrap();
        let r2 = build_cbf_row(&bar, &x, &x, &[1.0, 0.0, 0.0, 0.0], &e, 3.0, 0.0, RobustNorm::WeightedL1).unwrap();
        assert!((r2.rhs - r1.rhs - 1.5 * spread).abs() < 1e-12);
        let l2 = RobustNorm::WeightedL2.apply(&bar.a, &e.sigma);
        assert!(l2 <= spread);
    }

    #[test]
    fn unactuated_violation_flagged() {
        let bar = AffineBarrier::min_headway(25.0, 0.05).unwrap();
        let x = [110.0, 18.0, 120.0, 18.0];
        let ch = [0.0, 0.02 / 1650.0, 0.0, 0.0];
        let z = est(vec![0.0; 4], vec![0.0; 4]);
        let row = build_cbf_row(&bar, &x, &x, &ch, &z, 3.0, CBF_MARGIN, RobustNorm::WeightedL1).unwrap();
        assert_eq!(row.coef_u, 0.0);
        assert!(row.unactuated_violation);
        assert!(row.deficit(1e6) > 0.7);
    }

    #[test]
    fn one_dimensional_minimal_u_matches_grid() {
        // x+ = x + Ts u, h = x, alpha = 0.05
        let ts = 0.02;
        let bar = AffineBarrier::new(vec![1.0], 0.0, 0.05).unwrap();
        for x0 in [-3.0, -0.4, 0.0, 1.7] {
            let z = est(vec![0.01], vec![0.002]);
            let row = build_cbf_row(&bar, &[x0], &[x0], &[ts], &z, 3.0, CBF_MARGIN, RobustNorm::WeightedL1).unwrap();
            let u_min = row.rhs / row.coef_u;
            // worst case over the box is its lower end
            let ok = |u: f64| x0 + ts * u + (0.01 - 3.0 * 0.002) >= 0.95 * x0 + CBF_MARGIN;
            let n = 100_000;
            let step = 400.0 / n as f64;
            let first = (0..=n).map(|i| -200.0 + step * i as f64).find(|u| ok(*u)).unwrap();
            let (mut lo, mut hi) = (first - step, first);
            while hi - lo > 1e-9 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((hi - u_min).abs() <= 1e-6, "{hi} vs {u_min}");
        }
    }
}
