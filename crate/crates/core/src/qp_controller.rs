//! Slack-augmented control program for a scalar force.
//!
//! ```text
//! min  u^2 + lambda_zeta * sum_r zeta_r^2 + lambda_iota * iota^2
//! s.t. coef_r u + zeta_r >= rhs_r,   g(u) <= iota,   u_min <= u <= u_max
//! ```
//!
//! Every slack appears in one constraint and the objective, so at the optimum
//! `zeta_r = max(0, rhs_r - coef_r u)` and `iota = max(0, g(u))`. Substituting
//! leaves a convex, piecewise-smooth function of `u` alone. Its derivative is
//! monotone, so the minimizer is located by scanning breakpoints and running a
//! bracketed Newton iteration inside the segment where the derivative changes
//! sign. The derivative stays well defined for penalty weights near `1e30`,
//! where a normal-equations QP would be hopeless.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clf_tracking::ClfQuadratic;
use crate::error::{Error, Result};
use crate::safety_barrier::CbfConstraintRow;

pub const DEFAULT_LAMBDA_ZETA: f64 = 1e30;
pub const DEFAULT_LAMBDA_IOTA: f64 = 1e10;
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub cbf_rows: Vec<CbfConstraintRow>,
    pub clf: Option<ClfQuadratic>,
    pub u_bounds: [f64; 2],
    pub lambda_zeta: f64,
    pub lambda_iota: f64,
}

impl ControlProblem {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.u_bounds;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("control bounds [{lo}, {hi}] must be finite with min < max")));
        }
        if !(self.lambda_zeta > self.lambda_iota && self.lambda_iota > 0.0 && self.lambda_zeta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalty weights need lambda_zeta ({}) > lambda_iota ({}) > 0",
                self.lambda_zeta, self.lambda_iota
            )));
        }
        if !self.cbf_rows.iter().all(CbfConstraintRow::is_finite) || !self.clf.as_ref().is_none_or(ClfQuadratic::is_finite) {
            return Err(Error::Numerical("non-finite constraint coefficients".into()));
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.u_bounds[1] - self.u_bounds[0]
    }

    fn clf_slack(&self, u: f64) -> f64 {
        self.clf.map_or(0.0, |q| q.g0(u).max(0.0))
    }

    /// Objective with the slacks eliminated.
    pub fn phi(&self, u: f64) -> f64 {
        let rows: f64 = self.cbf_rows.iter().map(|r| r.deficit(u).powi(2)).sum();
        let iota = self.clf_slack(u);
        u * u + self.lambda_zeta * rows + self.lambda_iota * iota * iota
    }

    /// Right derivative of [`phi`](Self::phi).
    pub fn dphi(&self, u: f64) -> f64 {
        self.dphi_sided(u, true)
    }

    /// Left derivative; differs from the right one only at the CLF kink.
    pub fn dphi_left(&self, u: f64) -> f64 {
        self.dphi_sided(u, false)
    }

    fn dphi_sided(&self, u: f64, right: bool) -> f64 {
        let mut d = 2.0 * u;
        for r in &self.cbf_rows {
            d -= 2.0 * self.lambda_zeta * r.coef_u * r.deficit(u);
        }
        if let Some(q) = &self.clf {
            let g = q.g0(u);
            if g > 0.0 {
                let dg = if right {
                    q.dg0(u)
                } else {
                    let e = q.c0 + q.c1 * u;
                    let s = if e < 0.0 || (e == 0.0 && q.c1 > 0.0) { -1.0 } else { 1.0 };
                    2.0 * q.worst_error(u) * s * q.c1
                };
                d += 2.0 * self.lambda_iota * g * dg;
            }
        }
        d
    }

    fn ddphi(&self, u: f64) -> f64 {
        let mut h = 2.0;
        for r in &self.cbf_rows {
            if r.deficit(u) > 0.0 {
                h += 2.0 * self.lambda_zeta * r.coef_u * r.coef_u;
            }
        }
        if let Some(q) = &self.clf {
            let g = q.g0(u);
            if g > 0.0 {
                let dg = q.dg0(u);
                h += 2.0 * self.lambda_iota * (dg * dg + g * 2.0 * q.c1 * q.c1);
            }
        }
        h
    }

    /// Points in the open box where the derivative's formula changes.
    fn breakpoints(&self) -> Vec<f64> {
        let [lo, hi] = self.u_bounds;
        let mut pts: Vec<f64> = self
            .cbf_rows
            .iter()
            .filter(|r| r.coef_u != 0.0)
            .map(|r| r.rhs / r.coef_u)
            .collect();
        if let Some(q) = &self.clf {
            pts.extend(q.kink());
            pts.extend(q.roots());
        }
        pts.retain(|p| p.is_finite() && *p > lo && *p < hi);
        pts.push(lo);
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Per-row slacks and the CLF slack at `u`.
    pub fn slacks(&self, u: f64) -> (Vec<f64>, f64) {
        (self.cbf_rows.iter().map(|r| r.deficit(u)).collect(), self.clf_slack(u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// The minimizer over the real line lies outside the control box.
    Clipped,
    /// Invalid or non-finite problem; the fallback control was returned.
    Degraded,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Clipped => "clipped",
            SolveStatus::Degraded => "degraded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    pub u_star: f64,
    /// Largest row slack; a single slack of this size satisfies every row.
    pub zeta_star: f64,
    pub zetas: Vec<f64>,
    pub iota_star: f64,
    pub objective: f64,
    pub status: SolveStatus,
    /// Wall-clock seconds.
    pub solve_time: f64,
    /// Rows with a positive slack at the optimum.
    pub active_rows: usize,
}

impl ControlSolution {
    fn at(prob: &ControlProblem, u: f64, status: SolveStatus) -> Self {
        let (zetas, iota_star) = prob.slacks(u);
        Self {
            u_star: u,
            zeta_star: zetas.iter().copied().fold(0.0, f64::max),
            active_rows: zetas.iter().filter(|z| **z > 0.0).count(),
            zetas,
            iota_star,
            objective: prob.phi(u),
            status,
            solve_time: 0.0,
        }
    }
}

/// Minimize the slack-eliminated objective over the control box.
///
/// On a degraded problem the clamped `fallback_u` (the previous command) is
/// returned with zero slacks.
pub fn solve(prob: &ControlProblem, fallback_u: f64) -> ControlSolution {
    let start = Instant::now();
    let mut sol = match prob.validate() {
        Ok(()) => solve_valid(prob),
        Err(e) => {
            log::warn!("degraded control solve, holding last command: {e}");
            let [lo, hi] = prob.u_bounds;
            let u = if lo <= hi { fallback_u.clamp(lo, hi) } else { fallback_u };
            ControlSolution {
                u_star: if u.is_finite() { u } else { 0.0 },
                zeta_star: 0.0,
                zetas: vec![0.0; prob.cbf_rows.len()],
                iota_star: 0.0,
                objective: f64::NAN,
                status: SolveStatus::Degraded,
                solve_time: 0.0,
                active_rows: 0,
            }
        }
    };
    sol.solve_time = start.elapsed().as_secs_f64();
    sol
}

fn solve_valid(prob: &ControlProblem) -> ControlSolution {
    let [lo, hi] = prob.u_bounds;
    let d_lo = prob.dphi(lo);
    if d_lo >= 0.0 {
        let status = if d_lo > 0.0 { SolveStatus::Clipped } else { SolveStatus::Optimal };
        return ControlSolution::at(prob, lo, status);
    }
    let d_hi = prob.dphi_left(hi);
    if d_hi <= 0.0 {
        let status = if d_hi < 0.0 { SolveStatus::Clipped } else { SolveStatus::Optimal };
        return ControlSolution::at(prob, hi, status);
    }

    let pts = prob.breakpoints();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let db_left = prob.dphi_left(b);
        if db_left < 0.0 {
            if prob.dphi(b) >= 0.0 {
                // minimizer sits on the kink at `b`
                return ControlSolution::at(prob, b, SolveStatus::Optimal);
            }
            continue;
        }
        let u = segment_root(prob, a, b);
        return ControlSolution::at(prob, u, SolveStatus::Optimal);
    }
    // Unreachable for a monotone derivative; keep the best endpoint.
    let u = if prob.phi(lo) <= prob.phi(hi) { lo } else { hi };
    ControlSolution::at(prob, u, SolveStatus::Optimal)
}

/// Zero of the derivative inside `[a, b]`, where it is smooth and changes sign.
fn segment_root(prob: &ControlProblem, mut a: f64, mut b: f64) -> f64 {
    let tol = 1e-13 * prob.range().max(1.0);
    let mut u = 0.5 * (a + b);
    for _ in 0..200 {
        let d = prob.dphi(u);
        if d == 0.0 {
            return u;
        }
        if d > 0.0 {
            b = u;
        } else {
            a = u;
        }
        if b - a <= tol {
            break;
        }
        let h = prob.ddphi(u);
        let newton = u - d / h;
        u = if h > 0.0 && newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    [a, u, b]
        .into_iter()
        .min_by(|x, y| prob.phi(*x).total_cmp(&prob.phi(*y)))
        .expect("three candidates")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KktReport {
    pub violations: Vec<String>,
}

impl KktReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check feasibility and local optimality of a solution.
///
/// Stationarity is tested by derivative signs on either side of `u*` rather
/// than by the magnitude of the derivative, which scales with the penalty
/// weights.
pub fn kkt_check(prob: &ControlProblem, sol: &ControlSolution) -> KktReport {
    let mut v = Vec::new();
    let [lo, hi] = prob.u_bounds;
    let u = sol.u_star;
    if !(u >= lo - FEASIBILITY_TOL && u <= hi + FEASIBILITY_TOL) {
        v.push(format!("u* = {u} outside [{lo}, {hi}]"));
    }
    if sol.zeta_star < 0.0 || sol.iota_star < 0.0 || sol.zetas.iter().any(|z| *z < 0.0) {
        v.push("negative slack".into());
    }
    for (i, r) in prob.cbf_rows.iter().enumerate() {
        if !r.holds(u, sol.zeta_star, FEASIBILITY_TOL) {
            v.push(format!("row {i} violated: {} * {u} + {} < {}", r.coef_u, sol.zeta_star, r.rhs));
        }
    }
    if let Some(q) = &prob.clf {
        let g = q.g(u, sol.iota_star);
        if g > FEASIBILITY_TOL {
            v.push(format!("CLF constraint violated by {g}"));
        }
    }
    if sol.status == SolveStatus::Degraded {
        return KktReport { violations: v };
    }

    let delta = 1e-9 * prob.range();
    if u > lo + delta && prob.dphi_left(u - delta) > 0.0 {
        v.push(format!("objective decreases to the left of u* = {u}"));
    }
    if u < hi - delta && prob.dphi(u + delta) < 0.0 {
        v.push(format!("objective decreases to the right of u* = {u}"));
    }
    KktReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety_barrier::CbfDiagnostics;

    fn row(coef_u: f64, rhs: f64) -> CbfConstraintRow {
        CbfConstraintRow {
            coef_u,
            coef_zeta: 1.0,
            rhs,
            diagnostics: CbfDiagnostics {
                h_now: 0.0,
                eps_term: 0.0,
                nominal_term: 0.0,
            },
            unactuated_violation: false,
        }
    }

    fn problem(rows: Vec<CbfConstraintRow>, clf: Option<ClfQuadratic>) -> ControlProblem {
        ControlProblem {
            cbf_rows: rows,
            clf,
            u_bounds: [-4855.95, 4855.95],
            lambda_zeta: 1e8,
            lambda_iota: 1e4,
        }
    }

    #[test]
    fn empty_problem() {
        let p = problem(vec![], None);
        let s = solve(&p, 0.0);
        assert_eq!(s.u_star, 0.0);
        assert_eq!((s.zeta_star, s.iota_star), (0.0, 0.0));
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(kkt_check(&p, &s).ok());
    }

    #[test]
    fn single_binding_row_closed_form() {
        // 2u - 2 lam a (r - a u) = 0  =>  u = lam a r / (1 + lam a^2)
        let (a, r, lam) = (0.01, 5.0, 1e8);
        let p = problem(vec![row(a, r)], None);
        let s = solve(&p, 0.0);
        let expect = lam * a * r / (1.0 + lam * a * a);
        assert!((s.u_star - expect).abs() < 1e-9 * p.range(), "{} vs {expect}", s.u_star);
        assert!(kkt_check(&p, &s).ok());
        assert!((s.zeta_star - (r - a * s.u_star)).abs() < 1e-12);
    }

    #[test]
    fn clipped_at_bound() {
        let p = problem(vec![row(1e-4, 10.0)], None);
        let s = solve(&p, 0.0);
        assert_eq!(s.u_star, 4855.95);
        assert_eq!(s.status, SolveStatus::Clipped);
        assert!(s.zeta_star > 9.0);
        assert!(kkt_check(&p, &s).ok());
    }

    #[test]
    fn default_weights_recover_row() {
        let ts: f64 = 0.02;
        let a = ts * ts / 1650.0;
        let mut p = problem(vec![row(a, 0.75 * a * 1000.0)], None);
        p.lambda_zeta = DEFAULT_LAMBDA_ZETA;
        p.lambda_iota = DEFAULT_LAMBDA_IOTA;
        let s = solve(&p, 0.0);
        assert!((s.u_star - 750.0).abs() < 1e-6);
        assert!(s.zeta_star < 1e-12);
        assert!(kkt_check(&p, &s).ok());
    }

    #[test]
    fn degraded_holds_last_command() {
        let p = problem(vec![row(f64::NAN, 1.0)], None);
        let s = solve(&p, 123.0);
        assert_eq!(s.status, SolveStatus::Degraded);
        assert_eq!(s.u_star, 123.0);
        let mut p = problem(vec![], None);
        p.lambda_iota = p.lambda_zeta * 10.0;
        assert_eq!(solve(&p, -9e9).u_star, -4855.95);
    }

    #[test]
    fn corrupted_solution_is_reported() {
        let p = problem(vec![row(0.01, 5.0)], None);
        let mut s = solve(&p, 0.0);
        s.u_star += 1e-3 * p.range();
        assert!(!kkt_check(&p, &s).ok());
        let mut s = solve(&p, 0.0);
        s.zeta_star = 0.0;
        assert!(!kkt_check(&p, &s).ok());
    }

    #[test]
    fn clf_pulls_toward_target() {
        let q = ClfQuadratic {
            c0: -2.0,
            c1: 0.02 / 1650.0,
            sigma_v: 0.0,
            c: 3.0,
            v_now_err_sq: 4.0,
            c_v: 0.8,
        };
        let mut p = problem(vec![], Some(q));
        p.lambda_iota = DEFAULT_LAMBDA_IOTA;
        p.lambda_zeta = DEFAULT_LAMBDA_ZETA;
        let s = solve(&p, 0.0);
        assert!(s.u_star > 0.0);
        assert!(kkt_check(&p, &s).ok());
        let perturb = 1e-3 * p.range();
        for du in [-perturb, perturb] {
            let u = (s.u_star + du).clamp(p.u_bounds[0], p.u_bounds[1]);
            if u != s.u_star {
                assert!(p.phi(u) > s.objective);
            }
        }
    }

    #[test]
    fn deterministic() {
        let q = ClfQuadratic {
            c0: 0.3,
            c1: 1e-5,
            sigma_v: 0.01,
            c: 3.0,
            v_now_err_sq: 1.0,
            c_v: 0.8,
        };
        let p = problem(vec![row(-2e-4, 0.1), row(3e-4, -0.2)], Some(q));
        let a = solve(&p, 0.0);
        let b = solve(&p, 0.0);
        assert_eq!(a.u_star.to_bits(), b.u_star.to_bits());
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
