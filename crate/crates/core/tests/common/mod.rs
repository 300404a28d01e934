//! Instance generators and a brute-force oracle shared by the integration tests.
#![allow(dead_code)]

use failop_core::clf_tracking::ClfQuadratic;
use failop_core::qp_controller::ControlProblem;
use failop_core::safety_barrier::{CbfConstraintRow, CbfDiagnostics};
use rand::Rng;

pub const ORACLE_GRID: usize = 100_000;

pub fn row(coef_u: f64, rhs: f64) -> CbfConstraintRow {
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

fn log_uniform<R: Rng>(rng: &mut R, lo_exp: f64, hi_exp: f64) -> f64 {
    10f64.powf(rng.random_range(lo_exp..hi_exp))
}

fn signed<R: Rng>(rng: &mut R, v: f64) -> f64 {
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn random_clf<R: Rng>(rng: &mut R, u_max: f64) -> ClfQuadratic {
    let mag = log_uniform(rng, -6.0, -4.0);
    let c1 = signed(rng, mag);
    let kink = rng.random_range(-1.5..1.5) * u_max;
    ClfQuadratic {
        c0: -c1 * kink,
        c1,
        sigma_v: if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..0.05) },
        c: 3.0,
        v_now_err_sq: rng.random_range(0.0..9.0),
        c_v: rng.random_range(0.1..=1.0),
    }
}

/// A control problem shaped like the cruise-control workload: zero to three
/// barrier rows with roots inside or outside the box, an optional CLF and
/// penalty weights spread over many decades.
pub fn random_problem<R: Rng>(rng: &mut R) -> ControlProblem {
    let u_max = rng.random_range(500.0..6000.0);
    let lo = if rng.random_bool(0.8) { -u_max } else { -rng.random_range(100.0..u_max) };
    let n_rows = rng.random_range(0..=3);
    let rows = (0..n_rows)
        .map(|_| {
            if rng.random_bool(0.05) {
                // control cannot move this barrier
                return row(0.0, rng.random_range(-1.0..1.0));
            }
            let mag = log_uniform(rng, -7.0, -3.0);
            let coef = signed(rng, mag);
            let root = rng.random_range(-1.5..1.5) * u_max;
            row(coef, coef * root)
        })
        .collect();
    let clf = rng.random_bool(0.7).then(|| random_clf(rng, u_max));
    let z_exp = rng.random_range(6.0..30.0);
    let i_exp = rng.random_range(2.0..z_exp - 1.0);
    ControlProblem {
        cbf_rows: rows,
        clf,
        u_bounds: [lo, u_max],
        lambda_zeta: 10f64.powf(z_exp),
        lambda_iota: 10f64.powf(i_exp),
    }
}

/// One barrier row pulling the control down and a CLF that pulls it up.
pub fn conflict_problem<R: Rng>(rng: &mut R) -> ControlProblem {
    let u_max = rng.random_range(1000.0..6000.0);
    let mut clf = random_clf(rng, u_max);
    clf.c1 = log_uniform(rng, -6.0, -4.0);
    let kink = rng.random_range(0.2..0.9) * u_max;
    clf.c0 = -clf.c1 * kink;
    clf.v_now_err_sq = 0.0;
    // the barrier wants u well below the CLF target
    let coef = -log_uniform(rng, -7.0, -3.0);
    let root = rng.random_range(-0.9..0.1) * u_max;
    let z_exp = rng.random_range(4.0..20.0);
    ControlProblem {
        cbf_rows: vec![row(coef, coef * root)],
        clf: Some(clf),
        u_bounds: [-u_max, u_max],
        lambda_zeta: 10f64.powf(z_exp),
        lambda_iota: 10f64.powf(z_exp - rng.random_range(1.0..4.0)),
    }
}

/// Worst-case CLF constraint by enumerating the two interval endpoints.
fn clf_g0(q: &ClfQuadratic, u: f64) -> f64 {
    let base = q.c0 + q.c1 * u;
    let worst = [base - q.c * q.sigma_v, base + q.c * q.sigma_v]
        .iter()
        .map(|e| e * e)
        .fold(0.0, f64::max);
    worst - (1.0 - q.c_v) * q.v_now_err_sq
}

/// Objective with optimal slacks, written out from the row data.
pub fn objective(p: &ControlProblem, u: f64) -> f64 {
    variable_part(p, u) + constant_part(p)
}

/// Penalty of rows the control cannot move. It can exceed `u^2` by thirty
/// orders of magnitude, so the search leaves it out.
fn constant_part(p: &ControlProblem) -> f64 {
    p.cbf_rows.iter().filter(|r| r.coef_u == 0.0).map(|r| p.lambda_zeta * r.rhs.max(0.0).powi(2)).sum()
}

fn variable_part(p: &ControlProblem, u: f64) -> f64 {
    let rows: f64 = p
        .cbf_rows
        .iter()
        .filter(|r| r.coef_u != 0.0)
        .map(|r| (r.rhs - r.coef_u * u).max(0.0).powi(2))
        .sum();
    let iota = p.clf.as_ref().map_or(0.0, |q| clf_g0(q, u).max(0.0));
    u * u + p.lambda_zeta * rows + p.lambda_iota * iota * iota
}

/// Dense grid followed by golden-section polishing around the best point.
pub fn oracle(p: &ControlProblem) -> (f64, f64) {
    let [lo, hi] = p.u_bounds;
    let step = (hi - lo) / ORACLE_GRID as f64;
    let mut best = (lo, variable_part(p, lo));
    for i in 1..=ORACLE_GRID {
        let u = lo + step * i as f64;
        let f = variable_part(p, u);
        if f < best.1 {
            best = (u, f);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if variable_part(p, c) <= variable_part(p, d) {
            b = d;
        } else {
            a = c;
        }
    }
    let polished = 0.5 * (a + b);
    let f = variable_part(p, polished);
    let u = if f < best.1 { polished } else { best.0 };
    (u, objective(p, u))
}

/// Relative objective gap, guarded against zero optima.
pub fn rel_gap(f: f64, f_ref: f64) -> f64 {
    (f - f_ref) / f_ref.abs().max(1e-9)
}
