//! Small bound-constrained quasi-Newton minimizer.
//!
//! Projected BFGS with an active-set rule on the box faces and an Armijo
//! backtracking search along the projected path. Intended for the handful of
//! kernel hyperparameters, so the inverse-Hessian approximation is kept dense.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the objective changes by less than `f_tol * max(1, |f|)`.
    pub f_tol: f64,
    /// Stop when the projected gradient infinity norm drops below this.
    pub pg_tol: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            f_tol: 1e-6,
            pg_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    Converged,
    IterationLimit,
    /// No descent step could be found; the returned point is the best seen.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct BoxMinimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub status: OptStatus,
}

fn project(x: &mut DVector<f64>, lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn projected_gradient_norm(x: &DVector<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let pg = if x[i] <= lo[i] {
            g[i].min(0.0)
        } else if x[i] >= hi[i] {
            g[i].max(0.0)
        } else {
            g[i]
        };
        m = m.max(pg.abs());
    }
    m
}

/// Minimize `objective` over the box `[lo, hi]` starting from `x0` (clamped).
///
/// `objective` returns the value and gradient; a non-finite value (or an
/// `None`) marks the point as infeasible and the line search backs off.
/// The returned point never has a larger objective than the clamped start.
pub fn minimize_box<F>(mut objective: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: BoxOptions) -> Option<BoxMinimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n);
    let mut x = DVector::from_column_slice(x0);
    project(&mut x, lo, hi);

    let eval = |f: &mut F, x: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let (v, g) = f(x.as_slice())?;
        if v.is_finite() && g.iter().all(|g| g.is_finite()) {
            Some((v, DVector::from_vec(g)))
        } else {
            None
        }
    };

    let (mut fx, mut gx) = eval(&mut objective, &x)?;
    let f_initial = fx;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut status = OptStatus::IterationLimit;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if projected_gradient_norm(&x, &gx, lo, hi) < opts.pg_tol {
            status = OptStatus::Converged;
            break;
        }

        // Variables pinned at a face with the gradient pushing outward stay fixed.
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && gx[i] > 0.0) || (x[i] >= hi[i] && gx[i] < 0.0)))
            .collect();

        let mut reset = false;
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = DVector::zeros(n);
            for i in 0..n {
                if !free[i] {
                    continue;
                }
                for j in 0..n {
                    if free[j] {
                        d[i] -= h[(i, j)] * gx[j];
                    }
                }
            }
            if d.dot(&gx) >= 0.0 || attempt == 1 {
                h = DMatrix::identity(n, n);
                reset = true;
                d = DVector::from_fn(n, |i, _| if free[i] { -gx[i] } else { 0.0 });
            }

            let mut step = 1.0;
            for _ in 0..40 {
                let mut xt = &x + &d * step;
                project(&mut xt, lo, hi);
                let dx = &xt - &x;
                if dx.amax() == 0.0 {
                    break;
                }
                if let Some((ft, gt)) = eval(&mut objective, &xt) {
                    if ft <= fx + 1e-4 * gx.dot(&dx) {
                        accepted = Some((xt, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() || reset {
                break;
            }
        }

        let Some((xn, fnew, gnew)) = accepted else {
            status = if projected_gradient_norm(&x, &gx, lo, hi) < opts.pg_tol.max(1e-6) {
                OptStatus::Converged
            } else {
                OptStatus::LineSearchFailed
            };
            break;
        };

        let s = &xn - &x;
        let y = &gnew - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let ident = DMatrix::<f64>::identity(n, n);
            let left = &ident - &s * y.transpose() * rho;
            let right = &ident - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }

        let df = fx - fnew;
        x = xn;
        fx = fnew;
        gx = gnew;
        if df.abs() < opts.f_tol * fx.abs().max(1.0) {
            status = OptStatus::Converged;
            break;
        }
    }

    Some(BoxMinimum {
        x: x.as_slice().to_vec(),
        f: fx,
        f_initial,
        iterations,
        status,
    })
}
