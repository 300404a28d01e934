//! Exact Gaussian-process regression for one scalar disturbance channel.
//!
//! The model keeps the kernel matrix `K` of its training inputs together with
//! an explicitly maintained inverse of `K + s I`, where `s` is the noise
//! variance (plus an optional jitter). Keeping the inverse rather than a
//! factorization lets [`crate::incremental_gp`] swap points in O(N^2).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{minimize_box, BoxOptions, OptStatus};

pub const DEFAULT_THETA_BOUNDS: [f64; 2] = [1e-3, 1e3];
pub const DEFAULT_L_BOUNDS: [f64; 2] = [1e-2, 1e2];

/// Variances below this (in magnitude) are treated as round-off and clamped to zero.
pub const VARIANCE_CLAMP: f64 = 1e-10;

/// Squared-exponential kernel `theta_f * exp(-|x - x'|^2 / l_f^2)` with box bounds
/// for hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernelParams {
    pub theta_f: f64,
    pub l_f: f64,
    pub theta_bounds: [f64; 2],
    pub l_bounds: [f64; 2],
}

impl RbfKernelParams {
    pub fn new(theta_f: f64, l_f: f64) -> Result<Self> {
        Self::with_bounds(theta_f, l_f, DEFAULT_THETA_BOUNDS, DEFAULT_L_BOUNDS)
    }

    pub fn with_bounds(theta_f: f64, l_f: f64, theta_bounds: [f64; 2], l_bounds: [f64; 2]) -> Result<Self> {
        let p = Self {
            theta_f,
            l_f,
            theta_bounds,
            l_bounds,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let [tmin, tmax] = self.theta_bounds;
        let [lmin, lmax] = self.l_bounds;
        if !(tmin > 0.0 && tmin <= tmax && tmax.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta bounds [{tmin}, {tmax}] must satisfy 0 < min <= max")));
        }
        if !(lmin > 0.0 && lmin <= lmax && lmax.is_finite()) {
            return Err(Error::InvalidParameter(format!("length-scale bounds [{lmin}, {lmax}] must satisfy 0 < min <= max")));
        }
        if !(self.theta_f >= tmin && self.theta_f <= tmax) {
            return Err(Error::InvalidParameter(format!("theta_f = {} outside [{tmin}, {tmax}]", self.theta_f)));
        }
        if !(self.l_f >= lmin && self.l_f <= lmax) {
            return Err(Error::InvalidParameter(format!("l_f = {} outside [{lmin}, {lmax}]", self.l_f)));
        }
        Ok(())
    }

    /// Kernel value without dimension checking.
    #[inline]
    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> f64 {
        debug_assert_eq!(x1.len(), x2.len());
        self.theta_f * (-squared_distance(x1, x2) / (self.l_f * self.l_f)).exp()
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn rbf_eval(params: &RbfKernelParams, x1: &[f64], x2: &[f64]) -> Result<f64> {
    check_dim(x1.len(), x2.len())?;
    Ok(params.eval(x1, x2))
}

pub fn build_kernel_matrix(params: &RbfKernelParams, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = xs.first().ok_or(Error::Empty("kernel matrix needs at least one point"))?;
    for x in xs {
        check_dim(first.len(), x.len())?;
    }
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.theta_f;
        for j in 0..i {
            let v = params.eval(&xs[i], &xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Index-aligned training inputs and residual observations, capped at `budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpDataset {
    pub(crate) xs: Vec<Vec<f64>>,
    pub(crate) ys: Vec<f64>,
    pub(crate) budget: usize,
}

impl GpDataset {
    pub fn new(budget: usize) -> Self {
        Self {
            xs: Vec::with_capacity(budget),
            ys: Vec::with_capacity(budget),
            budget,
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn dim(&self) -> Option<usize> {
        self.xs.first().map(Vec::len)
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPosterior {
    pub mean: f64,
    pub std: f64,
}

impl GpPosterior {
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub(crate) params: RbfKernelParams,
    pub(crate) data: GpDataset,
    /// Raw kernel matrix, no noise on the diagonal.
    pub(crate) k: DMatrix<f64>,
    /// Inverse of `k + noise_var() * I`.
    pub(crate) k_inv: DMatrix<f64>,
    /// `k_inv * y`, cached for O(N) means.
    pub(crate) alpha: DVector<f64>,
    pub(crate) sigma_noise: f64,
    pub(crate) jitter: f64,
}

#[derive(Debug, Clone)]
pub struct HyperOptOutcome {
    pub params: RbfKernelParams,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub status: OptStatus,
}

impl HyperOptOutcome {
    /// True when the optimizer stopped on its iteration cap or a failed line search.
    pub fn degraded(&self) -> bool {
        self.status != OptStatus::Converged
    }
}

impl GpModel {
    pub fn new(params: RbfKernelParams, sigma_noise: f64, budget: usize) -> Result<Self> {
        params.validate()?;
        if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma_noise = {sigma_noise} must be finite and >= 0")));
        }
        if budget == 0 {
            return Err(Error::InvalidParameter("budget must be positive".into()));
        }
        Ok(Self {
            params,
            data: GpDataset::new(budget),
            k: DMatrix::zeros(0, 0),
            k_inv: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            sigma_noise,
            jitter: 0.0,
        })
    }

    /// Batch construction with an O(N^3) inverse.
    pub fn from_data(params: RbfKernelParams, sigma_noise: f64, budget: usize, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(params, sigma_noise, budget)?;
        check_dim(xs.len(), ys.len())?;
        if xs.len() > budget {
            return Err(Error::InvalidParameter(format!("{} points exceed budget {budget}", xs.len())));
        }
        if let Some(d) = xs.first().map(Vec::len) {
            for x in &xs {
                check_dim(d, x.len())?;
            }
        }
        m.data.xs = xs;
        m.data.ys = ys;
        m.rebuild()?;
        Ok(m)
    }

    /// Extra diagonal variance added to `sigma_noise^2` for conditioning.
    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        self.set_jitter(jitter)?;
        Ok(self)
    }

    pub fn set_jitter(&mut self, jitter: f64) -> Result<()> {
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::InvalidParameter(format!("jitter = {jitter} must be finite and >= 0")));
        }
        self.jitter = jitter;
        self.rebuild()
    }

    pub fn noise_var(&self) -> f64 {
        self.sigma_noise * self.sigma_noise + self.jitter
    }

    pub fn params(&self) -> &RbfKernelParams {
        &self.params
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.data
    }

    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.k_inv
    }

    pub fn sigma_noise(&self) -> f64 {
        self.sigma_noise
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn prior_std(&self) -> f64 {
        self.params.theta_f.sqrt()
    }

    /// Replace the hyperparameters and rebuild `K` and its inverse from scratch.
    pub fn set_params(&mut self, params: RbfKernelParams) -> Result<()> {
        params.validate()?;
        let old = std::mem::replace(&mut self.params, params);
        if let Err(e) = self.rebuild() {
            self.params = old;
            self.rebuild()?;
            return Err(e);
        }
        Ok(())
    }

    /// Recompute `K`, the inverse and the cached weights directly.
    pub fn rebuild(&mut self) -> Result<()> {
        if self.data.is_empty() {
            self.k = DMatrix::zeros(0, 0);
            self.k_inv = DMatrix::zeros(0, 0);
            self.alpha = DVector::zeros(0);
            return Ok(());
        }
        let k = build_kernel_matrix(&self.params, &self.data.xs)?;
        let k_inv = regularized_inverse(&k, self.noise_var())?;
        self.k = k;
        self.k_inv = k_inv;
        self.refresh_alpha();
        Ok(())
    }

    pub(crate) fn refresh_alpha(&mut self) {
        let y = DVector::from_column_slice(&self.data.ys);
        self.alpha = &self.k_inv * y;
    }

    /// `max |(K + s I) K_inv - I|`, the consistency measure of the maintained inverse.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let mut a = self.k.clone();
        for i in 0..n {
            a[(i, i)] += self.noise_var();
        }
        let mut r = a * &self.k_inv;
        for i in 0..n {
            r[(i, i)] -= 1.0;
        }
        r.amax()
    }

    pub fn kernel_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.data.xs.iter().map(|xi| self.params.eval(xi, x)))
    }

    pub fn posterior(&self, x_star: &[f64]) -> Result<GpPosterior> {
        let prior = self.params.theta_f;
        let Some(d) = self.data.dim() else {
            return Ok(GpPosterior {
                mean: 0.0,
                std: prior.sqrt(),
            });
        };
        check_dim(d, x_star.len())?;
        let kv = self.kernel_vector(x_star);
        let mean = kv.dot(&self.alpha);
        let quad = (&self.k_inv * &kv).dot(&kv);
        let mut var = prior - quad;
        if var < 0.0 {
            if var < -VARIANCE_CLAMP {
                return Err(Error::Numerical(format!("posterior variance {var:e} is negative beyond round-off")));
            }
            var = 0.0;
        }
        Ok(GpPosterior { mean, std: var.sqrt() })
    }

    /// Objective of the hyperparameter search at the current parameters.
    pub fn neg_log_marginal_likelihood(&self) -> Result<f64> {
        neg_log_marginal_likelihood(&self.params, &self.data.xs, &self.data.ys)
    }

    /// `0.5 * log det(I + K / sigma_noise^2)` on the current training inputs.
    pub fn information_gain(&self) -> Result<f64> {
        let n = self.len();
        if n == 0 {
            return Ok(0.0);
        }
        if self.sigma_noise <= 0.0 {
            return Err(Error::InvalidParameter("information gain needs sigma_noise > 0".into()));
        }
        let s2 = self.sigma_noise * self.sigma_noise;
        let mut a = &self.k / s2;
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numerical("I + K/sigma^2 not positive definite".into()))?;
        let logdet: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(0.5 * logdet)
    }

    /// Bound-constrained minimization of the negative log marginal likelihood
    /// over `(theta_f, l_f)`, searched in log coordinates from the current values.
    pub fn optimize_hyperparameters(&self) -> Result<HyperOptOutcome> {
        if self.is_empty() {
            return Err(Error::Empty("hyperparameter optimization needs data"));
        }
        optimize_hyperparameters(&self.params, &self.data.xs, &self.data.ys)
    }
}

/// Inverse of `k + noise_var * I` via Cholesky, symmetrized.
pub fn regularized_inverse(k: &DMatrix<f64>, noise_var: f64) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += noise_var;
    }
    let inv = match a.clone().cholesky() {
        Some(c) => c.inverse(),
        None => a
            .try_inverse()
            .ok_or_else(|| Error::Numerical("regularized kernel matrix is singular".into()))?,
    };
    let sym = (&inv + inv.transpose()) * 0.5;
    if sym.iter().all(|v| v.is_finite()) {
        Ok(sym)
    } else {
        Err(Error::Numerical("non-finite entries in kernel inverse".into()))
    }
}

/// `0.5 y^T A^{-1} y + 0.5 log|A| + (N/2) log 2 pi` with `A = K + theta_f^2 I`.
pub fn neg_log_marginal_likelihood(params: &RbfKernelParams, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
    check_dim(xs.len(), ys.len())?;
    nlml_and_gradient(params.theta_f, params.l_f, xs, ys, false)
        .map(|(f, _)| f)
        .ok_or_else(|| Error::Numerical("marginal-likelihood matrix not positive definite".into()))
}

/// Value and gradient with respect to `(theta_f, l_f)`.
pub(crate) fn nlml_and_gradient(theta: f64, l: f64, xs: &[Vec<f64>], ys: &[f64], with_grad: bool) -> Option<(f64, [f64; 2])> {
    let n = xs.len();
    if n == 0 {
        return Some((0.0, [0.0, 0.0]));
    }
    let mut r2 = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let d2 = squared_distance(&xs[i], &xs[j]);
            let v = theta * (-d2 / (l * l)).exp();
            r2[(i, j)] = d2;
            r2[(j, i)] = d2;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let kmat = a.clone();
    for i in 0..n {
        a[(i, i)] += theta * theta;
    }
    let chol = a.cholesky()?;
    let y = DVector::from_column_slice(ys);
    let alpha = chol.solve(&y);
    let logdet: f64 = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    let f = 0.5 * y.dot(&alpha) + 0.5 * logdet + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !f.is_finite() {
        return None;
    }
    if !with_grad {
        return Some((f, [0.0, 0.0]));
    }
    let a_inv = chol.inverse();
    // W = A^{-1} - alpha alpha^T ; dNLL/dp = 0.5 tr(W dA/dp)
    let w = &a_inv - &alpha * alpha.transpose();
    let mut g_theta = 0.0;
    let mut g_l = 0.0;
    for i in 0..n {
        for j in 0..n {
            let kij = kmat[(i, j)];
            let mut d_theta = kij / theta;
            if i == j {
                d_theta += 2.0 * theta;
            }
            let d_l = kij * 2.0 * r2[(i, j)] / (l * l * l);
            g_theta += w[(j, i)] * d_theta;
            g_l += w[(j, i)] * d_l;
        }
    }
    Some((f, [0.5 * g_theta, 0.5 * g_l]))
}

pub fn optimize_hyperparameters(params: &RbfKernelParams, xs: &[Vec<f64>], ys: &[f64]) -> Result<HyperOptOutcome> {
    check_dim(xs.len(), ys.len())?;
    params.validate()?;
    let lo = [params.theta_bounds[0].ln(), params.l_bounds[0].ln()];
    let hi = [params.theta_bounds[1].ln(), params.l_bounds[1].ln()];
    let x0 = [params.theta_f.ln(), params.l_f.ln()];
    let objective = |q: &[f64]| {
        let (theta, l) = (q[0].exp(), q[1].exp());
        nlml_and_gradient(theta, l, xs, ys, true).map(|(f, g)| (f, vec![g[0] * theta, g[1] * l]))
    };
    let res = minimize_box(objective, &x0, &lo, &hi, BoxOptions::default())
        .ok_or_else(|| Error::Numerical("marginal likelihood undefined at the initial hyperparameters".into()))?;
    let mut out = *params;
    out.theta_f = res.x[0].exp().clamp(params.theta_bounds[0], params.theta_bounds[1]);
    out.l_f = res.x[1].exp().clamp(params.l_bounds[0], params.l_bounds[1]);
    let objective = neg_log_marginal_likelihood(&out, xs, ys)?;
    let initial_objective = neg_log_marginal_likelihood(params, xs, ys)?;
    if objective > initial_objective {
        // exp/ln round trip moved the point uphill by an ulp; keep the start.
        return Ok(HyperOptOutcome {
            params: *params,
            objective: initial_objective,
            initial_objective,
            iterations: res.iterations,
            status: res.status,
        });
    }
    Ok(HyperOptOutcome {
        params: out,
        objective,
        initial_objective,
        iterations: res.iterations,
        status: res.status,
    })
}
