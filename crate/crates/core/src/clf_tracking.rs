//! Exponentially stabilizing control Lyapunov function for speed tracking.
//!
//! `V = (v - v_d)^2`. The per-step decay condition `V(x+) - V(x) + c_v V(x) <= iota`
//! is made robust over the velocity-channel disturbance interval, which gives
//! `(|c0 + c1 u| + c sigma_v)^2 - (1 - c_v) V(x) <= iota`.

use serde::{Deserialize, Serialize};

use crate::disturbance_learner::DisturbanceEstimate;
use crate::error::{Error, Result};
use crate::plant_sim::EV_V;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityClf {
    pub v_d: f64,
    pub c_v: f64,
}

impl VelocityClf {
    pub fn new(v_d: f64, c_v: f64) -> Result<Self> {
        if !(c_v > 0.0 && c_v <= 1.0) {
            return Err(Error::InvalidParameter(format!("c_v = {c_v} must lie in (0, 1]")));
        }
        if !v_d.is_finite() {
            return Err(Error::InvalidParameter("v_d must be finite".into()));
        }
        Ok(Self { v_d, c_v })
    }

    pub fn v_eval(&self, v: f64) -> f64 {
        let e = v - self.v_d;
        e * e
    }

    /// Smallest `iota` that certifies the step `v_now -> v_next`.
    pub fn clf_violation(&self, v_now: f64, v_next: f64) -> f64 {
        let v0 = self.v_eval(v_now);
        (self.v_eval(v_next) - v0) + self.c_v * v0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfQuadratic {
    /// Next-step velocity error at zero control, shifted by the disturbance mean.
    pub c0: f64,
    /// Next-step velocity per unit control.
    pub c1: f64,
    pub sigma_v: f64,
    pub c: f64,
    pub v_now_err_sq: f64,
    pub c_v: f64,
}

impl ClfQuadratic {
    /// Worst-case absolute next-step velocity error over the disturbance interval.
    pub fn worst_error(&self, u: f64) -> f64 {
        (self.c0 + self.c1 * u).abs() + self.c * self.sigma_v
    }

    /// Constraint function with `iota = 0`; the step is certified when `<= 0`.
    pub fn g0(&self, u: f64) -> f64 {
        let e = self.worst_error(u);
        e * e - (1.0 - self.c_v) * self.v_now_err_sq
    }

    pub fn g(&self, u: f64, iota: f64) -> f64 {
        self.g0(u) - iota
    }

    /// Derivative of `g0`, taking the right derivative at the kink `c0 + c1 u = 0`.
    pub fn dg0(&self, u: f64) -> f64 {
        let e = self.c0 + self.c1 * u;
        let s = if e > 0.0 || (e == 0.0 && self.c1 > 0.0) { 1.0 } else { -1.0 };
        2.0 * self.worst_error(u) * s * self.c1
    }

    /// Control at which the mean next-step error is zero.
    pub fn kink(&self) -> Option<f64> {
        (self.c1 != 0.0).then(|| -self.c0 / self.c1)
    }

    /// Controls where `g0` changes sign, in increasing order.
    pub fn roots(&self) -> Vec<f64> {
        let r = (1.0 - self.c_v) * self.v_now_err_sq;
        let need = r.max(0.0).sqrt() - self.c * self.sigma_v;
        if need < 0.0 || self.c1 == 0.0 {
            return Vec::new();
        }
        let mut out = vec![(need - self.c0) / self.c1, (-need - self.c0) / self.c1];
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn is_finite(&self) -> bool {
        [self.c0, self.c1, self.sigma_v, self.c, self.v_now_err_sq, self.c_v].iter().all(|v| v.is_finite())
    }
}

/// Robust CLF constraint for one step.
///
/// `v_nominal_next` is the disturbance-free next velocity at zero control and
/// `u_gain` the next velocity per unit control.
pub fn build_clf_quadratic(clf: &VelocityClf, v_now: f64, v_nominal_next: f64, u_gain: f64, mu_v: f64, sigma_v: f64, c: f64) -> ClfQuadratic {
    ClfQuadratic {
        c0: v_nominal_next + mu_v - clf.v_d,
        c1: u_gain,
        sigma_v,
        c,
        v_now_err_sq: clf.v_eval(v_now),
        c_v: clf.c_v,
    }
}

/// [`build_clf_quadratic`] reading the EV velocity from joint-state vectors.
pub fn build_clf_from_joint(clf: &VelocityClf, x: &[f64], nominal_next: &[f64], u_channel: &[f64], est: &DisturbanceEstimate, c: f64) -> ClfQuadratic {
    build_clf_quadratic(clf, x[EV_V], nominal_next[EV_V], u_channel[EV_V], est.mu[EV_V], est.sigma[EV_V], c)
}
