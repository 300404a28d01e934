//! Online learning of the unmodelled state disturbance, one budgeted GP per
//! monitored channel of the joint state.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incremental_gp::{incremental_update, ReplacementStrategy, UpdateBudget, UpdateOptions, UpdateOutcome};
use crate::kernel_gp::{GpModel, RbfKernelParams, DEFAULT_L_BOUNDS, DEFAULT_THETA_BOUNDS};
use crate::plant_sim::{EV_P, EV_V, FRONT_S, FRONT_V};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    EvPosition,
    EvVelocity,
    FrontPosition,
    FrontVelocity,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::EvPosition, Channel::EvVelocity, Channel::FrontPosition, Channel::FrontVelocity];

    pub fn joint_index(self) -> usize {
        match self {
            Channel::EvPosition => EV_P,
            Channel::EvVelocity => EV_V,
            Channel::FrontPosition => FRONT_S,
            Channel::FrontVelocity => FRONT_V,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::EvPosition => "ev_p",
            Channel::EvVelocity => "ev_v",
            Channel::FrontPosition => "hv3_s",
            Channel::FrontVelocity => "hv3_v",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub channels: Vec<Channel>,
    pub budget: usize,
    pub sigma_noise: f64,
    /// Confidence multiplier on the posterior std; scenario files set it in
    /// the controller section.
    #[serde(skip)]
    pub c: f64,
    /// Steps between hyperparameter re-optimizations; 0 disables them.
    pub reoptimize_period: usize,
    pub theta_f: f64,
    pub l_f: f64,
    pub theta_bounds: [f64; 2],
    pub l_bounds: [f64; 2],
    /// Diagonal regularization added to the noise variance, relative to `theta_f`.
    pub jitter_rel: f64,
    pub strategy: ReplacementStrategy,
    /// When false, the learner ignores data and reports a zero estimate.
    pub enabled: bool,
    /// Check the maintained inverse after every update and rebuild on drift.
    pub verify: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            channels: Channel::ALL.to_vec(),
            budget: 20,
            sigma_noise: 1e-6,
            c: 3.0,
            reoptimize_period: 50,
            theta_f: 1e-2,
            l_f: 10.0,
            theta_bounds: DEFAULT_THETA_BOUNDS,
            l_bounds: DEFAULT_L_BOUNDS,
            jitter_rel: 3e-4,
            strategy: ReplacementStrategy::Relevance,
            enabled: true,
            verify: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("learner.c = {} must be positive", self.c)));
        }
        if self.budget < 2 {
            return Err(Error::Config(format!("learner.budget = {} must be at least 2", self.budget)));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::Config("learner.sigma_noise must be finite and >= 0".into()));
        }
        if !(self.jitter_rel >= 0.0 && self.jitter_rel.is_finite()) {
            return Err(Error::Config("learner.jitter_rel must be finite and >= 0".into()));
        }
        let mut seen = Vec::new();
        for ch in &self.channels {
            if seen.contains(ch) {
                return Err(Error::Config(format!("learner.channels lists {} twice", ch.name())));
            }
            seen.push(*ch);
        }
        self.kernel().map_err(|e| Error::Config(format!("learner kernel: {e}")))?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<RbfKernelParams> {
        RbfKernelParams::with_bounds(self.theta_f, self.l_f, self.theta_bounds, self.l_bounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualObservation {
    pub x: Vec<f64>,
    /// Measured next state minus nominal prediction, per channel.
    pub w_tilde: Vec<f64>,
    pub timestamp: u64,
}

/// Per-channel posterior, indexed like the learner's channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEstimate {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DisturbanceEstimate {
    pub fn zeros(n: usize) -> Self {
        Self {
            mu: vec![0.0; n],
            sigma: vec![0.0; n],
        }
    }

    /// Scatter into a joint-state-sized estimate; unmonitored entries are zero.
    pub fn to_joint(&self, channels: &[Channel], dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for (i, ch) in channels.iter().enumerate() {
            out.mu[ch.joint_index()] = self.mu[i];
            out.sigma[ch.joint_index()] = self.sigma[i];
        }
        out
    }
}

/// `[mu - c sigma, mu + c sigma]`, elementwise.
pub fn confidence_interval(est: &DisturbanceEstimate, c: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = est.mu.iter().zip(&est.sigma).map(|(m, s)| m - c * s).collect();
    let hi = est.mu.iter().zip(&est.sigma).map(|(m, s)| m + c * s).collect();
    (lo, hi)
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub outcomes: Vec<Option<UpdateOutcome>>,
    pub faults: Vec<(Channel, Error)>,
    pub reoptimized: bool,
}

#[derive(Debug, Clone)]
pub struct DisturbanceLearner {
    cfg: LearnerConfig,
    channels: Vec<Channel>,
    gps: Vec<GpModel>,
    budget: UpdateBudget,
    ingested: u64,
}

impl DisturbanceLearner {
    pub fn new(cfg: LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = cfg.kernel()?;
        let gps = cfg
            .channels
            .iter()
            .map(|_| GpModel::new(kernel, cfg.sigma_noise, cfg.budget)?.with_jitter(cfg.jitter_rel * kernel.theta_f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            budget: UpdateBudget::new(cfg.budget)?,
            channels: cfg.channels.clone(),
            gps,
            cfg,
            ingested: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn gp(&self, i: usize) -> &GpModel {
        &self.gps[i]
    }

    pub fn ingested(&self) -> u64 {
        self.ingested
    }

    /// Drop a channel and its GP.
    pub fn remove_channel(&mut self, ch: Channel) -> Option<GpModel> {
        let i = self.channels.iter().position(|c| *c == ch)?;
        self.channels.remove(i);
        Some(self.gps.remove(i))
    }

    /// Residual of a measured transition against the nominal map `nominal(x, u)`.
    ///
    /// Returns `None` (with a warning) when anything is non-finite.
    pub fn observe<F>(&self, x: &[f64], u: f64, x_next_measured: &[f64], step: u64, nominal: F) -> Option<ResidualObservation>
    where
        F: FnOnce(&[f64], f64) -> Vec<f64>,
    {
        let pred = nominal(x, u);
        let w_tilde: Vec<f64> = self
            .channels
            .iter()
            .map(|ch| {
                let i = ch.joint_index();
                x_next_measured[i] - pred[i]
            })
            .collect();
        if w_tilde.iter().chain(x).any(|v| !v.is_finite()) {
            log::warn!("discarding non-finite observation at step {step}");
            return None;
        }
        Some(ResidualObservation {
            x: x.to_vec(),
            w_tilde,
            timestamp: step,
        })
    }

    /// Add an observation to every channel GP; a fault in one channel does not
    /// block the others.
    pub fn ingest(&mut self, obs: &ResidualObservation) -> Result<IngestReport> {
        if obs.w_tilde.len() != self.channels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.channels.len(),
                got: obs.w_tilde.len(),
            });
        }
        let mut report = IngestReport::default();
        if !self.cfg.enabled {
            return Ok(report);
        }
        let opts = UpdateOptions {
            strategy: self.cfg.strategy,
            relevance: None,
            verify: self.cfg.verify,
        };
        for (i, gp) in self.gps.iter_mut().enumerate() {
            match incremental_update(gp, &obs.x, obs.w_tilde[i], self.budget, opts) {
                Ok(o) => report.outcomes.push(Some(o)),
                Err(e) => {
                    log::debug!("channel {} update skipped: {e}", self.channels[i].name());
                    report.outcomes.push(None);
                    report.faults.push((self.channels[i], e));
                }
            }
        }
        self.ingested += 1;
        let period = self.cfg.reoptimize_period as u64;
        if period > 0 && self.ingested % period == 0 {
            report.reoptimized = true;
            for (i, gp) in self.gps.iter_mut().enumerate() {
                if let Err(e) = reoptimize(gp, self.cfg.jitter_rel) {
                    log::debug!("channel {} hyperparameter search failed: {e}", self.channels[i].name());
                    report.faults.push((self.channels[i], e));
                }
            }
        }
        Ok(report)
    }

    /// Posterior per channel at `x`; zero mean and zero spread when disabled.
    pub fn estimate(&self, x: &[f64]) -> DisturbanceEstimate {
        if !self.cfg.enabled {
            return DisturbanceEstimate::zeros(self.channels.len());
        }
        let mut est = DisturbanceEstimate::zeros(self.channels.len());
        for (i, gp) in self.gps.iter().enumerate() {
            match gp.posterior(x) {
                Ok(p) => {
                    est.mu[i] = p.mean;
                    est.sigma[i] = p.std;
                }
                Err(e) => {
                    log::warn!("channel {} posterior failed, using prior: {e}", self.channels[i].name());
                    est.sigma[i] = gp.prior_std();
                }
            }
        }
        est
    }

    /// Write each channel's retained data as CSV: `step, x..., residual`.
    pub fn dump_datasets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "channel,index,x0,x1,x2,x3,residual")?;
        for (ch, gp) in self.channels.iter().zip(&self.gps) {
            for (j, (x, y)) in gp.dataset().xs().iter().zip(gp.dataset().ys()).enumerate() {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{},{j},{},{y}", ch.name(), xs.join(","))?;
            }
        }
        Ok(())
    }
}

fn reoptimize(gp: &mut GpModel, jitter_rel: f64) -> Result<()> {
    if gp.len() < 2 {
        return Ok(());
    }
    let out = gp.optimize_hyperparameters()?;
    gp.set_params(out.params)?;
    gp.set_jitter(jitter_rel * out.params.theta_f)
}
