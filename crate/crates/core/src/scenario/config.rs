use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::disturbance_learner::LearnerConfig;
use crate::error::{Error, Result};
use crate::plant_sim::{Discretization, EvParams, EvState, HvParams, HvState, LeaderProfile, RoadProfile};
use crate::qp_controller::{DEFAULT_LAMBDA_IOTA, DEFAULT_LAMBDA_ZETA};
use crate::safety_barrier::{RobustNorm, CBF_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Class-K rate of both barriers.
    pub alpha: f64,
    /// Confidence multiplier on the learned disturbance spread.
    pub c: f64,
    pub c_v: f64,
    pub lambda_zeta: f64,
    pub lambda_iota: f64,
    /// Minimum spacing to the front vehicle (m).
    pub d1: f64,
    /// Maximum spacing to the front vehicle (m).
    pub d2: f64,
    pub v_d: f64,
    pub margin: f64,
    pub robust_norm: RobustNorm,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            c: 3.0,
            c_v: 0.8,
            lambda_zeta: DEFAULT_LAMBDA_ZETA,
            lambda_iota: DEFAULT_LAMBDA_IOTA,
            d1: 25.0,
            d2: 100.0,
            v_d: 20.0,
            margin: CBF_MARGIN,
            robust_norm: RobustNorm::WeightedL1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStates {
    /// `[p, v]` of the ego vehicle.
    pub ev: [f64; 2],
    /// `[s, v]` of HV1 (leader) through HV4.
    pub hvs: [[f64; 2]; 4],
}

impl Default for InitialStates {
    fn default() -> Self {
        Self {
            ev: [25.0, 18.0],
            hvs: [[240.0, 18.0], [180.0, 18.0], [120.0, 18.0], [0.0, 18.0]],
        }
    }
}

impl InitialStates {
    pub fn ev_state(&self) -> EvState {
        EvState {
            p: self.ev[0],
            v: self.ev[1],
        }
    }

    pub fn hv_states(&self) -> [HvState; 4] {
        self.hvs.map(|[s, v]| HvState { s, v })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Simulated seconds.
    pub duration: f64,
    /// Control and simulation period (s).
    pub ts: f64,
    pub seed: u64,
    pub discretization: Discretization,
    /// Apply drag, rolling resistance and grade in the plant.
    pub disturbances: bool,
    /// Add white measurement noise with the learner's `sigma_noise`.
    pub noise: bool,
    pub initial: InitialStates,
    pub ev: EvParams,
    pub hv: HvParams,
    pub road: RoadProfile,
    pub leader: LeaderProfile,
    pub controller: ControllerConfig,
    pub learner: LearnerConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 15.0,
            ts: 0.02,
            seed: 0,
            discretization: Discretization::SemiImplicitEuler,
            disturbances: true,
            noise: true,
            initial: InitialStates::default(),
            ev: EvParams::default(),
            hv: HvParams::default(),
            road: RoadProfile::default(),
            leader: LeaderProfile::default(),
            controller: ControllerConfig::default(),
            learner: LearnerConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Default scenario with the ego vehicle starting at `[p, v]`.
    pub fn with_ev(p: f64, v: f64) -> Self {
        let mut cfg = Self::default();
        cfg.initial.ev = [p, v];
        cfg
    }

    /// No plant disturbance, no measurement noise and no learning.
    pub fn deterministic(mut self) -> Self {
        self.disturbances = false;
        self.noise = false;
        self.learner.enabled = false;
        self
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }

    /// Learner settings with the controller's confidence multiplier applied.
    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            c: self.controller.c,
            ..self.learner.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration = {} must be positive", self.duration));
        }
        if !(self.ts > 0.0 && self.ts <= self.duration) {
            return bad(format!("ts = {} must be positive and not exceed the duration", self.ts));
        }
        let c = &self.controller;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return bad(format!("controller.alpha = {} must lie in (0, 1)", c.alpha));
        }
        if !(c.c > 0.0 && c.c.is_finite()) {
            return bad(format!("controller.c = {} must be positive", c.c));
        }
        if !(c.c_v > 0.0 && c.c_v <= 1.0) {
            return bad(format!("controller.c_v = {} must lie in (0, 1]", c.c_v));
        }
        if !(c.lambda_zeta > c.lambda_iota && c.lambda_iota > 0.0 && c.lambda_zeta.is_finite()) {
            return bad(format!(
                "controller weights need lambda_zeta ({}) > lambda_iota ({}) > 0",
                c.lambda_zeta, c.lambda_iota
            ));
        }
        if !(c.d1 < c.d2) {
            return bad(format!("controller.d1 = {} must be below controller.d2 = {}", c.d1, c.d2));
        }
        if !(c.margin >= 0.0 && c.v_d.is_finite()) {
            return bad("controller.margin must be >= 0 and v_d finite".into());
        }
        let states = self.initial.ev.iter().chain(self.initial.hvs.iter().flatten());
        if states.clone().any(|v| !v.is_finite()) {
            return bad("initial states must be finite".into());
        }
        self.ev.validate()?;
        self.hv.validate()?;
        self.road.validate()?;
        self.leader.validate(self.hv.v_max)?;
        self.learner_config().validate()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Read, parse and validate a scenario file. Missing keys take defaults,
/// unknown keys are rejected.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_scenario(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.steps(), 750);
        assert_eq!(cfg.learner.budget, 20);
        assert_eq!(cfg.learner.sigma_noise, 1e-6);
        assert_eq!(cfg.controller.v_d, 20.0);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let err = ScenarioConfig::from_toml_str("[controller]\nalpha = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ScenarioConfig::from_toml_str("duration = 10.0\n\n[controller]\nalpah = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") || msg.contains("4 |"), "{msg}");
        assert!(msg.contains("alpah"));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::with_ev(110.0, 18.0);
        cfg.seed = 42;
        cfg.controller.robust_norm = RobustNorm::WeightedL2;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = ScenarioConfig::from_toml_str("[initial]\nev = [110.0, 18.0]\n[learner]\nbudget = 40\n").unwrap();
        assert_eq!(cfg.initial.ev, [110.0, 18.0]);
        assert_eq!(cfg.initial.hvs, InitialStates::default().hvs);
        assert_eq!(cfg.learner.budget, 40);
        assert_eq!(cfg.learner.reoptimize_period, 50);
    }
}
