//! Ground-truth longitudinal simulation of the ego vehicle (EV) and four
//! human-driven vehicles (HVs) on a single lane.
//!
//! Vehicle order from the front: HV1 (leader, follows a velocity profile),
//! HV2, HV3, EV, HV4. The EV and HV2..HV4 feel aerodynamic drag, rolling
//! resistance and road grade; the controller's nominal model does not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EV_P: usize = 0;
pub const EV_V: usize = 1;
pub const FRONT_S: usize = 2;
pub const FRONT_V: usize = 3;

/// `[p, v, s3, v3]`: EV position/velocity and its front vehicle (HV3).
pub type JointState = [f64; 4];

pub const GRADE_LIMIT_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `p+ = p + Ts v`, `v+ = v + Ts a`. Position does not see the control
    /// within one step.
    ExplicitEuler,
    /// `v+ = v + Ts a`, `p+ = p + Ts v+`.
    #[default]
    SemiImplicitEuler,
}

impl Discretization {
    /// One step of a double integrator with acceleration `a`.
    #[inline]
    pub fn advance(self, pos: f64, vel: f64, a: f64, ts: f64) -> (f64, f64) {
        let v_next = vel + ts * a;
        match self {
            Discretization::ExplicitEuler => (pos + ts * vel, v_next),
            Discretization::SemiImplicitEuler => (pos + ts * v_next, v_next),
        }
    }

    /// Sensitivity of `(pos+, vel+)` to the acceleration.
    pub fn accel_gain(self, ts: f64) -> (f64, f64) {
        match self {
            Discretization::ExplicitEuler => (0.0, ts),
            Discretization::SemiImplicitEuler => (ts * ts, ts),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvParams {
    pub mass: f64,
    pub k_v: f64,
    pub g: f64,
    pub u_frac: f64,
}

impl Default for EvParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            k_v: 0.25,
            g: 9.81,
            u_frac: 0.3,
        }
    }
}

impl EvParams {
    pub fn u_max(&self) -> f64 {
        self.u_frac * self.g * self.mass
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mass", self.mass), ("k_v", self.k_v), ("g", self.g), ("u_frac", self.u_frac)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("ev.{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvState {
    pub p: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvParams {
    /// Gain on the range-policy velocity error (N per m/s).
    pub alpha: f64,
    /// Gain on the velocity difference to the front vehicle (N per m/s).
    pub beta: f64,
    /// Vehicle length, used for headways and crash detection (m).
    pub length: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub v_max: f64,
    /// Converts the control force into acceleration.
    pub mass: f64,
}

impl Default for HvParams {
    fn default() -> Self {
        Self {
            alpha: 30.0,
            beta: 2000.0,
            length: 2.91,
            d_min: 25.0,
            d_max: 100.0,
            v_max: 40.0,
            mass: 1650.0,
        }
    }
}

impl HvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min < self.d_max) {
            return Err(Error::Config(format!("hv.d_min = {} must be below hv.d_max = {}", self.d_min, self.d_max)));
        }
        if !(self.v_max > 0.0 && self.mass > 0.0 && self.length >= 0.0) {
            return Err(Error::Config("hv.v_max and hv.mass must be positive, hv.length non-negative".into()));
        }
        Ok(())
    }

    pub fn range_slope(&self) -> f64 {
        self.v_max / (self.d_max - self.d_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvState {
    pub s: f64,
    pub v: f64,
}

/// Piecewise-linear function of time through `(t, value)` knots, held constant
/// outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear {
    pub knots: Vec<[f64; 2]>,
}

impl PiecewiseLinear {
    pub fn constant(v: f64) -> Self {
        Self { knots: vec![[0.0, v]] }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Config(format!("{what}: at least one knot required")));
        }
        for w in self.knots.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(Error::Config(format!("{what}: knot times must be strictly increasing")));
            }
        }
        if self.knots.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{what}: knots must be finite")));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            let ([t0, v0], [t1, v1]) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1][1]
    }

    pub fn max_abs(&self) -> f64 {
        self.knots.iter().map(|k| k[1].abs()).fold(0.0, f64::max)
    }
}

/// Value `initial` until the first step time, then each step's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConstant {
    pub initial: f64,
    #[serde(default)]
    pub steps: Vec<[f64; 2]>,
}

impl PiecewiseConstant {
    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.initial;
        for [ts, val] in &self.steps {
            if t >= *ts {
                v = *val;
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadProfile {
    /// Road grade in degrees over time.
    pub grade_deg: PiecewiseLinear,
    /// Rolling-resistance coefficient over time.
    pub k_f: PiecewiseConstant,
}

impl Default for RoadProfile {
    fn default() -> Self {
        Self {
            grade_deg: PiecewiseLinear {
                knots: vec![[0.0, 0.0], [2.0, 0.0], [4.0, 4.0], [7.0, 4.0], [9.0, -3.0], [12.0, -3.0], [14.0, 0.0]],
            },
            k_f: PiecewiseConstant {
                initial: 0.06,
                steps: vec![[8.0, 0.1]],
            },
        }
    }
}

impl RoadProfile {
    pub fn flat(k_f: f64) -> Self {
        Self {
            grade_deg: PiecewiseLinear::constant(0.0),
            k_f: PiecewiseConstant {
                initial: k_f,
                steps: vec![],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grade_deg.validate("road.grade_deg")?;
        if self.grade_deg.max_abs() > GRADE_LIMIT_DEG {
            return Err(Error::Config(format!("road.grade_deg exceeds +/-{GRADE_LIMIT_DEG} deg")));
        }
        let mut last = f64::NEG_INFINITY;
        for [t, v] in &self.k_f.steps {
            if !(*t > last) || !(*v >= 0.0) {
                return Err(Error::Config("road.k_f steps need increasing times and non-negative values".into()));
            }
            last = *t;
        }
        if !(self.k_f.initial >= 0.0) {
            return Err(Error::Config("road.k_f.initial must be non-negative".into()));
        }
        Ok(())
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.grade_deg.eval(t).to_radians()
    }

    pub fn k_f(&self, t: f64) -> f64 {
        self.k_f.eval(t)
    }
}

/// Velocity command of the lead vehicle over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeaderProfile(pub PiecewiseLinear);

impl Default for LeaderProfile {
    fn default() -> Self {
        Self(PiecewiseLinear {
            knots: vec![
                [0.0, 18.0],
                [2.0, 18.0],
                [3.0, 21.0],
                [3.5, 21.0],
                [5.0, 15.0],
                [7.0, 15.0],
                [9.0, 20.0],
            ],
        })
    }
}

impl LeaderProfile {
    pub fn velocity(&self, t: f64) -> f64 {
        self.0.eval(t)
    }

    pub fn validate(&self, v_max: f64) -> Result<()> {
        self.0.validate("leader")?;
        if self.0.knots.iter().any(|k| k[1] < 0.0 || k[1] > v_max) {
            return Err(Error::Config(format!("leader velocities must lie in [0, {v_max}]")));
        }
        Ok(())
    }
}

/// Resistance and grade acceleration missing from the nominal model (m/s^2).
pub fn ev_disturbance(v: f64, phi: f64, k_f: f64, params: &EvParams) -> f64 {
    let drag = params.k_v * v * v;
    let rolling = k_f * params.g * params.mass * phi.cos();
    -(drag + rolling) / params.mass - params.g * phi.sin()
}

/// One step of the true EV dynamics. Out-of-range forces are clamped.
pub fn ev_step(state: EvState, u: f64, road: &RoadProfile, t: f64, ts: f64, params: &EvParams, scheme: Discretization) -> EvState {
    let u_max = params.u_max();
    let u = if u.abs() > u_max {
        log::warn!("EV force {u} outside +/-{u_max}, clamping");
        u.clamp(-u_max, u_max)
    } else {
        u
    };
    let a = u / params.mass + ev_disturbance(state.v, road.phi(t), road.k_f(t), params);
    let (p, v) = scheme.advance(state.p, state.v, a, ts);
    EvState { p, v }
}

/// Target velocity from the headway.
pub fn hv_range_policy(d: f64, params: &HvParams) -> f64 {
    if d <= params.d_min {
        0.0
    } else if d >= params.d_max {
        params.v_max
    } else {
        params.range_slope() * (d - params.d_min)
    }
}

pub fn headway(rear: &HvState, front: &HvState, params: &HvParams) -> f64 {
    front.s - rear.s - params.length
}

/// Car-following force of a human driver (N).
pub fn hv_control(state: &HvState, front: &HvState, params: &HvParams) -> f64 {
    let d = headway(state, front, params);
    params.alpha * (hv_range_policy(d, params) - state.v) + params.beta * (front.v - state.v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ev: EvState,
    /// HV1 (leader) through HV4.
    pub hvs: [HvState; 4],
    pub t: f64,
    pub step: u64,
}

impl WorldState {
    pub fn joint(&self) -> JointState {
        [self.ev.p, self.ev.v, self.hvs[2].s, self.hvs[2].v]
    }

    /// Front vehicle of HV `i` (0-based). HV4 follows the EV.
    pub fn front_of(&self, i: usize) -> Option<HvState> {
        match i {
            0 => None,
            3 => Some(HvState {
                s: self.ev.p,
                v: self.ev.v,
            }),
            _ => Some(self.hvs[i - 1]),
        }
    }

    /// Bumper-to-bumper gaps in road order: HV1-HV2, HV2-HV3, HV3-EV, EV-HV4.
    pub fn gaps(&self, length: f64) -> [f64; 4] {
        let h = &self.hvs;
        [
            h[0].s - h[1].s - length,
            h[1].s - h[2].s - length,
            h[2].s - self.ev.p - length,
            self.ev.p - h[3].s - length,
        ]
    }
}

/// Disturbance-free one-step model shared by the controller and the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalModel {
    pub ev: EvParams,
    pub hv: HvParams,
    pub ts: f64,
    pub scheme: Discretization,
}

impl NominalModel {
    pub fn ev_next(&self, ev: EvState, u: f64) -> EvState {
        let (p, v) = self.scheme.advance(ev.p, ev.v, u / self.ev.mass, self.ts);
        EvState { p, v }
    }

    pub fn hv_next(&self, hv: &HvState, front: &HvState) -> HvState {
        let a = hv_control(hv, front, &self.hv) / self.hv.mass;
        let (s, v) = self.scheme.advance(hv.s, hv.v, a, self.ts);
        HvState { s, v }
    }

    /// Predicted joint state after applying `u`.
    pub fn joint_next(&self, world: &WorldState, u: f64) -> JointState {
        let ev = self.ev_next(world.ev, u);
        let hv3 = self.hv_next(&world.hvs[2], &world.hvs[1]);
        [ev.p, ev.v, hv3.s, hv3.v]
    }

    /// `d x_next / d u` over the joint state.
    pub fn control_channel(&self) -> JointState {
        let (gp, gv) = self.scheme.accel_gain(self.ts);
        [gp / self.ev.mass, gv / self.ev.mass, 0.0, 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crash {
    pub step: u64,
    pub t: f64,
    /// Index into [`WorldState::gaps`].
    pub gap_index: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Joint state after the step plus measurement noise.
    pub measured: JointState,
    pub crash: Option<Crash>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub state: WorldState,
    pub road: RoadProfile,
    pub leader: LeaderProfile,
    pub ev_params: EvParams,
    pub hv_params: HvParams,
    pub ts: f64,
    pub scheme: Discretization,
    pub disturbances: bool,
    pub sigma_noise: f64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub ev0: EvState,
    pub hv0: [HvState; 4],
    pub road: RoadProfile,
    pub leader: LeaderProfile,
    pub ev_params: EvParams,
    pub hv_params: HvParams,
    pub ts: f64,
    pub scheme: Discretization,
    pub disturbances: bool,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        if !(cfg.ts > 0.0) {
            return Err(Error::Config(format!("time step {} must be positive", cfg.ts)));
        }
        if !(cfg.sigma_noise >= 0.0 && cfg.sigma_noise.is_finite()) {
            return Err(Error::Config(format!("sigma_noise {} must be finite and >= 0", cfg.sigma_noise)));
        }
        let noise = if cfg.sigma_noise > 0.0 {
            Some(Normal::new(0.0, cfg.sigma_noise).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            state: WorldState {
                ev: cfg.ev0,
                hvs: cfg.hv0,
                t: 0.0,
                step: 0,
            },
            road: cfg.road,
            leader: cfg.leader,
            ev_params: cfg.ev_params,
            hv_params: cfg.hv_params,
            ts: cfg.ts,
            scheme: cfg.scheme,
            disturbances: cfg.disturbances,
            sigma_noise: cfg.sigma_noise,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise,
        })
    }

    pub fn nominal(&self) -> NominalModel {
        NominalModel {
            ev: self.ev_params,
            hv: self.hv_params,
            ts: self.ts,
            scheme: self.scheme,
        }
    }

    fn disturbance_at(&self, v: f64) -> f64 {
        if self.disturbances {
            let t = self.state.t;
            ev_disturbance(v, self.road.phi(t), self.road.k_f(t), &self.ev_params)
        } else {
            0.0
        }
    }

    /// Advance all vehicles by one period with EV force `u_ev`.
    pub fn step(&mut self, u_ev: f64) -> StepReport {
        let s = self.state;
        let ts = self.ts;
        let u_max = self.ev_params.u_max();
        let u_ev = if u_ev.abs() > u_max {
            log::warn!("EV force {u_ev} outside +/-{u_max}, clamping");
            u_ev.clamp(-u_max, u_max)
        } else {
            u_ev
        };

        let mut hvs = s.hvs;
        let v_lead = self.leader.velocity(s.t + ts);
        hvs[0] = match self.scheme {
            Discretization::ExplicitEuler => HvState {
                s: s.hvs[0].s + ts * s.hvs[0].v,
                v: v_lead,
            },
            Discretization::SemiImplicitEuler => HvState {
                s: s.hvs[0].s + ts * v_lead,
                v: v_lead,
            },
        };
        for i in 1..4 {
            let front = s.front_of(i).expect("followers have a front vehicle");
            let a = hv_control(&s.hvs[i], &front, &self.hv_params) / self.hv_params.mass + self.disturbance_at(s.hvs[i].v);
            let (pos, vel) = self.scheme.advance(s.hvs[i].s, s.hvs[i].v, a, ts);
            hvs[i] = HvState { s: pos, v: vel };
        }
        let a_ev = u_ev / self.ev_params.mass + self.disturbance_at(s.ev.v);
        let (p, v) = self.scheme.advance(s.ev.p, s.ev.v, a_ev, ts);

        self.state = WorldState {
            ev: EvState { p, v },
            hvs,
            t: (s.step + 1) as f64 * ts,
            step: s.step + 1,
        };

        let mut measured = self.state.joint();
        if let Some(dist) = self.noise {
            for m in measured.iter_mut() {
                *m += dist.sample(&mut self.rng);
            }
        }

        let crash = self
            .state
            .gaps(self.hv_params.length)
            .iter()
            .enumerate()
            .find(|(_, g)| **g <= 0.0)
            .map(|(i, g)| Crash {
                step: self.state.step,
                t: self.state.t,
                gap_index: i,
                gap: *g,
            });
        StepReport { measured, crash }
    }
}
