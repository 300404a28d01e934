use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clf_tracking::{build_clf_from_joint, VelocityClf};
use crate::disturbance_learner::{DisturbanceEstimate, DisturbanceLearner};
use crate::error::Result;
use crate::plant_sim::{Crash, JointState, World, WorldConfig, EV_V};
use crate::qp_controller::{solve, ControlProblem, SolveStatus};
use crate::safety_barrier::{build_cbf_row, AffineBarrier};

use super::config::ScenarioConfig;
use super::metrics::{compute_metrics, EpisodeMetrics, MetricParams};

/// One control tick: the state at the start of the tick and what was decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub t: f64,
    pub ev_p: f64,
    pub ev_v: f64,
    pub hv1_s: f64,
    pub hv1_v: f64,
    pub hv2_s: f64,
    pub hv2_v: f64,
    pub hv3_s: f64,
    pub hv3_v: f64,
    pub hv4_s: f64,
    pub hv4_v: f64,
    pub u: f64,
    pub zeta: f64,
    pub iota: f64,
    pub h1: f64,
    pub h2: f64,
    pub v_lyap: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub mu_ev_p: f64,
    pub mu_ev_v: f64,
    pub mu_hv3_s: f64,
    pub mu_hv3_v: f64,
    pub sigma_ev_p: f64,
    pub sigma_ev_v: f64,
    pub sigma_hv3_s: f64,
    pub sigma_hv3_v: f64,
    /// Realized one-step disturbance per channel, without measurement noise.
    pub w_ev_p: f64,
    pub w_ev_v: f64,
    pub w_hv3_s: f64,
    pub w_hv3_v: f64,
    pub solve_time: f64,
    pub learn_time: f64,
    pub infer_time: f64,
    pub status: SolveStatus,
    /// The step that started here ended in a collision.
    pub crash: bool,
}

impl TraceRecord {
    pub fn mu(&self) -> JointState {
        [self.mu_ev_p, self.mu_ev_v, self.mu_hv3_s, self.mu_hv3_v]
    }

    pub fn sigma(&self) -> JointState {
        [self.sigma_ev_p, self.sigma_ev_v, self.sigma_hv3_s, self.sigma_hv3_v]
    }

    pub fn w_true(&self) -> JointState {
        [self.w_ev_p, self.w_ev_v, self.w_hv3_s, self.w_hv3_v]
    }

    pub fn joint(&self) -> JointState {
        [self.ev_p, self.ev_v, self.hv3_s, self.hv3_v]
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trace: Vec<TraceRecord>,
    pub metrics: EpisodeMetrics,
    pub crash: Option<Crash>,
    pub learner: DisturbanceLearner,
}

/// Closed-loop run: estimate, build constraints, solve, actuate, observe, learn.
pub fn run_episode(cfg: &ScenarioConfig) -> Result<Episode> {
    cfg.validate()?;
    let ctl = &cfg.controller;
    let mut world = World::new(WorldConfig {
        ev0: cfg.initial.ev_state(),
        hv0: cfg.initial.hv_states(),
        road: cfg.road.clone(),
        leader: cfg.leader.clone(),
        ev_params: cfg.ev,
        hv_params: cfg.hv,
        ts: cfg.ts,
        scheme: cfg.discretization,
        disturbances: cfg.disturbances,
        sigma_noise: if cfg.noise { cfg.learner.sigma_noise } else { 0.0 },
        seed: cfg.seed,
    })?;
    let nominal = world.nominal();
    let u_channel = nominal.control_channel();
    let mut learner = DisturbanceLearner::new(cfg.learner_config())?;
    let h1 = AffineBarrier::min_headway(ctl.d1, ctl.alpha)?;
    let h2 = AffineBarrier::max_headway(ctl.d2, ctl.alpha)?;
    let clf = VelocityClf::new(ctl.v_d, ctl.c_v)?;
    let u_max = cfg.ev.u_max();

    let steps = cfg.steps();
    let mut trace = Vec::with_capacity(steps);
    let mut last_u = 0.0;
    let mut crash = None;

    for _ in 0..steps {
        let snap = world.state;
        let x = snap.joint();

        let t0 = Instant::now();
        let est = learner.estimate(&x).to_joint(learner.channels(), x.len());
        let infer_time = t0.elapsed().as_secs_f64();

        let next0 = nominal.joint_next(&snap, 0.0);
        let row1 = build_cbf_row(&h1, &x, &next0, &u_channel, &est, ctl.c, ctl.margin, ctl.robust_norm)?;
        let row2 = build_cbf_row(&h2, &x, &next0, &u_channel, &est, ctl.c, ctl.margin, ctl.robust_norm)?;
        let prob = ControlProblem {
            cbf_rows: vec![row1, row2],
            clf: Some(build_clf_from_joint(&clf, &x, &next0, &u_channel, &est, ctl.c)),
            u_bounds: [-u_max, u_max],
            lambda_zeta: ctl.lambda_zeta,
            lambda_iota: ctl.lambda_iota,
        };
        let sol = solve(&prob, last_u);
        last_u = sol.u_star;

        let report = world.step(sol.u_star);
        let pred = nominal.joint_next(&snap, sol.u_star);
        let truth = world.state.joint();

        let t1 = Instant::now();
        if let Some(obs) = learner.observe(&x, sol.u_star, &report.measured, snap.step, |_, u| nominal.joint_next(&snap, u).to_vec()) {
            let rep = learner.ingest(&obs)?;
            for (ch, e) in &rep.faults {
                log::debug!("step {}: channel {} fault: {e}", snap.step, ch.name());
            }
        }
        let learn_time = t1.elapsed().as_secs_f64();

        trace.push(record(&snap, &x, &sol, &row1, &row2, &clf, &est, &truth, &pred, [sol.solve_time, learn_time, infer_time], report.crash.is_some()));
        if let Some(c) = report.crash {
            log::warn!("collision at t = {:.2} s on gap {}", c.t, c.gap_index);
            crash = Some(c);
            break;
        }
    }

    let metrics = compute_metrics(&trace, &MetricParams::from_config(cfg));
    Ok(Episode {
        trace,
        metrics,
        crash,
        learner,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    snap: &crate::plant_sim::WorldState,
    x: &JointState,
    sol: &crate::qp_controller::ControlSolution,
    row1: &crate::safety_barrier::CbfConstraintRow,
    row2: &crate::safety_barrier::CbfConstraintRow,
    clf: &VelocityClf,
    est: &DisturbanceEstimate,
    truth: &JointState,
    pred: &JointState,
    [solve_time, learn_time, infer_time]: [f64; 3],
    crash: bool,
) -> TraceRecord {
    let h = &snap.hvs;
    let w: Vec<f64> = truth.iter().zip(pred).map(|(a, b)| a - b).collect();
    TraceRecord {
        step: snap.step,
        t: snap.t,
        ev_p: snap.ev.p,
        ev_v: snap.ev.v,
        hv1_s: h[0].s,
        hv1_v: h[0].v,
        hv2_s: h[1].s,
        hv2_v: h[1].v,
        hv3_s: h[2].s,
        hv3_v: h[2].v,
        hv4_s: h[3].s,
        hv4_v: h[3].v,
        u: sol.u_star,
        zeta: sol.zeta_star,
        iota: sol.iota_star,
        h1: row1.diagnostics.h_now,
        h2: row2.diagnostics.h_now,
        v_lyap: clf.v_eval(x[EV_V]),
        eps1: row1.diagnostics.eps_term,
        eps2: row2.diagnostics.eps_term,
        mu_ev_p: est.mu[0],
        mu_ev_v: est.mu[1],
        mu_hv3_s: est.mu[2],
        mu_hv3_v: est.mu[3],
        sigma_ev_p: est.sigma[0],
        sigma_ev_v: est.sigma[1],
        sigma_hv3_s: est.sigma[2],
        sigma_hv3_v: est.sigma[3],
        w_ev_p: w[0],
        w_ev_v: w[1],
        w_hv3_s: w[2],
        w_hv3_v: w[3],
        solve_time,
        learn_time,
        infer_time,
        status: sol.status,
        crash,
    }
}
