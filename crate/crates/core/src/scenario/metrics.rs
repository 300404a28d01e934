use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::ScenarioConfig;
use super::episode::TraceRecord;
use crate::qp_controller::SolveStatus;

/// Tolerance below zero still counted as safe once a barrier has recovered.
pub const RECOVERY_TOL: f64 = 1e-6;
/// Speed band around `v_d` for the settling time (m/s).
pub const SETTLE_BAND: f64 = 0.5;
/// Time the speed must stay in the band (s).
pub const SETTLE_HOLD: f64 = 2.0;
/// Front-vehicle acceleration magnitude that marks a leader-induced transient (m/s^2).
pub const TRANSIENT_ACCEL: f64 = 1.0;
/// Time a transient flag persists after the acceleration subsides (s).
pub const TRANSIENT_HOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub ts: f64,
    pub v_d: f64,
    pub d1: f64,
    pub d2: f64,
}

impl MetricParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            ts: cfg.ts,
            v_d: cfg.controller.v_d,
            d1: cfg.controller.d1,
            d2: cfg.controller.d2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseStats {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

impl PhaseStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p50: percentile(&s, 0.5),
            p99: percentile(&s, 0.99),
            max: s[s.len() - 1],
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn inf_as_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn null_as_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub steps: usize,
    /// First time after which `h1` stays nonnegative; infinite if never.
    #[serde(serialize_with = "inf_as_null", deserialize_with = "null_as_inf")]
    pub recovery_time_h1: f64,
    #[serde(serialize_with = "inf_as_null", deserialize_with = "null_as_inf")]
    pub recovery_time_h2: f64,
    /// Spacing `s3 - p` to the front vehicle over the whole episode.
    pub min_spacing: f64,
    pub max_spacing: f64,
    /// Post-recovery steps with spacing outside `[d1, d2]` that are not
    /// explained by a front-vehicle transient.
    pub spacing_excursions: usize,
    /// Post-recovery steps flagged as front-vehicle transients.
    pub transient_steps: usize,
    #[serde(serialize_with = "inf_as_null", deserialize_with = "null_as_inf")]
    pub settling_time: f64,
    pub solve: PhaseStats,
    pub learn: PhaseStats,
    pub infer: PhaseStats,
    /// Per-tick sum of the three phases.
    pub tick: PhaseStats,
    pub degraded_ticks: usize,
    pub crashed: bool,
}

/// First time from which `h >= 0` holds and `h >= -RECOVERY_TOL` persists.
pub fn recovery_time(trace: &[TraceRecord], h: impl Fn(&TraceRecord) -> f64) -> f64 {
    let mut candidate = None;
    for r in trace {
        let v = h(r);
        if v < -RECOVERY_TOL {
            candidate = None;
        } else if candidate.is_none() && v >= 0.0 {
            candidate = Some(r.t);
        }
    }
    candidate.unwrap_or(f64::INFINITY)
}

/// First time after which the speed stays within the band for `SETTLE_HOLD`.
pub fn settling_time(trace: &[TraceRecord], v_d: f64, ts: f64) -> f64 {
    let hold = (SETTLE_HOLD / ts).round() as usize;
    let mut run = 0usize;
    for (i, r) in trace.iter().enumerate() {
        if (r.ev_v - v_d).abs() <= SETTLE_BAND {
            run += 1;
            if run > hold {
                return trace[i - hold].t;
            }
        } else {
            run = 0;
        }
    }
    f64::INFINITY
}

/// Steps where the front vehicle is, or recently was, accelerating hard.
pub fn transient_flags(trace: &[TraceRecord], ts: f64) -> Vec<bool> {
    let hold = (TRANSIENT_HOLD / ts).round() as usize;
    let mut flags = vec![false; trace.len()];
    let mut last_hit: Option<usize> = None;
    for i in 0..trace.len() {
        if i > 0 && ((trace[i].hv3_v - trace[i - 1].hv3_v) / ts).abs() > TRANSIENT_ACCEL {
            last_hit = Some(i);
        }
        flags[i] = last_hit.is_some_and(|j| i - j <= hold);
    }
    flags
}

pub fn compute_metrics(trace: &[TraceRecord], p: &MetricParams) -> EpisodeMetrics {
    let spacing: Vec<f64> = trace.iter().map(|r| r.hv3_s - r.ev_p).collect();
    let rec1 = recovery_time(trace, |r| r.h1);
    let rec2 = recovery_time(trace, |r| r.h2);
    let recovered = rec1.max(rec2);
    let flags = transient_flags(trace, p.ts);
    let mut excursions = 0;
    let mut transient_steps = 0;
    for (i, r) in trace.iter().enumerate() {
        if r.t < recovered {
            continue;
        }
        if flags[i] {
            transient_steps += 1;
        } else if spacing[i] < p.d1 - RECOVERY_TOL || spacing[i] > p.d2 + RECOVERY_TOL {
            excursions += 1;
        }
    }
    let col = |f: fn(&TraceRecord) -> f64| trace.iter().map(f).collect::<Vec<_>>();
    EpisodeMetrics {
        steps: trace.len(),
        recovery_time_h1: rec1,
        recovery_time_h2: rec2,
        min_spacing: spacing.iter().copied().fold(f64::INFINITY, f64::min),
        max_spacing: spacing.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        spacing_excursions: excursions,
        transient_steps,
        settling_time: settling_time(trace, p.v_d, p.ts),
        solve: PhaseStats::from_samples(&col(|r| r.solve_time)),
        learn: PhaseStats::from_samples(&col(|r| r.learn_time)),
        infer: PhaseStats::from_samples(&col(|r| r.infer_time)),
        tick: PhaseStats::from_samples(&col(|r| r.solve_time + r.learn_time + r.infer_time)),
        degraded_ticks: trace.iter().filter(|r| r.status == SolveStatus::Degraded).count(),
        crashed: trace.iter().any(|r| r.crash),
    }
}
