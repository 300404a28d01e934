//! Scenario files, closed-loop episodes, traces, metrics and timing.

mod bench;
mod config;
mod episode;
mod metrics;
mod trace;

pub use bench::{bench, BenchRecord, BenchReport};
pub use config::{load_scenario, save_scenario, ControllerConfig, InitialStates, ScenarioConfig};
pub use episode::{run_episode, Episode, TraceRecord};
pub use metrics::{
    compute_metrics, percentile, recovery_time, settling_time, transient_flags, EpisodeMetrics, MetricParams, PhaseStats, RECOVERY_TOL,
    SETTLE_BAND, SETTLE_HOLD,
};
pub use trace::{csv_header, emit_trace, parse_trace, read_trace, write_trace, TraceFormat};
