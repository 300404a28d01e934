use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::episode::run_episode;
use super::metrics::PhaseStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub phase: String,
    pub samples: usize,
    #[serde(flatten)]
    pub stats: PhaseStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub records: Vec<BenchRecord>,
}

impl BenchReport {
    pub fn phase(&self, name: &str) -> Option<&BenchRecord> {
        self.records.iter().find(|r| r.phase == name)
    }

    /// One JSON object per phase.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records: Vec<BenchRecord> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { repetitions: 0, records })
    }
}

/// Run the scenario `repetitions` times with seeds `seed, seed + 1, ...` and
/// pool the per-tick timings.
pub fn bench(cfg: &ScenarioConfig, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let mut solve = Vec::new();
    let mut learn = Vec::new();
    let mut infer = Vec::new();
    let mut tick = Vec::new();
    for i in 0..repetitions {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        let ep = run_episode(&c)?;
        for r in &ep.trace {
            solve.push(r.solve_time);
            learn.push(r.learn_time);
            infer.push(r.infer_time);
            tick.push(r.solve_time + r.learn_time + r.infer_time);
        }
    }
    let rec = |phase: &str, s: &[f64]| BenchRecord {
        phase: phase.into(),
        samples: s.len(),
        stats: PhaseStats::from_samples(s),
    };
    Ok(BenchReport {
        repetitions,
        records: vec![rec("solve", &solve), rec("learn", &learn), rec("infer", &infer), rec("tick", &tick)],
    })
}
