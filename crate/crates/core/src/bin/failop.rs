use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failop_core::scenario::{bench, compute_metrics, emit_trace, load_scenario, read_trace, run_episode, MetricParams, ScenarioConfig, TraceFormat};
use failop_core::Error;

#[derive(Parser)]
#[command(name = "failop", version, about = "Fail-operational CBF/CLF cruise control with online GP disturbance learning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, Error> {
        let mut cfg = match &self.scenario {
            Some(p) => load_scenario(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.duration {
            cfg.duration = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode and write its trace.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Trace output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<TraceFormat>,
        /// Also write the learner's retained data set as CSV.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Repeat an episode and report per-phase timing as JSON lines.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute episode metrics from a saved trace.
    Metrics {
        trace: PathBuf,
        /// Scenario that produced the trace, for v_d, d1, d2 and ts.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<TraceFormat>,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            out,
            format,
            dataset,
        } => {
            let cfg = scenario.load()?;
            let ep = run_episode(&cfg)?;
            emit_trace(&ep.trace, &out, format.unwrap_or_else(|| TraceFormat::from_path(&out)))?;
            if let Some(p) = dataset {
                ep.learner.dump_datasets(std::io::BufWriter::new(std::fs::File::create(p)?))?;
            }
            println!("{}", serde_json::to_string_pretty(&ep.metrics)?);
            if let Some(c) = ep.crash {
                eprintln!("episode terminated by a collision at t = {:.2} s (gap {})", c.t, c.gap_index);
                return Ok(4);
            }
            Ok(0)
        }
        Cmd::Bench {
            scenario,
            repetitions,
            out,
        } => {
            let cfg = scenario.load()?;
            let report = bench(&cfg, repetitions)?;
            let text = report.to_jsonl()?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Cmd::Metrics { trace, scenario, format } => {
            let cfg = match scenario {
                Some(p) => load_scenario(&p)?,
                None => ScenarioConfig::default(),
            };
            let records = read_trace(&trace, format.unwrap_or_else(|| TraceFormat::from_path(&trace)))?;
            let m = compute_metrics(&records, &MetricParams::from_config(&cfg));
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(0)
        }
        Cmd::Validate { scenario } => {
            load_scenario(&scenario)?;
            println!("{}: ok", scenario.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
