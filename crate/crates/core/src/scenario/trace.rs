use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::TraceRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Jsonl,
}

impl TraceFormat {
    /// Guess from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => TraceFormat::Jsonl,
            _ => TraceFormat::Csv,
        }
    }
}

/// Column names in file order.
pub fn csv_header() -> Vec<&'static str> {
    vec![
        "step", "t", "ev_p", "ev_v", "hv1_s", "hv1_v", "hv2_s", "hv2_v", "hv3_s", "hv3_v", "hv4_s", "hv4_v", "u", "zeta", "iota", "h1", "h2",
        "v_lyap", "eps1", "eps2", "mu_ev_p", "mu_ev_v", "mu_hv3_s", "mu_hv3_v", "sigma_ev_p", "sigma_ev_v", "sigma_hv3_s", "sigma_hv3_v", "w_ev_p",
        "w_ev_v", "w_hv3_s", "w_hv3_v", "solve_time", "learn_time", "infer_time", "status", "crash",
    ]
}

/// Floats are written in shortest round-trip form, so reloading is lossless.
pub fn write_trace<W: Write>(trace: &[TraceRecord], out: W, format: TraceFormat) -> Result<()> {
    match format {
        TraceFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(csv_header())?;
            for r in trace {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        TraceFormat::Jsonl => {
            let mut out = out;
            for r in trace {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn emit_trace(trace: &[TraceRecord], path: &Path, format: TraceFormat) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_trace(trace, f, format)
}

pub fn parse_trace<R: Read>(input: R, format: TraceFormat) -> Result<Vec<TraceRecord>> {
    match format {
        TraceFormat::Csv => {
            let mut rd = csv::Reader::from_reader(input);
            let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
            if header != csv_header() {
                return Err(Error::Config("trace header does not match the expected columns".into()));
            }
            rd.deserialize().map(|r| r.map_err(Error::from)).collect()
        }
        TraceFormat::Jsonl => BufReader::new(input)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| Ok(serde_json::from_str(&l?)?))
            .collect(),
    }
}

pub fn read_trace(path: &Path, format: TraceFormat) -> Result<Vec<TraceRecord>> {
    parse_trace(File::open(path)?, format)
}
