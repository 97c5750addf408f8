//! CSV and JSON artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use polis_core::env::ExogenousTrace;
use polis_core::harness::{RetrainRow, RunConfig, RunRecord};
use polis_core::hyper_policy::GaussianHyperPolicy;

use crate::error::CliError;

/// Bumped whenever a CSV layout changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Content hash of a serializable value, git blob style: `sha256("blob <len>\0" + json)`.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", json.len()).as_bytes());
    h.update(&json);
    hex::encode(h.finalize())
}

/// Hash of a run configuration with the seed cleared, so every seed of a run shares it.
pub fn config_hash(run: &RunConfig) -> String {
    content_hash(&run.with_seed(0))
}

/// `date,rate` rows with ISO dates in strictly increasing order.
pub fn parse_rates_csv<R: Read>(input: R, name: &str) -> Result<Vec<(NaiveDate, f64)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| CliError::Config(format!("{name}: {e}")))?.clone();
    let col = |want: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(want));
    let (dc, rc) = match (col("date"), col("rate")) {
        (Some(d), Some(r)) => (d, r),
        _ => return Err(CliError::Config(format!("{name}:1: header must contain `date` and `rate` columns"))),
    };
    let mut out: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Config(format!("{name}:{line}: {e}")))?;
        let ds = rec.get(dc).unwrap_or("");
        let date = NaiveDate::parse_from_str(ds, "%Y-%m-%d")
            .map_err(|_| CliError::Config(format!("{name}:{line}: `{ds}` is not an ISO date (YYYY-MM-DD)")))?;
        let rs = rec.get(rc).unwrap_or("");
        let rate: f64 = rs
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| CliError::Config(format!("{name}:{line}: `{rs}` is not a finite rate")))?;
        if let Some((prev, _)) = out.last() {
            if date <= *prev {
                return Err(CliError::Config(format!("{name}:{line}: {date} does not follow {prev}; rows must be in chronological order")));
            }
        }
        out.push((date, rate));
    }
    if out.len() < 2 {
        return Err(CliError::Config(format!("{name}: need at least two rates")));
    }
    Ok(out)
}

pub fn read_rates_csv(path: &Path) -> Result<Vec<(NaiveDate, f64)>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_rates_csv(f, &path.display().to_string())
}

pub fn write_rates_csv(path: &Path, rates: &[(NaiveDate, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "rate"])?;
    for (d, r) in rates {
        w.write_record([d.format("%Y-%m-%d").to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Per-step rows of one run.
pub fn write_steps_csv(path: &Path, hash: &str, method: &str, seed: u64, rec: &RunRecord) -> Result<(), CliError> {
    let d = rec.steps.first().map(|s| s.theta.len()).unwrap_or(0);
    let mut w = writer(path)?;
    let mut header = vec!["config_hash".to_string(), "method".into(), "seed".into(), "t".into(), "phase".into()];
    header.extend((0..d).map(|k| format!("theta_{k}")));
    header.extend(["action", "reward", "cumulative_return", "retrain"].map(String::from));
    w.write_record(&header)?;
    for s in &rec.steps {
        let mut row = vec![hash.to_string(), method.into(), seed.to_string(), s.t.to_string(), s.phase.name().into()];
        row.extend(s.theta.iter().map(f64::to_string));
        row.extend([s.action.to_string(), s.reward.to_string(), s.cumulative.to_string(), (s.retrain as u8).to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const RETRAIN_HEADER: [&str; 15] = [
    "config_hash",
    "method",
    "seed",
    "retrain",
    "t",
    "epoch",
    "past_return",
    "future_return",
    "b_value",
    "penalty",
    "surrogate",
    "grad_norm_future",
    "grad_norm_past",
    "grad_norm_penalty",
    "note",
];

pub fn retrain_row(hash: &str, method: &str, seed: u64, r: &RetrainRow) -> Vec<String> {
    vec![
        hash.into(),
        method.into(),
        seed.to_string(),
        r.retrain.to_string(),
        r.t.to_string(),
        r.epoch.to_string(),
        r.past_return.to_string(),
        r.future_return.to_string(),
        r.b_value.to_string(),
        r.penalty.to_string(),
        r.surrogate.to_string(),
        r.grad_norm_future.to_string(),
        r.grad_norm_past.to_string(),
        r.grad_norm_penalty.to_string(),
        r.note.clone(),
    ]
}

pub fn write_trace_csv(path: &Path, hash: &str, seed: u64, trace: &ExogenousTrace) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut header = vec!["config_hash".to_string(), "seed".into(), "t".into()];
    header.extend((0..trace.dim()).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for t in trace.start()..trace.end() {
        let mut row = vec![hash.to_string(), seed.to_string(), t.to_string()];
        row.extend(trace.get(t)?.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows` under `header` to a fresh CSV file.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_policy_json(path: &Path, hp: &GaussianHyperPolicy) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, hp)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_policy_json(path: &Path) -> Result<GaussianHyperPolicy, CliError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// JSON sidecar describing a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
}

impl Metadata {
    pub fn new<T: Serialize>(command: &str, hash: &str, seeds: &[u64], config: &T) -> Result<Self, CliError> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config_hash: hash.into(),
            seeds: seeds.to_vec(),
            config: serde_json::to_value(config)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_validation() {
        let ok = "date,rate\n2020-01-01,1.10\n2020-01-02, 1.11\n";
        assert_eq!(parse_rates_csv(ok.as_bytes(), "r").unwrap().len(), 2);
        let unordered = "date,rate\n2020-01-02,1.1\n2020-01-01,1.2\n";
        assert!(parse_rates_csv(unordered.as_bytes(), "r").unwrap_err().to_string().starts_with("r:3:"));
        let bad_date = "date,rate\n01/02/2020,1.1\n2020-01-03,1.2\n";
        assert!(parse_rates_csv(bad_date.as_bytes(), "r").unwrap_err().to_string().starts_with("r:2:"));
        assert!(parse_rates_csv("day,price\n".as_bytes(), "r").is_err());
        assert!(parse_rates_csv("date,rate\n2020-01-01,nan\n2020-01-02,1\n".as_bytes(), "r").is_err());
    }

    #[test]
    fn hash_ignores_seed() {
        let a = RunConfig::vasicek();
        assert_eq!(config_hash(&a), config_hash(&a.with_seed(9)));
        let mut b = a.clone();
        b.surrogate.lambda = 11.0;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
