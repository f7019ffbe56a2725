//! Result records and their deterministic emission.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::export::{num, write_csv_file, write_json_file, CsvTable};

/// One measured configuration of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub experiment: String,
    /// `None` only for aggregates over seeds.
    pub seed: Option<u64>,
    pub config: BTreeMap<String, Value>,
    pub metrics: BTreeMap<String, f64>,
    pub token_connections: u64,
    pub evaluation_calls: u64,
    /// Wall-clock samples in milliseconds, kept out of the deterministic outputs.
    #[serde(skip)]
    pub timing_ms: BTreeMap<String, Vec<f64>>,
}

impl ResultRecord {
    pub fn new(experiment: &str, seed: Option<u64>) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            config: BTreeMap::new(),
            metrics: BTreeMap::new(),
            token_connections: 0,
            evaluation_calls: 0,
            timing_ms: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.config.insert(key.into(), value.into());
        self
    }

    pub fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.into(), value);
        self
    }

    pub fn config_str(&self, key: &str) -> String {
        self.config.get(key).map(value_text).unwrap_or_default()
    }

    pub fn metric(&self, key: &str) -> f64 {
        self.metrics.get(key).copied().unwrap_or(f64::NAN)
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => num(f),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

/// Wide CSV view of a record list: fixed columns, then the union of config
/// keys, then the union of metric keys (both sorted).
pub struct RecordTable<'a>(pub &'a [ResultRecord]);

impl RecordTable<'_> {
    fn keys(&self) -> (Vec<String>, Vec<String>) {
        let config: BTreeSet<&String> = self.0.iter().flat_map(|r| r.config.keys()).collect();
        let metrics: BTreeSet<&String> = self.0.iter().flat_map(|r| r.metrics.keys()).collect();
        (config.into_iter().cloned().collect(), metrics.into_iter().cloned().collect())
    }
}

impl CsvTable for RecordTable<'_> {
    fn header(&self) -> Vec<String> {
        let (config, metrics) = self.keys();
        let mut h = vec!["experiment".to_string(), "seed".to_string()];
        h.extend(config);
        h.extend(metrics);
        h.push("token_connections".into());
        h.push("evaluation_calls".into());
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let (config, metrics) = self.keys();
        self.0
            .iter()
            .map(|r| {
                let mut row = vec![r.experiment.clone(), r.seed.map(|s| s.to_string()).unwrap_or_default()];
                row.extend(config.iter().map(|k| r.config_str(k)));
                row.extend(metrics.iter().map(|k| r.metrics.get(k).map(|v| num(*v)).unwrap_or_default()));
                row.push(r.token_connections.to_string());
                row.push(r.evaluation_calls.to_string());
                row
            })
            .collect()
    }
}

/// Long CSV of wall-clock samples: one row per sample.
pub struct TimingTable<'a>(pub &'a [ResultRecord]);

impl CsvTable for TimingTable<'_> {
    fn header(&self) -> Vec<String> {
        let config: BTreeSet<&String> = self.0.iter().flat_map(|r| r.config.keys()).collect();
        let mut h = vec!["seed".to_string()];
        h.extend(config.into_iter().cloned());
        h.extend(["series", "sample", "ms"].map(String::from));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let config: BTreeSet<&String> = self.0.iter().flat_map(|r| r.config.keys()).collect();
        let mut rows = Vec::new();
        for r in self.0 {
            for (series, samples) in &r.timing_ms {
                for (i, ms) in samples.iter().enumerate() {
                    let mut row = vec![r.seed.map(|s| s.to_string()).unwrap_or_default()];
                    row.extend(config.iter().map(|k| r.config_str(k)));
                    row.extend([series.clone(), i.to_string(), num(*ms)]);
                    rows.push(row);
                }
            }
        }
        rows
    }
}

/// A named pass/fail outcome computed from a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

/// Everything a benchmark runner produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub records: Vec<ResultRecord>,
    /// Per-configuration aggregates over seeds.
    pub aggregates: Vec<ResultRecord>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `<experiment>.{csv,json}`, `<experiment>_summary.*` and, when
    /// wall-clock samples exist, `<experiment>_timing.csv`. Only the timing
    /// file varies between identical runs.
    pub fn write(&self, out_dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        let mut files = Vec::new();
        let stem = &self.experiment;
        match format {
            OutputFormat::Csv => {
                let path = out_dir.join(format!("{stem}.csv"));
                write_csv_file(&RecordTable(&self.records), &path)?;
                files.push(path);
                if !self.aggregates.is_empty() {
                    let path = out_dir.join(format!("{stem}_summary.csv"));
                    write_csv_file(&RecordTable(&self.aggregates), &path)?;
                    files.push(path);
                }
            }
            OutputFormat::Json => {
                let path = out_dir.join(format!("{stem}.json"));
                write_json_file(self, &path)?;
                files.push(path);
            }
        }
        let path = out_dir.join(format!("{stem}_checks.json"));
        write_json_file(&self.checks, &path)?;
        files.push(path);
        if self.records.iter().any(|r| !r.timing_ms.is_empty()) {
            let path = out_dir.join(format!("{stem}_timing.csv"));
            write_csv_file(&TimingTable(&self.records), &path)?;
            files.push(path);
        }
        Ok(files)
    }
}
