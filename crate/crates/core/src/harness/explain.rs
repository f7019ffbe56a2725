//! The `explain` experiment: run a selection of methods on one dataset and
//! write one file per result plus a manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::data::Dataset;
use crate::effects::{ale, build_grid, ice, pd, EffectCurve};
use crate::error::{Error, Result};
use crate::export::{write_csv_file, write_json_file, CsvTable};
use crate::harness::config::{ExperimentConfig, ExplainMethod};
use crate::harness::records::OutputFormat;
use crate::harness::runners::split_standardized;
use crate::importance::{loco, sage};
use crate::predictor::{Backend, Predictor};
use crate::shapley::{kernel_shap, KernelShapConfig, RetrainMode};
use crate::valuation::{
    data_shapley_context, default_size_min, loo, sensitivity_data_values, sensitivity_feature_effects, ContextConfig,
    FeatureSensitivity,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub method: String,
    pub files: Vec<String>,
    /// Set when the method was not run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub token_connections: u64,
    pub evaluation_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub backend: String,
    pub seed: u64,
    pub risk: String,
    pub n_train: usize,
    pub n_inference: usize,
    pub feature_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

struct Writer<'a> {
    dir: &'a Path,
    format: OutputFormat,
}

impl Writer<'_> {
    fn emit<T: CsvTable + Serialize>(&self, stem: &str, value: &T) -> Result<String> {
        let (name, path) = self.path(stem);
        match self.format {
            OutputFormat::Csv => write_csv_file(value, &path)?,
            OutputFormat::Json => write_json_file(value, &path)?,
        }
        Ok(name)
    }

    fn path(&self, stem: &str) -> (String, PathBuf) {
        let ext = match self.format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        };
        let name = format!("{stem}.{ext}");
        let path = self.dir.join(&name);
        (name, path)
    }
}

/// Runs `config.explain.methods` with the first seed and writes the results
/// under `out_dir`. `data` overrides the configured data source.
pub fn run_explain(
    config: &ExperimentConfig,
    backend: Arc<dyn Backend>,
    data: Option<Dataset>,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Manifest> {
    let params = &config.explain;
    let seed = *config.seeds.first().ok_or_else(|| Error::Config("seed list is empty".into()))?;
    let data = match data {
        Some(d) => d,
        None => config.data.load(params.n, params.p, seed)?,
    };
    let n = data.n_rows();
    let n_train = ((n as f64) * params.train_fraction).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::Config(format!("train_fraction leaves {n_train} of {n} rows for the context")));
    }
    let parts = split_standardized(&data, &[n_train, n - n_train], seed)?;
    let (train, inf) = (&parts[0], &parts[1]);
    let local_rows = params.max_local_rows.min(inf.n_rows());
    let local = inf.select_rows(&(0..local_rows).collect::<Vec<_>>());
    let features: Vec<usize> =
        if params.features.is_empty() { (0..train.n_cols()).collect() } else { params.features.clone() };
    if let Some(&j) = features.iter().find(|&&j| j >= train.n_cols()) {
        return Err(Error::Config(format!("feature index {j} out of range")));
    }

    std::fs::create_dir_all(out_dir)?;
    let out = Writer { dir: out_dir, format };
    let mut methods = params.methods.clone();
    methods.sort_unstable();
    methods.dedup();

    let mut entries = Vec::new();
    for method in methods {
        let predictor = Predictor::from_arc(backend.clone());
        let mut files = Vec::new();
        let mut skipped = None;
        match method {
            ExplainMethod::Ice | ExplainMethod::Pd | ExplainMethod::Ale => {
                let mut degenerate = Vec::new();
                for &j in &features {
                    let column = train.features().column(j).to_vec();
                    let grid = match build_grid(j, &column, params.grid_size, params.grid_strategy) {
                        Ok(g) => g,
                        Err(Error::DegenerateGrid(_)) => {
                            degenerate.push(train.column_names()[j].clone());
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let curve: Result<EffectCurve> = match method {
                        ExplainMethod::Ice => ice(&predictor, train, local.features(), &grid),
                        ExplainMethod::Pd => pd(&predictor, train, inf.features(), &grid),
                        _ => ale(&predictor, train, inf.features(), &grid),
                    };
                    match curve {
                        Ok(c) => files.push(out.emit(&format!("{}_{}", method.as_str(), train.column_names()[j]), &c)?),
                        Err(Error::DegenerateGrid(_)) => degenerate.push(train.column_names()[j].clone()),
                        Err(e) => return Err(e),
                    }
                }
                if !degenerate.is_empty() {
                    skipped = Some(format!("degenerate grid for {}", degenerate.join(", ")));
                }
            }
            ExplainMethod::KernelShap => {
                let mode = RetrainMode::from_l(params.imputations)?;
                let cfg = KernelShapConfig::new(params.samples, mode, seed);
                let result = kernel_shap(&predictor, train, local.features(), &cfg)?;
                files.push(out.emit("kernel_shap", &result)?);
            }
            ExplainMethod::Loco => files.push(out.emit("loco", &loco(&predictor, train, inf, config.risk)?)?),
            ExplainMethod::Sage => {
                let report = sage(&predictor, train, inf, params.samples, config.risk, seed)?;
                files.push(out.emit("sage", &report)?);
            }
            ExplainMethod::Loo => files.push(out.emit("loo", &loo(&predictor, train, inf, config.risk)?)?),
            ExplainMethod::DataShapley => {
                let n_sub = params.n_sub.unwrap_or(n_train / 3);
                let mut cfg = ContextConfig::with_defaults(n_train, n_sub, seed);
                cfg.size_min = default_size_min(n_sub).min(n_sub.saturating_sub(1)).max(1);
                let selection = data_shapley_context(&predictor, train, inf, &cfg, config.risk)?;
                files.push(out.emit("data_shapley", &selection)?);
            }
            ExplainMethod::Sensitivity => {
                if predictor.differentiable().is_err() {
                    skipped = Some(format!("backend '{}' exposes no gradients", backend.name()));
                } else if !config.risk.is_differentiable() {
                    skipped = Some(format!("risk '{}' is not differentiable", config.risk));
                } else {
                    let values = sensitivity_data_values(&predictor, train, inf, config.risk)?;
                    files.push(out.emit("sensitivity_data", &values)?);
                    let effects = FeatureSensitivity {
                        feature_names: train.column_names().to_vec(),
                        values: sensitivity_feature_effects(&predictor, train, local.features())?,
                    };
                    files.push(out.emit("sensitivity_features", &effects)?);
                }
            }
        }
        let spent = predictor.ledger().snapshot();
        entries.push(ManifestEntry {
            method: method.as_str().into(),
            files,
            skipped,
            token_connections: spent.token_connections,
            evaluation_calls: spent.evaluation_calls,
        });
    }

    let manifest = Manifest {
        backend: backend.name().to_string(),
        seed,
        risk: config.risk.to_string(),
        n_train,
        n_inference: inf.n_rows(),
        feature_names: train.column_names().to_vec(),
        entries,
    };
    write_json_file(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}
