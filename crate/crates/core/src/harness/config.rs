//! Experiment configuration.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::ingest::load_csv;
use crate::harness::synth::{synth_generate, SynthSpec, SynthTask};
use crate::predictor::wire::{ExternalBackend, DEFAULT_TIMEOUT};
use crate::predictor::{Backend, Predictor, ReferenceBackend, DEFAULT_BANDWIDTH};
use crate::risk::RiskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PdRuntime,
    ShapError,
    ContextOpt,
    Explain,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PdRuntime => "pd_runtime",
            Self::ShapError => "shap_error",
            Self::ContextOpt => "context_opt",
            Self::Explain => "explain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Reference {
        #[serde(default = "default_bandwidth")]
        bandwidth: f64,
    },
    External {
        command: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self::Reference { bandwidth: DEFAULT_BANDWIDTH }
    }
}

impl BackendSpec {
    /// Starts the backend. Each [`Predictor`] built from the result gets its own ledger.
    pub fn build(&self) -> Result<Arc<dyn Backend>> {
        match self {
            Self::Reference { bandwidth } => Ok(Arc::new(ReferenceBackend::new(*bandwidth)?)),
            Self::External { command, timeout_secs } => {
                let timeout = timeout_secs.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT);
                Ok(Arc::new(ExternalBackend::spawn_with_timeout(command, timeout)?))
            }
        }
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Ok(Predictor::from_arc(self.build()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        task: SynthTask,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        p: Option<usize>,
        #[serde(default)]
        noise_rate: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
    },
}

fn default_label() -> String {
    "label".into()
}

impl DataSource {
    pub fn synthetic(task: SynthTask, noise_rate: f64) -> Self {
        Self::Synthetic { task, n: None, p: None, noise_rate, seed: 0 }
    }

    /// Synthetic spec with `n`/`p` falling back to the experiment's own sizes
    /// and the data seed offset by `seed`.
    pub fn synth_spec(&self, n: usize, p: usize, seed: u64) -> Option<SynthSpec> {
        match self {
            Self::Synthetic { task, n: sn, p: sp, noise_rate, seed: base } => Some(SynthSpec {
                n: sn.unwrap_or(n),
                p: sp.unwrap_or(p),
                task: *task,
                noise_rate: *noise_rate,
                seed: base.wrapping_add(seed),
            }),
            Self::Csv { .. } => None,
        }
    }

    pub fn load(&self, n: usize, p: usize, seed: u64) -> Result<Dataset> {
        match self {
            Self::Csv { path, label_column } => load_csv(path, label_column),
            Self::Synthetic { .. } => synth_generate(&self.synth_spec(n, p, seed).expect("synthetic")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdRuntimeParams {
    /// Total rows per dataset; 80% train, 20% inference.
    pub sizes: Vec<usize>,
    pub grid_sizes: Vec<usize>,
    pub p: usize,
    pub feature: usize,
    pub repetitions: usize,
    pub max_batch_rows: usize,
}

impl Default for PdRuntimeParams {
    fn default() -> Self {
        Self {
            sizes: vec![250, 500, 1000],
            grid_sizes: vec![4, 8, 16, 32],
            p: 10,
            feature: 0,
            repetitions: 5,
            max_batch_rows: crate::effects::DEFAULT_MAX_BATCH_ROWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapErrorParams {
    pub n_train: usize,
    pub n_inf: usize,
    pub p: usize,
    pub m_grid: Vec<usize>,
    pub l_grid: Vec<usize>,
}

impl Default for ShapErrorParams {
    fn default() -> Self {
        Self { n_train: 256, n_inf: 128, p: 6, m_grid: vec![7, 10, 14, 20, 28, 40, 62], l_grid: vec![1, 2, 4, 8, 16] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextOptParams {
    pub n_train: usize,
    pub n_sub: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub p: usize,
    /// `M = samples_factor * n_train`.
    pub samples_factor: usize,
    /// Defaults to `max(8, n_sub / 4)`.
    pub size_min: Option<usize>,
}

impl Default for ContextOptParams {
    fn default() -> Self {
        Self { n_train: 96, n_sub: 32, n_val: 64, n_test: 128, p: 4, samples_factor: 3, size_min: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMethod {
    Ice,
    Pd,
    Ale,
    KernelShap,
    Loco,
    Sage,
    Loo,
    DataShapley,
    Sensitivity,
}

impl ExplainMethod {
    pub const ALL: [Self; 9] = [
        Self::Ice,
        Self::Pd,
        Self::Ale,
        Self::KernelShap,
        Self::Loco,
        Self::Sage,
        Self::Loo,
        Self::DataShapley,
        Self::Sensitivity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ice => "ice",
            Self::Pd => "pd",
            Self::Ale => "ale",
            Self::KernelShap => "kernel_shap",
            Self::Loco => "loco",
            Self::Sage => "sage",
            Self::Loo => "loo",
            Self::DataShapley => "data_shapley",
            Self::Sensitivity => "sensitivity",
        }
    }
}

impl std::str::FromStr for ExplainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainParams {
    pub methods: Vec<ExplainMethod>,
    /// Rows drawn (without replacement) for the context; the rest are inference rows.
    pub train_fraction: f64,
    /// Inference rows explained by local methods (ICE and Kernel SHAP).
    pub max_local_rows: usize,
    pub grid_size: usize,
    pub grid_strategy: crate::effects::GridStrategy,
    /// Features whose effect curves are emitted; empty means all.
    pub features: Vec<usize>,
    pub samples: usize,
    /// `-1` for exact retraining.
    pub imputations: i64,
    pub n_sub: Option<usize>,
    /// Synthetic size when no CSV is given.
    pub n: usize,
    pub p: usize,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self {
            methods: ExplainMethod::ALL.to_vec(),
            train_fraction: 0.8,
            max_local_rows: 16,
            grid_size: 10,
            grid_strategy: crate::effects::GridStrategy::Quantile,
            features: Vec::new(),
            samples: 64,
            imputations: -1,
            n_sub: None,
            n: 120,
            p: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub risk: RiskKind,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default)]
    pub pd_runtime: PdRuntimeParams,
    #[serde(default)]
    pub shap_error: ShapErrorParams,
    #[serde(default)]
    pub context_opt: ContextOptParams,
    #[serde(default)]
    pub explain: ExplainParams,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_data() -> DataSource {
    DataSource::synthetic(SynthTask::NoisyLinear, 0.1)
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seeds: default_seeds(),
            risk: RiskKind::default(),
            backend: BackendSpec::default(),
            data: default_data(),
            pd_runtime: PdRuntimeParams::default(),
            shap_error: ShapErrorParams::default(),
            context_opt: ContextOptParams::default(),
            explain: ExplainParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let BackendSpec::External { command, .. } = &self.backend {
            if command.is_empty() {
                return Err(Error::Config("external backend needs a command".into()));
            }
        }
        if let BackendSpec::Reference { bandwidth } = self.backend {
            if !(bandwidth.is_finite() && bandwidth > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
            }
        }
        let pd = &self.pd_runtime;
        for (name, v) in [
            ("pd_runtime.p", pd.p),
            ("pd_runtime.repetitions", pd.repetitions),
            ("pd_runtime.max_batch_rows", pd.max_batch_rows),
        ] {
            positive(name, v)?;
        }
        if pd.sizes.iter().any(|&n| n < 5) || pd.grid_sizes.iter().any(|&g| g < 2) {
            return Err(Error::Config("pd_runtime sizes must be >= 5 and grid sizes >= 2".into()));
        }
        if pd.feature >= pd.p {
            return Err(Error::Config("pd_runtime.feature out of range".into()));
        }
        let se = &self.shap_error;
        for (name, v) in [("shap_error.n_train", se.n_train), ("shap_error.n_inf", se.n_inf), ("shap_error.p", se.p)] {
            positive(name, v)?;
        }
        if se.m_grid.is_empty() || se.l_grid.is_empty() || se.l_grid.contains(&0) {
            return Err(Error::Config("shap_error grids must be non-empty with positive L".into()));
        }
        if se.p > crate::shapley::BRUTE_FORCE_MAX_PLAYERS || se.p < 2 {
            return Err(Error::Config("shap_error.p must lie in 2..=20".into()));
        }
        let co = &self.context_opt;
        for (name, v) in [
            ("context_opt.n_train", co.n_train),
            ("context_opt.n_sub", co.n_sub),
            ("context_opt.n_val", co.n_val),
            ("context_opt.n_test", co.n_test),
            ("context_opt.p", co.p),
            ("context_opt.samples_factor", co.samples_factor),
        ] {
            positive(name, v)?;
        }
        if co.n_sub >= co.n_train {
            return Err(Error::Config("context_opt.n_sub must be below n_train".into()));
        }
        let ex = &self.explain;
        if !(ex.train_fraction > 0.0 && ex.train_fraction < 1.0) {
            return Err(Error::Config("explain.train_fraction must lie in (0, 1)".into()));
        }
        for (name, v) in [("explain.max_local_rows", ex.max_local_rows), ("explain.samples", ex.samples)] {
            positive(name, v)?;
        }
        if ex.methods.is_empty() {
            return Err(Error::Config("explain.methods is empty".into()));
        }
        crate::shapley::RetrainMode::from_l(ex.imputations).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
