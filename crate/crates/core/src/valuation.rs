//! Valuation of training rows and context selection.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ObservationSubset};
use crate::error::{contract, Error, Result};
use crate::export::{num, CsvTable};
use crate::predictor::Predictor;
use crate::risk::{empirical_risk, risk_gradient, RiskKind};
use crate::rng::{stream, Domain};
use crate::shapley::{fit_weighted_regression, shap_kernel_weight, RankPolicy, RegressionFit, SolveDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationMethod {
    Loo,
    DataShapley,
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataValueReport {
    pub method: ValuationMethod,
    pub risk_kind: RiskKind,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_risk: Option<f64>,
    pub token_connections: u64,
    pub evaluation_calls: u64,
}

impl CsvTable for DataValueReport {
    fn header(&self) -> Vec<String> {
        vec!["row_id".into(), "value".into()]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.values.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect()
    }
}

fn check(train: &Dataset, validation: &Dataset) -> Result<()> {
    if validation.n_cols() != train.n_cols() {
        return Err(contract(format!(
            "validation has {} columns, training data {}",
            validation.n_cols(),
            train.n_cols()
        )));
    }
    if validation.is_empty() {
        return Err(contract("valuation needs labelled validation rows"));
    }
    Ok(())
}

/// Risk increase on `validation` when each training row is left out of the
/// context; positive values mark rows that help. `n_train + 1` calls.
pub fn loo(predictor: &Predictor, train: &Dataset, validation: &Dataset, kind: RiskKind) -> Result<DataValueReport> {
    check(train, validation)?;
    if train.n_rows() < 2 {
        return Err(contract("leave-one-out needs at least two training rows"));
    }
    let start = predictor.ledger().snapshot();
    let labels = validation.labels();
    let baseline = empirical_risk(&predictor.predict(train, validation.features())?, labels, kind)?;
    let values = (0..train.n_rows())
        .into_par_iter()
        .map(|i| {
            let pred = predictor.predict(&train.without_row(i), validation.features())?;
            Ok(empirical_risk(&pred, labels, kind)? - baseline)
        })
        .collect::<Result<Vec<f64>>>()?;
    let spent = predictor.ledger().snapshot().since(&start);
    Ok(DataValueReport {
        method: ValuationMethod::Loo,
        risk_kind: kind,
        values,
        baseline_risk: Some(baseline),
        token_connections: spent.token_connections,
        evaluation_calls: spent.evaluation_calls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetWeighting {
    #[default]
    Uniform,
    /// Shapley kernel weight of the subset size over `n_train` players.
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConfig {
    /// Number of sampled training subsets `M`.
    pub samples: usize,
    /// Size of the selected context.
    pub n_sub: usize,
    /// Smallest sampled subset size.
    pub size_min: usize,
    pub seed: u64,
    #[serde(default)]
    pub weighting: SubsetWeighting,
}

impl ContextConfig {
    /// `M = 3 n_train` and `size_min = max(8, n_sub / 4)`.
    pub fn with_defaults(n_train: usize, n_sub: usize, seed: u64) -> Self {
        Self {
            samples: 3 * n_train,
            n_sub,
            size_min: default_size_min(n_sub),
            seed,
            weighting: SubsetWeighting::Uniform,
        }
    }
}

pub fn default_size_min(n_sub: usize) -> usize {
    (n_sub / 4).max(8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextSelection {
    pub selected: ObservationSubset,
    /// Selected row indices in increasing order.
    pub indices: Vec<usize>,
    /// Surrogate coefficient per training row; negative values lower the risk.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub config: ContextConfig,
    pub risk_kind: RiskKind,
    pub diagnostics: SolveDiagnostics,
    pub token_connections: u64,
    pub evaluation_calls: u64,
}

impl CsvTable for ContextSelection {
    fn header(&self) -> Vec<String> {
        ["row_id", "selected", "coefficient"].map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| vec![i.to_string(), u8::from(self.selected.contains(i)).to_string(), num(*c)])
            .collect()
    }
}

/// Training subset `k` of a context search: size uniform on
/// `[size_min, max_size]`, members uniform without replacement.
pub fn sample_observation_subset(
    n_train: usize,
    size_min: usize,
    max_size: usize,
    seed: u64,
    k: u64,
) -> ObservationSubset {
    let mut rng = stream(seed, Domain::ObservationSubset, k);
    let size = rand::Rng::random_range(&mut rng, size_min..=max_size);
    ObservationSubset::from_indices(n_train, &rand::seq::index::sample(&mut rng, n_train, size).into_vec())
}

/// Uniform random context of `n_sub` rows; the baseline for context selection.
pub fn random_sketch(n_train: usize, n_sub: usize, seed: u64) -> ObservationSubset {
    let mut rng = stream(seed, Domain::Sketch, 0);
    ObservationSubset::from_indices(n_train, &rand::seq::index::sample(&mut rng, n_train, n_sub).into_vec())
}

/// Regresses the validation risk of each context on row-membership indicators
/// (weighted, with intercept). One predictor call per subset.
pub fn fit_observation_surrogate(
    predictor: &Predictor,
    train: &Dataset,
    validation: &Dataset,
    subsets: &[ObservationSubset],
    weights: &[f64],
    kind: RiskKind,
    policy: RankPolicy,
) -> Result<RegressionFit> {
    check(train, validation)?;
    let n = train.n_rows();
    if subsets.iter().any(|s| s.len() != n) {
        return Err(contract("every subset mask must cover all training rows"));
    }
    let risks = subsets
        .par_iter()
        .map(|s| {
            let pred = predictor.predict(&train.restrict_observations(s)?, validation.features())?;
            empirical_risk(&pred, validation.labels(), kind)
        })
        .collect::<Result<Vec<f64>>>()?;
    let design = Array2::from_shape_fn((subsets.len(), n), |(k, i)| if subsets[k].contains(i) { 1.0 } else { 0.0 });
    fit_weighted_regression(design.view(), weights, &risks, policy)
}

/// Indices of the `count` smallest values; near-equal values (relative
/// `1e-9`) are treated as ties and resolved by lower index.
pub fn lowest_indices(values: &[f64], count: usize) -> Vec<usize> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by_key(|&i| ((values[i] / tol).round() as i64, i));
    let mut chosen = order[..count.min(values.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Selects an `n_sub`-row context by fitting a linear surrogate of the
/// validation risk over `M` random training subsets and keeping the rows
/// with the lowest coefficients.
pub fn data_shapley_context(
    predictor: &Predictor,
    train: &Dataset,
    validation: &Dataset,
    config: &ContextConfig,
    kind: RiskKind,
) -> Result<ContextSelection> {
    let n = train.n_rows();
    if config.samples < n {
        return Err(Error::UnderdeterminedSurrogate(format!("{} subsets for {n} training rows", config.samples)));
    }
    if !(1 <= config.size_min && config.size_min < config.n_sub && config.n_sub < n) {
        return Err(contract(format!(
            "need 1 <= size_min < n_sub < n_train, got {} / {} / {n}",
            config.size_min, config.n_sub
        )));
    }
    let start = predictor.ledger().snapshot();
    let subsets: Vec<ObservationSubset> = (0..config.samples as u64)
        .map(|k| sample_observation_subset(n, config.size_min, config.n_sub, config.seed, k))
        .collect();
    let weights = match config.weighting {
        SubsetWeighting::Uniform => vec![1.0; subsets.len()],
        SubsetWeighting::Kernel => subsets.iter().map(|s| shap_kernel_weight(n, s.count())).collect::<Result<_>>()?,
    };
    let fit =
        fit_observation_surrogate(predictor, train, validation, &subsets, &weights, kind, RankPolicy::RidgeFallback)?;
    let spent = predictor.ledger().snapshot().since(&start);
    let indices = lowest_indices(&fit.coefficients, config.n_sub);
    Ok(ContextSelection {
        selected: ObservationSubset::from_indices(n, &indices),
        indices,
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        config: *config,
        risk_kind: kind,
        diagnostics: fit.diagnostics,
        token_connections: spent.token_connections,
        evaluation_calls: spent.evaluation_calls,
    })
}

/// L2 norms of the vector-Jacobian products for an arbitrary upstream
/// gradient `d R / d prediction`.
pub fn gradient_norms(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let grad = predictor.differentiable()?.vjp_wrt_train(train, inference, upstream)?;
    Ok(grad.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect())
}

/// Gradient-norm sensitivity of the validation risk to each training row
/// (its features and relaxed label jointly).
pub fn sensitivity_data_values(
    predictor: &Predictor,
    train: &Dataset,
    validation: &Dataset,
    kind: RiskKind,
) -> Result<DataValueReport> {
    check(train, validation)?;
    if !kind.is_differentiable() {
        return Err(Error::NonDifferentiableRisk(kind.to_string()));
    }
    predictor.differentiable()?;
    let start = predictor.ledger().snapshot();
    let pred = predictor.predict(train, validation.features())?;
    let upstream = risk_gradient(&pred, validation.labels(), kind)?;
    let values = gradient_norms(predictor, train, validation.features(), &upstream)?;
    let spent = predictor.ledger().snapshot().since(&start);
    Ok(DataValueReport {
        method: ValuationMethod::Sensitivity,
        risk_kind: kind,
        values,
        baseline_risk: Some(empirical_risk(&pred, validation.labels(), kind)?),
        token_connections: spent.token_connections,
        evaluation_calls: spent.evaluation_calls,
    })
}

/// `|d f(x*_i) / d x*_ij|`, shape `p x n_inf`.
pub fn sensitivity_feature_effects(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if inference.ncols() != train.n_cols() {
        return Err(contract("inference and training column counts differ"));
    }
    let jac = predictor.differentiable()?.jacobian_wrt_inference(train, inference)?;
    Ok(jac.t().mapv(f64::abs))
}

/// Feature sensitivities as a long table (inference_id, feature, sensitivity).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSensitivity {
    pub feature_names: Vec<String>,
    #[serde(serialize_with = "crate::export::matrix_rows")]
    pub values: Array2<f64>,
}

impl CsvTable for FeatureSensitivity {
    fn header(&self) -> Vec<String> {
        ["inference_id", "feature", "sensitivity"].map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for i in 0..self.values.ncols() {
            for (j, name) in self.feature_names.iter().enumerate() {
                rows.push(vec![i.to_string(), name.clone(), num(self.values[[j, i]])]);
            }
        }
        rows
    }
}
