//! Kernel SHAP over feature coalitions, with exact (in-context refit) or
//! imputation-based coalition values, plus a brute-force reference.

pub mod coalitions;
mod game;
pub mod surrogate;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use coalitions::{
    kernel_size_distribution, plan_coalitions, sample_coalitions, shap_kernel_weight, CoalitionPlan, CoalitionSampler,
};
pub use game::{
    value_approx_retrain, value_exact_retrain, ApproxExecution, CoalitionGame, EmptyCoalition, PredictionGame,
    RetrainMode,
};
pub use surrogate::{
    fit_weighted_regression, solve_weighted_surrogate, RankPolicy, RegressionFit, SolveDiagnostics, SurrogateFit,
};

use crate::data::{Dataset, FeatureSubset};
use crate::error::{contract, Result};
use crate::export::{matrix_rows, num, CsvTable};
use crate::predictor::{token_cost, Predictor};

/// Largest player count accepted by the brute-force routines.
pub const BRUTE_FORCE_MAX_PLAYERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShapConfig {
    pub samples: usize,
    pub mode: RetrainMode,
    pub seed: u64,
    #[serde(default)]
    pub empty: EmptyCoalition,
    #[serde(default)]
    pub execution: ApproxExecution,
}

impl KernelShapConfig {
    pub fn new(samples: usize, mode: RetrainMode, seed: u64) -> Self {
        Self { samples, mode, seed, empty: EmptyCoalition::BaseRate, execution: ApproxExecution::Sequential }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionDiagnostics {
    pub coalitions: usize,
    /// `-1` for exact retraining.
    pub imputations: i64,
    pub exhaustive: bool,
    pub condition_number: f64,
    pub ridge_applied: bool,
    pub efficiency_residual: f64,
    pub token_connections: u64,
    pub evaluation_calls: u64,
    pub seed: u64,
}

/// Per-row feature attributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionResult {
    pub feature_names: Vec<String>,
    /// Empty-coalition value per inference row.
    pub base_value: Vec<f64>,
    /// `p x n_inf`.
    #[serde(serialize_with = "matrix_rows")]
    pub phi: Array2<f64>,
    pub mode: RetrainMode,
    pub diagnostics: AttributionDiagnostics,
}

impl CsvTable for AttributionResult {
    fn header(&self) -> Vec<String> {
        ["inference_id", "feature", "phi"].map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::with_capacity(self.phi.len());
        for i in 0..self.phi.ncols() {
            for (j, name) in self.feature_names.iter().enumerate() {
                rows.push(vec![i.to_string(), name.clone(), num(self.phi[[j, i]])]);
            }
        }
        rows
    }
}

/// Plans coalitions, evaluates the game and fits the constrained surrogate.
pub fn estimate_game(
    game: &dyn CoalitionGame,
    samples: usize,
    seed: u64,
    policy: RankPolicy,
) -> Result<(SurrogateFit, CoalitionPlan)> {
    let p = game.players();
    let plan = plan_coalitions(p, samples, seed)?;
    let values = game.values(&plan.coalitions)?;
    let v_full = game.full_value()?;
    let v_empty = game.empty_value()?;
    let design =
        Array2::from_shape_fn(
            (plan.coalitions.len(), p),
            |(k, j)| {
                if plan.coalitions[k].contains(j) {
                    1.0
                } else {
                    0.0
                }
            },
        );
    let outputs = game.outputs();
    let value_matrix = Array2::from_shape_fn((values.len(), outputs), |(k, i)| values[k][i]);
    let fit = solve_weighted_surrogate(design.view(), &plan.weights, value_matrix.view(), &v_empty, &v_full, policy)?;
    Ok((fit, plan))
}

/// Kernel SHAP attributions of the predictions for every inference row.
///
/// Exact retraining charges one `token_cost(n_train, n_inf)` per coalition;
/// approximate retraining charges one per coalition and imputation sample
/// (sequential) or a single `token_cost(n_train, M * L * n_inf)` (single pass).
/// The full-feature prediction adds one call.
pub fn kernel_shap(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    config: &KernelShapConfig,
) -> Result<AttributionResult> {
    let start = predictor.ledger().snapshot();
    let game = PredictionGame {
        predictor,
        train,
        inference,
        mode: config.mode,
        seed: config.seed,
        empty: config.empty,
        execution: config.execution,
    };
    let (fit, plan) = estimate_game(&game, config.samples, config.seed, RankPolicy::RidgeFallback)?;
    let spent = predictor.ledger().snapshot().since(&start);
    Ok(AttributionResult {
        feature_names: train.column_names().to_vec(),
        base_value: fit.base_value,
        phi: fit.phi,
        mode: config.mode,
        diagnostics: AttributionDiagnostics {
            coalitions: plan.coalitions.len(),
            imputations: config.mode.l(),
            exhaustive: plan.exhaustive,
            condition_number: fit.diagnostics.condition_number,
            ridge_applied: fit.diagnostics.ridge_applied,
            efficiency_residual: fit.efficiency_residual,
            token_connections: spent.token_connections,
            evaluation_calls: spent.evaluation_calls,
            seed: config.seed,
        },
    })
}

/// Token connections charged by [`kernel_shap`] excluding the full-feature call.
///
/// Exact: `M * token_cost(n, m)`. Approximate single pass:
/// `C(n, 2) + n * m * M * L`. Approximate sequential: `M * L * token_cost(n, m)`.
pub fn kernel_shap_budget(
    n_train: usize,
    n_inf: usize,
    coalitions: usize,
    mode: RetrainMode,
    execution: ApproxExecution,
) -> u64 {
    let m = coalitions as u64;
    match (mode, execution) {
        (RetrainMode::Exact, _) => m * token_cost(n_train, n_inf),
        (RetrainMode::Approximate { imputations }, ApproxExecution::SinglePass) => {
            token_cost(n_train, n_inf * coalitions * imputations)
        }
        (RetrainMode::Approximate { imputations }, ApproxExecution::Sequential) => {
            m * imputations as u64 * token_cost(n_train, n_inf)
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values of any game by enumerating all `2^p` coalitions.
/// Returns `p x outputs`.
pub fn exact_shapley(game: &dyn CoalitionGame) -> Result<Array2<f64>> {
    let p = game.players();
    if p == 0 || p > BRUTE_FORCE_MAX_PLAYERS {
        return Err(contract(format!("brute-force Shapley supports 1..={BRUTE_FORCE_MAX_PLAYERS} players, got {p}")));
    }
    let full_bits = (1u64 << p) - 1;
    let mut values: Vec<Vec<f64>> = (1..full_bits)
        .into_par_iter()
        .map(|bits| game.value(&FeatureSubset::from_bits(p, bits), bits))
        .collect::<Result<_>>()?;
    values.insert(0, game.empty_value()?);
    values.push(game.full_value()?);

    let outputs = game.outputs();
    let shares: Vec<f64> = (0..p).map(|s| 1.0 / (p as f64 * binomial(p - 1, s))).collect();
    let mut phi = Array2::zeros((p, outputs));
    for j in 0..p {
        let bit = 1usize << j;
        for without in 0..=full_bits as usize {
            if without & bit != 0 {
                continue;
            }
            let w = shares[without.count_ones() as usize];
            let (lo, hi) = (&values[without], &values[without | bit]);
            for k in 0..outputs {
                phi[[j, k]] += w * (hi[k] - lo[k]);
            }
        }
    }
    Ok(phi)
}

/// Exact Shapley values of the exact-retraining prediction game, `p x n_inf`.
pub fn exact_shapley_bruteforce(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    empty: EmptyCoalition,
) -> Result<Array2<f64>> {
    let game = PredictionGame {
        predictor,
        train,
        inference,
        mode: RetrainMode::Exact,
        seed: 0,
        empty,
        execution: ApproxExecution::Sequential,
    };
    exact_shapley(&game)
}

/// [`exact_shapley_bruteforce`] for a single inference row.
pub fn exact_shapley_row(
    predictor: &Predictor,
    train: &Dataset,
    row: &[f64],
    empty: EmptyCoalition,
) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, row.len()), row).map_err(|e| contract(e.to_string()))?;
    Ok(exact_shapley_bruteforce(predictor, train, x, empty)?.column(0).to_vec())
}

/// Mean over inference rows of the summed absolute attribution error.
pub fn shap_error_metric(estimate: ArrayView2<'_, f64>, exact: ArrayView2<'_, f64>) -> Result<f64> {
    if estimate.dim() != exact.dim() {
        return Err(contract(format!("estimate is {:?}, exact values {:?}", estimate.dim(), exact.dim())));
    }
    let n_inf = exact.ncols();
    if n_inf == 0 {
        return Err(contract("no inference rows to compare"));
    }
    let total: f64 = estimate.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / n_inf as f64)
}
