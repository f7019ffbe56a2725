//! Coalition values for feature-subset games.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSubset};
use crate::error::{contract, Error, Result};
use crate::predictor::Predictor;
use crate::rng::{stream, Domain};

/// A cooperative game whose value is a vector (one entry per output).
pub trait CoalitionGame: Sync {
    fn players(&self) -> usize;
    fn outputs(&self) -> usize;
    /// Value of a coalition that is neither empty nor full. `draw` indexes the
    /// random stream reserved for this evaluation.
    fn value(&self, coalition: &FeatureSubset, draw: u64) -> Result<Vec<f64>>;
    fn empty_value(&self) -> Result<Vec<f64>>;
    fn full_value(&self) -> Result<Vec<f64>>;

    /// Values of many coalitions; coalition `k` uses draw `k`.
    fn values(&self, coalitions: &[FeatureSubset]) -> Result<Vec<Vec<f64>>> {
        coalitions.par_iter().enumerate().map(|(k, c)| self.value(c, k as u64)).collect()
    }
}

/// How a coalition's prediction is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrainMode {
    /// Restrict training and inference features and predict again.
    Exact,
    /// Impute absent features from `imputations` training rows and average
    /// the full-feature predictions.
    Approximate { imputations: usize },
}

impl RetrainMode {
    /// Decodes the integer convention `-1` = exact, `L >= 1` = approximate.
    pub fn from_l(l: i64) -> Result<Self> {
        match l {
            -1 => Ok(Self::Exact),
            l if l >= 1 => Ok(Self::Approximate { imputations: l as usize }),
            l => Err(contract(format!("imputation count must be -1 or positive, got {l}"))),
        }
    }

    pub fn l(self) -> i64 {
        match self {
            Self::Exact => -1,
            Self::Approximate { imputations } => imputations as i64,
        }
    }
}

/// Value assigned to the coalition with no features.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EmptyCoalition {
    /// Positive-class rate of the training labels.
    #[default]
    BaseRate,
    Constant(f64),
}

impl EmptyCoalition {
    pub fn value(self, train: &Dataset) -> f64 {
        match self {
            Self::BaseRate => train.base_rate(),
            Self::Constant(c) => c,
        }
    }
}

/// How approximate-retraining predictions are submitted to the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxExecution {
    /// One call per imputation sample and coalition (bounded memory).
    #[default]
    Sequential,
    /// Every hybrid row of every coalition in a single call.
    SinglePass,
}

fn check_shapes(train: &Dataset, inference: ArrayView2<'_, f64>, subset: &FeatureSubset) -> Result<()> {
    if inference.ncols() != train.n_cols() {
        return Err(contract(format!("inference has {} columns, training data {}", inference.ncols(), train.n_cols())));
    }
    if subset.len() != train.n_cols() {
        return Err(contract(format!("subset covers {} features, data has {}", subset.len(), train.n_cols())));
    }
    if subset.count() == 0 {
        return Err(Error::BoundaryCoalition { size: 0, players: subset.len() });
    }
    Ok(())
}

/// Predictions of the model refitted in context on the features in `subset`.
///
/// Both the context and the inference rows are restricted; one predictor call.
pub fn value_exact_retrain(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    subset: &FeatureSubset,
) -> Result<Vec<f64>> {
    check_shapes(train, inference, subset)?;
    let restricted = train.restrict_features(subset)?;
    let x = inference.select(Axis(1), &subset.indices());
    Ok(predictor.predict(&restricted, x.view())?.into_vec())
}

/// Imputation approximation of the subset model: the full-feature model is
/// averaged over `imputations` training rows drawn without replacement, each
/// supplying the features outside `subset`.
pub fn value_approx_retrain(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    subset: &FeatureSubset,
    imputations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    approx_value(predictor, train, inference, subset, imputations, seed, 0)
}

fn draw_donors(train: &Dataset, imputations: usize, seed: u64, draw: u64) -> Result<Vec<usize>> {
    if imputations == 0 || imputations > train.n_rows() {
        return Err(contract(format!("imputation count {imputations} must lie in 1..={}", train.n_rows())));
    }
    let mut rng = stream(seed, Domain::Imputation, draw);
    Ok(rand::seq::index::sample(&mut rng, train.n_rows(), imputations).into_vec())
}

/// Writes the hybrid rows `(x*_S, x_donor_{S^C})` for every inference row into `out`.
fn fill_hybrids(
    out: &mut ndarray::ArrayViewMut2<'_, f64>,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    subset: &FeatureSubset,
    donor: usize,
) {
    let features = train.features();
    let donor_row = features.row(donor);
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = if subset.contains(j) { inference[[i, j]] } else { donor_row[j] };
        }
    }
}

pub(crate) fn approx_value(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    subset: &FeatureSubset,
    imputations: usize,
    seed: u64,
    draw: u64,
) -> Result<Vec<f64>> {
    check_shapes(train, inference, subset)?;
    let donors = draw_donors(train, imputations, seed, draw)?;
    let n_inf = inference.nrows();
    let mut sum = vec![0.0; n_inf];
    let mut hybrid = Array2::zeros((n_inf, train.n_cols()));
    for &donor in &donors {
        fill_hybrids(&mut hybrid.view_mut(), train, inference, subset, donor);
        let pred = predictor.predict(train, hybrid.view())?;
        for (s, p) in sum.iter_mut().zip(pred.iter()) {
            *s += p;
        }
    }
    Ok(sum.into_iter().map(|s| s / imputations as f64).collect())
}

/// Approximate values for many coalitions from one predictor call.
/// Coalition `k` draws its donors from the same stream as in [`approx_value`],
/// so results agree with the sequential path.
pub(crate) fn approx_values_single_pass(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    coalitions: &[FeatureSubset],
    imputations: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n_inf = inference.nrows();
    let block = imputations * n_inf;
    let mut rows = Array2::zeros((coalitions.len() * block, train.n_cols()));
    for (k, subset) in coalitions.iter().enumerate() {
        check_shapes(train, inference, subset)?;
        let donors = draw_donors(train, imputations, seed, k as u64)?;
        for (l, &donor) in donors.iter().enumerate() {
            let start = k * block + l * n_inf;
            let mut view = rows.slice_mut(ndarray::s![start..start + n_inf, ..]);
            fill_hybrids(&mut view, train, inference, subset, donor);
        }
    }
    let pred = predictor.predict(train, rows.view())?;
    Ok((0..coalitions.len())
        .map(|k| {
            let mut sum = vec![0.0; n_inf];
            for l in 0..imputations {
                let start = k * block + l * n_inf;
                for (s, p) in sum.iter_mut().zip(&pred[start..start + n_inf]) {
                    *s += p;
                }
            }
            sum.into_iter().map(|s| s / imputations as f64).collect()
        })
        .collect())
}

/// Explains the predictions for each inference row; one output per row.
pub struct PredictionGame<'a> {
    pub predictor: &'a Predictor,
    pub train: &'a Dataset,
    pub inference: ArrayView2<'a, f64>,
    pub mode: RetrainMode,
    pub seed: u64,
    pub empty: EmptyCoalition,
    pub execution: ApproxExecution,
}

impl CoalitionGame for PredictionGame<'_> {
    fn players(&self) -> usize {
        self.train.n_cols()
    }

    fn outputs(&self) -> usize {
        self.inference.nrows()
    }

    fn value(&self, coalition: &FeatureSubset, draw: u64) -> Result<Vec<f64>> {
        match self.mode {
            RetrainMode::Exact => value_exact_retrain(self.predictor, self.train, self.inference, coalition),
            RetrainMode::Approximate { imputations } => {
                approx_value(self.predictor, self.train, self.inference, coalition, imputations, self.seed, draw)
            }
        }
    }

    fn values(&self, coalitions: &[FeatureSubset]) -> Result<Vec<Vec<f64>>> {
        match (self.mode, self.execution) {
            (RetrainMode::Approximate { imputations }, ApproxExecution::SinglePass) => approx_values_single_pass(
                self.predictor,
                self.train,
                self.inference,
                coalitions,
                imputations,
                self.seed,
            ),
            _ => coalitions.par_iter().enumerate().map(|(k, c)| self.value(c, k as u64)).collect(),
        }
    }

    fn empty_value(&self) -> Result<Vec<f64>> {
        Ok(vec![self.empty.value(self.train); self.outputs()])
    }

    fn full_value(&self) -> Result<Vec<f64>> {
        Ok(self.predictor.predict(self.train, self.inference)?.into_vec())
    }
}
