//! Global feature importance: leave-one-covariate-out and SAGE.

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSubset};
use crate::error::{contract, Result};
use crate::export::{num, CsvTable};
use crate::predictor::Predictor;
use crate::risk::{empirical_risk, RiskKind};
use crate::shapley::{estimate_game, value_exact_retrain, CoalitionGame, RankPolicy, SolveDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Loco,
    Sage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    pub risk_kind: RiskKind,
    pub feature_names: Vec<String>,
    /// Positive means the feature reduces risk.
    pub scores: Vec<f64>,
    /// Risk of the full-feature model on the inference set.
    pub baseline_risk: f64,
    /// SAGE only: risk of predicting the training base rate everywhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empty_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SolveDiagnostics>,
    pub token_connections: u64,
    pub evaluation_calls: u64,
}

impl CsvTable for ImportanceReport {
    fn header(&self) -> Vec<String> {
        vec!["feature".into(), "score".into()]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.feature_names.iter().zip(&self.scores).map(|(f, s)| vec![f.clone(), num(*s)]).collect()
    }
}

fn check(train: &Dataset, inference: &Dataset) -> Result<()> {
    if inference.n_cols() != train.n_cols() {
        return Err(contract(format!(
            "inference has {} columns, training data {}",
            inference.n_cols(),
            train.n_cols()
        )));
    }
    if inference.is_empty() {
        return Err(contract("importance needs labelled inference rows"));
    }
    Ok(())
}

/// Risk increase on `inference` when each feature is dropped from both the
/// context and the inference rows. Costs `p + 1` predictor calls.
pub fn loco(predictor: &Predictor, train: &Dataset, inference: &Dataset, kind: RiskKind) -> Result<ImportanceReport> {
    check(train, inference)?;
    let p = train.n_cols();
    if p < 2 {
        return Err(contract("LOCO needs at least two features"));
    }
    let start = predictor.ledger().snapshot();
    let labels = inference.labels();
    let full = predictor.predict(train, inference.features())?;
    let baseline = empirical_risk(&full, labels, kind)?;
    let scores = (0..p)
        .into_par_iter()
        .map(|j| {
            let keep = FeatureSubset::full(p).without(j);
            let pred = value_exact_retrain(predictor, train, inference.features(), &keep)?;
            Ok(empirical_risk(&pred, labels, kind)? - baseline)
        })
        .collect::<Result<Vec<f64>>>()?;
    let spent = predictor.ledger().snapshot().since(&start);
    Ok(ImportanceReport {
        method: ImportanceMethod::Loco,
        risk_kind: kind,
        feature_names: train.column_names().to_vec(),
        scores,
        baseline_risk: baseline,
        empty_risk: None,
        samples: None,
        seed: None,
        diagnostics: None,
        token_connections: spent.token_connections,
        evaluation_calls: spent.evaluation_calls,
    })
}

/// The risk game: `v(S)` is the empirical risk of the model refitted in
/// context on the features in `S`; the empty coalition predicts the training
/// base rate.
pub struct RiskGame<'a> {
    pub predictor: &'a Predictor,
    pub train: &'a Dataset,
    pub inference: &'a Dataset,
    pub kind: RiskKind,
}

impl CoalitionGame for RiskGame<'_> {
    fn players(&self) -> usize {
        self.train.n_cols()
    }

    fn outputs(&self) -> usize {
        1
    }

    fn value(&self, coalition: &FeatureSubset, _draw: u64) -> Result<Vec<f64>> {
        let pred = value_exact_retrain(self.predictor, self.train, self.inference.features(), coalition)?;
        Ok(vec![empirical_risk(&pred, self.inference.labels(), self.kind)?])
    }

    fn empty_value(&self) -> Result<Vec<f64>> {
        let pred = vec![self.train.base_rate(); self.inference.n_rows()];
        Ok(vec![empirical_risk(&pred, self.inference.labels(), self.kind)?])
    }

    fn full_value(&self) -> Result<Vec<f64>> {
        let pred = self.predictor.predict(self.train, self.inference.features())?;
        Ok(vec![empirical_risk(&pred, self.inference.labels(), self.kind)?])
    }
}

/// Shapley attribution of risk reduction over features, estimated by the
/// kernel surrogate with exact in-context refits. Scores sum to
/// `risk(empty) - risk(full)`.
pub fn sage(
    predictor: &Predictor,
    train: &Dataset,
    inference: &Dataset,
    samples: usize,
    kind: RiskKind,
    seed: u64,
) -> Result<ImportanceReport> {
    check(train, inference)?;
    let start = predictor.ledger().snapshot();
    let game = RiskGame { predictor, train, inference, kind };
    let (fit, _) = estimate_game(&game, samples, seed, RankPolicy::RidgeFallback)?;
    let spent = predictor.ledger().snapshot().since(&start);
    let baseline = fit.base_value[0] + fit.phi.sum();
    Ok(ImportanceReport {
        method: ImportanceMethod::Sage,
        risk_kind: kind,
        feature_names: train.column_names().to_vec(),
        scores: fit.phi.index_axis(Axis(1), 0).iter().map(|v| -v).collect(),
        baseline_risk: baseline,
        empty_risk: Some(fit.base_value[0]),
        samples: Some(samples),
        seed: Some(seed),
        diagnostics: Some(fit.diagnostics),
        token_connections: spent.token_connections,
        evaluation_calls: spent.evaluation_calls,
    })
}
