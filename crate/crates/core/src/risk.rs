//! Empirical risk functions over predicted positive-class probabilities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Probabilities are clamped to `[LOG_LOSS_EPS, 1 - LOG_LOSS_EPS]` inside log loss.
pub const LOG_LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    #[default]
    LogLoss,
    Brier,
    OneMinusAuc,
}

impl RiskKind {
    pub fn is_differentiable(self) -> bool {
        !matches!(self, RiskKind::OneMinusAuc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::LogLoss => "log_loss",
            RiskKind::Brier => "brier",
            RiskKind::OneMinusAuc => "one_minus_auc",
        }
    }
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_loss" | "logloss" => Ok(RiskKind::LogLoss),
            "brier" => Ok(RiskKind::Brier),
            "one_minus_auc" | "auc" => Ok(RiskKind::OneMinusAuc),
            other => Err(Error::Config(format!("unknown risk kind '{other}'"))),
        }
    }
}

/// Mean loss of `predictions` against binary `labels`.
pub fn empirical_risk(predictions: &[f64], labels: &[u8], kind: RiskKind) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(contract(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if predictions.is_empty() {
        return Err(contract("empirical risk of an empty set"));
    }
    let n = predictions.len() as f64;
    match kind {
        RiskKind::LogLoss => {
            let total: f64 = predictions
                .iter()
                .zip(labels)
                .map(|(&p, &y)| {
                    let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
                    if y == 1 {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .sum();
            Ok(total / n)
        }
        RiskKind::Brier => {
            let total: f64 = predictions.iter().zip(labels).map(|(&p, &y)| (p - f64::from(y)).powi(2)).sum();
            Ok(total / n)
        }
        RiskKind::OneMinusAuc => Ok(1.0 - roc_auc(predictions, labels)?),
    }
}

/// Derivative of the mean risk with respect to each prediction.
pub fn risk_gradient(predictions: &[f64], labels: &[u8], kind: RiskKind) -> Result<Vec<f64>> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(contract("risk gradient needs matching, non-empty predictions and labels"));
    }
    let n = predictions.len() as f64;
    match kind {
        RiskKind::LogLoss => Ok(predictions
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                // flat outside the clamp window
                if p <= LOG_LOSS_EPS || p >= 1.0 - LOG_LOSS_EPS {
                    0.0
                } else if y == 1 {
                    -1.0 / (p * n)
                } else {
                    1.0 / ((1.0 - p) * n)
                }
            })
            .collect()),
        RiskKind::Brier => Ok(predictions.iter().zip(labels).map(|(&p, &y)| 2.0 * (p - f64::from(y)) / n).collect()),
        RiskKind::OneMinusAuc => Err(Error::NonDifferentiableRisk("one_minus_auc is piecewise constant".into())),
    }
}

/// Area under the ROC curve with tied scores counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(contract("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels("ROC AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Mann-Whitney: sum of average ranks of positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_log_loss_is_clamped_zero() {
        let r = empirical_risk(&[1.0, 0.0], &[1, 0], RiskKind::LogLoss).unwrap();
        assert!(r < 1e-11);
    }

    #[test]
    fn half_predictions_give_ln2() {
        let r = empirical_risk(&[0.5; 4], &[1, 0, 0, 1], RiskKind::LogLoss).unwrap();
        assert!((r - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mixed_case_matches_scalar_recomputation() {
        let p = [0.9, 0.2, 0.6, 0.4];
        let y = [1, 0, 0, 1];
        let ll = empirical_risk(&p, &y, RiskKind::LogLoss).unwrap();
        assert!((ll - 0.5402713826800865).abs() < 1e-14);
        let br = empirical_risk(&p, &y, RiskKind::Brier).unwrap();
        assert!((br - 0.1925).abs() < 1e-15);
        let auc = empirical_risk(&p, &y, RiskKind::OneMinusAuc).unwrap();
        assert!((auc - 0.25).abs() < 1e-15);
    }

    #[test]
    fn auc_counts_ties_as_half() {
        assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.9, 0.9], &[0, 1, 0]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_auc_is_degenerate() {
        assert!(matches!(empirical_risk(&[0.2, 0.3], &[1, 1], RiskKind::OneMinusAuc), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn auc_gradient_is_rejected() {
        assert!(matches!(risk_gradient(&[0.2], &[1], RiskKind::OneMinusAuc), Err(Error::NonDifferentiableRisk(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [0.3, 0.7, 0.55];
        let y = [0, 1, 1];
        for kind in [RiskKind::LogLoss, RiskKind::Brier] {
            let g = risk_gradient(&p, &y, kind).unwrap();
            for k in 0..3 {
                let h = 1e-6;
                let mut up = p;
                let mut dn = p;
                up[k] += h;
                dn[k] -= h;
                let fd = (empirical_risk(&up, &y, kind).unwrap() - empirical_risk(&dn, &y, kind).unwrap()) / (2.0 * h);
                assert!((g[k] - fd).abs() < 1e-7, "{kind} {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("brier".parse::<RiskKind>().unwrap(), RiskKind::Brier);
        assert!("hinge".parse::<RiskKind>().is_err());
    }
}
