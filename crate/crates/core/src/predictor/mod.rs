//! The in-context predictor contract.
//!
//! An in-context learner has no fit step: every call receives the full
//! training context together with the rows to score. "Retraining" on a
//! feature or observation subset is therefore one more call with a
//! restricted context, and the only state worth tracking is the cost
//! ledger, which charges each call the attention cost of a transformer
//! forward pass regardless of what the backend actually does.

mod reference;
pub mod wire;

use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{contract, Error, Result};

pub use reference::{reference_gradient_wrt_train, reference_predict, ReferenceBackend, DEFAULT_BANDWIDTH};
pub use wire::ExternalBackend;

/// Number of token connections in one forward pass:
/// every pair of training tokens plus every (training, inference) pair.
pub fn token_cost(n_train: usize, n_inf: usize) -> u64 {
    let n = n_train as u64;
    n * n.saturating_sub(1) / 2 + n * n_inf as u64
}

/// Positive-class probabilities, one per inference row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionBatch(Vec<f64>);

impl PredictionBatch {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if let Some((i, p)) = probabilities.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(contract(format!("probability {p} at row {i} is outside [0,1]")));
        }
        Ok(Self(probabilities))
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PredictionBatch {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Accumulated token connections and evaluation calls. Safe to share across threads.
#[derive(Debug, Default)]
pub struct CostLedger {
    token_connections: AtomicU64,
    evaluation_calls: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub token_connections: u64,
    pub evaluation_calls: u64,
}

impl LedgerSnapshot {
    /// Cost incurred between `earlier` and `self`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            token_connections: self.token_connections - earlier.token_connections,
            evaluation_calls: self.evaluation_calls - earlier.evaluation_calls,
        }
    }
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, n_train: usize, n_inf: usize) {
        self.token_connections.fetch_add(token_cost(n_train, n_inf), Ordering::Relaxed);
        self.evaluation_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            token_connections: self.token_connections.load(Ordering::Relaxed),
            evaluation_calls: self.evaluation_calls.load(Ordering::Relaxed),
        }
    }
}

/// A model evaluated by in-context inference.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Scores `inference` rows given `train` as the context. Callers guarantee
    /// a non-empty context, non-empty inference set and matching column counts.
    fn predict(&self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>>;

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        None
    }
}

/// Analytic derivatives of a backend's predictions.
pub trait Differentiable {
    /// Row `j` holds `sum_k upstream[k] * d p_k / d (x_j, y_j)`, i.e. the
    /// vector-Jacobian product with respect to training row `j`'s features and
    /// its label relaxed to a real number. Shape `n_train x (p + 1)`.
    fn vjp_wrt_train(&self, train: &Dataset, inference: ArrayView2<'_, f64>, upstream: &[f64]) -> Result<Array2<f64>>;

    /// `d p_k / d x*_k` for every inference row `k`. Shape `n_inf x p`.
    fn jacobian_wrt_inference(&self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// A backend paired with its cost ledger. All interpretability routines take
/// a `&Predictor`; every successful forward pass is charged to the ledger.
pub struct Predictor {
    backend: Arc<dyn Backend>,
    ledger: CostLedger,
}

impl Predictor {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Self { backend, ledger: CostLedger::new() }
    }

    pub fn reference(bandwidth: f64) -> Result<Self> {
        Ok(Self::new(ReferenceBackend::new(bandwidth)?))
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn differentiable(&self) -> Result<&dyn Differentiable> {
        self.backend.differentiable().ok_or(Error::SensitivityUnsupported)
    }

    pub fn predict(&self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<PredictionBatch> {
        if inference.ncols() != train.n_cols() {
            return Err(contract(format!(
                "inference has {} columns but the context has {}",
                inference.ncols(),
                train.n_cols()
            )));
        }
        if train.is_empty() {
            return Err(Error::EmptyContext);
        }
        if inference.nrows() == 0 {
            return Ok(PredictionBatch::default());
        }
        let proba = self.backend.predict(train, inference)?;
        if proba.len() != inference.nrows() {
            return Err(Error::Transport(format!(
                "backend '{}' returned {} probabilities for {} rows",
                self.backend.name(),
                proba.len(),
                inference.nrows()
            )));
        }
        let batch = PredictionBatch::new(proba)
            .map_err(|e| Error::Transport(format!("backend '{}': {e}", self.backend.name())))?;
        self.ledger.record(train.n_rows(), inference.nrows());
        Ok(batch)
    }
}

impl std::fmt::Debug for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Predictor")
            .field("backend", &self.backend.name())
            .field("ledger", &self.ledger.snapshot())
            .finish()
    }
}

/// Predicts the same probability for every row. Useful as a protocol mock.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBackend(pub f64);

impl Backend for ConstantBackend {
    fn name(&self) -> &str {
        "constant"
    }

    fn predict(&self, _train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(vec![self.0; inference.nrows()])
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for ConstantBackend {
    fn vjp_wrt_train(
        &self,
        train: &Dataset,
        _inference: ArrayView2<'_, f64>,
        _upstream: &[f64],
    ) -> Result<Array2<f64>> {
        Ok(Array2::zeros((train.n_rows(), train.n_cols() + 1)))
    }

    fn jacobian_wrt_inference(&self, _train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(inference.dim()))
    }
}

/// Scores each inference row with a closure that ignores the context.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, _train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(inference.rows().into_iter().map(|r| (self.f)(r)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Half;

    impl Backend for Half {
        fn name(&self) -> &str {
            "half"
        }

        fn predict(&self, _: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
            Ok(vec![0.5; inference.nrows()])
        }
    }

    struct Short;

    impl Backend for Short {
        fn name(&self) -> &str {
            "short"
        }

        fn predict(&self, _: &Dataset, _: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
            Ok(vec![0.5])
        }
    }

    #[test]
    fn token_cost_examples() {
        assert_eq!(token_cost(3, 2), 9);
        assert_eq!(token_cost(1, 1), 1);
        assert_eq!(token_cost(256, 128), 65408);
        assert_eq!(token_cost(1, 0), 0);
    }

    #[test]
    fn ledger_accumulates_per_call() {
        let pred = Predictor::new(Half);
        let train = Dataset::from_parts(array![[0.0], [1.0], [2.0]], vec![0, 1, 0]).unwrap();
        let out = pred.predict(&train, array![[0.5], [1.5]].view()).unwrap();
        assert_eq!(&*out, &[0.5, 0.5]);
        pred.predict(&train, array![[0.5]].view()).unwrap();
        let s = pred.ledger().snapshot();
        assert_eq!(s.evaluation_calls, 2);
        assert_eq!(s.token_connections, token_cost(3, 2) + token_cost(3, 1));
    }

    #[test]
    fn column_mismatch_and_empty_inference() {
        let pred = Predictor::new(Half);
        let train = Dataset::from_parts(array![[0.0, 1.0]], vec![1]).unwrap();
        assert!(matches!(pred.predict(&train, array![[0.5]].view()), Err(Error::Contract(_))));
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(pred.predict(&train, empty.view()).unwrap().is_empty());
        assert_eq!(pred.ledger().snapshot().evaluation_calls, 0);
    }

    #[test]
    fn wrong_row_count_is_transport_error() {
        let pred = Predictor::new(Short);
        let train = Dataset::from_parts(array![[0.0]], vec![1]).unwrap();
        assert!(matches!(pred.predict(&train, array![[0.5], [0.7]].view()), Err(Error::Transport(_))));
    }

    #[test]
    fn empty_context_is_rejected() {
        let pred = Predictor::new(Half);
        let train = Dataset::from_parts(Array2::zeros((0, 1)), vec![]).unwrap();
        assert!(matches!(pred.predict(&train, array![[0.5]].view()), Err(Error::EmptyContext)));
    }

    #[test]
    fn batch_rejects_out_of_range() {
        assert!(PredictionBatch::new(vec![0.2, 1.2]).is_err());
        assert!(PredictionBatch::new(vec![f64::NAN]).is_err());
    }
}
