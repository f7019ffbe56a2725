//! Interpretability methods for in-context tabular classifiers.
//!
//! An in-context learner refits by being called with a different context, so
//! methods that normally need retraining (feature-subset Shapley values,
//! leave-one-covariate-out, leave-one-out and Data Shapley) become a handful
//! of forward passes. Every routine here takes a [`Predictor`], which pairs a
//! backend with a [`CostLedger`] counting token connections per call.

pub mod data;
pub mod effects;
pub mod error;
pub mod export;
pub mod harness;
pub mod importance;
pub mod predictor;
pub mod risk;
pub mod rng;
pub mod shapley;
pub mod stats;
pub mod valuation;

pub use data::{Dataset, FeatureSubset, ObservationSubset, Standardizer};
pub use error::{Error, Result};
pub use predictor::{
    token_cost, Backend, ConstantBackend, CostLedger, Differentiable, FnBackend, LedgerSnapshot, PredictionBatch,
    Predictor, ReferenceBackend,
};
pub use risk::RiskKind;
