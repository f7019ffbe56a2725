//! Tabular datasets and the player subsets used by both Shapley games.
//!
//! A [`Dataset`] is immutable once built: every restriction returns a new
//! dataset and leaves the source untouched.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, column_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::InvalidData(format!("{} feature rows but {} labels", features.nrows(), labels.len())));
        }
        if features.ncols() != column_names.len() {
            return Err(Error::InvalidData(format!(
                "{} feature columns but {} column names",
                features.ncols(),
                column_names.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidData(format!("label {} at row {pos} is not in {{0,1}}", labels[pos])));
        }
        if let Some(((r, c), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value {v} at row {r}, column {c}")));
        }
        let features =
            if features.is_standard_layout() { features } else { features.as_standard_layout().into_owned() };
        Ok(Self { features, labels, column_names })
    }

    /// Builds a dataset with generated column names `x0, x1, ...`.
    pub fn from_parts(features: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of positive labels; 0 for an empty dataset.
    pub fn base_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let positives = self.labels.iter().filter(|&&y| y == 1).count();
        positives as f64 / self.labels.len() as f64
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }

    /// Keeps only the masked-in columns. An empty mask yields a zero-column dataset.
    pub fn restrict_features(&self, subset: &FeatureSubset) -> Result<Self> {
        if subset.len() != self.n_cols() {
            return Err(Error::Contract(format!(
                "feature mask has length {} but dataset has {} columns",
                subset.len(),
                self.n_cols()
            )));
        }
        let cols = subset.indices();
        Ok(Self {
            features: self.features.select(Axis(1), &cols),
            labels: self.labels.clone(),
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
        })
    }

    /// Keeps only the masked-in rows, in their original order.
    pub fn restrict_observations(&self, subset: &ObservationSubset) -> Result<Self> {
        if subset.len() != self.n_rows() {
            return Err(Error::Contract(format!(
                "observation mask has length {} but dataset has {} rows",
                subset.len(),
                self.n_rows()
            )));
        }
        Ok(self.select_rows(&subset.indices()))
    }

    /// Rows by index, in the given order. Panics on an out-of-range index.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            column_names: self.column_names.clone(),
        }
    }

    pub fn without_row(&self, row: usize) -> Self {
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&i| i != row).collect();
        self.select_rows(&keep)
    }

    pub fn without_column(&self, column: usize) -> Result<Self> {
        self.restrict_features(&FeatureSubset::full(self.n_cols()).without(column))
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.column_names.clone())
    }
}

/// Bit mask over the columns of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureSubset {
    mask: Vec<bool>,
}

/// Bit mask over the rows of a training set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObservationSubset {
    mask: Vec<bool>,
}

macro_rules! mask_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn from_mask(mask: Vec<bool>) -> Self {
                Self { mask }
            }

            pub fn from_indices(len: usize, indices: &[usize]) -> Self {
                let mut mask = vec![false; len];
                for &i in indices {
                    mask[i] = true;
                }
                Self { mask }
            }

            pub fn full(len: usize) -> Self {
                Self { mask: vec![true; len] }
            }

            pub fn empty(len: usize) -> Self {
                Self { mask: vec![false; len] }
            }

            pub fn len(&self) -> usize {
                self.mask.len()
            }

            pub fn is_empty(&self) -> bool {
                self.mask.is_empty()
            }

            pub fn count(&self) -> usize {
                self.mask.iter().filter(|&&b| b).count()
            }

            pub fn contains(&self, i: usize) -> bool {
                self.mask[i]
            }

            pub fn mask(&self) -> &[bool] {
                &self.mask
            }

            pub fn indices(&self) -> Vec<usize> {
                self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
            }

            pub fn complement(&self) -> Self {
                Self { mask: self.mask.iter().map(|b| !b).collect() }
            }

            pub fn with(&self, i: usize) -> Self {
                let mut mask = self.mask.clone();
                mask[i] = true;
                Self { mask }
            }

            pub fn without(&self, i: usize) -> Self {
                let mut mask = self.mask.clone();
                mask[i] = false;
                Self { mask }
            }

            /// Interprets the low `len` bits of `bits` as a mask (bit `i` = element `i`).
            pub fn from_bits(len: usize, bits: u64) -> Self {
                Self { mask: (0..len).map(|i| bits >> i & 1 == 1).collect() }
            }

            /// Inverse of [`Self::from_bits`]; only valid for `len <= 64`.
            pub fn to_bits(&self) -> u64 {
                debug_assert!(self.mask.len() <= 64);
                self.mask.iter().enumerate().fold(0u64, |acc, (i, &b)| if b { acc | 1 << i } else { acc })
            }
        }
    };
}

mask_impl!(FeatureSubset);
mask_impl!(ObservationSubset);

/// Column-wise z-scoring with statistics taken from a training set.
/// Constant columns get a unit divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: ArrayView2<'_, f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mean: Array1<f64> = features.sum_axis(Axis(0)) / n;
        let scale = features
            .columns()
            .into_iter()
            .zip(mean.iter())
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean: mean.to_vec(), scale }
    }

    pub fn transform(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }

    pub fn transform_dataset(&self, data: &Dataset) -> Result<Dataset> {
        data.with_features(self.transform(data.features()))
    }
}
