//! Softmax-kernel posterior predictor used as the stand-in in-context learner.
//!
//! For an inference row `x*` the prediction is `sum_i w_i(x*) y_i` with
//! `w = softmax_i(-|x* - x_i|^2 / h^2)`. It is parameter-free given the
//! context, invariant to training-row order and differentiable in both the
//! context and the query.

use ndarray::{Array2, ArrayView2};

use super::{Backend, Differentiable, PredictionBatch};
use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::risk::{risk_gradient, RiskKind};

pub const DEFAULT_BANDWIDTH: f64 = 1.0;

// Kernel terms lie in (0, 1]; summing them as 64.64 fixed point makes the
// normaliser and numerator independent of training-row order.
const FIXED_ONE: f64 = 18_446_744_073_709_551_616.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceBackend {
    bandwidth: f64,
}

impl ReferenceBackend {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(contract(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Default for ReferenceBackend {
    fn default() -> Self {
        Self { bandwidth: DEFAULT_BANDWIDTH }
    }
}

/// Row-major view of the context used by the kernel loops.
struct Context<'a> {
    x: std::borrow::Cow<'a, [f64]>,
    y: &'a [u8],
    p: usize,
    inv_h2: f64,
    /// Columns that vary across the context. A constant column adds the same
    /// amount to every logit of a query, so skipping it leaves the softmax
    /// unchanged and removes its rounding.
    active: Vec<usize>,
}

impl<'a> Context<'a> {
    fn new(train: &'a Dataset, bandwidth: f64) -> Self {
        let feats = train.features();
        let x = match feats.to_slice() {
            Some(s) => std::borrow::Cow::Borrowed(s),
            None => std::borrow::Cow::Owned(feats.iter().copied().collect()),
        };
        let active = (0..feats.ncols())
            .filter(|&c| {
                let col = feats.column(c);
                col.iter().any(|&v| v != col[0])
            })
            .collect();
        Self { x, y: train.labels(), p: train.n_cols(), inv_h2: 1.0 / (bandwidth * bandwidth), active }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Fills `logits` with `-|q - x_i|^2 / h^2` and returns the maximum.
    fn logits(&self, q: &[f64], logits: &mut Vec<f64>) -> f64 {
        logits.clear();
        let mut max = f64::NEG_INFINITY;
        for i in 0..self.n() {
            let row = self.row(i);
            let d2: f64 = self.active.iter().map(|&c| (q[c] - row[c]) * (q[c] - row[c])).sum();
            let a = -d2 * self.inv_h2;
            max = max.max(a);
            logits.push(a);
        }
        max
    }

    fn predict_row(&self, q: &[f64], logits: &mut Vec<f64>) -> f64 {
        let max = self.logits(q, logits);
        let mut den: u128 = 0;
        let mut num: u128 = 0;
        for (a, &y) in logits.iter().zip(self.y) {
            let term = ((a - max).exp() * FIXED_ONE) as u128;
            den += term;
            if y == 1 {
                num += term;
            }
        }
        (num as f64 / den as f64).clamp(0.0, 1.0)
    }

    /// Normalised kernel weights in floating point, plus the weighted label mean.
    fn weights(&self, q: &[f64], logits: &mut Vec<f64>, w: &mut Vec<f64>) -> f64 {
        let max = self.logits(q, logits);
        w.clear();
        w.extend(logits.iter().map(|a| (a - max).exp()));
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w.iter().zip(self.y).map(|(wi, &y)| wi * f64::from(y)).sum()
    }
}

fn rows(inference: &ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    inference.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Evaluates the kernel predictor directly, without a ledger.
pub fn reference_predict(train: &Dataset, inference: ArrayView2<'_, f64>, bandwidth: f64) -> Result<PredictionBatch> {
    let backend = ReferenceBackend::new(bandwidth)?;
    if train.is_empty() {
        return Err(Error::EmptyContext);
    }
    if inference.ncols() != train.n_cols() {
        return Err(contract("inference and context column counts differ"));
    }
    PredictionBatch::new(backend.predict(train, inference)?)
}

impl Backend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }

    fn predict(&self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if train.is_empty() {
            return Err(Error::EmptyContext);
        }
        let ctx = Context::new(train, self.bandwidth);
        let mut logits = Vec::with_capacity(ctx.n());
        let mut q = vec![0.0; ctx.p];
        Ok(inference
            .rows()
            .into_iter()
            .map(|row| {
                q.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
                ctx.predict_row(&q, &mut logits)
            })
            .collect())
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for ReferenceBackend {
    fn vjp_wrt_train(&self, train: &Dataset, inference: ArrayView2<'_, f64>, upstream: &[f64]) -> Result<Array2<f64>> {
        if upstream.len() != inference.nrows() {
            return Err(contract("upstream gradient length differs from inference rows"));
        }
        if train.is_empty() {
            return Err(Error::EmptyContext);
        }
        let ctx = Context::new(train, self.bandwidth);
        let p = ctx.p;
        let mut grad = Array2::zeros((ctx.n(), p + 1));
        let (mut logits, mut w) = (Vec::new(), Vec::new());
        for (q, &u) in rows(&inference).iter().zip(upstream) {
            if u == 0.0 {
                continue;
            }
            let pred = ctx.weights(q, &mut logits, &mut w);
            for j in 0..ctx.n() {
                let wj = w[j];
                if wj == 0.0 {
                    continue;
                }
                // d pred / d a_j = w_j (y_j - pred); d a_j / d x_j = 2 (q - x_j) / h^2
                let da = u * wj * (f64::from(ctx.y[j]) - pred) * 2.0 * ctx.inv_h2;
                let xj = ctx.row(j);
                for c in 0..p {
                    grad[[j, c]] += da * (q[c] - xj[c]);
                }
                grad[[j, p]] += u * wj;
            }
        }
        Ok(grad)
    }

    fn jacobian_wrt_inference(&self, train: &Dataset, inference: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if train.is_empty() {
            return Err(Error::EmptyContext);
        }
        let ctx = Context::new(train, self.bandwidth);
        let p = ctx.p;
        let mut jac = Array2::zeros((inference.nrows(), p));
        let (mut logits, mut w) = (Vec::new(), Vec::new());
        for (k, q) in rows(&inference).iter().enumerate() {
            let pred = ctx.weights(q, &mut logits, &mut w);
            for (j, wj) in w.iter().enumerate().take(ctx.n()) {
                let da = wj * (f64::from(ctx.y[j]) - pred) * -2.0 * ctx.inv_h2;
                if da == 0.0 {
                    continue;
                }
                let xj = ctx.row(j);
                for &c in &ctx.active {
                    jac[[k, c]] += da * (q[c] - xj[c]);
                }
            }
        }
        Ok(jac)
    }
}

/// Gradient of the empirical risk on `inference` with respect to training
/// row `row` (features, then the relaxed label). Length `p + 1`.
pub fn reference_gradient_wrt_train(
    train: &Dataset,
    inference: &Dataset,
    kind: RiskKind,
    row: usize,
    bandwidth: f64,
) -> Result<Vec<f64>> {
    if !kind.is_differentiable() {
        return Err(Error::NonDifferentiableRisk(kind.to_string()));
    }
    if row >= train.n_rows() {
        return Err(contract(format!("row {row} out of range for {} rows", train.n_rows())));
    }
    let backend = ReferenceBackend::new(bandwidth)?;
    let preds = backend.predict(train, inference.features())?;
    let upstream = risk_gradient(&preds, inference.labels(), kind)?;
    let grad = backend.vjp_wrt_train(train, inference.features(), &upstream)?;
    Ok(grad.row(row).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn eight_by_two() -> Dataset {
        Dataset::from_parts(
            array![
                [-1.2, 0.3],
                [0.4, -0.7],
                [1.1, 1.5],
                [-0.3, -1.1],
                [0.9, 0.2],
                [-1.5, 1.0],
                [0.0, 0.6],
                [1.3, -0.4]
            ],
            vec![0, 1, 1, 0, 1, 0, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn single_positive_row_gives_one() {
        let train = Dataset::from_parts(array![[3.0, -2.0]], vec![1]).unwrap();
        let out = reference_predict(&train, array![[0.0, 0.0], [10.0, 10.0]].view(), 1.0).unwrap();
        assert_eq!(&*out, &[1.0, 1.0]);
    }

    #[test]
    fn equidistant_rows_give_half() {
        let train = Dataset::from_parts(array![[-1.0], [1.0]], vec![0, 1]).unwrap();
        let out = reference_predict(&train, array![[0.0]].view(), 0.7).unwrap();
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn all_negative_context_gives_zero() {
        let train = Dataset::from_parts(array![[0.0], [1.0], [5.0]], vec![0, 0, 0]).unwrap();
        let out = reference_predict(&train, array![[0.3], [-4.0]].view(), 1.0).unwrap();
        assert_eq!(&*out, &[0.0, 0.0]);
    }

    #[test]
    fn duplicate_dominates_as_bandwidth_shrinks() {
        let train = Dataset::from_parts(array![[0.5, 0.5], [0.6, 0.4], [0.4, 0.7]], vec![1, 0, 0]).unwrap();
        let q = array![[0.5, 0.5]];
        let mut last = 0.0;
        for h in [1.0, 0.3, 0.1, 0.03, 0.01] {
            let p = reference_predict(&train, q.view(), h).unwrap()[0];
            assert!(p >= last);
            last = p;
        }
        assert!((last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_instance_matches_formula() {
        let out = reference_predict(&eight_by_two(), array![[0.1, 0.2], [-1.0, 0.5], [1.0, -1.0]].view(), 1.0).unwrap();
        let expected = [0.4880183055430828, 0.032308142742142595, 0.8766977984835869];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn xor_layout_matches_formula() {
        let train = Dataset::from_parts(array![[0., 0.], [0., 1.], [1., 0.], [1., 1.]], vec![0, 1, 1, 0]).unwrap();
        let q = array![[0.0, 0.0], [0.5, 0.5], [0.2, 0.9], [1.0, 0.3]];
        let out = reference_predict(&train, q.view(), 1.0).unwrap();
        let expected = [0.3932238664829637, 0.5, 0.5553419623964202, 0.5456052609478084];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_columns_give_base_rate() {
        let train = Dataset::from_parts(Array2::zeros((4, 0)), vec![1, 0, 1, 1]).unwrap();
        let out = reference_predict(&train, Array2::zeros((2, 0)).view(), 1.0).unwrap();
        assert_eq!(&*out, &[0.75, 0.75]);
    }

    #[test]
    fn rejects_bad_bandwidth_and_empty_context() {
        assert!(ReferenceBackend::new(0.0).is_err());
        assert!(ReferenceBackend::new(f64::NAN).is_err());
        let empty = Dataset::from_parts(Array2::zeros((0, 1)), vec![]).unwrap();
        assert!(matches!(reference_predict(&empty, array![[0.0]].view(), 1.0), Err(Error::EmptyContext)));
    }

    #[test]
    fn far_row_has_vanishing_gradient() {
        let train = Dataset::from_parts(array![[0.0, 0.0], [0.3, -0.2], [1e3, 1e3]], vec![0, 1, 1]).unwrap();
        let inf = Dataset::from_parts(array![[0.1, 0.0], [0.2, -0.1]], vec![0, 1]).unwrap();
        let g = reference_gradient_wrt_train(&train, &inf, RiskKind::LogLoss, 2, 1.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
        assert!(matches!(
            reference_gradient_wrt_train(&train, &inf, RiskKind::OneMinusAuc, 0, 1.0),
            Err(Error::NonDifferentiableRisk(_))
        ));
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_in_label_hull(
            xs in prop::collection::vec(-3.0f64..3.0, 12),
            ys in prop::collection::vec(0u8..2, 6),
            q in prop::collection::vec(-3.0f64..3.0, 4),
            shift in 1usize..6,
        ) {
            let train = Dataset::from_parts(Array2::from_shape_vec((6, 2), xs).unwrap(), ys.clone()).unwrap();
            let order: Vec<usize> = (0..6).map(|i| (i + shift) % 6).collect();
            let permuted = train.select_rows(&order);
            let queries = Array2::from_shape_vec((2, 2), q).unwrap();
            let a = reference_predict(&train, queries.view(), 0.8).unwrap();
            let b = reference_predict(&permuted, queries.view(), 0.8).unwrap();
            prop_assert_eq!(&*a, &*b);
            let lo = f64::from(*ys.iter().min().unwrap());
            let hi = f64::from(*ys.iter().max().unwrap());
            for p in a.iter() {
                prop_assert!(*p >= lo && *p <= hi);
            }
        }

        #[test]
        fn constant_column_does_not_change_predictions(
            xs in prop::collection::vec(-3.0f64..3.0, 10),
            ys in prop::collection::vec(0u8..2, 5),
            q in prop::collection::vec(-3.0f64..3.0, 6),
            c in -2.0f64..2.0,
        ) {
            let base = Array2::from_shape_vec((5, 2), xs).unwrap();
            let queries = Array2::from_shape_vec((3, 2), q).unwrap();
            let mut with_const = Array2::from_elem((5, 3), c);
            with_const.slice_mut(ndarray::s![.., ..2]).assign(&base);
            let mut q_const = Array2::from_elem((3, 3), c);
            q_const.slice_mut(ndarray::s![.., ..2]).assign(&queries);
            let a = reference_predict(&Dataset::from_parts(base, ys.clone()).unwrap(), queries.view(), 1.0).unwrap();
            let b = reference_predict(&Dataset::from_parts(with_const, ys).unwrap(), q_const.view(), 1.0).unwrap();
            prop_assert_eq!(&*a, &*b);
        }
    }
}
