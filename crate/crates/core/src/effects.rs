//! ICE, PD and ALE curves.
//!
//! Every grid-perturbed copy of the inference rows is stacked into one
//! inference matrix and scored in a single call, so the context cost
//! `C(n_train, 2)` is paid once instead of once per grid point. Batches larger
//! than `max_batch_rows` are split into the fewest equal chunks.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::export::{matrix_rows, num, CsvTable};
use crate::predictor::Predictor;

pub const DEFAULT_MAX_BATCH_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStrategy {
    UniqueValues,
    Quantile,
    Uniform,
}

impl std::str::FromStr for GridStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unique_values" | "unique" => Ok(Self::UniqueValues),
            "quantile" => Ok(Self::Quantile),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Config(format!("unknown grid strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub feature_index: usize,
    pub points: Vec<f64>,
    pub strategy: GridStrategy,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Grid over the values of one feature column.
///
/// `unique_values` ignores `size`; `quantile` collapses repeated quantiles.
/// Fewer than two distinct points is a degenerate grid.
pub fn build_grid(feature_index: usize, column: &[f64], size: usize, strategy: GridStrategy) -> Result<GridSpec> {
    if column.is_empty() {
        return Err(Error::DegenerateGrid("column is empty".into()));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("grid column contains non-finite values".into()));
    }
    if strategy != GridStrategy::UniqueValues && size < 2 {
        return Err(Error::DegenerateGrid(format!("grid size {size} is below 2")));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut points: Vec<f64> = match strategy {
        GridStrategy::UniqueValues => sorted.clone(),
        GridStrategy::Quantile => (0..size).map(|k| quantile_sorted(&sorted, k as f64 / (size - 1) as f64)).collect(),
        GridStrategy::Uniform => {
            (0..size).map(|k| if k + 1 == size { hi } else { lo + (hi - lo) * k as f64 / (size - 1) as f64 }).collect()
        }
    };
    points.dedup();
    if points.len() < 2 {
        return Err(Error::DegenerateGrid(format!("feature {feature_index} is constant ({lo})")));
    }
    Ok(GridSpec { feature_index, points, strategy })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Ice,
    Pd,
    Ale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectCurve {
    pub kind: EffectKind,
    pub grid: GridSpec,
    /// `G x n_inf` for ICE, `G x 1` otherwise.
    #[serde(serialize_with = "matrix_rows")]
    pub values: Array2<f64>,
    /// ALE only: inference rows per bin (`G - 1` entries).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_counts: Option<Vec<usize>>,
}

impl EffectCurve {
    /// The single curve of a PD or ALE result.
    pub fn curve(&self) -> Vec<f64> {
        self.values.column(0).to_vec()
    }
}

impl CsvTable for EffectCurve {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["grid_value".to_string()];
        match self.kind {
            EffectKind::Ice => h.extend((0..self.values.ncols()).map(|i| format!("row_{i}"))),
            _ => h.push("value".into()),
        }
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.grid
            .points
            .iter()
            .zip(self.values.rows())
            .map(|(g, r)| std::iter::once(num(*g)).chain(r.iter().map(|v| num(*v))).collect())
            .collect()
    }
}

fn check_inputs(train: &Dataset, inference: ArrayView2<'_, f64>, grid: &GridSpec) -> Result<()> {
    if grid.feature_index >= train.n_cols() {
        return Err(contract(format!(
            "grid feature {} out of range for {} columns",
            grid.feature_index,
            train.n_cols()
        )));
    }
    if inference.ncols() != train.n_cols() {
        return Err(contract(format!("inference has {} columns, training data {}", inference.ncols(), train.n_cols())));
    }
    if grid.points.len() < 2 || grid.points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateGrid("grid points must be strictly increasing, at least two".into()));
    }
    Ok(())
}

/// Scores `rows`, split into the fewest chunks of at most `max_rows`.
fn predict_chunked(
    predictor: &Predictor,
    train: &Dataset,
    rows: ArrayView2<'_, f64>,
    max_rows: usize,
) -> Result<Vec<f64>> {
    let n = rows.nrows();
    let max_rows = max_rows.max(1);
    let chunks = n.div_ceil(max_rows).max(1);
    let mut out = Vec::with_capacity(n);
    for c in 0..chunks {
        let (start, end) = (c * n / chunks, (c + 1) * n / chunks);
        out.extend(predictor.predict(train, rows.slice(s![start..end, ..]))?.iter());
    }
    Ok(out)
}

/// Copies of `inference` with the grid feature set to each grid value, grid-major.
fn grid_rows(inference: ArrayView2<'_, f64>, grid: &GridSpec) -> Array2<f64> {
    let n = inference.nrows();
    let mut rows = Array2::zeros((grid.len() * n, inference.ncols()));
    for (g, &z) in grid.points.iter().enumerate() {
        let mut block = rows.slice_mut(s![g * n..(g + 1) * n, ..]);
        block.assign(&inference);
        block.column_mut(grid.feature_index).fill(z);
    }
    rows
}

pub fn ice(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
) -> Result<EffectCurve> {
    ice_with_limit(predictor, train, inference, grid, DEFAULT_MAX_BATCH_ROWS)
}

pub fn ice_with_limit(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
    max_batch_rows: usize,
) -> Result<EffectCurve> {
    check_inputs(train, inference, grid)?;
    let rows = grid_rows(inference, grid);
    let pred = predict_chunked(predictor, train, rows.view(), max_batch_rows)?;
    let values = Array2::from_shape_vec((grid.len(), inference.nrows()), pred).map_err(|e| contract(e.to_string()))?;
    Ok(EffectCurve { kind: EffectKind::Ice, grid: grid.clone(), values, bin_counts: None })
}

fn row_means(ice: &Array2<f64>) -> Array2<f64> {
    let n = ice.ncols() as f64;
    Array2::from_shape_fn((ice.nrows(), 1), |(g, _)| ice.row(g).iter().sum::<f64>() / n)
}

/// Partial dependence: the ICE matrix averaged over inference rows.
pub fn pd(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
) -> Result<EffectCurve> {
    pd_with_limit(predictor, train, inference, grid, DEFAULT_MAX_BATCH_ROWS)
}

pub fn pd_with_limit(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
    max_batch_rows: usize,
) -> Result<EffectCurve> {
    if inference.nrows() == 0 {
        return Err(contract("partial dependence needs at least one inference row"));
    }
    let curve = ice_with_limit(predictor, train, inference, grid, max_batch_rows)?;
    Ok(EffectCurve { kind: EffectKind::Pd, values: row_means(&curve.values), ..curve })
}

/// ICE with one predictor call per grid point.
pub fn ice_naive(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
) -> Result<EffectCurve> {
    check_inputs(train, inference, grid)?;
    let mut values = Array2::zeros((grid.len(), inference.nrows()));
    let mut x = inference.to_owned();
    for (g, &z) in grid.points.iter().enumerate() {
        x.column_mut(grid.feature_index).fill(z);
        let pred = predictor.predict(train, x.view())?;
        values.row_mut(g).assign(&ndarray::ArrayView1::from(&pred[..]));
    }
    Ok(EffectCurve { kind: EffectKind::Ice, grid: grid.clone(), values, bin_counts: None })
}

/// PD with one predictor call per grid point.
pub fn pd_naive(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
) -> Result<EffectCurve> {
    if inference.nrows() == 0 {
        return Err(contract("partial dependence needs at least one inference row"));
    }
    let curve = ice_naive(predictor, train, inference, grid)?;
    Ok(EffectCurve { kind: EffectKind::Pd, values: row_means(&curve.values), ..curve })
}

/// First-order accumulated local effects on the inference rows.
///
/// Bin 1 is `[z_0, z_1]` and bin `k > 1` is `(z_{k-1}, z_k]`; rows outside
/// `[z_0, z_{G-1}]` are ignored and empty bins contribute no local effect.
/// The curve is centred so that its bin-count-weighted mean is zero.
pub fn ale(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
) -> Result<EffectCurve> {
    ale_with_limit(predictor, train, inference, grid, DEFAULT_MAX_BATCH_ROWS)
}

pub fn ale_with_limit(
    predictor: &Predictor,
    train: &Dataset,
    inference: ArrayView2<'_, f64>,
    grid: &GridSpec,
    max_batch_rows: usize,
) -> Result<EffectCurve> {
    check_inputs(train, inference, grid)?;
    let z = &grid.points;
    let j = grid.feature_index;
    let bins = z.len() - 1;
    let members: Vec<(usize, usize)> = inference
        .column(j)
        .iter()
        .enumerate()
        .filter_map(|(i, &x)| {
            if x < z[0] || x > z[bins] {
                return None;
            }
            let k = z[1..].partition_point(|&edge| edge < x);
            Some((i, k))
        })
        .collect();
    if members.is_empty() {
        return Err(Error::DegenerateGrid("no inference row falls inside the grid".into()));
    }

    let mut rows = Array2::zeros((2 * members.len(), inference.ncols()));
    for (m, &(i, k)) in members.iter().enumerate() {
        for (r, edge) in [(2 * m, z[k]), (2 * m + 1, z[k + 1])] {
            let mut row = rows.row_mut(r);
            row.assign(&inference.row(i));
            row[j] = edge;
        }
    }
    let pred = predict_chunked(predictor, train, rows.view(), max_batch_rows)?;

    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (m, &(_, k)) in members.iter().enumerate() {
        sums[k] += pred[2 * m + 1] - pred[2 * m];
        counts[k] += 1;
    }
    let mut f = vec![0.0; z.len()];
    for k in 0..bins {
        let local = if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 };
        f[k + 1] = f[k] + local;
    }
    let total = members.len() as f64;
    let centre: f64 = (0..bins).map(|k| counts[k] as f64 * (f[k] + f[k + 1]) / 2.0).sum::<f64>() / total;
    let values = Array2::from_shape_fn((z.len(), 1), |(g, _)| f[g] - centre);
    Ok(EffectCurve { kind: EffectKind::Ale, grid: grid.clone(), values, bin_counts: Some(counts) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{token_cost, ConstantBackend, FnBackend};
    use ndarray::array;

    fn train8() -> Dataset {
        let x = array![
            [-1.2, 0.3],
            [0.4, -0.7],
            [1.1, 1.5],
            [-0.3, -1.1],
            [0.9, 0.2],
            [-1.5, 1.0],
            [0.0, 0.6],
            [1.3, -0.4]
        ];
        Dataset::from_parts(x, vec![0, 1, 1, 0, 1, 0, 0, 1]).unwrap()
    }

    #[test]
    fn unique_and_uniform_grids() {
        let g = build_grid(0, &[1.0, 2.0, 2.0, 3.0], 99, GridStrategy::UniqueValues).unwrap();
        assert_eq!(g.points, vec![1.0, 2.0, 3.0]);
        let g = build_grid(0, &[0.3, 0.0, 1.0, 0.6], 2, GridStrategy::Uniform).unwrap();
        assert_eq!(g.points, vec![0.0, 1.0]);
        let g = build_grid(0, &[0.0, 1.0], 5, GridStrategy::Uniform).unwrap();
        assert_eq!(g.points, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn quantile_grid_matches_reference_routine() {
        let col = [3.1, 0.2, 5.5, 2.2, 2.2, 7.9, 1.4, 4.4, 0.9, 6.3, 3.3, 2.8, 5.0, 1.1, 8.8, 0.5, 4.0, 3.9, 6.6, 2.0];
        let g = build_grid(0, &col, 5, GridStrategy::Quantile).unwrap();
        for (a, b) in g.points.iter().zip([0.2, 1.85, 3.2, 5.125, 8.8]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let g = build_grid(0, &col, 4, GridStrategy::Quantile).unwrap();
        for (a, b) in g.points.iter().zip([0.2, 2.2, 4.266666666666667, 8.8]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let g = build_grid(0, &[1.0, 1.0, 1.0, 1.0, 5.0], 5, GridStrategy::Quantile).unwrap();
        assert_eq!(g.points, vec![1.0, 5.0]);
    }

    #[test]
    fn degenerate_grids() {
        for s in [GridStrategy::Quantile, GridStrategy::Uniform, GridStrategy::UniqueValues] {
            assert!(matches!(build_grid(0, &[2.0; 5], 4, s), Err(Error::DegenerateGrid(_))));
        }
        assert!(build_grid(0, &[], 4, GridStrategy::Quantile).is_err());
        assert!(build_grid(0, &[1.0, 2.0], 1, GridStrategy::Quantile).is_err());
    }

    #[test]
    fn batched_matches_naive_with_one_call() {
        let train = train8();
        let inf = array![[0.1, 0.2], [-1.0, 0.5], [1.0, -1.0]];
        let grid = build_grid(1, &[-1.0, -0.5, 0.0, 0.5, 1.0], 5, GridStrategy::UniqueValues).unwrap();
        let p = Predictor::reference(1.0).unwrap();
        let batched = ice(&p, &train, inf.view(), &grid).unwrap();
        assert_eq!(p.ledger().snapshot().evaluation_calls, 1);
        assert_eq!(p.ledger().snapshot().token_connections, token_cost(8, 15));
        let naive = ice_naive(&p, &train, inf.view(), &grid).unwrap();
        for (a, b) in batched.values.iter().zip(naive.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let pdc = pd(&p, &train, inf.view(), &grid).unwrap();
        for g in 0..5 {
            let mean = batched.values.row(g).mean().unwrap();
            assert!((pdc.values[[g, 0]] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn ledger_comparison_example() {
        let x = Array2::from_shape_fn((100, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0);
        let y = (0..100).map(|i| (i % 3 == 0) as u8).collect();
        let train = Dataset::from_parts(x, y).unwrap();
        let inf = Array2::from_shape_fn((10, 2), |(i, j)| (i as f64 - 5.0) / (j + 2) as f64);
        let grid = build_grid(0, &[0.0, 0.5, 1.0, 1.5, 2.0], 5, GridStrategy::UniqueValues).unwrap();
        let batched = Predictor::reference(1.0).unwrap();
        ice(&batched, &train, inf.view(), &grid).unwrap();
        let naive = Predictor::reference(1.0).unwrap();
        ice_naive(&naive, &train, inf.view(), &grid).unwrap();
        assert_eq!(batched.ledger().snapshot().token_connections, 9950);
        assert_eq!(naive.ledger().snapshot().token_connections, 29750);
        assert_eq!(naive.ledger().snapshot().evaluation_calls, 5);
    }

    #[test]
    fn chunking_records_one_term_per_chunk() {
        let train = train8();
        let inf = Array2::from_shape_fn((7, 2), |(i, j)| i as f64 * 0.3 - j as f64);
        let grid = build_grid(0, &[-1.0, 0.0, 1.0], 3, GridStrategy::UniqueValues).unwrap();
        let p = Predictor::reference(1.0).unwrap();
        let chunked = ice_with_limit(&p, &train, inf.view(), &grid, 8).unwrap();
        // 21 rows in chunks of at most 8: three calls of 7 rows.
        assert_eq!(p.ledger().snapshot().evaluation_calls, 3);
        assert_eq!(p.ledger().snapshot().token_connections, 3 * token_cost(8, 7));
        let whole = ice(&Predictor::reference(1.0).unwrap(), &train, inf.view(), &grid).unwrap();
        assert_eq!(chunked.values, whole.values);
    }

    #[test]
    fn constant_and_feature_blind_predictors() {
        let train = train8();
        let inf = array![[0.1, 0.2], [-1.0, 0.5]];
        let grid = build_grid(0, &[-1.0, 0.0, 1.0], 3, GridStrategy::UniqueValues).unwrap();
        let c = Predictor::new(ConstantBackend(0.3));
        assert!(pd(&c, &train, inf.view(), &grid).unwrap().curve().iter().all(|&v| v == 0.3));
        let blind = Predictor::new(FnBackend::new("blind", |r| 1.0 / (1.0 + (-r[1]).exp())));
        let curve = ice(&blind, &train, inf.view(), &grid).unwrap();
        for g in 1..3 {
            assert_eq!(curve.values.row(g), curve.values.row(0));
        }
        let a = ale(&blind, &train, array![[-0.5, 0.2], [0.5, 0.1]].view(), &grid).unwrap();
        assert!(a.curve().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn additive_predictor_gives_parallel_ice_curves() {
        let train = train8();
        let inf = array![[0.1, 0.2], [-1.0, 0.5], [1.0, -1.0], [0.3, 0.9]];
        let grid = build_grid(0, &[-1.0, -0.3, 0.4, 1.0], 4, GridStrategy::UniqueValues).unwrap();
        let additive = Predictor::new(FnBackend::new("additive", |r| 0.5 + 0.2 * r[0].tanh() + 0.1 * r[1].tanh()));
        let curve = ice(&additive, &train, inf.view(), &grid).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let diff: Vec<f64> = (0..4).map(|g| curve.values[[g, a]] - curve.values[[g, b]]).collect();
                let mean = diff.iter().sum::<f64>() / 4.0;
                let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 4.0;
                assert!(var < 1e-10);
            }
        }
    }

    #[test]
    fn ale_two_bin_instance() {
        let train = train8();
        let inf = array![[-0.5, 0.2], [0.5, -0.3], [0.8, 0.9], [-0.9, 0.0], [1.5, 0.0], [0.0, 0.4]];
        let grid = build_grid(0, &[-1.0, 0.0, 1.0], 3, GridStrategy::UniqueValues).unwrap();
        let p = Predictor::reference(1.0).unwrap();
        let a = ale(&p, &train, inf.view(), &grid).unwrap();
        assert_eq!(p.ledger().snapshot().evaluation_calls, 1);
        assert_eq!(a.bin_counts, Some(vec![3, 2]));
        let expected = [-0.35310439743643834, 0.029633093149786738, 0.4555738632801906];
        for (v, e) in a.curve().iter().zip(expected) {
            assert!((v - e).abs() < 1e-12, "{v} vs {e}");
        }
        let weighted: f64 =
            [3.0, 2.0].iter().enumerate().map(|(k, n)| n * (a.values[[k, 0]] + a.values[[k + 1, 0]]) / 2.0).sum();
        assert!(weighted.abs() < 1e-10);
    }

    #[test]
    fn ale_with_empty_bin() {
        let train = train8();
        let inf = array![[-0.9, 0.2], [-0.8, 0.1]];
        let grid = build_grid(0, &[-1.0, 0.0, 1.0], 3, GridStrategy::UniqueValues).unwrap();
        let p = Predictor::reference(1.0).unwrap();
        let a = ale(&p, &train, inf.view(), &grid).unwrap();
        assert_eq!(a.bin_counts, Some(vec![2, 0]));
        assert_eq!(a.values[[1, 0]], a.values[[2, 0]]);
    }

    #[test]
    fn csv_layouts() {
        let train = train8();
        let inf = array![[0.1, 0.2], [-1.0, 0.5]];
        let grid = build_grid(0, &[-1.0, 1.0], 2, GridStrategy::UniqueValues).unwrap();
        let p = Predictor::new(ConstantBackend(0.5));
        let text = crate::export::csv_string(&ice(&p, &train, inf.view(), &grid).unwrap()).unwrap();
        assert_eq!(text, "grid_value,row_0,row_1\n-1,0.5,0.5\n1,0.5,0.5\n");
        let text = crate::export::csv_string(&pd(&p, &train, inf.view(), &grid).unwrap()).unwrap();
        assert_eq!(text, "grid_value,value\n-1,0.5\n1,0.5\n");
    }
}
