//! Weighted linear surrogates fitted by SVD.
//!
//! Two fits share one solver: the Shapley surrogate, whose intercept and
//! coefficient sum are pinned by equality constraints (eliminated by
//! substitution, never enforced through large weights), and the plain
//! weighted regression with a free intercept used for observation games.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Diagonal loading used when the weighted system is rank-deficient.
pub const RIDGE_FALLBACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Rank deficiency is an error naming the unidentifiable columns.
    #[default]
    Strict,
    /// Rank deficiency is resolved with [`RIDGE_FALLBACK`] on the diagonal.
    RidgeFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Condition number of the weighted normal-equation matrix.
    pub condition_number: f64,
    pub rows: usize,
    pub ridge_applied: bool,
}

/// Coefficients of one weighted least-squares solve, one column per right-hand side.
struct Lstsq {
    coef: DMatrix<f64>,
    diagnostics: SolveDiagnostics,
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Minimises `sum_i w_i |a_i x - b_i|^2` for every column of `b`.
/// On rank deficiency returns the indices of unknowns touched by the null space.
fn weighted_lstsq(
    a: &Array2<f64>,
    weights: &[f64],
    b: &Array2<f64>,
    policy: RankPolicy,
) -> std::result::Result<Lstsq, Vec<Vec<f64>>> {
    let (m, q) = a.dim();
    let mut aw = to_dmatrix(a);
    let mut bw = to_dmatrix(b);
    for (i, &w) in weights.iter().enumerate() {
        let s = w.sqrt();
        aw.row_mut(i).scale_mut(s);
        bw.row_mut(i).scale_mut(s);
    }
    if q == 0 {
        let coef = DMatrix::zeros(0, b.ncols());
        return Ok(Lstsq {
            coef,
            diagnostics: SolveDiagnostics { condition_number: 1.0, rows: m, ridge_applied: false },
        });
    }

    let svd = aw.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = if m >= q { sv.min() } else { 0.0 };
    let tol = smax * (m.max(q) as f64) * f64::EPSILON;
    let condition_number = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };

    if smin > tol {
        let coef = svd.solve(&bw, tol).expect("u and v_t were computed");
        return Ok(Lstsq { coef, diagnostics: SolveDiagnostics { condition_number, rows: m, ridge_applied: false } });
    }

    let normal = aw.transpose() * &aw;
    match policy {
        RankPolicy::RidgeFallback => {
            let mut loaded = normal.clone();
            for d in 0..q {
                loaded[(d, d)] += RIDGE_FALLBACK;
            }
            let rhs = aw.transpose() * &bw;
            let coef = loaded
                .cholesky()
                .map(|c| c.solve(&rhs))
                .unwrap_or_else(|| DMatrix::from_element(q, b.ncols(), f64::NAN));
            Ok(Lstsq { coef, diagnostics: SolveDiagnostics { condition_number, rows: m, ridge_applied: true } })
        }
        RankPolicy::Strict => {
            let eig = SymmetricEigen::new(normal);
            let lmax = eig.eigenvalues.max().max(0.0);
            let null: Vec<Vec<f64>> = eig
                .eigenvalues
                .iter()
                .enumerate()
                .filter(|(_, &l)| l <= lmax * 1e3 * (m.max(q) as f64) * f64::EPSILON)
                .map(|(k, _)| eig.eigenvectors.column(k).iter().copied().collect())
                .collect();
            Err(null)
        }
    }
}

fn touched_columns(null: &[Vec<f64>]) -> Vec<usize> {
    let mut cols: Vec<usize> = null
        .iter()
        .flat_map(|v| {
            let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            v.iter().enumerate().filter(move |(_, x)| x.abs() > 1e-6 * scale).map(|(j, _)| j).collect::<Vec<_>>()
        })
        .collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// Solution of the efficiency-constrained Shapley surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    /// Intercept per output column (the empty-coalition value).
    pub base_value: Vec<f64>,
    /// Attributions, `players x outputs`.
    pub phi: Array2<f64>,
    pub diagnostics: SolveDiagnostics,
    /// Largest `|base + sum(phi) - full|` over output columns.
    pub efficiency_residual: f64,
}

/// Fits `v(z) ~ v_empty + z . phi` by weighted least squares subject to
/// `sum(phi) = v_full - v_empty`, separately for each output column.
///
/// `design` is `M x p` with 0/1 entries and no empty or full rows; `values`
/// is `M x outputs`.
pub fn solve_weighted_surrogate(
    design: ArrayView2<'_, f64>,
    weights: &[f64],
    values: ArrayView2<'_, f64>,
    v_empty: &[f64],
    v_full: &[f64],
    policy: RankPolicy,
) -> Result<SurrogateFit> {
    let (m, p) = design.dim();
    let outputs = values.ncols();
    if values.nrows() != m || weights.len() != m {
        return Err(contract(format!("design has {m} rows, values {} and weights {}", values.nrows(), weights.len())));
    }
    if v_empty.len() != outputs || v_full.len() != outputs {
        return Err(contract("boundary values must have one entry per output column"));
    }
    if p == 0 {
        return Err(contract("surrogate needs at least one player"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(contract(format!("weights must be finite and positive, got {w}")));
    }
    for (i, row) in design.rows().into_iter().enumerate() {
        if row.iter().any(|&z| z != 0.0 && z != 1.0) {
            return Err(contract(format!("design row {i} is not binary")));
        }
        let size = row.iter().filter(|&&z| z == 1.0).count();
        if size == 0 || size == p {
            return Err(Error::BoundaryCoalition { size, players: p });
        }
    }

    let delta: Vec<f64> = v_full.iter().zip(v_empty).map(|(f, e)| f - e).collect();
    let mut phi = Array2::zeros((p, outputs));
    let mut diagnostics = SolveDiagnostics { condition_number: 1.0, rows: m, ridge_applied: false };

    if p == 1 {
        phi.row_mut(0).assign(&Array1::from(delta.clone()));
    } else {
        // Substitute phi_last = delta - sum(phi_rest).
        let last = p - 1;
        let reduced = Array2::from_shape_fn((m, last), |(i, j)| design[[i, j]] - design[[i, last]]);
        let rhs =
            Array2::from_shape_fn((m, outputs), |(i, k)| values[[i, k]] - v_empty[k] - design[[i, last]] * delta[k]);
        let solved = weighted_lstsq(&reduced, weights, &rhs, policy).map_err(|null| {
            let lifted: Vec<Vec<f64>> = null
                .iter()
                .map(|v| {
                    let mut full = v.clone();
                    full.push(-v.iter().sum::<f64>());
                    full
                })
                .collect();
            Error::InsufficientCoalitionDiversity { columns: touched_columns(&lifted) }
        })?;
        diagnostics = solved.diagnostics;
        for k in 0..outputs {
            let mut rest = 0.0;
            for j in 0..last {
                let c = solved.coef[(j, k)];
                phi[[j, k]] = c;
                rest += c;
            }
            phi[[last, k]] = delta[k] - rest;
        }
    }

    let efficiency_residual =
        (0..outputs).map(|k| (v_empty[k] + phi.column(k).sum() - v_full[k]).abs()).fold(0.0, f64::max);
    Ok(SurrogateFit { base_value: v_empty.to_vec(), phi, diagnostics, efficiency_residual })
}

/// Ordinary weighted regression with a free intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Fits `y ~ intercept + design . beta` by weighted least squares.
pub fn fit_weighted_regression(
    design: ArrayView2<'_, f64>,
    weights: &[f64],
    response: &[f64],
    policy: RankPolicy,
) -> Result<RegressionFit> {
    let (m, q) = design.dim();
    if response.len() != m || weights.len() != m {
        return Err(contract("design, weights and response lengths differ"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(contract(format!("weights must be finite and positive, got {w}")));
    }
    let a = Array2::from_shape_fn((m, q + 1), |(i, j)| if j == 0 { 1.0 } else { design[[i, j - 1]] });
    let b = Array2::from_shape_fn((m, 1), |(i, _)| response[i]);
    let solved = weighted_lstsq(&a, weights, &b, policy).map_err(|null| {
        // column 0 is the intercept
        let columns = touched_columns(&null).into_iter().filter(|&j| j > 0).map(|j| j - 1).collect();
        Error::InsufficientCoalitionDiversity { columns }
    })?;
    Ok(RegressionFit {
        intercept: solved.coef[(0, 0)],
        coefficients: (1..=q).map(|j| solved.coef[(j, 0)]).collect(),
        diagnostics: solved.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::coalitions::plan_coalitions;
    use ndarray::array;

    fn design_of(p: usize) -> (Array2<f64>, Vec<f64>) {
        let plan = plan_coalitions(p, usize::MAX, 0).unwrap();
        let m = plan.coalitions.len();
        let design = Array2::from_shape_fn((m, p), |(i, j)| if plan.coalitions[i].contains(j) { 1.0 } else { 0.0 });
        (design, plan.weights)
    }

    #[test]
    fn recovers_additive_function() {
        let beta = [0.3, -1.2, 0.05, 2.0, -0.4];
        let intercept = 0.7;
        let (design, weights) = design_of(5);
        let values = design.dot(&Array1::from(beta.to_vec())).mapv(|v| v + intercept).insert_axis(ndarray::Axis(1));
        let full = intercept + beta.iter().sum::<f64>();
        let fit =
            solve_weighted_surrogate(design.view(), &weights, values.view(), &[intercept], &[full], RankPolicy::Strict)
                .unwrap();
        for (j, b) in beta.iter().enumerate() {
            assert!((fit.phi[[j, 0]] - b).abs() < 1e-10);
        }
        assert!(fit.efficiency_residual < 1e-12);
        assert!(fit.diagnostics.condition_number.is_finite());
    }

    #[test]
    fn summed_weights_equal_duplicated_rows() {
        let design = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]];
        let values = array![[0.2], [0.5], [0.4], [0.9], [0.1]];
        let w = [0.5, 1.0, 0.25, 2.0, 1.0];
        let a = solve_weighted_surrogate(design.view(), &w, values.view(), &[0.0], &[1.0], RankPolicy::Strict).unwrap();

        let dup_design = ndarray::concatenate![ndarray::Axis(0), design, design.slice(ndarray::s![3..4, ..])];
        let dup_values = ndarray::concatenate![ndarray::Axis(0), values, values.slice(ndarray::s![3..4, ..])];
        let dup_w = [0.5, 1.0, 0.25, 1.5, 1.0, 0.5];
        let b =
            solve_weighted_surrogate(dup_design.view(), &dup_w, dup_values.view(), &[0.0], &[1.0], RankPolicy::Strict)
                .unwrap();
        for (x, y) in a.phi.iter().zip(b.phi.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        // players 0 and 1 always move together
        let design = array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0]];
        let values = array![[0.1], [0.2], [0.3], [0.4]];
        let err = solve_weighted_surrogate(design.view(), &[1.0; 4], values.view(), &[0.0], &[1.0], RankPolicy::Strict)
            .unwrap_err();
        match err {
            Error::InsufficientCoalitionDiversity { columns } => assert_eq!(columns, vec![0, 1]),
            other => panic!("unexpected {other:?}"),
        }
        let ridge = solve_weighted_surrogate(
            design.view(),
            &[1.0; 4],
            values.view(),
            &[0.0],
            &[1.0],
            RankPolicy::RidgeFallback,
        )
        .unwrap();
        assert!(ridge.diagnostics.ridge_applied);
        assert!(ridge.efficiency_residual < 1e-10);
    }

    #[test]
    fn rejects_boundary_rows_and_bad_weights() {
        let values = array![[0.1], [0.2]];
        let full_row = array![[1.0, 1.0], [1.0, 0.0]];
        assert!(matches!(
            solve_weighted_surrogate(full_row.view(), &[1.0, 1.0], values.view(), &[0.0], &[1.0], RankPolicy::Strict),
            Err(Error::BoundaryCoalition { .. })
        ));
        let ok = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(solve_weighted_surrogate(ok.view(), &[1.0, -1.0], values.view(), &[0.0], &[1.0], RankPolicy::Strict)
            .is_err());
    }

    #[test]
    fn regression_recovers_linear_model() {
        let design = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 0.0]];
        let y: Vec<f64> = design.rows().into_iter().map(|r| 0.5 + 2.0 * r[0] - 1.0 * r[1]).collect();
        let fit = fit_weighted_regression(design.view(), &[1.0, 2.0, 1.0, 0.5, 1.0], &y, RankPolicy::Strict).unwrap();
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_reports_aliased_columns() {
        let design = array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        let err =
            fit_weighted_regression(design.view(), &[1.0; 4], &[0.1, 0.2, 0.3, 0.4], RankPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::InsufficientCoalitionDiversity { columns } if columns == vec![0, 1]));
    }
}
