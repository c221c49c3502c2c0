//! Linear map from bilinear respiratory weights to shape-model weights.
//!
//! `W` (`e × f`) minimises `Σ‖W·x_k − y_k‖² + λ‖W‖²_F`. With the SVD
//! `X = U S Vᵀ` of the stacked inputs the solution is
//! `Wᵀ = V diag(s / (s² + λ)) Uᵀ Y`; for `λ = 0` this is the truncated
//! pseudo-inverse. No intercept is fitted.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::RANK_TOL;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionMap {
    /// `e × f`.
    pub w: DMatrix<f64>,
    pub ridge: f64,
    /// Training residual norm per output mode.
    pub residuals: Vec<f64>,
}

impl RegressionMap {
    pub fn identity(n: usize) -> Self {
        Self { w: DMatrix::identity(n, n), ridge: 0.0, residuals: vec![0.0; n] }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Fit `W` from `n` paired rows of `x` (`n × f`) and `y` (`n × e`).
pub fn fit_regression(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<RegressionMap> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Input(format!("regression needs at least 2 samples, got {n}")));
    }
    if y.nrows() != n {
        return Err(Error::Input(format!("{n} input rows but {} output rows", y.nrows())));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge parameter must be ≥ 0, got {ridge}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Input("regression data contains non-finite values".into()));
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let mut wt = DMatrix::zeros(x.ncols(), y.ncols());
    for i in 0..s.len() {
        let si = s[i];
        let gain = if ridge > 0.0 {
            si / (si * si + ridge)
        } else if smax > 0.0 && si > RANK_TOL * smax {
            1.0 / si
        } else {
            0.0
        };
        if gain == 0.0 {
            continue;
        }
        let uy = u.column(i).transpose() * y;
        wt += vt.row(i).transpose() * uy * gain;
    }
    let fitted = x * &wt;
    let residuals = (0..y.ncols()).map(|m| (y.column(m) - fitted.column(m)).norm()).collect();
    Ok(RegressionMap { w: wt.transpose(), ridge, residuals })
}

/// `W · resp`.
pub fn predict(map: &RegressionMap, resp: &[f64]) -> Result<Vec<f64>> {
    if resp.len() != map.inputs() {
        return Err(Error::Dimension(format!("regression expects {} inputs, got {}", map.inputs(), resp.len())));
    }
    Ok((&map.w * DVector::from_column_slice(resp)).iter().cloned().collect())
}
