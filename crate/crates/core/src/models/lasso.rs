//! Lasso regression on asinh-stabilized, standardized regressors with the
//! penalty chosen by BIC, plus bootstrap of price-unit residuals.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
#[allow(unused_imports)]
use crate::math::Float;
use crate::optim::{lasso_cd_columns, CdOptions};
use crate::rng::SeedKey;
use crate::transforms::{fit_transform, TransformKind, TransformParams};
use crate::{Error, Result};

use super::bootstrap_quantiles;

pub const LAMBDA_GRID_LEN: usize = 50;
pub const LAMBDA_EXP_MIN: f64 = -15.0;
pub const LAMBDA_EXP_MAX: f64 = 1.0;

/// `2^i` for `i` on the equidistant grid from -15 to 1 with 50 points,
/// ascending.
pub fn lambda_grid() -> Vec<f64> {
    let step = (LAMBDA_EXP_MAX - LAMBDA_EXP_MIN) / (LAMBDA_GRID_LEN - 1) as f64;
    (0..LAMBDA_GRID_LEN).map(|i| libm::exp2(LAMBDA_EXP_MIN + step * i as f64)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    /// Apply the asinh transform to the response.
    pub asinh_target: bool,
    /// Apply the asinh transform to the columns flagged continuous.
    pub asinh_features: bool,
    pub cd_tol: f64,
    pub cd_max_iter: usize,
    /// The path stops once more than this fraction of `n` coefficients is
    /// nonzero.
    pub max_df_fraction: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            asinh_target: true,
            asinh_features: true,
            cd_tol: 1e-7,
            cd_max_iter: 10_000,
            max_df_fraction: 0.5,
        }
    }
}

/// Per-column transform: optional asinh followed by standardization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub asinh: Option<TransformParams>,
    pub standardize: TransformParams,
}

impl ColumnTransform {
    fn fit(values: &[f64], asinh: bool) -> Result<Option<Self>> {
        let pre = if asinh {
            let mut f = fit_transform(values, TransformKind::Asinh)?;
            if f.degenerate {
                // MAD of zero: use the standard deviation as the asinh scale
                let sd = fit_transform(values, TransformKind::Standardize)?;
                if sd.degenerate {
                    return Ok(None);
                }
                f.params.scale = sd.params.scale;
            }
            Some(f.params)
        } else {
            None
        };
        let mid: Vec<f64> = match pre {
            Some(t) => values.iter().map(|&v| t.apply(v)).collect(),
            None => values.to_vec(),
        };
        let st = fit_transform(&mid, TransformKind::Standardize)?;
        if st.degenerate {
            return Ok(None);
        }
        Ok(Some(ColumnTransform { asinh: pre, standardize: st.params }))
    }

    pub fn apply(&self, x: f64) -> f64 {
        let u = match self.asinh {
            Some(t) => t.apply(x),
            None => x,
        };
        self.standardize.apply(u)
    }

    pub fn invert(&self, z: f64) -> f64 {
        let u = self.standardize.invert(z);
        match self.asinh {
            Some(t) => t.invert(u),
            None => u,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    /// Transform of every input column; `None` for columns dropped as
    /// constant in training.
    pub columns: Vec<Option<ColumnTransform>>,
    /// Coefficients on the transformed scale, one per input column.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub target: ColumnTransform,
    pub lambda: f64,
    pub lambda_index: usize,
    pub bic: f64,
    /// In-sample residuals in price units.
    pub residuals: Vec<f64>,
}

impl LassoModel {
    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }

    /// Linear predictor on the transformed response scale.
    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.columns.len() {
            return Err(Error::LayoutMismatch { expected: self.columns.len(), got: row.len() });
        }
        let mut z = self.intercept;
        for ((t, b), x) in self.columns.iter().zip(&self.beta).zip(row) {
            if let Some(t) = t {
                if *b != 0.0 {
                    z += b * t.apply(*x);
                }
            }
        }
        Ok(z)
    }

    /// Point forecast in price units.
    pub fn point(&self, row: &[f64]) -> Result<f64> {
        let y = self.target.invert(self.linear_predictor(row)?);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Domain(format!("non-finite lasso forecast {y}")))
        }
    }

    pub fn predict(&self, row: &[f64], m: usize, key: SeedKey) -> Result<(f64, Vec<f64>)> {
        let p = self.point(row)?;
        Ok((p, bootstrap_quantiles(p, &self.residuals, m, key)?))
    }
}

/// Fits the lasso path over [`lambda_grid`] from the largest penalty down
/// with warm starts and keeps the fit minimizing
/// `n ln(RSS / n) + k ln n`, `k` the number of nonzero coefficients.
pub fn fit_lasso_bic(x: &Matrix, y: &[f64], continuous: &[bool], opts: &LassoOptions) -> Result<LassoModel> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n {
        return Err(Error::Input("design and response lengths differ".into()));
    }
    if continuous.len() != p {
        return Err(Error::LayoutMismatch { expected: p, got: continuous.len() });
    }
    if n < 3 {
        return Err(Error::Input("lasso needs at least three observations".into()));
    }
    if !x.all_finite() || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite entries in lasso training data".into()));
    }

    let target = ColumnTransform::fit(y, opts.asinh_target)?
        .ok_or_else(|| Error::Input("constant lasso response".into()))?;
    let unit = 1.0 / ((n - 1) as f64).sqrt();
    let z: Vec<f64> = y.iter().map(|&v| target.apply(v) * unit).collect();

    let mut columns = Vec::with_capacity(p);
    let mut active = Vec::new();
    let mut cols = Vec::new();
    for j in 0..p {
        let raw = x.column(j);
        let t = ColumnTransform::fit(&raw, opts.asinh_features && continuous[j])?;
        if let Some(t) = t {
            cols.push(raw.iter().map(|&v| t.apply(v) * unit).collect::<Vec<f64>>());
            active.push(j);
        }
        columns.push(t);
    }

    let cd = CdOptions { tol: opts.cd_tol, max_iter: opts.cd_max_iter };
    let grid = lambda_grid();
    let ln_n = (n as f64).ln();
    let max_df = (opts.max_df_fraction * n as f64).floor() as usize;
    let mut warm = vec![0.0; cols.len()];
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for li in (0..grid.len()).rev() {
        let fit = lasso_cd_columns(&cols, &z, grid[li], cd, Some(&warm));
        let k = fit.beta.iter().filter(|b| **b != 0.0).count();
        if k > max_df && best.is_some() {
            break;
        }
        let mut rss = 0.0;
        for i in 0..n {
            let mut r = z[i];
            for (c, b) in cols.iter().zip(&fit.beta) {
                if *b != 0.0 {
                    r -= c[i] * b;
                }
            }
            rss += r * r;
        }
        // back to the standardized response scale
        let rss = rss / (unit * unit);
        let bic = n as f64 * (rss / n as f64).max(f64::MIN_POSITIVE).ln() + k as f64 * ln_n;
        if best.as_ref().is_none_or(|b| bic < b.0) {
            best = Some((bic, li, fit.beta.clone()));
        }
        warm = fit.beta;
    }
    let (bic, lambda_index, b_active) = best.expect("grid is non-empty");
    let mut beta = vec![0.0; p];
    for (&j, b) in active.iter().zip(&b_active) {
        beta[j] = *b;
    }
    let mut model = LassoModel {
        columns,
        beta,
        intercept: 0.0,
        target,
        lambda: grid[lambda_index],
        lambda_index,
        bic,
        residuals: Vec::new(),
    };
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        residuals.push(y[i] - model.point(x.row(i))?);
    }
    model.residuals = residuals;
    Ok(model)
}
