use nalgebra::{Cholesky, DVector};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::preproc::ops::{center, column_means};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub alpha: f64,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    pub coef: Vec<f64>,
}

impl RidgeModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.coef.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coef.len(),
                got: x.ncols(),
            });
        }
        Ok((0..x.nrows())
            .map(|r| {
                self.y_mean
                    + (0..x.ncols())
                        .map(|c| (x[(r, c)] - self.x_mean[c]) * self.coef[c])
                        .sum::<f64>()
            })
            .collect())
    }
}

/// `β = (XᵀX + αI)⁻¹ Xᵀy` on centered data. When there are more features
/// than samples the equivalent dual form `Xᵀ(XXᵀ + αI)⁻¹ y` is factorized
/// instead, which keeps the Cholesky factor at n × n.
pub fn ridge(x: &Matrix, y: &[f64], alpha: f64, fit_intercept: bool) -> Result<RidgeModel> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("ridge alpha must be > 0, got {alpha}")));
    }
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::LengthMismatch(format!("{} targets for {n} samples", y.len())));
    }
    let (x_mean, y_mean) = if fit_intercept {
        (column_means(x), y.iter().sum::<f64>() / n as f64)
    } else {
        (vec![0.0; p], 0.0)
    };
    let xc = center(x, &x_mean);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let coef = if p <= n {
        let mut gram = xc.transpose() * &xc;
        for i in 0..p {
            gram[(i, i)] += alpha;
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::degenerate("ridge normal matrix not positive definite"))?;
        chol.solve(&(xc.transpose() * &yc))
    } else {
        let mut gram = &xc * xc.transpose();
        for i in 0..n {
            gram[(i, i)] += alpha;
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::degenerate("ridge kernel matrix not positive definite"))?;
        xc.transpose() * chol.solve(&yc)
    };
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::degenerate("ridge produced non-finite coefficients"));
    }
    Ok(RidgeModel {
        alpha,
        x_mean,
        y_mean,
        coef: coef.iter().copied().collect(),
    })
}
