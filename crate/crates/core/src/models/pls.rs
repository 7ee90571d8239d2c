//! NIPALS partial least squares. One response column gives PLS1; several
//! (the one-hot matrix used for discriminant analysis) give PLS2.

use nalgebra::DMatrix;

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::preproc::ops::{center, column_means};

const INNER_TOL: f64 = 1e-12;
const INNER_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct PlsModel {
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    /// p × A weights
    pub weights: Matrix,
    /// p × A X-loadings
    pub loadings: Matrix,
    /// m × A response loadings
    pub y_loadings: Matrix,
    /// n × A calibration scores
    pub scores: Matrix,
    /// components requested when the fit stopped early for lack of
    /// remaining covariance
    pub truncated_from: Option<usize>,
}

impl PlsModel {
    pub fn n_components(&self) -> usize {
        self.weights.ncols()
    }

    /// Regression coefficients (p × m) using the first `a` components:
    /// `W (PᵀW)⁻¹ Qᵀ`.
    pub fn coefficients(&self, a: usize) -> Result<Matrix> {
        if a == 0 || a > self.n_components() {
            return Err(Error::invalid(format!(
                "requested {a} components, model has {}",
                self.n_components()
            )));
        }
        let w = self.weights.columns(0, a);
        let p = self.loadings.columns(0, a);
        let q = self.y_loadings.columns(0, a);
        let ptw = p.transpose() * w;
        let inv = ptw
            .try_inverse()
            .ok_or_else(|| Error::degenerate("singular PᵀW in PLS coefficients"))?;
        Ok(w * inv * q.transpose())
    }

    /// Predictions (n × m) with the first `a` components.
    pub fn predict_with(&self, x: &Matrix, a: usize) -> Result<Matrix> {
        if x.ncols() != self.x_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.x_mean.len(),
                got: x.ncols(),
            });
        }
        let beta = self.coefficients(a)?;
        let xc = center(x, &self.x_mean);
        let mut out = xc * beta;
        for mut row in out.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.y_mean[j];
            }
        }
        Ok(out)
    }
}

fn col_norm(v: &Matrix) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits `a_max` NIPALS components on centered copies of `x` and `y`
/// (n × m). Stops early, flagging truncation, when `Xᵀu` vanishes.
pub fn nipals(x: &Matrix, y: &Matrix, a_max: usize) -> Result<PlsModel> {
    let (n, p) = x.shape();
    if y.nrows() != n {
        return Err(Error::LengthMismatch(format!("{} targets for {n} samples", y.nrows())));
    }
    if a_max == 0 {
        return Err(Error::invalid("PLS needs at least one component"));
    }
    if a_max > p.min(n.saturating_sub(1)) {
        return Err(Error::invalid(format!(
            "{a_max} components exceed min(n-1, p) = {}",
            p.min(n.saturating_sub(1))
        )));
    }
    let m = y.ncols();
    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let mut xd = center(x, &x_mean);
    let mut yd = center(y, &y_mean);

    let initial_cov = col_norm(&(xd.transpose() * &yd));
    if !(initial_cov > 0.0) {
        return Err(Error::degenerate("no covariance between X and y"));
    }

    let mut weights = Matrix::zeros(p, a_max);
    let mut loadings = Matrix::zeros(p, a_max);
    let mut y_loadings = Matrix::zeros(m, a_max);
    let mut scores = Matrix::zeros(n, a_max);
    let mut fitted = 0;
    for a in 0..a_max {
        // start from the response column with the largest sum of squares
        let start = (0..m)
            .map(|j| (yd.column(j).norm_squared(), j))
            .fold(
                (f64::NEG_INFINITY, 0),
                |best, cur| if cur.0 > best.0 { cur } else { best },
            )
            .1;
        let mut u: Matrix = yd.columns(start, 1).into_owned();
        let mut w: Matrix;
        let mut t: Matrix = Matrix::zeros(n, 1);
        let mut c: Matrix;
        let mut iter = 0;
        loop {
            let xtu = xd.transpose() * &u;
            let norm = col_norm(&xtu);
            if norm <= 1e-12 * initial_cov {
                w = Matrix::zeros(p, 0);
                c = Matrix::zeros(m, 0);
                break;
            }
            w = xtu / norm;
            let t_new = &xd * &w;
            let tt = t_new.norm_squared();
            c = yd.transpose() * &t_new / tt;
            let delta = col_norm(&(&t_new - &t)) / col_norm(&t_new).max(f64::MIN_POSITIVE);
            t = t_new;
            iter += 1;
            if m == 1 || delta < INNER_TOL || iter >= INNER_MAX_ITER {
                break;
            }
            u = &yd * &c / c.norm_squared();
        }
        if w.ncols() == 0 {
            log::debug!("PLS covariance exhausted after {a} of {a_max} components; truncating");
            break;
        }
        let tt = t.norm_squared();
        let p_a = xd.transpose() * &t / tt;
        xd -= &t * p_a.transpose();
        yd -= &t * c.transpose();
        weights.set_column(a, &w.column(0));
        loadings.set_column(a, &p_a.column(0));
        y_loadings.set_column(a, &c.column(0));
        scores.set_column(a, &t.column(0));
        fitted += 1;
    }
    if fitted == 0 {
        return Err(Error::degenerate("no PLS component could be extracted"));
    }
    let truncated_from = (fitted < a_max).then_some(a_max);
    Ok(PlsModel {
        x_mean,
        y_mean,
        weights: weights.columns(0, fitted).into_owned(),
        loadings: loadings.columns(0, fitted).into_owned(),
        y_loadings: y_loadings.columns(0, fitted).into_owned(),
        scores: scores.columns(0, fitted).into_owned(),
        truncated_from,
    })
}

pub fn pls1(x: &Matrix, y: &[f64], a: usize) -> Result<PlsModel> {
    let ym = DMatrix::from_column_slice(y.len(), 1, y);
    nipals(x, &ym, a)
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), n_classes, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
}

/// Index of the largest entry in each row, ties to the lowest index.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
