//! Prediction metrics and robustness subsets (spectral outliers and target
//! extrapolation).

use serde::{Deserialize, Serialize};

use crate::data::{Matrix, Task};
use crate::error::{Error, Result};
use crate::preproc::ops::{center, column_means, principal_axes, singular_values_desc, snv};
use crate::stats::special::f_quantile;

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch(format!(
            "{} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::degenerate("RMSE of empty vectors"));
    }
    let ss: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

/// Mean per-class recall over `n_classes` classes; every class must occur
/// in `y`.
pub fn balanced_accuracy(y: &[usize], y_hat: &[usize], n_classes: usize) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch(format!(
            "{} labels vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    let mut total = vec![0usize; n_classes];
    let mut hit = vec![0usize; n_classes];
    for (&t, &p) in y.iter().zip(y_hat) {
        if t >= n_classes {
            return Err(Error::invalid(format!("label {t} outside [0, {n_classes})")));
        }
        total[t] += 1;
        if t == p {
            hit[t] += 1;
        }
    }
    if let Some(c) = total.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} absent from y")));
    }
    Ok(hit.iter().zip(&total).map(|(&h, &n)| h as f64 / n as f64).sum::<f64>() / n_classes as f64)
}

/// Balanced accuracy over the classes that occur in `y` (validation folds
/// may miss a rare class).
pub fn balanced_accuracy_observed(y: &[usize], y_hat: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::degenerate("balanced accuracy of empty vectors"));
    }
    let n_classes = y.iter().chain(y_hat).copied().max().unwrap_or(0) + 1;
    let mut total = vec![0usize; n_classes];
    let mut hit = vec![0usize; n_classes];
    for (&t, &p) in y.iter().zip(y_hat) {
        total[t] += 1;
        if t == p {
            hit[t] += 1;
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| total[c] > 0).collect();
    Ok(present.iter().map(|&c| hit[c] as f64 / total[c] as f64).sum::<f64>() / present.len() as f64)
}

/// Percent RMSEP improvement of a compared model over a reference.
pub fn irmsep(rmsep_ref: f64, rmsep_cmp: f64) -> Result<f64> {
    if !(rmsep_ref > 0.0) {
        return Err(Error::invalid("iRMSEP needs a positive reference RMSEP"));
    }
    Ok(100.0 * (rmsep_ref - rmsep_cmp) / rmsep_ref)
}

/// Percent balanced-accuracy gain over a reference.
pub fn relative_acc_gain(acc_ref: f64, acc_cmp: f64) -> Result<f64> {
    if !(acc_ref > 0.0) {
        return Err(Error::invalid("relative accuracy gain needs a positive reference"));
    }
    Ok(100.0 * (acc_cmp - acc_ref) / acc_ref)
}

/// Relative metric by task: iRMSEP for regression, accuracy gain for
/// classification.
pub fn relative_metric(task: Task, reference: f64, compared: f64) -> Result<f64> {
    match task {
        Task::Regression => irmsep(reference, compared),
        Task::Classification => relative_acc_gain(reference, compared),
    }
}

/// Test rows whose target lies strictly outside the calibration range.
pub fn extrapolation_indices(y_train: &[f64], y_test: &[f64]) -> Vec<usize> {
    let lo = y_train.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y_train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    y_test
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < lo || v > hi)
        .map(|(i, _)| i)
        .collect()
}

/// RMSE restricted to `idx`; `None` for an empty subset.
pub fn subset_rmsep(y_test: &[f64], y_hat: &[f64], idx: &[usize]) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= y_test.len() || i >= y_hat.len()) {
        return Err(Error::invalid(format!("subset index {bad} out of range")));
    }
    let a: Vec<f64> = idx.iter().map(|&i| y_test[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| y_hat[i]).collect();
    rmse(&a, &b).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    /// smallest component count explaining at least 95% of calibration variance
    pub a95: usize,
    pub n_cal: usize,
    /// one entry per test row; `None` for rows excluded as SNV-degenerate
    pub t2: Vec<Option<f64>>,
    pub threshold: f64,
    pub outliers: Vec<usize>,
    pub excluded_test: Vec<usize>,
    pub excluded_cal: Vec<usize>,
}

fn snv_rows(x: &Matrix) -> (Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        match snv(&row) {
            Ok(v) => {
                rows.push(v);
                kept.push(r);
            }
            Err(_) => excluded.push(r),
        }
    }
    (rows, kept, excluded)
}

/// Hotelling T² screening of test spectra against a PCA model of the SNV
/// calibration spectra. The control limit is `A(n-1)/(n-A) · F₀.₉₅(A, n-A)`.
pub fn detect_spectral_outliers(x_cal: &Matrix, x_test: &Matrix) -> Result<OutlierReport> {
    if x_cal.ncols() != x_test.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x_cal.ncols(),
            got: x_test.ncols(),
        });
    }
    let (cal_rows, _, excluded_cal) = snv_rows(x_cal);
    let n = cal_rows.len();
    if n < 3 {
        return Err(Error::degenerate(format!(
            "{n} usable calibration spectra for outlier detection"
        )));
    }
    let p = x_cal.ncols();
    let cal = Matrix::from_fn(n, p, |r, c| cal_rows[r][c]);
    let means = column_means(&cal);
    let xc = center(&cal, &means);
    let sv = singular_values_desc(&xc);
    let eig: Vec<f64> = sv.iter().map(|s| s * s / (n - 1) as f64).collect();
    let total: f64 = eig.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("calibration spectra have no variance after SNV"));
    }
    let mut cum = 0.0;
    let mut a95 = eig.len();
    for (a, e) in eig.iter().enumerate() {
        cum += e;
        if cum / total >= 0.95 {
            a95 = a + 1;
            break;
        }
    }
    if n <= a95 + 1 {
        return Err(Error::degenerate(format!(
            "outlier detection needs n_cal > A95 + 1 (n_cal = {n}, A95 = {a95})"
        )));
    }
    let (axes, _) = principal_axes(&xc, a95)?;
    // score variances on calibration rows (n-1 denominator)
    let cal_scores = &xc * &axes;
    let lambda: Vec<f64> = (0..a95)
        .map(|a| cal_scores.column(a).iter().map(|t| t * t).sum::<f64>() / (n - 1) as f64)
        .collect();

    let a = a95 as f64;
    let nf = n as f64;
    let threshold = a * (nf - 1.0) / (nf - a) * f_quantile(0.95, a, nf - a)?;

    let (test_rows, kept, excluded_test) = snv_rows(x_test);
    let mut t2 = vec![None; x_test.nrows()];
    let mut outliers = Vec::new();
    for (row, &idx) in test_rows.iter().zip(&kept) {
        let mut stat = 0.0;
        for k in 0..a95 {
            let score: f64 = (0..p).map(|c| (row[c] - means[c]) * axes[(c, k)]).sum();
            stat += score * score / lambda[k];
        }
        t2[idx] = Some(stat);
        if stat > threshold {
            outliers.push(idx);
        }
    }
    Ok(OutlierReport {
        a95,
        n_cal: n,
        t2,
        threshold,
        outliers,
        excluded_test,
        excluded_cal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 1], &[0, 0, 0, 0], 2).unwrap(), 0.5);
        assert!(balanced_accuracy(&[0, 0], &[0, 0], 2).is_err());
        let a = balanced_accuracy(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0], 2).unwrap();
        let b = balanced_accuracy(&[0, 0, 0, 0, 1, 1, 1], &[0, 1, 0, 1, 1, 1, 0], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relative_metrics() {
        assert_eq!(irmsep(2.0, 1.5).unwrap(), 25.0);
        assert_eq!(irmsep(2.0, 2.0).unwrap(), 0.0);
        assert!(irmsep(0.0, 1.0).is_err());
        assert!((relative_acc_gain(0.8, 1.0).unwrap() - 25.0).abs() < 1e-12);
        assert!(relative_acc_gain(0.0, 1.0).is_err());
    }

    #[test]
    fn extrapolation_is_strict() {
        let train = [0.0, 4.0, 10.0];
        assert_eq!(extrapolation_indices(&train, &[-1.0, 5.0, 12.0]), vec![0, 2]);
        assert!(extrapolation_indices(&train, &[1.0, 9.0]).is_empty());
        assert!(extrapolation_indices(&train, &[0.0, 10.0]).is_empty());
    }

    #[test]
    fn subset_rmsep_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let h = [1.5, 2.0, 2.0, 5.0];
        assert_eq!(subset_rmsep(&y, &h, &[]).unwrap(), None);
        assert_eq!(subset_rmsep(&y, &h, &[2]).unwrap(), Some(1.0));
        let all = subset_rmsep(&y, &h, &[0, 1, 2, 3]).unwrap().unwrap();
        assert_eq!(all, rmse(&y, &h).unwrap());
        let a = subset_rmsep(&y, &h, &[0, 3]).unwrap().unwrap();
        let b = subset_rmsep(&y, &h, &[1, 2]).unwrap().unwrap();
        assert!((2.0 * a * a + 2.0 * b * b - 4.0 * all * all).abs() < 1e-9);
    }
}
