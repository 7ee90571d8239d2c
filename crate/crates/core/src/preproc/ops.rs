//! Numerical kernels behind the preprocessing steps. Row-wise operators act
//! on each spectrum independently; fitted operators keep calibration state in
//! the structs defined here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - j) as usize
    }
}

fn map_rows(x: &Matrix, out_cols: usize, mut f: impl FnMut(usize, &[f64], &mut [f64]) -> Result<()>) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.nrows(), out_cols);
    let mut row = vec![0.0; x.ncols()];
    let mut buf = vec![0.0; out_cols];
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            row[c] = x[(r, c)];
        }
        f(r, &row, &mut buf)?;
        for c in 0..out_cols {
            out[(r, c)] = buf[c];
        }
    }
    Ok(out)
}

fn check_finite(x: &Matrix, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::degenerate(format!("{what} produced non-finite values")))
    }
}

// ---------------------------------------------------------------- SNV

pub fn snv(spectrum: &[f64]) -> Result<Vec<f64>> {
    let n = spectrum.len();
    if n < 2 {
        return Err(Error::degenerate("SNV needs at least 2 channels"));
    }
    let mean = spectrum.iter().sum::<f64>() / n as f64;
    let var = spectrum.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-14 * scale.max(f64::MIN_POSITIVE)) || sd == 0.0 {
        return Err(Error::degenerate("SNV of a constant spectrum (zero variance)"));
    }
    Ok(spectrum.iter().map(|v| (v - mean) / sd).collect())
}

pub fn snv_matrix(x: &Matrix) -> Result<Matrix> {
    map_rows(x, x.ncols(), |r, row, out| {
        let v = snv(row).map_err(|e| Error::degenerate(format!("row {r}: {e}")))?;
        out.copy_from_slice(&v);
        Ok(())
    })
}

// ---------------------------------------------------------------- Savitzky–Golay

pub fn savgol_coefficients(window: usize, polyorder: usize, deriv: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) {
        return Err(Error::invalid(format!("Savitzky-Golay window {window} must be odd")));
    }
    if polyorder >= window {
        return Err(Error::invalid(format!(
            "polyorder {polyorder} must be < window {window}"
        )));
    }
    if deriv > polyorder {
        return Err(Error::invalid(format!(
            "deriv {deriv} must be <= polyorder {polyorder}"
        )));
    }
    let half = (window / 2) as isize;
    let a = DMatrix::from_fn(window, polyorder + 1, |i, j| {
        ((i as isize - half) as f64).powi(j as i32)
    });
    let ata = a.transpose() * &a;
    let ata_inv = ata
        .try_inverse()
        .ok_or_else(|| Error::degenerate("singular Savitzky-Golay design"))?;
    let proj = ata_inv * a.transpose();
    let factorial: f64 = (1..=deriv).map(|k| k as f64).product();
    Ok((0..window).map(|i| factorial * proj[(deriv, i)]).collect())
}

/// Derivative of order `deriv` (unit channel spacing) of the local
/// least-squares polynomial over each window, with mirrored edges.
pub fn savgol(x: &Matrix, window: usize, polyorder: usize, deriv: usize) -> Result<Matrix> {
    let coeffs = savgol_coefficients(window, polyorder, deriv)?;
    let p = x.ncols();
    if window > p {
        return Err(Error::invalid(format!(
            "Savitzky-Golay window {window} exceeds the {p} available channels"
        )));
    }
    let half = (window / 2) as isize;
    map_rows(x, p, |_, row, out| {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, c) in coeffs.iter().enumerate() {
                acc += c * row[reflect_index(i as isize + k as isize - half, p)];
            }
            *o = acc;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- Gaussian

pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

pub fn gaussian_smooth(x: &Matrix, sigma: f64) -> Result<Matrix> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let p = x.ncols();
    map_rows(x, p, |_, row, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[reflect_index(i as isize + k as isize - radius, p)])
                .sum();
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- ASLS

/// Second-difference penalty `D2ᵀ D2` as three bands (diagonal, first and
/// second super-diagonals).
fn second_difference_bands(n: usize) -> [Vec<f64>; 3] {
    let mut d0 = vec![0.0; n];
    let mut d1 = vec![0.0; n.saturating_sub(1)];
    let mut d2 = vec![0.0; n.saturating_sub(2)];
    // each row of D2 is (1, -2, 1) at columns (k, k+1, k+2)
    for k in 0..n - 2 {
        let c = [1.0, -2.0, 1.0];
        for a in 0..3 {
            d0[k + a] += c[a] * c[a];
            for b in (a + 1)..3 {
                let v = c[a] * c[b];
                match b - a {
                    1 => d1[k + a] += v,
                    _ => d2[k + a] += v,
                }
            }
        }
    }
    [d0, d1, d2]
}

/// Solves a symmetric positive definite pentadiagonal system by banded
/// Cholesky (`A = L Lᵀ`, bandwidth 2).
fn solve_pentadiagonal(diag: &[f64], off1: &[f64], off2: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    // l0: diagonal of L; l1[i] = L[i+1][i]; l2[i] = L[i+2][i]
    let mut l0 = vec![0.0; n];
    let mut l1 = vec![0.0; n.saturating_sub(1)];
    let mut l2 = vec![0.0; n.saturating_sub(2)];
    for i in 0..n {
        let mut d = diag[i];
        if i >= 1 {
            d -= l1[i - 1] * l1[i - 1];
        }
        if i >= 2 {
            d -= l2[i - 2] * l2[i - 2];
        }
        if !(d > 0.0) {
            return Err(Error::degenerate("baseline system is not positive definite"));
        }
        l0[i] = d.sqrt();
        if i + 1 < n {
            let mut v = off1[i];
            if i >= 1 {
                v -= l2[i - 1] * l1[i - 1];
            }
            l1[i] = v / l0[i];
        }
        if i + 2 < n {
            l2[i] = off2[i] / l0[i];
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut v = rhs[i];
        if i >= 1 {
            v -= l1[i - 1] * z[i - 1];
        }
        if i >= 2 {
            v -= l2[i - 2] * z[i - 2];
        }
        z[i] = v / l0[i];
    }
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = z[i];
        if i + 1 < n {
            v -= l1[i] * out[i + 1];
        }
        if i + 2 < n {
            v -= l2[i] * out[i + 2];
        }
        out[i] = v / l0[i];
    }
    Ok(out)
}

/// Asymmetric least-squares baseline of one spectrum.
pub fn asls_baseline_1d(x: &[f64], lambda: f64, p: f64, iters: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 5 {
        return Err(Error::invalid(format!("ASLS needs at least 5 channels, got {n}")));
    }
    if !(lambda > 0.0) || !(p > 0.0 && p < 1.0) || iters == 0 {
        return Err(Error::invalid(format!(
            "ASLS parameters out of range: lambda={lambda}, p={p}, iters={iters}"
        )));
    }
    let [d0, d1, d2] = second_difference_bands(n);
    let off1: Vec<f64> = d1.iter().map(|v| lambda * v).collect();
    let off2: Vec<f64> = d2.iter().map(|v| lambda * v).collect();
    let mut w = vec![1.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..iters {
        let diag: Vec<f64> = d0.iter().zip(&w).map(|(d, wi)| wi + lambda * d).collect();
        let rhs: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi * wi).collect();
        z = solve_pentadiagonal(&diag, &off1, &off2, &rhs)?;
        for i in 0..n {
            w[i] = if x[i] > z[i] { p } else { 1.0 - p };
        }
    }
    Ok(z)
}

/// Baseline-corrected spectra `x - z`.
pub fn asls(x: &Matrix, lambda: f64, p: f64, iters: usize) -> Result<Matrix> {
    map_rows(x, x.ncols(), |_, row, out| {
        let z = asls_baseline_1d(row, lambda, p, iters)?;
        for i in 0..row.len() {
            out[i] = row[i] - z[i];
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- EMSC

/// Channel positions rescaled to [-1, 1].
pub fn normalized_axis(p: usize) -> Vec<f64> {
    if p == 1 {
        return vec![0.0];
    }
    (0..p).map(|j| 2.0 * j as f64 / (p - 1) as f64 - 1.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmscState {
    pub reference: Vec<f64>,
    pub degree: usize,
}

pub fn emsc_fit(x_cal: &Matrix, degree: usize) -> Result<EmscState> {
    let n = x_cal.nrows() as f64;
    let reference: Vec<f64> = (0..x_cal.ncols()).map(|c| x_cal.column(c).sum() / n).collect();
    Ok(EmscState { reference, degree })
}

/// Per spectrum `z ≈ a + b·m + Σ d_k t^k`; returns `(z - a - Σ d_k t^k) / b`.
pub fn emsc(x: &Matrix, reference: &[f64], degree: usize) -> Result<Matrix> {
    let p = x.ncols();
    if reference.len() != p {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: p,
        });
    }
    let t = normalized_axis(p);
    let n_terms = 2 + degree;
    let design = DMatrix::from_fn(p, n_terms, |j, k| match k {
        0 => 1.0,
        1 => reference[j],
        _ => t[j].powi((k - 1) as i32),
    });
    let svd = design.clone().svd(true, true);
    map_rows(x, p, |r, row, out| {
        let z = DVector::from_column_slice(row);
        let coef = svd
            .solve(&z, 1e-12)
            .map_err(|e| Error::degenerate(format!("EMSC fit failed: {e}")))?;
        let b = coef[1];
        if b.abs() < 1e-12 {
            return Err(Error::degenerate(format!(
                "row {r}: EMSC multiplicative term |b| < 1e-12"
            )));
        }
        for j in 0..p {
            let mut baseline = coef[0];
            for k in 1..=degree {
                baseline += coef[1 + k] * t[j].powi(k as i32);
            }
            out[j] = (row[j] - baseline) / b;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- Haar

pub fn haar_1d(x: &[f64]) -> Vec<f64> {
    let padded_len = x.len().next_power_of_two().max(2);
    let mut v: Vec<f64> = (0..padded_len).map(|i| x[i.min(x.len() - 1)]).collect();
    let mut len = padded_len;
    let mut tmp = vec![0.0; padded_len];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    while len >= 2 {
        let half = len / 2;
        for i in 0..half {
            tmp[i] = (v[2 * i] + v[2 * i + 1]) * s;
            tmp[half + i] = (v[2 * i] - v[2 * i + 1]) * s;
        }
        v[..len].copy_from_slice(&tmp[..len]);
        len = half;
    }
    v
}

pub fn inverse_haar_1d(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut v = c.to_vec();
    let mut tmp = vec![0.0; n];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for i in 0..half {
            tmp[2 * i] = (v[i] + v[half + i]) * s;
            tmp[2 * i + 1] = (v[i] - v[half + i]) * s;
        }
        v[..len].copy_from_slice(&tmp[..len]);
        len *= 2;
    }
    v
}

pub fn haar_padded_len(p: usize) -> usize {
    p.next_power_of_two().max(2)
}

/// Full orthonormal Haar decomposition of each row after edge-replication
/// padding to the next power of two. Layout: coarsest approximation, then
/// detail bands from coarse to fine.
pub fn haar_transform(x: &Matrix) -> Result<Matrix> {
    if x.ncols() < 2 {
        return Err(Error::invalid("Haar transform needs at least 2 channels"));
    }
    map_rows(x, haar_padded_len(x.ncols()), |_, row, out| {
        out.copy_from_slice(&haar_1d(row));
        Ok(())
    })
}

// ---------------------------------------------------------------- area normalization

pub fn area_norm(spectrum: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = spectrum.iter().map(|v| v.abs()).sum();
    if !(s > 0.0) {
        return Err(Error::degenerate("area normalization of an all-zero spectrum"));
    }
    Ok(spectrum.iter().map(|v| v / s).collect())
}

pub fn area_norm_matrix(x: &Matrix) -> Result<Matrix> {
    map_rows(x, x.ncols(), |r, row, out| {
        let v = area_norm(row).map_err(|e| Error::degenerate(format!("row {r}: {e}")))?;
        out.copy_from_slice(&v);
        Ok(())
    })
}

// ---------------------------------------------------------------- centering helpers

pub fn column_means(x: &Matrix) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols()).map(|c| x.column(c).sum() / n).collect()
}

pub fn center(x: &Matrix, means: &[f64]) -> Matrix {
    Matrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] - means[c])
}

fn check_cols(x: &Matrix, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Leading right-singular vectors of a centered matrix, sorted by decreasing
/// singular value, each sign-fixed so its largest-magnitude entry is
/// positive.
pub fn principal_axes(xc: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    let svd = xc.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::degenerate("SVD did not produce right singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let k = k.min(order.len());
    let p = xc.ncols();
    let mut axes = Matrix::zeros(p, k);
    let mut sv = Vec::with_capacity(k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let row = v_t.row(idx);
        let pivot = (0..p).fold(0, |best, j| if row[j].abs() > row[best].abs() { j } else { best });
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            axes[(j, col)] = sign * row[j];
        }
        sv.push(svd.singular_values[idx]);
    }
    Ok((axes, sv))
}

/// All singular values of a matrix, descending.
pub fn singular_values_desc(xc: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = xc.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

// ---------------------------------------------------------------- PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaState {
    pub means: Vec<f64>,
    /// p × k loadings
    pub loadings: Vec<Vec<f64>>,
    pub n_components: usize,
}

pub fn pca_components(ratio: f64, p: usize, n_cal: usize) -> usize {
    let floor = (ratio * p as f64).floor() as usize;
    floor.min(n_cal.saturating_sub(1)).min(p).max(1)
}

pub fn pca_fit(x_cal: &Matrix, ratio: f64) -> Result<PcaState> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("PCA ratio {ratio} outside (0, 1]")));
    }
    let k = pca_components(ratio, x_cal.ncols(), x_cal.nrows());
    let means = column_means(x_cal);
    let xc = center(x_cal, &means);
    let (axes, _) = principal_axes(&xc, k)?;
    let k = axes.ncols();
    Ok(PcaState {
        means,
        loadings: (0..axes.nrows())
            .map(|j| axes.row(j).iter().copied().collect())
            .collect(),
        n_components: k,
    })
}

pub fn pca_apply(state: &PcaState, x: &Matrix) -> Result<Matrix> {
    check_cols(x, state.means.len())?;
    let xc = center(x, &state.means);
    let p = state.means.len();
    let v = Matrix::from_fn(p, state.n_components, |j, a| state.loadings[j][a]);
    Ok(xc * v)
}

// ---------------------------------------------------------------- scalers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalerKind {
    Standard,
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub kind: ScalerKind,
    /// mean (standard) or minimum (minmax)
    pub offset: Vec<f64>,
    /// population sd (standard) or range (minmax); 0 marks a constant feature
    pub scale: Vec<f64>,
}

pub fn fit_scaler(x_cal: &Matrix, kind: ScalerKind) -> ScalerState {
    let n = x_cal.nrows() as f64;
    let mut offset = Vec::with_capacity(x_cal.ncols());
    let mut scale = Vec::with_capacity(x_cal.ncols());
    for c in 0..x_cal.ncols() {
        let col = x_cal.column(c);
        let min = col.min();
        let max = col.max();
        let constant = min == max;
        match kind {
            ScalerKind::Standard => {
                let mean = col.sum() / n;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                offset.push(mean);
                scale.push(if constant { 0.0 } else { sd });
            }
            ScalerKind::MinMax => {
                offset.push(min);
                scale.push(if constant { 0.0 } else { max - min });
            }
        }
    }
    ScalerState { kind, offset, scale }
}

pub fn apply_scaler(state: &ScalerState, x: &Matrix) -> Result<Matrix> {
    check_cols(x, state.offset.len())?;
    Ok(Matrix::from_fn(x.nrows(), x.ncols(), |r, c| {
        if state.scale[c] == 0.0 {
            0.0
        } else {
            (x[(r, c)] - state.offset[c]) / state.scale[c]
        }
    }))
}

// ---------------------------------------------------------------- OSC

pub const OSC_TOL: f64 = 1e-8;
pub const OSC_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscState {
    pub means: Vec<f64>,
    /// unit-norm weight vector per component
    pub weights: Vec<Vec<f64>>,
    /// loading vector per component
    pub loadings: Vec<Vec<f64>>,
    /// true when a component hit the iteration cap before converging
    pub unconverged: Vec<bool>,
}

/// Result of an OSC fit: the fitted state plus the deflated calibration
/// matrix (in original units) and the calibration scores of each component.
#[derive(Debug, Clone)]
pub struct OscFit {
    pub state: OscState,
    pub corrected: Matrix,
    pub scores: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonal signal correction. Each component starts from the leading
/// principal score of the (deflated) calibration matrix and iterates:
/// remove the y direction from the score, regress X onto it for a weight,
/// recompute the score. The weight is kept orthogonal to `Xᵀy` so the final
/// score `X w` carries no covariance with y.
pub fn osc_fit(x_cal: &Matrix, y_cal: &[f64], n_components: usize) -> Result<OscFit> {
    if n_components == 0 {
        return Err(Error::invalid("OSC needs at least one component"));
    }
    let n = x_cal.nrows();
    let p = x_cal.ncols();
    if y_cal.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} targets for {n} samples",
            y_cal.len()
        )));
    }
    if n < 2 {
        return Err(Error::degenerate("OSC needs at least 2 calibration samples"));
    }
    let means = column_means(x_cal);
    let mut xd = center(x_cal, &means);
    let y_mean = y_cal.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y_cal.iter().map(|v| v - y_mean).collect();
    let yy = dot(&yc, &yc);
    let y_scale = y_cal.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if yy.sqrt() <= 1e-12 * y_scale * (n as f64).sqrt() {
        return Err(Error::degenerate("OSC with a constant target"));
    }

    let mut weights = Vec::new();
    let mut loadings = Vec::new();
    let mut scores = Vec::new();
    let mut unconverged = Vec::new();
    for _ in 0..n_components {
        let x_rows = |m: &Matrix, v: &[f64]| -> Vec<f64> {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
                .collect()
        };
        let x_cols = |m: &Matrix, u: &[f64]| -> Vec<f64> {
            (0..m.ncols())
                .map(|c| (0..m.nrows()).map(|r| m[(r, c)] * u[r]).sum())
                .collect()
        };
        // covariance direction that the weight must avoid
        let v = x_cols(&xd, &yc);
        // round-off level covariance means y is already orthogonal to X
        let v_floor = 1e-12 * xd.norm() * yy.sqrt();
        let vv = if norm(&v) > v_floor { dot(&v, &v) } else { 0.0 };

        let (axes, sv) = principal_axes(&xd, 1)?;
        if sv.is_empty() || sv[0] <= 0.0 {
            return Err(Error::degenerate("OSC: no variance left to remove"));
        }
        let pc: Vec<f64> = axes.column(0).iter().copied().collect();
        let mut t = x_rows(&xd, &pc);
        let mut w = vec![0.0; p];
        let mut converged = false;
        for _ in 0..OSC_MAX_ITER {
            let proj = dot(&yc, &t) / yy;
            let t_orth: Vec<f64> = t.iter().zip(&yc).map(|(ti, yi)| ti - proj * yi).collect();
            let tt = dot(&t_orth, &t_orth);
            if !(tt > 0.0) {
                return Err(Error::degenerate("OSC: score collapsed onto y"));
            }
            w = x_cols(&xd, &t_orth).into_iter().map(|v| v / tt).collect();
            if vv > 0.0 {
                let c = dot(&v, &w) / vv;
                for (wi, vi) in w.iter_mut().zip(&v) {
                    *wi -= c * vi;
                }
            }
            let wn = norm(&w);
            if !(wn > 0.0) {
                return Err(Error::degenerate("OSC: weight vector vanished"));
            }
            w.iter_mut().for_each(|wi| *wi /= wn);
            let t_new = x_rows(&xd, &w);
            let delta = norm(&t_new.iter().zip(&t).map(|(a, b)| a - b).collect::<Vec<_>>());
            let scale = norm(&t_new).max(f64::MIN_POSITIVE);
            t = t_new;
            if delta / scale < OSC_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("OSC component did not converge in {OSC_MAX_ITER} iterations; using last iterate");
        }
        let tt = dot(&t, &t);
        if !(tt > 0.0) {
            return Err(Error::degenerate("OSC: zero score vector"));
        }
        let load: Vec<f64> = x_cols(&xd, &t).into_iter().map(|v| v / tt).collect();
        for r in 0..n {
            for c in 0..p {
                xd[(r, c)] -= t[r] * load[c];
            }
        }
        weights.push(w);
        loadings.push(load);
        scores.push(t);
        unconverged.push(!converged);
    }
    let corrected = Matrix::from_fn(n, p, |r, c| xd[(r, c)] + means[c]);
    check_finite(&corrected, "OSC")?;
    Ok(OscFit {
        state: OscState {
            means,
            weights,
            loadings,
            unconverged,
        },
        corrected,
        scores,
    })
}

pub fn osc_apply(state: &OscState, x: &Matrix) -> Result<Matrix> {
    check_cols(x, state.means.len())?;
    let mut xd = center(x, &state.means);
    let p = x.ncols();
    for (w, load) in state.weights.iter().zip(&state.loadings) {
        for r in 0..xd.nrows() {
            let t: f64 = (0..p).map(|c| xd[(r, c)] * w[c]).sum();
            for c in 0..p {
                xd[(r, c)] -= t * load[c];
            }
        }
    }
    Ok(Matrix::from_fn(x.nrows(), p, |r, c| xd[(r, c)] + state.means[c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Matrix {
        Matrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn reflect_is_mirror_without_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn snv_basic_and_degenerate() {
        assert_eq!(snv(&[0.0, 1.0, 2.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(matches!(snv(&[5.0, 5.0, 5.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn savgol_parameter_errors() {
        assert!(savgol_coefficients(4, 2, 0).is_err());
        assert!(savgol_coefficients(5, 5, 0).is_err());
        assert!(savgol_coefficients(5, 2, 3).is_err());
        assert!(savgol(&row(&[1.0, 2.0, 3.0]), 5, 2, 0).is_err());
    }

    #[test]
    fn savgol_linear_ramp_derivative() {
        let x = row(&(0..30).map(|i| 3.0 * i as f64 + 1.0).collect::<Vec<_>>());
        let d = savgol(&x, 7, 2, 1).unwrap();
        for i in 3..27 {
            assert!((d[(0, i)] - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_kernel_properties() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = gaussian_smooth(&row(&[2.5; 12]), 2.0).unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let mut imp = vec![0.0; 21];
        imp[10] = 1.0;
        let s = gaussian_smooth(&row(&imp), 1.0).unwrap();
        for k in 0..10 {
            assert!((s[(0, 10 - k)] - s[(0, 10 + k)]).abs() < 1e-15);
        }
        let argmax = (0..21).fold(0, |b, i| if s[(0, i)] > s[(0, b)] { i } else { b });
        assert_eq!(argmax, 10);
        assert!((s.sum() - 1.0).abs() < 1e-9);
        assert!(gaussian_kernel(0.0).is_err());
    }

    #[test]
    fn asls_line_is_its_own_baseline() {
        let x: Vec<f64> = (0..50).map(|i| 0.3 * i as f64 + 2.0).collect();
        let out = asls(&row(&x), 1e5, 0.001, 10).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-6));
        assert!(asls(&row(&[1.0, 2.0, 3.0, 4.0]), 1e5, 0.001, 10).is_err());
    }

    #[test]
    fn haar_small_cases() {
        let (a, b) = (3.0, 1.0);
        let c = haar_1d(&[a, b]);
        let s = 2f64.sqrt();
        assert!((c[0] - (a + b) / s).abs() < 1e-15 && (c[1] - (a - b) / s).abs() < 1e-15);
        let c = haar_1d(&[2.0; 8]);
        assert!((c[0] - 2.0 * 8f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
        assert_eq!(haar_1d(&[1.0, 2.0, 3.0]).len(), 4);
    }

    #[test]
    fn area_norm_cases() {
        assert_eq!(area_norm(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(area_norm(&[-1.0, 1.0]).unwrap(), vec![-0.5, 0.5]);
        assert_eq!(area_norm(&[0.25, 0.25, 0.5]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert!(area_norm(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn pca_component_rule() {
        assert_eq!(pca_components(0.25, 8, 100), 2);
        assert_eq!(pca_components(0.25, 3, 100), 1);
        assert_eq!(pca_components(1.0, 50, 10), 9);
    }

    #[test]
    fn scalers() {
        let cal = Matrix::from_row_slice(2, 2, &[0.0, 4.0, 2.0, 4.0]);
        let mm = fit_scaler(&cal, ScalerKind::MinMax);
        let t = apply_scaler(&mm, &Matrix::from_row_slice(1, 2, &[1.0, 7.0])).unwrap();
        assert_eq!(t[(0, 0)], 0.5);
        assert_eq!(t[(0, 1)], 0.0);
        let st = fit_scaler(&cal, ScalerKind::Standard);
        let z = apply_scaler(&st, &cal).unwrap();
        assert_eq!(z.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!((z.column(0).sum()).abs() < 1e-12);
    }

    #[test]
    fn osc_rejects_constant_target() {
        let x = Matrix::from_fn(6, 4, |r, c| (r * c) as f64 + (r as f64).sin());
        assert!(matches!(osc_fit(&x, &[1.0; 6], 1), Err(Error::Degenerate(_))));
    }
}
