//! Seeded synthetic spectra used by tests, examples and the `synth`
//! command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::data::{Dataset, Matrix, SpectraMatrix, SplitMethod, SplitSpec, Target};
use crate::error::Result;

pub fn gaussian_peak(p: usize, center: f64, width: f64) -> Vec<f64> {
    (0..p)
        .map(|j| (-0.5 * ((j as f64 - center) / width).powi(2)).exp())
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite sd")
}

/// `base + Σ t_k L_k + noise` with smooth loadings and Gaussian scores of
/// decreasing spread.
pub fn latent_spectra(n: usize, p: usize, n_factors: usize, noise: f64, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let base: Vec<f64> = (0..p).map(|j| 1.0 + 0.5 * (j as f64 / p as f64)).collect();
    let loadings: Vec<Vec<f64>> = (0..n_factors)
        .map(|k| {
            gaussian_peak(
                p,
                (k as f64 + 1.0) * p as f64 / (n_factors as f64 + 1.0),
                p as f64 / 10.0,
            )
        })
        .collect();
    let noise_d = normal(noise.max(f64::MIN_POSITIVE));
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        let scores: Vec<f64> = (0..n_factors)
            .map(|k| normal(0.1 / (k as f64 + 1.0)).sample(&mut r))
            .collect();
        for j in 0..p {
            let signal: f64 = (0..n_factors).map(|k| scores[k] * loadings[k][j]).sum();
            x[(i, j)] = base[j] + signal + noise_d.sample(&mut r);
        }
    }
    x
}

/// Regression data with `y = X b` exactly, `X` of rank `rank`.
pub fn low_rank_regression(n: usize, p: usize, rank: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let d = normal(1.0);
    let t = Matrix::from_fn(n, rank, |_, _| d.sample(&mut r));
    let l = Matrix::from_fn(rank, p, |_, _| d.sample(&mut r));
    let x = &t * &l;
    let w: Vec<f64> = (0..rank).map(|k| 1.0 + k as f64).collect();
    let y = (0..n).map(|i| (0..rank).map(|k| t[(i, k)] * w[k]).sum()).collect();
    (x, y)
}

/// Well separated classes: each class adds its own peak to a shared
/// background.
pub fn separable_classes(n_per_class: usize, p: usize, n_classes: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = rng(seed);
    let d = normal(0.02);
    let n = n_per_class * n_classes;
    let peaks: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| gaussian_peak(p, (c as f64 + 1.0) * p as f64 / (n_classes as f64 + 1.0), 2.0))
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let x = Matrix::from_fn(n, p, |i, j| 1.0 + peaks[labels[i]][j] + d.sample(&mut r));
    (x, labels)
}

/// Spectra whose target is carried by narrow absorption bands, observed
/// through multiplicative scatter, additive offsets and slopes, and broad
/// humps at random positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeScatter {
    pub n: usize,
    pub p: usize,
    pub n_analytes: usize,
    pub peak_width: f64,
    pub analyte_amplitude: f64,
    /// fixed matrix bands shared by every sample: (position as a fraction
    /// of the range, width, height)
    pub background: Vec<(f64, f64, f64)>,
    pub scatter: (f64, f64),
    pub offset_sd: f64,
    pub slope_sd: f64,
    pub hump_amplitude: f64,
    pub hump_width: (f64, f64),
    pub noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DerivativeScatter {
    fn default() -> Self {
        DerivativeScatter {
            n: 120,
            p: 64,
            n_analytes: 3,
            peak_width: 1.5,
            analyte_amplitude: 0.3,
            background: vec![(0.12, 3.0, 1.5), (0.37, 2.5, 1.0), (0.62, 3.5, 2.0), (0.88, 2.0, 1.2)],
            scatter: (0.6, 1.6),
            offset_sd: 0.5,
            slope_sd: 0.5,
            hump_amplitude: 1.0,
            hump_width: (6.0, 12.0),
            noise: 0.002,
            test_fraction: 0.25,
            seed: 42,
        }
    }
}

impl DerivativeScatter {
    /// Returns spectra and target; the target is a linear function of the
    /// first derivative of the scatter-free spectra.
    pub fn generate(&self) -> (Matrix, Vec<f64>) {
        let mut r = rng(self.seed);
        let (n, p) = (self.n, self.p);
        let centers: Vec<f64> = (0..self.n_analytes)
            .map(|k| (k as f64 + 1.0) * p as f64 / (self.n_analytes as f64 + 1.0))
            .collect();
        let peaks: Vec<Vec<f64>> = centers
            .iter()
            .map(|&c| {
                gaussian_peak(p, c, self.peak_width)
                    .into_iter()
                    .map(|v| v * self.analyte_amplitude)
                    .collect()
            })
            .collect();
        let mut background = vec![0.0; p];
        for &(f, w, h) in &self.background {
            for (b, v) in background.iter_mut().zip(gaussian_peak(p, f * p as f64, w)) {
                *b += h * v;
            }
        }
        let conc = Uniform::new(0.0, 1.0).expect("range");
        let scatter = Uniform::new(self.scatter.0, self.scatter.1).expect("range");
        let pos = Uniform::new(0.0, p as f64).expect("range");
        let hw = Uniform::new(self.hump_width.0, self.hump_width.1).expect("range");
        let offset = normal(self.offset_sd);
        let slope = normal(self.slope_sd);
        let noise = normal(self.noise.max(f64::MIN_POSITIVE));
        // weights applied to the derivative of the clean spectrum
        let weights: Vec<f64> = (0..p)
            .map(|j| {
                centers
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let s = if k % 2 == 0 { 1.0 } else { -0.5 };
                        s * (-0.5 * ((j as f64 - c + self.peak_width) / self.peak_width).powi(2)).exp()
                    })
                    .sum()
            })
            .collect();

        let mut x = Matrix::zeros(n, p);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c: Vec<f64> = (0..self.n_analytes).map(|_| conc.sample(&mut r)).collect();
            let clean: Vec<f64> = (0..p)
                .map(|j| (0..self.n_analytes).map(|k| c[k] * peaks[k][j]).sum())
                .collect();
            let deriv: Vec<f64> = (0..p)
                .map(|j| {
                    let lo = clean[j.saturating_sub(1)];
                    let hi = clean[(j + 1).min(p - 1)];
                    (hi - lo) / ((j + 1).min(p - 1) - j.saturating_sub(1)) as f64
                })
                .collect();
            y.push(deriv.iter().zip(&weights).map(|(d, w)| d * w).sum::<f64>());

            let m = scatter.sample(&mut r);
            let b = offset.sample(&mut r);
            let s = slope.sample(&mut r);
            let hump = gaussian_peak(p, pos.sample(&mut r), hw.sample(&mut r));
            let h = self.hump_amplitude * r.random::<f64>();
            for j in 0..p {
                let t = j as f64 / p as f64;
                x[(i, j)] = m * (background[j] + clean[j] + h * hump[j]) + b + s * t + noise.sample(&mut r);
            }
        }
        (x, y)
    }

    pub fn dataset(&self, name: &str, database: &str) -> Result<Dataset> {
        let (x, y) = self.generate();
        let wl: Vec<f64> = (0..self.p).map(|j| 1000.0 + 2.0 * j as f64).collect();
        Dataset::new(
            name,
            database,
            SpectraMatrix::new(x, Some(wl))?,
            Target::Regression(y),
            SplitSpec {
                method: SplitMethod::Spxy {
                    test_fraction: self.test_fraction,
                },
                seed: self.seed,
            },
        )
    }
}
