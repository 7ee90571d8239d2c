//! Tree-structured Parzen estimator over a single bounded scalar.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub n_trials: usize,
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    /// search interval, in log10 units for ridge alpha
    pub bounds: (f64, f64),
    pub fallback_bandwidth: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            n_trials: 30,
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
            bounds: (-6.0, 6.0),
            fallback_bandwidth: 0.5,
        }
    }
}

/// Base-2 radical inverse.
pub fn van_der_corput(mut i: u64) -> f64 {
    let mut out = 0.0;
    let mut denom = 1.0;
    while i > 0 {
        denom *= 2.0;
        out += (i & 1) as f64 / denom;
        i >>= 1;
    }
    out
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn silverman(points: &[f64], fallback: f64) -> f64 {
    let n = points.len();
    if n < 2 {
        return fallback;
    }
    let mean = points.iter().sum::<f64>() / n as f64;
    let sd = (points.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let bw = 1.06 * sd * (n as f64).powf(-0.2);
    if bw > 1e-12 && bw.is_finite() {
        bw
    } else {
        fallback
    }
}

/// Kernel density up to a shared constant; an empty set gives the uniform
/// density over the bounds.
fn density(x: f64, points: &[f64], bw: f64, width: f64) -> f64 {
    if points.is_empty() {
        return 1.0 / width;
    }
    let s: f64 = points.iter().map(|p| (-0.5 * ((x - p) / bw).powi(2)).exp()).sum();
    s / (points.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt())
}

/// Next point to try, given `(x, score)` pairs of completed trials (lower
/// score is better). Deterministic in (history, seed, trial_index).
pub fn tpe_suggest(history: &[(f64, f64)], seed: u64, trial_index: usize, cfg: &TpeConfig) -> Result<f64> {
    let (lo, hi) = cfg.bounds;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("empty TPE bounds [{lo}, {hi}]")));
    }
    let width = hi - lo;
    if trial_index < cfg.n_startup || history.is_empty() {
        let shift: f64 = rng_for(seed, 0).random();
        let u = (van_der_corput(trial_index as u64 + 1) + shift).fract();
        return Ok(lo + u * width);
    }

    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history[a].1.total_cmp(&history[b].1).then(a.cmp(&b)));
    let n_good = ((cfg.gamma * history.len() as f64).ceil() as usize).max(1);
    let good: Vec<f64> = order[..n_good].iter().map(|&i| history[i].0).collect();
    let bad: Vec<f64> = order[n_good..].iter().map(|&i| history[i].0).collect();
    let bw_l = silverman(&good, cfg.fallback_bandwidth);
    let bw_g = silverman(&bad, cfg.fallback_bandwidth);

    let mut rng = rng_for(seed, trial_index as u64 + 1);
    let kernel = Normal::new(0.0, bw_l).map_err(|e| Error::Search(e.to_string()))?;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..cfg.n_candidates.max(1) {
        let center = good[rng.random_range(0..good.len())];
        let mut x = center + kernel.sample(&mut rng);
        // mirror once into range, then clamp
        if x < lo {
            x = 2.0 * lo - x;
        }
        if x > hi {
            x = 2.0 * hi - x;
        }
        let x = x.clamp(lo, hi);
        let ratio = density(x, &good, bw_l, width) / density(x, &bad, bw_g, width).max(f64::MIN_POSITIVE);
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((x, ratio));
        }
    }
    Ok(best.expect("at least one candidate").0)
}
