//! SPXY sample-set partitioning and the fold construction built on it.
//!
//! The joint distance between samples `i` and `j` is
//! `dx(i,j) / max dx + dy(i,j) / max dy`, where `dx` is the Euclidean
//! distance between spectra, `dy = |y_i - y_j|`, and both maxima run over all
//! pairs. Selection starts from the most distant pair and then repeatedly
//! adds the sample farthest from the already selected set. Every tie goes to
//! the lowest index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Fold id for each calibration sample, values in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// (train, validation) index lists for fold `f`, both ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &g) in self.fold_of.iter().enumerate() {
            if g == f {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &g in &self.fold_of {
            s[g] += 1;
        }
        s
    }
}

fn row_distance(x: &Matrix, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..x.ncols() {
        let d = x[(i, c)] - x[(j, c)];
        acc += d * d;
    }
    acc.sqrt()
}

struct JointDistance<'a> {
    x: &'a Matrix,
    y: Option<&'a [f64]>,
    inv_dx: f64,
    inv_dy: f64,
}

impl<'a> JointDistance<'a> {
    fn new(x: &'a Matrix, y: Option<&'a [f64]>) -> Result<Self> {
        let n = x.nrows();
        let (max_dx, max_dy) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut mx = 0.0f64;
                let mut my = 0.0f64;
                for j in (i + 1)..n {
                    mx = mx.max(row_distance(x, i, j));
                    if let Some(y) = y {
                        my = my.max((y[i] - y[j]).abs());
                    }
                }
                (mx, my)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        if max_dx == 0.0 && max_dy == 0.0 {
            return Err(Error::degenerate("all samples identical; SPXY distances are zero"));
        }
        Ok(Self {
            x,
            y,
            inv_dx: if max_dx > 0.0 { 1.0 / max_dx } else { 0.0 },
            inv_dy: if max_dy > 0.0 { 1.0 / max_dy } else { 0.0 },
        })
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let dx = if self.inv_dx > 0.0 {
            row_distance(self.x, i, j) * self.inv_dx
        } else {
            0.0
        };
        let dy = match self.y {
            Some(y) if self.inv_dy > 0.0 => (y[i] - y[j]).abs() * self.inv_dy,
            _ => 0.0,
        };
        dx + dy
    }
}

fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    // larger distance wins; equal distance goes to the lower index
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn select_ordered(x: &Matrix, y: Option<&[f64]>, m: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::degenerate(format!("SPXY needs at least 2 samples, got {n}")));
    }
    if let Some(y) = y {
        if y.len() != n {
            return Err(Error::LengthMismatch(format!("{} targets for {n} samples", y.len())));
        }
    }
    if m < 2 || m > n {
        return Err(Error::invalid(format!("SPXY selection size {m} outside [2, {n}]")));
    }
    let dist = JointDistance::new(x, y)?;

    // most distant pair, ties to the lexicographically smallest (i, j)
    let (best_d, best_pair) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, (usize::MAX, usize::MAX));
            for j in (i + 1)..n {
                let d = dist.get(i, j);
                if d > best.0 {
                    best = (d, (i, j));
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, (usize::MAX, usize::MAX)),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    debug_assert!(best_d.is_finite());
    let (first, second) = best_pair;

    let mut selected = vec![first, second];
    let mut taken = vec![false; n];
    taken[first] = true;
    taken[second] = true;
    let mut min_d: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| dist.get(i, first).min(dist.get(i, second)))
        .collect();

    while selected.len() < m {
        let (_, next) = (0..n)
            .filter(|&i| !taken[i])
            .map(|i| (min_d[i], i))
            .fold((f64::NEG_INFINITY, usize::MAX), better);
        taken[next] = true;
        selected.push(next);
        min_d.par_iter_mut().enumerate().for_each(|(i, md)| {
            if !taken[i] {
                *md = md.min(dist.get(i, next));
            }
        });
    }
    Ok(selected)
}

/// Selects `m` samples in SPXY order using joint X/y distances.
pub fn spxy_select(x: &Matrix, y: &[f64], m: usize) -> Result<Vec<usize>> {
    select_ordered(x, Some(y), m)
}

/// Kennard–Stone style selection on spectra only (the `dy` term dropped).
pub fn spectral_select(x: &Matrix, m: usize) -> Result<Vec<usize>> {
    select_ordered(x, None, m)
}

pub fn train_size(n: usize, test_fraction: f64) -> Result<usize> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = (test_fraction * n as f64).floor() as usize;
    let n_train = n - n_test;
    if n_test == 0 || n_train < 2 {
        return Err(Error::Split(format!(
            "degenerate split sizes for n={n}, test_fraction={test_fraction}: train {n_train}, test {n_test}"
        )));
    }
    Ok(n_train)
}

fn complement(n: usize, chosen: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n];
    for &i in chosen {
        mask[i] = true;
    }
    (0..n).filter(|&i| !mask[i]).collect()
}

/// Train indices in selection order, test indices ascending.
pub fn spxy_split(x: &Matrix, y: &[f64], test_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = x.nrows();
    let m = train_size(n, test_fraction)?;
    let train = spxy_select(x, y, m)?;
    let test = complement(n, &train);
    Ok((train, test))
}

fn class_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().copied().max().map_or(0, |c| c + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    members
}

/// Per-class spectral selection. Labels are constant inside a class so only
/// the spectral distance term remains. The seed is accepted for interface
/// symmetry; the selection itself is deterministic.
pub fn stratified_split(
    x: &Matrix,
    labels: &[usize],
    test_fraction: f64,
    _seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() != x.nrows() {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.nrows()
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    for (class, members) in class_members(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let nc = members.len();
        if nc < 2 {
            return Err(Error::Split(format!("class {class} has a single sample")));
        }
        let n_test = ((test_fraction * nc as f64).round() as usize).clamp(1, nc - 1);
        let m = nc - n_test;
        let sub = crate::data::select_rows(x, &members);
        let picked = if m == 1 {
            // a single training sample: take the first of the most distant pair
            spectral_select_or_first(&sub, 2)?.into_iter().take(1).collect()
        } else {
            spectral_select_or_first(&sub, m)?
        };
        train.extend(picked.into_iter().map(|local| members[local]));
    }
    let test = complement(x.nrows(), &train);
    Ok((train, test))
}

fn spectral_select_or_first(x: &Matrix, m: usize) -> Result<Vec<usize>> {
    match spectral_select(x, m) {
        Ok(v) => Ok(v),
        // identical spectra inside a class: fall back to index order
        Err(Error::Degenerate(_)) => Ok((0..m).collect()),
        Err(e) => Err(e),
    }
}

/// Assigns folds by position in an ordering: `fold_of[order[pos]] = pos % k`.
pub fn folds_from_order(order: &[usize], k: usize) -> FoldAssignment {
    let mut fold_of = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    FoldAssignment { fold_of, k }
}

/// k balanced folds from the full SPXY ordering of the calibration set.
pub fn spxy_kfold(x_cal: &Matrix, y_cal: &[f64], k: usize) -> Result<FoldAssignment> {
    let n = x_cal.nrows();
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Split(format!("{n} calibration samples for {k} folds")));
    }
    let order = spxy_select(x_cal, y_cal, n)?;
    Ok(folds_from_order(&order, k))
}

/// Stratified variant for class labels: each class is ordered by spectral
/// selection, classes are concatenated in id order and a single running
/// position assigns folds, which keeps fold sizes within one of each other.
pub fn stratified_kfold(x_cal: &Matrix, labels: &[usize], k: usize) -> Result<FoldAssignment> {
    let n = x_cal.nrows();
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Split(format!("{n} calibration samples for {k} folds")));
    }
    let mut order = Vec::with_capacity(n);
    for members in class_members(labels) {
        match members.len() {
            0 => {}
            1 => order.push(members[0]),
            nc => {
                let sub = crate::data::select_rows(x_cal, &members);
                let local = spectral_select_or_first(&sub, nc)?;
                order.extend(local.into_iter().map(|l| members[l]));
            }
        }
    }
    Ok(folds_from_order(&order, k))
}
