use nalgebra::DVector;
use nirbench::data::{select_rows, Matrix};
use nirbench::models::{pls_fit, plsda_fit, predict, ridge::ridge, ridge_fit, Prediction};
use nirbench::synthetic::{low_rank_regression, separable_classes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(p: Prediction) -> Vec<f64> {
    match p {
        Prediction::Values(v) => v,
        Prediction::Labels(_) => panic!("expected values"),
    }
}

fn labels(p: Prediction) -> Vec<usize> {
    match p {
        Prediction::Labels(v) => v,
        Prediction::Values(_) => panic!("expected labels"),
    }
}

fn noisy_regression(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0));
    let y = (0..n)
        .map(|i| (0..p).map(|c| x[(i, c)] * (c as f64 - 2.0)).sum::<f64>() + r.random_range(-0.3..0.3))
        .collect();
    (x, y)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn two_class_plsda_is_a_half_threshold_on_pls1() {
    let (x, ids) = separable_classes(15, 20, 2, 4);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let q = Matrix::from_fn(12, 20, |_, _| r.random_range(-2.0..2.0));
    let y01: Vec<f64> = ids.iter().map(|&c| c as f64).collect();
    for a in 1..4 {
        let da = labels(predict(&plsda_fit(&x, &ids, 2, a).unwrap(), &q).unwrap());
        let reg = values(predict(&pls_fit(&x, &y01, a).unwrap(), &q).unwrap());
        for (d, v) in da.iter().zip(&reg) {
            if (v - 0.5).abs() > 1e-9 {
                assert_eq!(*d, usize::from(*v > 0.5), "A={a}, score {v}");
            }
        }
    }
}

#[test]
fn plsda_commutes_with_label_permutation() {
    let (x, ids) = separable_classes(10, 16, 3, 2);
    let perm = [2usize, 0, 1];
    let permuted: Vec<usize> = ids.iter().map(|&c| perm[c]).collect();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let q = Matrix::from_fn(9, 16, |_, _| r.random_range(-1.5..1.5));
    let a = labels(predict(&plsda_fit(&x, &ids, 3, 3).unwrap(), &q).unwrap());
    let b = labels(predict(&plsda_fit(&x, &permuted, 3, 3).unwrap(), &q).unwrap());
    assert_eq!(a.iter().map(|&c| perm[c]).collect::<Vec<_>>(), b);
}

#[test]
fn tiny_ridge_approaches_least_squares() {
    let (x, y) = noisy_regression(40, 6, 3);
    let m = ridge(&x, &y, 1e-10, true).unwrap();
    let xm: Vec<f64> = (0..6).map(|c| x.column(c).mean()).collect();
    let ym = y.iter().sum::<f64>() / 40.0;
    let xc = Matrix::from_fn(40, 6, |r, c| x[(r, c)] - xm[c]);
    let yc = DVector::from_iterator(40, y.iter().map(|v| v - ym));
    let ols = (xc.transpose() * &xc).cholesky().unwrap().solve(&(xc.transpose() * yc));
    for c in 0..6 {
        assert!((m.coef[c] - ols[c]).abs() < 1e-6, "coef {c}");
    }
}

#[test]
fn predictions_shift_with_the_target() {
    let (x, y) = noisy_regression(25, 8, 5);
    let shifted: Vec<f64> = y.iter().map(|v| v + 17.5).collect();
    for (a, b) in [
        (pls_fit(&x, &y, 3).unwrap(), pls_fit(&x, &shifted, 3).unwrap()),
        (ridge_fit(&x, &y, 0.3).unwrap(), ridge_fit(&x, &shifted, 0.3).unwrap()),
    ] {
        let pa = values(predict(&a, &x).unwrap());
        let pb = values(predict(&b, &x).unwrap());
        for (u, v) in pa.iter().zip(&pb) {
            assert!((v - u - 17.5).abs() < 1e-9);
        }
    }
}

#[test]
fn ridge_coefficient_norm_shrinks_with_alpha() {
    let (x, y) = noisy_regression(30, 10, 6);
    let mut last = f64::INFINITY;
    for e in -6..=6 {
        let m = ridge(&x, &y, 10f64.powi(e), true).unwrap();
        let n = m.coef.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(n <= last * (1.0 + 1e-12), "alpha 1e{e}");
        last = n;
    }
}

#[test]
fn pls_calibration_error_does_not_grow_with_components() {
    let (x, y) = noisy_regression(30, 12, 7);
    let mut last = f64::INFINITY;
    for a in 1..=12 {
        let fit = pls_fit(&x, &y, a).unwrap();
        let e = rmse(&values(predict(&fit, &x).unwrap()), &y);
        assert!(e <= last + 1e-10, "A={a}: {e} > {last}");
        last = e;
    }
}

#[test]
fn low_rank_data_is_fit_exactly_and_predictions_repeat() {
    let (x, y) = low_rank_regression(20, 30, 2, 12);
    let fit = pls_fit(&x, &y, 2).unwrap();
    let p1 = values(predict(&fit, &x).unwrap());
    assert!(rmse(&p1, &y) < 1e-8);
    let q = select_rows(&x, &[3, 1, 4]);
    assert_eq!(predict(&fit, &q).unwrap(), predict(&fit, &q).unwrap());
}
