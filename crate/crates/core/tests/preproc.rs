use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nirbench::data::Matrix;
use nirbench::preproc::ops::*;
use nirbench::preproc::{apply_pipeline, fit_pipeline, PipelineSpec, StepSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, p: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0))
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_row_slice(1, v.len(), v)
}

#[test]
fn savgol_keeps_quadratic_interior() {
    let v: Vec<f64> = (0..21).map(|i| (i * i) as f64).collect();
    let out = savgol(&row(&v), 5, 2, 0).unwrap();
    for i in 2..19 {
        assert!((out[(0, i)] - v[i]).abs() < 1e-10, "index {i}");
    }
}

#[test]
fn asls_separates_baseline_from_peak() {
    let p = 200;
    let peak = |j: usize| (-0.5 * ((j as f64 - 100.0) / 4.0).powi(2)).exp();
    let z: Vec<f64> = (0..p).map(|j| 0.5 + 0.01 * j as f64 + peak(j)).collect();
    let base = asls_baseline_1d(&z, 1e5, 0.001, 10).unwrap();
    let corrected: Vec<f64> = z.iter().zip(&base).map(|(a, b)| a - b).collect();
    assert!((corrected[100] - 1.0).abs() < 0.05, "peak {}", corrected[100]);
    for j in (0..p).filter(|j| j.abs_diff(100) > 25) {
        assert!(corrected[j].abs() < 0.01, "channel {j}: {}", corrected[j]);
    }
}

#[test]
fn asls_stiff_limit_is_least_squares_line() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let z: Vec<f64> = (0..60)
        .map(|j| (j as f64 * 0.3).sin() + r.random_range(0.0..0.5))
        .collect();
    // one pass keeps uniform weights, so the limit is the ordinary fit
    let base = asls_baseline_1d(&z, 1e9, 0.01, 1).unwrap();
    let n = z.len() as f64;
    let t: Vec<f64> = (0..z.len()).map(|j| j as f64).collect();
    let (tm, zm) = (t.iter().sum::<f64>() / n, z.iter().sum::<f64>() / n);
    let slope = t.iter().zip(&z).map(|(a, b)| (a - tm) * (b - zm)).sum::<f64>()
        / t.iter().map(|a| (a - tm).powi(2)).sum::<f64>();
    for j in 0..z.len() {
        let line = zm + slope * (t[j] - tm);
        assert!((base[j] - line).abs() < 1e-3, "index {j}: {} vs {line}", base[j]);
    }
}

#[test]
fn gaussian_smoothing_properties() {
    let flat = gaussian_smooth(&row(&[2.5; 31]), 2.0).unwrap();
    assert!(flat.iter().all(|v| (v - 2.5).abs() < 1e-12));

    let mut imp = vec![0.0; 41];
    imp[20] = 1.0;
    let out = gaussian_smooth(&row(&imp), 1.5).unwrap();
    for d in 1..15 {
        assert!((out[(0, 20 - d)] - out[(0, 20 + d)]).abs() < 1e-15);
        assert!(out[(0, 20)] > out[(0, 20 + d)]);
    }
    assert!((out.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn emsc_removes_gain_and_offset() {
    let m: Vec<f64> = (0..40).map(|j| ((j as f64) / 5.0).cos() + 2.0).collect();
    let z: Vec<f64> = m.iter().map(|v| 2.0 * v + 3.0).collect();
    let out = emsc(&row(&z), &m, 0).unwrap();
    for (a, b) in out.iter().zip(&m) {
        assert!((a - b).abs() < 1e-10);
    }
    let same = emsc(&row(&m), &m, 2).unwrap();
    for (a, b) in same.iter().zip(&m) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn emsc_matches_normal_equations() {
    let p = 20;
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let m: Vec<f64> = (0..p).map(|_| r.random_range(0.5..1.5)).collect();
    let z: Vec<f64> = (0..p).map(|_| r.random_range(0.0..2.0)).collect();
    let t = normalized_axis(p);
    let d = DMatrix::from_fn(p, 4, |j, c| match c {
        0 => 1.0,
        1 => m[j],
        _ => t[j].powi(c as i32 - 1),
    });
    let coef = (d.transpose() * &d)
        .cholesky()
        .unwrap()
        .solve(&(d.transpose() * DVector::from_column_slice(&z)));
    let oracle: Vec<f64> = (0..p)
        .map(|j| (z[j] - coef[0] - coef[2] * t[j] - coef[3] * t[j] * t[j]) / coef[1])
        .collect();
    let out = emsc(&row(&z), &m, 2).unwrap();
    for j in 0..p {
        assert!((out[(0, j)] - oracle[j]).abs() < 1e-8, "channel {j}");
    }
}

#[test]
fn osc_with_uncorrelated_target_removes_leading_component() {
    let (n, p) = (10, 6);
    let x = random_matrix(n, p, 5);
    let means = column_means(&x);
    let xc = center(&x, &means);
    // y in the orthogonal complement of span{1, columns of X}
    let mut basis = DMatrix::from_element(n, p + 1, 1.0);
    basis.view_mut((0, 1), (n, p)).copy_from(&xc);
    let v = DVector::from_fn(n, |i, _| ((i * 7 + 3) % 5) as f64 - 1.3);
    let proj = &basis * (basis.transpose() * &basis).try_inverse().unwrap() * basis.transpose() * &v;
    let y: Vec<f64> = (&v - proj).iter().copied().collect();
    assert!(y.iter().map(|v| v.abs()).sum::<f64>() > 1e-3);

    let fit = osc_fit(&x, &y, 1).unwrap();
    let eig = SymmetricEigen::new(xc.transpose() * &xc);
    let lead = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
    let total = xc.norm_squared();
    let after = center(&fit.corrected, &column_means(&fit.corrected)).norm_squared();
    assert!(
        ((total - after) - lead).abs() < 1e-8 * total,
        "removed {} expected {lead}",
        total - after
    );
    let applied = osc_apply(&fit.state, &x).unwrap();
    assert!((applied - &fit.corrected).abs().max() < 1e-9);
}

#[test]
fn pca_scores_are_orthogonal() {
    let x = random_matrix(30, 12, 8);
    let st = pca_fit(&x, 0.5).unwrap();
    let s = pca_apply(&st, &x).unwrap();
    assert_eq!(s.ncols(), pca_components(0.5, 12, 30));
    let g = s.transpose() * &s;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                assert!(g[(i, j)].abs() < 1e-9 * g[(i, i)].max(1.0), "({i},{j}) {}", g[(i, j)]);
            }
        }
    }
    assert_eq!(pca_components(0.99, 100, 40), 39);
    assert_eq!(pca_components(0.25, 200, 500), 50);
}

#[test]
fn pipeline_composes_in_order_and_fits_deterministically() {
    let x = random_matrix(8, 40, 21);
    let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let spec: PipelineSpec = "snv>savgol(15,2,1)".parse().unwrap();
    let (fp, out) = fit_pipeline(&spec, &x, &y).unwrap();
    let manual = savgol(&snv_matrix(&x).unwrap(), 15, 2, 1).unwrap();
    assert!((&out - &manual).abs().max() < 1e-12);
    let (fp2, out2) = fit_pipeline(&spec, &x, &y).unwrap();
    assert_eq!(fp, fp2);
    assert_eq!(out, out2);
    assert_eq!(apply_pipeline(&fp, &x).unwrap(), out);
}

fn any_step() -> impl Strategy<Value = StepSpec> {
    prop_oneof![
        Just(StepSpec::Snv),
        Just(StepSpec::Haar),
        Just(StepSpec::AreaNorm),
        Just(StepSpec::StandardScale),
        Just(StepSpec::MinMaxScale),
        Just(StepSpec::Asls {
            lambda: 1e4,
            p: 0.01,
            iters: 5
        }),
        Just(StepSpec::SavGol {
            window: 7,
            polyorder: 2,
            deriv: 1
        }),
        Just(StepSpec::Gaussian { sigma: 1.0 }),
        Just(StepSpec::Emsc { degree: 2 }),
        Just(StepSpec::Osc { n_components: 1 }),
        Just(StepSpec::Pca { ratio: 0.5 }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn snv_is_affine_invariant(v in prop::collection::vec(-5.0f64..5.0, 8..40), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        let (s1, s2) = (snv(&v).unwrap(), snv(&w).unwrap());
        for (p, q) in s1.iter().zip(&s2) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn haar_round_trips_and_keeps_energy(k in 1u32..8, seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..1usize << k).map(|_| r.random_range(-3.0..3.0)).collect();
        let c = haar_1d(&v);
        let back = inverse_haar_1d(&c);
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let e1: f64 = v.iter().map(|a| a * a).sum();
        let e2: f64 = c.iter().map(|a| a * a).sum();
        prop_assert!((e1 - e2).abs() < 1e-10 * e1.max(1.0));
    }

    #[test]
    fn steps_give_finite_output_or_typed_error(step in any_step(), seed in 0u64..500, scale in 1e-3f64..1e3) {
        let x = random_matrix(12, 32, seed).map(|v| v * scale + 0.1);
        let y: Vec<f64> = (0..12).map(|i| (i % 4) as f64 + 0.5 * x[(i, 3)]).collect();
        let spec = PipelineSpec::new([step]).unwrap();
        match fit_pipeline(&spec, &x, &y) {
            Ok((fp, out)) => {
                prop_assert!(out.iter().all(|v| v.is_finite()));
                let other = random_matrix(3, 32, seed + 1);
                if let Ok(a) = apply_pipeline(&fp, &other) {
                    prop_assert!(a.iter().all(|v| v.is_finite()));
                }
            }
            Err(e) => prop_assert!(!e.to_string().is_empty()),
        }
    }
}
