use nirbench::bridge::Request;
use nirbench::data::{summarize_datasets, Dataset, Matrix, Task};
use nirbench::manifest::BenchmarkManifest;
use nirbench::synthetic::DerivativeScatter;
use proptest::prelude::*;
use std::path::Path;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fit_predict_requests_round_trip_bit_exact(
        n in 1usize..6,
        p in 1usize..5,
        m in 1usize..4,
        bits in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 60),
    ) {
        let x = Matrix::from_fn(n, p, |r, c| bits[(r * p + c) % bits.len()]);
        let q = Matrix::from_fn(m, p, |r, c| bits[(29 + r * p + c) % bits.len()]);
        let y = nirbench::data::Target::Regression((0..n).map(|i| bits[(50 + i) % bits.len()]).collect());
        let req = Request::fit_predict("run", Task::Regression, &x, &y, &q, &serde_json::json!({})).unwrap();
        let line = req.to_line();
        prop_assert!(!line.contains('\n'));
        let back: Request = serde_json::from_str(&line).unwrap();
        let (x2, q2) = back.matrices().unwrap();
        prop_assert!(x.iter().zip(x2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(q.iter().zip(q2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back, req);
    }
}

fn sized(name: &str, n: usize) -> Dataset {
    DerivativeScatter {
        n,
        p: 16,
        seed: n as u64,
        ..Default::default()
    }
    .dataset(name, "db")
    .unwrap()
}

#[test]
fn summary_median_of_three_sizes() {
    let sets = [sized("a", 56), sized("b", 402), sized("c", 873)];
    let s = summarize_datasets(&sets).unwrap();
    assert_eq!(s.datasets, 3);
    assert_eq!(s.per_task[&Task::Regression].median_n, 402.0);
}

#[test]
fn manifest_without_datasets_is_rejected() {
    let m = BenchmarkManifest::from_toml_str("models = [\"pls\"]\ndatasets = []\n", Path::new(".")).unwrap();
    let err = m.load_datasets().unwrap_err();
    assert!(err.to_string().contains("no datasets"), "{err}");
}
