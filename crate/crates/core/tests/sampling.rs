use nirbench::data::{select_rows, Matrix};
use nirbench::sampling::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0));
    let y = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
    (x, y)
}

#[test]
fn line_fixture_picks_ends_then_middle() {
    let x = Matrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
    let y = vec![0.0, 1.0, 2.0];
    assert_eq!(spxy_select(&x, &y, 3).unwrap(), vec![0, 2, 1]);
}

#[test]
fn stratified_split_is_spectral_selection_per_class() {
    let (x, _) = fixture(24, 5, 3);
    let labels: Vec<usize> = (0..24).map(|i| [0, 1, 1, 2][i % 4]).collect();
    let (train, test) = stratified_split(&x, &labels, 0.25, 0).unwrap();
    let mut oracle = Vec::new();
    for c in 0..3 {
        let members: Vec<usize> = (0..24).filter(|&i| labels[i] == c).collect();
        let m = members.len() - ((0.25 * members.len() as f64).round() as usize);
        let picked = spectral_select(&select_rows(&x, &members), m).unwrap();
        oracle.extend(picked.into_iter().map(|l| members[l]));
    }
    assert_eq!(train, oracle);
    for c in 0..3 {
        let total = labels.iter().filter(|&&l| l == c).count() as f64;
        let held = test.iter().filter(|&&i| labels[i] == c).count() as f64;
        assert!((held / total - 0.25).abs() <= 0.5 / total + 1e-12, "class {c}");
    }
}

#[test]
fn first_selected_samples_land_in_distinct_folds() {
    let (x, y) = fixture(31, 4, 8);
    for k in 2..=6 {
        let folds = spxy_kfold(&x, &y, k).unwrap();
        let order = spxy_select(&x, &y, 31).unwrap();
        let mut seen: Vec<usize> = order[..k].iter().map(|&i| folds.fold_of[i]).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..k).collect::<Vec<_>>(), "k={k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_is_a_greedy_prefix(n in 4usize..30, seed in 0u64..1000, extra in 1usize..4) {
        let (x, y) = fixture(n, 3, seed);
        let m = 2 + (seed as usize % (n - 2));
        let short = spxy_select(&x, &y, m).unwrap();
        let long = spxy_select(&x, &y, (m + extra).min(n)).unwrap();
        prop_assert_eq!(&long[..m], &short[..]);
        let mut dedup = long.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), long.len());
    }

    #[test]
    fn split_partitions_the_samples(n in 5usize..40, seed in 0u64..1000, frac in 0.1f64..0.5) {
        let (x, y) = fixture(n, 3, seed);
        if (frac * n as f64).floor() < 1.0 {
            // an empty test set is a typed error
            prop_assert!(spxy_split(&x, &y, frac).is_err());
            return Ok(());
        }
        let (train, test) = spxy_split(&x, &y, frac).unwrap();
        prop_assert_eq!(train.len(), train_size(n, frac).unwrap());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn folds_are_balanced(n in 6usize..40, k in 2usize..6, seed in 0u64..1000) {
        prop_assume!(n >= k);
        let (x, y) = fixture(n, 3, seed);
        let folds = spxy_kfold(&x, &y, k).unwrap();
        let sizes: Vec<usize> = (0..k).map(|f| folds.fold_of.iter().filter(|&&g| g == f).count()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
