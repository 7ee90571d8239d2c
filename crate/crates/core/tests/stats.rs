use nirbench::stats::special::{chi2_survival, f_quantile};
use nirbench::stats::*;
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn records(table: &[Vec<f64>]) -> Vec<ScoreRecord> {
    let mut out = Vec::new();
    for (b, row) in table.iter().enumerate() {
        for (j, &s) in row.iter().enumerate() {
            out.push(ScoreRecord {
                dataset: format!("d{b}"),
                database: format!("db{b:02}"),
                model: format!("m{j}"),
                score: Some(s),
            });
        }
    }
    out
}

fn statistic(table: &[Vec<f64>]) -> f64 {
    friedman_statistic(&aggregate_scores(&records(table), Orientation::LowerIsBetter).unwrap())
}

#[test]
fn all_tied_table_has_no_signal() {
    let table = vec![vec![0.5; 4]; 6];
    let res = friedman_test(&aggregate_scores(&records(&table), Orientation::LowerIsBetter).unwrap()).unwrap();
    assert_eq!(res.statistic, 0.0);
    assert!((res.p_value - 1.0).abs() < 1e-12);
    assert_eq!(chi2_survival(0.0, 3.0).unwrap(), 1.0);
}

#[test]
fn chi_square_is_the_wide_f_limit() {
    for df in [1.0, 2.0, 5.0, 11.0] {
        let x = df * f_quantile(0.95, df, 1e6).unwrap();
        let sf = chi2_survival(x, df).unwrap();
        assert!((sf - 0.05).abs() < 1e-3, "df {df}: {sf}");
    }
}

/// P(range of k standard normals <= r).
fn range_cdf(r: f64, k: usize) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let (lo, hi, steps) = (-9.0, 9.0, 6000);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| n.pdf(z) * (n.cdf(z + r) - n.cdf(z)).powi(k as i32 - 1);
    let inner: f64 = (1..steps)
        .map(|i| f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    k as f64 * h / 3.0 * (f(lo) + inner + f(hi))
}

#[test]
fn critical_value_tables_match_the_range_distribution() {
    for (alpha, table) in [(0.05, &Q_ALPHA_005), (0.10, &Q_ALPHA_010)] {
        for (i, &q) in table.iter().enumerate() {
            let k = i + 2;
            let (mut lo, mut hi) = (0.5, 10.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if range_cdf(mid, k) < 1.0 - alpha {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let solved = 0.5 * (lo + hi) / std::f64::consts::SQRT_2;
            assert!((solved - q).abs() < 1e-3, "k={k} alpha={alpha}: {solved} vs {q}");
        }
    }
}

#[test]
fn identical_models_tie_everywhere() {
    let table: Vec<Vec<f64>> = (0..5).map(|b| vec![b as f64 * 0.1 + 0.3; 2]).collect();
    let wl = win_loss(&records(&table), "m0", "m1", Orientation::LowerIsBetter).unwrap();
    assert_eq!((wl.wins, wl.ties, wl.losses), (0, 5, 0));
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 3usize..9).prop_flat_map(|(b, k)| {
        prop::collection::vec(prop::collection::vec((0u32..40).prop_map(|v| v as f64 / 10.0), k), b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn statistic_matches_rank_sum_form(table in table_strategy()) {
        let (b, k) = (table.len() as f64, table[0].len() as f64);
        // brute-force ranks with averaged ties
        let mut sums = vec![0.0; table[0].len()];
        for row in &table {
            for (j, v) in row.iter().enumerate() {
                let below = row.iter().filter(|w| *w < v).count() as f64;
                let equal = row.iter().filter(|w| *w == v).count() as f64;
                sums[j] += below + (equal + 1.0) / 2.0;
            }
        }
        let brute = 12.0 / (b * k * (k + 1.0)) * sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * b * (k + 1.0);
        prop_assert!((statistic(&table) - brute).abs() < 1e-9);
    }

    #[test]
    fn statistic_ignores_model_order(table in table_strategy(), rot in 1usize..8) {
        let k = table[0].len();
        let permuted: Vec<Vec<f64>> = table.iter().map(|r| (0..k).map(|j| r[(j + rot) % k]).collect()).collect();
        prop_assert!((statistic(&table) - statistic(&permuted)).abs() < 1e-9);
    }

    #[test]
    fn monotone_transforms_keep_ranks_and_counts(table in table_strategy()) {
        let moved: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|v| 3.0 * v.powi(3) + v + 2.0).collect()).collect();
        let a = aggregate_scores(&records(&table), Orientation::LowerIsBetter).unwrap();
        let b = aggregate_scores(&records(&moved), Orientation::LowerIsBetter).unwrap();
        prop_assert_eq!(&a.ranks, &b.ranks);
        let wa = win_loss(&records(&table), "m0", "m1", Orientation::LowerIsBetter).unwrap();
        let wb = win_loss(&records(&moved), "m0", "m1", Orientation::LowerIsBetter).unwrap();
        prop_assert_eq!((wa.wins, wa.ties, wa.losses), (wb.wins, wb.ties, wb.losses));
        for row in &a.ranks {
            let k = row.len() as f64;
            prop_assert!((row.iter().sum::<f64>() - k * (k + 1.0) / 2.0).abs() < 1e-12);
        }
    }
}
