//! Database-level rank statistics: score aggregation, average ranks, the
//! Friedman test, Nemenyi critical distances and pairwise win/loss counts.

pub mod special;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use special::chi2_survival;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerIsBetter,
    HigherIsBetter,
}

impl Orientation {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Orientation::LowerIsBetter => a < b,
            Orientation::HigherIsBetter => a > b,
        }
    }
}

/// One dataset-level score. `None` marks a missing or failed result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub dataset: String,
    pub database: String,
    pub model: String,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub databases: Vec<String>,
    pub models: Vec<String>,
    /// B × k aggregated scores
    pub scores: Vec<Vec<f64>>,
    /// B × k ranks, 1 = best, ties averaged
    pub ranks: Vec<Vec<f64>>,
    pub avg_ranks: Vec<f64>,
    pub orientation: Orientation,
}

impl RankTable {
    pub fn n_databases(&self) -> usize {
        self.databases.len()
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    /// Builds a table directly from rank rows (used by tests and by the
    /// exact permutation test).
    pub fn from_ranks(models: Vec<String>, ranks: Vec<Vec<f64>>) -> Self {
        let b = ranks.len();
        let k = models.len();
        let avg_ranks = (0..k)
            .map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / b as f64)
            .collect();
        RankTable {
            databases: (0..b).map(|i| format!("db{i}")).collect(),
            models,
            scores: ranks.clone(),
            ranks,
            avg_ranks,
            orientation: Orientation::LowerIsBetter,
        }
    }
}

/// Ranks one row of scores; exact ties share the average of their ranks.
pub fn rank_row(scores: &[f64], orientation: Orientation) -> Vec<f64> {
    let k = scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        if orientation.better(x, y) {
            std::cmp::Ordering::Less
        } else if orientation.better(y, x) {
            std::cmp::Ordering::Greater
        } else {
            a.cmp(&b)
        }
    });
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Database × model mean scores. A cell is present only when every dataset
/// of that database has a valid score for the model.
fn database_means(records: &[ScoreRecord]) -> (Vec<String>, BTreeMap<(String, String), f64>) {
    let mut models: Vec<String> = Vec::new();
    let mut datasets_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut cells: HashMap<(&str, &str), Vec<Option<f64>>> = HashMap::new();
    let mut seen: HashMap<(&str, &str, &str), ()> = HashMap::new();
    for r in records {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
        datasets_of.entry(&r.database).or_default().insert(&r.dataset);
        if seen.insert((&r.database, &r.model, &r.dataset), ()).is_none() {
            cells
                .entry((&r.database, &r.model))
                .or_default()
                .push(r.score.filter(|s| s.is_finite()));
        }
    }
    let mut means = BTreeMap::new();
    for (db, datasets) in &datasets_of {
        for m in &models {
            if let Some(vals) = cells.get(&(*db, m.as_str())) {
                if vals.len() == datasets.len() && vals.iter().all(Option::is_some) {
                    let s: f64 = vals.iter().map(|v| v.unwrap()).sum();
                    means.insert((db.to_string(), m.clone()), s / vals.len() as f64);
                }
            }
        }
    }
    (models, means)
}

/// Aggregates dataset scores to database means and ranks models on the
/// databases where every model has a complete result.
pub fn aggregate_scores(records: &[ScoreRecord], orientation: Orientation) -> Result<RankTable> {
    let (models, means) = database_means(records);
    let databases: Vec<String> = means
        .keys()
        .map(|(db, _)| db.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|db| models.iter().all(|m| means.contains_key(&(db.clone(), m.clone()))))
        .collect();
    if databases.len() < 2 || models.len() < 2 {
        return Err(Error::Stats(format!(
            "need at least 2 databases and 2 models after intersection, got {} and {}",
            databases.len(),
            models.len()
        )));
    }
    let scores: Vec<Vec<f64>> = databases
        .iter()
        .map(|db| models.iter().map(|m| means[&(db.clone(), m.clone())]).collect())
        .collect();
    let ranks: Vec<Vec<f64>> = scores.iter().map(|row| rank_row(row, orientation)).collect();
    let b = databases.len() as f64;
    let avg_ranks = (0..models.len())
        .map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / b)
        .collect();
    Ok(RankTable {
        databases,
        models,
        scores,
        ranks,
        avg_ranks,
        orientation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_databases: usize,
    pub n_models: usize,
    /// Nemenyi critical distance at α = 0.05; absent when k is outside the
    /// embedded table
    pub cd: Option<f64>,
    /// k × k, true where the average-rank gap exceeds the critical distance
    pub significant: Vec<Vec<bool>>,
}

pub fn friedman_statistic(table: &RankTable) -> f64 {
    let k = table.n_models() as f64;
    let b = table.n_databases() as f64;
    let center = (k + 1.0) / 2.0;
    12.0 * b / (k * (k + 1.0)) * table.avg_ranks.iter().map(|r| (r - center).powi(2)).sum::<f64>()
}

pub fn friedman_test(table: &RankTable) -> Result<FriedmanResult> {
    let (b, k) = (table.n_databases(), table.n_models());
    if b < 2 || k < 2 {
        return Err(Error::Stats(format!(
            "Friedman test needs B >= 2 and k >= 2, got B={b}, k={k}"
        )));
    }
    let statistic = friedman_statistic(table);
    let p_value = chi2_survival(statistic.max(0.0), (k - 1) as f64)?.clamp(0.0, 1.0);
    let cd = nemenyi_cd(k, b, 0.05).ok();
    let significant = match cd {
        Some(cd) => pairwise_significance(&table.avg_ranks, cd),
        None => vec![vec![false; k]; k],
    };
    Ok(FriedmanResult {
        statistic,
        df: k - 1,
        p_value,
        n_databases: b,
        n_models: k,
        cd,
        significant,
    })
}

/// Exact permutation p-value of the Friedman statistic: each database row
/// of ranks is permuted uniformly and independently. Limited to B ≤ 8 and
/// k ≤ 7.
pub fn friedman_exact_p_value(table: &RankTable) -> Result<f64> {
    let (b, k) = (table.n_databases(), table.n_models());
    if b < 2 || k < 2 {
        return Err(Error::Stats("exact Friedman test needs B >= 2 and k >= 2".into()));
    }
    if b > 8 || k > 7 {
        return Err(Error::Stats(format!(
            "exact Friedman test limited to B <= 8, k <= 7 (got B={b}, k={k})"
        )));
    }
    // doubled ranks are integers even with averaged ties
    let rows: Vec<Vec<i64>> = table
        .ranks
        .iter()
        .map(|r| r.iter().map(|v| (2.0 * v).round() as i64).collect())
        .collect();
    let observed: i64 = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<i64>().pow(2)).sum();
    let perms = permutations(k);
    let total = perms.len() as f64;
    // the column-sum distribution is exchangeable, so states are kept sorted
    let mut states: HashMap<Vec<i64>, f64> = HashMap::from([(vec![0; k], 1.0)]);
    for row in &rows {
        let mut next: HashMap<Vec<i64>, f64> = HashMap::new();
        for (state, prob) in &states {
            for perm in &perms {
                let mut s: Vec<i64> = state.iter().zip(perm).map(|(a, &j)| a + row[j]).collect();
                s.sort_unstable();
                *next.entry(s).or_insert(0.0) += prob / total;
            }
        }
        states = next;
    }
    let p: f64 = states
        .iter()
        .filter(|(s, _)| s.iter().map(|v| v * v).sum::<i64>() >= observed)
        .map(|(_, p)| p)
        .sum();
    Ok(p.clamp(0.0, 1.0))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Studentized-range critical values at infinite df divided by √2, for
/// k = 2..=20 models.
pub const Q_ALPHA_005: [f64; 19] = [
    1.960, 2.344, 2.569, 2.728, 2.850, 2.948, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391, 3.426, 3.458,
    3.489, 3.517, 3.544,
];
pub const Q_ALPHA_010: [f64; 19] = [
    1.645, 2.052, 2.291, 2.460, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978, 3.030, 3.077, 3.120, 3.159, 3.196, 3.230,
    3.261, 3.291, 3.319,
];

pub fn q_alpha(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=20).contains(&k) {
        return Err(Error::Stats(format!(
            "no Nemenyi critical value for k = {k} (table covers 2..=20)"
        )));
    }
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_ALPHA_005
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_ALPHA_010
    } else {
        return Err(Error::Stats(format!("no Nemenyi table for alpha = {alpha}")));
    };
    Ok(table[k - 2])
}

/// `CD = q_α √(k(k+1) / (6B))`.
pub fn nemenyi_cd(k: usize, b: usize, alpha: f64) -> Result<f64> {
    if b < 2 {
        return Err(Error::Stats(format!("critical distance needs B >= 2, got {b}")));
    }
    let q = q_alpha(k, alpha)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * b as f64)).sqrt())
}

pub fn pairwise_significance(avg_ranks: &[f64], cd: f64) -> Vec<Vec<bool>> {
    let k = avg_ranks.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| i != j && (avg_ranks[i] - avg_ranks[j]).abs() > cd)
                .collect()
        })
        .collect()
}

/// Data for a critical-difference diagram: models sorted by average rank
/// and the maximal runs of models whose rank spread does not exceed CD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdDiagram {
    pub cd: f64,
    pub n_databases: usize,
    pub ordered: Vec<(String, f64)>,
    /// inclusive (first, last) positions into `ordered`
    pub groups: Vec<(usize, usize)>,
}

pub fn cd_diagram(table: &RankTable, cd: f64) -> CdDiagram {
    let mut ordered: Vec<(String, f64)> = table
        .models
        .iter()
        .cloned()
        .zip(table.avg_ranks.iter().copied())
        .collect();
    ordered.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let k = ordered.len();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for i in 0..k {
        let mut j = i;
        while j + 1 < k && ordered[j + 1].1 - ordered[i].1 <= cd {
            j += 1;
        }
        if j > i && !groups.iter().any(|&(a, b)| a <= i && j <= b) {
            groups.push((i, j));
        }
    }
    CdDiagram {
        cd,
        n_databases: table.n_databases(),
        ordered,
        groups,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinLoss {
    pub model_a: String,
    pub model_b: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// wins / (wins + losses); ties are not decisive
    pub win_rate: f64,
    /// (wins + ties) / total
    pub non_loss_rate: f64,
}

impl WinLoss {
    pub fn from_counts(model_a: &str, model_b: &str, wins: usize, ties: usize, losses: usize) -> Self {
        let decisive = wins + losses;
        let total = wins + ties + losses;
        WinLoss {
            model_a: model_a.into(),
            model_b: model_b.into(),
            wins,
            ties,
            losses,
            win_rate: if decisive > 0 {
                wins as f64 / decisive as f64
            } else {
                0.0
            },
            non_loss_rate: if total > 0 {
                (wins + ties) as f64 / total as f64
            } else {
                0.0
            },
        }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Database-level win/tie/loss counts of `model_a` against `model_b`.
/// Aggregated scores are compared after rounding to 6 decimals.
pub fn win_loss(records: &[ScoreRecord], model_a: &str, model_b: &str, orientation: Orientation) -> Result<WinLoss> {
    let (_, means) = database_means(records);
    let dbs: BTreeSet<&String> = means.keys().map(|(db, _)| db).collect();
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for db in dbs {
        let (Some(&a), Some(&b)) = (
            means.get(&(db.clone(), model_a.to_string())),
            means.get(&(db.clone(), model_b.to_string())),
        ) else {
            continue;
        };
        let (a, b) = (round6(a), round6(b));
        if a == b {
            ties += 1;
        } else if orientation.better(a, b) {
            wins += 1;
        } else {
            losses += 1;
        }
    }
    if wins + ties + losses == 0 {
        return Err(Error::Stats(format!("no common databases for {model_a} and {model_b}")));
    }
    Ok(WinLoss::from_counts(model_a, model_b, wins, ties, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ds: &str, db: &str, m: &str, s: f64) -> ScoreRecord {
        ScoreRecord {
            dataset: ds.into(),
            database: db.into(),
            model: m.into(),
            score: Some(s),
        }
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(rank_row(&[1.0, 2.0], Orientation::LowerIsBetter), vec![1.0, 2.0]);
        assert_eq!(
            rank_row(&[1.0, 1.0, 2.0], Orientation::LowerIsBetter),
            vec![1.5, 1.5, 3.0]
        );
        assert_eq!(
            rank_row(&[0.9, 0.5, 0.7], Orientation::HigherIsBetter),
            vec![1.0, 3.0, 2.0]
        );
    }

    #[test]
    fn database_mean_and_intersection() {
        let records = vec![
            rec("a1", "A", "m1", 2.0),
            rec("a2", "A", "m1", 4.0),
            rec("a1", "A", "m2", 1.0),
            rec("a2", "A", "m2", 1.0),
            rec("b", "B", "m1", 1.0),
            rec("b", "B", "m2", 2.0),
            rec("c", "C", "m1", 1.0),
            ScoreRecord {
                score: None,
                ..rec("c", "C", "m2", 0.0)
            },
        ];
        let t = aggregate_scores(&records, Orientation::LowerIsBetter).unwrap();
        assert_eq!(t.databases, vec!["A", "B"]);
        assert_eq!(t.scores[0], vec![3.0, 1.0]);
        assert_eq!(t.avg_ranks, vec![1.5, 1.5]);
    }

    #[test]
    fn friedman_fixture() {
        let t = RankTable::from_ranks(vec!["a".into(), "b".into(), "c".into()], vec![vec![1.0, 2.0, 3.0]; 4]);
        let r = friedman_test(&t).unwrap();
        assert!((r.statistic - 8.0).abs() < 1e-12);
        assert!((r.p_value - (-4.0f64).exp()).abs() < 1e-9);
        let tied = RankTable::from_ranks(vec!["a".into(), "b".into()], vec![vec![1.5, 1.5]; 3]);
        let r = friedman_test(&tied).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn cd_examples() {
        assert!((nemenyi_cd(2, 6, 0.05).unwrap() - 0.800).abs() < 5e-4);
        assert!((nemenyi_cd(5, 10, 0.05).unwrap() - 1.929).abs() < 5e-4);
        assert!(nemenyi_cd(21, 10, 0.05).is_err());
        assert!(nemenyi_cd(1, 10, 0.05).is_err());
    }

    #[test]
    fn significance_relation() {
        assert_eq!(
            pairwise_significance(&[1.0, 1.1], 0.5),
            vec![vec![false, false], vec![false, false]]
        );
        let s = pairwise_significance(&[1.0, 3.0], 1.5);
        assert!(s[0][1] && s[1][0] && !s[0][0] && !s[1][1]);
    }

    #[test]
    fn win_rates_match_published_rows() {
        let w = WinLoss::from_counts("a", "b", 18, 1, 4);
        assert_eq!(format!("{:.3} {:.3}", w.win_rate, w.non_loss_rate), "0.818 0.826");
        let w = WinLoss::from_counts("a", "b", 22, 1, 2);
        assert_eq!(format!("{:.3} {:.3}", w.win_rate, w.non_loss_rate), "0.917 0.920");
    }

    #[test]
    fn identical_scores_are_ties() {
        let records: Vec<ScoreRecord> = ["A", "B", "C"]
            .iter()
            .flat_map(|db| [rec(db, db, "x", 1.25), rec(db, db, "y", 1.25)])
            .collect();
        let w = win_loss(&records, "x", "y", Orientation::LowerIsBetter).unwrap();
        assert_eq!((w.wins, w.ties, w.losses), (0, 3, 0));
    }

    #[test]
    fn exact_permutation_matches_two_model_binomial() {
        // k = 2: the statistic is extreme only when one model wins every row
        let t = RankTable::from_ranks(vec!["a".into(), "b".into()], vec![vec![1.0, 2.0]; 4]);
        let p = friedman_exact_p_value(&t).unwrap();
        assert!((p - 2.0 / 16.0).abs() < 1e-12);
    }
}
