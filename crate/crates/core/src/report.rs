//! Derived artifacts of a run directory: result tables, robustness
//! subsets, trial log, rank statistics, cumulative improvement curves and
//! the critical-difference diagram. Everything is rebuilt from the stored
//! cell and dataset records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::eval::{relative_metric, subset_rmsep};
use crate::runner::{load_run, write_atomic, CellRecord, CellStatus, DatasetRecord};
use crate::stats::{
    aggregate_scores, cd_diagram, friedman_exact_p_value, friedman_test, win_loss, CdDiagram, Orientation, RankTable,
    ScoreRecord,
};

/// Relative display values further than this many IQRs beyond the
/// quartiles are left out of plot data.
pub const DISPLAY_IQR_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// reference model for both tasks; defaults to pls / plsda
    pub reference: Option<String>,
    pub exact_friedman: bool,
}

pub fn default_reference(task: Task) -> &'static str {
    match task {
        Task::Regression => "pls",
        Task::Classification => "plsda",
    }
}

pub fn orientation(task: Task) -> Orientation {
    match task {
        Task::Regression => Orientation::LowerIsBetter,
        Task::Classification => Orientation::HigherIsBetter,
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Keep-mask for display: values within `factor × IQR` of the quartiles.
pub fn iqr_display_mask(values: &[f64], factor: f64) -> Vec<bool> {
    if values.len() < 4 {
        return vec![true; values.len()];
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    let iqr = q3 - q1;
    values
        .iter()
        .map(|&v| v >= q1 - factor * iqr && v <= q3 + factor * iqr)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskAnalysis {
    pub task: Task,
    pub reference: String,
    pub databases: Vec<String>,
    pub models: Vec<String>,
    pub avg_ranks: Vec<f64>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub exact_p_value: Option<f64>,
    pub n_databases: usize,
    pub n_models: usize,
    pub cd: Option<f64>,
    pub significant_pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportSummary {
    pub results_rows: usize,
    pub analyses: Vec<TaskAnalysis>,
}

fn reference_for(task: Task, opts: &ReportOptions) -> String {
    opts.reference
        .clone()
        .unwrap_or_else(|| default_reference(task).to_string())
}

fn cell_lookup(cells: &[CellRecord]) -> BTreeMap<(&str, &str), &CellRecord> {
    cells
        .iter()
        .map(|c| ((c.dataset.as_str(), c.model.as_str()), c))
        .collect()
}

fn relative_of(cell: &CellRecord, reference: Option<&&CellRecord>) -> Option<f64> {
    let r = reference?;
    if cell.status != CellStatus::Ok || r.status != CellStatus::Ok {
        return None;
    }
    relative_metric(cell.task, r.test_score?, cell.test_score?).ok()
}

fn results_csv(cells: &[CellRecord], opts: &ReportOptions) -> Result<Vec<u8>> {
    let lookup = cell_lookup(cells);
    let rows = cells
        .iter()
        .map(|c| {
            let reference = reference_for(c.task, opts);
            let rel = relative_of(c, lookup.get(&(c.dataset.as_str(), reference.as_str())));
            vec![
                c.dataset.clone(),
                c.database.clone(),
                c.task.as_str().to_string(),
                c.model.clone(),
                c.status.as_str().to_string(),
                c.pipeline.clone().unwrap_or_default(),
                c.params.clone().unwrap_or_default(),
                num(c.cv_score),
                num(c.test_score),
                reference,
                num(rel),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    csv_text(
        &[
            "dataset",
            "database",
            "task",
            "model",
            "status",
            "pipeline",
            "hyperparams",
            "cv_score",
            "test_score",
            "reference",
            "relative",
            "error",
        ],
        rows,
    )
}

/// (rmsep on outliers, rmsep on extrapolation rows)
type SubsetScores = (Option<f64>, Option<f64>);

fn robustness_csv(datasets: &[DatasetRecord], cells: &[CellRecord], opts: &ReportOptions) -> Result<Vec<u8>> {
    let by_name: BTreeMap<&str, &DatasetRecord> = datasets.iter().map(|d| (d.name.as_str(), d)).collect();
    let mut subsets: BTreeMap<(&str, &str), SubsetScores> = BTreeMap::new();
    for c in cells
        .iter()
        .filter(|c| c.status == CellStatus::Ok && c.task == Task::Regression)
    {
        let Some(d) = by_name.get(c.dataset.as_str()) else {
            continue;
        };
        let out = d
            .outliers
            .as_ref()
            .and_then(|idx| subset_rmsep(&d.y_test, &c.predictions, idx).ok().flatten());
        let extra = subset_rmsep(&d.y_test, &c.predictions, &d.extrapolation).ok().flatten();
        subsets.insert((c.dataset.as_str(), c.model.as_str()), (out, extra));
    }
    let rel = |r: Option<f64>, v: Option<f64>| match (r, v) {
        (Some(r), Some(v)) => relative_metric(Task::Regression, r, v).ok(),
        _ => None,
    };
    let mut rows = Vec::new();
    for (&(ds, model), &(out, extra)) in &subsets {
        let d = by_name[ds];
        let reference = reference_for(Task::Regression, opts);
        let (ref_out, ref_extra) = subsets.get(&(ds, reference.as_str())).copied().unwrap_or((None, None));
        let n_test = d.test.len();
        let n_out = d.outliers.as_ref().map(Vec::len);
        rows.push(vec![
            ds.to_string(),
            model.to_string(),
            n_test.to_string(),
            n_out.map(|n| n.to_string()).unwrap_or_default(),
            num(n_out.map(|n| 100.0 * n as f64 / n_test as f64)),
            num(out),
            num(rel(ref_out, out)),
            d.extrapolation.len().to_string(),
            num(extra),
            num(rel(ref_extra, extra)),
            d.a95.map(|a| a.to_string()).unwrap_or_default(),
            num(d.t2_threshold),
        ]);
    }
    csv_text(
        &[
            "dataset",
            "model",
            "n_test",
            "n_out",
            "pct_out",
            "rmsep_out",
            "irmsep_out",
            "n_extra",
            "rmsep_extra",
            "irmsep_extra",
            "a95",
            "t2_threshold",
        ],
        rows,
    )
}

fn trials_csv(cells: &[CellRecord]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for c in cells {
        for t in &c.trials {
            rows.push(vec![
                c.dataset.clone(),
                c.model.clone(),
                t.phase.to_string(),
                t.pipeline.to_string(),
                t.trial.to_string(),
                t.params.as_ref().map(|p| p.to_string()).unwrap_or_default(),
                t.fold_scores
                    .iter()
                    .map(|s| format!("{s}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                num(t.mean),
                if t.ok() { "ok" } else { "failed" }.to_string(),
                t.error.clone().unwrap_or_default(),
                format!("{:.3}", t.wall_ms),
                format!("{:.3}", c.started_at),
            ]);
        }
    }
    csv_text(
        &[
            "dataset",
            "model",
            "phase",
            "pipeline",
            "trial",
            "hyperparams",
            "fold_scores",
            "mean",
            "status",
            "error",
            "wall_ms",
            "cell_started_at",
        ],
        rows,
    )
}

fn score_records(cells: &[CellRecord], task: Task) -> Vec<ScoreRecord> {
    cells
        .iter()
        .filter(|c| c.task == task && c.status != CellStatus::Unavailable)
        .map(|c| ScoreRecord {
            dataset: c.dataset.clone(),
            database: c.database.clone(),
            model: c.model.clone(),
            score: if c.status == CellStatus::Ok { c.test_score } else { None },
        })
        .collect()
}

fn analyse(task: Task, cells: &[CellRecord], opts: &ReportOptions) -> Option<(TaskAnalysis, RankTable, CdDiagram)> {
    let records = score_records(cells, task);
    let table = match aggregate_scores(&records, orientation(task)) {
        Ok(t) => t,
        Err(e) => {
            log::info!("no rank analysis for {} tasks: {e}", task.as_str());
            return None;
        }
    };
    let fr = friedman_test(&table).ok()?;
    let exact_p_value = if opts.exact_friedman {
        friedman_exact_p_value(&table).ok()
    } else {
        None
    };
    let k = table.n_models();
    let mut significant_pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if fr.significant[i][j] {
                significant_pairs.push((table.models[i].clone(), table.models[j].clone()));
            }
        }
    }
    let diagram = cd_diagram(&table, fr.cd.unwrap_or(0.0));
    Some((
        TaskAnalysis {
            task,
            reference: reference_for(task, opts),
            databases: table.databases.clone(),
            models: table.models.clone(),
            avg_ranks: table.avg_ranks.clone(),
            statistic: fr.statistic,
            df: fr.df,
            p_value: fr.p_value,
            exact_p_value,
            n_databases: fr.n_databases,
            n_models: fr.n_models,
            cd: fr.cd,
            significant_pairs,
        },
        table,
        diagram,
    ))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Minimal critical-difference diagram: rank axis, one labelled marker per
/// model, the CD bar and bars joining models that are not significantly
/// different.
pub fn cd_svg(d: &CdDiagram, title: &str) -> String {
    let k = d.ordered.len().max(2);
    let (width, left, right) = (640.0, 60.0, 580.0);
    let x_of = |r: f64| left + (r - 1.0) / (k as f64 - 1.0) * (right - left);
    let axis_y = 80.0;
    let label_rows = d.ordered.len();
    let height = axis_y + 40.0 + 22.0 * label_rows as f64 + 12.0 * d.groups.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{axis_y}" x2="{right}" y2="{axis_y}" stroke="black"/>"#
    );
    for r in 1..=k {
        let x = x_of(r as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{axis_y}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            axis_y - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
            axis_y - 10.0
        );
    }
    if d.cd > 0.0 {
        let x1 = x_of(1.0);
        let x2 = x_of(1.0 + d.cd);
        let _ = writeln!(
            s,
            r#"<line x1="{x1:.2}" y1="20" x2="{x2:.2}" y2="20" stroke="black" stroke-width="2"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="14" text-anchor="middle">CD = {:.3} (B = {})</text>"#,
            (x1 + x2) / 2.0,
            d.cd,
            d.n_databases
        );
    }
    for (g, &(a, b)) in d.groups.iter().enumerate() {
        let y = axis_y + 14.0 + 12.0 * g as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="4"/>"#,
            x_of(d.ordered[a].1) - 3.0,
            x_of(d.ordered[b].1) + 3.0
        );
    }
    let base = axis_y + 24.0 + 12.0 * d.groups.len() as f64;
    for (i, (model, rank)) in d.ordered.iter().enumerate() {
        let x = x_of(*rank);
        let y = base + 22.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{axis_y}" x2="{x:.2}" y2="{y:.2}" stroke="gray"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{} ({rank:.2})</text>"#,
            x + 4.0,
            y + 4.0,
            xml_escape(model)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Rebuilds every derived artifact of the run directory.
pub fn write_artifacts(dir: &Path, opts: &ReportOptions) -> Result<ReportSummary> {
    let (_, datasets, cells) = load_run(dir)?;
    if cells.is_empty() {
        return Err(Error::Parse(format!("{}: run has no results", dir.display())));
    }
    if let Some(r) = &opts.reference {
        if !cells.iter().any(|c| &c.model == r && c.status == CellStatus::Ok) {
            return Err(Error::invalid(format!(
                "reference model {r} has no results in this run"
            )));
        }
    }
    write_atomic(&dir.join("results.csv"), &results_csv(&cells, opts)?)?;
    write_atomic(&dir.join("robustness.csv"), &robustness_csv(&datasets, &cells, opts)?)?;
    write_atomic(&dir.join("trials.csv"), &trials_csv(&cells)?)?;

    let lookup = cell_lookup(&cells);
    let size_of: BTreeMap<&str, (usize, usize)> = datasets
        .iter()
        .map(|d| (d.name.as_str(), (d.n_samples, d.n_features)))
        .collect();

    let mut summary = ReportSummary {
        results_rows: cells.len(),
        analyses: Vec::new(),
    };
    let mut ranks = Vec::new();
    let mut groups = Vec::new();
    let mut winloss = Vec::new();
    let mut plot = Vec::new();
    let mut cumulative = Vec::new();
    let mut svgs: Vec<(Task, String)> = Vec::new();

    for task in [Task::Regression, Task::Classification] {
        let reference = reference_for(task, opts);
        let task_cells: Vec<&CellRecord> = cells.iter().filter(|c| c.task == task).collect();
        if task_cells.is_empty() {
            continue;
        }
        let models: Vec<String> = {
            let mut m: Vec<String> = task_cells.iter().map(|c| c.model.clone()).collect();
            m.sort();
            m.dedup();
            m
        };

        // relative values per model, for plots and cumulative curves
        for model in models.iter().filter(|m| **m != reference) {
            let vals: Vec<(&str, f64)> = task_cells
                .iter()
                .filter(|c| &c.model == model)
                .filter_map(|c| {
                    relative_of(c, lookup.get(&(c.dataset.as_str(), reference.as_str())))
                        .map(|v| (c.dataset.as_str(), v))
                })
                .collect();
            let mask = iqr_display_mask(&vals.iter().map(|v| v.1).collect::<Vec<_>>(), DISPLAY_IQR_FACTOR);
            for ((ds, v), keep) in vals.iter().zip(mask) {
                plot.push(vec![
                    task.as_str().to_string(),
                    ds.to_string(),
                    model.clone(),
                    reference.clone(),
                    format!("{v}"),
                    keep.to_string(),
                ]);
            }
            if task == Task::Regression {
                for (order_by, key) in [
                    (
                        "n",
                        Box::new(|n: usize, _p: usize| n) as Box<dyn Fn(usize, usize) -> usize>,
                    ),
                    ("p", Box::new(|_n, p| p)),
                    ("n_x_p", Box::new(|n, p| n * p)),
                ] {
                    let mut ordered: Vec<(usize, &str, f64)> = vals
                        .iter()
                        .filter_map(|&(ds, v)| size_of.get(ds).map(|&(n, p)| (key(n, p), ds, v)))
                        .collect();
                    ordered.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
                    let mut acc = 0.0;
                    for (pos, (k, ds, v)) in ordered.into_iter().enumerate() {
                        acc += v;
                        cumulative.push(vec![
                            order_by.to_string(),
                            model.clone(),
                            reference.clone(),
                            (pos + 1).to_string(),
                            ds.to_string(),
                            k.to_string(),
                            format!("{v}"),
                            format!("{acc}"),
                        ]);
                    }
                }
            }
            if models.contains(&reference) {
                if let Ok(w) = win_loss(&score_records(&cells, task), model, &reference, orientation(task)) {
                    winloss.push(vec![
                        task.as_str().to_string(),
                        model.clone(),
                        reference.clone(),
                        w.wins.to_string(),
                        w.ties.to_string(),
                        w.losses.to_string(),
                        format!("{:.3}", w.win_rate),
                        format!("{:.3}", w.non_loss_rate),
                    ]);
                }
            }
        }

        if let Some((analysis, table, diagram)) = analyse(task, &cells, opts) {
            for (m, r) in table.models.iter().zip(&table.avg_ranks) {
                ranks.push(vec![
                    task.as_str().to_string(),
                    m.clone(),
                    format!("{r}"),
                    table.n_databases().to_string(),
                    table.n_models().to_string(),
                ]);
            }
            for (g, &(a, b)) in diagram.groups.iter().enumerate() {
                for (m, r) in &diagram.ordered[a..=b] {
                    groups.push(vec![
                        task.as_str().to_string(),
                        (g + 1).to_string(),
                        m.clone(),
                        format!("{r}"),
                    ]);
                }
            }
            svgs.push((
                task,
                cd_svg(&diagram, &format!("{} critical difference", task.as_str())),
            ));
            summary.analyses.push(analysis);
        }
    }

    write_atomic(
        &dir.join("ranks.csv"),
        &csv_text(&["task", "model", "avg_rank", "n_databases", "n_models"], ranks)?,
    )?;
    write_atomic(
        &dir.join("cd_groups.csv"),
        &csv_text(&["task", "group", "model", "avg_rank"], groups)?,
    )?;
    write_atomic(
        &dir.join("winloss.csv"),
        &csv_text(
            &[
                "task",
                "model",
                "reference",
                "wins",
                "ties",
                "losses",
                "win_rate",
                "non_loss_rate",
            ],
            winloss,
        )?,
    )?;
    write_atomic(
        &dir.join("plot_data.csv"),
        &csv_text(&["task", "dataset", "model", "reference", "relative", "shown"], plot)?,
    )?;
    write_atomic(
        &dir.join("cumulative.csv"),
        &csv_text(
            &[
                "order_by",
                "model",
                "reference",
                "position",
                "dataset",
                "key",
                "irmsep",
                "cumulative",
            ],
            cumulative,
        )?,
    )?;
    let friedman = serde_json::to_string_pretty(&summary.analyses).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&dir.join("friedman.json"), friedman.as_bytes())?;
    for (i, (task, svg)) in svgs.iter().enumerate() {
        if i == 0 {
            write_atomic(&dir.join("cd_diagram.svg"), svg.as_bytes())?;
        }
        write_atomic(&dir.join(format!("cd_diagram_{}.svg", task.as_str())), svg.as_bytes())?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
    }

    #[test]
    fn display_filter_drops_extremes_only() {
        let mut v: Vec<f64> = (0..20).map(|i| i as f64).collect();
        v.push(25.0);
        v.push(1e4);
        let mask = iqr_display_mask(&v, DISPLAY_IQR_FACTOR);
        assert!(mask[..21].iter().all(|&k| k));
        assert!(!mask[21]);
    }
}
