//! Benchmark orchestration: one search per (dataset, model) cell, cell
//! records persisted atomically so that interrupted runs can resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bridge::{AdapterPool, BridgeTimeouts};
use crate::data::{resolve_split, select_rows, Dataset, Target, Task};
use crate::error::{Error, Result};
use crate::eval::{detect_spectral_outliers, extrapolation_indices};
use crate::manifest::{external_preset, BenchmarkManifest};
use crate::models::Prediction;
use crate::report;
use crate::search::{
    search_and_finalize, stable_seed, CalibrationSet, ExternalModel, Family, ModelKind, SearchConfig, SearchCounts,
    SearchSpace, TestVault, TrialRecord,
};

pub const CELL_DIR: &str = "cells";
pub const DATASET_DIR: &str = "datasets";

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn now_secs() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
    Unavailable,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
            CellStatus::Unavailable => "unavailable",
        }
    }
}

/// Everything recorded for one (dataset, model) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub database: String,
    pub model: String,
    pub task: Task,
    pub family: Family,
    pub status: CellStatus,
    pub error: Option<String>,
    pub pipeline: Option<String>,
    pub params: Option<String>,
    pub cv_score: Option<f64>,
    pub test_score: Option<f64>,
    pub effective_components: Option<usize>,
    pub counts: Option<SearchCounts>,
    pub test_evaluations: usize,
    /// test-set predictions (label ids as reals for classification)
    pub predictions: Vec<f64>,
    pub trials: Vec<TrialRecord>,
    pub started_at: f64,
    pub wall_ms: f64,
}

/// Split- and model-independent facts about a dataset, including the
/// robustness subsets of its test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub name: String,
    pub database: String,
    pub task: Task,
    pub n_samples: usize,
    pub n_features: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// test targets (label ids as reals for classification)
    pub y_test: Vec<f64>,
    pub outliers: Option<Vec<usize>>,
    pub a95: Option<usize>,
    pub t2_threshold: Option<f64>,
    pub outlier_error: Option<String>,
    pub extrapolation: Vec<usize>,
}

pub fn cell_file(dir: &Path, dataset: &str, model: &str) -> PathBuf {
    dir.join(CELL_DIR).join(format!("{dataset}__{model}.json"))
}

pub fn dataset_file(dir: &Path, dataset: &str) -> PathBuf {
    dir.join(DATASET_DIR).join(format!("{dataset}.json"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

/// Loads the dataset and cell records that belong to the run described by
/// `run.json`, sorted by dataset then model.
pub fn load_run(dir: &Path) -> Result<(RunInfo, Vec<DatasetRecord>, Vec<CellRecord>)> {
    let info: RunInfo = read_json(&dir.join("run.json"))?;
    let mut datasets = Vec::new();
    let mut cells = Vec::new();
    for (sub, is_cell) in [(DATASET_DIR, false), (CELL_DIR, true)] {
        let d = dir.join(sub);
        let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            if is_cell {
                let c: CellRecord = read_json(&p)?;
                if info.datasets.contains(&c.dataset) && info.models.contains(&c.model) {
                    cells.push(c);
                }
            } else {
                let d: DatasetRecord = read_json(&p)?;
                if info.datasets.contains(&d.name) {
                    datasets.push(d);
                }
            }
        }
    }
    datasets.sort_by(|a, b| a.name.cmp(&b.name));
    cells.sort_by(|a, b| (&a.dataset, &a.model).cmp(&(&b.dataset, &b.model)));
    Ok((info, datasets, cells))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub models: Option<Vec<String>>,
    /// dataset names to keep (already expanded from any pattern)
    pub datasets: Option<Vec<String>>,
    pub resume: bool,
    pub timeouts: BridgeTimeouts,
    pub search: SearchConfig,
}

impl RunOptions {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunOptions {
            config: config.into(),
            out: out.into(),
            workers: None,
            seed: None,
            models: None,
            datasets: None,
            resume: false,
            timeouts: BridgeTimeouts::default(),
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub cells: usize,
    pub ok: usize,
    pub failed: usize,
    pub unavailable: usize,
    pub resumed: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed + self.unavailable > 0 {
            2
        } else {
            0
        }
    }
}

#[derive(Debug)]
pub enum RunFailure {
    /// bad manifest, flags or inputs; nothing was computed
    Config(Error),
    /// the run could not continue (for example, artifacts not writable)
    Fatal(Error),
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunFailure::Config(e) => write!(f, "configuration error: {e}"),
            RunFailure::Fatal(e) => write!(f, "fatal: {e}"),
        }
    }
}

impl std::error::Error for RunFailure {}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunFailure::Config(_) => 1,
            RunFailure::Fatal(_) => 3,
        }
    }
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub folds: usize,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub engine_version: String,
}

enum ModelSlot {
    Ready(ModelKind),
    Unavailable(String),
}

fn prepare_model(id: &str, manifest: &BenchmarkManifest, run_id: &str, timeouts: BridgeTimeouts) -> ModelSlot {
    if let Some(kind) = ModelKind::builtin(id) {
        return ModelSlot::Ready(kind);
    }
    let entry = manifest.external(id);
    let command: Vec<String> = entry.map(|e| e.command.clone()).unwrap_or_default();
    if command.is_empty() {
        return ModelSlot::Unavailable(format!("no adapter command configured for {id}"));
    }
    let preset = external_preset(id);
    let pick = |own: Option<&serde_json::Map<String, Value>>, fallback: Option<&Value>| -> Value {
        own.map(|m| Value::Object(m.clone()))
            .or_else(|| fallback.cloned())
            .unwrap_or_else(|| Value::Object(Default::default()))
    };
    let cv_params = pick(entry.and_then(|e| e.cv_params.as_ref()), preset.as_ref().map(|p| &p.0));
    let final_params = pick(
        entry.and_then(|e| e.final_params.as_ref()),
        preset.as_ref().map(|p| &p.1),
    );
    let mut timeouts = timeouts;
    if let Some(secs) = entry.and_then(|e| e.timeout_secs) {
        timeouts.call = std::time::Duration::from_secs(secs);
    }
    match AdapterPool::connect(id, &command, run_id, timeouts) {
        Ok(pool) => ModelSlot::Ready(ModelKind::External(ExternalModel {
            id: id.to_string(),
            family: entry.and_then(|e| e.family).unwrap_or(Family::Tabular),
            cv_params,
            final_params,
            backend: Arc::new(pool),
        })),
        Err(e) => {
            log::warn!("model {id} unavailable: {e}");
            ModelSlot::Unavailable(e.to_string())
        }
    }
}

fn describe_dataset(ds: &Dataset, train: &[usize], test: &[usize]) -> DatasetRecord {
    let x = ds.x.values();
    let (outliers, a95, t2_threshold, outlier_error) =
        match detect_spectral_outliers(&select_rows(x, train), &select_rows(x, test)) {
            Ok(r) => (Some(r.outliers), Some(r.a95), Some(r.threshold), None),
            Err(e) => (None, None, None, Some(e.to_string())),
        };
    let extrapolation = match &ds.y {
        Target::Regression(y) => {
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let ys: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            extrapolation_indices(&yt, &ys)
        }
        Target::Classification { .. } => Vec::new(),
    };
    DatasetRecord {
        name: ds.name.clone(),
        database: ds.database.clone(),
        task: ds.task,
        n_samples: ds.n_samples(),
        n_features: ds.n_features(),
        train: train.to_vec(),
        test: test.to_vec(),
        y_test: ds.y.subset(test).as_real(),
        outliers,
        a95,
        t2_threshold,
        outlier_error,
        extrapolation,
    }
}

fn blank_cell(ds: &Dataset, model: &str, family: Family, status: CellStatus, error: Option<String>) -> CellRecord {
    CellRecord {
        dataset: ds.name.clone(),
        database: ds.database.clone(),
        model: model.to_string(),
        task: ds.task,
        family,
        status,
        error,
        pipeline: None,
        params: None,
        cv_score: None,
        test_score: None,
        effective_components: None,
        counts: None,
        test_evaluations: 0,
        predictions: Vec::new(),
        trials: Vec::new(),
        started_at: now_secs(),
        wall_ms: 0.0,
    }
}

fn run_cell(
    ds: &Dataset,
    split: &(Vec<usize>, Vec<usize>),
    model: &ModelKind,
    family: Family,
    cfg: &SearchConfig,
    seed: u64,
) -> CellRecord {
    let started_at = now_secs();
    let t0 = Instant::now();
    let (train, test) = split;
    let x = ds.x.values();
    let outcome = CalibrationSet::new(select_rows(x, train), ds.y.subset(train), cfg.folds).and_then(|cal| {
        let vault = TestVault::new(select_rows(x, test), ds.y.subset(test));
        let space = SearchSpace::for_family(family);
        search_and_finalize(
            model,
            &cal,
            &vault,
            &space,
            cfg,
            stable_seed(seed, &[&ds.name, model.id()]),
        )
    });
    let mut cell = match outcome {
        Ok(out) => {
            let f = &out.final_fit;
            CellRecord {
                status: CellStatus::Ok,
                pipeline: Some(f.pipeline.to_string()),
                params: Some(f.params.to_string()),
                cv_score: Some(out.cv_score()),
                test_score: Some(f.test_score),
                effective_components: f.effective_components,
                counts: Some(out.search.counts.clone()),
                test_evaluations: out.test_evaluations,
                predictions: match &f.predictions {
                    Prediction::Values(v) => v.clone(),
                    Prediction::Labels(l) => l.iter().map(|&c| c as f64).collect(),
                },
                trials: out.search.trials().cloned().collect(),
                ..blank_cell(ds, model.id(), family, CellStatus::Ok, None)
            }
        }
        Err(e) => blank_cell(ds, model.id(), family, CellStatus::Failed, Some(e.to_string())),
    };
    cell.started_at = started_at;
    cell.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    cell
}

/// Executes a benchmark and writes every artifact into `opts.out`.
pub fn run(opts: &RunOptions) -> std::result::Result<RunSummary, RunFailure> {
    use RunFailure::{Config, Fatal};
    let manifest_text = fs::read_to_string(&opts.config).map_err(|e| Config(Error::io(&opts.config, e)))?;
    let manifest = BenchmarkManifest::load(&opts.config).map_err(Config)?;
    let seed = opts.seed.unwrap_or(manifest.seed);
    let workers = opts.workers.unwrap_or(manifest.workers);
    if workers == 0 {
        return Err(Config(Error::Manifest("workers must be >= 1".into())));
    }
    let models: Vec<String> = match &opts.models {
        Some(list) => {
            let registered = manifest.registered_models();
            if let Some(bad) = list.iter().find(|m| !registered.contains(*m)) {
                return Err(Config(Error::Manifest(format!("unknown model {bad:?}"))));
            }
            list.clone()
        }
        None => manifest.models.clone(),
    };
    let mut entries = manifest.datasets.clone();
    if let Some(keep) = &opts.datasets {
        entries.retain(|d| keep.contains(&d.name));
    }
    if entries.is_empty() {
        return Err(Config(Error::NoDatasets));
    }
    let datasets: Vec<Dataset> = entries
        .iter()
        .map(|e| crate::data::load_dataset(e, &manifest.base_dir))
        .collect::<Result<_>>()
        .map_err(Config)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = datasets
        .iter()
        .map(resolve_split)
        .collect::<Result<_>>()
        .map_err(Config)?;
    let mut cfg = opts.search.clone();
    cfg.folds = manifest.folds;

    let out = &opts.out;
    fs::create_dir_all(out).map_err(|e| Fatal(Error::io(out, e)))?;
    if !opts.resume {
        for sub in [CELL_DIR, DATASET_DIR] {
            let d = out.join(sub);
            if d.exists() {
                fs::remove_dir_all(&d).map_err(|e| Fatal(Error::io(&d, e)))?;
            }
        }
    }
    write_atomic(&out.join("manifest.toml"), manifest_text.as_bytes()).map_err(Fatal)?;
    let info = RunInfo {
        seed,
        folds: cfg.folds,
        models: models.clone(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&out.join("run.json"), &info).map_err(Fatal)?;

    for (ds, split) in datasets.iter().zip(&splits) {
        write_json(&dataset_file(out, &ds.name), &describe_dataset(ds, &split.0, &split.1)).map_err(Fatal)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Fatal(Error::Search(e.to_string())))?;
    let run_id = format!("run-{seed}");
    let slots: BTreeMap<String, ModelSlot> = models
        .iter()
        .map(|m| (m.clone(), prepare_model(m, &manifest, &run_id, opts.timeouts)))
        .collect();

    let mut jobs = Vec::new();
    for (di, ds) in datasets.iter().enumerate() {
        for m in &models {
            let family = |kind: &ModelKind| manifest.search_space.unwrap_or(kind.family());
            match &slots[m] {
                ModelSlot::Ready(kind) if kind.supports(ds.task) => jobs.push((di, m.clone(), Some(family(kind)))),
                ModelSlot::Ready(_) => {}
                ModelSlot::Unavailable(_) => jobs.push((di, m.clone(), None)),
            }
        }
    }

    let results: Vec<Result<(CellStatus, bool)>> = pool.install(|| {
        jobs.par_iter()
            .map(|(di, m, family)| {
                let ds = &datasets[*di];
                let path = cell_file(out, &ds.name, m);
                if opts.resume && path.exists() {
                    if let Ok(cell) = read_json::<CellRecord>(&path) {
                        return Ok((cell.status, true));
                    }
                }
                let cell = match (&slots[m], family) {
                    (ModelSlot::Ready(kind), Some(family)) => run_cell(ds, &splits[*di], kind, *family, &cfg, seed),
                    (ModelSlot::Unavailable(why), _) => {
                        blank_cell(ds, m, Family::Tabular, CellStatus::Unavailable, Some(why.clone()))
                    }
                    _ => unreachable!("jobs only hold ready models with a family"),
                };
                log::info!(
                    "{} / {}: {}{}",
                    ds.name,
                    m,
                    cell.status.as_str(),
                    cell.test_score.map(|s| format!(" test={s:.6}")).unwrap_or_default()
                );
                write_json(&path, &cell)?;
                Ok((cell.status, false))
            })
            .collect()
    });
    drop(slots);

    let mut summary = RunSummary {
        cells: results.len(),
        ok: 0,
        failed: 0,
        unavailable: 0,
        resumed: 0,
    };
    for r in results {
        let (status, resumed) = r.map_err(Fatal)?;
        summary.resumed += resumed as usize;
        match status {
            CellStatus::Ok => summary.ok += 1,
            CellStatus::Failed => summary.failed += 1,
            CellStatus::Unavailable => summary.unavailable += 1,
        }
    }
    report::write_artifacts(out, &report::ReportOptions::default()).map_err(Fatal)?;
    Ok(summary)
}
