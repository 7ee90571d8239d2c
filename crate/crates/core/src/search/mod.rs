//! Two-phase preprocessing search with per-pipeline hyperparameter tuning,
//! followed by a single refit and test evaluation.

pub mod space;
pub mod tpe;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{select_rows, Matrix, Target, Task};
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy_observed, rmse};
use crate::models::{self, pls, Prediction, MAX_PLS_COMPONENTS};
use crate::preproc::{apply_pipeline, fit_pipeline, PipelineSpec};
use crate::sampling::{self, FoldAssignment};
pub use space::{enumerate_phase1, expand_phase2, Family, SearchSpace};
pub use tpe::{tpe_suggest, TpeConfig};

/// Fit-and-predict service for models that live outside the engine.
pub trait ExternalBackend: Send + Sync {
    fn fit_predict(
        &self,
        task: Task,
        x_cal: &Matrix,
        y_cal: &Target,
        x_query: &Matrix,
        params: &Value,
    ) -> Result<Prediction>;
}

#[derive(Clone)]
pub struct ExternalModel {
    pub id: String,
    pub family: Family,
    pub cv_params: Value,
    pub final_params: Value,
    pub backend: Arc<dyn ExternalBackend>,
}

#[derive(Clone)]
pub enum ModelKind {
    Pls,
    PlsDa,
    Ridge,
    External(ExternalModel),
}

impl fmt::Debug for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl ModelKind {
    pub fn id(&self) -> &str {
        match self {
            ModelKind::Pls => "pls",
            ModelKind::PlsDa => "plsda",
            ModelKind::Ridge => "ridge",
            ModelKind::External(e) => &e.id,
        }
    }

    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            "pls" => Some(ModelKind::Pls),
            "plsda" => Some(ModelKind::PlsDa),
            "ridge" => Some(ModelKind::Ridge),
            _ => None,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelKind::External(e) => e.family,
            _ => Family::Linear,
        }
    }

    pub fn supports(&self, task: Task) -> bool {
        match self {
            ModelKind::Pls | ModelKind::Ridge => task == Task::Regression,
            ModelKind::PlsDa => task == Task::Classification,
            ModelKind::External(_) => true,
        }
    }

    /// Hyperparameter configurations per pipeline as budgeted by the search.
    pub fn nominal_trials(&self, cfg: &SearchConfig) -> usize {
        match self {
            ModelKind::Pls | ModelKind::PlsDa => cfg.max_components,
            ModelKind::Ridge => cfg.tpe.n_trials,
            ModelKind::External(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperParams {
    Components { n_components: usize },
    Alpha { alpha: f64 },
    Fixed { params: Value },
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperParams::Components { n_components } => write!(f, "n_components={n_components}"),
            HyperParams::Alpha { alpha } => write!(f, "alpha={alpha:e}"),
            HyperParams::Fixed { params } => write!(f, "{params}"),
        }
    }
}

impl HyperParams {
    /// Key used to break near-ties: fewer components, stronger shrinkage.
    fn complexity(&self) -> f64 {
        match self {
            HyperParams::Components { n_components } => *n_components as f64,
            HyperParams::Alpha { alpha } => -*alpha,
            HyperParams::Fixed { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub folds: usize,
    pub max_components: usize,
    pub tpe: TpeConfig,
    /// CV scores within `tie_rel_tol · sd(y_cal)` of the best count as tied
    /// (regression only)
    pub tie_rel_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            folds: 3,
            max_components: MAX_PLS_COMPONENTS,
            tpe: TpeConfig::default(),
            tie_rel_tol: 1e-9,
        }
    }
}

/// Calibration rows and their fold assignment. This is everything the
/// search phases may see.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub x: Matrix,
    pub y: Target,
    pub folds: FoldAssignment,
}

impl CalibrationSet {
    /// Builds SPXY folds (stratified for classification).
    pub fn new(x: Matrix, y: Target, k: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(format!(
                "{} spectra, {} targets",
                x.nrows(),
                y.len()
            )));
        }
        let folds = match &y {
            Target::Regression(v) => sampling::spxy_kfold(&x, v, k)?,
            Target::Classification { ids, .. } => sampling::stratified_kfold(&x, ids, k)?,
        };
        Ok(CalibrationSet { x, y, folds })
    }

    pub fn task(&self) -> Task {
        self.y.task()
    }
}

/// Test rows behind an access counter. Only `finalize` opens it.
#[derive(Debug)]
pub struct TestVault {
    x: Matrix,
    y: Target,
    reads: AtomicUsize,
}

impl TestVault {
    pub fn new(x: Matrix, y: Target) -> Self {
        TestVault {
            x,
            y,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn open(&self) -> (&Matrix, &Target) {
        self.reads.fetch_add(1, Ordering::SeqCst);
        (&self.x, &self.y)
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

/// Natural-orientation score (RMSE or balanced accuracy).
pub fn score_prediction(y: &Target, pred: &Prediction) -> Result<f64> {
    match (y, pred) {
        (Target::Regression(t), Prediction::Values(p)) => rmse(t, p),
        (Target::Classification { ids, .. }, Prediction::Labels(p)) => balanced_accuracy_observed(ids, p),
        _ => Err(Error::invalid("prediction kind does not match the task")),
    }
}

/// Maps a natural score to lower-is-better.
pub fn oriented(task: Task, score: f64) -> f64 {
    match task {
        Task::Regression => score,
        Task::Classification => -score,
    }
}

fn check_prediction(pred: &Prediction, rows: usize, y: &Target) -> Result<()> {
    if pred.len() != rows {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {rows} rows",
            pred.len()
        )));
    }
    match (pred, y) {
        (Prediction::Values(v), Target::Regression(_)) => {
            if v.iter().any(|p| !p.is_finite()) {
                return Err(Error::degenerate("non-finite prediction"));
            }
        }
        (Prediction::Labels(l), Target::Classification { label_names, .. }) => {
            if let Some(bad) = l.iter().find(|&&c| c >= label_names.len()) {
                return Err(Error::invalid(format!("predicted label id {bad} out of range")));
            }
        }
        _ => return Err(Error::invalid("prediction kind does not match the task")),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub pipeline: PipelineSpec,
    pub phase: u8,
    pub trial: usize,
    pub params: Option<HyperParams>,
    /// natural orientation, one per fold
    pub fold_scores: Vec<f64>,
    pub mean: Option<f64>,
    pub error: Option<String>,
    pub wall_ms: f64,
}

impl TrialRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.mean.is_some()
    }
}

/// Pipeline after fitting on one fold's training rows.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub x_train: Matrix,
    pub y_train: Target,
    pub x_val: Matrix,
    pub y_val: Target,
}

/// Fits the pipeline on each fold's training part and transforms both
/// sides.
pub fn prepare_folds(pipeline: &PipelineSpec, cal: &CalibrationSet) -> Result<Vec<FoldData>> {
    (0..cal.folds.k)
        .map(|f| {
            let (tr, va) = cal.folds.split(f);
            if tr.is_empty() || va.is_empty() {
                return Err(Error::Search(format!("fold {f} is empty")));
            }
            let y_train = cal.y.subset(&tr);
            let (fitted, x_train) = fit_pipeline(pipeline, &select_rows(&cal.x, &tr), &y_train.as_real())?;
            let x_val = apply_pipeline(&fitted, &select_rows(&cal.x, &va))?;
            Ok(FoldData {
                x_train,
                y_train,
                x_val,
                y_val: cal.y.subset(&va),
            })
        })
        .collect()
}

/// One hyperparameter configuration scored across all folds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub params: HyperParams,
    pub fold_scores: Vec<f64>,
    pub mean: Option<f64>,
    pub error: Option<String>,
    pub wall_ms: f64,
}

fn finish_trial(params: HyperParams, scores: Result<Vec<f64>>, started: Instant) -> TrialScore {
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    match scores {
        Ok(s) => TrialScore {
            mean: Some(s.iter().sum::<f64>() / s.len() as f64),
            params,
            fold_scores: s,
            error: None,
            wall_ms,
        },
        Err(e) => TrialScore {
            params,
            fold_scores: Vec::new(),
            mean: None,
            error: Some(e.to_string()),
            wall_ms,
        },
    }
}

fn pls_component_cap(folds: &[FoldData], max_components: usize) -> usize {
    folds
        .iter()
        .map(|f| f.x_train.ncols().min(f.x_train.nrows().saturating_sub(1)))
        .min()
        .unwrap_or(0)
        .min(max_components)
}

fn tune_pls(folds: &[FoldData], cfg: &SearchConfig, discriminant: bool) -> Vec<TrialScore> {
    let started = Instant::now();
    let cap = pls_component_cap(folds, cfg.max_components);
    if cap == 0 {
        return vec![finish_trial(
            HyperParams::Components { n_components: 1 },
            Err(Error::degenerate("no PLS components available")),
            started,
        )];
    }
    // one NIPALS fit per fold; every A reuses its prefix
    let fitted: Vec<Result<pls::PlsModel>> = folds
        .iter()
        .map(|f| match &f.y_train {
            Target::Classification { ids, label_names } if discriminant => {
                pls::nipals(&f.x_train, &pls::one_hot(ids, label_names.len()), cap)
            }
            Target::Regression(y) if !discriminant => pls::pls1(&f.x_train, y, cap),
            _ => Err(Error::invalid("PLS variant does not match the task")),
        })
        .collect();
    let fit_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut out: Vec<TrialScore> = (1..=cap)
        .map(|a| {
            let t0 = Instant::now();
            let scores: Result<Vec<f64>> = folds
                .iter()
                .zip(&fitted)
                .map(|(f, m)| {
                    let m = m.as_ref().map_err(|e| Error::Search(e.to_string()))?;
                    let raw = m.predict_with(&f.x_val, a.min(m.n_components()))?;
                    let pred = if discriminant {
                        Prediction::Labels(pls::argmax_rows(&raw))
                    } else {
                        Prediction::Values(raw.column(0).iter().copied().collect())
                    };
                    check_prediction(&pred, f.x_val.nrows(), &f.y_val)?;
                    score_prediction(&f.y_val, &pred)
                })
                .collect();
            finish_trial(HyperParams::Components { n_components: a }, scores, t0)
        })
        .collect();
    out[0].wall_ms += fit_ms;
    out
}

fn ridge_trial(folds: &[FoldData], alpha: f64) -> Result<Vec<f64>> {
    folds
        .iter()
        .map(|f| {
            let Target::Regression(y) = &f.y_train else {
                return Err(Error::invalid("ridge needs a regression target"));
            };
            let fp = models::ridge_fit(&f.x_train, y, alpha)?;
            let pred = models::predict(&fp, &f.x_val)?;
            check_prediction(&pred, f.x_val.nrows(), &f.y_val)?;
            score_prediction(&f.y_val, &pred)
        })
        .collect()
}

fn tune_ridge(folds: &[FoldData], cfg: &SearchConfig, seed: u64) -> Result<Vec<TrialScore>> {
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut out = Vec::with_capacity(cfg.tpe.n_trials);
    for i in 0..cfg.tpe.n_trials {
        let u = tpe_suggest(&history, seed, i, &cfg.tpe)?;
        let alpha = 10f64.powf(u);
        let t0 = Instant::now();
        let trial = finish_trial(HyperParams::Alpha { alpha }, ridge_trial(folds, alpha), t0);
        if let Some(m) = trial.mean {
            history.push((u, m));
        }
        out.push(trial);
    }
    Ok(out)
}

fn external_trial(folds: &[FoldData], ext: &ExternalModel, task: Task) -> Vec<TrialScore> {
    let t0 = Instant::now();
    let scores = folds
        .iter()
        .map(|f| {
            let pred = ext
                .backend
                .fit_predict(task, &f.x_train, &f.y_train, &f.x_val, &ext.cv_params)?;
            check_prediction(&pred, f.x_val.nrows(), &f.y_val)?;
            score_prediction(&f.y_val, &pred)
        })
        .collect();
    vec![finish_trial(
        HyperParams::Fixed {
            params: ext.cv_params.clone(),
        },
        scores,
        t0,
    )]
}

/// Scores every hyperparameter configuration for one pipeline's fold data.
/// PLS variants try every component count up to the cap, ridge runs TPE
/// over log10 alpha, external models run once with their fixed settings.
pub fn tune_hyperparams(
    model: &ModelKind,
    folds: &[FoldData],
    cfg: &SearchConfig,
    seed: u64,
) -> Result<Vec<TrialScore>> {
    let task = folds
        .first()
        .map(|f| f.y_train.task())
        .ok_or_else(|| Error::Search("no folds".into()))?;
    if !model.supports(task) {
        return Err(Error::invalid(format!(
            "{} does not support {} tasks",
            model.id(),
            task.as_str()
        )));
    }
    Ok(match model {
        ModelKind::Pls => tune_pls(folds, cfg, false),
        ModelKind::PlsDa => tune_pls(folds, cfg, true),
        ModelKind::Ridge => tune_ridge(folds, cfg, seed)?,
        ModelKind::External(ext) => external_trial(folds, ext, task),
    })
}

/// Index of the best trial: lowest oriented mean; scores within `tol` of
/// it are ties, resolved towards lower complexity and then trial order.
pub fn select_best(trials: &[TrialScore], task: Task, tol: f64) -> Option<usize> {
    let best = trials
        .iter()
        .filter_map(|t| t.mean.map(|m| oriented(task, m)))
        .min_by(f64::total_cmp)?;
    let mut pick: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        let Some(m) = t.mean else { continue };
        if oriented(task, m) <= best + tol && pick.is_none_or(|j| t.params.complexity() < trials[j].params.complexity())
        {
            pick = Some(i);
        }
    }
    pick
}

/// Outcome of one pipeline's evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub pipeline: PipelineSpec,
    pub phase: u8,
    pub trials: Vec<TrialRecord>,
    pub best_params: Option<HyperParams>,
    /// natural-orientation mean CV score of the best trial
    pub cv_score: Option<f64>,
    /// (configuration, fold) fits actually run
    pub fits: usize,
    /// scores copied from an earlier identical pipeline
    pub reused: bool,
}

impl PipelineResult {
    fn oriented_score(&self, task: Task) -> Option<f64> {
        self.cv_score.map(|s| oriented(task, s))
    }
}

fn cv_tolerance(cal: &CalibrationSet, cfg: &SearchConfig) -> f64 {
    match &cal.y {
        Target::Regression(y) => {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            cfg.tie_rel_tol * sd
        }
        Target::Classification { .. } => 0.0,
    }
}

/// FNV-1a over the parts, folded into `seed`.
pub fn stable_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Fits `pipeline` per fold, tunes the model and records every trial.
/// Failures are recorded in the trial log; they never abort the search.
pub fn evaluate_pipeline(
    pipeline: &PipelineSpec,
    phase: u8,
    model: &ModelKind,
    cal: &CalibrationSet,
    cfg: &SearchConfig,
    seed: u64,
) -> PipelineResult {
    let text = pipeline.to_string();
    let record = |i: usize, t: TrialScore| TrialRecord {
        pipeline: pipeline.clone(),
        phase,
        trial: i,
        params: Some(t.params),
        fold_scores: t.fold_scores,
        mean: t.mean,
        error: t.error,
        wall_ms: t.wall_ms,
    };
    let failed = |e: Error, wall_ms: f64| {
        log::debug!("{} / {text}: {e}", model.id());
        PipelineResult {
            pipeline: pipeline.clone(),
            phase,
            trials: vec![TrialRecord {
                pipeline: pipeline.clone(),
                phase,
                trial: 0,
                params: None,
                fold_scores: Vec::new(),
                mean: None,
                error: Some(e.to_string()),
                wall_ms,
            }],
            best_params: None,
            cv_score: None,
            fits: 0,
            reused: false,
        }
    };
    let t0 = Instant::now();
    let folds = match prepare_folds(pipeline, cal) {
        Ok(f) => f,
        Err(e) => return failed(e, t0.elapsed().as_secs_f64() * 1e3),
    };
    let trials = match tune_hyperparams(model, &folds, cfg, stable_seed(seed, &[&text])) {
        Ok(t) => t,
        Err(e) => return failed(e, t0.elapsed().as_secs_f64() * 1e3),
    };
    let best = select_best(&trials, cal.task(), cv_tolerance(cal, cfg));
    let fits = trials.len() * folds.len();
    let best_params = best.map(|i| trials[i].params.clone());
    let cv_score = best.and_then(|i| trials[i].mean);
    PipelineResult {
        pipeline: pipeline.clone(),
        phase,
        trials: trials.into_iter().enumerate().map(|(i, t)| record(i, t)).collect(),
        best_params,
        cv_score,
        fits,
        reused: false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchCounts {
    pub phase1_pipelines: usize,
    pub phase2_pipelines: usize,
    pub total_pipelines: usize,
    pub reused_pipelines: usize,
    pub trials_per_pipeline: usize,
    pub folds: usize,
    /// pipelines × configurations × folds, as budgeted
    pub nominal_fits: usize,
    /// (configuration, fold) fits actually run
    pub evaluated_fits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub task: Task,
    pub pipelines: Vec<PipelineResult>,
    pub retained: Vec<PipelineSpec>,
    pub best: usize,
    pub counts: SearchCounts,
}

impl SearchResult {
    pub fn best_pipeline(&self) -> &PipelineResult {
        &self.pipelines[self.best]
    }

    pub fn trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.pipelines.iter().flat_map(|p| p.trials.iter())
    }
}

fn ranked(results: &[PipelineResult], task: Task) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..results.len()).filter(|&i| results[i].cv_score.is_some()).collect();
    idx.sort_by(|&a, &b| {
        results[a]
            .oriented_score(task)
            .unwrap()
            .total_cmp(&results[b].oriented_score(task).unwrap())
            .then(a.cmp(&b))
    });
    idx
}

/// Phase 1 over the baseline × scatter grid, then Phase 2 on the `top_k`
/// best pipelines. Pipelines are evaluated in parallel; results keep
/// enumeration order.
pub fn run_search(
    model: &ModelKind,
    cal: &CalibrationSet,
    space: &SearchSpace,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchResult> {
    let task = cal.task();
    if !model.supports(task) {
        return Err(Error::invalid(format!(
            "{} does not support {} tasks",
            model.id(),
            task.as_str()
        )));
    }
    let phase1 = enumerate_phase1(space);
    let mut results: Vec<PipelineResult> = phase1
        .par_iter()
        .map(|p| evaluate_pipeline(p, 1, model, cal, cfg, seed))
        .collect();
    let order = ranked(&results, task);
    if order.is_empty() {
        let first_error = results
            .iter()
            .flat_map(|r| r.trials.iter())
            .find_map(|t| t.error.clone())
            .unwrap_or_default();
        return Err(Error::Search(format!(
            "every phase-1 pipeline failed (first error: {first_error})"
        )));
    }
    let retained: Vec<PipelineSpec> = order
        .iter()
        .take(space.top_k)
        .map(|&i| results[i].pipeline.clone())
        .collect();

    let cache: HashMap<String, usize> = results
        .iter()
        .enumerate()
        .map(|(i, r)| (r.pipeline.to_string(), i))
        .collect();
    let phase2 = expand_phase2(&retained, space)?;
    let phase2_results: Vec<PipelineResult> = phase2
        .par_iter()
        .map(|p| match cache.get(&p.to_string()) {
            Some(&i) => PipelineResult {
                pipeline: p.clone(),
                phase: 2,
                trials: Vec::new(),
                best_params: results[i].best_params.clone(),
                cv_score: results[i].cv_score,
                fits: 0,
                reused: true,
            },
            None => evaluate_pipeline(p, 2, model, cal, cfg, seed),
        })
        .collect();
    results.extend(phase2_results);

    let best = ranked(&results, task)[0];
    let trials_per_pipeline = model.nominal_trials(cfg);
    let total_pipelines = phase1.len() + phase2.len();
    let counts = SearchCounts {
        phase1_pipelines: phase1.len(),
        phase2_pipelines: phase2.len(),
        total_pipelines,
        reused_pipelines: results.iter().filter(|r| r.reused).count(),
        trials_per_pipeline,
        folds: cal.folds.k,
        nominal_fits: total_pipelines * trials_per_pipeline * cal.folds.k,
        evaluated_fits: results.iter().map(|r| r.fits).sum(),
    };
    Ok(SearchResult {
        task,
        pipelines: results,
        retained,
        best,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalFit {
    pub pipeline: PipelineSpec,
    pub params: HyperParams,
    pub test_score: f64,
    pub predictions: Prediction,
    pub y_test: Target,
    pub effective_components: Option<usize>,
}

/// Refits the pipeline and model on the full calibration set and scores the
/// test rows once. External models switch to their final settings.
pub fn finalize(
    model: &ModelKind,
    cal: &CalibrationSet,
    vault: &TestVault,
    pipeline: &PipelineSpec,
    params: &HyperParams,
) -> Result<FinalFit> {
    let (fitted, x_cal) = fit_pipeline(pipeline, &cal.x, &cal.y.as_real())?;
    let task = cal.task();
    let mut effective_components = None;
    enum Refit {
        Builtin(models::FittedPredictor),
        External(ExternalModel),
    }
    let refit = match (model, params) {
        (ModelKind::Pls, HyperParams::Components { n_components }) => {
            let Target::Regression(y) = &cal.y else {
                return Err(Error::invalid("pls needs a regression target"));
            };
            let a = (*n_components).min(x_cal.ncols()).min(x_cal.nrows().saturating_sub(1));
            Refit::Builtin(models::pls_fit(&x_cal, y, a)?)
        }
        (ModelKind::PlsDa, HyperParams::Components { n_components }) => {
            let Target::Classification { ids, label_names } = &cal.y else {
                return Err(Error::invalid("plsda needs a classification target"));
            };
            let a = (*n_components).min(x_cal.ncols()).min(x_cal.nrows().saturating_sub(1));
            Refit::Builtin(models::plsda_fit(&x_cal, ids, label_names.len(), a)?)
        }
        (ModelKind::Ridge, HyperParams::Alpha { alpha }) => {
            let Target::Regression(y) = &cal.y else {
                return Err(Error::invalid("ridge needs a regression target"));
            };
            Refit::Builtin(models::ridge_fit(&x_cal, y, *alpha)?)
        }
        (ModelKind::External(ext), _) => Refit::External(ext.clone()),
        (m, p) => return Err(Error::invalid(format!("{} cannot use hyperparameters {p}", m.id()))),
    };
    if let Refit::Builtin(fp) = &refit {
        effective_components = fp.effective_components();
    }

    let (x_test_raw, y_test) = vault.open();
    let x_test = apply_pipeline(&fitted, x_test_raw)?;
    let predictions = match &refit {
        Refit::Builtin(fp) => models::predict(fp, &x_test)?,
        Refit::External(ext) => ext
            .backend
            .fit_predict(task, &x_cal, &cal.y, &x_test, &ext.final_params)?,
    };
    check_prediction(&predictions, x_test.nrows(), y_test)?;
    let test_score = score_prediction(y_test, &predictions)?;
    let params = match model {
        ModelKind::External(ext) => HyperParams::Fixed {
            params: ext.final_params.clone(),
        },
        _ => params.clone(),
    };
    Ok(FinalFit {
        pipeline: pipeline.clone(),
        params,
        test_score,
        predictions,
        y_test: y_test.clone(),
        effective_components,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub model: String,
    pub family: Family,
    pub search: SearchResult,
    pub final_fit: FinalFit,
    pub test_evaluations: usize,
}

impl SearchOutcome {
    pub fn cv_score(&self) -> f64 {
        self.search.best_pipeline().cv_score.expect("best pipeline has a score")
    }
}

/// Search, select, refit, and evaluate once on the vault.
pub fn search_and_finalize(
    model: &ModelKind,
    cal: &CalibrationSet,
    vault: &TestVault,
    space: &SearchSpace,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome> {
    let search = run_search(model, cal, space, cfg, seed)?;
    let best = search.best_pipeline();
    let params = best.best_params.clone().expect("ranked pipelines have parameters");
    let before = vault.reads();
    let final_fit = finalize(model, cal, vault, &best.pipeline, &params)?;
    Ok(SearchOutcome {
        model: model.id().to_string(),
        family: space.family,
        test_evaluations: vault.reads() - before,
        search,
        final_fit,
    })
}
