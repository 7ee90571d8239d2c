use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::{PipelineSpec, StepSpec};

/// Named preprocessing search families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// PLS / PLS-DA / Ridge
    Linear,
    /// tree and in-context models
    Tabular,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Tabular => "tabular",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "tabular" => Ok(Family::Tabular),
            other => Err(Error::Parse(format!(
                "unknown search family {other:?} (expected linear or tabular)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub family: Family,
    pub phase1_baseline: Vec<StepSpec>,
    pub phase1_scatter: Vec<StepSpec>,
    pub phase2_repr: Vec<StepSpec>,
    /// a single `None` entry for families without a scaling axis
    pub phase2_scale: Vec<StepSpec>,
    pub top_k: usize,
}

fn tabular_baselines() -> Vec<StepSpec> {
    vec![
        StepSpec::None,
        StepSpec::asls(),
        StepSpec::savgol(11, 2, 1),
        StepSpec::savgol(15, 2, 1),
        StepSpec::savgol(21, 2, 1),
        StepSpec::savgol(15, 3, 2),
        StepSpec::savgol(21, 3, 2),
    ]
}

impl SearchSpace {
    pub fn tabular() -> Self {
        SearchSpace {
            family: Family::Tabular,
            phase1_baseline: tabular_baselines(),
            phase1_scatter: vec![StepSpec::None, StepSpec::Snv, StepSpec::emsc()],
            phase2_repr: vec![StepSpec::None, StepSpec::Pca { ratio: 0.25 }, StepSpec::osc()],
            phase2_scale: vec![StepSpec::None],
            top_k: 3,
        }
    }

    pub fn linear() -> Self {
        let mut baselines = tabular_baselines();
        baselines.push(StepSpec::gaussian());
        SearchSpace {
            family: Family::Linear,
            phase1_baseline: baselines,
            phase1_scatter: vec![StepSpec::None, StepSpec::Snv, StepSpec::emsc()],
            phase2_repr: vec![StepSpec::None, StepSpec::Haar, StepSpec::AreaNorm, StepSpec::osc()],
            phase2_scale: vec![StepSpec::None, StepSpec::StandardScale, StepSpec::MinMaxScale],
            top_k: 3,
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Linear => Self::linear(),
            Family::Tabular => Self::tabular(),
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn phase1_len(&self) -> usize {
        self.phase1_baseline.len() * self.phase1_scatter.len()
    }

    pub fn phase2_templates(&self) -> usize {
        self.phase2_repr.len() * self.phase2_scale.len()
    }

    /// Pipelines counted by the search: Phase 1 plus `top_k` expansions.
    pub fn total_pipelines(&self) -> usize {
        self.phase1_len() + self.top_k * self.phase2_templates()
    }

    /// Nominal (pipeline, hyperparameter configuration, fold) fits.
    pub fn nominal_fits(&self, trials_per_pipeline: usize, folds: usize) -> usize {
        self.total_pipelines() * trials_per_pipeline * folds
    }

    /// Human-readable enumeration with counts.
    pub fn describe(&self) -> String {
        let mut out = format!("family: {}\n", self.family);
        out.push_str(&format!(
            "phase1: {} baseline × {} scatter = {}\n",
            self.phase1_baseline.len(),
            self.phase1_scatter.len(),
            self.phase1_len()
        ));
        for p in enumerate_phase1(self) {
            out.push_str(&format!("  {p}\n"));
        }
        let join = |steps: &[StepSpec]| steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        if self.phase2_scale.len() > 1 {
            out.push_str(&format!(
                "phase2: top-{} × {} × {}\n",
                self.top_k,
                self.phase2_repr.len(),
                self.phase2_scale.len()
            ));
            out.push_str(&format!("  representation: {}\n", join(&self.phase2_repr)));
            out.push_str(&format!("  scaling: {}\n", join(&self.phase2_scale)));
        } else {
            out.push_str(&format!("phase2: top-{} × {}\n", self.top_k, self.phase2_repr.len()));
            out.push_str(&format!("  representation: {}\n", join(&self.phase2_repr)));
        }
        out.push_str(&format!("total pipelines: {}\n", self.total_pipelines()));
        out
    }
}

/// Baseline × scatter product, baseline-major, `none` first.
pub fn enumerate_phase1(space: &SearchSpace) -> Vec<PipelineSpec> {
    let mut out = Vec::with_capacity(space.phase1_len());
    for &b in &space.phase1_baseline {
        for &s in &space.phase1_scatter {
            out.push(PipelineSpec::new([b, s]).expect("phase-1 steps occupy distinct categories"));
        }
    }
    out
}

/// Extends each retained pipeline with every representation × scaling
/// template. The `none × none` expansion reproduces the retained pipeline.
pub fn expand_phase2(top: &[PipelineSpec], space: &SearchSpace) -> Result<Vec<PipelineSpec>> {
    if top.is_empty() {
        return Err(Error::Search("phase 2 needs at least one retained pipeline".into()));
    }
    if top.len() > space.top_k {
        return Err(Error::Search(format!(
            "{} retained pipelines exceed top_k = {}",
            top.len(),
            space.top_k
        )));
    }
    let mut out = Vec::with_capacity(top.len() * space.phase2_templates());
    for base in top {
        for &r in &space.phase2_repr {
            for &s in &space.phase2_scale {
                out.push(base.then([r, s])?);
            }
        }
    }
    Ok(out)
}
