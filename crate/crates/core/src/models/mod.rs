//! Built-in calibrators behind a common fit/predict contract.

pub mod pls;
pub mod ridge;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Matrix, Target, Task};
use crate::error::{Error, Result};
pub use pls::PlsModel;
pub use ridge::RidgeModel;

pub const MAX_PLS_COMPONENTS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    Pls {
        n_components: usize,
    },
    PlsDa {
        n_components: usize,
    },
    Ridge {
        alpha: f64,
    },
    External {
        model_id: String,
        fixed_params: serde_json::Value,
    },
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PredictorSpec::Pls { n_components } | PredictorSpec::PlsDa { n_components } => {
                if !(1..=MAX_PLS_COMPONENTS).contains(n_components) {
                    return Err(Error::invalid(format!(
                        "PLS components {n_components} outside [1, {MAX_PLS_COMPONENTS}]"
                    )));
                }
            }
            PredictorSpec::Ridge { alpha } => {
                if !(*alpha > 0.0) {
                    return Err(Error::invalid(format!("ridge alpha must be > 0, got {alpha}")));
                }
            }
            PredictorSpec::External { .. } => {}
        }
        Ok(())
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Pls { n_components } => write!(f, "pls(n_components={n_components})"),
            PredictorSpec::PlsDa { n_components } => write!(f, "plsda(n_components={n_components})"),
            PredictorSpec::Ridge { alpha } => write!(f, "ridge(alpha={alpha})"),
            PredictorSpec::External { model_id, fixed_params } => write!(f, "{model_id}({fixed_params})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Values(Vec<f64>),
    Labels(Vec<usize>),
}

impl Prediction {
    pub fn len(&self) -> usize {
        match self {
            Prediction::Values(v) => v.len(),
            Prediction::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedPredictor {
    Pls {
        model: PlsModel,
        n_components: usize,
    },
    PlsDa {
        model: PlsModel,
        n_components: usize,
        n_classes: usize,
    },
    Ridge(RidgeModel),
}

impl FittedPredictor {
    pub fn n_features(&self) -> usize {
        match self {
            FittedPredictor::Pls { model, .. } | FittedPredictor::PlsDa { model, .. } => model.x_mean.len(),
            FittedPredictor::Ridge(m) => m.coef.len(),
        }
    }

    /// Components actually used (smaller than requested after truncation).
    pub fn effective_components(&self) -> Option<usize> {
        match self {
            FittedPredictor::Pls { n_components, .. } | FittedPredictor::PlsDa { n_components, .. } => {
                Some(*n_components)
            }
            FittedPredictor::Ridge(_) => None,
        }
    }

    pub fn truncated(&self) -> bool {
        match self {
            FittedPredictor::Pls { model, .. } | FittedPredictor::PlsDa { model, .. } => model.truncated_from.is_some(),
            FittedPredictor::Ridge(_) => false,
        }
    }
}

pub fn pls_fit(x: &Matrix, y: &[f64], n_components: usize) -> Result<FittedPredictor> {
    let model = pls::pls1(x, y, n_components)?;
    let n_components = model.n_components();
    Ok(FittedPredictor::Pls { model, n_components })
}

pub fn plsda_fit(x: &Matrix, labels: &[usize], n_classes: usize, n_components: usize) -> Result<FittedPredictor> {
    let present = {
        let mut seen = vec![false; n_classes];
        for &l in labels {
            if l >= n_classes {
                return Err(Error::invalid(format!("label {l} outside [0, {n_classes})")));
            }
            seen[l] = true;
        }
        seen.iter().filter(|s| **s).count()
    };
    if n_classes < 2 || present < 2 {
        return Err(Error::degenerate("PLS-DA needs at least two classes in calibration"));
    }
    let y = pls::one_hot(labels, n_classes);
    let model = pls::nipals(x, &y, n_components)?;
    let n_components = model.n_components();
    Ok(FittedPredictor::PlsDa {
        model,
        n_components,
        n_classes,
    })
}

pub fn ridge_fit(x: &Matrix, y: &[f64], alpha: f64) -> Result<FittedPredictor> {
    Ok(FittedPredictor::Ridge(ridge::ridge(x, y, alpha, true)?))
}

/// Fits a built-in predictor for the given target. External specs are
/// served by the bridge and rejected here.
pub fn fit(spec: &PredictorSpec, x: &Matrix, target: &Target) -> Result<FittedPredictor> {
    spec.validate()?;
    match (spec, target) {
        (PredictorSpec::Pls { n_components }, Target::Regression(y)) => pls_fit(x, y, *n_components),
        (PredictorSpec::Ridge { alpha }, Target::Regression(y)) => ridge_fit(x, y, *alpha),
        (PredictorSpec::PlsDa { n_components }, Target::Classification { ids, label_names }) => {
            plsda_fit(x, ids, label_names.len(), *n_components)
        }
        (PredictorSpec::External { model_id, .. }, _) => Err(Error::invalid(format!(
            "{model_id} is an external model; use the bridge"
        ))),
        (spec, t) => Err(Error::invalid(format!(
            "{spec} does not support {} targets",
            t.task().as_str()
        ))),
    }
}

/// Class scores (n × C) of a PLS-DA model.
pub fn plsda_scores(fp: &FittedPredictor, x: &Matrix) -> Result<Matrix> {
    match fp {
        FittedPredictor::PlsDa {
            model, n_components, ..
        } => model.predict_with(x, *n_components),
        _ => Err(Error::invalid("not a PLS-DA model")),
    }
}

pub fn predict(fp: &FittedPredictor, x: &Matrix) -> Result<Prediction> {
    if x.ncols() != fp.n_features() {
        return Err(Error::DimensionMismatch {
            expected: fp.n_features(),
            got: x.ncols(),
        });
    }
    let out = match fp {
        FittedPredictor::Pls { model, n_components } => Prediction::Values(
            model
                .predict_with(x, *n_components)?
                .column(0)
                .iter()
                .copied()
                .collect(),
        ),
        FittedPredictor::PlsDa { .. } => Prediction::Labels(pls::argmax_rows(&plsda_scores(fp, x)?)),
        FittedPredictor::Ridge(m) => Prediction::Values(m.predict(x)?),
    };
    if let Prediction::Values(v) = &out {
        if v.iter().any(|p| !p.is_finite()) {
            return Err(Error::degenerate("non-finite prediction"));
        }
    }
    Ok(out)
}

pub fn task_of(spec: &PredictorSpec) -> Option<Task> {
    match spec {
        PredictorSpec::Pls { .. } | PredictorSpec::Ridge { .. } => Some(Task::Regression),
        PredictorSpec::PlsDa { .. } => Some(Task::Classification),
        PredictorSpec::External { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_hand_solved_fixture() {
        let x = Matrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let m = ridge::ridge(&x, &[1.0, 2.0], 1.0, false).unwrap();
        assert!((m.coef[0] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_typed() {
        let x = Matrix::from_fn(6, 3, |r, c| (r * 3 + c) as f64 + (r as f64).sin());
        let y: Vec<f64> = (0..6).map(|r| r as f64).collect();
        let fp = ridge_fit(&x, &y, 1.0).unwrap();
        let err = predict(&fp, &Matrix::zeros(2, 4)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 4 }));
    }

    #[test]
    fn pls_components_validated() {
        assert!(PredictorSpec::Pls { n_components: 0 }.validate().is_err());
        assert!(PredictorSpec::Pls { n_components: 31 }.validate().is_err());
        assert!(PredictorSpec::Ridge { alpha: 0.0 }.validate().is_err());
    }

    #[test]
    fn plsda_single_class_rejected() {
        let x = Matrix::from_fn(4, 2, |r, c| (r + c) as f64);
        assert!(plsda_fit(&x, &[0, 0, 0, 0], 2, 1).is_err());
    }

    #[test]
    fn rank_one_exact_fit_truncates() {
        let x = Matrix::from_fn(6, 4, |r, c| (r as f64 + 1.0) * (c as f64 + 0.5));
        let y: Vec<f64> = (0..6).map(|r| 2.0 * (r as f64 + 1.0)).collect();
        let fp = pls_fit(&x, &y, 3).unwrap();
        assert!(fp.truncated());
        let Prediction::Values(p) = predict(&fp, &x).unwrap() else {
            panic!()
        };
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
