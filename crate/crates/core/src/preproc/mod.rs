//! Preprocessing steps and pipelines.
//!
//! Every step is fitted on calibration rows only and then applied to any
//! matrix. Pipelines have a compact canonical text form used in logs and
//! reports, e.g. `savgol(15,2,1)>snv>pca(0.25)`; the empty pipeline prints as
//! `none`.

pub mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
pub use ops::ScalerKind;
use ops::{EmscState, OscState, PcaState, ScalerState};

pub const ASLS_DEFAULT: (f64, f64, usize) = (1e5, 0.001, 10);
pub const GAUSSIAN_DEFAULT_SIGMA: f64 = 2.0;
pub const EMSC_DEFAULT_DEGREE: usize = 2;
pub const OSC_DEFAULT_COMPONENTS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSpec {
    None,
    Asls {
        lambda: f64,
        p: f64,
        iters: usize,
    },
    SavGol {
        window: usize,
        polyorder: usize,
        deriv: usize,
    },
    Gaussian {
        sigma: f64,
    },
    Snv,
    Emsc {
        degree: usize,
    },
    Haar,
    AreaNorm,
    Osc {
        n_components: usize,
    },
    Pca {
        ratio: f64,
    },
    StandardScale,
    MinMaxScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StepCategory {
    Baseline,
    Scatter,
    Representation,
    Scaling,
}

impl StepSpec {
    pub fn asls() -> Self {
        let (lambda, p, iters) = ASLS_DEFAULT;
        StepSpec::Asls { lambda, p, iters }
    }

    pub fn savgol(window: usize, polyorder: usize, deriv: usize) -> Self {
        StepSpec::SavGol {
            window,
            polyorder,
            deriv,
        }
    }

    pub fn gaussian() -> Self {
        StepSpec::Gaussian {
            sigma: GAUSSIAN_DEFAULT_SIGMA,
        }
    }

    pub fn emsc() -> Self {
        StepSpec::Emsc {
            degree: EMSC_DEFAULT_DEGREE,
        }
    }

    pub fn osc() -> Self {
        StepSpec::Osc {
            n_components: OSC_DEFAULT_COMPONENTS,
        }
    }

    pub fn category(&self) -> Option<StepCategory> {
        use StepSpec::*;
        match self {
            None => Option::None,
            Asls { .. } | SavGol { .. } | Gaussian { .. } => Some(StepCategory::Baseline),
            Snv | Emsc { .. } => Some(StepCategory::Scatter),
            Haar | AreaNorm | Osc { .. } | Pca { .. } => Some(StepCategory::Representation),
            StandardScale | MinMaxScale => Some(StepCategory::Scaling),
        }
    }

    /// Derivative order if this step differentiates the spectra.
    pub fn derivative_order(&self) -> usize {
        match self {
            StepSpec::SavGol { deriv, .. } => *deriv,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSpec::Asls { lambda, p, iters } => {
                if !(lambda > 0.0) || !(p > 0.0 && p < 1.0) || iters == 0 {
                    return Err(Error::invalid(format!("bad asls parameters ({lambda},{p},{iters})")));
                }
            }
            StepSpec::SavGol {
                window,
                polyorder,
                deriv,
            } => {
                if window % 2 == 0 || window <= polyorder || deriv > polyorder {
                    return Err(Error::invalid(format!(
                        "bad savgol parameters ({window},{polyorder},{deriv}): need odd window > polyorder >= deriv"
                    )));
                }
            }
            StepSpec::Gaussian { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::invalid(format!("bad gaussian sigma {sigma}")));
                }
            }
            StepSpec::Osc { n_components } => {
                if n_components == 0 {
                    return Err(Error::invalid("osc needs n_components >= 1"));
                }
            }
            StepSpec::Pca { ratio } if !(ratio > 0.0 && ratio <= 1.0) => {
                return Err(Error::invalid(format!("pca ratio {ratio} outside (0, 1]")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output feature count for `p` input features (`n_cal` only matters for
    /// PCA).
    pub fn output_features(&self, p: usize, n_cal: usize) -> usize {
        match self {
            StepSpec::Haar => ops::haar_padded_len(p),
            StepSpec::Pca { ratio } => ops::pca_components(*ratio, p, n_cal),
            _ => p,
        }
    }
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepSpec::None => write!(f, "none"),
            StepSpec::Asls { lambda, p, iters } => {
                if (lambda, p, iters) == ASLS_DEFAULT {
                    write!(f, "asls")
                } else {
                    write!(f, "asls({lambda},{p},{iters})")
                }
            }
            StepSpec::SavGol {
                window,
                polyorder,
                deriv,
            } => write!(f, "savgol({window},{polyorder},{deriv})"),
            StepSpec::Gaussian { sigma } => {
                if sigma == GAUSSIAN_DEFAULT_SIGMA {
                    write!(f, "gaussian")
                } else {
                    write!(f, "gaussian({sigma})")
                }
            }
            StepSpec::Snv => write!(f, "snv"),
            StepSpec::Emsc { degree } => {
                if degree == EMSC_DEFAULT_DEGREE {
                    write!(f, "emsc")
                } else {
                    write!(f, "emsc({degree})")
                }
            }
            StepSpec::Haar => write!(f, "haar"),
            StepSpec::AreaNorm => write!(f, "area_norm"),
            StepSpec::Osc { n_components } => {
                if n_components == OSC_DEFAULT_COMPONENTS {
                    write!(f, "osc")
                } else {
                    write!(f, "osc({n_components})")
                }
            }
            StepSpec::Pca { ratio } => write!(f, "pca({ratio})"),
            StepSpec::StandardScale => write!(f, "standard"),
            StepSpec::MinMaxScale => write!(f, "minmax"),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse(format!("not a number: {s:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse(format!("non-finite parameter {s:?}")))
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("not a non-negative integer: {s:?}")))
}

impl FromStr for StepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args): (&str, Vec<&str>) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parse(format!("unbalanced parentheses in {s:?}")))?;
                let inner = &close[open + 1..];
                (&s[..open], inner.split(',').map(str::trim).collect())
            }
            None => (s, Vec::new()),
        };
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("{name} takes {n} parameters, got {}", args.len())))
            }
        };
        let step = match name {
            "none" => {
                arity(0)?;
                StepSpec::None
            }
            "asls" => {
                if args.is_empty() {
                    StepSpec::asls()
                } else {
                    arity(3)?;
                    StepSpec::Asls {
                        lambda: parse_f64(args[0])?,
                        p: parse_f64(args[1])?,
                        iters: parse_usize(args[2])?,
                    }
                }
            }
            "savgol" => {
                arity(3)?;
                StepSpec::SavGol {
                    window: parse_usize(args[0])?,
                    polyorder: parse_usize(args[1])?,
                    deriv: parse_usize(args[2])?,
                }
            }
            "gaussian" => {
                if args.is_empty() {
                    StepSpec::gaussian()
                } else {
                    arity(1)?;
                    StepSpec::Gaussian {
                        sigma: parse_f64(args[0])?,
                    }
                }
            }
            "snv" => {
                arity(0)?;
                StepSpec::Snv
            }
            "emsc" => {
                if args.is_empty() {
                    StepSpec::emsc()
                } else {
                    arity(1)?;
                    StepSpec::Emsc {
                        degree: parse_usize(args[0])?,
                    }
                }
            }
            "haar" => {
                arity(0)?;
                StepSpec::Haar
            }
            "area_norm" => {
                arity(0)?;
                StepSpec::AreaNorm
            }
            "osc" => {
                if args.is_empty() {
                    StepSpec::osc()
                } else {
                    arity(1)?;
                    StepSpec::Osc {
                        n_components: parse_usize(args[0])?,
                    }
                }
            }
            "pca" => {
                arity(1)?;
                StepSpec::Pca {
                    ratio: parse_f64(args[0])?,
                }
            }
            "standard" => {
                arity(0)?;
                StepSpec::StandardScale
            }
            "minmax" => {
                arity(0)?;
                StepSpec::MinMaxScale
            }
            other => return Err(Error::Parse(format!("unknown step {other:?}"))),
        };
        step.validate()?;
        Ok(step)
    }
}

/// Ordered list of preprocessing steps. `None` steps are dropped on
/// construction so that equal pipelines have equal text forms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineSpec {
    steps: Vec<StepSpec>,
}

impl PipelineSpec {
    pub fn new(steps: impl IntoIterator<Item = StepSpec>) -> Result<Self> {
        let steps: Vec<StepSpec> = steps.into_iter().filter(|s| *s != StepSpec::None).collect();
        let mut seen: Vec<StepCategory> = Vec::new();
        for s in &steps {
            s.validate()?;
            let cat = s.category().expect("none steps filtered");
            if seen.contains(&cat) {
                return Err(Error::invalid(format!("pipeline has more than one {cat:?} step")));
            }
            seen.push(cat);
        }
        Ok(Self { steps })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[StepSpec] {
        &self.steps
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_derivative(&self) -> usize {
        self.steps.iter().map(StepSpec::derivative_order).max().unwrap_or(0)
    }

    pub fn then(&self, extra: impl IntoIterator<Item = StepSpec>) -> Result<Self> {
        Self::new(self.steps.iter().copied().chain(extra))
    }

    pub fn uses_target(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, StepSpec::Osc { .. }))
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return write!(f, "none");
        }
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                write!(f, ">")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for PipelineSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Parse("empty pipeline text".into()));
        }
        let steps = s.split('>').map(StepSpec::from_str).collect::<Result<Vec<_>>>()?;
        PipelineSpec::new(steps)
    }
}

impl Serialize for PipelineSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PipelineSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepState {
    Stateless,
    Emsc(EmscState),
    Osc(OscState),
    Pca(PcaState),
    Scaler(ScalerState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedStep {
    pub spec: StepSpec,
    pub state: StepState,
}

impl FittedStep {
    /// Fits the step on calibration rows and returns it together with the
    /// transformed calibration matrix.
    pub fn fit_transform(spec: StepSpec, x_cal: &Matrix, y_cal: &[f64]) -> Result<(Self, Matrix)> {
        spec.validate()?;
        let (state, out) = match spec {
            StepSpec::Emsc { degree } => {
                let st = ops::emsc_fit(x_cal, degree)?;
                let out = ops::emsc(x_cal, &st.reference, st.degree)?;
                (StepState::Emsc(st), out)
            }
            StepSpec::Osc { n_components } => {
                let fit = ops::osc_fit(x_cal, y_cal, n_components)?;
                (StepState::Osc(fit.state), fit.corrected)
            }
            StepSpec::Pca { ratio } => {
                let st = ops::pca_fit(x_cal, ratio)?;
                let out = ops::pca_apply(&st, x_cal)?;
                (StepState::Pca(st), out)
            }
            StepSpec::StandardScale | StepSpec::MinMaxScale => {
                let kind = if spec == StepSpec::StandardScale {
                    ScalerKind::Standard
                } else {
                    ScalerKind::MinMax
                };
                let st = ops::fit_scaler(x_cal, kind);
                let out = ops::apply_scaler(&st, x_cal)?;
                (StepState::Scaler(st), out)
            }
            _ => (StepState::Stateless, apply_stateless(spec, x_cal)?),
        };
        Ok((FittedStep { spec, state }, out))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match &self.state {
            StepState::Stateless => apply_stateless(self.spec, x),
            StepState::Emsc(st) => ops::emsc(x, &st.reference, st.degree),
            StepState::Osc(st) => ops::osc_apply(st, x),
            StepState::Pca(st) => ops::pca_apply(st, x),
            StepState::Scaler(st) => ops::apply_scaler(st, x),
        }
    }
}

fn apply_stateless(spec: StepSpec, x: &Matrix) -> Result<Matrix> {
    let out = match spec {
        StepSpec::None => x.clone(),
        StepSpec::Asls { lambda, p, iters } => ops::asls(x, lambda, p, iters)?,
        StepSpec::SavGol {
            window,
            polyorder,
            deriv,
        } => ops::savgol(x, window, polyorder, deriv)?,
        StepSpec::Gaussian { sigma } => ops::gaussian_smooth(x, sigma)?,
        StepSpec::Snv => ops::snv_matrix(x)?,
        StepSpec::Haar => ops::haar_transform(x)?,
        StepSpec::AreaNorm => ops::area_norm_matrix(x)?,
        other => return Err(Error::invalid(format!("step {other} requires fitting"))),
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::degenerate(format!("{spec} produced non-finite values")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub spec: PipelineSpec,
    pub steps: Vec<FittedStep>,
    pub input_features: usize,
    pub output_features: usize,
}

fn wrap_step(index: usize, spec: StepSpec) -> impl FnOnce(Error) -> Error {
    move |e| Error::Step {
        index,
        step: spec.to_string(),
        source: Box::new(e),
    }
}

/// Fits every step in order on the calibration rows; returns the fitted
/// pipeline and the transformed calibration matrix.
pub fn fit_pipeline(spec: &PipelineSpec, x_cal: &Matrix, y_cal: &[f64]) -> Result<(FittedPipeline, Matrix)> {
    let mut current = x_cal.clone();
    let mut steps = Vec::with_capacity(spec.steps().len());
    for (i, &s) in spec.steps().iter().enumerate() {
        let (fitted, out) = FittedStep::fit_transform(s, &current, y_cal).map_err(wrap_step(i, s))?;
        steps.push(fitted);
        current = out;
    }
    Ok((
        FittedPipeline {
            spec: spec.clone(),
            steps,
            input_features: x_cal.ncols(),
            output_features: current.ncols(),
        },
        current,
    ))
}

pub fn apply_pipeline(fp: &FittedPipeline, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != fp.input_features {
        return Err(Error::DimensionMismatch {
            expected: fp.input_features,
            got: x.ncols(),
        });
    }
    let mut current = x.clone();
    for (i, step) in fp.steps.iter().enumerate() {
        current = step.apply(&current).map_err(wrap_step(i, step.spec))?;
    }
    Ok(current)
}
