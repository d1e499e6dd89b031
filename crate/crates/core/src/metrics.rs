//! Displacement errors, coverage probability and interval width of
//! covariance-ellipse forecasts.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Ellipse, Point2};
use crate::scalar::Scalar;
use crate::uncertainty::{in_minkowski_sum, outer_shape};
use crate::uq::PredictiveSummary;

pub const DEFAULT_SIGMA_SCALE: f64 = 1.0;

/// Which region counts as the forecast's interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMode {
    /// The prediction-covariance ellipse alone.
    PredictionOnly,
    /// The exact Minkowski sum of sensing and prediction ellipses.
    TotalExact,
    /// The outer ellipse of that sum.
    TotalOuter,
}

impl UncertaintyMode {
    pub const ALL: [UncertaintyMode; 3] = [Self::PredictionOnly, Self::TotalExact, Self::TotalOuter];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PredictionOnly => "prediction-only",
            Self::TotalExact => "total-exact",
            Self::TotalOuter => "total-outer",
        }
    }
}

impl fmt::Display for UncertaintyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for UncertaintyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown uncertainty mode `{s}`")))
    }
}

/// Per-step means and covariances of one forecast sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast<T> {
    pub means: Vec<Point2<T>>,
    pub prediction: Vec<CovMatrix2<T>>,
    pub sensing: Vec<CovMatrix2<T>>,
}

impl<T: Scalar> Forecast<T> {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.prediction.len() != self.len() || self.sensing.len() != self.len() {
            return Err(Error::InvalidArgument("forecast field lengths differ".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> From<&PredictiveSummary<T>> for Forecast<T> {
    fn from(s: &PredictiveSummary<T>) -> Self {
        Self {
            means: s.steps.iter().map(|st| st.mean).collect(),
            prediction: s.steps.iter().map(|st| st.total).collect(),
            sensing: s.steps.iter().map(|st| st.sensing).collect(),
        }
    }
}

fn check_pairs<T>(a: &[Vec<Point2<T>>], b: &[Vec<Point2<T>>]) -> Result<usize> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions against {} ground-truth sequences",
            a.len(),
            b.len()
        )));
    }
    let mut steps = 0;
    for (i, (p, t)) in a.iter().zip(b).enumerate() {
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "sequence {i}: {} predicted steps against {} ground-truth steps",
                p.len(),
                t.len()
            )));
        }
        steps += p.len();
    }
    Ok(steps)
}

fn dist<T: Scalar>(a: Point2<T>, b: Point2<T>) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean error over all steps of all sequences.
pub fn ade<T: Scalar>(pred: &[Vec<Point2<T>>], truth: &[Vec<Point2<T>>]) -> Result<T> {
    let steps = check_pairs(pred, truth)?;
    let sum: T = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| dist(a, b)))
        .sum();
    Ok(sum / T::lit(steps as f64))
}

/// Mean Euclidean error at the last step.
pub fn fde<T: Scalar>(pred: &[Vec<Point2<T>>], truth: &[Vec<Point2<T>>]) -> Result<T> {
    check_pairs(pred, truth)?;
    let sum: T = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| dist(p[p.len() - 1], t[t.len() - 1]))
        .sum();
    Ok(sum / T::lit(pred.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub picp: f64,
    pub covered: usize,
    pub total: usize,
    /// Steps whose region was degenerate; counted as not covered.
    pub degenerate: usize,
}

/// Whether `truth` lies in the `mode` region of one step, `None` when the
/// region is degenerate.
fn step_covered<T: Scalar>(
    mean: Point2<T>,
    pred: CovMatrix2<T>,
    sens: CovMatrix2<T>,
    truth: Point2<T>,
    scale: T,
    mode: UncertaintyMode,
) -> Result<Option<bool>> {
    let r = match mode {
        UncertaintyMode::PredictionOnly => Ellipse::new(mean, pred, scale).contains(truth),
        UncertaintyMode::TotalExact => in_minkowski_sum(
            &Ellipse::centered(sens, scale),
            &Ellipse::centered(pred, scale),
            mean,
            truth,
        ),
        UncertaintyMode::TotalOuter => {
            let outer = outer_shape(sens * (scale * scale), pred * (scale * scale));
            Ellipse::new(mean, outer, T::one()).contains(truth)
        }
    };
    match r {
        Ok(c) => Ok(Some(c)),
        Err(Error::DegenerateEllipse { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Fraction of `(sequence, step)` ground-truth positions inside the
/// `sigma_scale` region chosen by `mode`.
pub fn picp<T: Scalar>(
    forecasts: &[Forecast<T>],
    truth: &[Vec<Point2<T>>],
    sigma_scale: f64,
    mode: UncertaintyMode,
) -> Result<Coverage> {
    let means: Vec<Vec<Point2<T>>> = forecasts.iter().map(|f| f.means.clone()).collect();
    let total = check_pairs(&means, truth)?;
    if !(sigma_scale > 0.0) {
        return Err(Error::InvalidArgument("sigma scale must be positive".into()));
    }
    let scale = T::lit(sigma_scale);
    let per_seq: Vec<(usize, usize)> = forecasts
        .par_iter()
        .zip(truth)
        .map(|(f, t)| {
            f.check()?;
            let (mut cov, mut deg) = (0, 0);
            for k in 0..f.len() {
                match step_covered(f.means[k], f.prediction[k], f.sensing[k], t[k], scale, mode)? {
                    Some(true) => cov += 1,
                    Some(false) => {}
                    None => deg += 1,
                }
            }
            Ok((cov, deg))
        })
        .collect::<Result<_>>()?;
    let covered = per_seq.iter().map(|c| c.0).sum();
    let degenerate = per_seq.iter().map(|c| c.1).sum();
    Ok(Coverage {
        picp: covered as f64 / total as f64,
        covered,
        total,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalWidth {
    /// Mean full length of the major axis.
    pub mpiw_x: f64,
    /// Mean full length of the minor axis.
    pub mpiw_y: f64,
    /// `√(mpiw_x²/2 + mpiw_y²/2)`.
    pub mpiw: f64,
}

/// Mean ellipse axis widths. The total modes use the outer ellipse.
pub fn mpiw<T: Scalar>(forecasts: &[Forecast<T>], sigma_scale: f64, mode: UncertaintyMode) -> Result<IntervalWidth> {
    if forecasts.is_empty() {
        return Err(Error::InvalidArgument("no forecasts".into()));
    }
    let s2 = T::lit(sigma_scale * sigma_scale);
    let (mut wx, mut wy, mut n) = (0.0, 0.0, 0usize);
    for f in forecasts {
        f.check()?;
        for k in 0..f.len() {
            let shape = match mode {
                UncertaintyMode::PredictionOnly => f.prediction[k] * s2,
                _ => outer_shape(f.sensing[k] * s2, f.prediction[k] * s2),
            };
            let e = shape.eigen();
            wx += 2.0 * e.major.max(T::zero()).sqrt().as_f64();
            wy += 2.0 * e.minor.max(T::zero()).sqrt().as_f64();
            n += 1;
        }
    }
    let (x, y) = (wx / n as f64, wy / n as f64);
    Ok(IntervalWidth {
        mpiw_x: x,
        mpiw_y: y,
        mpiw: (x * x / 2.0 + y * y / 2.0).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    pub picp: f64,
    pub mpiw_x: f64,
    pub mpiw_y: f64,
    pub mpiw: f64,
    pub n_sequences: usize,
    pub sigma_scale: f64,
    pub uncertainty_mode: UncertaintyMode,
    pub degenerate_steps: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "ade,fde,picp,mpiw_x,mpiw_y,mpiw,n_sequences,sigma_scale,uncertainty_mode,degenerate_steps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.ade,
            self.fde,
            self.picp,
            self.mpiw_x,
            self.mpiw_y,
            self.mpiw,
            self.n_sequences,
            self.sigma_scale,
            self.uncertainty_mode,
            self.degenerate_steps
        )
    }
}

/// All metrics for one set of forecasts at one scale and mode.
pub fn evaluate<T: Scalar>(
    forecasts: &[Forecast<T>],
    truth: &[Vec<Point2<T>>],
    sigma_scale: f64,
    mode: UncertaintyMode,
) -> Result<MetricReport> {
    let means: Vec<Vec<Point2<T>>> = forecasts.iter().map(|f| f.means.clone()).collect();
    let cov = picp(forecasts, truth, sigma_scale, mode)?;
    let w = mpiw(forecasts, sigma_scale, mode)?;
    Ok(MetricReport {
        ade: ade(&means, truth)?.as_f64(),
        fde: fde(&means, truth)?.as_f64(),
        picp: cov.picp,
        mpiw_x: w.mpiw_x,
        mpiw_y: w.mpiw_y,
        mpiw: w.mpiw,
        n_sequences: forecasts.len(),
        sigma_scale,
        uncertainty_mode: mode,
        degenerate_steps: cov.degenerate,
    })
}
