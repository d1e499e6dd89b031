//! Ensemble and Monte Carlo dropout predictive distributions, moment-matched
//! per step and split into aleatoric and epistemic parts.
//!
//! For member means `μᵢ` and prediction covariances `Σᵢ`:
//!
//! ```text
//! μ*         = M⁻¹ Σ μᵢ
//! aleatoric  = M⁻¹ Σ Σᵢ
//! epistemic  = M⁻¹ Σ (μᵢ − μ*)(μᵢ − μ*)ᵀ
//! total      = aleatoric + epistemic
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Point2};
use crate::net::{draw_mask, forward, DropoutMask, ForecastOutput, NetConfig, NetParams};
use crate::sampling::stream_rng;
use crate::scalar::Scalar;

/// Default number of stochastic passes for MC dropout.
pub const DEFAULT_DROPOUT_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<T> {
    pub cfg: NetConfig,
    pub members: Vec<NetParams<T>>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(cfg: NetConfig, members: Vec<NetParams<T>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        for (i, m) in members.iter().enumerate() {
            m.check_shape(&cfg).map_err(|e| e.at_member(i))?;
        }
        Ok(Self { cfg, members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary<T> {
    pub mean: Point2<T>,
    pub total: CovMatrix2<T>,
    pub aleatoric: CovMatrix2<T>,
    pub epistemic: CovMatrix2<T>,
    /// Member mean of the sensing-covariance head.
    pub sensing: CovMatrix2<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary<T> {
    pub steps: Vec<StepSummary<T>>,
    /// Per-member (or per-sample) forecasts the summary was built from.
    pub members: Vec<ForecastOutput<T>>,
}

impl<T: Scalar> PredictiveSummary<T> {
    pub fn means(&self) -> Vec<Point2<T>> {
        self.steps.iter().map(|s| s.mean).collect()
    }
}

/// Moment-matches a set of forecasts step by step.
///
/// The mean is accumulated as an offset from the first member, so identical
/// members give exactly zero epistemic covariance.
pub fn summarize<T: Scalar>(members: Vec<ForecastOutput<T>>) -> Result<PredictiveSummary<T>> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("no forecasts to summarize".into()))?;
    let k = first.steps.len();
    if let Some(bad) = members.iter().position(|m| m.steps.len() != k) {
        return Err(Error::InvalidArgument(format!("member {bad} has a different horizon")));
    }
    let inv_m = T::one() / T::lit(members.len() as f64);
    let steps = (0..k)
        .map(|s| {
            let anchor = first.steps[s].mean;
            let mut shift = [T::zero(); 2];
            let mut aleatoric = CovMatrix2::zero();
            let mut sensing = CovMatrix2::zero();
            for m in &members {
                let st = &m.steps[s];
                shift[0] += st.mean[0] - anchor[0];
                shift[1] += st.mean[1] - anchor[1];
                aleatoric = aleatoric + st.pred_cov;
                sensing = sensing + st.sens_cov;
            }
            let shift = [shift[0] * inv_m, shift[1] * inv_m];
            let mean = [anchor[0] + shift[0], anchor[1] + shift[1]];
            let mut epistemic = CovMatrix2::zero();
            for m in &members {
                let d = [
                    m.steps[s].mean[0] - anchor[0] - shift[0],
                    m.steps[s].mean[1] - anchor[1] - shift[1],
                ];
                epistemic = epistemic + CovMatrix2::outer(d);
            }
            let aleatoric = aleatoric * inv_m;
            let epistemic = epistemic * inv_m;
            StepSummary {
                mean,
                total: aleatoric + epistemic,
                aleatoric,
                epistemic,
                sensing: sensing * inv_m,
            }
        })
        .collect();
    Ok(PredictiveSummary { steps, members })
}

/// Runs every member on `input` and summarizes.
pub fn ensemble_predict<T: Scalar>(ens: &Ensemble<T>, input: &[T]) -> Result<PredictiveSummary<T>> {
    if ens.members.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let outs = ens
        .members
        .par_iter()
        .enumerate()
        .map(|(i, p)| forward(p, &ens.cfg, input, None).map_err(|e| e.at_member(i)))
        .collect::<Result<Vec<_>>>()?;
    summarize(outs)
}

/// `samples` stochastic passes with masks drawn from stream 0 under
/// `seed`, summarized as if each pass were an ensemble member.
pub fn mc_dropout_predict<T: Scalar>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    input: &[T],
    samples: usize,
    seed: u64,
) -> Result<PredictiveSummary<T>> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "MC dropout needs at least 2 samples, got {samples}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let masks: Vec<Option<DropoutMask<T>>> = (0..samples).map(|_| draw_mask(cfg, &mut rng)).collect();
    let outs = masks
        .par_iter()
        .enumerate()
        .map(|(i, m)| forward(params, cfg, input, m.as_ref()).map_err(|e| e.at_member(i)))
        .collect::<Result<Vec<_>>>()?;
    summarize(outs)
}
