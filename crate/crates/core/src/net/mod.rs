//! Feedforward encoder-decoder forecaster with mean, sensing-covariance and
//! prediction-covariance heads, trained by backpropagation and Adam.
//!
//! Per future step the output layer emits eight values
//! `[mx, my, sa, sb, sc, pa, pb, pc]`. Each covariance head is a Cholesky
//! factor `L = [[softplus(a), 0], [b, softplus(c)]]` and the covariance is
//! `L·Lᵀ`, so both heads are PSD for any parameters.

mod adam;
mod checkpoint;
mod forward;
mod gradcheck;
mod loss;
mod train;

use serde::{Deserialize, Serialize};

use crate::data::SequencePair;
use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Point2};
use crate::sampling::stream_rng;
use crate::scalar::Scalar;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{draw_mask, forward, forward_raw, DropoutMask};
pub use gradcheck::{grad_check, GradCheckReport, GradObjective, FD_STEP, REL_ERROR_FLOOR};
pub use loss::{beta_nll_loss, beta_nll_loss_frozen, cov_mse_loss, BetaNll, CovMse};
pub use train::{
    batch_objective, train, train_examples, BatchObjective, EpochLoss, Objective, TrainConfig, TrainOutcome,
};

/// Raw outputs per future step.
pub const OUTPUTS_PER_STEP: usize = 8;
/// Input channels per observed step: position and covariance entries.
pub const INPUTS_PER_STEP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub past_len: usize,
    pub future_len: usize,
    pub encoder: Vec<usize>,
    pub latent: usize,
    pub decoder: Vec<usize>,
    /// Exponent of the stop-gradient variance weight, in `[0, 1]`.
    pub beta: f64,
    /// Weight of the sensing-covariance regression term.
    pub loss_weight_mse: f64,
    /// Dropout probability on hidden activations, in `[0, 1)`.
    pub dropout_p: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            past_len: 8,
            future_len: 12,
            encoder: vec![128, 64],
            latent: 32,
            decoder: vec![64, 128],
            beta: 0.5,
            loss_weight_mse: 1.0,
            dropout_p: 0.0,
        }
    }
}

impl NetConfig {
    /// A small network for finite-difference checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            encoder: vec![8],
            latent: 8,
            decoder: vec![8],
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.past_len * INPUTS_PER_STEP
    }

    pub fn output_dim(&self) -> usize {
        self.future_len * OUTPUTS_PER_STEP
    }

    /// Widths of every activation vector, input through output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.encoder);
        w.push(self.latent);
        w.extend(&self.decoder);
        w.push(self.output_dim());
        w
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let l = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += l.len();
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.past_len == 0 || self.future_len == 0 {
            return Err(Error::InvalidArgument("empty horizon".into()));
        }
        if self.widths().contains(&0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.loss_weight_mse >= 0.0) {
            return Err(Error::InvalidArgument("negative loss weight".into()));
        }
        Ok(())
    }
}

/// One dense layer inside the flat parameter vector: the `outputs × inputs`
/// row-major weight matrix starting at `offset`, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.outputs * self.inputs
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.outputs * self.inputs;
        start..start + self.outputs
    }
}

/// Flat parameters plus the seed that initialized them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams<T> {
    pub values: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> NetParams<T> {
    /// Weights uniform on `±1/√fan_in`, biases zero.
    pub fn init(cfg: &NetConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let mut values = vec![T::zero(); cfg.param_count()];
        for layer in cfg.layers() {
            let bound = T::one() / T::lit(layer.inputs as f64).sqrt();
            for w in &mut values[layer.weights()] {
                *w = (T::lit(2.0) * T::unit_uniform(&mut rng) - T::one()) * bound;
            }
        }
        Self { values, seed }
    }

    pub fn zeros(cfg: &NetConfig) -> Self {
        Self {
            values: vec![T::zero(); cfg.param_count()],
            seed: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, cfg: &NetConfig) -> Result<()> {
        if self.values.len() != cfg.param_count() {
            return Err(Error::ArtifactMismatch(format!(
                "{} parameters for a configuration that needs {}",
                self.values.len(),
                cfg.param_count()
            )));
        }
        Ok(())
    }
}

/// Forecast for one future step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepForecast<T> {
    pub mean: Point2<T>,
    pub sens_cov: CovMatrix2<T>,
    pub pred_cov: CovMatrix2<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastOutput<T> {
    pub steps: Vec<StepForecast<T>>,
}

impl<T: Scalar> ForecastOutput<T> {
    pub fn means(&self) -> Vec<Point2<T>> {
        self.steps.iter().map(|s| s.mean).collect()
    }
}

/// Lower Cholesky factor `(l11, l21, l22)` of one covariance head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyHead<T> {
    pub l11: T,
    pub l21: T,
    pub l22: T,
}

impl<T: Scalar> CholeskyHead<T> {
    pub fn from_raw(a: T, b: T, c: T) -> Self {
        Self {
            l11: crate::scalar::softplus(a),
            l21: b,
            l22: crate::scalar::softplus(c),
        }
    }

    pub fn cov(&self) -> CovMatrix2<T> {
        CovMatrix2::new(
            self.l11 * self.l11,
            self.l11 * self.l21,
            self.l21 * self.l21 + self.l22 * self.l22,
        )
    }
}

/// Decodes raw output activations into per-step forecasts.
pub fn decode<T: Scalar>(raw: &[T]) -> ForecastOutput<T> {
    ForecastOutput {
        steps: raw
            .chunks_exact(OUTPUTS_PER_STEP)
            .map(|o| StepForecast {
                mean: [o[0], o[1]],
                sens_cov: CholeskyHead::from_raw(o[2], o[3], o[4]).cov(),
                pred_cov: CholeskyHead::from_raw(o[5], o[6], o[7]).cov(),
            })
            .collect(),
    }
}

/// Network input for a pair: per observed step `(x, y, sxx, sxy, syy)`.
/// Velocities are not used.
pub fn encode_input<T: Scalar>(pair: &SequencePair<T>) -> Result<Vec<T>> {
    if pair.past_cov.len() != pair.past.len() {
        return Err(Error::InvalidArgument(format!(
            "sequence {}: observed covariances missing",
            pair.seq
        )));
    }
    let mut x = Vec::with_capacity(pair.past.len() * INPUTS_PER_STEP);
    for (s, c) in pair.past.iter().zip(&pair.past_cov) {
        x.extend([s.x, s.y, c.sxx, c.sxy, c.syy]);
    }
    Ok(x)
}

/// Training example: encoded input, ground-truth future positions and the
/// filter covariances used as sensing targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub input: Vec<T>,
    pub truth: Vec<Point2<T>>,
    pub target_cov: Vec<CovMatrix2<T>>,
}

impl<T: Scalar> Example<T> {
    pub fn from_pair(pair: &SequencePair<T>) -> Result<Self> {
        if !pair.has_covariances() {
            return Err(Error::InvalidArgument(format!(
                "sequence {}: covariances missing",
                pair.seq
            )));
        }
        Ok(Self {
            input: encode_input(pair)?,
            truth: pair.future_positions(),
            target_cov: pair.future_cov.clone(),
        })
    }

    fn check(&self, cfg: &NetConfig) -> Result<()> {
        if self.input.len() != cfg.input_dim()
            || self.truth.len() != cfg.future_len
            || self.target_cov.len() != cfg.future_len
        {
            return Err(Error::InvalidArgument(format!(
                "example shape ({}, {}, {}) does not match network ({}, {})",
                self.input.len(),
                self.truth.len(),
                self.target_cov.len(),
                cfg.input_dim(),
                cfg.future_len
            )));
        }
        Ok(())
    }
}
