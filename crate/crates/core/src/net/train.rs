use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{backward, forward_trace};
use super::loss::{beta_nll_loss, beta_nll_loss_frozen, cov_mse_loss, head_gradient};
use super::{decode, draw_mask, Adam, AdamConfig, DropoutMask, Example, NetConfig, NetParams, OUTPUTS_PER_STEP};
use crate::data::SequencePair;
use crate::error::{Error, Result};
use crate::sampling::stream_rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean unweighted NLL of the prediction head.
    pub nll: f64,
    /// Mean squared Frobenius error of the sensing head.
    pub mse: f64,
    /// `nll + loss_weight_mse · mse`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub params: NetParams<T>,
    pub history: Vec<EpochLoss>,
    /// Reason training stopped early; `params` are the last finite ones.
    pub aborted: Option<String>,
}

/// Which terms enter the differentiated objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Weighted NLL plus the weighted covariance regression.
    Joint,
    Nll,
    CovMse,
}

/// Batch means and the gradient of the selected objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective<T> {
    pub nll: T,
    pub surrogate_nll: T,
    pub mse: T,
    /// Value whose gradient is `grad`.
    pub objective: T,
    pub grad: Vec<T>,
    /// Per-example NLL step weights, as used.
    pub weights: Vec<Vec<T>>,
}

struct Partial<T> {
    nll: T,
    surrogate: T,
    mse: T,
    grad: Vec<T>,
    weights: Vec<Vec<T>>,
}

fn example_pass<T: Scalar>(
    params: &[T],
    cfg: &NetConfig,
    layers: &[super::LayerShape],
    ex: &Example<T>,
    mask: Option<&DropoutMask<T>>,
    objective: Objective,
    frozen: Option<&[T]>,
    scale: T,
    acc: &mut Partial<T>,
) -> Result<()> {
    ex.check(cfg)?;
    let trace = forward_trace(params, layers, &ex.input, mask)?;
    let raw = &trace.output;
    let out = decode(raw);
    let nll = match frozen {
        Some(w) => beta_nll_loss_frozen(&out, &ex.truth, w)?,
        None => beta_nll_loss(&out, &ex.truth, cfg.beta)?,
    };
    let mse = cov_mse_loss(&out, &ex.target_cov)?;
    let lambda = T::lit(cfg.loss_weight_mse);
    let (w_nll, w_mse) = match objective {
        Objective::Joint => (T::one(), lambda),
        Objective::Nll => (T::one(), T::zero()),
        Objective::CovMse => (T::zero(), T::one()),
    };
    let mut g_out = vec![T::zero(); raw.len()];
    for k in 0..cfg.future_len {
        let o = &raw[k * OUTPUTS_PER_STEP..(k + 1) * OUTPUTS_PER_STEP];
        let g = &mut g_out[k * OUTPUTS_PER_STEP..(k + 1) * OUTPUTS_PER_STEP];
        g[0] = scale * w_nll * nll.grad_mean[k][0];
        g[1] = scale * w_nll * nll.grad_mean[k][1];
        let gs = head_gradient([o[2], o[3], o[4]], mse.grad_cov[k] * (scale * w_mse));
        let gp = head_gradient([o[5], o[6], o[7]], nll.grad_cov[k] * (scale * w_nll));
        g[2..5].copy_from_slice(&gs);
        g[5..8].copy_from_slice(&gp);
    }
    backward(params, layers, &trace, mask, &g_out, &mut acc.grad);
    acc.nll += scale * nll.value;
    acc.surrogate += scale * nll.surrogate;
    acc.mse += scale * mse.value;
    acc.weights.push(nll.weights);
    Ok(())
}

const CHUNK: usize = 8;

/// Mean losses over `batch` and the gradient of the chosen objective.
///
/// `masks`, when given, holds one dropout mask per example. `frozen`, when
/// given, fixes the NLL step weights per example instead of recomputing
/// them from the current parameters. The reduction order is fixed, so the
/// result does not depend on the thread count.
pub fn batch_objective<T: Scalar>(
    params: &NetParams<T>,
    cfg: &NetConfig,
    batch: &[&Example<T>],
    masks: Option<&[DropoutMask<T>]>,
    objective: Objective,
    frozen: Option<&[Vec<T>]>,
) -> Result<BatchObjective<T>> {
    params.check_shape(cfg)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let layers = cfg.layers();
    let scale = T::one() / T::lit(batch.len() as f64);
    let n = params.values.len();
    let parts: Vec<Partial<T>> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut acc = Partial {
                nll: T::zero(),
                surrogate: T::zero(),
                mse: T::zero(),
                grad: vec![T::zero(); n],
                weights: Vec::with_capacity(idx.len()),
            };
            for &i in idx {
                example_pass(
                    &params.values,
                    cfg,
                    &layers,
                    batch[i],
                    masks.map(|m| &m[i]),
                    objective,
                    frozen.map(|f| f[i].as_slice()),
                    scale,
                    &mut acc,
                )?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = BatchObjective {
        nll: T::zero(),
        surrogate_nll: T::zero(),
        mse: T::zero(),
        objective: T::zero(),
        grad: vec![T::zero(); n],
        weights: Vec::with_capacity(batch.len()),
    };
    for p in parts {
        total.nll += p.nll;
        total.surrogate_nll += p.surrogate;
        total.mse += p.mse;
        for (g, d) in total.grad.iter_mut().zip(&p.grad) {
            *g += *d;
        }
        total.weights.extend(p.weights);
    }
    let lambda = T::lit(cfg.loss_weight_mse);
    total.objective = match objective {
        Objective::Joint => total.surrogate_nll + lambda * total.mse,
        Objective::Nll => total.surrogate_nll,
        Objective::CovMse => total.mse,
    };
    Ok(total)
}

/// Trains one network on augmented pairs.
pub fn train<T: Scalar>(
    pairs: &[SequencePair<T>],
    cfg: &NetConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let examples = pairs.iter().map(Example::from_pair).collect::<Result<Vec<_>>>()?;
    train_examples(&examples, cfg, tc)
}

/// Minibatch Adam on the joint objective, reshuffling every epoch. Stops at
/// the first non-finite loss or gradient and keeps the parameters from
/// before that step.
pub fn train_examples<T: Scalar>(
    examples: &[Example<T>],
    cfg: &NetConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    for ex in examples {
        ex.check(cfg)?;
    }
    let mut params = NetParams::init(cfg, tc.seed);
    let mut opt = Adam::new(params.values.len(), tc.adam);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = stream_rng(tc.seed, 1);
    let mut mask_rng = stream_rng(tc.seed, 2);
    let mut history = Vec::with_capacity(tc.epochs);
    let n = examples.len() as f64;

    for epoch in 0..tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut nll, mut mse) = (0.0, 0.0);
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &examples[i]).collect();
            let masks: Option<Vec<DropoutMask<T>>> = (cfg.dropout_p > 0.0).then(|| {
                batch
                    .iter()
                    .map(|_| draw_mask(cfg, &mut mask_rng).expect("dropout enabled"))
                    .collect()
            });
            let step = batch_objective(&params, cfg, &batch, masks.as_deref(), Objective::Joint, None);
            let obj = match step {
                Ok(o) if o.objective.is_finite() && o.grad.iter().all(|g| g.is_finite()) => o,
                Ok(_) => {
                    return Ok(aborted(params, history, epoch, "non-finite loss or gradient".into()));
                }
                Err(e @ Error::NumericalOverflow(_)) => {
                    return Ok(aborted(params, history, epoch, e.to_string()));
                }
                Err(e) => return Err(e),
            };
            let w = chunk.len() as f64 / n;
            nll += obj.nll.as_f64() * w;
            mse += obj.mse.as_f64() * w;
            opt.update(&mut params.values, &obj.grad);
        }
        history.push(EpochLoss {
            epoch,
            nll,
            mse,
            total: nll + cfg.loss_weight_mse * mse,
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        aborted: None,
    })
}

fn aborted<T>(params: NetParams<T>, history: Vec<EpochLoss>, epoch: usize, why: String) -> TrainOutcome<T> {
    TrainOutcome {
        params,
        history,
        aborted: Some(format!("epoch {epoch}: {why}")),
    }
}
