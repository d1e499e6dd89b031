use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SequencePair;
use crate::error::{Error, Result};
use crate::geometry::{Point2, TrackState};
use crate::kalman::{filter_trajectory, KfConfig, KfPosterior};
use crate::sampling::{sample_trajectories, stream_rng, CtsConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub q_scale: f64,
    pub dt: f64,
    /// Lower bound on the synthetic measurement standard deviation, meters.
    pub min_noise_std: f64,
    /// Sampled variants per source pair.
    pub samples: usize,
    /// Deviation persistence for trajectory sampling.
    pub lambda: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            q_scale: 0.05,
            dt: 0.4,
            min_noise_std: 0.01,
            samples: 3,
            lambda: 0.9,
        }
    }
}

/// Standard deviation of synthetic measurement noise for a window:
/// `fraction` times the diagonal of its bounding box.
fn noise_std<T: Scalar>(truth: &[Point2<T>], fraction: f64, floor: f64) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in truth {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a].as_f64());
            hi[a] = hi[a].max(p[a].as_f64());
        }
    }
    let diag = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    (fraction * diag).max(floor)
}

struct Filtered<T> {
    post: KfPosterior<T>,
    cts_seed: u64,
}

/// Noisy measurements of the full window, filtered. The stream for
/// `pair.seq` under `seed` drives both the noise and the derived sampling
/// seed.
fn filter_pair<T: Scalar>(
    pair: &SequencePair<T>,
    fraction: f64,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Filtered<T>> {
    let truth: Vec<Point2<T>> = pair
        .past
        .iter()
        .chain(&pair.future)
        .map(TrackState::position)
        .collect();
    let sigma = noise_std(&truth, fraction, cfg.min_noise_std);
    let mut rng = stream_rng(seed, pair.seq as u64);
    let s = T::lit(sigma);
    let measurements: Vec<Point2<T>> = truth
        .iter()
        .map(|p| {
            [
                p[0] + s * T::standard_normal(&mut rng),
                p[1] + s * T::standard_normal(&mut rng),
            ]
        })
        .collect();
    let kf = KfConfig::with_measurement_std(s, T::lit(cfg.q_scale), T::lit(cfg.dt));
    let post = filter_trajectory(&measurements, &kf)?;
    Ok(Filtered {
        post,
        cts_seed: rng.next_u64(),
    })
}

fn check(pairs_empty: bool, fraction: f64) -> Result<()> {
    if pairs_empty {
        return Err(Error::InvalidArgument("no sequences to augment".into()));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "noise fraction {fraction} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Training augmentation. Each pair gets noisy measurements, a filtering
/// pass over all 20 steps and `cfg.samples` sampled histories. Futures keep
/// the ground truth; both halves carry the posterior position covariances.
pub fn augment_with_kf<T: Scalar>(
    pairs: &[SequencePair<T>],
    noise_fraction: f64,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<SequencePair<T>>> {
    check(pairs.is_empty(), noise_fraction)?;
    let nested: Vec<Vec<SequencePair<T>>> = pairs
        .par_iter()
        .map(|pair| {
            let f = filter_pair(pair, noise_fraction, cfg, seed)?;
            let cts = CtsConfig {
                m: cfg.samples,
                lambda: cfg.lambda,
                rng_seed: f.cts_seed,
            };
            let covs = f.post.position_covs();
            let samples = sample_trajectories(&f.post, &cts)?;
            let past_len = pair.past.len();
            Ok(samples
                .into_iter()
                .enumerate()
                .map(|(variant, s)| SequencePair {
                    fraction: noise_fraction,
                    variant,
                    past: s.states[..past_len]
                        .iter()
                        .zip(&pair.past)
                        .map(|(x, truth)| TrackState { t: truth.t, ..*x })
                        .collect(),
                    past_cov: covs[..past_len].to_vec(),
                    future_cov: covs[past_len..].to_vec(),
                    ..pair.clone()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Evaluation-time augmentation: one filtered history per pair (the
/// posterior mean), with the same noise model as training.
pub fn filter_only<T: Scalar>(
    pairs: &[SequencePair<T>],
    noise_fraction: f64,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<SequencePair<T>>> {
    check(pairs.is_empty(), noise_fraction)?;
    pairs
        .par_iter()
        .map(|pair| {
            let f = filter_pair(pair, noise_fraction, cfg, seed)?;
            let covs = f.post.position_covs();
            let past_len = pair.past.len();
            Ok(SequencePair {
                fraction: noise_fraction,
                variant: 0,
                past: f.post.states[..past_len]
                    .iter()
                    .zip(&pair.past)
                    .map(|(x, truth)| TrackState { t: truth.t, ..*x })
                    .collect(),
                past_cov: covs[..past_len].to_vec(),
                future_cov: covs[past_len..].to_vec(),
                ..pair.clone()
            })
        })
        .collect()
}

/// Union of [`augment_with_kf`] over several noise fractions. Each fraction
/// gets its own seed derived from `seed`.
pub fn domain_randomize<T: Scalar>(
    pairs: &[SequencePair<T>],
    fractions: &[f64],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<SequencePair<T>>> {
    let mut out = Vec::new();
    for (i, &f) in fractions.iter().enumerate() {
        let sub = stream_rng(seed, i as u64).next_u64();
        out.extend(augment_with_kf(pairs, f, cfg, sub)?);
    }
    Ok(out)
}
