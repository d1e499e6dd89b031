//! Conditional trajectory sampling from a filter posterior.
//!
//! A sampled trajectory is the posterior mean plus a position deviation that
//! evolves as a persistent AR(1) process:
//!
//! ```text
//! d_0 ~ N(0, P_0)
//! d_t = λ d_{t-1} + ε_t,   ε_t ~ N(0, (1 − λ²) P_t)
//! ```
//!
//! so every step keeps mean `μ_t`, the deviation is carried by the
//! constant-velocity position transition (identity on a position offset),
//! and with stationary `P_t` the marginal covariance is exactly `P_t`.
//! Velocities are carried from the posterior mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, TrackState, Trajectory};
use crate::kalman::KfPosterior;
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtsConfig {
    /// Number of sampled trajectories.
    pub m: usize,
    /// Deviation persistence in `[0, 1)`.
    pub lambda: f64,
    pub rng_seed: u64,
}

impl Default for CtsConfig {
    fn default() -> Self {
        Self {
            m: 3,
            lambda: 0.9,
            rng_seed: 0,
        }
    }
}

impl CtsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("CTS needs m >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "CTS lambda {} outside [0, 1)",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Independent, reproducible stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from `N(mean, cov)` with `cov` a row-major `k×k` PSD matrix.
pub fn sample_multivariate_normal<T: Scalar, R: Rng + ?Sized>(
    mean: &[T],
    cov: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    let k = mean.len();
    if cov.len() != k * k {
        return Err(Error::InvalidArgument(format!(
            "covariance has {} entries for dimension {k}",
            cov.len()
        )));
    }
    let l = linalg::psd_factor(cov, k)?;
    Ok(draw_with_factor(mean, &l, rng))
}

fn draw_with_factor<T: Scalar, R: Rng + ?Sized>(mean: &[T], l: &[T], rng: &mut R) -> Vec<T> {
    let k = mean.len();
    let z: Vec<T> = (0..k).map(|_| T::standard_normal(rng)).collect();
    (0..k)
        .map(|i| mean[i] + (0..k).map(|j| l[i * k + j] * z[j]).sum::<T>())
        .collect()
}

fn cov_factor<T: Scalar>(cov: &CovMatrix2<T>) -> Result<[T; 4]> {
    let l = linalg::psd_factor(&cov.to_dense(), 2)?;
    Ok([l[0], l[1], l[2], l[3]])
}

fn apply2<T: Scalar>(l: &[T; 4], z: [T; 2]) -> [T; 2] {
    [l[0] * z[0] + l[1] * z[1], l[2] * z[0] + l[3] * z[1]]
}

/// Draws `cfg.m` trajectories from the posterior. Trajectory `i` uses RNG
/// stream `i` under `cfg.rng_seed`, so results do not depend on `m` or on
/// evaluation order. The returned `ped_id` is the bootstrap index.
pub fn sample_trajectories<T: Scalar>(
    post: &KfPosterior<T>,
    cfg: &CtsConfig,
) -> Result<Vec<Trajectory<T>>> {
    cfg.validate()?;
    if post.is_empty() {
        return Err(Error::InvalidArgument("empty posterior".into()));
    }
    let pos_covs = post.position_covs();
    let factors: Vec<[T; 4]> = pos_covs
        .iter()
        .enumerate()
        .map(|(k, c)| cov_factor(c).map_err(|e| e.at_step(k)))
        .collect::<Result<_>>()?;
    let lambda = T::lit(cfg.lambda);
    let innov = (T::one() - lambda * lambda).sqrt();

    (0..cfg.m)
        .map(|i| {
            let mut rng = stream_rng(cfg.rng_seed, i as u64);
            let mut dev = [T::zero(); 2];
            let mut states = Vec::with_capacity(post.len());
            for (k, (mu, l)) in post.states.iter().zip(&factors).enumerate() {
                let z = [T::standard_normal(&mut rng), T::standard_normal(&mut rng)];
                let eps = apply2(l, z);
                if k == 0 {
                    dev = eps;
                } else {
                    dev = [
                        lambda * dev[0] + innov * eps[0],
                        lambda * dev[1] + innov * eps[1],
                    ];
                }
                states.push(TrackState {
                    x: mu.x + dev[0],
                    y: mu.y + dev[1],
                    ..*mu
                });
            }
            Ok(Trajectory {
                ped_id: i as i64,
                states,
                covs: Some(pos_covs.clone()),
            })
        })
        .collect()
}
