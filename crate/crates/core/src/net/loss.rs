//! Per-sequence losses and their gradients with respect to the forecast.
//!
//! Covariance gradients are reported per free entry `(Σ11, Σ12, Σ22)`; the
//! off-diagonal derivative counts both symmetric positions.

use super::{CholeskyHead, ForecastOutput};
use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Point2};
use crate::kalman::SINGULAR_DET;
use crate::scalar::{sigmoid, Scalar};

/// Gaussian negative log-likelihood (constant dropped) of the prediction
/// head, averaged over steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaNll<T> {
    /// Unweighted mean NLL.
    pub value: T,
    /// Mean of the variance-weighted NLL whose gradient is reported.
    pub surrogate: T,
    /// Per-step weights `det(Σ)^β`, treated as constants.
    pub weights: Vec<T>,
    pub grad_mean: Vec<Point2<T>>,
    pub grad_cov: Vec<CovMatrix2<T>>,
}

/// Mean squared Frobenius distance between the sensing head and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMse<T> {
    pub value: T,
    pub grad_cov: Vec<CovMatrix2<T>>,
}

fn check_len<T>(out: &ForecastOutput<T>, n: usize) -> Result<()> {
    if out.steps.len() != n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} forecast steps against {n} targets",
            out.steps.len()
        )));
    }
    Ok(())
}

fn nll_impl<T: Scalar>(
    out: &ForecastOutput<T>,
    truth: &[Point2<T>],
    beta: f64,
    frozen: Option<&[T]>,
) -> Result<BetaNll<T>> {
    check_len(out, truth.len())?;
    if let Some(w) = frozen {
        if w.len() != truth.len() {
            return Err(Error::InvalidArgument("frozen weight count".into()));
        }
    }
    let k = T::lit(truth.len() as f64);
    let half = T::lit(0.5);
    let mut res = BetaNll {
        value: T::zero(),
        surrogate: T::zero(),
        weights: Vec::with_capacity(truth.len()),
        grad_mean: Vec::with_capacity(truth.len()),
        grad_cov: Vec::with_capacity(truth.len()),
    };
    for (i, (step, y)) in out.steps.iter().zip(truth).enumerate() {
        let cov = step.pred_cov;
        let det = cov.det();
        if !(det >= T::lit(SINGULAR_DET)) {
            return Err(Error::NumericalOverflow(format!(
                "prediction covariance at step {i} has det {:e}",
                det.as_f64()
            )));
        }
        let inv = CovMatrix2::new(cov.syy / det, -cov.sxy / det, cov.sxx / det);
        let r = [y[0] - step.mean[0], y[1] - step.mean[1]];
        let a = inv.mul_vec(r);
        let nll = half * det.ln() + half * (r[0] * a[0] + r[1] * a[1]);
        let w = match frozen {
            Some(ws) => ws[i],
            None => det.powf(T::lit(beta)),
        };
        res.value += nll / k;
        res.surrogate += w * nll / k;
        res.weights.push(w);
        let s = w / k;
        res.grad_mean.push([-a[0] * s, -a[1] * s]);
        res.grad_cov.push(CovMatrix2::new(
            (half * inv.sxx - half * a[0] * a[0]) * s,
            (inv.sxy - a[0] * a[1]) * s,
            (half * inv.syy - half * a[1] * a[1]) * s,
        ));
    }
    Ok(res)
}

/// β-weighted NLL: the value is the plain NLL, the gradients are those of
/// `det(Σ)^β · NLL` with the weight held constant.
pub fn beta_nll_loss<T: Scalar>(
    out: &ForecastOutput<T>,
    truth: &[Point2<T>],
    beta: f64,
) -> Result<BetaNll<T>> {
    nll_impl(out, truth, beta, None)
}

/// As [`beta_nll_loss`] with externally fixed per-step weights.
pub fn beta_nll_loss_frozen<T: Scalar>(
    out: &ForecastOutput<T>,
    truth: &[Point2<T>],
    weights: &[T],
) -> Result<BetaNll<T>> {
    nll_impl(out, truth, 0.0, Some(weights))
}

pub fn cov_mse_loss<T: Scalar>(out: &ForecastOutput<T>, targets: &[CovMatrix2<T>]) -> Result<CovMse<T>> {
    check_len(out, targets.len())?;
    let k = T::lit(targets.len() as f64);
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad_cov = Vec::with_capacity(targets.len());
    for (step, t) in out.steps.iter().zip(targets) {
        let d = step.sens_cov - *t;
        value += d.frobenius_sq() / k;
        grad_cov.push(CovMatrix2::new(two * d.sxx / k, two * two * d.sxy / k, two * d.syy / k));
    }
    if !value.is_finite() {
        return Err(Error::NumericalOverflow("covariance loss".into()));
    }
    Ok(CovMse { value, grad_cov })
}

/// Chains a covariance-entry gradient through `L·Lᵀ` and the softplus
/// diagonal to the three raw head outputs.
pub(crate) fn head_gradient<T: Scalar>(raw: [T; 3], g: CovMatrix2<T>) -> [T; 3] {
    let h = CholeskyHead::from_raw(raw[0], raw[1], raw[2]);
    let two = T::lit(2.0);
    let g11 = g.sxx * two * h.l11 + g.sxy * h.l21;
    let g21 = g.sxy * h.l11 + g.syy * two * h.l21;
    let g22 = g.syy * two * h.l22;
    [g11 * sigmoid(raw[0]), g21, g22 * sigmoid(raw[2])]
}
