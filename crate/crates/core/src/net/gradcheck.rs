use serde::{Deserialize, Serialize};

use super::train::{batch_objective, Objective};
use super::{draw_mask, DropoutMask, Example, NetConfig, NetParams};
use crate::error::{Error, Result};
use crate::sampling::stream_rng;

pub type GradObjective = Objective;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Smallest denominator in the relative error, so parameters whose true
/// gradient is zero are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the backpropagated gradient of `objective` over `examples`
/// with central finite differences on every parameter.
///
/// The NLL step weights are computed once at `params` and then held fixed,
/// so the finite differences see the same weighted objective that the
/// analytic gradient differentiates. Dropout, if enabled, uses one fixed
/// set of masks.
pub fn grad_check(
    params: &NetParams<f64>,
    cfg: &NetConfig,
    examples: &[Example<f64>],
    objective: GradObjective,
    tolerance: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let batch: Vec<&Example<f64>> = examples.iter().collect();
    let masks: Option<Vec<DropoutMask<f64>>> = (cfg.dropout_p > 0.0).then(|| {
        let mut rng = stream_rng(params.seed, 3);
        batch
            .iter()
            .map(|_| draw_mask(cfg, &mut rng).expect("dropout enabled"))
            .collect()
    });
    let live = batch_objective(params, cfg, &batch, masks.as_deref(), objective, None)?;
    let frozen = live.weights.clone();
    let eval = |p: &NetParams<f64>| {
        batch_objective(p, cfg, &batch, masks.as_deref(), objective, Some(&frozen)).map(|o| o.objective)
    };
    let analytic = batch_objective(params, cfg, &batch, masks.as_deref(), objective, Some(&frozen))?.grad;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: analytic.len(),
    };
    let mut probe = params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.values[i];
        probe.values[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.values[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.values[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > report.max_rel_error || !rel.is_finite() {
            report = GradCheckReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
                checked: report.checked,
            };
        }
    }
    if !(report.max_rel_error < tolerance) {
        return Err(Error::GradCheckFailure {
            index: report.worst_index,
            analytic: report.analytic,
            numeric: report.numeric,
            rel_error: report.max_rel_error,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CovMatrix2;

    fn examples(cfg: &NetConfig, n: usize) -> Vec<Example<f64>> {
        (0..n)
            .map(|j| Example {
                input: (0..cfg.input_dim())
                    .map(|i| ((i * 7 + j * 3) as f64 * 0.13).sin() * 0.8)
                    .collect(),
                truth: (0..cfg.future_len)
                    .map(|k| [0.3 * k as f64 - 1.0, ((k + j) as f64 * 0.5).cos()])
                    .collect(),
                target_cov: (0..cfg.future_len)
                    .map(|k| CovMatrix2::new(0.3 + 0.05 * k as f64, 0.05, 0.4))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn covariance_regression_gradient() {
        let cfg = NetConfig::tiny();
        let r = grad_check(&NetParams::init(&cfg, 1), &cfg, &examples(&cfg, 3), Objective::CovMse, 1e-6)
            .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn plain_nll_gradient() {
        let cfg = NetConfig { beta: 0.0, ..NetConfig::tiny() };
        grad_check(&NetParams::init(&cfg, 2), &cfg, &examples(&cfg, 3), Objective::Nll, 1e-4).unwrap();
    }

    #[test]
    fn weighted_joint_gradient_with_dropout() {
        let cfg = NetConfig { beta: 0.5, dropout_p: 0.3, ..NetConfig::tiny() };
        grad_check(&NetParams::init(&cfg, 3), &cfg, &examples(&cfg, 3), Objective::Joint, 1e-4).unwrap();
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let cfg = NetConfig { beta: 0.5, ..NetConfig::tiny() };
        let params = NetParams::init(&cfg, 3);
        // Recomputing the weights at every probe also differentiates through
        // them, so the stop-gradient analytic gradient no longer matches.
        let batch = examples(&cfg, 2);
        let refs: Vec<&Example<f64>> = batch.iter().collect();
        let analytic = batch_objective(&params, &cfg, &refs, None, Objective::Nll, None).unwrap().grad;
        let mut worst: f64 = 0.0;
        let mut probe = params.clone();
        for i in 0..analytic.len() {
            let o = probe.values[i];
            probe.values[i] = o + FD_STEP;
            let up = batch_objective(&probe, &cfg, &refs, None, Objective::Nll, None).unwrap().objective;
            probe.values[i] = o - FD_STEP;
            let dn = batch_objective(&probe, &cfg, &refs, None, Objective::Nll, None).unwrap().objective;
            probe.values[i] = o;
            let n = (up - dn) / (2.0 * FD_STEP);
            worst = worst.max((analytic[i] - n).abs() / analytic[i].abs().max(n.abs()).max(REL_ERROR_FLOOR));
        }
        assert!(worst > 1e-2, "{worst}");
    }
}
