//! End-to-end experiment: split, augment, train an ensemble or a dropout
//! network, predict and score.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    domain_randomize, filter_only, split, AugmentConfig, DatasetSplit, IngestConfig, SequencePair, FUTURE_LEN,
    PAST_LEN, TEST_FRACTION,
};
use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Point2, TrackState};
use crate::metrics::{evaluate as score, Forecast, MetricReport, UncertaintyMode};
use crate::net::{train, EpochLoss, NetConfig, NetParams, TrainConfig, TrainOutcome};
use crate::sampling::stream_rng;
use crate::uq::{ensemble_predict, mc_dropout_predict, Ensemble, PredictiveSummary, DEFAULT_DROPOUT_SAMPLES};

/// Dropout probability of the MC-dropout baseline.
pub const DEFAULT_MC_DROPOUT_P: f64 = 0.5;

/// Every tunable of one experiment. Paths live with the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: String,
    pub ingest: IngestConfig,
    pub test_fraction: f64,
    /// Measurement-noise fractions used for training augmentation.
    pub train_fractions: Vec<f64>,
    /// Measurement-noise fraction applied to test histories.
    pub eval_fraction: f64,
    pub augment: AugmentConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub members: usize,
    pub dropout_p: f64,
    pub dropout_samples: usize,
    pub sigma_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: "hotel".into(),
            ingest: IngestConfig::default(),
            test_fraction: TEST_FRACTION,
            train_fractions: vec![0.05],
            eval_fraction: 0.05,
            augment: AugmentConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            members: 3,
            dropout_p: DEFAULT_MC_DROPOUT_P,
            dropout_samples: DEFAULT_DROPOUT_SAMPLES,
            sigma_scales: vec![1.0, 2.0],
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.members == 0 {
            return Err(Error::InvalidArgument("members must be at least 1".into()));
        }
        if self.train_fractions.is_empty() {
            return Err(Error::InvalidArgument("no training noise fractions".into()));
        }
        if self.sigma_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("sigma scales must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.net.dropout_p != 0.0 {
            return Err(Error::InvalidArgument(
                "net.dropout_p must be 0; the dropout baseline uses dropout_p".into(),
            ));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed, self.members)
    }

    /// Network configuration of the MC-dropout baseline.
    pub fn dropout_net(&self) -> NetConfig {
        NetConfig {
            dropout_p: self.dropout_p,
            ..self.net.clone()
        }
    }
}

/// Seeds of every random stage, derived from the experiment seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub experiment: u64,
    pub split: u64,
    pub augment: u64,
    pub eval_noise: u64,
    pub members: Vec<u64>,
    pub dropout_train: u64,
    pub dropout_predict: u64,
}

impl Seeds {
    pub fn derive(seed: u64, members: usize) -> Self {
        let sub = |stream: u64| stream_rng(seed, stream).next_u64();
        Self {
            experiment: seed,
            split: sub(0),
            augment: sub(1),
            eval_noise: sub(2),
            dropout_train: sub(3),
            dropout_predict: sub(4),
            members: (0..members as u64).map(|i| sub(16 + i)).collect(),
        }
    }
}

/// Split windows with the augmented training set and filtered test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub split: DatasetSplit<f64>,
    pub train: Vec<SequencePair<f64>>,
    pub test: Vec<SequencePair<f64>>,
}

pub fn prepare(pairs: Vec<SequencePair<f64>>, cfg: &ExperimentConfig) -> Result<Prepared> {
    let seeds = cfg.seeds();
    let split = split(pairs, cfg.test_fraction, seeds.split, &cfg.scene)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split of scene `{}` left {} training and {} test sequences",
            cfg.scene,
            split.train.len(),
            split.test.len()
        )));
    }
    let train = domain_randomize(&split.train, &cfg.train_fractions, &cfg.augment, seeds.augment)?;
    let test = filter_only(&split.test, cfg.eval_fraction, &cfg.augment, seeds.eval_noise)?;
    Ok(Prepared { split, train, test })
}

/// Augmented pairs seen by ensemble member `member`: one sampled variant
/// per source window and noise fraction.
pub fn member_view(train: &[SequencePair<f64>], member: usize, samples: usize) -> Vec<SequencePair<f64>> {
    let variant = member % samples.max(1);
    train.iter().filter(|p| p.variant == variant).cloned().collect()
}

/// Trained networks of one method together with their loss histories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub cfg: NetConfig,
    pub members: Vec<NetParams<f64>>,
    pub histories: Vec<Vec<EpochLoss>>,
    /// `(member, reason)` for every member whose training stopped early.
    pub aborted: Vec<(usize, String)>,
}

impl TrainedModel {
    fn collect(cfg: NetConfig, outcomes: Vec<TrainOutcome<f64>>) -> Self {
        let mut m = Self {
            cfg,
            members: Vec::new(),
            histories: Vec::new(),
            aborted: Vec::new(),
        };
        for (i, o) in outcomes.into_iter().enumerate() {
            if let Some(reason) = o.aborted {
                m.aborted.push((i, reason));
            }
            m.members.push(o.params);
            m.histories.push(o.history);
        }
        m
    }
}

/// Trains `members` networks in parallel, member `i` on variant
/// `i mod samples` with its own seed.
pub fn train_ensemble(train_pairs: &[SequencePair<f64>], cfg: &ExperimentConfig, members: usize) -> Result<TrainedModel> {
    cfg.validate()?;
    let seeds = Seeds::derive(cfg.seed, members);
    let outcomes = (0..members)
        .into_par_iter()
        .map(|i| {
            let view = member_view(train_pairs, i, cfg.augment.samples);
            let tc = TrainConfig {
                seed: seeds.members[i],
                ..cfg.train
            };
            train(&view, &cfg.net, &tc).map_err(|e| e.at_member(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel::collect(cfg.net.clone(), outcomes))
}

/// Trains the single MC-dropout network on the same view as member 0.
pub fn train_dropout(train_pairs: &[SequencePair<f64>], cfg: &ExperimentConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let net = cfg.dropout_net();
    let tc = TrainConfig {
        seed: cfg.seeds().dropout_train,
        ..cfg.train
    };
    let outcome = train(&member_view(train_pairs, 0, cfg.augment.samples), &net, &tc)?;
    Ok(TrainedModel::collect(net, vec![outcome]))
}

/// A trained model ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Ensemble(Ensemble<f64>),
    Dropout {
        cfg: NetConfig,
        params: NetParams<f64>,
        samples: usize,
        seed: u64,
    },
}

impl Predictor {
    pub fn ensemble(model: &TrainedModel) -> Result<Self> {
        Ok(Self::Ensemble(Ensemble::new(model.cfg.clone(), model.members.clone())?))
    }

    pub fn dropout(model: &TrainedModel, samples: usize, seed: u64) -> Result<Self> {
        let params = match model.members.as_slice() {
            [p] => p.clone(),
            m => {
                return Err(Error::ArtifactMismatch(format!(
                    "dropout model needs exactly one network, got {}",
                    m.len()
                )))
            }
        };
        params.check_shape(&model.cfg)?;
        if model.cfg.dropout_p == 0.0 {
            return Err(Error::ArtifactMismatch("dropout model trained without dropout".into()));
        }
        Ok(Self::Dropout {
            cfg: model.cfg.clone(),
            params,
            samples,
            seed,
        })
    }

    pub fn cfg(&self) -> &NetConfig {
        match self {
            Self::Ensemble(e) => &e.cfg,
            Self::Dropout { cfg, .. } => cfg,
        }
    }

    pub fn predict(&self, input: &[f64]) -> Result<PredictiveSummary<f64>> {
        match self {
            Self::Ensemble(e) => ensemble_predict(e, input),
            Self::Dropout {
                cfg,
                params,
                samples,
                seed,
            } => mc_dropout_predict(params, cfg, input, *samples, *seed),
        }
    }

    pub fn predict_pair(&self, pair: &SequencePair<f64>) -> Result<PredictiveSummary<f64>> {
        let input = crate::net::encode_input(pair)?;
        if input.len() != self.cfg().input_dim() {
            return Err(Error::ArtifactMismatch(format!(
                "model expects {} inputs, sequence {} gives {}",
                self.cfg().input_dim(),
                pair.seq,
                input.len()
            )));
        }
        self.predict(&input)
    }
}

/// Test-set scores of one predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// One report per sigma scale and uncertainty mode.
    pub reports: Vec<MetricReport>,
    /// Mean Gaussian NLL of the ground truth under the total covariance,
    /// without the `ln 2π` constant.
    pub test_nll: f64,
    /// Mean squared coordinate error of the predicted mean.
    pub test_position_mse: f64,
    /// Mean squared Frobenius error of the sensing covariance against the
    /// filter covariance.
    pub test_cov_mse: f64,
    pub summaries: Vec<PredictiveSummary<f64>>,
}

impl Evaluation {
    pub fn report(&self, sigma_scale: f64, mode: UncertaintyMode) -> Option<&MetricReport> {
        self.reports
            .iter()
            .find(|r| r.sigma_scale == sigma_scale && r.uncertainty_mode == mode)
    }
}

fn gaussian_nll(mean: Point2<f64>, cov: CovMatrix2<f64>, y: Point2<f64>) -> Result<f64> {
    let det = cov.det();
    if !(det > 1e-15) {
        return Err(Error::DegenerateEllipse { det });
    }
    let r = [y[0] - mean[0], y[1] - mean[1]];
    Ok(0.5 * det.ln() + 0.5 * cov.mahalanobis_sq(r))
}

/// Predicts every test pair and scores in all three modes at each scale.
pub fn evaluate(predictor: &Predictor, test: &[SequencePair<f64>], sigma_scales: &[f64]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("no test sequences".into()));
    }
    let summaries = test
        .par_iter()
        .map(|p| predictor.predict_pair(p).map_err(|e| e.at_step(p.seq)))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<Point2<f64>>> = test.iter().map(SequencePair::future_positions).collect();
    let forecasts: Vec<Forecast<f64>> = summaries.iter().map(Forecast::from).collect();

    let (mut nll, mut pos, mut cov, mut n) = (0.0, 0.0, 0.0, 0usize);
    for ((s, t), p) in summaries.iter().zip(&truth).zip(test) {
        for (k, st) in s.steps.iter().enumerate() {
            nll += gaussian_nll(st.mean, st.total, t[k])?;
            pos += 0.5 * ((st.mean[0] - t[k][0]).powi(2) + (st.mean[1] - t[k][1]).powi(2));
            if let Some(target) = p.future_cov.get(k) {
                cov += (st.sensing - *target).frobenius_sq();
            }
            n += 1;
        }
    }

    let mut reports = Vec::new();
    for &scale in sigma_scales {
        for mode in UncertaintyMode::ALL {
            reports.push(score(&forecasts, &truth, scale, mode)?);
        }
    }
    Ok(Evaluation {
        reports,
        test_nll: nll / n as f64,
        test_position_mse: pos / n as f64,
        test_cov_mse: cov / n as f64,
        summaries,
    })
}

/// Builds a prediction input from an external track of at least
/// `PAST_LEN` positions sampled at the training rate. Positions after the
/// first `PAST_LEN + FUTURE_LEN` are ignored; any beyond `PAST_LEN` become
/// ground truth.
pub fn observed_pair(positions: &[Point2<f64>], cfg: &ExperimentConfig, seed: u64) -> Result<SequencePair<f64>> {
    if positions.len() < PAST_LEN {
        return Err(Error::InvalidArgument(format!(
            "track has {} positions, at least {PAST_LEN} are needed",
            positions.len()
        )));
    }
    let used = &positions[..positions.len().min(PAST_LEN + FUTURE_LEN)];
    let origin = used[0];
    let states: Vec<TrackState<f64>> = used
        .iter()
        .enumerate()
        .map(|(t, p)| TrackState::new(p[0] - origin[0], p[1] - origin[1], 0.0, 0.0, t as u64))
        .collect();
    let raw = SequencePair {
        ped_id: 0,
        seq: 0,
        fraction: 0.0,
        variant: 0,
        origin,
        past: states[..PAST_LEN].to_vec(),
        future: states[PAST_LEN..].to_vec(),
        past_cov: Vec::new(),
        future_cov: Vec::new(),
    };
    let mut pair = filter_only(&[raw], cfg.eval_fraction, &cfg.augment, seed)?.remove(0);
    pair.future_cov.clear();
    Ok(pair)
}

/// Parses a track file: one `x y` row per step, `#` comments allowed.
pub fn parse_track(text: &str, source: &str) -> Result<Vec<Point2<f64>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Ingest {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|c| !c.is_empty()).collect();
        if cols.len() != 2 {
            return Err(bad(format!("expected 2 columns, found {}", cols.len())));
        }
        let mut p = [0.0_f64; 2];
        for (v, c) in p.iter_mut().zip(&cols) {
            *v = c.parse().map_err(|_| bad(format!("`{c}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("`{c}` is not finite")));
            }
        }
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::window_all;
    use crate::geometry::Trajectory;

    fn walkers(n: usize) -> Vec<Trajectory<f64>> {
        (0..n)
            .map(|i| {
                let turn = 0.02 * (i as f64 - n as f64 / 2.0);
                let states = (0..30)
                    .map(|t| {
                        let a = turn * t as f64;
                        let x = 0.5 * t as f64 * a.cos() + i as f64;
                        let y = 0.5 * t as f64 * a.sin();
                        TrackState::new(x, y, 0.0, 0.0, t)
                    })
                    .collect();
                Trajectory::new(i as i64, states)
            })
            .collect()
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            net: NetConfig::tiny(),
            train: TrainConfig {
                epochs: 3,
                batch_size: 16,
                ..TrainConfig::default()
            },
            members: 2,
            dropout_samples: 5,
            seed: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = Seeds::derive(3, 4);
        assert_eq!(a, Seeds::derive(3, 4));
        let mut all = vec![a.split, a.augment, a.eval_noise, a.dropout_train, a.dropout_predict];
        all.extend(&a.members);
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(Seeds::derive(3, 2).members, a.members[..2]);
    }

    #[test]
    fn member_views_partition_variants() {
        let cfg = small_cfg();
        let prep = prepare(window_all(&walkers(6)), &cfg).unwrap();
        let m = cfg.augment.samples;
        assert_eq!(prep.train.len(), prep.split.train.len() * m);
        let views: Vec<_> = (0..m).map(|i| member_view(&prep.train, i, m)).collect();
        assert!(views.iter().all(|v| v.len() == prep.split.train.len()));
        assert_eq!(member_view(&prep.train, m, m), views[0]);
        assert!(prep.test.iter().all(|p| p.has_covariances()));
    }

    #[test]
    fn end_to_end_is_deterministic() {
        let cfg = small_cfg();
        let run = || {
            let prep = prepare(window_all(&walkers(6)), &cfg).unwrap();
            let model = train_ensemble(&prep.train, &cfg, cfg.members).unwrap();
            let eval = evaluate(&Predictor::ensemble(&model).unwrap(), &prep.test, &cfg.sigma_scales).unwrap();
            (model, eval)
        };
        let (m1, e1) = run();
        let (m2, e2) = run();
        assert_eq!(m1, m2);
        assert_eq!(e1, e2);
        assert_eq!(e1.reports.len(), 6);
        assert!(e1.test_nll.is_finite() && e1.test_position_mse.is_finite() && e1.test_cov_mse.is_finite());
        let r = e1.report(1.0, UncertaintyMode::TotalExact).unwrap();
        let p = e1.report(1.0, UncertaintyMode::PredictionOnly).unwrap();
        assert!(r.picp >= p.picp);
        assert_eq!(r.ade, p.ade);
    }

    #[test]
    fn dropout_predictor_runs() {
        let cfg = small_cfg();
        let prep = prepare(window_all(&walkers(6)), &cfg).unwrap();
        let model = train_dropout(&prep.train, &cfg).unwrap();
        assert_eq!(model.cfg.dropout_p, cfg.dropout_p);
        let pred = Predictor::dropout(&model, 5, 1).unwrap();
        let eval = evaluate(&pred, &prep.test, &[1.0]).unwrap();
        assert!(eval.summaries.iter().all(|s| s.members.len() == 5));
        let ens = train_ensemble(&prep.train, &cfg, 1).unwrap();
        assert!(matches!(Predictor::dropout(&ens, 5, 1), Err(Error::ArtifactMismatch(_))));
    }

    #[test]
    fn external_tracks() {
        let text = "# x y\n0 0\n0.5 0\n1.0 0\n1.5 0\n2.0 0\n2.5 0\n3.0 0\n3.5 0\n";
        let track = parse_track(text, "walk.txt").unwrap();
        let cfg = small_cfg();
        let pair = observed_pair(&track, &cfg, 1).unwrap();
        assert_eq!((pair.past.len(), pair.future.len()), (PAST_LEN, 0));
        assert_eq!(pair.past_cov.len(), PAST_LEN);
        assert!(observed_pair(&track[..7], &cfg, 1).is_err());
        assert!(matches!(parse_track("1 2 3\n", "t"), Err(Error::Ingest { line: 1, .. })));
        assert!(parse_track("1 x\n", "t").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig {
            members: 0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            net: NetConfig {
                dropout_p: 0.5,
                ..NetConfig::default()
            },
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
