use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use uqtraj::data::{self, read_jsonl, window_all, write_jsonl, SequencePair};
use uqtraj::geometry::{CovMatrix2, Point2};
use uqtraj::metrics::MetricReport;
use uqtraj::net::{grad_check as check_gradients, load_checkpoint, save_checkpoint, Example, NetConfig, NetParams, Objective};
use uqtraj::pipeline::{
    evaluate as run_evaluation, observed_pair, parse_track, train_dropout, train_ensemble, ExperimentConfig,
    Predictor, TrainedModel,
};
use uqtraj::uncertainty::outer_shape;
use uqtraj::uq::PredictiveSummary;

use crate::support::{
    create_dir, load_config, read_text, reading, write_json, writing, CliError, CliResult, Manifest, Table,
};
use crate::{AugmentArgs, EvaluateArgs, Global, GradCheckArgs, GradTarget, IngestArgs, Method, OodArgs, TrainArgs};

const MODEL_INDEX: &str = "model.json";
const MODEL_FORMAT: &str = "uqtraj-model";

fn config(g: &Global) -> CliResult<ExperimentConfig> {
    let mut cfg = load_config(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn finish(cfg: &mut ExperimentConfig) -> CliResult<()> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))
}

fn load_pairs(path: &Path) -> CliResult<Vec<SequencePair<f64>>> {
    reading(path, read_jsonl(path))
}

fn save_pairs(dir: &Path, name: &str, pairs: &[SequencePair<f64>], m: &mut Manifest<'_, impl Serialize>) -> CliResult<()> {
    let path = dir.join(name);
    writing(&path, write_jsonl(&path, pairs))?;
    m.output(name);
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    scene: String,
    trajectories: usize,
    sequences: usize,
    train: usize,
    test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_sequences: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    discrepancy: Option<i64>,
}

pub fn ingest(g: &Global, a: &IngestArgs) -> CliResult<()> {
    let mut cfg = config(g)?;
    if let Some(s) = a.frame_stride {
        cfg.ingest.frame_stride = s;
    }
    if let Some(f) = a.test_fraction {
        cfg.test_fraction = f;
    }
    finish(&mut cfg)?;
    let trajs = reading(&a.input, data::ingest::<f64>(&a.input, &cfg.ingest))?;
    let windows = window_all(&trajs);
    let split = data::split(windows.clone(), cfg.test_fraction, cfg.seeds().split, &cfg.scene)?;

    create_dir(&a.out)?;
    let mut m = Manifest::new("ingest", a, &cfg);
    m.input(&a.input)?;
    save_pairs(&a.out, "windows.jsonl", &windows, &mut m)?;
    save_pairs(&a.out, "train.jsonl", &split.train, &mut m)?;
    save_pairs(&a.out, "test.jsonl", &split.test, &mut m)?;
    let summary = IngestSummary {
        scene: cfg.scene.clone(),
        trajectories: trajs.len(),
        sequences: windows.len(),
        train: split.train.len(),
        test: split.test.len(),
        expected_sequences: a.expect_sequences,
        discrepancy: a.expect_sequences.map(|e| windows.len() as i64 - e as i64),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    m.output("summary.json");
    m.note("summary", &summary);
    m.save(&a.out)?;
    println!(
        "{}: {} trajectories, {} sequences ({} train / {} test)",
        summary.scene, summary.trajectories, summary.sequences, summary.train, summary.test
    );
    if let (Some(e), Some(d)) = (summary.expected_sequences, summary.discrepancy) {
        if d != 0 {
            println!("sequence count differs from the expected {e} by {d:+}");
        }
    }
    Ok(())
}

pub fn augment(g: &Global, a: &AugmentArgs) -> CliResult<()> {
    let mut cfg = config(g)?;
    if let Some(f) = &a.train_fractions {
        cfg.train_fractions = f.clone();
    }
    if let Some(f) = a.eval_fraction {
        cfg.eval_fraction = f;
    }
    if let Some(s) = a.samples {
        cfg.augment.samples = s;
    }
    finish(&mut cfg)?;
    let train = load_pairs(&a.train)?;
    let test = load_pairs(&a.test)?;
    let seeds = cfg.seeds();
    let train_aug = data::domain_randomize(&train, &cfg.train_fractions, &cfg.augment, seeds.augment)?;
    let test_eval = data::filter_only(&test, cfg.eval_fraction, &cfg.augment, seeds.eval_noise)?;

    create_dir(&a.out)?;
    let mut m = Manifest::new("augment", a, &cfg);
    m.input(&a.train)?;
    m.input(&a.test)?;
    save_pairs(&a.out, "train_aug.jsonl", &train_aug, &mut m)?;
    save_pairs(&a.out, "test_eval.jsonl", &test_eval, &mut m)?;
    m.save(&a.out)?;
    println!(
        "{} training pairs from {} windows, {} filtered test pairs",
        train_aug.len(),
        train.len(),
        test_eval.len()
    );
    Ok(())
}

/// Index of a trained model directory.
#[derive(Debug, Serialize, Deserialize)]
struct ModelIndex {
    format: String,
    method: Method,
    net: NetConfig,
    checkpoints: Vec<String>,
}

pub fn train(g: &Global, a: &TrainArgs) -> CliResult<()> {
    let mut cfg = config(g)?;
    if let Some(v) = a.members {
        cfg.members = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.beta {
        cfg.net.beta = v;
    }
    if let Some(v) = a.dropout_p {
        cfg.dropout_p = v;
    }
    finish(&mut cfg)?;
    let pairs = load_pairs(&a.data)?;
    let started = Instant::now();
    let model = match a.method {
        Method::Ensemble => train_ensemble(&pairs, &cfg, cfg.members)?,
        Method::Dropout => train_dropout(&pairs, &cfg)?,
    };

    create_dir(&a.out)?;
    let mut m = Manifest::new("train", a, &cfg);
    m.input(&a.data)?;
    let mut names = Vec::new();
    for (i, p) in model.members.iter().enumerate() {
        let name = format!("member_{i:03}.json");
        let path = a.out.join(&name);
        writing(&path, save_checkpoint(&path, &model.cfg, p))?;
        m.output(name.clone());
        names.push(name);
    }
    let index = ModelIndex {
        format: MODEL_FORMAT.into(),
        method: a.method,
        net: model.cfg.clone(),
        checkpoints: names,
    };
    write_json(&a.out.join(MODEL_INDEX), &index)?;
    m.output(MODEL_INDEX);
    let mut table = Table::new(&["member", "epoch", "nll", "mse", "total"]);
    for (i, h) in model.histories.iter().enumerate() {
        for e in h {
            table.row([i.to_string(), e.epoch.to_string(), e.nll.to_string(), e.mse.to_string(), e.total.to_string()]);
        }
    }
    table.save(&a.out.join("loss.csv"))?;
    m.output("loss.csv");
    m.note("aborted", &model.aborted);
    m.save(&a.out)?;

    for (i, h) in model.histories.iter().enumerate() {
        if let Some(last) = h.last() {
            println!("member {i}: epoch {} nll {:.4} mse {:.5}", last.epoch, last.nll, last.mse);
        }
    }
    eprintln!("trained in {:.1} s", started.elapsed().as_secs_f64());
    match model.aborted.first() {
        Some((i, reason)) => Err(CliError::Aborted(format!("member {i}: {reason}"))),
        None => Ok(()),
    }
}

fn load_model(dir: &Path) -> CliResult<(Method, TrainedModel)> {
    let path = dir.join(MODEL_INDEX);
    let index: ModelIndex = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| uqtraj::Error::ArtifactMismatch(format!("{}: {e}", path.display())))?;
    if index.format != MODEL_FORMAT {
        return Err(uqtraj::Error::ArtifactMismatch(format!("{}: unknown format `{}`", path.display(), index.format)).into());
    }
    let mut members = Vec::new();
    for name in &index.checkpoints {
        let p = dir.join(name);
        let (net, params): (NetConfig, NetParams<f64>) = reading(&p, load_checkpoint(&p))?;
        if net != index.net {
            return Err(uqtraj::Error::ArtifactMismatch(format!("{}: configuration differs from the model index", p.display())).into());
        }
        members.push(params);
    }
    Ok((
        index.method,
        TrainedModel {
            cfg: index.net,
            members,
            histories: Vec::new(),
            aborted: Vec::new(),
        },
    ))
}

fn predictor(method: Method, model: &TrainedModel, samples: usize, seed: u64) -> CliResult<Predictor> {
    Ok(match method {
        Method::Ensemble => Predictor::ensemble(model)?,
        Method::Dropout => Predictor::dropout(model, samples, seed)?,
    })
}

const FORECAST_HEADER: [&str; 23] = [
    "step", "truth_x", "truth_y", "mean_x", "mean_y", "sens_xx", "sens_xy", "sens_yy", "pred_xx", "pred_xy",
    "pred_yy", "aleatoric_xx", "aleatoric_xy", "aleatoric_yy", "epistemic_xx", "epistemic_xy", "epistemic_yy",
    "outer_xx", "outer_xy", "outer_yy", "observed", "origin_x", "origin_y",
];

fn cov_fields(c: CovMatrix2<f64>) -> [String; 3] {
    [c.sxx.to_string(), c.sxy.to_string(), c.syy.to_string()]
}

/// Plot-ready forecast in world coordinates: observed steps (negative step
/// index, truth only) followed by the forecast steps.
fn forecast_table(pair: &SequencePair<f64>, s: &PredictiveSummary<f64>) -> Table {
    let o = pair.origin;
    let mut t = Table::new(&FORECAST_HEADER);
    let n = pair.past.len() as i64;
    for (i, st) in pair.past.iter().enumerate() {
        let mut row = vec![(i as i64 - n + 1).to_string(), (st.x + o[0]).to_string(), (st.y + o[1]).to_string()];
        row.extend(std::iter::repeat_n(String::new(), 17));
        row.extend(["1".to_string(), o[0].to_string(), o[1].to_string()]);
        t.row(row);
    }
    for (k, st) in s.steps.iter().enumerate() {
        let truth: [String; 2] = match pair.future.get(k) {
            Some(f) => [(f.x + o[0]).to_string(), (f.y + o[1]).to_string()],
            None => [String::new(), String::new()],
        };
        let mut row = vec![(k + 1).to_string()];
        row.extend(truth);
        row.extend([(st.mean[0] + o[0]).to_string(), (st.mean[1] + o[1]).to_string()]);
        row.extend(cov_fields(st.sensing));
        row.extend(cov_fields(st.total));
        row.extend(cov_fields(st.aleatoric));
        row.extend(cov_fields(st.epistemic));
        row.extend(cov_fields(outer_shape(st.sensing, st.total)));
        row.extend(["0".to_string(), o[0].to_string(), o[1].to_string()]);
        t.row(row);
    }
    t
}

#[derive(Debug, Serialize)]
struct EvaluationRecord<'a> {
    label: &'a str,
    method: Method,
    networks: usize,
    n_sequences: usize,
    test_nll: f64,
    test_position_mse: f64,
    test_cov_mse: f64,
    reports: &'a [MetricReport],
}

pub fn evaluate(g: &Global, a: &EvaluateArgs) -> CliResult<()> {
    let mut cfg = config(g)?;
    if let Some(s) = &a.sigma_scales {
        cfg.sigma_scales = s.clone();
    }
    if let Some(s) = a.dropout_samples {
        cfg.dropout_samples = s;
    }
    finish(&mut cfg)?;
    let (method, model) = load_model(&a.model)?;
    let pred = predictor(method, &model, cfg.dropout_samples, cfg.seeds().dropout_predict)?;
    let test = load_pairs(&a.test)?;
    let eval = run_evaluation(&pred, &test, &cfg.sigma_scales)?;
    let label = a.label.clone().unwrap_or_else(|| format!("{method:?}").to_lowercase());

    create_dir(&a.out)?;
    let mut m = Manifest::new("evaluate", a, &cfg);
    m.input(&a.model.join(MODEL_INDEX))?;
    m.input(&a.test)?;
    let mut header = vec!["label", "method", "networks"];
    header.extend(MetricReport::CSV_HEADER.split(','));
    header.extend(["test_nll", "test_position_mse", "test_cov_mse"]);
    let mut table = Table::new(&header);
    for r in &eval.reports {
        let mut row = vec![label.clone(), format!("{method:?}").to_lowercase(), model.members.len().to_string()];
        row.extend(r.csv_row().split(',').map(str::to_string));
        row.extend([eval.test_nll.to_string(), eval.test_position_mse.to_string(), eval.test_cov_mse.to_string()]);
        table.row(row);
    }
    table.save(&a.out.join("metrics.csv"))?;
    m.output("metrics.csv");
    write_json(
        &a.out.join("metrics.json"),
        &EvaluationRecord {
            label: &label,
            method,
            networks: model.members.len(),
            n_sequences: test.len(),
            test_nll: eval.test_nll,
            test_position_mse: eval.test_position_mse,
            test_cov_mse: eval.test_cov_mse,
            reports: &eval.reports,
        },
    )?;
    m.output("metrics.json");

    let dumps = a.dump.min(test.len());
    if dumps > 0 {
        let dir = a.out.join("forecasts");
        create_dir(&dir)?;
        for i in 0..dumps {
            let j = i * test.len() / dumps;
            let name = format!("forecasts/seq_{:06}.csv", test[j].seq);
            forecast_table(&test[j], &eval.summaries[j]).save(&a.out.join(&name))?;
            m.output(name);
        }
    }
    m.save(&a.out)?;

    println!(
        "test NLL {:.4}  position MSE {:.4}  covariance MSE {:.3e}",
        eval.test_nll, eval.test_position_mse, eval.test_cov_mse
    );
    for r in &eval.reports {
        println!(
            "{:>4}σ {:<15} ADE {:.3} FDE {:.3} PICP {:.3} MPIW {:.3}",
            r.sigma_scale, r.uncertainty_mode, r.ade, r.fde, r.picp, r.mpiw
        );
    }
    Ok(())
}

pub fn ood_predict(g: &Global, a: &OodArgs) -> CliResult<()> {
    let mut cfg = config(g)?;
    if let Some(s) = a.dropout_samples {
        cfg.dropout_samples = s;
    }
    finish(&mut cfg)?;
    let (method, model) = load_model(&a.model)?;
    let seeds = cfg.seeds();
    let pred = predictor(method, &model, cfg.dropout_samples, seeds.dropout_predict)?;

    create_dir(&a.out)?;
    let mut m = Manifest::new("ood-predict", a, &cfg);
    m.input(&a.model.join(MODEL_INDEX))?;
    let mut summary = Table::new(&["track", "observed", "truth_steps", "epistemic_trace", "total_trace", "ade"]);
    for path in &a.tracks {
        m.input(path)?;
        let track: Vec<Point2<f64>> = parse_track(&read_text(path)?, &path.display().to_string())?;
        let pair = observed_pair(&track, &cfg, seeds.eval_noise).map_err(|e| CliError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let s = pred.predict_pair(&pair)?;
        let stem = track_stem(path);
        let name = format!("{stem}.csv");
        forecast_table(&pair, &s).save(&a.out.join(&name))?;
        m.output(name);
        let k = s.steps.len() as f64;
        let epi = s.steps.iter().map(|st| st.epistemic.trace()).sum::<f64>() / k;
        let tot = s.steps.iter().map(|st| st.total.trace()).sum::<f64>() / k;
        let ade = (!pair.future.is_empty()).then(|| {
            let n = pair.future.len();
            s.steps
                .iter()
                .zip(&pair.future)
                .map(|(st, f)| (st.mean[0] - f.x).hypot(st.mean[1] - f.y))
                .sum::<f64>()
                / n as f64
        });
        summary.row([
            stem.clone(),
            pair.past.len().to_string(),
            pair.future.len().to_string(),
            epi.to_string(),
            tot.to_string(),
            ade.map(|v| v.to_string()).unwrap_or_default(),
        ]);
        println!("{stem}: mean epistemic trace {epi:.4}, mean total trace {tot:.4}");
    }
    summary.save(&a.out.join("summary.csv"))?;
    m.output("summary.csv");
    m.save(&a.out)
}

fn track_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "track".into())
}

fn synthetic_examples(cfg: &NetConfig, n: usize) -> Vec<Example<f64>> {
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

pub fn grad_check(g: &Global, a: &GradCheckArgs) -> CliResult<()> {
    let mut cfg = config(g)?;
    finish(&mut cfg)?;
    let net = NetConfig {
        beta: cfg.net.beta,
        loss_weight_mse: cfg.net.loss_weight_mse,
        ..NetConfig::tiny()
    };
    let examples = match &a.data {
        Some(p) => load_pairs(p)?
            .iter()
            .take(a.examples)
            .map(Example::from_pair)
            .collect::<uqtraj::Result<Vec<_>>>()?,
        None => synthetic_examples(&net, a.examples),
    };
    let objective = match a.objective {
        GradTarget::Joint => Objective::Joint,
        GradTarget::Nll => Objective::Nll,
        GradTarget::CovMse => Objective::CovMse,
    };
    let params = NetParams::init(&net, cfg.seed);
    let started = Instant::now();
    let outcome = check_gradients(&params, &net, &examples, objective, a.tolerance);
    let seconds = started.elapsed().as_secs_f64();
    if let Some(out) = &a.out {
        create_dir(out)?;
        let mut m = Manifest::new("grad-check", a, &cfg);
        if let Some(p) = &a.data {
            m.input(p)?;
        }
        m.note("seconds", seconds);
        match &outcome {
            Ok(r) => m.note("report", r),
            Err(e) => m.note("failure", e.to_string()),
        }
        m.save(out)?;
    }
    let report = outcome?;
    println!(
        "{} parameters checked, max relative error {:.3e} (parameter {}) in {seconds:.2} s",
        report.checked, report.max_rel_error, report.worst_index
    );
    Ok(())
}
