//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 7-11 read scene annotation files from `UQTRAJ_DATA_DIR`. When
//! the directory or a scene file is missing, those criteria are reported as
//! FAIL with the reason and do not change the exit status; every criterion
//! that runs and fails makes the process exit non-zero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use uqtraj::data::{ingest, window_all, IngestConfig, SequencePair};
use uqtraj::geometry::{CovMatrix2, CovMatrix4, Ellipse, Point2};
use uqtraj::kalman::{filter_trajectory, predict, update, KfConfig};
use uqtraj::metrics::{picp, Forecast, UncertaintyMode};
use uqtraj::net::{grad_check, Example, NetConfig, NetParams, Objective};
use uqtraj::pipeline::{evaluate, prepare, train_dropout, train_ensemble, Evaluation, ExperimentConfig, Predictor, TrainedModel};
use uqtraj::sampling::{sample_trajectories, stream_rng, CtsConfig};
use uqtraj::uncertainty::{in_minkowski_sum, outer_shape, support};
use uqtraj::uq::{ensemble_predict, mc_dropout_predict, Ensemble};
use uqtraj::Scalar;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Could not run: input data missing.
    Unavailable(String),
}

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gradient_check() -> Outcome {
    let cfg = NetConfig {
        beta: 0.5,
        ..NetConfig::tiny()
    };
    let examples: Vec<Example<f64>> = (0..4)
        .map(|j| Example {
            input: (0..cfg.input_dim()).map(|i| ((i * 5 + j * 11) as f64 * 0.17).sin()).collect(),
            truth: (0..cfg.future_len).map(|k| [0.4 * k as f64, ((k + j) as f64 * 0.3).sin()]).collect(),
            target_cov: (0..cfg.future_len)
                .map(|k| CovMatrix2::new(0.2 + 0.01 * k as f64, -0.03, 0.25))
                .collect(),
        })
        .collect();
    let start = Instant::now();
    let r = grad_check(&NetParams::init(&cfg, 17), &cfg, &examples, Objective::Joint, 1e-4);
    let secs = start.elapsed().as_secs_f64();
    match r {
        Ok(rep) => verdict(
            secs < 30.0,
            format!(
                "joint loss, {} parameters, max relative error {:.2e} < 1e-4, {secs:.2} s",
                rep.checked, rep.max_rel_error
            ),
        ),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

// ---------------------------------------------------------------- 2

fn kalman_equivalence() -> Outcome {
    let (dt, q, rx, ry) = (0.4, 0.05, 0.02, 0.05);
    let cfg = KfConfig {
        dt,
        q_scale: q,
        r: CovMatrix2::diag(rx, ry),
        p0: CovMatrix4::diag([rx, ry, 1.0, 1.0]),
    };
    let z: Vec<Point2<f64>> = (0..50)
        .map(|k| {
            let t = k as f64 * dt;
            [1.1 * t + 0.3 * (2.3 * t).sin(), 0.5 * t - 0.2 * (1.1 * t).cos()]
        })
        .collect();
    let post = match filter_trajectory(&z, &cfg) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut worst_1d: f64 = 0.0;
    for (axis, r) in [(0usize, rx), (1, ry)] {
        let mut x = [z[0][axis], (z[1][axis] - z[0][axis]) / dt];
        let mut p = [[r, 0.0], [0.0, 1.0]];
        for k in 0..z.len() {
            if k > 0 {
                let xp = [x[0] + dt * x[1], x[1]];
                let p00 = p[0][0] + 2.0 * dt * p[0][1] + dt * dt * p[1][1] + q * dt.powi(4) / 4.0;
                let p01 = p[0][1] + dt * p[1][1] + q * dt.powi(3) / 2.0;
                let p11 = p[1][1] + q * dt * dt;
                let s = p00 + r;
                let (k0, k1) = (p00 / s, p01 / s);
                let y = z[k][axis] - xp[0];
                x = [xp[0] + k0 * y, xp[1] + k1 * y];
                p = [[(1.0 - k0) * p00, (1.0 - k0) * p01], [(1.0 - k0) * p01, p11 - k1 * p01]];
            }
            let s = post.states[k];
            let c = post.covs[k];
            let got = [[s.x, s.y][axis], [s.u, s.v][axis], c.get(axis, axis), c.get(axis, axis + 2), c.get(axis + 2, axis + 2)];
            let want = [x[0], x[1], p[0][0], p[0][1], p[1][1]];
            for (g, w) in got.iter().zip(&want) {
                worst_1d = worst_1d.max((g - w).abs());
            }
        }
    }

    let mut worst_joseph: f64 = 0.0;
    let full = KfConfig {
        r: CovMatrix2::new(0.03, 0.01, 0.04),
        ..cfg
    };
    let post = filter_trajectory(&z, &full).expect("filter");
    for k in 1..z.len() {
        let (xb, pb) = predict(&post.states[k - 1], &post.covs[k - 1], &full).expect("predict");
        let u = update(&xb, &pb, z[k], &full).expect("update");
        let pd = pb.to_dense();
        let rd = full.r.to_dense();
        let mut a = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                let kh = if j < 2 { u.gain[i * 2 + j] } else { 0.0 };
                a[i * 4 + j] = f64::from(u8::from(i == j)) - kh;
            }
        }
        let got = u.cov.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let mut v = 0.0;
                for m in 0..4 {
                    for n in 0..4 {
                        v += a[i * 4 + m] * pd[m * 4 + n] * a[j * 4 + n];
                    }
                }
                for m in 0..2 {
                    for n in 0..2 {
                        v += u.gain[i * 2 + m] * rd[m * 2 + n] * u.gain[j * 2 + n];
                    }
                }
                worst_joseph = worst_joseph.max((got[i * 4 + j] - v).abs());
            }
        }
    }
    verdict(
        worst_1d < 1e-8 && worst_joseph < 1e-8,
        format!("max |4-state - 1D oracle| {worst_1d:.1e}, max |P - Joseph form| {worst_joseph:.1e} (tolerance 1e-8)"),
    )
}

// ---------------------------------------------------------------- 3

fn decomposition_identity() -> Outcome {
    let cfg = NetConfig::default();
    let ens = Ensemble::new(cfg.clone(), (0..5).map(|i| NetParams::init(&cfg, 100 + i)).collect()).expect("ensemble");
    let drop_cfg = NetConfig {
        dropout_p: 0.5,
        ..cfg.clone()
    };
    let drop_params = NetParams::init(&drop_cfg, 7);
    let mut rng = stream_rng(2024, 0);
    let mut worst: f64 = 0.0;
    let mut psd = true;
    for i in 0..100 {
        let x: Vec<f64> = (0..cfg.input_dim()).map(|_| f64::standard_normal(&mut rng)).collect();
        let a = ensemble_predict(&ens, &x).expect("ensemble predict");
        let b = mc_dropout_predict(&drop_params, &drop_cfg, &x, 50, i).expect("dropout predict");
        for st in a.steps.iter().chain(&b.steps) {
            let d = st.total - (st.aleatoric + st.epistemic);
            worst = worst.max(d.sxx.abs()).max(d.sxy.abs()).max(d.syy.abs());
            psd &= st.epistemic.is_psd() && st.aleatoric.is_psd();
        }
    }
    verdict(
        worst <= 1e-9 && psd,
        format!("100 inputs, ensemble M=5 and dropout B=50: max |total - (aleatoric + epistemic)| = {worst:.1e}, all parts PSD: {psd}"),
    )
}

// ---------------------------------------------------------------- 4

fn random_shape<R: Rng>(rng: &mut R) -> CovMatrix2<f64> {
    let major = 10f64.powf(rng.random_range(-2.0..1.0));
    let ratio = 10f64.powf(rng.random_range(-2.5..0.0));
    CovMatrix2::from_eigen(major, major * ratio, rng.random_range(0.0..std::f64::consts::PI))
}

/// `max_u uᵀq − h₁(u) − h₂(u)` over unit directions: positive outside the
/// Minkowski sum, non-positive inside.
fn support_margin(a: &Ellipse<f64>, b: &Ellipse<f64>, q: Point2<f64>) -> f64 {
    let g = |t: f64| {
        let u = [t.cos(), t.sin()];
        u[0] * q[0] + u[1] * q[1] - support(a, u) - support(b, u)
    };
    let n = 2048;
    let step = std::f64::consts::TAU / n as f64;
    let best = (0..n).map(|i| i as f64 * step).fold((0.0, f64::NEG_INFINITY), |acc, t| {
        let v = g(t);
        if v > acc.1 {
            (t, v)
        } else {
            acc
        }
    });
    let (mut lo, mut hi) = (best.0 - step, best.0 + step);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) < g(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.1.max(g(0.5 * (lo + hi)))
}

fn boundary_point(shape: CovMatrix2<f64>, t: f64) -> Point2<f64> {
    let e = shape.eigen();
    let (s, c) = e.angle.sin_cos();
    let (a, b) = (e.major.max(0.0).sqrt() * t.cos(), e.minor.max(0.0).sqrt() * t.sin());
    [c * a - s * b, s * a + c * b]
}

fn minkowski_soundness() -> Outcome {
    const BAND: f64 = 1e-6;
    let mut rng = stream_rng(4, 0);
    let (mut agree, mut total, mut outside_band) = (0usize, 0usize, 0usize);
    let (mut witnessed, mut contradicted) = (0usize, 0usize);
    for _ in 0..100 {
        let (sa, sb) = (random_shape(&mut rng), random_shape(&mut rng));
        let a = Ellipse::centered(sa, 1.0);
        let b = Ellipse::centered(sb, 1.0);
        for _ in 0..100 {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let u = [t.cos(), t.sin()];
            let reach = support(&a, u) + support(&b, u);
            let r = reach * rng.random_range(0.0..1.5);
            let q = [r * u[0], r * u[1]];
            let exact = in_minkowski_sum(&a, &b, [0.0, 0.0], q).expect("membership");
            let margin = support_margin(&a, &b, q);
            // Rejection sampling: a uniform draw p in A with q - p in B
            // witnesses membership.
            let witness = (0..2_000).any(|_| {
                let p = boundary_point(sa, rng.random_range(0.0..std::f64::consts::TAU));
                let r = rng.random_range(0.0f64..1.0).sqrt();
                sb.mahalanobis_sq([q[0] - r * p[0], q[1] - r * p[1]]) <= 1.0
            });
            witnessed += usize::from(witness);
            contradicted += usize::from(witness && !exact);
            total += 1;
            if exact == (margin <= 0.0) {
                agree += 1;
            } else if margin.abs() > BAND {
                outside_band += 1;
            }
        }
    }
    let rate = agree as f64 / total as f64;

    let mut rng = stream_rng(4, 1);
    let mut escaped = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let (sa, sb) = (random_shape(&mut rng), random_shape(&mut rng));
        let outer = outer_shape(sa, sb);
        for _ in 0..1_000 {
            let p = boundary_point(sa, rng.random_range(0.0..std::f64::consts::TAU));
            let q = boundary_point(sb, rng.random_range(0.0..std::f64::consts::TAU));
            let d = outer.mahalanobis_sq([p[0] + q[0], p[1] + q[1]]);
            worst = worst.max(d);
            if d > 1.0 + 1e-9 {
                escaped += 1;
            }
        }
    }
    verdict(
        rate >= 0.999 && outside_band == 0 && escaped == 0 && contradicted == 0,
        format!(
            "exact vs support oracle: {agree}/{total} agree ({:.2}%), {outside_band} outside the 1e-6 band; \
             rejection sampling witnessed {witnessed} points inside, {contradicted} judged outside; \
             10^6 boundary sums, {escaped} outside the outer ellipse (max normalized radius² {worst:.12})",
            100.0 * rate
        ),
    )
}

// ---------------------------------------------------------------- 5

fn cts_marginals() -> Outcome {
    let z: Vec<Point2<f64>> = (0..20).map(|k| [0.5 * k as f64, 0.1 * (k as f64).powf(1.3)]).collect();
    let post = filter_trajectory(&z, &KfConfig::with_measurement_std(0.15, 0.05, 0.4)).expect("filter");
    let n = 100_000;
    let cfg = CtsConfig {
        m: n,
        lambda: 0.9,
        rng_seed: 55,
    };
    let samples = sample_trajectories(&post, &cfg).expect("sampling");
    let covs = post.position_covs();
    let mut worst_z: f64 = 0.0;
    for (k, (s, c)) in post.states.iter().zip(&covs).enumerate() {
        let (mut mx, mut my) = (0.0, 0.0);
        for traj in &samples {
            mx += traj.states[k].x;
            my += traj.states[k].y;
        }
        mx /= n as f64;
        my /= n as f64;
        let zx = (mx - s.x) / (c.sxx / n as f64).sqrt();
        let zy = (my - s.y) / (c.syy / n as f64).sqrt();
        worst_z = worst_z.max(zx.abs()).max(zy.abs());
    }
    let again = sample_trajectories(&post, &CtsConfig { m: 1_000, ..cfg }).expect("sampling");
    let identical = again == sample_trajectories(&post, &CtsConfig { m: 1_000, ..cfg }).expect("sampling")
        && again[..] == samples[..1_000];
    verdict(
        worst_z < 3.0 && identical,
        format!("10^5 samples over 20 steps: max |mean error| = {worst_z:.2} standard errors (< 3); fixed seed bit-identical: {identical}"),
    )
}

// ---------------------------------------------------------------- 6

fn picp_oracle() -> Outcome {
    let n = 100_000;
    let mut rng = stream_rng(6, 0);
    let truth: Vec<Vec<Point2<f64>>> = (0..n)
        .map(|_| vec![[f64::standard_normal(&mut rng), f64::standard_normal(&mut rng)]])
        .collect();
    let f = Forecast {
        means: vec![[0.0, 0.0]],
        prediction: vec![CovMatrix2::identity()],
        sensing: vec![CovMatrix2::zero()],
    };
    let c = picp(&vec![f; n], &truth, 1.0, UncertaintyMode::PredictionOnly).expect("picp");
    let expected = 1.0 - (-0.5f64).exp();
    verdict(
        (c.picp - expected).abs() <= 0.01,
        format!("PICP {:.4} vs P(chi2_2 <= 1) = {expected:.4} (tolerance 0.01)", c.picp),
    )
}

// ---------------------------------------------------------------- data

const SCENES: [(&str, &[&str], i64); 5] = [
    ("eth", &["eth.txt", "biwi_eth.txt"], 6),
    ("hotel", &["hotel.txt", "biwi_hotel.txt"], 10),
    ("univ", &["univ.txt", "students003.txt"], 10),
    ("zara01", &["zara01.txt", "zara1.txt", "crowds_zara01.txt"], 10),
    ("zara02", &["zara02.txt", "zara2.txt", "crowds_zara02.txt"], 10),
];

fn scene_file(scene: &str) -> Result<(PathBuf, i64), String> {
    let dir = std::env::var_os("UQTRAJ_DATA_DIR").ok_or("UQTRAJ_DATA_DIR is not set; scene annotations unavailable")?;
    let dir = Path::new(&dir);
    let (_, names, stride) = SCENES.iter().find(|s| s.0 == scene).expect("known scene");
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .map(|p| (p, *stride))
        .ok_or_else(|| format!("no annotation file for scene `{scene}` in {}", dir.display()))
}

fn scene_windows(scene: &str) -> Result<(Vec<SequencePair<f64>>, ExperimentConfig), String> {
    let (path, stride) = scene_file(scene)?;
    let cfg = ExperimentConfig {
        scene: scene.into(),
        ingest: IngestConfig {
            frame_stride: stride,
            ..IngestConfig::default()
        },
        members: 5,
        ..ExperimentConfig::default()
    };
    let trajs = ingest::<f64>(&path, &cfg.ingest).map_err(|e| e.to_string())?;
    Ok((window_all(&trajs), cfg))
}

/// Hotel: five members trained once. Member seeds do not depend on the
/// ensemble size, so the first `k` members are the size-`k` ensemble.
struct HotelRun {
    model: TrainedModel,
    test: Vec<SequencePair<f64>>,
    cfg: ExperimentConfig,
}

fn hotel() -> &'static Result<HotelRun, String> {
    static RUN: OnceLock<Result<HotelRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let (pairs, cfg) = scene_windows("hotel")?;
        let prep = prepare(pairs, &cfg).map_err(|e| e.to_string())?;
        let model = train_ensemble(&prep.train, &cfg, 5).map_err(|e| e.to_string())?;
        Ok(HotelRun {
            model,
            test: prep.test,
            cfg,
        })
    })
}

fn evaluate_first(run: &HotelRun, k: usize) -> Result<Evaluation, String> {
    let sub = TrainedModel {
        members: run.model.members[..k].to_vec(),
        histories: run.model.histories[..k].to_vec(),
        ..run.model.clone()
    };
    let pred = Predictor::ensemble(&sub).map_err(|e| e.to_string())?;
    evaluate(&pred, &run.test, &[1.0]).map_err(|e| e.to_string())
}

fn picp_of(e: &Evaluation, mode: UncertaintyMode) -> f64 {
    e.report(1.0, mode).expect("report").picp
}

fn ensemble_scaling() -> Outcome {
    let run = match hotel() {
        Ok(r) => r,
        Err(e) => return Outcome::Unavailable(e.clone()),
    };
    let (one, five) = match (evaluate_first(run, 1), evaluate_first(run, 5)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let in_range = |nll: f64, mse: f64| (-0.6..=0.0).contains(&nll) && (0.15..=0.30).contains(&mse);
    verdict(
        five.test_nll < one.test_nll && five.test_position_mse <= one.test_position_mse,
        format!(
            "NLL M=1 {:.3} -> M=5 {:.3}, MSE M=1 {:.3} -> M=5 {:.3}; M=5 within target magnitudes: {}",
            one.test_nll,
            five.test_nll,
            one.test_position_mse,
            five.test_position_mse,
            in_range(five.test_nll, five.test_position_mse)
        ),
    )
}

fn ensemble_coverage() -> Outcome {
    let run = match hotel() {
        Ok(r) => r,
        Err(e) => return Outcome::Unavailable(e.clone()),
    };
    let (one, three) = match (evaluate_first(run, 1), evaluate_first(run, 3)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let (p1, p3) = (
        picp_of(&one, UncertaintyMode::PredictionOnly),
        picp_of(&three, UncertaintyMode::PredictionOnly),
    );
    verdict(p3 - p1 >= 0.05, format!("1σ PICP M=1 {p1:.3}, M=3 {p3:.3} (gain {:+.3}, need >= 0.05)", p3 - p1))
}

fn total_uncertainty_gain() -> Outcome {
    let run = match hotel() {
        Ok(r) => r,
        Err(e) => return Outcome::Unavailable(e.clone()),
    };
    let three = match evaluate_first(run, 3) {
        Ok(e) => e,
        Err(e) => return Outcome::Fail(e),
    };
    let pred = picp_of(&three, UncertaintyMode::PredictionOnly);
    let total = picp_of(&three, UncertaintyMode::TotalExact);
    verdict(
        total - pred >= 0.05,
        format!(
            "M=3, R = {:.0}%: 1σ PICP prediction-only {pred:.3}, total {total:.3} (gain {:+.3}, need >= 0.05)",
            100.0 * run.cfg.eval_fraction,
            total - pred
        ),
    )
}

fn ensemble_vs_dropout() -> Outcome {
    let mut wins = 0;
    let mut notes = Vec::new();
    for (scene, _, _) in SCENES {
        let (pairs, mut cfg) = match scene_windows(scene) {
            Ok(v) => v,
            Err(e) => return Outcome::Unavailable(e),
        };
        cfg.members = 3;
        let run = || -> Result<(f64, f64, f64, f64), String> {
            let prep = prepare(pairs, &cfg).map_err(|e| e.to_string())?;
            let ens = train_ensemble(&prep.train, &cfg, 3).map_err(|e| e.to_string())?;
            let drop = train_dropout(&prep.train, &cfg).map_err(|e| e.to_string())?;
            let seeds = cfg.seeds();
            let pe = Predictor::ensemble(&ens).map_err(|e| e.to_string())?;
            let pd = Predictor::dropout(&drop, cfg.dropout_samples, seeds.dropout_predict).map_err(|e| e.to_string())?;
            let ee = evaluate(&pe, &prep.test, &[1.0]).map_err(|e| e.to_string())?;
            let ed = evaluate(&pd, &prep.test, &[1.0]).map_err(|e| e.to_string())?;
            let re = ee.report(1.0, UncertaintyMode::PredictionOnly).expect("report");
            let rd = ed.report(1.0, UncertaintyMode::PredictionOnly).expect("report");
            Ok((re.ade, rd.ade, re.mpiw, rd.mpiw))
        };
        match run() {
            Ok((ae, ad, me, md)) => {
                let win = ae <= ad && me <= md + 0.1;
                wins += usize::from(win);
                notes.push(format!("{scene}: ADE {ae:.2}/{ad:.2} MPIW {me:.2}/{md:.2}"));
            }
            Err(e) => notes.push(format!("{scene}: {e}")),
        }
    }
    verdict(wins >= 4, format!("{wins}/5 scenes favour the ensemble (ensemble/dropout): {}", notes.join("; ")))
}

fn hotel_sequence_count() -> Outcome {
    match scene_windows("hotel") {
        Ok((pairs, _)) => verdict(
            pairs.len() == 1597,
            format!("{} sequences (expected 1597, discrepancy {:+})", pairs.len(), pairs.len() as i64 - 1597),
        ),
        Err(e) => Outcome::Unavailable(e),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient check", gradient_check),
        ("Kalman filter equivalence", kalman_equivalence),
        ("decomposition identity", decomposition_identity),
        ("Minkowski soundness", minkowski_soundness),
        ("trajectory-sampling marginals", cts_marginals),
        ("PICP calibration oracle", picp_oracle),
        ("ensemble scaling", ensemble_scaling),
        ("ensemble vs single coverage", ensemble_coverage),
        ("total-uncertainty gain", total_uncertainty_gain),
        ("ensemble vs dropout", ensemble_vs_dropout),
        ("hotel sequence count", hotel_sequence_count),
    ];
    let (mut passed, mut failed, mut unavailable) = (0, 0, 0);
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => {
                passed += 1;
                ("PASS", d)
            }
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Unavailable(d) => {
                unavailable += 1;
                ("FAIL", format!("not run: {d}"))
            }
        };
        println!("criterion {:>2} {tag} {name} [{secs:.1} s]: {detail}", i + 1);
    }
    println!("acceptance: {passed} passed, {failed} failed, {unavailable} not run for lack of data");
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
