//! Constant-velocity Kalman filter over `(x, y, u, v)` with position
//! measurements.
//!
//! Process noise is the discrete white-noise-acceleration model applied per
//! axis: for acceleration variance `q`,
//!
//! ```text
//! Q_axis = q * [[dt^4/4, dt^3/2],
//!               [dt^3/2, dt^2  ]]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, CovMatrix4, Point2, TrackState};
use crate::linalg;
use crate::scalar::Scalar;

/// Singularity threshold on `det S`.
pub const SINGULAR_DET: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfConfig<T> {
    /// Step duration in seconds.
    pub dt: T,
    /// Acceleration noise intensity.
    pub q_scale: T,
    /// Measurement noise.
    pub r: CovMatrix2<T>,
    /// Covariance of the initial state.
    pub p0: CovMatrix4<T>,
}

impl<T: Scalar> KfConfig<T> {
    pub const DEFAULT_DT: f64 = 0.4;
    pub const DEFAULT_Q_SCALE: f64 = 0.05;

    /// Isotropic measurement noise with standard deviation `sigma`; the
    /// initial covariance is `diag(σ², σ², 1, 1)`.
    pub fn with_measurement_std(sigma: T, q_scale: T, dt: T) -> Self {
        let var = sigma * sigma;
        Self {
            dt,
            q_scale,
            r: CovMatrix2::isotropic(var),
            p0: CovMatrix4::diag([var, var, T::one(), T::one()]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if !(self.q_scale >= T::zero()) {
            return Err(Error::InvalidArgument("q_scale must be non-negative".into()));
        }
        if !self.r.is_psd() {
            return Err(Error::InvalidCovariance("measurement noise R".into()));
        }
        if !self.p0.is_psd() {
            return Err(Error::InvalidCovariance("initial covariance p0".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for KfConfig<T> {
    fn default() -> Self {
        Self::with_measurement_std(
            T::lit(0.1),
            T::lit(Self::DEFAULT_Q_SCALE),
            T::lit(Self::DEFAULT_DT),
        )
    }
}

/// Posterior of a full filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfPosterior<T> {
    pub states: Vec<TrackState<T>>,
    pub covs: Vec<CovMatrix4<T>>,
    pub innovations: Vec<Point2<T>>,
}

impl<T: Scalar> KfPosterior<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn position_covs(&self) -> Vec<CovMatrix2<T>> {
        self.covs.iter().map(CovMatrix4::position_block).collect()
    }
}

/// Result of one measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome<T> {
    pub state: TrackState<T>,
    pub cov: CovMatrix4<T>,
    pub innovation: Point2<T>,
    pub innovation_cov: CovMatrix2<T>,
    /// Kalman gain, 4x2 row-major.
    pub gain: [T; 8],
}

/// `F` for step `dt`, row-major.
pub fn transition<T: Scalar>(dt: T) -> [T; 16] {
    let (o, z) = (T::one(), T::zero());
    [
        o, z, dt, z, //
        z, o, z, dt, //
        z, z, o, z, //
        z, z, z, o,
    ]
}

pub fn process_noise<T: Scalar>(dt: T, q_scale: T) -> CovMatrix4<T> {
    let dt2 = dt * dt;
    let pos = q_scale * dt2 * dt2 / T::lit(4.0);
    let cross = q_scale * dt2 * dt / T::lit(2.0);
    let vel = q_scale * dt2;
    let mut q = CovMatrix4::zero();
    for axis in 0..2 {
        q.set(axis, axis, pos);
        q.set(axis, axis + 2, cross);
        q.set(axis + 2, axis + 2, vel);
    }
    q
}

/// Time update `x̄ = F x`, `P̄ = F P Fᵀ + Q`.
pub fn predict<T: Scalar>(
    x: &TrackState<T>,
    p: &CovMatrix4<T>,
    cfg: &KfConfig<T>,
) -> Result<(TrackState<T>, CovMatrix4<T>)> {
    if !p.is_psd() {
        return Err(Error::InvalidCovariance("prior covariance is not PSD".into()));
    }
    let f = transition(cfg.dt);
    let s = x.as_vector();
    let mut next = [T::zero(); 4];
    for (i, out) in next.iter_mut().enumerate() {
        *out = (0..4).map(|j| f[i * 4 + j] * s[j]).sum();
    }
    let fp = linalg::matmul(&f, &p.to_dense(), 4, 4, 4);
    let fpf = linalg::matmul(&fp, &linalg::transpose(&f, 4, 4), 4, 4, 4);
    let p_bar = CovMatrix4::from_dense(&fpf).add(&process_noise(cfg.dt, cfg.q_scale));
    Ok((TrackState::from_vector(next, x.t + 1), p_bar))
}

/// Measurement update with `H = [I₂ 0]`, `P = (I − K H) P̄`.
pub fn update<T: Scalar>(
    x_bar: &TrackState<T>,
    p_bar: &CovMatrix4<T>,
    z: Point2<T>,
    cfg: &KfConfig<T>,
) -> Result<UpdateOutcome<T>> {
    let pd = p_bar.to_dense();
    let s = p_bar.position_block() + cfg.r;
    let det = s.det();
    if !(det.abs() >= T::lit(SINGULAR_DET)) {
        return Err(Error::SingularInnovation { det: det.as_f64() });
    }
    let s_inv = CovMatrix2::new(s.syy / det, -s.sxy / det, s.sxx / det);

    // P̄ Hᵀ is the first two columns of P̄.
    let mut gain = [T::zero(); 8];
    for i in 0..4 {
        let (a, b) = (pd[i * 4], pd[i * 4 + 1]);
        gain[i * 2] = a * s_inv.sxx + b * s_inv.sxy;
        gain[i * 2 + 1] = a * s_inv.sxy + b * s_inv.syy;
    }
    let innovation = [z[0] - x_bar.x, z[1] - x_bar.y];
    let mut state = x_bar.as_vector();
    for (i, s) in state.iter_mut().enumerate() {
        *s += gain[i * 2] * innovation[0] + gain[i * 2 + 1] * innovation[1];
    }

    // (I − K H) P̄ = P̄ − K (H P̄), where H P̄ is the first two rows of P̄.
    let mut post = pd;
    for i in 0..4 {
        for j in 0..4 {
            post[i * 4 + j] -= gain[i * 2] * pd[j] + gain[i * 2 + 1] * pd[4 + j];
        }
    }
    let mut cov = CovMatrix4::from_dense(&post);
    if !cov.is_psd() {
        cov = cov.repaired()?;
    }
    Ok(UpdateOutcome {
        state: TrackState::from_vector(state, x_bar.t),
        cov,
        innovation,
        innovation_cov: s,
        gain,
    })
}

/// Filters a measurement sequence. The initial state takes the first
/// measurement as position and the first finite difference as velocity,
/// with covariance `cfg.p0`; every later step is predict then update.
pub fn filter_trajectory<T: Scalar>(
    measurements: &[Point2<T>],
    cfg: &KfConfig<T>,
) -> Result<KfPosterior<T>> {
    if measurements.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "filter needs at least 2 measurements, got {}",
            measurements.len()
        )));
    }
    cfg.validate()?;
    let z0 = measurements[0];
    let z1 = measurements[1];
    let mut x = TrackState::new(
        z0[0],
        z0[1],
        (z1[0] - z0[0]) / cfg.dt,
        (z1[1] - z0[1]) / cfg.dt,
        0,
    );
    let mut p = cfg.p0;
    let mut out = KfPosterior {
        states: Vec::with_capacity(measurements.len()),
        covs: Vec::with_capacity(measurements.len()),
        innovations: Vec::with_capacity(measurements.len()),
    };
    out.states.push(x);
    out.covs.push(p);
    out.innovations.push([T::zero(); 2]);
    for (k, &z) in measurements.iter().enumerate().skip(1) {
        let (x_bar, p_bar) = predict(&x, &p, cfg).map_err(|e| e.at_step(k))?;
        let upd = update(&x_bar, &p_bar, z, cfg).map_err(|e| e.at_step(k))?;
        x = upd.state;
        p = upd.cov;
        out.states.push(x);
        out.covs.push(p);
        out.innovations.push(upd.innovation);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q: f64, r: f64) -> KfConfig<f64> {
        KfConfig::with_measurement_std(r.sqrt(), q, 0.4)
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn predict_deterministic_propagation() {
        let c = cfg(0.0, 1.0);
        let x = TrackState::new(0.0, 0.0, 1.0, 0.0, 0);
        let (xb, pb) = predict(&x, &CovMatrix4::zero(), &c).unwrap();
        assert_eq!(xb.as_vector(), [0.4, 0.0, 1.0, 0.0]);
        assert_eq!(pb, CovMatrix4::zero());
        assert_eq!(xb.t, 1);
    }

    #[test]
    fn predict_identity_covariance_matches_hand_product() {
        // F Fᵀ by hand: position rows [1 + dt², 0, dt, 0], velocity rows identity.
        let c = cfg(0.0, 1.0);
        let x = TrackState::new(1.0, 2.0, 0.0, 0.0, 0);
        let (_, pb) = predict(&x, &CovMatrix4::identity(), &c).unwrap();
        let dt = 0.4;
        let expected = [
            1.0 + dt * dt, 0.0, dt, 0.0, //
            0.0, 1.0 + dt * dt, 0.0, dt, //
            dt, 0.0, 1.0, 0.0, //
            0.0, dt, 0.0, 1.0,
        ];
        assert!(max_abs_diff(&pb.to_dense(), &expected) < 1e-15);
        assert!((pb.get(0, 0) - 1.16).abs() < 1e-15);
    }

    #[test]
    fn predict_zero_covariance_yields_closed_form_q() {
        let c = cfg(1.0, 1.0);
        let (_, pb) = predict(&TrackState::new(0.0, 0.0, 0.0, 0.0, 0), &CovMatrix4::zero(), &c).unwrap();
        let dt: f64 = 0.4;
        // G = [dt²/2, dt]ᵀ per axis, Q = G Gᵀ.
        let g = [dt * dt / 2.0, dt];
        assert!((pb.get(0, 0) - g[0] * g[0]).abs() < 1e-15);
        assert!((pb.get(0, 2) - g[0] * g[1]).abs() < 1e-15);
        assert!((pb.get(2, 2) - g[1] * g[1]).abs() < 1e-15);
        assert_eq!(pb.get(0, 1), 0.0);
        assert!((pb.get(1, 3) - g[0] * g[1]).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_indefinite_prior() {
        let mut p = CovMatrix4::identity();
        p.set(0, 0, -1.0);
        let r = predict(&TrackState::new(0.0, 0.0, 0.0, 0.0, 0), &p, &cfg(0.0, 1.0));
        assert!(matches!(r, Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn uninformative_measurement_leaves_prior() {
        let mut c = cfg(0.0, 1.0);
        c.r = CovMatrix2::isotropic(1e12);
        let xb = TrackState::new(1.0, 2.0, 0.5, -0.5, 3);
        let pb = CovMatrix4::identity();
        let u = update(&xb, &pb, [50.0, -50.0], &c).unwrap();
        assert!(max_abs_diff(&u.state.as_vector(), &xb.as_vector()) < 1e-9);
        assert!(max_abs_diff(&u.cov.to_dense(), &pb.to_dense()) < 1e-9);
    }

    #[test]
    fn uninformative_prior_snaps_to_measurement() {
        let c = cfg(0.0, 1.0);
        let pb = CovMatrix4::diag([1e12, 1e12, 1.0, 1.0]);
        let u = update(&TrackState::new(0.0, 0.0, 0.0, 0.0, 0), &pb, [3.0, -4.0], &c).unwrap();
        assert!((u.state.x - 3.0).abs() < 1e-9);
        assert!((u.state.y + 4.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_bayes_product_of_gaussians() {
        // Prior var 1, measurement var 1: K = 1/(1+1), posterior var = 1·1/(1+1).
        let c = cfg(0.0, 1.0);
        let pb = CovMatrix4::diag([1.0, 1.0, 0.0, 0.0]);
        let u = update(&TrackState::new(0.0, 0.0, 0.0, 0.0, 0), &pb, [2.0, 0.0], &c).unwrap();
        assert!((u.gain[0] - 0.5).abs() < 1e-15);
        assert!((u.cov.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((u.state.x - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_innovation_reported() {
        let mut c = cfg(0.0, 1.0);
        c.r = CovMatrix2::zero();
        let r = update(&TrackState::new(0.0, 0.0, 0.0, 0.0, 0), &CovMatrix4::zero(), [0.0, 0.0], &c);
        assert!(matches!(r, Err(Error::SingularInnovation { .. })));
    }

    #[test]
    fn straight_line_converges_and_trace_shrinks() {
        let c = cfg(0.0, 1e-4);
        let zs: Vec<[f64; 2]> = (0..30).map(|k| [0.5 * k as f64, 0.2 * k as f64]).collect();
        let post = filter_trajectory(&zs, &c).unwrap();
        for (s, z) in post.states.iter().zip(&zs).skip(5) {
            assert!((s.x - z[0]).abs() < 1e-6 && (s.y - z[1]).abs() < 1e-6);
        }
        let traces: Vec<f64> = post.covs.iter().map(CovMatrix4::trace).collect();
        for w in traces[3..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{traces:?}");
        }
    }

    #[test]
    fn constant_measurement_variance_decays_like_one_over_k() {
        // 1D oracle: static target (q = 0), prior var 1 then k unit-variance
        // updates gives posterior variance 1/(k+1). Velocity is started at
        // zero with zero variance so the x-axis reduces to that recursion.
        let mut c = cfg(0.0, 1.0);
        c.p0 = CovMatrix4::diag([1.0, 1.0, 0.0, 0.0]);
        let zs = vec![[2.0, -1.0]; 200];
        let post = filter_trajectory(&zs, &c).unwrap();
        for (k, p) in post.covs.iter().enumerate() {
            let expected = 1.0 / (k as f64 + 1.0);
            assert!((p.get(0, 0) - expected).abs() < 1e-12, "k={k}");
        }
        let last = post.covs.last().unwrap().get(0, 0);
        assert!((last * 200.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_step_is_predict_then_update() {
        let c = cfg(0.05, 0.01);
        let zs = [[0.0, 0.0], [0.3, 0.1]];
        let post = filter_trajectory(&zs, &c).unwrap();
        let x0 = TrackState::new(0.0, 0.0, 0.3 / 0.4, 0.1 / 0.4, 0);
        let (xb, pb) = predict(&x0, &c.p0, &c).unwrap();
        let u = update(&xb, &pb, zs[1], &c).unwrap();
        assert_eq!(post.states[1], u.state);
        assert_eq!(post.covs[1], u.cov);
    }

    #[test]
    fn filter_errors_carry_step() {
        let c = cfg(0.0, 1.0);
        assert!(filter_trajectory(&[[0.0, 0.0]], &c).is_err());
        let mut bad = c;
        bad.r = CovMatrix2::zero();
        bad.p0 = CovMatrix4::zero();
        let err = filter_trajectory(&[[0.0, 0.0], [1.0, 0.0]], &bad).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 1, .. }));
    }
}
