//! Kinematic states, covariance matrices and covariance ellipses.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_TOL};
use crate::scalar::Scalar;

pub type Point2<T> = [T; 2];

/// Planar kinematic state at a discrete step (one step = 0.4 s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState<T> {
    pub x: T,
    pub y: T,
    pub u: T,
    pub v: T,
    pub t: u64,
}

impl<T: Scalar> TrackState<T> {
    pub fn new(x: T, y: T, u: T, v: T, t: u64) -> Self {
        Self { x, y, u, v, t }
    }

    pub fn position(&self) -> Point2<T> {
        [self.x, self.y]
    }

    pub fn as_vector(&self) -> [T; 4] {
        [self.x, self.y, self.u, self.v]
    }

    pub fn from_vector(s: [T; 4], t: u64) -> Self {
        Self::new(s[0], s[1], s[2], s[3], t)
    }

    pub fn is_finite(&self) -> bool {
        self.as_vector().iter().all(|c| c.is_finite())
    }

    pub fn translated(&self, offset: Point2<T>) -> Self {
        Self {
            x: self.x + offset[0],
            y: self.y + offset[1],
            ..*self
        }
    }
}

/// Symmetric 2x2 covariance stored as `(sxx, sxy, syy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CovMatrix2<T> {
    pub sxx: T,
    pub sxy: T,
    pub syy: T,
}

/// Eigen-structure of a 2x2 covariance: `major >= minor`, `angle` is the
/// direction of the major eigenvector, counterclockwise from +x, in
/// `[-pi/2, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen2<T> {
    pub major: T,
    pub minor: T,
    pub angle: T,
}

impl<T: Scalar> CovMatrix2<T> {
    pub fn new(sxx: T, sxy: T, syy: T) -> Self {
        Self { sxx, sxy, syy }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one())
    }

    pub fn diag(a: T, b: T) -> Self {
        Self::new(a, T::zero(), b)
    }

    pub fn isotropic(var: T) -> Self {
        Self::diag(var, var)
    }

    pub fn det(&self) -> T {
        self.sxx * self.syy - self.sxy * self.sxy
    }

    pub fn trace(&self) -> T {
        self.sxx + self.syy
    }

    pub fn is_finite(&self) -> bool {
        self.sxx.is_finite() && self.sxy.is_finite() && self.syy.is_finite()
    }

    pub fn is_psd(&self) -> bool {
        let tol = T::lit(PSD_TOL);
        self.is_finite() && self.sxx >= -tol && self.syy >= -tol && self.det() >= -tol
    }

    pub fn to_dense(&self) -> [T; 4] {
        [self.sxx, self.sxy, self.sxy, self.syy]
    }

    /// Symmetric part of a dense row-major matrix.
    pub fn from_dense(m: &[T]) -> Self {
        Self::new(m[0], (m[1] + m[2]) * T::lit(0.5), m[3])
    }

    /// Returns `self` when PSD, otherwise the eigenvalue-clamped repair.
    pub fn repaired(&self) -> Result<Self> {
        if !self.is_finite() {
            return Err(Error::InvalidCovariance("non-finite 2x2 covariance".into()));
        }
        if self.is_psd() {
            return Ok(*self);
        }
        linalg::repair_psd(&self.to_dense(), 2).map(|m| Self::from_dense(&m))
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if !(det.abs() > T::zero()) || !det.is_finite() {
            return None;
        }
        Some(Self::new(self.syy / det, -self.sxy / det, self.sxx / det))
    }

    /// `dᵀ Σ⁻¹ d` via the adjugate.
    pub fn mahalanobis_sq(&self, d: Point2<T>) -> T {
        let det = self.det();
        (self.syy * d[0] * d[0] - T::lit(2.0) * self.sxy * d[0] * d[1] + self.sxx * d[1] * d[1])
            / det
    }

    pub fn mul_vec(&self, d: Point2<T>) -> Point2<T> {
        [
            self.sxx * d[0] + self.sxy * d[1],
            self.sxy * d[0] + self.syy * d[1],
        ]
    }

    pub fn outer(d: Point2<T>) -> Self {
        Self::new(d[0] * d[0], d[0] * d[1], d[1] * d[1])
    }

    pub fn eigen(&self) -> Eigen2<T> {
        let half = T::lit(0.5);
        let mean = (self.sxx + self.syy) * half;
        let dev = (self.sxx - self.syy) * half;
        let rad = (dev * dev + self.sxy * self.sxy).sqrt();
        let mut angle = half * (T::lit(2.0) * self.sxy).atan2(self.sxx - self.syy);
        if angle >= T::FRAC_PI_2() {
            angle -= T::PI();
        }
        Eigen2 {
            major: mean + rad,
            minor: mean - rad,
            angle,
        }
    }

    /// Inverse of [`eigen`](Self::eigen).
    pub fn from_eigen(major: T, minor: T, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            major * c * c + minor * s * s,
            (major - minor) * c * s,
            major * s * s + minor * c * c,
        )
    }

    /// `R Σ Rᵀ` for the counterclockwise rotation by `theta`.
    pub fn rotated(&self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        let a = self.sxx;
        let b = self.sxy;
        let d = self.syy;
        Self::new(
            c * c * a - T::lit(2.0) * c * s * b + s * s * d,
            c * s * (a - d) + (c * c - s * s) * b,
            s * s * a + T::lit(2.0) * c * s * b + c * c * d,
        )
    }

    /// Squared Frobenius norm of the full 2x2 matrix.
    pub fn frobenius_sq(&self) -> T {
        self.sxx * self.sxx + T::lit(2.0) * self.sxy * self.sxy + self.syy * self.syy
    }
}

impl<T: Scalar> Add for CovMatrix2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.sxx + o.sxx, self.sxy + o.sxy, self.syy + o.syy)
    }
}

impl<T: Scalar> Sub for CovMatrix2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.sxx - o.sxx, self.sxy - o.sxy, self.syy - o.syy)
    }
}

impl<T: Scalar> Mul<T> for CovMatrix2<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Self::new(self.sxx * k, self.sxy * k, self.syy * k)
    }
}

const PACKED4: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

/// Symmetric 4x4 covariance over `(x, y, u, v)`, upper triangle packed
/// row by row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix4<T> {
    packed: [T; 10],
}

impl<T: Scalar> CovMatrix4<T> {
    pub fn zero() -> Self {
        Self {
            packed: [T::zero(); 10],
        }
    }

    pub fn identity() -> Self {
        Self::diag([T::one(); 4])
    }

    pub fn diag(d: [T; 4]) -> Self {
        let mut m = Self::zero();
        for (i, &di) in d.iter().enumerate() {
            m.set(i, i, di);
        }
        m
    }

    fn index(i: usize, j: usize) -> usize {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        PACKED4.iter().position(|&p| p == (r, c)).expect("index in 4x4")
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.packed[Self::index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.packed[Self::index(i, j)] = value;
    }

    pub fn packed(&self) -> &[T; 10] {
        &self.packed
    }

    pub fn to_dense(&self) -> [T; 16] {
        let mut m = [T::zero(); 16];
        for i in 0..4 {
            for j in 0..4 {
                m[i * 4 + j] = self.get(i, j);
            }
        }
        m
    }

    /// Symmetric part of a dense row-major 4x4 matrix.
    pub fn from_dense(m: &[T]) -> Self {
        let mut out = Self::zero();
        for &(i, j) in PACKED4.iter() {
            out.set(i, j, (m[i * 4 + j] + m[j * 4 + i]) * T::lit(0.5));
        }
        out
    }

    pub fn trace(&self) -> T {
        (0..4).map(|i| self.get(i, i)).sum()
    }

    pub fn position_block(&self) -> CovMatrix2<T> {
        CovMatrix2::new(self.get(0, 0), self.get(0, 1), self.get(1, 1))
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|x| x.is_finite())
    }

    pub fn min_eigenvalue(&self) -> T {
        let (eig, _) = linalg::sym_eigen(&self.to_dense(), 4);
        eig.into_iter().fold(T::infinity(), T::min)
    }

    pub fn is_psd(&self) -> bool {
        self.is_finite() && self.min_eigenvalue() >= -T::lit(PSD_TOL)
    }

    pub fn repaired(&self) -> Result<Self> {
        linalg::repair_psd(&self.to_dense(), 4).map(|m| Self::from_dense(&m))
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.packed.iter_mut().zip(o.packed.iter()) {
            *a += *b;
        }
        out
    }
}

/// Ordered states of one pedestrian, optionally with per-step position
/// covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub ped_id: i64,
    pub states: Vec<TrackState<T>>,
    pub covs: Option<Vec<CovMatrix2<T>>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(ped_id: i64, states: Vec<TrackState<T>>) -> Self {
        Self {
            ped_id,
            states,
            covs: None,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2<T>> {
        self.states.iter().map(TrackState::position).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.covs {
            if c.len() != self.states.len() {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {}: {} covariances for {} states",
                    self.ped_id,
                    c.len(),
                    self.states.len()
                )));
            }
        }
        for (k, w) in self.states.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {}: step index not increasing at {}",
                    self.ped_id,
                    k + 1
                )));
            }
        }
        if let Some(bad) = self.states.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "trajectory {}: non-finite state at {bad}",
                self.ped_id
            )));
        }
        Ok(())
    }
}

/// `{ p : (p - center)ᵀ (scale² cov)⁻¹ (p - center) <= 1 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse<T> {
    pub center: Point2<T>,
    pub cov: CovMatrix2<T>,
    pub scale: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseAxes<T> {
    /// Semi-axis lengths, `major >= minor >= 0`.
    pub major: T,
    pub minor: T,
    pub angle: T,
}

impl<T: Scalar> Ellipse<T> {
    pub fn new(center: Point2<T>, cov: CovMatrix2<T>, scale: T) -> Self {
        Self { center, cov, scale }
    }

    pub fn centered(cov: CovMatrix2<T>, scale: T) -> Self {
        Self::new([T::zero(); 2], cov, scale)
    }

    /// Shape matrix `scale² · cov`.
    pub fn shape(&self) -> CovMatrix2<T> {
        self.cov * (self.scale * self.scale)
    }

    pub fn axes(&self) -> Result<EllipseAxes<T>> {
        if !self.cov.is_finite() || !self.scale.is_finite() || !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite ellipse".into()));
        }
        let e = self.cov.eigen();
        Ok(EllipseAxes {
            major: self.scale * e.major.max(T::zero()).sqrt(),
            minor: self.scale * e.minor.max(T::zero()).sqrt(),
            angle: e.angle,
        })
    }

    pub fn contains(&self, p: Point2<T>) -> Result<bool> {
        let shape = self.shape();
        let det = shape.det();
        if !(det > T::lit(PSD_TOL)) {
            return Err(Error::DegenerateEllipse { det: det.as_f64() });
        }
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        Ok(shape.mahalanobis_sq(d) <= T::one())
    }
}
