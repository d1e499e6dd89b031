//! Total uncertainty as the Minkowski sum of the sensing and prediction
//! ellipses: an exact membership test and the trace-minimal outer ellipse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Ellipse, Point2};
use crate::linalg::PSD_TOL;
use crate::scalar::Scalar;

/// Relative bracket width at which the multiplier search stops.
pub const MULTIPLIER_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalUncertainty<T> {
    pub center: Point2<T>,
    pub sensing: Ellipse<T>,
    pub prediction: Ellipse<T>,
    /// Contains `sensing ⊕ prediction` translated to `center`; scale 1.
    pub outer: Ellipse<T>,
}

/// Outer ellipse shape `(1 + 1/c)·A + (1 + c)·B` with `c = √(tr B / tr A)`,
/// where `A`, `B` are the scaled shapes of the two ellipses.
pub fn outer_shape<T: Scalar>(a: CovMatrix2<T>, b: CovMatrix2<T>) -> CovMatrix2<T> {
    let (ta, tb) = (a.trace(), b.trace());
    if ta <= T::zero() {
        return b;
    }
    if tb <= T::zero() {
        return a;
    }
    let c = (tb / ta).sqrt();
    a * (T::one() + T::one() / c) + b * (T::one() + c)
}

fn check_psd<T: Scalar>(e: &Ellipse<T>, what: &str) -> Result<()> {
    if !e.cov.is_finite() || !e.scale.is_finite() || !e.cov.is_psd() {
        return Err(Error::InvalidCovariance(format!("{what} ellipse is not PSD")));
    }
    Ok(())
}

/// Both ellipses are taken as centered shapes; `center` places the result.
pub fn minkowski_total<T: Scalar>(
    sensing: Ellipse<T>,
    prediction: Ellipse<T>,
    center: Point2<T>,
) -> Result<TotalUncertainty<T>> {
    check_psd(&sensing, "sensing")?;
    check_psd(&prediction, "prediction")?;
    let cov = outer_shape(sensing.shape(), prediction.shape());
    Ok(TotalUncertainty {
        center,
        sensing: Ellipse::new(center, sensing.cov, sensing.scale),
        prediction: Ellipse::new(center, prediction.cov, prediction.scale),
        outer: Ellipse::new(center, cov, T::one()),
    })
}

fn solve<T: Scalar>(m: CovMatrix2<T>, q: Point2<T>) -> Point2<T> {
    let det = m.det();
    [
        (m.syy * q[0] - m.sxy * q[1]) / det,
        (m.sxx * q[1] - m.sxy * q[0]) / det,
    ]
}

fn quad<T: Scalar>(m: CovMatrix2<T>, u: Point2<T>, v: Point2<T>) -> T {
    let mu = m.mul_vec(v);
    u[0] * mu[0] + u[1] * mu[1]
}

/// Squared `A`-distance from `q` to the set `{y : yᵀB⁺y ≤ 1}`.
///
/// With `w(ν) = (B + νA)⁻¹q` the constrained minimizer is `y = B·w(ν)`,
/// its constraint value `g(ν) = wᵀBw` decreases in `ν`, and the residual
/// distance is `ν²·wᵀAw`. The multiplier solving `g(ν) = 1` is bracketed
/// and bisected in log space.
pub fn minkowski_distance<T: Scalar>(a: CovMatrix2<T>, b: CovMatrix2<T>, q: Point2<T>) -> Result<T> {
    if !(a.det() > T::lit(PSD_TOL)) {
        return Err(Error::DegenerateEllipse { det: a.det().as_f64() });
    }
    let tb = b.trace();
    let nu_scale = if tb > T::zero() { tb / a.trace() } else { T::one() };
    let g = |nu: T| {
        let w = solve(b + a * nu, q);
        quad(b, w, w)
    };
    let dist = |nu: T| {
        let w = solve(b + a * nu, q);
        nu * nu * quad(a, w, w)
    };
    let mut lo = nu_scale * T::lit(1e-12);
    if g(lo) <= T::one() {
        return Ok(dist(lo));
    }
    let mut hi = nu_scale;
    let mut iters = 0;
    while g(hi) > T::one() {
        lo = hi;
        hi *= T::lit(4.0);
        iters += 1;
        if iters > MAX_ITERATIONS || !hi.is_finite() {
            return Err(Error::NumericalFailure("multiplier bracket did not close".into()));
        }
    }
    let tol = T::lit(MULTIPLIER_TOL);
    while hi / lo - T::one() > tol {
        let mid = (lo * hi).sqrt();
        if g(mid) > T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
        if iters > MAX_ITERATIONS {
            return Err(Error::NumericalFailure(format!(
                "multiplier bisection exceeded {MAX_ITERATIONS} iterations"
            )));
        }
    }
    Ok(dist((lo * hi).sqrt()))
}

/// Exact test of `p ∈ center + (sensing ⊕ prediction)`. At least one of
/// the two ellipses must be nondegenerate; it plays the role of the
/// distance metric.
pub fn in_minkowski_sum<T: Scalar>(
    sensing: &Ellipse<T>,
    prediction: &Ellipse<T>,
    center: Point2<T>,
    p: Point2<T>,
) -> Result<bool> {
    Ok(minkowski_sum_distance(sensing, prediction, center, p)? <= T::one())
}

/// Squared gauge-like distance used by [`in_minkowski_sum`]; `≤ 1` inside.
pub fn minkowski_sum_distance<T: Scalar>(
    sensing: &Ellipse<T>,
    prediction: &Ellipse<T>,
    center: Point2<T>,
    p: Point2<T>,
) -> Result<T> {
    check_psd(sensing, "sensing")?;
    check_psd(prediction, "prediction")?;
    let (mut a, mut b) = (sensing.shape(), prediction.shape());
    if !(a.det() > T::lit(PSD_TOL)) {
        std::mem::swap(&mut a, &mut b);
    }
    minkowski_distance(a, b, [p[0] - center[0], p[1] - center[1]])
}

/// Support value `max_{x ∈ E} uᵀx = √(uᵀ S u)` of a centered ellipse.
pub fn support<T: Scalar>(e: &Ellipse<T>, u: Point2<T>) -> T {
    quad(e.shape(), u, u).max(T::zero()).sqrt()
}
