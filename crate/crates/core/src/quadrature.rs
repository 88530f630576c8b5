//! One-dimensional adaptive quadrature and unit-sphere reductions.
//!
//! Angular integrals over `S^{d-1}` of functions of a single direction cosine
//! reduce to integrals over the polar angle `phi in [0, pi]` with weight
//! `sin(phi)^{d-2}`. That form stays smooth down to `d = 2`, where the
//! cosine-variable weight `(1 - t^2)^{-1/2}` would be singular.

use crate::error::{Error, Result};
use statrs::function::gamma::gamma;

/// Default refinement tolerance: subdivision stops once successive estimates
/// agree to this level.
pub const DEFAULT_TOL: f64 = 1e-12;

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::invalid("interval", format!("[{a}, {b}]")));
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    simpson_refine(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let refined = left + right;
    if (refined - whole).abs() <= 15.0 * tol || (b - a) < 1e-14 {
        // Richardson extrapolation of the two Simpson levels.
        return Ok(refined + (refined - whole) / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureNonConvergence { a, b });
    }
    let half_tol = 0.5 * tol;
    Ok(
        simpson_refine(f, a, m, fa, flm, fm, left, half_tol, depth - 1)?
            + simpson_refine(f, m, b, fm, frm, fb, right, half_tol, depth - 1)?,
    )
}

/// Surface area of the unit sphere `S^{dim-1}` in `R^dim`.
pub fn sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * std::f64::consts::PI.powf(0.5 * d) / gamma(0.5 * d)
}

/// Volume of the unit ball in `R^dim`.
pub fn ball_volume(dim: usize) -> f64 {
    let d = dim as f64;
    std::f64::consts::PI.powf(0.5 * d) / gamma(0.5 * d + 1.0)
}

/// Mean of `g(cos(angle))` over directions uniformly distributed on `S^{d-1}`,
/// the angle being measured against any fixed axis:
/// `(|S^{d-2}| / |S^{d-1}|) * int_0^pi g(cos phi) sin(phi)^{d-2} dphi`.
pub fn angular_average<F: Fn(f64) -> f64>(dim: usize, g: F, tol: f64) -> Result<f64> {
    if dim < 2 {
        return Err(Error::invalid("dim", "need d >= 2"));
    }
    let exponent = dim as f64 - 2.0;
    let c = sphere_area(dim - 1) / sphere_area(dim);
    let val = integrate(
        &|phi: f64| g(phi.cos()) * phi.sin().powf(exponent),
        0.0,
        std::f64::consts::PI,
        tol,
    )?;
    Ok(c * val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_polynomial_exactly() {
        let v = integrate(&|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-13).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn integrates_oscillatory() {
        let v = integrate(&|x: f64| (10.0 * x).sin(), 0.0, 1.0, 1e-13).unwrap();
        assert_relative_eq!(v, (1.0 - (10.0f64).cos()) / 10.0, epsilon = 1e-11);
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(2), 2.0 * std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(sphere_area(3), 4.0 * std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(sphere_area(1), 2.0, epsilon = 1e-12);
        assert_relative_eq!(ball_volume(3), 4.0 / 3.0 * std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn angular_average_of_constant_is_one() {
        for dim in 2..=5 {
            let v = angular_average(dim, |_| 1.0, 1e-13).unwrap();
            assert_relative_eq!(v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn angular_average_of_cos_squared() {
        // E[t^2] over the sphere equals 1/d.
        for dim in 2..=4 {
            let v = angular_average(dim, |t| t * t, 1e-13).unwrap();
            assert_relative_eq!(v, 1.0 / dim as f64, epsilon = 1e-10);
        }
    }
}
