//! Spectral constants of the annihilation model and the admissibility
//! thresholds built from them.
//!
//! The angular constant
//! `rho_k = int_{S^{d-1}} [((1 + t)/2)^k + ((1 - t)/2)^k] b(t) dsigma`
//! (with `t` the direction cosine) drives every threshold: `beta_k(alpha) =
//! (1 - alpha) rho_k`, the uniform-moment threshold `alpha0`, the lower-bound
//! threshold `alpha_star`, the L^p threshold `alpha_bar = min(1/2,
//! alpha_star)` and the existence threshold `alpha_underbar = min(alpha0,
//! alpha_bar)`. For the constant angular law in d = 3 the closed form is
//! `rho_k = 2/(k + 1)`.

use crate::ensemble::{AngularLaw, ModelParams};
use crate::error::{Error, Result};
use crate::quadrature::{self, sphere_area};
use serde::{Deserialize, Serialize};

/// Quadrature tolerance for angular integrals; successive refinements must
/// agree below this value.
pub const QUAD_TOL: f64 = 1e-12;

/// Thresholds and constants of the model, as emitted by the `constants` CLI
/// mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Sampled values of `rho_k`, as `(k, rho_k)` pairs.
    pub rho: Vec<(f64, f64)>,
    pub alpha0: f64,
    pub alpha_star: f64,
    pub alpha_bar: f64,
    pub alpha_underbar: f64,
    pub j0: u32,
    pub k0: f64,
    /// Largest admissible Lebesgue exponent at the report's `alpha`;
    /// `None` means any `p > 1` is admissible.
    pub p_star: Option<f64>,
    /// Elementary constant in `(x^2+y^2)^{g/2} >= c_gamma (x^g + y^g)`.
    pub c_gamma: f64,
    /// Certified grid infimum of `(1 + r^g) / (1 + r^2)^{g/2}`.
    pub kappa_gamma: f64,
}

/// Angular spectral constant `rho_k`, reduced to a polar-angle quadrature.
///
/// Errors if a tabulated angular law does not integrate to one (within 1e-9).
pub fn rho_k(k: f64, params: &ModelParams) -> Result<f64> {
    if k < 0.0 {
        return Err(Error::invalid("k", format!("{k} < 0")));
    }
    params.validate()?;
    let dim = params.dim;
    match &params.angular {
        AngularLaw::Constant => quadrature::angular_average(
            dim,
            |t| {
                let u = 0.5 * (1.0 + t);
                u.powf(k) + (1.0 - u).powf(k)
            },
            QUAD_TOL,
        ),
        law @ AngularLaw::Tabulated { .. } => {
            let ring = sphere_area(dim - 1);
            let exponent = dim as f64 - 2.0;
            let weight = |phi: f64| law.tabulated_value(phi.cos()) * phi.sin().powf(exponent);
            let norm = ring * quadrature::integrate(&weight, 0.0, std::f64::consts::PI, QUAD_TOL)?;
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::UnnormalizedAngularLaw { norm });
            }
            let integrand = |phi: f64| {
                let u = 0.5 * (1.0 + phi.cos());
                (u.powf(k) + (1.0 - u).powf(k)) * weight(phi)
            };
            Ok(ring * quadrature::integrate(&integrand, 0.0, std::f64::consts::PI, QUAD_TOL)?)
        }
    }
}

/// `beta_k(alpha) = (1 - alpha) rho_k`.
pub fn beta_k(k: f64, alpha: f64, params: &ModelParams) -> Result<f64> {
    Ok((1.0 - alpha) * rho_k(k, params)?)
}

/// Threshold for uniform-in-time moment bounds:
/// `alpha0 = (1 - rho_{1+g/2}) / (1 + g/2 - rho_{1+g/2})`.
pub fn alpha0(params: &ModelParams) -> Result<f64> {
    if params.gamma <= 0.0 {
        return Err(Error::MaxwellianCase);
    }
    let k = 1.0 + 0.5 * params.gamma;
    let rho = rho_k(k, params)?;
    Ok((1.0 - rho) / (k - rho))
}

/// Index `j0` with `k0 = j0 g/2 < 1 <= (j0 + 1) g/2`.
fn lower_bound_index(gamma: f64) -> Result<(u32, f64)> {
    if gamma <= 0.0 {
        return Err(Error::MaxwellianCase);
    }
    let mut j0 = (2.0 / gamma).ceil() as u32 - 1;
    // Guard against floating roundoff at exact divisors.
    while (j0 + 1) as f64 * gamma / 2.0 < 1.0 {
        j0 += 1;
    }
    while j0 > 1 && j0 as f64 * gamma / 2.0 >= 1.0 {
        j0 -= 1;
    }
    Ok((j0, j0 as f64 * gamma / 2.0))
}

/// Lower-bound propagation threshold `alpha_star = (rho_{k0} - 1) / rho_{k0}`
/// with `k0 = j0 g/2` the largest sub-unit half-integer multiple of `g/2`.
pub fn alpha_star(params: &ModelParams) -> Result<(f64, u32, f64)> {
    let (j0, k0) = lower_bound_index(params.gamma)?;
    let rho = rho_k(k0, params)?;
    Ok(((rho - 1.0) / rho, j0, k0))
}

/// Largest admissible Lebesgue exponent `p_star = alpha d / (alpha d + 2 alpha - 1)`;
/// `None` (unbounded) when `alpha <= 1/(d+2)`.
pub fn p_star(alpha: f64, dim: usize) -> Result<Option<f64>> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1)")));
    }
    let d = dim as f64;
    if alpha <= 1.0 / (d + 2.0) {
        Ok(None)
    } else {
        Ok(Some(alpha * d / (alpha * d + 2.0 * alpha - 1.0)))
    }
}

/// Coercivity coefficient of the L^p loss estimate:
/// `eta_p = p - 2 alpha p - alpha d (p - 1)`.
pub fn eta_p(p: f64, alpha: f64, dim: usize) -> f64 {
    let d = dim as f64;
    p - 2.0 * alpha * p - alpha * d * (p - 1.0)
}

/// Largest admissible lower-bound constants `kappa_j`, `j = 1..=j0`, computed
/// top-down from `j0` with equality in the defining inequalities. Requires
/// `alpha < alpha_star`.
pub fn kappa_bounds(alpha: f64, params: &ModelParams) -> Result<Vec<f64>> {
    let (a_star, j0, _k0) = alpha_star(params)?;
    if alpha >= a_star - 1e-12 {
        return Err(Error::LowerBoundUnavailable {
            alpha,
            alpha_star: a_star,
        });
    }
    let d_half = params.dim as f64 / 2.0;
    let ratio = |j: u32| -> Result<f64> {
        let b = beta_k(j as f64 * params.gamma / 2.0, alpha, params)?;
        Ok((b - 1.0) / (b + 1.0))
    };
    if params.gamma == 1.0 {
        // j0 = 1: kappa_1 = sqrt(ratio * d/2).
        return Ok(vec![(ratio(1)? * d_half).sqrt()]);
    }
    let mut kappas = vec![0.0; j0 as usize];
    let top = j0 as f64;
    kappas[j0 as usize - 1] =
        ratio(j0)?.powf(top / (1.0 + top)) * d_half.powf(j0 as f64 * params.gamma / 2.0);
    for j in (1..j0).rev() {
        let jf = j as f64;
        kappas[j as usize - 1] = (ratio(j)? * kappas[j as usize]).powf(jf / (1.0 + jf));
    }
    Ok(kappas)
}

/// `(x^2 + y^2)^{g/2} >= c_gamma (x^g + y^g)` holds with `c_gamma = 2^{g/2 - 1}`
/// (sharp at `x = y`).
pub fn c_gamma(gamma: f64) -> f64 {
    (0.5 * gamma - 1.0).exp2()
}

/// Certified numerical infimum of `(1 + r^g) / (1 + r^2)^{g/2}` over a dense
/// logarithmic grid, clamped at 1 (the analytic infimum, attained in the
/// limits `r -> 0` and `r -> infinity`).
pub fn kappa_gamma(gamma: f64) -> f64 {
    let mut inf = f64::INFINITY;
    let points = 4001;
    for i in 0..points {
        let log_r = -8.0 + 16.0 * i as f64 / (points - 1) as f64;
        let r = 10f64.powf(log_r);
        let val = (1.0 + r.powf(gamma)) / (1.0 + r * r).powf(0.5 * gamma);
        inf = inf.min(val);
    }
    inf.min(1.0)
}

/// Composite lower-bound constant `C_alpha` relating `M_{g/2}(t)` to
/// `M_{g/2}(0)`. For `g = 1` this is `sqrt((beta_{1/2} - 1)/(beta_{1/2} + 1))`;
/// for `g < 1` it is the product of the per-level factors of the moment
/// recursion.
pub fn lower_bound_constant(alpha: f64, params: &ModelParams) -> Result<f64> {
    let (a_star, j0, _) = alpha_star(params)?;
    if alpha >= a_star - 1e-12 {
        return Err(Error::LowerBoundUnavailable {
            alpha,
            alpha_star: a_star,
        });
    }
    let mut c = 1.0;
    for j in 1..=j0 {
        let b = beta_k(j as f64 * params.gamma / 2.0, alpha, params)?;
        let jf = j as f64;
        c *= ((b - 1.0) / (b + 1.0)).powf(jf / (1.0 + jf));
    }
    Ok(c)
}

/// Coercivity constant `mu_alpha` in the loss-operator lower bound
/// `int psi(t, xi_*) |xi - xi_*|^g dxi_* >= mu_alpha <xi>^g`:
/// `mu_alpha = (c_gamma kappa_gamma / 2) min(1, C_alpha M_{g/2}(0))`.
pub fn mu_alpha(alpha: f64, params: &ModelParams, m_gamma_half_initial: f64) -> Result<f64> {
    if !(m_gamma_half_initial > 0.0) {
        return Err(Error::invalid(
            "m_gamma_half_initial",
            format!("{m_gamma_half_initial} must be positive"),
        ));
    }
    let c_a = lower_bound_constant(alpha, params)?;
    let prefactor = 0.5 * c_gamma(params.gamma) * kappa_gamma(params.gamma);
    Ok(prefactor * (c_a * m_gamma_half_initial).min(1.0))
}

/// Assemble the full threshold report for the given parameters.
pub fn threshold_report(params: &ModelParams) -> Result<ThresholdReport> {
    let (a_star, j0, k0) = alpha_star(params)?;
    let a0 = alpha0(params)?;
    let a_bar = 0.5f64.min(a_star);
    let mut orders = vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    for extra in [0.5 * params.gamma, 1.0 + 0.5 * params.gamma, k0] {
        if !orders.iter().any(|k| (k - extra).abs() < 1e-12) {
            orders.push(extra);
        }
    }
    orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rho = Vec::with_capacity(orders.len());
    for k in orders {
        rho.push((k, rho_k(k, params)?));
    }
    let p_star = if params.alpha > 0.0 && params.alpha < 1.0 {
        p_star(params.alpha, params.dim)?
    } else {
        None
    };
    Ok(ThresholdReport {
        rho,
        alpha0: a0,
        alpha_star: a_star,
        alpha_bar: a_bar,
        alpha_underbar: a0.min(a_bar),
        j0,
        k0,
        p_star,
        c_gamma: c_gamma(params.gamma),
        kappa_gamma: kappa_gamma(params.gamma),
    })
}
