//! Numerical verification of the model's inequalities along trajectories:
//! Povzner moment bounds, the uniform moment-bound constant, lower-bound
//! propagation, the isotropic-kernel inequality, the L^p loss pairing and the
//! weak-form residual of the rescaled equation.
//!
//! Statistical checks compare both sides with a `3 sigma` tolerance built
//! from the Monte Carlo errors; theorem-grade checks (isotropic kernel, L^p
//! pairing) evaluate radial densities by deterministic quadrature so the
//! inequalities carry no statistical slack beyond the quoted error bars.

use crate::collision;
use crate::constants;
use crate::ensemble::{ModelParams, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::selfsim;
use crate::stats::{Measured, MomentRecord, RadialProfile};
use crate::vecmath;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Per-checkpoint comparison of the two sides of an inequality
/// (convention: `lhs <= rhs` is the asserted direction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckDetail {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub std_error: f64,
}

/// Outcome of checking one inequality along a trajectory. A checkpoint counts
/// as violating only when `lhs > rhs + 3 std_error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub checkpoints: usize,
    pub violations: usize,
    /// Largest `(lhs - rhs) / std_error` seen (negative when comfortably
    /// satisfied everywhere).
    pub max_violation_sigma: f64,
    pub details: Vec<CheckDetail>,
}

impl InequalityReport {
    fn from_details(name: impl Into<String>, details: Vec<CheckDetail>) -> Self {
        let mut violations = 0;
        let mut max_sigma = f64::NEG_INFINITY;
        for d in &details {
            let gap = d.lhs - d.rhs;
            let sigma = if d.std_error > 0.0 {
                gap / d.std_error
            } else if gap > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            max_sigma = max_sigma.max(sigma);
            if gap > 3.0 * d.std_error {
                violations += 1;
            }
        }
        InequalityReport {
            name: name.into(),
            checkpoints: details.len(),
            violations,
            max_violation_sigma: max_sigma,
            details,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Generalized binomial coefficient `(k choose j)` for real `k` and integer
/// `j` via the falling-factorial product.
pub fn binomial(k: f64, j: u32) -> f64 {
    let mut num = 1.0;
    let mut den = 1.0;
    for i in 0..j {
        num *= k - i as f64;
        den *= (i + 1) as f64;
    }
    num / den
}

/// Moment orders a record must carry for the Povzner check at order `k`:
/// everything in `S_k` plus `k + gamma/2` and `1 + gamma/2` from the full
/// differential inequality.
pub fn povzner_required_orders(k: f64, gamma: f64) -> Vec<f64> {
    let jmax = ((k + 1.0) / 2.0).floor() as u32;
    let mut orders = vec![k, 0.5 * gamma, k + 0.5 * gamma, 1.0 + 0.5 * gamma];
    for j in 1..=jmax {
        let jf = j as f64;
        orders.extend_from_slice(&[jf + 0.5 * gamma, k - jf, jf, k - jf + 0.5 * gamma]);
    }
    orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
    orders.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    orders
}

/// Povzner production bound
/// `S_k = beta_k sum_{j=1}^{[(k+1)/2]} (k over j) (M_{j+g/2} M_{k-j} + M_j M_{k-j+g/2})
///        + (1 - beta_k) M_k M_{g/2}`.
pub fn povzner_s_k(record: &MomentRecord, k: f64, alpha: f64, params: &ModelParams) -> Result<f64> {
    Ok(povzner_s_k_measured(record, k, alpha, params)?.value)
}

/// `S_k` together with a first-order propagated standard error.
pub fn povzner_s_k_measured(
    record: &MomentRecord,
    k: f64,
    alpha: f64,
    params: &ModelParams,
) -> Result<Measured> {
    let g = params.gamma;
    let beta = constants::beta_k(k, alpha, params)?;
    let jmax = ((k + 1.0) / 2.0).floor() as u32;
    let mut value = 0.0;
    let mut var = 0.0;
    let mut add_product = |coeff: f64, x: Measured, y: Measured| {
        value += coeff * x.value * y.value;
        var += (coeff * x.value * y.std_error).powi(2) + (coeff * y.value * x.std_error).powi(2);
    };
    for j in 1..=jmax {
        let jf = j as f64;
        let c = beta * binomial(k, j);
        add_product(c, record.moment(jf + 0.5 * g)?, record.moment(k - jf)?);
        add_product(c, record.moment(jf)?, record.moment(k - jf + 0.5 * g)?);
    }
    add_product(1.0 - beta, record.moment(k)?, record.moment(0.5 * g)?);
    Ok(Measured::new(value, var.sqrt()))
}

/// Thin a record series to every `stride`-th checkpoint (finite differences
/// over wider spacing keep Monte Carlo noise below the drift signal).
pub fn thin_records(records: &[MomentRecord], stride: usize) -> Vec<MomentRecord> {
    records.iter().step_by(stride.max(1)).cloned().collect()
}

/// Check the moment differential inequality
/// `dM_k/dt + (1 - beta_k) M_{k+g/2} <= S_k + (2 alpha k / d) M_{1+g/2} M_k
/// + alpha k (1 + d/2) M_k` along a normalized-frame trajectory, with
/// centered finite differences for the time derivative.
pub fn check_moment_inequality(
    records: &[MomentRecord],
    k: f64,
    alpha: f64,
    params: &ModelParams,
) -> Result<InequalityReport> {
    if records.len() < 3 {
        return Err(Error::NotEnoughData {
            needed: 3,
            got: records.len(),
        });
    }
    let g = params.gamma;
    let d = params.dim as f64;
    let beta = constants::beta_k(k, alpha, params)?;
    let mut details = Vec::with_capacity(records.len() - 2);
    for i in 1..records.len() - 1 {
        let (prev, cur, next) = (&records[i - 1], &records[i], &records[i + 1]);
        let span = next.t - prev.t;
        if !(span > 0.0) {
            return Err(Error::invalid("trajectory", "non-increasing checkpoint times"));
        }
        let m_prev = prev.moment(k)?;
        let m_next = next.moment(k)?;
        let dmdt = (m_next.value - m_prev.value) / span;
        let se_dmdt = (m_next.std_error.powi(2) + m_prev.std_error.powi(2)).sqrt() / span;

        let m_high = cur.moment(k + 0.5 * g)?;
        let lhs = dmdt + (1.0 - beta) * m_high.value;
        let se_lhs_sq = se_dmdt.powi(2) + ((1.0 - beta) * m_high.std_error).powi(2);

        let s_k = povzner_s_k_measured(cur, k, alpha, params)?;
        let m_mid = cur.moment(1.0 + 0.5 * g)?;
        let m_k = cur.moment(k)?;
        let c_quad = 2.0 * alpha * k / d;
        let c_lin = alpha * k * (1.0 + 0.5 * d);
        let rhs = s_k.value + c_quad * m_mid.value * m_k.value + c_lin * m_k.value;
        let se_rhs_sq = s_k.std_error.powi(2)
            + (c_quad * m_mid.value * m_k.std_error).powi(2)
            + (c_quad * m_k.value * m_mid.std_error).powi(2)
            + (c_lin * m_k.std_error).powi(2);

        details.push(CheckDetail {
            t: cur.t,
            lhs,
            rhs,
            std_error: (se_lhs_sq + se_rhs_sq).sqrt(),
        });
    }
    Ok(InequalityReport::from_details(
        format!("moment_inequality_k_{k}"),
        details,
    ))
}

/// Uniform moment bound `Mbar` for `M_{1+g/2}` when `alpha < alpha0`.
///
/// From the moment system at `k = 1 + g/2`, using mass 1 and energy `d/2`:
/// every moment `M_s` with `0 <= s <= 1` is bounded by `1 + d/2`
/// (interpolation against mass and energy) and `M_1 = d/2`, so
///
/// `dM/dt + c (2/d) M^2 <= C0 M + C1` with
///
/// * `c  = 1 - beta_k - alpha k` (positive iff `alpha < alpha0`),
/// * `C0 = (1 + d/2) (beta_k k + (1 - beta_k) + alpha k)` collecting the
///   `j = 1` Povzner product `beta_k k M_k M_{g/2}`, the tail term
///   `(1 - beta_k) M_k M_{g/2}` and the linear forcing `alpha k (1 + d/2) M_k`,
/// * `C1 = beta_k k (d/2)(1 + d/2)` from the `j = 1` product `M_1 M_g`.
///
/// `Mbar` is the positive root of `c (2/d) X^2 = C0 X + C1`.
pub fn moment_bound(alpha: f64, params: &ModelParams) -> Result<f64> {
    let a0 = constants::alpha0(params)?;
    let k = 1.0 + 0.5 * params.gamma;
    let beta = constants::beta_k(k, alpha, params)?;
    let c = 1.0 - beta - alpha * k;
    if c <= 0.0 {
        return Err(Error::MomentBoundUnavailable { alpha, alpha0: a0 });
    }
    let d = params.dim as f64;
    let low = 1.0 + 0.5 * d;
    let c0 = low * (beta * k + (1.0 - beta) + alpha * k);
    let c1 = beta * k * (0.5 * d) * low;
    let lead = c * 2.0 / d;
    Ok((c0 + (c0 * c0 + 4.0 * lead * c1).sqrt()) / (2.0 * lead))
}

/// Check the lower-bound propagation of small moments along a
/// normalized-frame trajectory. For `gamma = 1` the explicit floor is
/// `M_{1/2}(t) >= min(M_{1/2}(0), sqrt((beta_{1/2}-1)/(beta_{1/2}+1) M_1(0)))`;
/// for `gamma < 1` each level `j = 1..=j0` is checked against its `kappa_j`
/// whenever the initial datum sits above it.
pub fn check_lower_bound(
    records: &[MomentRecord],
    alpha: f64,
    params: &ModelParams,
) -> Result<InequalityReport> {
    if records.is_empty() {
        return Err(Error::NotEnoughData { needed: 1, got: 0 });
    }
    let g = params.gamma;
    let (a_star, j0, _) = constants::alpha_star(params)?;
    if alpha >= a_star - 1e-12 {
        return Err(Error::LowerBoundUnavailable {
            alpha,
            alpha_star: a_star,
        });
    }
    let mut details = Vec::with_capacity(records.len());
    if g == 1.0 {
        let beta = constants::beta_k(0.5, alpha, params)?;
        let ratio = (beta - 1.0) / (beta + 1.0);
        let m12_0 = records[0].moment(0.5)?;
        let m1_0 = records[0].moment(1.0)?;
        let theorem_floor = (ratio * m1_0.value).sqrt();
        let (bound, se_bound) = if m12_0.value <= theorem_floor {
            (m12_0.value, m12_0.std_error)
        } else {
            (
                theorem_floor,
                0.5 * (ratio / m1_0.value).sqrt() * m1_0.std_error,
            )
        };
        for rec in records {
            let m = rec.moment(0.5)?;
            details.push(CheckDetail {
                t: rec.t,
                lhs: bound,
                rhs: m.value,
                std_error: (m.std_error.powi(2) + se_bound.powi(2)).sqrt(),
            });
        }
    } else {
        let kappas = constants::kappa_bounds(alpha, params)?;
        // Only levels whose initial moment clears the floor propagate.
        let mut active = Vec::new();
        for j in 1..=j0 {
            let order = j as f64 * g / 2.0;
            let m0 = records[0].moment(order)?;
            let kappa = kappas[j as usize - 1];
            if m0.value + 3.0 * m0.std_error >= kappa {
                active.push((order, kappa));
            }
        }
        if active.is_empty() {
            return Err(Error::invalid(
                "records",
                "initial datum sits below every kappa_j floor",
            ));
        }
        for rec in records {
            let mut worst = CheckDetail {
                t: rec.t,
                lhs: f64::NEG_INFINITY,
                rhs: 0.0,
                std_error: 0.0,
            };
            let mut worst_gap = f64::NEG_INFINITY;
            for &(order, kappa) in &active {
                let m = rec.moment(order)?;
                let gap = kappa - m.value;
                if gap > worst_gap {
                    worst_gap = gap;
                    worst = CheckDetail {
                        t: rec.t,
                        lhs: kappa,
                        rhs: m.value,
                        std_error: m.std_error,
                    };
                }
            }
            details.push(worst);
        }
    }
    Ok(InequalityReport::from_details("lower_bound_propagation", details))
}

/// Spherical average of the kernel `|xi - xi*|^gamma` over the relative
/// orientation, for `|xi| = r` and `|xi*| = rho`:
/// `avg_t (r^2 + rho^2 - 2 r rho t)^{gamma/2}` with `t` the direction cosine.
pub fn kernel_angular_average(dim: usize, r: f64, rho: f64, gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(1.0);
    }
    if r == 0.0 || rho == 0.0 {
        return Ok((r * r + rho * rho).powf(0.5 * gamma));
    }
    quadrature::angular_average(
        dim,
        |t| (r * r + rho * rho - 2.0 * r * rho * t).max(0.0).powf(0.5 * gamma),
        1e-11,
    )
}

/// Loss-operator field `L(r) = int |xi - xi*|^gamma psi(xi*) dxi*` of a binned
/// radial density, by the angular reduction above.
pub fn loss_field(profile: &RadialProfile, r: f64, gamma: f64) -> Result<f64> {
    let mut acc = 0.0;
    for b in 0..profile.bins() {
        let mass = profile.bin_mass(b);
        if mass > 0.0 {
            acc += mass * kernel_angular_average(profile.dim, r, profile.midpoint(b), gamma)?;
        }
    }
    Ok(acc)
}

/// Verify the isotropic-kernel inequality
/// `int f(xi*) k(|xi - xi*|) dxi* >= (1/2) int f(xi*) k(sqrt(|xi|^2 + |xi*|^2)) dxi*`
/// with `k(r) = r^gamma`, at each probe radius, by deterministic quadrature.
/// This is a theorem: violations beyond quadrature accuracy (1e-8) fail.
pub fn isotropic_lemma_check(
    profile: &RadialProfile,
    gamma: f64,
    probe_radii: &[f64],
) -> Result<InequalityReport> {
    let mut details = Vec::with_capacity(probe_radii.len());
    for &r in probe_radii {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::invalid("probe", format!("{r} must be finite and >= 0")));
        }
        let full = loss_field(profile, r, gamma)?;
        let mut half = 0.0;
        for b in 0..profile.bins() {
            let mass = profile.bin_mass(b);
            if mass > 0.0 {
                let rho = profile.midpoint(b);
                half += mass * (r * r + rho * rho).powf(0.5 * gamma);
            }
        }
        half *= 0.5;
        let scale = full.abs().max(1.0);
        details.push(CheckDetail {
            t: r,
            lhs: half,
            rhs: full,
            // Violation beyond 3 se means beyond 1e-8 * scale.
            std_error: 1e-8 * scale / 3.0,
        });
    }
    Ok(InequalityReport::from_details("isotropic_kernel_lemma", details))
}

/// One `(profile, a_psi)` checkpoint of the L^p pairing check.
pub type LpCheckpoint = (RadialProfile, Measured);

/// Verify the loss-side pairing `a_psi ||psi||_p^p <= 2 L_p(psi)` where
/// `L_p = int Q_-(psi,psi) psi^{p-1}` is evaluated by radial quadrature, for
/// a series of checkpoints (e.g. the windows of a profile run). The
/// inequality is stated in the rescaled frame: profiles must carry unit mass.
pub fn lp_pairing_series(
    checkpoints: &[LpCheckpoint],
    p: f64,
    params: &ModelParams,
) -> Result<InequalityReport> {
    if checkpoints.is_empty() {
        return Err(Error::NotEnoughData { needed: 1, got: 0 });
    }
    validate_lp_exponent(p, params)?;
    let mut details = Vec::with_capacity(checkpoints.len());
    for (idx, (profile, a_psi)) in checkpoints.iter().enumerate() {
        let norm_p = crate::stats::lp_norm_estimate(profile, p)?.powf(p);
        let mut loss_p = 0.0;
        for b in 0..profile.bins() {
            if profile.density[b] > 0.0 {
                loss_p += profile.density[b].powf(p)
                    * profile.shell_volume(b)
                    * loss_field(profile, profile.midpoint(b), params.gamma)?;
            }
        }
        details.push(CheckDetail {
            t: idx as f64,
            lhs: a_psi.value * norm_p,
            rhs: 2.0 * loss_p,
            std_error: a_psi.std_error * norm_p,
        });
    }
    Ok(InequalityReport::from_details("lp_loss_pairing", details))
}

/// Single-checkpoint L^p pairing check, estimating `a_psi` from the ensemble.
pub fn lp_pairing_check<R: Rng + ?Sized>(
    profile: &RadialProfile,
    ensemble: &ParticleEnsemble,
    p: f64,
    params: &ModelParams,
    pair_budget: usize,
    rng: &mut R,
) -> Result<InequalityReport> {
    let (a_psi, _) = selfsim::estimate_ab(ensemble, params, pair_budget, rng)?;
    lp_pairing_series(&[(profile.clone(), a_psi)], p, params)
}

fn validate_lp_exponent(p: f64, params: &ModelParams) -> Result<()> {
    if !(p > 1.0) {
        return Err(Error::invalid("p", format!("{p} <= 1")));
    }
    if params.alpha > 0.0 && params.alpha < 1.0 {
        if let Some(p_star) = constants::p_star(params.alpha, params.dim)? {
            if p >= p_star {
                return Err(Error::invalid(
                    "p",
                    format!("{p} >= p_star = {p_star} for alpha = {}", params.alpha),
                ));
            }
        }
    }
    Ok(())
}

/// Radial Gaussian bump test function `rho(xi) = exp(-(|xi| - c)^2 / (2 s^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub center: f64,
    pub width: f64,
}

impl RadialBump {
    pub fn eval(&self, r: f64) -> f64 {
        let z = (r - self.center) / self.width;
        (-0.5 * z * z).exp()
    }

    /// `xi . grad rho = r rho'(r)` for a radial test function.
    pub fn r_times_slope(&self, r: f64) -> f64 {
        -r * (r - self.center) / (self.width * self.width) * self.eval(r)
    }
}

/// Default weak-form test set: Gaussian bumps at five radii spanning the bulk
/// of a normalized profile.
pub fn default_test_set() -> Vec<RadialBump> {
    [0.4, 0.8, 1.2, 1.6, 2.0]
        .iter()
        .map(|&center| RadialBump { center, width: 0.3 })
        .collect()
}

/// A normalized-frame snapshot with its rescaled-time stamp.
#[derive(Debug, Clone)]
pub struct WindowSnapshot {
    pub tau: f64,
    pub ensemble: ParticleEnsemble,
}

/// Weak-form residual of one test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResidual {
    pub center: f64,
    pub residual: f64,
    pub std_error: f64,
    /// Magnitude of the dominant weak-form term, used as normalization.
    pub scale: f64,
}

/// Weak-form residual over a window of snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidualReport {
    /// Largest normalized residual over the test set.
    pub residual: f64,
    /// Standard error of that residual.
    pub std_error: f64,
    pub per_test: Vec<TestResidual>,
}

struct SnapshotTerms {
    tau: f64,
    mean_rho: Vec<Measured>,
    mean_r_slope: Vec<Measured>,
    big_a: Measured,
    big_b: Measured,
    collision: Vec<Measured>,
}

/// Estimate `int B(psi,psi) rho` for every test function at once by pair
/// sampling: per sampled pair, one scattering direction evaluates the gain
/// term at the post-collision speeds and the loss term at the incoming ones.
fn collision_terms<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    radii: &[f64],
    params: &ModelParams,
    tests: &[RadialBump],
    pair_budget: usize,
    rng: &mut R,
) -> Result<Vec<Measured>> {
    let n = ensemble.count();
    if n < 2 {
        return Err(Error::Extinct);
    }
    let nf = n as f64;
    let w = ensemble.weight();
    let total_pairs = 0.5 * nf * (nf - 1.0);
    let samples = (pair_budget.max(1) as f64).min(total_pairs) as usize;
    let dim = ensemble.dim();
    let mut sigma = vec![0.0; dim];
    let mut out_a = vec![0.0; dim];
    let mut out_b = vec![0.0; dim];
    let mut sums = vec![0.0; tests.len()];
    let mut sums_sq = vec![0.0; tests.len()];
    let one_minus_alpha = 1.0 - params.alpha;
    for _ in 0..samples {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let vi = ensemble.velocity(i);
        let vj = ensemble.velocity(j);
        let rate = collision::relative_rate(vi, vj, params);
        collision::sample_unit_vector(rng, &mut sigma);
        collision::post_collision_into(vi, vj, &sigma, &mut out_a, &mut out_b);
        let r_post_a = vecmath::norm(&out_a);
        let r_post_b = vecmath::norm(&out_b);
        let (ri, rj) = (radii[i], radii[j]);
        for (t, test) in tests.iter().enumerate() {
            let x = rate
                * 0.5
                * (one_minus_alpha * (test.eval(r_post_a) + test.eval(r_post_b))
                    - test.eval(ri)
                    - test.eval(rj));
            sums[t] += x;
            sums_sq[t] += x * x;
        }
    }
    let m = samples as f64;
    let scale = w * w * nf * (nf - 1.0);
    let mut out = Vec::with_capacity(tests.len());
    for t in 0..tests.len() {
        let mean = sums[t] / m;
        let var = ((sums_sq[t] - m * mean * mean) / (m - 1.0).max(1.0)).max(0.0);
        let mut value = scale * mean;
        if params.gamma == 0.0 {
            // Self-pair diagonal: identical velocities scatter onto themselves,
            // leaving only the annihilation loss -alpha rho.
            let diag: f64 = radii.iter().map(|&r| tests[t].eval(r)).sum();
            value -= params.alpha * w * w * diag;
        }
        out.push(Measured::new(value, scale * (var / m).sqrt()));
    }
    Ok(out)
}

fn ensemble_test_means(ensemble: &ParticleEnsemble, radii: &[f64], tests: &[RadialBump]) -> (Vec<Measured>, Vec<Measured>) {
    let n = ensemble.count() as f64;
    let w = ensemble.weight();
    let mut rho = Vec::with_capacity(tests.len());
    let mut slope = Vec::with_capacity(tests.len());
    for test in tests {
        let mut s = 0.0;
        let mut s2 = 0.0;
        let mut g = 0.0;
        let mut g2 = 0.0;
        for &r in radii {
            let x = test.eval(r);
            s += x;
            s2 += x * x;
            let y = test.r_times_slope(r);
            g += y;
            g2 += y * y;
        }
        let var_s = ((s2 - s * s / n) / (n - 1.0).max(1.0)).max(0.0);
        let var_g = ((g2 - g * g / n) / (n - 1.0).max(1.0)).max(0.0);
        rho.push(Measured::new(w * s, w * (n * var_s).sqrt()));
        slope.push(Measured::new(w * g, w * (n * var_g).sqrt()));
    }
    (rho, slope)
}

/// Trapezoid rule over `(tau, value)` nodes, with the standard error
/// propagated through the quadrature weights.
fn trapezoid(taus: &[f64], values: impl Fn(usize) -> Measured) -> Measured {
    let mut acc = 0.0;
    let mut var = 0.0;
    let m = taus.len();
    for s in 0..m {
        let left = if s == 0 { taus[0] } else { taus[s - 1] };
        let right = if s + 1 == m { taus[m - 1] } else { taus[s + 1] };
        let weight = 0.5 * (right - left);
        let v = values(s);
        acc += weight * v.value;
        var += (weight * v.std_error).powi(2);
    }
    Measured::new(acc, var.sqrt())
}

/// Residual of the weak form of the rescaled equation over a window of
/// consecutive normalized snapshots:
///
/// `int psi(t) rho + int ds [A - d B] int rho psi
///    = int ds B int psi xi.grad(rho) + int rho psi(0) + int ds int B(psi,psi) rho`,
///
/// every term estimated by ensemble averages (the collision term by pair
/// sampling with post-collision evaluation), normalized by the dominant term
/// magnitude, maximized over the test set.
pub fn weak_residual<R: Rng + ?Sized>(
    snapshots: &[WindowSnapshot],
    params: &ModelParams,
    tests: &[RadialBump],
    pair_budget: usize,
    rng: &mut R,
) -> Result<WeakResidualReport> {
    if snapshots.len() < 2 {
        return Err(Error::NotEnoughData {
            needed: 2,
            got: snapshots.len(),
        });
    }
    if tests.is_empty() {
        return Err(Error::invalid("tests", "need at least one test function"));
    }
    let d = params.dim as f64;
    let mut terms = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let ens = &snap.ensemble;
        let radii: Vec<f64> = ens.iter().map(vecmath::norm).collect();
        let (mean_rho, mean_r_slope) = ensemble_test_means(ens, &radii, tests);
        let (a, b) = selfsim::estimate_ab(ens, params, pair_budget, rng)?;
        let (big_a, big_b) = selfsim::coefficients_ab(a.value, b.value, params.alpha, params.dim);
        let alpha = params.alpha;
        let se_big_a = ((0.5 * alpha * (d + 2.0) * a.std_error).powi(2)
            + (alpha * b.std_error).powi(2))
        .sqrt();
        let se_big_b =
            ((0.5 * alpha * a.std_error).powi(2) + (alpha / d * b.std_error).powi(2)).sqrt();
        let collision = collision_terms(ens, &radii, params, tests, pair_budget, rng)?;
        terms.push(SnapshotTerms {
            tau: snap.tau,
            mean_rho,
            mean_r_slope,
            big_a: Measured::new(big_a, se_big_a),
            big_b: Measured::new(big_b, se_big_b),
            collision,
        });
    }

    let taus: Vec<f64> = terms.iter().map(|s| s.tau).collect();
    let mut per_test = Vec::with_capacity(tests.len());
    for (t, test) in tests.iter().enumerate() {
        let first = &terms[0];
        let last = terms.last().unwrap();
        let t1 = last.mean_rho[t];
        let t4 = first.mean_rho[t];
        let t2 = trapezoid(&taus, |s| {
            let st = &terms[s];
            let coeff = st.big_a.value - d * st.big_b.value;
            let se_coeff = (st.big_a.std_error.powi(2) + (d * st.big_b.std_error).powi(2)).sqrt();
            Measured::new(
                coeff * st.mean_rho[t].value,
                ((se_coeff * st.mean_rho[t].value).powi(2)
                    + (coeff * st.mean_rho[t].std_error).powi(2))
                .sqrt(),
            )
        });
        let t3 = trapezoid(&taus, |s| {
            let st = &terms[s];
            Measured::new(
                st.big_b.value * st.mean_r_slope[t].value,
                ((st.big_b.std_error * st.mean_r_slope[t].value).powi(2)
                    + (st.big_b.value * st.mean_r_slope[t].std_error).powi(2))
                .sqrt(),
            )
        });
        let t5 = trapezoid(&taus, |s| terms[s].collision[t]);
        let num = t1.value + t2.value - t3.value - t4.value - t5.value;
        let se = (t1.std_error.powi(2)
            + t2.std_error.powi(2)
            + t3.std_error.powi(2)
            + t4.std_error.powi(2)
            + t5.std_error.powi(2))
        .sqrt();
        let scale = [t1.value, t2.value, t3.value, t4.value, t5.value]
            .iter()
            .fold(1e-12f64, |acc, x| acc.max(x.abs()));
        per_test.push(TestResidual {
            center: test.center,
            residual: num.abs() / scale,
            std_error: se / scale,
            scale,
        });
    }
    let worst = per_test
        .iter()
        .max_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap())
        .unwrap();
    Ok(WeakResidualReport {
        residual: worst.residual,
        std_error: worst.std_error,
        per_test,
    })
}
