//! Self-similar frame: rescaling to unit mass and energy `d/2`, depletion
//! control by resampling, estimation of the loss functionals and their
//! induced coefficients, and the long-time driver that relaxes the rescaled
//! dynamics to a stationary velocity profile.
//!
//! The rescaled flow is realized by simulating the physical dynamics and
//! renormalizing periodically; the two are equivalent through the exact
//! scaling map, with the rescaled clock advancing as
//! `dtau = n(t) vbar(t)^gamma dt`.

use crate::analysis::{self, RadialBump};
use crate::dsmc::{CollisionEngine, InitialSampler};
use crate::ensemble::{ModelParams, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::stats::{self, Measured, MomentEntry, MomentRecord, RadialProfile, ScalingState};
use crate::vecmath;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Scaling state from density and energy:
/// `beta = sqrt(d n / 2 E)`, `vbar = 1/beta`, `lambda = beta^d n`.
pub fn scaling_state(n: f64, energy: f64, dim: usize) -> Result<ScalingState> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid("n", format!("{n} must be positive")));
    }
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::invalid("energy", format!("{energy} must be positive")));
    }
    let beta = (dim as f64 * n / (2.0 * energy)).sqrt();
    Ok(ScalingState {
        n,
        energy,
        beta,
        lambda: beta.powi(dim as i32) * n,
        vbar: 1.0 / beta,
    })
}

/// Map the ensemble to the self-similar variables `xi = v / vbar`, rescaling
/// the weight so the result has unit mass and (by construction of `vbar`)
/// energy exactly `d/2`.
pub fn normalize(ensemble: &ParticleEnsemble) -> Result<(ParticleEnsemble, ScalingState)> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let state = scaling_state(ensemble.mass(), ensemble.energy(), ensemble.dim())?;
    let mut out = ensemble.clone();
    out.scale_velocities(state.beta);
    out.set_weight(1.0 / out.count() as f64);
    Ok((out, state))
}

/// Restore the particle count to `n_target` by cloning particles uniformly at
/// random (or removing them, when over target), adjusting the weight so the
/// mass is preserved exactly. `jitter`, when set, adds isotropic Gaussian
/// noise of that standard deviation to cloned particles; it biases the
/// distribution and stays off in verification runs.
pub fn resample_with<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    n_target: usize,
    jitter: Option<f64>,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    let n = ensemble.count();
    if n < 2 {
        return Err(Error::Extinct);
    }
    if n_target < 2 {
        return Err(Error::invalid("n_target", "need at least 2 particles"));
    }
    let mass = ensemble.mass();
    let mut out = ensemble.clone();
    if n_target > n {
        let mut v = vec![0.0; ensemble.dim()];
        for _ in 0..n_target - n {
            let pick = rng.random_range(0..n);
            v.copy_from_slice(ensemble.velocity(pick));
            if let Some(s) = jitter {
                for x in v.iter_mut() {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    *x += s * g;
                }
            }
            out.push(&v);
        }
    } else {
        for k in (n_target..n).rev() {
            let pick = rng.random_range(0..=k);
            out.swap_remove(pick);
        }
    }
    out.set_weight(mass / n_target as f64);
    Ok(out)
}

/// Project a normalized ensemble back onto the zero-momentum isotropy class:
/// subtract the residual mean velocity, then renormalize so mass and energy
/// are exactly 1 and `d/2` again.
///
/// The rescaled flow propagates isotropy exactly in the mean-field limit, but
/// at finite `N` annihilation removals and resampling clones random-walk the
/// empirical momentum with no restoring force; left alone it grows past the
/// per-snapshot sampling noise over a long run. The projection is an
/// `O(N^{-1/2})` correction per application and keeps the ensemble inside the
/// isotropy class the stationary profile lives in.
pub fn recenter(ensemble: &ParticleEnsemble) -> Result<ParticleEnsemble> {
    let bulk = stats::bulk_quantities(ensemble)?;
    let mut out = ensemble.clone();
    let shift: Vec<f64> = bulk.u.iter().map(|x| -x).collect();
    out.translate(&shift);
    let (normalized, _) = normalize(&out)?;
    Ok(normalized)
}

/// [`resample_with`] without jitter.
pub fn resample<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    n_target: usize,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    resample_with(ensemble, n_target, None, rng)
}

/// Estimate the loss functionals
/// `a_psi = int int |xi - xi*|^g psi psi*` and
/// `b_psi = int int |xi - xi*|^g |xi|^2 psi psi*`
/// by a U-statistic over sampled unordered pairs (full enumeration when the
/// budget covers every pair), with standard errors from the pair-level
/// variance. The self-pair contribution is added analytically; it vanishes
/// unless `gamma = 0`, where it makes `a_psi` equal the squared mass exactly.
pub fn estimate_ab<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    params: &ModelParams,
    pair_budget: usize,
    rng: &mut R,
) -> Result<(Measured, Measured)> {
    let n = ensemble.count();
    if n < 2 {
        return Err(Error::Extinct);
    }
    if pair_budget == 0 {
        return Err(Error::invalid("pair_budget", "must be positive"));
    }
    let w = ensemble.weight();
    let nf = n as f64;
    let total_pairs = 0.5 * nf * (nf - 1.0);
    let exhaustive = total_pairs <= pair_budget as f64;
    let samples = if exhaustive {
        total_pairs as usize
    } else {
        pair_budget
    };

    let mut sum_a = 0.0;
    let mut sum_a2 = 0.0;
    let mut sum_b = 0.0;
    let mut sum_b2 = 0.0;
    let mut accumulate = |vi: &[f64], vj: &[f64]| {
        let rate = crate::collision::relative_rate(vi, vj, params);
        // Symmetrized energy factor over the unordered pair.
        let eb = rate * 0.5 * (vecmath::norm_sq(vi) + vecmath::norm_sq(vj));
        sum_a += rate;
        sum_a2 += rate * rate;
        sum_b += eb;
        sum_b2 += eb * eb;
    };
    if exhaustive {
        for i in 0..n - 1 {
            for j in i + 1..n {
                accumulate(ensemble.velocity(i), ensemble.velocity(j));
            }
        }
    } else {
        for _ in 0..samples {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            accumulate(ensemble.velocity(i), ensemble.velocity(j));
        }
    }

    let m = samples as f64;
    let scale = w * w * nf * (nf - 1.0);
    let mean_a = sum_a / m;
    let mean_b = sum_b / m;
    let (se_a, se_b) = if exhaustive {
        (0.0, 0.0)
    } else {
        let var_a = ((sum_a2 - m * mean_a * mean_a) / (m - 1.0)).max(0.0);
        let var_b = ((sum_b2 - m * mean_b * mean_b) / (m - 1.0)).max(0.0);
        (scale * (var_a / m).sqrt(), scale * (var_b / m).sqrt())
    };
    let (mut a, mut b) = (scale * mean_a, scale * mean_b);
    if params.gamma == 0.0 {
        // Diagonal terms of the product measure.
        a += w * w * nf;
        b += w * ensemble.energy();
    }
    Ok((Measured::new(a, se_a), Measured::new(b, se_b)))
}

/// Coefficients of the rescaled equation from the loss functionals:
/// `A_psi = -(alpha/2)(d+2) a + alpha b`, `B_psi = -(alpha/2) a + (alpha/d) b`.
/// They satisfy `d B - A = alpha a` and `(d+2) B - A = (2 alpha / d) b`.
pub fn coefficients_ab(a_psi: f64, b_psi: f64, alpha: f64, dim: usize) -> (f64, f64) {
    let d = dim as f64;
    let big_a = -0.5 * alpha * (d + 2.0) * a_psi + alpha * b_psi;
    let big_b = -0.5 * alpha * a_psi + alpha / d * b_psi;
    (big_a, big_b)
}

/// Assemble a full [`MomentRecord`] at time `t`: the requested moment orders
/// plus the loss functionals and their coefficients.
pub fn moment_record<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    t: f64,
    orders: &[f64],
    params: &ModelParams,
    pair_budget: usize,
    rng: &mut R,
) -> Result<MomentRecord> {
    let mut moments = Vec::with_capacity(orders.len());
    for &k in orders {
        let m = stats::moment(ensemble, 2.0 * k)?;
        moments.push(MomentEntry {
            order: k,
            value: m.value,
            std_error: m.std_error,
        });
    }
    let (a, b) = estimate_ab(ensemble, params, pair_budget, rng)?;
    let (big_a, big_b) = coefficients_ab(a.value, b.value, params.alpha, params.dim);
    Ok(MomentRecord {
        t,
        moments,
        a_psi: a,
        b_psi: b,
        big_a_psi: big_a,
        big_b_psi: big_b,
    })
}

/// Moment orders recorded by default along a profile run: everything the
/// verification checks at `k = 1 + gamma/2` need, plus the lower-bound levels.
pub fn default_profile_orders(params: &ModelParams) -> Vec<f64> {
    let g = params.gamma;
    let mut orders = vec![
        0.0,
        0.5,
        1.0,
        1.5,
        2.0,
        0.5 * g,
        g,
        1.0 + 0.5 * g,
        1.0 + g,
    ];
    if g > 0.0 {
        let mut j = 1;
        while (j as f64) * g / 2.0 < 1.0 {
            orders.push(j as f64 * g / 2.0);
            j += 1;
        }
    }
    orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
    orders.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    orders
}

/// Isotropy diagnostics of an ensemble: per-component momentum and
/// off-diagonal second moments, in units of their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    pub momentum_sigma: Vec<f64>,
    pub offdiag_sigma: Vec<f64>,
    pub max_sigma: f64,
}

pub fn isotropy_report(ensemble: &ParticleEnsemble) -> Result<IsotropyReport> {
    if ensemble.count() < 2 {
        return Err(Error::NotEnoughData {
            needed: 2,
            got: ensemble.count(),
        });
    }
    let dim = ensemble.dim();
    let n = ensemble.count() as f64;
    let mut momentum_sigma = Vec::with_capacity(dim);
    for c in 0..dim {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for v in ensemble.iter() {
            sum += v[c];
            sum_sq += v[c] * v[c];
        }
        let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(1e-300);
        momentum_sigma.push(sum.abs() / (n * var).sqrt());
    }
    let mut offdiag_sigma = Vec::new();
    for a in 0..dim {
        for b in a + 1..dim {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for v in ensemble.iter() {
                let x = v[a] * v[b];
                sum += x;
                sum_sq += x * x;
            }
            let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(1e-300);
            offdiag_sigma.push(sum.abs() / (n * var).sqrt());
        }
    }
    let max_sigma = momentum_sigma
        .iter()
        .chain(&offdiag_sigma)
        .fold(0.0f64, |acc, &x| acc.max(x));
    Ok(IsotropyReport {
        momentum_sigma,
        offdiag_sigma,
        max_sigma,
    })
}

/// Settings for the self-similar profile run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub n_target: usize,
    pub sampler: InitialSampler,
    /// Radial histogram resolution for window profiles.
    pub bins: usize,
    pub r_max: f64,
    /// Window length in mean free times of the rescaled frame.
    pub window_mft: f64,
    /// Stationarity tolerance on the weighted-L1 distance between successive
    /// window profiles.
    pub tol: f64,
    /// Consecutive below-tolerance windows required to declare stationarity.
    pub consecutive: usize,
    pub max_windows: usize,
    /// Keep accumulating windows (for verification checkpoints) at least this
    /// far even after stationarity is reached.
    pub min_windows: usize,
    pub moment_orders: Vec<f64>,
    pub pair_budget: usize,
    /// Renormalization cadence: mass lost per sub-interval.
    pub mass_loss_per_renorm: f64,
    pub candidate_fraction: f64,
    pub jitter: Option<f64>,
    /// Weak-form residual diagnostics per window (adds pair-sampling cost).
    pub compute_residuals: bool,
    pub residual_tests: Vec<RadialBump>,
}

impl ProfileConfig {
    pub fn for_params(params: &ModelParams) -> Self {
        ProfileConfig {
            n_target: 100_000,
            sampler: InitialSampler::Shell {
                radius: (params.dim as f64 / 2.0).sqrt(),
            },
            bins: 32,
            r_max: 4.0,
            window_mft: 16.0,
            tol: 0.02,
            consecutive: 5,
            max_windows: 60,
            min_windows: 16,
            moment_orders: default_profile_orders(params),
            pair_budget: 1_000_000,
            mass_loss_per_renorm: 0.05,
            candidate_fraction: 0.1,
            jitter: None,
            compute_residuals: true,
            residual_tests: analysis::default_test_set(),
        }
    }
}

/// Output of a profile run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRun {
    pub params: ModelParams,
    pub window_profiles: Vec<RadialProfile>,
    /// Weighted-L1 distances between successive window profiles.
    pub distances: Vec<f64>,
    pub stationary: bool,
    pub final_profile: RadialProfile,
    /// Per-bin standard error of the final (window-averaged) density.
    pub final_profile_se: Vec<f64>,
    pub diagnostics: Vec<MomentRecord>,
    /// Weak-form residual per window (empty when disabled).
    pub residuals: Vec<Measured>,
    pub isotropy: IsotropyReport,
    pub extinct: bool,
    /// Set when `alpha` exceeds the existence threshold `alpha_underbar`.
    pub warning: Option<String>,
}

/// Advance the physical dynamics until the rescaled clock has moved by
/// `target_tau`, tracking energy incrementally through annihilation losses.
fn advance_by_tau<R: Rng + ?Sized>(
    engine: &mut CollisionEngine,
    ensemble: &mut ParticleEnsemble,
    target_tau: f64,
    candidate_fraction: f64,
    rng: &mut R,
) -> Result<()> {
    let gamma = engine.params().gamma;
    let dim = ensemble.dim() as f64;
    let mut energy = ensemble.energy();
    let mut done = 0.0;
    while done < target_tau {
        if ensemble.count() < 2 {
            return Err(Error::Extinct);
        }
        let n = ensemble.mass();
        let vbar = (2.0 * energy / (dim * n)).sqrt();
        let clock_rate = n * vbar.powf(gamma);
        if !(clock_rate > 0.0) {
            return Err(Error::invalid("ensemble", "rescaled clock stalled (zero energy)"));
        }
        let params = engine.params().clone();
        let dt = crate::dsmc::stable_dt(ensemble, &params, candidate_fraction)
            .min((target_tau - done) / clock_rate);
        if !dt.is_finite() {
            return Err(Error::invalid("ensemble", "no collisions possible"));
        }
        let rep = engine.step(ensemble, dt, rng)?;
        energy -= rep.removed_energy;
        done += clock_rate * dt;
    }
    Ok(())
}

/// Relax the rescaled dynamics to the self-similar profile.
///
/// Each window advances the physical dynamics in renormalized sub-intervals
/// (mass loss per sub-interval below the configured fraction), resamples to
/// the target count, and accumulates a window-averaged radial profile.
/// Stationarity is declared when the weighted-L1 distance between successive
/// window profiles stays below tolerance for the configured number of
/// consecutive windows.
pub fn find_profile<R: Rng + ?Sized>(
    cfg: &ProfileConfig,
    params: &ModelParams,
    rng: &mut R,
) -> Result<ProfileRun> {
    params.validate()?;
    if cfg.n_target < 2 {
        return Err(Error::invalid("n_target", "need at least 2 particles"));
    }
    if cfg.bins == 0 || !(cfg.r_max > 0.0) {
        return Err(Error::invalid("bins", "need bins >= 1 and r_max > 0"));
    }
    if cfg.max_windows == 0 || cfg.consecutive == 0 {
        return Err(Error::invalid("max_windows", "need max_windows, consecutive >= 1"));
    }

    let warning = if params.gamma > 0.0 {
        let report = crate::constants::threshold_report(params)?;
        (params.alpha >= report.alpha_underbar).then(|| {
            format!(
                "alpha = {} is not below alpha_underbar = {:.6}; existence of a stationary profile is not guaranteed",
                params.alpha, report.alpha_underbar
            )
        })
    } else {
        None
    };

    let weight = 1.0 / cfg.n_target as f64;
    let initial = cfg.sampler.sample(params.dim, cfg.n_target, weight, rng)?;
    let (normalized, _) = normalize(&initial)?;
    let mut ens = recenter(&normalized)?;
    let mut engine = CollisionEngine::new(params.clone());

    let mut run = ProfileRun {
        params: params.clone(),
        window_profiles: Vec::new(),
        distances: Vec::new(),
        stationary: false,
        final_profile: stats::radial_histogram(&ens, cfg.bins, cfg.r_max)?,
        final_profile_se: vec![0.0; cfg.bins],
        diagnostics: Vec::new(),
        residuals: Vec::new(),
        isotropy: isotropy_report(&ens)?,
        extinct: false,
        warning,
    };

    let mut tau = 0.0;
    let mut prev_profile: Option<RadialProfile> = None;
    let mut consecutive_ok = 0;

    'windows: for _window in 0..cfg.max_windows {
        // Clock calibration at window start.
        let (a0, _) = estimate_ab(&ens, params, cfg.pair_budget.min(200_000), rng)?;
        let mean_free_time = 1.0 / a0.value.max(1e-12);
        let window_tau = cfg.window_mft * mean_free_time;
        let mut sub_tau = 0.5 * mean_free_time;
        if params.alpha > 0.0 {
            sub_tau = sub_tau.min(cfg.mass_loss_per_renorm / (params.alpha * a0.value.max(1e-12)));
        }
        let n_subs = ((window_tau / sub_tau).ceil() as usize).clamp(1, 10_000);
        let sub_tau = window_tau / n_subs as f64;

        let mut window_hists = Vec::with_capacity(n_subs);
        let mut snapshots = vec![analysis::WindowSnapshot {
            tau,
            ensemble: ens.clone(),
        }];
        for s in 0..n_subs {
            match advance_by_tau(&mut engine, &mut ens, sub_tau, cfg.candidate_fraction, rng) {
                Ok(()) => {}
                Err(Error::Extinct) => {
                    if run.window_profiles.is_empty() {
                        return Err(Error::Extinct);
                    }
                    run.extinct = true;
                    break 'windows;
                }
                Err(e) => return Err(e),
            }
            let (normalized, _state) = normalize(&ens)?;
            let centered = recenter(&normalized)?;
            ens = resample_with(&centered, cfg.n_target, cfg.jitter, rng)?;
            tau += sub_tau;
            window_hists.push(stats::radial_histogram(&ens, cfg.bins, cfg.r_max)?);
            if cfg.compute_residuals && (s + 1 == n_subs / 2 || s + 1 == n_subs) {
                snapshots.push(analysis::WindowSnapshot {
                    tau,
                    ensemble: ens.clone(),
                });
            }
        }

        let window_profile = RadialProfile::average(&window_hists)?;
        run.diagnostics
            .push(moment_record(&ens, tau, &cfg.moment_orders, params, cfg.pair_budget, rng)?);
        if cfg.compute_residuals && snapshots.len() >= 2 {
            let res = analysis::weak_residual(&snapshots, params, &cfg.residual_tests, cfg.pair_budget, rng)?;
            run.residuals.push(Measured::new(res.residual, res.std_error));
        }
        if let Some(prev) = &prev_profile {
            let d = window_profile.weighted_l1_distance(prev)?;
            run.distances.push(d);
            if d < cfg.tol {
                consecutive_ok += 1;
            } else {
                consecutive_ok = 0;
            }
        }
        prev_profile = Some(window_profile.clone());
        run.window_profiles.push(window_profile);
        if consecutive_ok >= cfg.consecutive {
            run.stationary = true;
            if run.window_profiles.len() >= cfg.min_windows {
                break;
            }
        }
    }

    let tail = run.window_profiles.len().min(cfg.consecutive.max(2));
    let last = &run.window_profiles[run.window_profiles.len() - tail..];
    run.final_profile = RadialProfile::average(last)?;
    run.final_profile_se = RadialProfile::density_std_error(last)?;
    run.isotropy = isotropy_report(&ens)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use approx::assert_relative_eq;

    fn sample_ensemble(seed: u64, n: usize) -> ParticleEnsemble {
        let mut rng = stream_rng(seed, 0);
        InitialSampler::Maxwellian { theta: 0.7, u: None }
            .sample(3, n, 1.0 / n as f64, &mut rng)
            .unwrap()
    }

    #[test]
    fn scaling_state_examples() {
        let s = scaling_state(1.0, 1.5, 3).unwrap();
        assert_relative_eq!(s.beta, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.lambda, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.vbar, 1.0, epsilon = 1e-15);

        let s = scaling_state(0.5, 0.75, 3).unwrap();
        assert_relative_eq!(s.beta, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.vbar, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.lambda, 0.5, epsilon = 1e-15);

        let s = scaling_state(1.0, 6.0, 3).unwrap();
        assert_relative_eq!(s.beta, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.vbar, 2.0, epsilon = 1e-15);
        assert_relative_eq!(s.lambda, 0.125, epsilon = 1e-15);

        assert!(scaling_state(0.0, 1.0, 3).is_err());
        assert!(scaling_state(1.0, 0.0, 3).is_err());
    }

    #[test]
    fn normalize_fixes_mass_and_energy() {
        let ens = sample_ensemble(11, 4000);
        let (norm, state) = normalize(&ens).unwrap();
        assert_relative_eq!(norm.mass(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(norm.energy(), 1.5, epsilon = 1e-12);
        assert_relative_eq!(state.beta * state.vbar, 1.0, epsilon = 1e-15);

        // Idempotent.
        let (again, state2) = normalize(&norm).unwrap();
        for i in 0..norm.count() {
            for c in 0..3 {
                assert_relative_eq!(again.velocity(i)[c], norm.velocity(i)[c], epsilon = 1e-12);
            }
        }
        assert_relative_eq!(state2.beta, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let ens = sample_ensemble(12, 1000);
        let mut doubled = ens.clone();
        doubled.scale_velocities(2.0);
        let (a, _) = normalize(&ens).unwrap();
        let (b, _) = normalize(&doubled).unwrap();
        for i in 0..a.count() {
            for c in 0..3 {
                assert_relative_eq!(a.velocity(i)[c], b.velocity(i)[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_zero_energy() {
        let ens = ParticleEnsemble::from_velocities(3, 1.0, vec![0.0; 6]).unwrap();
        assert!(normalize(&ens).is_err());
    }

    #[test]
    fn recenter_zeroes_momentum_and_keeps_frame() {
        let mut rng = stream_rng(25, 0);
        let mut ens = InitialSampler::Maxwellian { theta: 0.4, u: None }
            .sample(3, 5000, 1.0 / 5000.0, &mut rng)
            .unwrap();
        ens.translate(&[0.05, -0.02, 0.01]);
        let (normalized, _) = normalize(&ens).unwrap();
        let centered = recenter(&normalized).unwrap();
        let bulk = stats::bulk_quantities(&centered).unwrap();
        for c in bulk.u {
            assert!(c.abs() < 1e-12);
        }
        assert_relative_eq!(centered.mass(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(centered.energy(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn resample_rejects_tiny_targets() {
        let ens = sample_ensemble(26, 64);
        let mut rng = stream_rng(26, 1);
        assert!(resample(&ens, 1, &mut rng).is_err());
        let two = ParticleEnsemble::from_velocities(3, 1.0, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(resample(&two, 8, &mut rng), Err(Error::Extinct)));
        assert!(matches!(
            estimate_ab(&two, &ModelParams::new(3, 1.0, 0.1).unwrap(), 100, &mut rng),
            Err(Error::Extinct)
        ));
    }

    #[test]
    fn profile_run_reports_extinction() {
        let params = ModelParams::new(3, 1.0, 0.95).unwrap();
        let mut cfg = ProfileConfig::for_params(&params);
        cfg.n_target = 32;
        cfg.pair_budget = 500;
        cfg.compute_residuals = false;
        cfg.max_windows = 50;
        let mut rng = stream_rng(27, 0);
        match find_profile(&cfg, &params, &mut rng) {
            Err(Error::Extinct) => {}
            Ok(run) => assert!(run.extinct || run.warning.is_some()),
            Err(e) => panic!("unexpected error: {e}"),
        }
    }

    #[test]
    fn resample_preserves_mass_exactly() {
        let ens = sample_ensemble(13, 777);
        let mut rng = stream_rng(13, 1);
        let up = resample(&ens, 1500, &mut rng).unwrap();
        assert_eq!(up.count(), 1500);
        assert_relative_eq!(up.mass(), ens.mass(), epsilon = 1e-15);
        let down = resample(&ens, 300, &mut rng).unwrap();
        assert_eq!(down.count(), 300);
        assert_relative_eq!(down.mass(), ens.mass(), epsilon = 1e-15);
        // Identity when already at target.
        let same = resample(&ens, ens.count(), &mut rng).unwrap();
        assert_eq!(same, ens);
    }

    #[test]
    fn resample_keeps_moments_within_noise() {
        let ens = sample_ensemble(14, 20_000);
        let mut rng = stream_rng(14, 1);
        let m_before = stats::moment(&ens, 2.0).unwrap();
        let up = resample(&ens, 24_000, &mut rng).unwrap();
        let m_after = stats::moment(&up, 2.0).unwrap();
        // Clone-induced fluctuation is bounded by the base sampling error.
        let tol = 3.0 * (m_before.std_error + m_after.std_error);
        assert!((m_after.value - m_before.value).abs() < tol);
    }

    #[test]
    fn estimate_ab_maxwellian_molecules_exact() {
        // gamma = 0 on a unit-mass normalized frame: a = 1, b = d/2 exactly.
        let params = ModelParams::new(3, 0.0, 0.1).unwrap();
        let ens = sample_ensemble(15, 500);
        let (norm, _) = normalize(&ens).unwrap();
        let mut rng = stream_rng(15, 1);
        let (a, b) = estimate_ab(&norm, &params, 1_000_000, &mut rng).unwrap();
        assert_relative_eq!(a.value, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.value, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn estimate_ab_two_point_enumeration() {
        // Two particles at +-e1/sqrt(2), weight 1/2, gamma = 1: the single
        // pair has rate sqrt(2) and symmetrized energy 1/2, so
        // a = 2 w^2 sqrt(2) = sqrt(2)/2 and b = sqrt(2)/4.
        let params = ModelParams::new(3, 1.0, 0.1).unwrap();
        let x = std::f64::consts::FRAC_1_SQRT_2;
        let ens =
            ParticleEnsemble::from_velocities(3, 0.5, vec![x, 0.0, 0.0, -x, 0.0, 0.0]).unwrap();
        let mut rng = stream_rng(16, 0);
        let (a, b) = estimate_ab(&ens, &params, 1000, &mut rng).unwrap();
        assert_relative_eq!(a.value, std::f64::consts::SQRT_2 / 2.0, epsilon = 1e-14);
        assert_relative_eq!(b.value, std::f64::consts::SQRT_2 / 4.0, epsilon = 1e-14);
        assert_eq!(a.std_error, 0.0);
    }

    #[test]
    fn estimate_ab_sampled_matches_enumerated() {
        let params = ModelParams::new(3, 1.0, 0.1).unwrap();
        let ens = sample_ensemble(17, 600);
        let mut rng = stream_rng(17, 1);
        let (a_full, b_full) = estimate_ab(&ens, &params, usize::MAX, &mut rng).unwrap();
        let (a_mc, b_mc) = estimate_ab(&ens, &params, 40_000, &mut rng).unwrap();
        assert!((a_mc.value - a_full.value).abs() < 4.0 * a_mc.std_error);
        assert!((b_mc.value - b_full.value).abs() < 4.0 * b_mc.std_error);
    }

    #[test]
    fn coefficient_identities() {
        let d = 3;
        // alpha = 0 kills both coefficients.
        assert_eq!(coefficients_ab(1.3, 2.1, 0.0, d), (0.0, 0.0));
        // At the normalized fixed-moment point (a = 1, b = d/2):
        // A = -alpha, B = 0.
        let (big_a, big_b) = coefficients_ab(1.0, 1.5, 0.3, d);
        assert_relative_eq!(big_a, -0.3, epsilon = 1e-15);
        assert_relative_eq!(big_b, 0.0, epsilon = 1e-15);
        // Algebraic identities on arbitrary inputs.
        for (a, b, alpha) in [(0.7, 2.9, 0.12), (3.3, 0.4, 0.47), (1.0, 1.0, 0.9)] {
            let (big_a, big_b) = coefficients_ab(a, b, alpha, d);
            assert_relative_eq!(3.0 * big_b - big_a, alpha * a, epsilon = 1e-12);
            assert_relative_eq!(5.0 * big_b - big_a, 2.0 * alpha * b / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn profile_run_maxwellian_limit() {
        // alpha -> 0, gamma = 0: the stationary rescaled profile is the unit
        // Maxwellian with theta = 1/2 (mass 1, energy 3/2).
        let params = ModelParams::new(3, 0.0, 0.0).unwrap();
        let mut cfg = ProfileConfig::for_params(&params);
        cfg.n_target = 30_000;
        cfg.window_mft = 4.0;
        cfg.max_windows = 24;
        cfg.consecutive = 3;
        cfg.tol = 0.05;
        cfg.pair_budget = 100_000;
        cfg.compute_residuals = false;
        let mut rng = stream_rng(18, 0);
        let run = find_profile(&cfg, &params, &mut rng).unwrap();
        assert!(run.stationary);
        assert_relative_eq!(run.final_profile.mass, 1.0, epsilon = 5e-3);
        assert_relative_eq!(run.final_profile.energy, 1.5, max_relative = 0.02);

        // Compare the binned profile against the Maxwellian radial density.
        let theta: f64 = 0.5;
        let norm = (2.0 * std::f64::consts::PI * theta).powf(-1.5);
        let mut l1 = 0.0;
        for i in 0..run.final_profile.bins() {
            let r = run.final_profile.midpoint(i);
            let expected = norm * (-r * r / (2.0 * theta)).exp();
            l1 += (run.final_profile.density[i] - expected).abs() * run.final_profile.shell_volume(i);
        }
        assert!(l1 < 0.05, "L1 deviation from Maxwellian: {l1}");
    }

    #[test]
    fn moment_record_contains_requested_orders() {
        let params = ModelParams::new(3, 1.0, 0.1).unwrap();
        let ens = sample_ensemble(19, 1000);
        let mut rng = stream_rng(19, 1);
        let rec = moment_record(&ens, 0.0, &[0.0, 0.5, 1.0], &params, 10_000, &mut rng).unwrap();
        assert_relative_eq!(rec.moment(0.0).unwrap().value, ens.mass(), epsilon = 1e-12);
        assert!(rec.moment(0.5).is_ok());
        assert!(rec.moment(2.0).is_err());
        let (a, b) = (rec.a_psi.value, rec.b_psi.value);
        let (big_a, big_b) = coefficients_ab(a, b, params.alpha, 3);
        assert_relative_eq!(rec.big_a_psi, big_a, epsilon = 1e-12);
        assert_relative_eq!(rec.big_b_psi, big_b, epsilon = 1e-12);
    }
}
