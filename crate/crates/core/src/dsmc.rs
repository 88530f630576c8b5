//! Stochastic particle simulation of the annihilation dynamics: pairs collide
//! at rate proportional to `|v - v*|^gamma`, annihilate with probability
//! `alpha`, otherwise scatter elastically.
//!
//! Pair selection follows the Nanbu-Babovsky scheme: each step draws disjoint
//! candidate pairs by partial shuffle, with the candidate count calibrated so
//! that acceptance-rejection against a global rate majorant reproduces the
//! mean-field collision frequency. With per-particle weight `w` and majorant
//! `L`, the expected candidate count is `N (N-1) w L dt / 2`; a candidate is
//! accepted with probability `rate / L`. For Maxwellian molecules
//! (`gamma = 0`) the majorant is exactly 1 and every candidate is accepted,
//! which makes the closed-form density decay of the `maxwell` module the
//! calibration oracle for the engine's rate normalization.

use crate::collision;
use crate::ensemble::{ModelParams, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::selfsim;
use crate::stats::{self, MomentRecord};
use crate::vecmath;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Initial velocity samplers. All are isotropic about their center (the
/// origin unless a drift `u` is given for the Maxwellian).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialSampler {
    /// Gaussian with temperature `theta` and mean velocity `u` (origin if
    /// omitted).
    Maxwellian {
        theta: f64,
        #[serde(default)]
        u: Option<Vec<f64>>,
    },
    /// Uniform on the sphere of the given radius.
    Shell { radius: f64 },
    /// Isotropic two-temperature mixture: temperature `theta_hot` with
    /// probability `hot_fraction`, else `theta_cold`.
    TwoTemperature {
        theta_cold: f64,
        theta_hot: f64,
        hot_fraction: f64,
    },
}

impl InitialSampler {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitialSampler::Maxwellian { theta, u } => {
                if !(*theta > 0.0) {
                    return Err(Error::invalid("sampler.theta", format!("{theta} must be > 0")));
                }
                if let Some(u) = u {
                    if u.len() != dim {
                        return Err(Error::invalid("sampler.u", format!("length {} != d = {dim}", u.len())));
                    }
                }
            }
            InitialSampler::Shell { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::invalid("sampler.radius", format!("{radius} must be > 0")));
                }
            }
            InitialSampler::TwoTemperature {
                theta_cold,
                theta_hot,
                hot_fraction,
            } => {
                if !(*theta_cold > 0.0) || !(*theta_hot > 0.0) {
                    return Err(Error::invalid("sampler", "temperatures must be > 0"));
                }
                if !(0.0..=1.0).contains(hot_fraction) {
                    return Err(Error::invalid("sampler.hot_fraction", format!("{hot_fraction} not in [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Draw `count` particles of the given statistical weight.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        dim: usize,
        count: usize,
        weight: f64,
        rng: &mut R,
    ) -> Result<ParticleEnsemble> {
        self.validate(dim)?;
        let mut ens = ParticleEnsemble::new(dim, weight)?;
        let mut v = vec![0.0; dim];
        for _ in 0..count {
            match self {
                InitialSampler::Maxwellian { theta, u } => {
                    let s = theta.sqrt();
                    for (i, x) in v.iter_mut().enumerate() {
                        let g: f64 = rng.sample(StandardNormal);
                        *x = s * g + u.as_ref().map_or(0.0, |u| u[i]);
                    }
                }
                InitialSampler::Shell { radius } => {
                    collision::sample_unit_vector(rng, &mut v);
                    for x in v.iter_mut() {
                        *x *= radius;
                    }
                }
                InitialSampler::TwoTemperature {
                    theta_cold,
                    theta_hot,
                    hot_fraction,
                } => {
                    let theta = if rng.random::<f64>() < *hot_fraction {
                        *theta_hot
                    } else {
                        *theta_cold
                    };
                    let s = theta.sqrt();
                    for x in v.iter_mut() {
                        let g: f64 = rng.sample(StandardNormal);
                        *x = s * g;
                    }
                }
            }
            ens.push(&v);
        }
        Ok(ens)
    }
}

/// Bookkeeping for one collision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub dt: f64,
    /// Candidate pairs drawn.
    pub attempted_pairs: u64,
    /// Pairs that actually collided (scatter or annihilation).
    pub accepted_collisions: u64,
    pub annihilations: u64,
    /// Rate majorant used for acceptance-rejection.
    pub majorant: f64,
    /// Kinetic energy removed by annihilations (weight included).
    pub removed_energy: f64,
}

/// Global pair-rate majorant: no pair rate can exceed `(2 max|v|)^gamma`,
/// further capped by the kernel truncation when present.
pub fn rate_majorant(ensemble: &ParticleEnsemble, params: &ModelParams) -> f64 {
    if params.gamma == 0.0 {
        return 1.0;
    }
    let max_speed = ensemble
        .iter()
        .map(vecmath::norm)
        .fold(0.0f64, f64::max);
    let mut r = 2.0 * max_speed;
    if let Some(n) = params.trunc_n {
        r = r.min(n as f64);
    }
    r.powf(params.gamma)
}

/// Largest time step keeping the expected candidate-involved particle
/// fraction at `candidate_fraction` (default 0.1 per-particle probability).
pub fn stable_dt(ensemble: &ParticleEnsemble, params: &ModelParams, candidate_fraction: f64) -> f64 {
    let n = ensemble.count();
    if n < 2 {
        return f64::INFINITY;
    }
    let majorant = rate_majorant(ensemble, params);
    let per_particle = (n as f64 - 1.0) * ensemble.weight() * majorant;
    if per_particle <= 0.0 {
        f64::INFINITY
    } else {
        candidate_fraction / per_particle
    }
}

/// Collision engine holding reusable scratch buffers.
pub struct CollisionEngine {
    params: ModelParams,
    indices: Vec<u32>,
    dead: Vec<u32>,
    sigma: Vec<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

impl CollisionEngine {
    pub fn new(params: ModelParams) -> Self {
        let dim = params.dim;
        CollisionEngine {
            params,
            indices: Vec::new(),
            dead: Vec::new(),
            sigma: vec![0.0; dim],
            buf_a: vec![0.0; dim],
            buf_b: vec![0.0; dim],
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Advance the ensemble by one collision step of length `dt`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        ensemble: &mut ParticleEnsemble,
        dt: f64,
        rng: &mut R,
    ) -> Result<StepReport> {
        let n = ensemble.count();
        if n < 2 {
            return Err(Error::Extinct);
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("{dt} must be positive and finite")));
        }
        let majorant = rate_majorant(ensemble, &self.params);
        let mut report = StepReport {
            dt,
            attempted_pairs: 0,
            accepted_collisions: 0,
            annihilations: 0,
            majorant,
            removed_energy: 0.0,
        };
        if majorant <= 0.0 {
            return Ok(report);
        }

        // Expected candidate pairs from the mean-field collision frequency,
        // with stochastic rounding to keep the estimator unbiased.
        let expected = 0.5 * n as f64 * (n as f64 - 1.0) * ensemble.weight() * majorant * dt;
        let mut pairs = expected.floor() as usize;
        if rng.random::<f64>() < expected - expected.floor() {
            pairs += 1;
        }
        let pairs = pairs.min(n / 2);
        report.attempted_pairs = pairs as u64;
        if pairs == 0 {
            return Ok(report);
        }

        // Disjoint candidate pairs via partial Fisher-Yates shuffle.
        self.indices.clear();
        self.indices.extend(0..n as u32);
        for k in 0..2 * pairs {
            let j = rng.random_range(k..n);
            self.indices.swap(k, j);
        }

        self.dead.clear();
        let alpha = self.params.alpha;
        let truncated = self.params.trunc_n;
        for p in 0..pairs {
            let i = self.indices[2 * p] as usize;
            let j = self.indices[2 * p + 1] as usize;
            let rate = collision::relative_rate(ensemble.velocity(i), ensemble.velocity(j), &self.params);
            if rate > majorant * (1.0 + 1e-12) {
                return Err(Error::MajorantExceeded { rate, majorant });
            }
            if rng.random::<f64>() >= rate / majorant {
                continue;
            }
            collision::sample_unit_vector(rng, &mut self.sigma);
            if let Some(tn) = truncated {
                // Angular truncation b_n = 1_{|cos| <= 1 - 1/n} b by rejection:
                // an out-of-range direction voids the whole event so that the
                // annihilation channel carries the truncated angular mass too.
                let rel = vecmath::dist(ensemble.velocity(i), ensemble.velocity(j));
                if rel < 1e-300 {
                    if self.params.gamma == 0.0 {
                        return Err(Error::DegenerateDirection);
                    }
                    continue;
                }
                let mut cos_theta = 0.0;
                for (k, s) in self.sigma.iter().enumerate() {
                    cos_theta += s * (ensemble.velocity(i)[k] - ensemble.velocity(j)[k]);
                }
                cos_theta /= rel;
                if cos_theta.abs() > 1.0 - 1.0 / tn as f64 {
                    continue;
                }
            }
            report.accepted_collisions += 1;
            if alpha > 0.0 && rng.random::<f64>() < alpha {
                report.annihilations += 1;
                report.removed_energy += ensemble.weight()
                    * (vecmath::norm_sq(ensemble.velocity(i)) + vecmath::norm_sq(ensemble.velocity(j)));
                self.dead.push(i as u32);
                self.dead.push(j as u32);
            } else {
                collision::post_collision_into(
                    ensemble.velocity(i),
                    ensemble.velocity(j),
                    &self.sigma,
                    &mut self.buf_a,
                    &mut self.buf_b,
                );
                ensemble.velocity_mut(i).copy_from_slice(&self.buf_a);
                ensemble.velocity_mut(j).copy_from_slice(&self.buf_b);
            }
        }

        // Compact in descending index order so swap_remove never disturbs a
        // pending removal.
        self.dead.sort_unstable_by(|a, b| b.cmp(a));
        for &i in &self.dead {
            ensemble.swap_remove(i as usize);
        }
        Ok(report)
    }
}

/// One collision step with a throwaway engine. Prefer [`CollisionEngine`] in
/// loops.
pub fn collide_step<R: Rng + ?Sized>(
    ensemble: &mut ParticleEnsemble,
    dt: f64,
    params: &ModelParams,
    rng: &mut R,
) -> Result<StepReport> {
    CollisionEngine::new(params.clone()).step(ensemble, dt, rng)
}

/// Bulk state at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkRecord {
    pub t: f64,
    pub n: f64,
    pub energy: f64,
    pub u: Vec<f64>,
    pub theta: f64,
}

/// Collision-event totals accumulated between checkpoints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub attempted_pairs: u64,
    pub accepted_collisions: u64,
    pub annihilations: u64,
}

/// Checkpointed output of a physical-frame run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub records: Vec<MomentRecord>,
    pub bulk: Vec<BulkRecord>,
    pub events: Vec<EventCounts>,
    /// Set when the run ended early with fewer than 2 particles.
    pub extinct: bool,
}

/// Settings for a physical-frame run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalRunConfig {
    pub n_particles: usize,
    /// Initial number density represented by the ensemble.
    pub n0: f64,
    pub t_end: f64,
    pub checkpoints: usize,
    pub sampler: InitialSampler,
    /// Moment orders `k` recorded at checkpoints (`M_k = w sum |v|^{2k}`).
    pub moment_orders: Vec<f64>,
    /// Target per-particle candidate probability per step.
    pub candidate_fraction: f64,
    /// Pairs sampled for the loss-functional estimates at checkpoints.
    pub pair_budget: usize,
}

impl Default for PhysicalRunConfig {
    fn default() -> Self {
        PhysicalRunConfig {
            n_particles: 20_000,
            n0: 1.0,
            t_end: 1.0,
            checkpoints: 10,
            sampler: InitialSampler::Maxwellian { theta: 1.0, u: None },
            moment_orders: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            candidate_fraction: 0.1,
            pair_budget: 200_000,
        }
    }
}

fn checkpoint_record<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    t: f64,
    cfg: &PhysicalRunConfig,
    params: &ModelParams,
    rng: &mut R,
) -> Result<MomentRecord> {
    selfsim::moment_record(ensemble, t, &cfg.moment_orders, params, cfg.pair_budget, rng)
}

/// Run the physical annihilation dynamics from a pre-sampled ensemble,
/// recording bulk quantities and moments at evenly spaced checkpoints.
pub fn run_physical_from<R: Rng + ?Sized>(
    mut ensemble: ParticleEnsemble,
    cfg: &PhysicalRunConfig,
    params: &ModelParams,
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    if cfg.checkpoints == 0 || !(cfg.t_end > 0.0) {
        return Err(Error::invalid("t_end", "need t_end > 0 and checkpoints >= 1"));
    }
    let mut engine = CollisionEngine::new(params.clone());
    let mut traj = Trajectory {
        times: Vec::with_capacity(cfg.checkpoints + 1),
        records: Vec::with_capacity(cfg.checkpoints + 1),
        bulk: Vec::with_capacity(cfg.checkpoints + 1),
        events: Vec::with_capacity(cfg.checkpoints + 1),
        extinct: false,
    };
    let mut t = 0.0;
    let mut pending = EventCounts::default();
    let record =
        |traj: &mut Trajectory, ens: &ParticleEnsemble, t: f64, ev: EventCounts, rng: &mut R| -> Result<()> {
            let b = stats::bulk_quantities(ens)?;
            traj.times.push(t);
            traj.bulk.push(BulkRecord {
                t,
                n: b.n,
                energy: ens.energy(),
                u: b.u,
                theta: b.theta,
            });
            traj.records.push(checkpoint_record(ens, t, cfg, params, rng)?);
            traj.events.push(ev);
            Ok(())
        };
    record(&mut traj, &ensemble, t, pending, rng)?;

    'outer: for c in 1..=cfg.checkpoints {
        let target = cfg.t_end * c as f64 / cfg.checkpoints as f64;
        while t < target {
            if ensemble.count() < 2 {
                traj.extinct = true;
                break 'outer;
            }
            let dt = stable_dt(&ensemble, params, cfg.candidate_fraction).min(target - t);
            if !dt.is_finite() {
                // No collisions possible (e.g. all particles at rest): the
                // state is frozen, jump to the checkpoint.
                t = target;
                break;
            }
            let rep = engine.step(&mut ensemble, dt, rng)?;
            pending.attempted_pairs += rep.attempted_pairs;
            pending.accepted_collisions += rep.accepted_collisions;
            pending.annihilations += rep.annihilations;
            t += dt;
        }
        if traj.extinct {
            break;
        }
        record(&mut traj, &ensemble, t, pending, rng)?;
        pending = EventCounts::default();
    }
    Ok(traj)
}

/// Sample the initial ensemble and run the physical dynamics.
pub fn run_physical<R: Rng + ?Sized>(
    cfg: &PhysicalRunConfig,
    params: &ModelParams,
    rng: &mut R,
) -> Result<Trajectory> {
    if cfg.n_particles < 2 {
        return Err(Error::invalid("n_particles", "need at least 2 particles"));
    }
    if !(cfg.n0 > 0.0) {
        return Err(Error::invalid("n0", "initial density must be positive"));
    }
    let weight = cfg.n0 / cfg.n_particles as f64;
    let ensemble = cfg.sampler.sample(params.dim, cfg.n_particles, weight, rng)?;
    run_physical_from(ensemble, cfg, params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use approx::assert_relative_eq;

    fn maxwell_params(alpha: f64) -> ModelParams {
        ModelParams::new(3, 0.0, alpha).unwrap()
    }

    #[test]
    fn pure_annihilation_removes_pairs() {
        // alpha = 1, gamma = 0: every accepted candidate removes two particles.
        let params = maxwell_params(1.0);
        let mut rng = stream_rng(1, 0);
        let mut ens = InitialSampler::Maxwellian { theta: 1.0, u: None }
            .sample(3, 512, 1.0 / 512.0, &mut rng)
            .unwrap();
        let before = ens.count();
        let rep = collide_step(&mut ens, 0.05, &params, &mut rng).unwrap();
        assert_eq!(rep.accepted_collisions, rep.annihilations);
        assert_eq!(before - ens.count(), 2 * rep.annihilations as usize);
        assert!(rep.annihilations > 0);
    }

    #[test]
    fn elastic_step_conserves_everything() {
        let params = ModelParams::new(3, 1.0, 0.0).unwrap();
        let mut rng = stream_rng(2, 0);
        let mut ens = InitialSampler::Shell { radius: 1.5 }
            .sample(3, 2000, 1.0 / 2000.0, &mut rng)
            .unwrap();
        let mass0 = ens.mass();
        let energy0 = ens.energy();
        let mut momentum0 = vec![0.0; 3];
        for v in ens.iter() {
            for (m, x) in momentum0.iter_mut().zip(v) {
                *m += x;
            }
        }
        for _ in 0..50 {
            let dt = stable_dt(&ens, &params, 0.1);
            collide_step(&mut ens, dt, &params, &mut rng).unwrap();
        }
        assert_eq!(ens.mass(), mass0);
        assert_relative_eq!(ens.energy(), energy0, epsilon = 1e-11);
        let mut momentum = vec![0.0; 3];
        for v in ens.iter() {
            for (m, x) in momentum.iter_mut().zip(v) {
                *m += x;
            }
        }
        for i in 0..3 {
            assert_relative_eq!(momentum[i], momentum0[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn maxwellian_density_decay_matches_ode() {
        // gamma = 0, alpha = 0.1: dn/dt = -alpha n^2.
        let params = maxwell_params(0.1);
        let cfg = PhysicalRunConfig {
            n_particles: 50_000,
            t_end: 10.0,
            checkpoints: 5,
            pair_budget: 10_000,
            ..Default::default()
        };
        let mut rng = stream_rng(3, 0);
        let traj = run_physical(&cfg, &params, &mut rng).unwrap();
        assert!(!traj.extinct);
        for (i, &t) in traj.times.iter().enumerate() {
            let exact = 1.0 / (1.0 + 0.1 * t);
            let rel = (traj.bulk[i].n - exact).abs() / exact;
            assert!(rel < 0.02, "t = {t}: n = {} vs {exact}", traj.bulk[i].n);
        }
    }

    #[test]
    fn elastic_run_is_exactly_conservative() {
        let params = ModelParams::new(3, 1.0, 0.0).unwrap();
        let cfg = PhysicalRunConfig {
            n_particles: 5_000,
            t_end: 2.0,
            checkpoints: 4,
            pair_budget: 5_000,
            ..Default::default()
        };
        let mut rng = stream_rng(4, 0);
        let traj = run_physical(&cfg, &params, &mut rng).unwrap();
        for b in &traj.bulk {
            assert_eq!(b.n, traj.bulk[0].n);
            assert_relative_eq!(b.energy, traj.bulk[0].energy, epsilon = 1e-11);
        }
        for ev in &traj.events {
            assert_eq!(ev.annihilations, 0);
        }
    }

    #[test]
    fn annihilation_monotonically_drains_mass_and_energy() {
        let params = ModelParams::new(3, 1.0, 0.2).unwrap();
        let cfg = PhysicalRunConfig {
            n_particles: 10_000,
            t_end: 1.0,
            checkpoints: 8,
            pair_budget: 5_000,
            ..Default::default()
        };
        let mut rng = stream_rng(5, 0);
        let traj = run_physical(&cfg, &params, &mut rng).unwrap();
        for w in traj.bulk.windows(2) {
            assert!(w[1].n <= w[0].n);
            assert!(w[1].energy <= w[0].energy * (1.0 + 1e-12));
        }
    }

    #[test]
    fn trajectory_is_reproducible() {
        let params = ModelParams::new(3, 1.0, 0.1).unwrap();
        let cfg = PhysicalRunConfig {
            n_particles: 2_000,
            t_end: 0.5,
            checkpoints: 3,
            pair_budget: 2_000,
            ..Default::default()
        };
        let a = run_physical(&cfg, &params, &mut stream_rng(6, 0)).unwrap();
        let b = run_physical(&cfg, &params, &mut stream_rng(6, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn maxwellian_scattering_keeps_equilibrium_moments() {
        // Scattering is an involution in distribution: a Maxwellian ensemble's
        // moments stay put under elastic steps.
        let params = ModelParams::new(3, 1.0, 0.0).unwrap();
        let mut rng = stream_rng(8, 0);
        let mut ens = InitialSampler::Maxwellian { theta: 0.8, u: None }
            .sample(3, 50_000, 1.0 / 50_000.0, &mut rng)
            .unwrap();
        let m2_before = crate::stats::moment(&ens, 2.0).unwrap();
        let m4_before = crate::stats::moment(&ens, 4.0).unwrap();
        for _ in 0..200 {
            let dt = stable_dt(&ens, &params, 0.1);
            collide_step(&mut ens, dt, &params, &mut rng).unwrap();
        }
        let m4_after = crate::stats::moment(&ens, 4.0).unwrap();
        // Energy is conserved pathwise; the fourth moment must agree within
        // the combined sampling errors.
        assert_relative_eq!(crate::stats::moment(&ens, 2.0).unwrap().value, m2_before.value, epsilon = 1e-10);
        let tol = 3.0 * (m4_before.std_error + m4_after.std_error);
        assert!((m4_after.value - m4_before.value).abs() < tol);
    }

    #[test]
    fn degenerate_pair_with_truncation_errors_for_maxwell_kernel() {
        // gamma = 0 with angular truncation and an identical pair: the
        // reference direction for the cutoff is undefined.
        let params = ModelParams::new(3, 0.0, 0.0).unwrap().with_trunc(2).unwrap();
        let mut ens =
            ParticleEnsemble::from_velocities(3, 1.0, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let mut rng = stream_rng(9, 0);
        // Large dt forces the single candidate pair every step.
        let mut saw_error = false;
        for _ in 0..16 {
            match collide_step(&mut ens, 2.0, &params, &mut rng) {
                Err(Error::DegenerateDirection) => {
                    saw_error = true;
                    break;
                }
                Ok(_) => {}
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn extinction_terminates_gracefully() {
        let params = maxwell_params(1.0);
        let cfg = PhysicalRunConfig {
            n_particles: 16,
            t_end: 2000.0,
            checkpoints: 4,
            sampler: InitialSampler::Maxwellian { theta: 1.0, u: None },
            pair_budget: 100,
            ..Default::default()
        };
        let mut rng = stream_rng(7, 0);
        let traj = run_physical(&cfg, &params, &mut rng).unwrap();
        assert!(traj.extinct);
    }
}
