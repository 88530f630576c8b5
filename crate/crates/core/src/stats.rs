//! Ensemble statistics: moments with Monte Carlo errors, bulk quantities,
//! radial histograms and L^p estimates on binned radial densities.

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::quadrature::ball_volume;
use crate::vecmath;
use serde::{Deserialize, Serialize};

/// A value together with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub std_error: f64,
}

impl Measured {
    pub fn new(value: f64, std_error: f64) -> Self {
        Measured { value, std_error }
    }

    pub fn exact(value: f64) -> Self {
        Measured {
            value,
            std_error: 0.0,
        }
    }
}

/// Scaling state linking the physical and self-similar frames:
/// `beta = sqrt(d n / 2 E)`, `vbar = 1/beta`, `lambda = beta^d n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    pub n: f64,
    pub energy: f64,
    pub beta: f64,
    pub lambda: f64,
    pub vbar: f64,
}

/// Moment of order `2k` keyed by `k`, i.e. `M_k = int psi |xi|^{2k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub order: f64,
    pub value: f64,
    pub std_error: f64,
}

/// Time-stamped moments of the (rescaled) distribution together with the loss
/// functionals `a_psi = int Q_-(psi,psi)`, `b_psi = int Q_-(psi,psi) |xi|^2`
/// and the induced coefficients `A_psi`, `B_psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub t: f64,
    pub moments: Vec<MomentEntry>,
    pub a_psi: Measured,
    pub b_psi: Measured,
    pub big_a_psi: f64,
    pub big_b_psi: f64,
}

impl MomentRecord {
    /// Look up `M_k` by order `k` (within an absolute tolerance).
    pub fn moment(&self, order: f64) -> Result<Measured> {
        self.moments
            .iter()
            .find(|e| (e.order - order).abs() <= 1e-9)
            .map(|e| Measured::new(e.value, e.std_error))
            .ok_or(Error::MissingMoment { order })
    }
}

/// Moment of order `p`: `weight * sum_i |v_i|^p`, with the standard error of
/// the sum estimated from the per-particle sample variance. Resampling
/// correlations are ignored, so after cloning the error is an approximation.
pub fn moment(ensemble: &ParticleEnsemble, order: f64) -> Result<Measured> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if order < 0.0 {
        return Err(Error::invalid("order", format!("{order} < 0")));
    }
    let n = ensemble.count() as f64;
    let w = ensemble.weight();
    if order == 0.0 {
        return Ok(Measured::exact(w * n));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for v in ensemble.iter() {
        let x = vecmath::norm(v).powf(order);
        sum += x;
        sum_sq += x * x;
    }
    let var = ((sum_sq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0);
    Ok(Measured::new(w * sum, w * (n * var).sqrt()))
}

/// Bulk quantities of the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bulk {
    /// Number density (total mass).
    pub n: f64,
    /// Mean velocity.
    pub u: Vec<f64>,
    /// Granular temperature `(1/(d n)) int |v - u|^2 f`.
    pub theta: f64,
}

pub fn bulk_quantities(ensemble: &ParticleEnsemble) -> Result<Bulk> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let dim = ensemble.dim();
    let count = ensemble.count() as f64;
    let n = ensemble.mass();
    let mut u = vec![0.0; dim];
    for v in ensemble.iter() {
        for (acc, x) in u.iter_mut().zip(v) {
            *acc += x;
        }
    }
    for x in &mut u {
        *x /= count;
    }
    let centered: f64 = ensemble.iter().map(|v| vecmath::dist_sq(v, &u)).sum();
    let theta = ensemble.weight() * centered / (dim as f64 * n);
    Ok(Bulk { n, u, theta })
}

/// Centered moment `weight * sum_i |v_i - u|^order` about the mean velocity,
/// with the standard error of the sum. Divide by the mass for the per-unit
/// versions (e.g. the Maxwellian identity `m4/theta^2 = d(d+2)` uses
/// `centered_moment(..., 4) / mass`).
pub fn centered_moment(ensemble: &ParticleEnsemble, order: f64) -> Result<Measured> {
    let bulk = bulk_quantities(ensemble)?;
    let n = ensemble.count() as f64;
    let w = ensemble.weight();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for v in ensemble.iter() {
        let x = vecmath::dist(v, &bulk.u).powf(order);
        sum += x;
        sum_sq += x * x;
    }
    let var = ((sum_sq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0);
    Ok(Measured::new(w * sum, w * (n * var).sqrt()))
}

/// Binned isotropic speed histogram: per-shell average density of the
/// distribution, with mass and (bin-midpoint) energy metadata. Particles past
/// the last edge are tallied separately as overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub dim: usize,
    /// `bins + 1` strictly increasing edges starting at 0.
    pub bin_edges: Vec<f64>,
    /// Average of the density over each shell (mass per velocity volume).
    pub density: Vec<f64>,
    /// Mass inside the binned range.
    pub mass: f64,
    /// Energy of the binned mass, from bin midpoints.
    pub energy: f64,
    /// Mass of particles beyond the last edge.
    pub overflow_mass: f64,
}

impl RadialProfile {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.bin_edges[i] + self.bin_edges[i + 1])
    }

    /// Volume of shell `i` in `R^dim`.
    pub fn shell_volume(&self, i: usize) -> f64 {
        let c = ball_volume(self.dim);
        let d = self.dim as f64;
        c * (self.bin_edges[i + 1].powf(d) - self.bin_edges[i].powf(d))
    }

    /// Mass contained in bin `i`.
    pub fn bin_mass(&self, i: usize) -> f64 {
        self.density[i] * self.shell_volume(i)
    }

    pub fn same_binning(&self, other: &RadialProfile) -> bool {
        self.dim == other.dim && self.bin_edges == other.bin_edges
    }

    /// Weighted-L1 distance `sum_b (1 + r_b^2) |m_self(b) - m_other(b)|` on
    /// per-bin masses, the natural metric for profiles with tail weight.
    pub fn weighted_l1_distance(&self, other: &RadialProfile) -> Result<f64> {
        if !self.same_binning(other) {
            return Err(Error::invalid("profile", "binnings differ"));
        }
        let mut dist = 0.0;
        for i in 0..self.bins() {
            let r = self.midpoint(i);
            dist += (1.0 + r * r) * (self.bin_mass(i) - other.bin_mass(i)).abs();
        }
        Ok(dist)
    }

    /// Bin-wise mean of several equally binned profiles.
    pub fn average(profiles: &[RadialProfile]) -> Result<RadialProfile> {
        let first = profiles.first().ok_or(Error::NotEnoughData { needed: 1, got: 0 })?;
        let m = profiles.len() as f64;
        let mut out = first.clone();
        for p in &profiles[1..] {
            if !first.same_binning(p) {
                return Err(Error::invalid("profile", "binnings differ"));
            }
            for (acc, d) in out.density.iter_mut().zip(&p.density) {
                *acc += d;
            }
            out.mass += p.mass;
            out.energy += p.energy;
            out.overflow_mass += p.overflow_mass;
        }
        for d in &mut out.density {
            *d /= m;
        }
        out.mass /= m;
        out.energy /= m;
        out.overflow_mass /= m;
        Ok(out)
    }

    /// Build a binned profile from a radial density function sampled at bin
    /// midpoints, filling mass and energy metadata consistently.
    pub fn from_radial_fn(dim: usize, bins: usize, r_max: f64, f: impl Fn(f64) -> f64) -> RadialProfile {
        let dr = r_max / bins as f64;
        let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 * dr).collect();
        let mut profile = RadialProfile {
            dim,
            bin_edges,
            density: vec![0.0; bins],
            mass: 0.0,
            energy: 0.0,
            overflow_mass: 0.0,
        };
        for i in 0..bins {
            let r = profile.midpoint(i);
            profile.density[i] = f(r).max(0.0);
            let mass = profile.density[i] * profile.shell_volume(i);
            profile.mass += mass;
            profile.energy += mass * r * r;
        }
        profile
    }

    /// Per-bin standard error of the mean across equally binned profiles.
    pub fn density_std_error(profiles: &[RadialProfile]) -> Result<Vec<f64>> {
        let first = profiles.first().ok_or(Error::NotEnoughData { needed: 1, got: 0 })?;
        let m = profiles.len() as f64;
        let mut se = vec![0.0; first.bins()];
        if profiles.len() < 2 {
            return Ok(se);
        }
        for i in 0..first.bins() {
            let mean = profiles.iter().map(|p| p.density[i]).sum::<f64>() / m;
            let var = profiles.iter().map(|p| (p.density[i] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            se[i] = (var / m).sqrt();
        }
        Ok(se)
    }
}

/// Build a radial histogram with `bins` uniform bins on `[0, r_max]`.
pub fn radial_histogram(ensemble: &ParticleEnsemble, bins: usize, r_max: f64) -> Result<RadialProfile> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if bins == 0 || !(r_max > 0.0) {
        return Err(Error::invalid("bins", "need bins >= 1 and positive max radius"));
    }
    let dim = ensemble.dim();
    let dr = r_max / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    for v in ensemble.iter() {
        let r = vecmath::norm(v);
        let idx = (r / dr) as usize;
        if r >= r_max || idx >= bins {
            overflow += 1;
        } else {
            counts[idx] += 1;
        }
    }
    let w = ensemble.weight();
    let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 * dr).collect();
    let mut profile = RadialProfile {
        dim,
        bin_edges,
        density: vec![0.0; bins],
        mass: 0.0,
        energy: 0.0,
        overflow_mass: w * overflow as f64,
    };
    for i in 0..bins {
        let shell = profile.shell_volume(i);
        let mass = w * counts[i] as f64;
        profile.density[i] = mass / shell;
        profile.mass += mass;
        let r = profile.midpoint(i);
        profile.energy += mass * r * r;
    }
    Ok(profile)
}

/// `L^p` norm of the binned radial density: `(sum_b density_b^p vol_b)^{1/p}`.
pub fn lp_norm_estimate(profile: &RadialProfile, p: f64) -> Result<f64> {
    if p <= 1.0 {
        return Err(Error::invalid("p", format!("{p} <= 1")));
    }
    let mut acc = 0.0;
    for i in 0..profile.bins() {
        acc += profile.density[i].powf(p) * profile.shell_volume(i);
    }
    Ok(acc.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_unit_particles() -> ParticleEnsemble {
        ParticleEnsemble::from_velocities(3, 0.5, vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn moment_examples() {
        let e = two_unit_particles();
        // |v| = 1 for both particles.
        assert_relative_eq!(moment(&e, 2.0).unwrap().value, 1.0, epsilon = 1e-15);
        // Order zero is the total mass, exactly.
        assert_eq!(moment(&e, 0.0).unwrap().value, e.mass());
        assert_eq!(moment(&e, 0.0).unwrap().std_error, 0.0);

        // Speeds {1, 2, 3, 4} at weight 1/4: second moment (1+4+9+16)/4.
        let speeds = ParticleEnsemble::from_velocities(
            3,
            0.25,
            vec![
                1.0, 0.0, 0.0, //
                0.0, 2.0, 0.0, //
                0.0, 0.0, 3.0, //
                4.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        assert_relative_eq!(moment(&speeds, 2.0).unwrap().value, 7.5, epsilon = 1e-12);
        assert!(moment(&speeds, 2.0).unwrap().std_error > 0.0);
    }

    #[test]
    fn moment_errors() {
        let empty = ParticleEnsemble::new(3, 1.0).unwrap();
        assert!(matches!(moment(&empty, 2.0), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn bulk_examples() {
        let single = ParticleEnsemble::from_velocities(3, 1.0, vec![0.0, 0.0, 0.0]).unwrap();
        let b = bulk_quantities(&single).unwrap();
        assert_eq!(b.n, 1.0);
        assert_eq!(b.u, vec![0.0, 0.0, 0.0]);
        assert_eq!(b.theta, 0.0);

        let e = two_unit_particles();
        let b = bulk_quantities(&e).unwrap();
        assert_relative_eq!(b.n, 1.0, epsilon = 1e-15);
        assert_relative_eq!(b.theta, 1.0 / 3.0, epsilon = 1e-15);

        // Translation: u shifts, theta unchanged.
        let mut shifted = e.clone();
        shifted.translate(&[0.5, -2.0, 1.0]);
        let bs = bulk_quantities(&shifted).unwrap();
        assert_relative_eq!(bs.u[0], b.u[0] + 0.5, epsilon = 1e-12);
        assert_relative_eq!(bs.u[1], b.u[1] - 2.0, epsilon = 1e-12);
        assert_relative_eq!(bs.theta, b.theta, epsilon = 1e-12);
    }

    #[test]
    fn histogram_conserves_mass() {
        let e = ParticleEnsemble::from_velocities(
            3,
            0.25,
            vec![
                0.1, 0.0, 0.0, //
                0.0, 0.9, 0.0, //
                0.0, 0.0, 2.5, // overflow for r_max = 2
                1.5, 0.0, 0.0,
            ],
        )
        .unwrap();
        let p = radial_histogram(&e, 8, 2.0).unwrap();
        let binned: f64 = (0..p.bins()).map(|i| p.bin_mass(i)).sum();
        assert_relative_eq!(binned + p.overflow_mass, e.mass(), epsilon = 1e-12);
        assert_relative_eq!(p.overflow_mass, 0.25, epsilon = 1e-15);
        // Bins with no particles stay empty: speeds are {0.1, 0.9, 1.5},
        // so [0.25, 0.5) is vacant.
        assert_eq!(p.density[1], 0.0);
    }

    #[test]
    fn histogram_rejects_bad_binning() {
        let e = two_unit_particles();
        assert!(radial_histogram(&e, 0, 2.0).is_err());
        assert!(radial_histogram(&e, 10, 0.0).is_err());
        assert!(radial_histogram(&e, 10, -1.0).is_err());
    }

    #[test]
    fn histogram_recovers_temperature() {
        // Maxwellian sample: theta recovered from the histogram's energy
        // metadata agrees with bulk_quantities within sampling error.
        let mut velocities = Vec::new();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut gauss = move || {
            // Box-Muller on a xorshift stream; test-only sampling.
            let mut next = |s: &mut u64| {
                *s ^= *s << 13;
                *s ^= *s >> 7;
                *s ^= *s << 17;
                (*s >> 11) as f64 / (1u64 << 53) as f64
            };
            let u1: f64 = next(&mut state).max(1e-16);
            let u2: f64 = next(&mut state);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let n = 40_000;
        let theta: f64 = 0.7;
        for _ in 0..n * 3 {
            velocities.push(theta.sqrt() * gauss());
        }
        let e = ParticleEnsemble::from_velocities(3, 1.0 / n as f64, velocities).unwrap();
        let bulk = bulk_quantities(&e).unwrap();
        let p = radial_histogram(&e, 60, 6.0).unwrap();
        let theta_hist = p.energy / (3.0 * p.mass);
        let se = bulk.theta * (2.0 / (3.0 * n as f64)).sqrt();
        assert!(
            (theta_hist - bulk.theta).abs() < 3.0 * se + 0.002,
            "{theta_hist} vs {}",
            bulk.theta
        );
    }

    #[test]
    fn histogram_point_mass_on_shell() {
        // All particles at radius r0: all mass lands in the bin containing r0.
        let mut e = ParticleEnsemble::new(3, 0.125).unwrap();
        let r0 = 1.3;
        for k in 0..8 {
            let phi = k as f64 * std::f64::consts::PI / 4.0;
            e.push(&[r0 * phi.cos(), r0 * phi.sin(), 0.0]);
        }
        let p = radial_histogram(&e, 10, 2.0).unwrap();
        let idx = (r0 / 0.2) as usize;
        assert_relative_eq!(p.bin_mass(idx), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lp_examples() {
        // Single bin of density c over volume V -> c * V^{1/p}.
        let profile = RadialProfile {
            dim: 3,
            bin_edges: vec![0.0, 1.0],
            density: vec![2.0],
            mass: 0.0,
            energy: 0.0,
            overflow_mass: 0.0,
        };
        let v = ball_volume(3);
        assert_relative_eq!(lp_norm_estimate(&profile, 2.0).unwrap(), 2.0 * v.sqrt(), epsilon = 1e-12);

        // p -> 1 approaches the mass.
        let mass: f64 = profile.density[0] * v;
        assert_relative_eq!(lp_norm_estimate(&profile, 1.0 + 1e-9).unwrap(), mass, epsilon = 1e-6);

        assert!(lp_norm_estimate(&profile, 1.0).is_err());
    }

    #[test]
    fn lp_two_bin_example() {
        // Densities {2, 1} over unit volumes: ||.||_2 = sqrt(5). Edges chosen
        // so both shells have unit volume in d = 3.
        let c = ball_volume(3);
        let r1 = (1.0 / c).powf(1.0 / 3.0);
        let r2 = (2.0 / c).powf(1.0 / 3.0);
        let profile = RadialProfile {
            dim: 3,
            bin_edges: vec![0.0, r1, r2],
            density: vec![2.0, 1.0],
            mass: 0.0,
            energy: 0.0,
            overflow_mass: 0.0,
        };
        assert_relative_eq!(lp_norm_estimate(&profile, 2.0).unwrap(), 5.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn lp_monotone_under_density_increase() {
        let c = ball_volume(3);
        let r1 = (1.0 / c).powf(1.0 / 3.0);
        let r2 = (2.0 / c).powf(1.0 / 3.0);
        let mut profile = RadialProfile {
            dim: 3,
            bin_edges: vec![0.0, r1, r2],
            density: vec![2.0, 1.0],
            mass: 0.0,
            energy: 0.0,
            overflow_mass: 0.0,
        };
        let before = lp_norm_estimate(&profile, 1.7).unwrap();
        profile.density[1] += 0.5;
        assert!(lp_norm_estimate(&profile, 1.7).unwrap() > before);
    }
}
