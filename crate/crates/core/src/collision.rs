//! Binary collision kinematics, kernel rates and angular sampling.

use crate::ensemble::{AngularLaw, ModelParams};
use crate::error::{Error, Result};
use crate::vecmath;
use rand::Rng;
use rand_distr::StandardNormal;

/// Outcome of resolving one accepted collision.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionOutcome {
    pub v_prime: Vec<f64>,
    pub v_star_prime: Vec<f64>,
    pub annihilated: bool,
}

/// Post-collision velocities
/// `v' = (v + v*)/2 + |v - v*|/2 sigma`, `v*' = (v + v*)/2 - |v - v*|/2 sigma`.
///
/// `sigma` must be a unit vector (within 1e-12). Momentum and energy are
/// conserved by construction.
pub fn post_collision(v: &[f64], v_star: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let norm = vecmath::norm(sigma);
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnitDirection { norm });
    }
    let dim = v.len();
    let mut v_prime = vec![0.0; dim];
    let mut v_star_prime = vec![0.0; dim];
    post_collision_into(v, v_star, sigma, &mut v_prime, &mut v_star_prime);
    Ok((v_prime, v_star_prime))
}

/// Allocation-free kernel of [`post_collision`]; callers are responsible for
/// passing a unit `sigma`.
#[inline]
pub fn post_collision_into(v: &[f64], v_star: &[f64], sigma: &[f64], out: &mut [f64], out_star: &mut [f64]) {
    let half_rel = 0.5 * vecmath::dist(v, v_star);
    for i in 0..v.len() {
        let center = 0.5 * (v[i] + v_star[i]);
        let kick = half_rel * sigma[i];
        out[i] = center + kick;
        out_star[i] = center - kick;
    }
}

/// Kernel rate `Phi(|v - v*|) = |v - v*|^gamma`, capped at `n^gamma` when the
/// truncation index is set. `gamma = 0` always returns 1.
pub fn relative_rate(v: &[f64], v_star: &[f64], params: &ModelParams) -> f64 {
    if params.gamma == 0.0 {
        return 1.0;
    }
    let mut r = vecmath::dist(v, v_star);
    if let Some(n) = params.trunc_n {
        r = r.min(n as f64);
    }
    r.powf(params.gamma)
}

/// Fill `out` with a uniform unit vector (normalized independent Gaussians).
pub(crate) fn sample_unit_vector<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut norm_sq = 0.0;
        for x in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x = g;
            norm_sq += g * g;
        }
        if norm_sq > 1e-300 {
            let inv = norm_sq.sqrt().recip();
            for x in out.iter_mut() {
                *x *= inv;
            }
            return;
        }
    }
}

/// Draw a scattering direction for the angular law of `params`.
///
/// With the constant law the direction is uniform on `S^{d-1}`. When the
/// truncation index `n` is set and a reference direction is supplied,
/// directions with `|sigma . u_hat| > 1 - 1/n` are rejected; a (near-)zero
/// reference is then an error.
pub fn sample_direction<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    reference: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if !matches!(params.angular, AngularLaw::Constant) {
        return Err(Error::invalid(
            "angular",
            "sampling implemented for the constant angular law only",
        ));
    }
    let mut sigma = vec![0.0; params.dim];
    match (params.trunc_n, reference) {
        (Some(n), Some(u)) => {
            let u_norm = vecmath::norm(u);
            if u_norm < 1e-300 {
                return Err(Error::DegenerateDirection);
            }
            let cutoff = 1.0 - 1.0 / n as f64;
            loop {
                sample_unit_vector(rng, &mut sigma);
                let cos_theta = vecmath::dot(&sigma, u) / u_norm;
                if cos_theta.abs() <= cutoff {
                    return Ok(sigma);
                }
            }
        }
        _ => {
            sample_unit_vector(rng, &mut sigma);
            Ok(sigma)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn post_collision_examples() {
        // Identical velocities: collision leaves them unchanged for any sigma.
        let v = [1.0, 2.0, -0.5];
        let (a, b) = post_collision(&v, &v, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a, v.to_vec());
        assert_eq!(b, v.to_vec());

        // sigma along the relative velocity reproduces the incoming pair.
        let v = [1.0, 0.0, 0.0];
        let w = [-1.0, 0.0, 0.0];
        let (a, b) = post_collision(&v, &w, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, v.to_vec());
        assert_eq!(b, w.to_vec());

        // Head-on pair deflected sideways.
        let (a, b) = post_collision(&v, &w, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a, vec![0.0, 1.0, 0.0]);
        assert_eq!(b, vec![0.0, -1.0, 0.0]);
    }

    #[test]
    fn post_collision_rejects_non_unit_sigma() {
        let v = [1.0, 0.0, 0.0];
        assert!(matches!(
            post_collision(&v, &v, &[0.5, 0.0, 0.0]),
            Err(Error::NonUnitDirection { .. })
        ));
    }

    #[test]
    fn conservation_over_random_collisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sigma = vec![0.0; 3];
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            sample_unit_vector(&mut rng, &mut sigma);
            let (a, b) = post_collision(&v, &w, &sigma).unwrap();
            let scale = vecmath::norm_sq(&v) + vecmath::norm_sq(&w);
            for i in 0..3 {
                assert!((a[i] + b[i] - v[i] - w[i]).abs() <= 1e-12 * (1.0 + scale));
            }
            let e = vecmath::norm_sq(&a) + vecmath::norm_sq(&b);
            assert!((e - scale).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn rates() {
        let p = ModelParams::new(3, 1.0, 0.1).unwrap();
        let v = [3.0, 0.0, 0.0];
        let w = [0.0, 4.0, 0.0];
        assert_relative_eq!(relative_rate(&v, &w, &p), 5.0, epsilon = 1e-12);
        // Symmetry.
        assert_eq!(relative_rate(&v, &w, &p), relative_rate(&w, &v, &p));

        let maxwell = ModelParams::new(3, 0.0, 0.1).unwrap();
        assert_eq!(relative_rate(&v, &w, &maxwell), 1.0);
        assert_eq!(relative_rate(&v, &v, &maxwell), 1.0);

        let truncated = ModelParams::new(3, 1.0, 0.1).unwrap().with_trunc(2).unwrap();
        assert_relative_eq!(relative_rate(&v, &w, &truncated), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn directions_are_unit_and_centered() {
        let p = ModelParams::new(3, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = 200_000;
        let mut mean = [0.0; 3];
        for _ in 0..samples {
            let s = sample_direction(&mut rng, &p, None).unwrap();
            assert!((vecmath::norm(&s) - 1.0).abs() < 1e-12);
            for i in 0..3 {
                mean[i] += s[i];
            }
        }
        let tol = 4.0 / (samples as f64).sqrt();
        for m in mean {
            assert!((m / samples as f64).abs() < tol);
        }
    }

    #[test]
    fn truncated_sampling_rejects_polar_caps() {
        // d = 3, n = 2: cos(theta) is uniform, so |cos| > 1/2 has measure 1/2.
        let p = ModelParams::new(3, 1.0, 0.0).unwrap().with_trunc(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = [0.0, 0.0, 1.0];
        let samples = 100_000;
        for _ in 0..samples {
            let s = sample_direction(&mut rng, &p, Some(&u)).unwrap();
            assert!(s[2].abs() <= 0.5 + 1e-12);
        }
        // Empirical acceptance of the untruncated sampler against the cutoff.
        let mut accepted = 0u32;
        for _ in 0..samples {
            let s = sample_direction(&mut rng, &p, None).unwrap();
            if s[2].abs() <= 0.5 {
                accepted += 1;
            }
        }
        let frac = f64::from(accepted) / samples as f64;
        assert!((frac - 0.5).abs() < 4.0 * 0.5 / (samples as f64).sqrt());
    }

    #[test]
    fn truncated_sampling_degenerate_reference() {
        let p = ModelParams::new(3, 1.0, 0.0).unwrap().with_trunc(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        assert!(matches!(
            sample_direction(&mut rng, &p, Some(&[0.0, 0.0, 0.0])),
            Err(Error::DegenerateDirection)
        ));
    }
}
