//! Collision model parameters and the weighted particle ensemble that carries
//! a velocity distribution.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Angular part `b(cos theta)` of the collision kernel.
///
/// The constant law is normalized so that `||b||_1 = 1`, i.e.
/// `b = 1/|S^{d-1}|`. A tabulated law is given as `(cos theta, value)` knots
/// on `[-1, 1]` and interpolated linearly; it must also integrate to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AngularLaw {
    Constant,
    Tabulated { knots: Vec<(f64, f64)> },
}

impl AngularLaw {
    pub fn is_constant(&self) -> bool {
        matches!(self, AngularLaw::Constant)
    }

    /// Evaluate the tabulated density at `t = cos theta`; only meaningful for
    /// `Tabulated`.
    pub(crate) fn tabulated_value(&self, t: f64) -> f64 {
        match self {
            AngularLaw::Constant => unreachable!("constant law has no table"),
            AngularLaw::Tabulated { knots } => {
                if knots.is_empty() {
                    return 0.0;
                }
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                for w in knots.windows(2) {
                    let (t0, b0) = w[0];
                    let (t1, b1) = w[1];
                    if t <= t1 {
                        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                        return b0 + s * (b1 - b0);
                    }
                }
                knots.last().unwrap().1
            }
        }
    }
}

/// Parameters of the annihilation collision model: dimension `d >= 2`, kernel
/// exponent `gamma in [0, 1]` (`1` = hard spheres, `0` = Maxwellian
/// molecules), annihilation probability `alpha in [0, 1]`, angular law, and an
/// optional kernel truncation index `n` (rate capped at `n^gamma`, scattering
/// angles restricted to `|cos theta| <= 1 - 1/n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default = "default_angular")]
    pub angular: AngularLaw,
    #[serde(default)]
    pub trunc_n: Option<u32>,
}

fn default_angular() -> AngularLaw {
    AngularLaw::Constant
}

impl ModelParams {
    pub fn new(dim: usize, gamma: f64, alpha: f64) -> Result<Self> {
        let p = ModelParams {
            dim,
            gamma,
            alpha,
            angular: AngularLaw::Constant,
            trunc_n: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_trunc(mut self, n: u32) -> Result<Self> {
        self.trunc_n = Some(n);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("d", format!("{} < 2", self.dim)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma", format!("{} not in [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", format!("{} not in [0, 1]", self.alpha)));
        }
        if let Some(n) = self.trunc_n {
            if n < 1 {
                return Err(Error::invalid("trunc_n", "truncation index must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Weighted velocity samples representing the one-particle distribution.
///
/// All particles share one statistical weight, so the represented density has
/// mass `weight * count`. Annihilation removes particles; resampling restores
/// the count while preserving the mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    weight: f64,
    velocities: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, weight: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("dim", format!("{dim} < 2")));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::invalid("weight", format!("{weight} must be positive and finite")));
        }
        Ok(ParticleEnsemble {
            dim,
            weight,
            velocities: Vec::new(),
        })
    }

    pub fn from_velocities(dim: usize, weight: f64, velocities: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(dim, weight)?;
        if velocities.len() % dim != 0 {
            return Err(Error::invalid(
                "velocities",
                format!("flat length {} not divisible by dim {dim}", velocities.len()),
            ));
        }
        e.velocities = velocities;
        Ok(e)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.velocities.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    #[inline]
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Total represented mass `weight * count`.
    #[inline]
    pub fn mass(&self) -> f64 {
        self.weight * self.count() as f64
    }

    /// Total kinetic energy `weight * sum |v_i|^2`.
    pub fn energy(&self) -> f64 {
        self.weight * self.velocities.chunks_exact(self.dim).map(crate::vecmath::norm_sq).sum::<f64>()
    }

    #[inline]
    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn velocity_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.velocities.chunks_exact(self.dim)
    }

    pub fn push(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim);
        self.velocities.extend_from_slice(v);
    }

    /// Remove particle `i` by swapping in the last particle.
    pub fn swap_remove(&mut self, i: usize) {
        let n = self.count();
        debug_assert!(i < n);
        let last = n - 1;
        if i != last {
            let (head, tail) = self.velocities.split_at_mut(last * self.dim);
            head[i * self.dim..(i + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.velocities.truncate(last * self.dim);
    }

    /// Set the per-particle weight, e.g. after resampling.
    pub fn set_weight(&mut self, weight: f64) {
        debug_assert!(weight > 0.0);
        self.weight = weight;
    }

    /// Multiply every velocity by `c`.
    pub fn scale_velocities(&mut self, c: f64) {
        for v in &mut self.velocities {
            *v *= c;
        }
    }

    /// Add `shift` to every velocity.
    pub fn translate(&mut self, shift: &[f64]) {
        debug_assert_eq!(shift.len(), self.dim);
        for chunk in self.velocities.chunks_exact_mut(self.dim) {
            for (x, s) in chunk.iter_mut().zip(shift) {
                *x += s;
            }
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(3, 1.0, 0.1).is_ok());
        assert!(ModelParams::new(1, 1.0, 0.1).is_err());
        assert!(ModelParams::new(3, 1.5, 0.1).is_err());
        assert!(ModelParams::new(3, 1.0, -0.1).is_err());
        assert!(ModelParams::new(3, 1.0, 1.5).is_err());
        assert!(ModelParams::new(3, 1.0, 0.1).unwrap().with_trunc(2).is_ok());
    }

    #[test]
    fn ensemble_bookkeeping() {
        let mut e = ParticleEnsemble::from_velocities(3, 0.5, vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.count(), 2);
        assert_eq!(e.mass(), 1.0);
        assert_eq!(e.energy(), 1.0);
        e.push(&[0.0, 2.0, 0.0]);
        assert_eq!(e.count(), 3);
        e.swap_remove(0);
        assert_eq!(e.count(), 2);
        assert_eq!(e.velocity(0), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn tabulated_interpolation() {
        let law = AngularLaw::Tabulated {
            knots: vec![(-1.0, 0.0), (1.0, 1.0)],
        };
        assert_eq!(law.tabulated_value(0.0), 0.5);
        assert_eq!(law.tabulated_value(-2.0), 0.0);
        assert_eq!(law.tabulated_value(2.0), 1.0);
    }
}
