//! Particle-based solver for the spatially homogeneous Boltzmann equation with
//! probabilistic ballistic annihilation.
//!
//! Colliding pairs vanish with probability `alpha` or scatter elastically with
//! probability `1 - alpha`, under a hard-potential kernel `|v - v*|^gamma` with
//! an isotropic angular law. The crate provides:
//!
//! * [`dsmc`] — stochastic particle simulation of the physical decay dynamics,
//! * [`selfsim`] — the rescaled (unit mass, energy `d/2`) frame and the driver
//!   that relaxes it to the self-similar velocity profile,
//! * [`constants`] — spectral constants and admissibility thresholds of the
//!   annihilation model, evaluated by angular quadrature,
//! * [`analysis`] — numerical verification of moment inequalities, kernel
//!   lower bounds, L^p pairing and the weak-form residual,
//! * [`maxwell`] — closed-form laws for Maxwellian molecules (`gamma = 0`),
//!   used as the exact oracle that calibrates the collision engine.

pub mod analysis;
pub mod collision;
pub mod constants;
pub mod dsmc;
pub mod ensemble;
pub mod error;
pub mod maxwell;
pub mod quadrature;
pub mod seed;
pub mod selfsim;
pub mod stats;
pub mod vecmath;

pub use ensemble::{AngularLaw, ModelParams, ParticleEnsemble};
pub use error::{Error, Result};
pub use stats::{Measured, MomentRecord, RadialProfile, ScalingState};
