//! Run configuration: JSON file merged with command-line overrides
//! (flags win), validated with field-specific messages.

use anyhow::{bail, Context};
use ballann_core::dsmc::InitialSampler;
use ballann_core::{AngularLaw, ModelParams};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Constants,
    Simulate,
    Profile,
    Verify,
    MaxwellOracle,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Constants => "constants",
            Mode::Simulate => "simulate",
            Mode::Profile => "profile",
            Mode::Verify => "verify",
            Mode::MaxwellOracle => "maxwell-oracle",
        };
        f.write_str(s)
    }
}

/// Stationarity and windowing settings for profile runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSettings {
    pub bins: usize,
    pub r_max: f64,
    /// Window length in mean free times.
    pub window_mft: f64,
    /// Weighted-L1 stationarity tolerance between successive windows.
    pub tol: f64,
    /// Consecutive below-tolerance windows required.
    pub consecutive: usize,
    pub max_windows: usize,
    /// Keep accumulating windows at least this far for verification
    /// checkpoints, even once stationary.
    pub min_windows: usize,
}

impl Default for WindowSettings {
    fn default() -> Self {
        WindowSettings {
            bins: 32,
            r_max: 4.0,
            window_mft: 16.0,
            tol: 0.02,
            consecutive: 5,
            max_windows: 60,
            min_windows: 16,
        }
    }
}

/// Settings for the `verify` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    /// Lebesgue exponent of the pairing check.
    pub p: f64,
    /// Minimum checkpoint spacing, in mean free times, for the finite
    /// differences of the moment inequality.
    pub spacing_mft: f64,
    /// Probes for the isotropic-kernel check.
    pub probes: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            p: 2.0,
            spacing_mft: 5.0,
            probes: 100,
        }
    }
}

/// Settings for the equivalence part of `maxwell-oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivalenceConfig {
    pub enabled: bool,
    /// Annihilation probability of the paired-run check.
    pub alpha: f64,
    /// Physical horizon in `mu n0 t` units.
    pub mu_n0_t: f64,
    pub null_runs: usize,
    pub bins: usize,
    pub r_max: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig {
            enabled: true,
            alpha: 0.2,
            mu_n0_t: 2.0,
            null_runs: 4,
            bins: 40,
            r_max: 6.0,
        }
    }
}

/// Full run configuration. Every field has a default except `mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub trunc_n: Option<u32>,
    #[serde(default = "default_angular")]
    pub angular: AngularLaw,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// Initial number density (physical runs).
    #[serde(default = "default_n0")]
    pub n0: f64,
    /// Physical horizon for `simulate`, in `mu n0 t` units when `gamma = 0`
    /// and `mu_time_units` is set, otherwise plain time.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default)]
    pub sampler: Option<InitialSampler>,
    #[serde(default)]
    pub moment_orders: Option<Vec<f64>>,
    #[serde(default = "default_pair_budget")]
    pub pair_budget: usize,
    #[serde(default)]
    pub windows: WindowSettings,
    #[serde(default)]
    pub verify: VerifySettings,
    #[serde(default)]
    pub equivalence: EquivalenceConfig,
    /// Replicas averaged by the Maxwell oracle.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Oracle horizon in `mu n0 t` units.
    #[serde(default = "default_mu_n0_t")]
    pub mu_n0_t: f64,
    /// Clone-jitter standard deviation for resampling (biasing knob, keep
    /// unset for verification runs).
    #[serde(default)]
    pub jitter: Option<f64>,
    /// Compute weak-form residual diagnostics during profile runs.
    #[serde(default = "default_true")]
    pub residuals: bool,
    /// Per-step candidate probability per particle. The first-order splitting
    /// bias of the pair-selection scheme scales with this; unset, it is 0.1
    /// except for `maxwell-oracle`, which uses 0.01 to keep the bias below
    /// the exact law's tolerance.
    #[serde(default)]
    pub candidate_fraction: Option<f64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Input directory (verify mode).
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

fn default_dim() -> usize {
    3
}
fn default_gamma() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.1
}
fn default_angular() -> AngularLaw {
    AngularLaw::Constant
}
fn default_seed() -> u64 {
    42
}
fn default_n_particles() -> usize {
    100_000
}
fn default_n0() -> f64 {
    1.0
}
fn default_t_end() -> f64 {
    1.0
}
fn default_checkpoints() -> usize {
    10
}
fn default_pair_budget() -> usize {
    1_000_000
}
fn default_replicas() -> usize {
    8
}
fn default_mu_n0_t() -> f64 {
    3.0
}
fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_threads() -> usize {
    1
}

/// Command-line flag overrides; unset flags leave file values untouched.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Run mode (required here or in the config file).
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (1 = fully sequential reference mode).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Force the deterministic single-threaded reference path.
    #[arg(long)]
    pub deterministic: bool,
    /// Dimension d >= 2.
    #[arg(long)]
    pub d: Option<usize>,
    /// Kernel exponent gamma in [0, 1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Annihilation probability alpha in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Particle count (or resampling target for profile runs).
    #[arg(long)]
    pub n_particles: Option<usize>,
    /// Physical horizon.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Input directory for verify mode.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Parse the configuration from an optional JSON file plus overrides.
pub fn parse_config(file: Option<&Path>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .with_context(|| format!("config file {} is not valid JSON", path.display()))?
        }
        None => serde_json::json!({}),
    };
    let obj = value
        .as_object_mut()
        .context("config root must be a JSON object")?;
    if let Some(mode) = overrides.mode {
        obj.insert("mode".into(), serde_json::to_value(mode)?);
    }
    if !obj.contains_key("mode") {
        bail!("missing required field `mode` (config file or --mode)");
    }
    let mut cfg: RunConfig = serde_json::from_value(value).context("invalid config")?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(threads) = overrides.threads {
        cfg.threads = threads;
    }
    if overrides.deterministic {
        cfg.deterministic = true;
    }
    if let Some(d) = overrides.d {
        cfg.d = d;
    }
    if let Some(gamma) = overrides.gamma {
        cfg.gamma = gamma;
    }
    if let Some(alpha) = overrides.alpha {
        cfg.alpha = alpha;
    }
    if let Some(n) = overrides.n_particles {
        cfg.n_particles = n;
    }
    if let Some(t) = overrides.t_end {
        cfg.t_end = t;
    }
    if let Some(input) = &overrides.input {
        cfg.input = Some(input.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Collision model induced by the configuration.
    pub fn params(&self) -> anyhow::Result<ModelParams> {
        let p = ModelParams {
            dim: self.d,
            gamma: self.gamma,
            alpha: self.alpha,
            angular: self.angular.clone(),
            trunc_n: self.trunc_n,
        };
        p.validate()?;
        Ok(p)
    }

    /// Effective per-step candidate probability for a mode whose default is
    /// `mode_default`.
    pub fn candidate_fraction_for(&self, mode_default: f64) -> f64 {
        self.candidate_fraction.unwrap_or(mode_default)
    }

    /// Initial sampler, defaulting to an isotropic shell at the normalized
    /// energy for profile runs and a unit Maxwellian otherwise.
    pub fn sampler_or_default(&self) -> InitialSampler {
        match (&self.sampler, self.mode) {
            (Some(s), _) => s.clone(),
            (None, Mode::Profile) => InitialSampler::Shell {
                radius: (self.d as f64 / 2.0).sqrt(),
            },
            _ => InitialSampler::Maxwellian { theta: 1.0, u: None },
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.params()?;
        if matches!(self.mode, Mode::Simulate | Mode::Profile | Mode::MaxwellOracle) && self.n_particles < 2 {
            bail!("invalid parameter `n_particles`: {} < 2", self.n_particles);
        }
        if !(self.n0 > 0.0) {
            bail!("invalid parameter `n0`: {} must be positive", self.n0);
        }
        if !(self.t_end > 0.0) {
            bail!("invalid parameter `t_end`: {} must be positive", self.t_end);
        }
        if self.checkpoints == 0 {
            bail!("invalid parameter `checkpoints`: must be >= 1");
        }
        if self.pair_budget == 0 {
            bail!("invalid parameter `pair_budget`: must be >= 1");
        }
        if !(self.windows.tol > 0.0) {
            bail!("invalid parameter `windows.tol`: {} must be positive", self.windows.tol);
        }
        if !(self.windows.r_max > 0.0) || self.windows.bins == 0 {
            bail!("invalid parameter `windows`: need bins >= 1 and r_max > 0");
        }
        if self.windows.consecutive == 0 || self.windows.max_windows == 0 {
            bail!("invalid parameter `windows`: consecutive and max_windows must be >= 1");
        }
        if !(self.verify.p > 1.0) {
            bail!("invalid parameter `verify.p`: {} must exceed 1", self.verify.p);
        }
        if self.replicas == 0 {
            bail!("invalid parameter `replicas`: must be >= 1");
        }
        if !(self.mu_n0_t > 0.0) {
            bail!("invalid parameter `mu_n0_t`: {} must be positive", self.mu_n0_t);
        }
        if self.threads == 0 {
            bail!("invalid parameter `threads`: must be >= 1");
        }
        if let Some(f) = self.candidate_fraction {
            if !(f > 0.0 && f <= 0.5) {
                bail!("invalid parameter `candidate_fraction`: {f} not in (0, 0.5]");
            }
        }
        if let Some(s) = &self.sampler {
            s.validate(self.d)?;
        }
        if self.mode == Mode::Verify && self.input.is_none() {
            bail!("verify mode requires `input` (directory of a profile run)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("ballann-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("cfg-{}.json", rand_suffix()));
        std::fs::write(&path, content).unwrap();
        path
    }

    fn rand_suffix() -> u128 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let path = write_tmp(r#"{"mode": "constants", "gamma": 1.0, "d": 3}"#);
        let cfg = parse_config(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.mode, Mode::Constants);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.alpha, 0.1);
        assert!(cfg.deterministic);
    }

    #[test]
    fn out_of_range_alpha_is_named() {
        let path = write_tmp(r#"{"mode": "constants", "alpha": 1.5}"#);
        let err = parse_config(Some(&path), &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("alpha"), "{err:#}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let path = write_tmp(r#"{"mode": "constants", "gamm": 1.0}"#);
        let err = parse_config(Some(&path), &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("unknown field"), "{err:#}");
    }

    #[test]
    fn flags_override_file_values() {
        let path = write_tmp(r#"{"mode": "constants", "seed": 7, "alpha": 0.2}"#);
        let overrides = Overrides {
            seed: Some(99),
            alpha: Some(0.05),
            ..Default::default()
        };
        let cfg = parse_config(Some(&path), &overrides).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.alpha, 0.05);
    }

    #[test]
    fn mode_required() {
        let path = write_tmp(r#"{"gamma": 1.0}"#);
        assert!(parse_config(Some(&path), &Overrides::default()).is_err());
        let cfg = parse_config(
            Some(&path),
            &Overrides {
                mode: Some(Mode::Constants),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Constants);
    }

    #[test]
    fn config_round_trips_through_json() {
        let path = write_tmp(r#"{"mode": "profile", "n_particles": 5000, "windows": {"tol": 0.05}}"#);
        let cfg = parse_config(Some(&path), &Overrides::default()).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
