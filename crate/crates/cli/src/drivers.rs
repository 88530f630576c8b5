//! Mode drivers: wire the library to files on disk.

use crate::config::{Mode, RunConfig};
use crate::output::{read_jsonl, write_json, write_jsonl, CsvTable, Manifest};
use anyhow::{bail, Context};
use ballann_core::analysis::{self, InequalityReport};
use ballann_core::constants;
use ballann_core::dsmc::{self, PhysicalRunConfig};
use ballann_core::maxwell::{self, EquivalenceSettings};
use ballann_core::seed::stream_rng;
use ballann_core::selfsim::{self, ProfileConfig};
use ballann_core::stats::{Measured, MomentRecord, RadialProfile};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use std::time::Instant;

/// Distinct process exit codes for machine consumption.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_EXTINCT: i32 = 4;
pub const EXIT_NON_CONVERGED: i32 = 5;

/// Error carrying a dedicated exit code.
#[derive(Debug)]
pub struct DriverFailure {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for DriverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (exit code {})", self.message, self.code)
    }
}

impl std::error::Error for DriverFailure {}

fn fail(code: i32, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(DriverFailure {
        code,
        message: message.into(),
    })
}

/// Per-window diagnostics emitted by profile runs (one JSONL record each).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub record: MomentRecord,
    /// Weighted-L1 distance to the previous window (absent for the first).
    pub distance: Option<f64>,
    /// Weak-form residual of this window, when computed.
    pub residual: Option<Measured>,
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let started = Instant::now();
    let result = match cfg.mode {
        Mode::Constants => run_constants(cfg),
        Mode::Simulate => run_simulate(cfg),
        Mode::Profile => run_profile(cfg),
        Mode::Verify => run_verify(cfg),
        Mode::MaxwellOracle => run_maxwell_oracle(cfg),
    }?;
    let manifest = Manifest::new(cfg.clone(), result, started.elapsed().as_secs_f64());
    write_json(&cfg.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn run_constants(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let params = cfg.params()?;
    let report = constants::threshold_report(&params)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    println!(
        "constants: alpha0 = {:.9}, alpha_star = {:.9}, alpha_underbar = {:.9}, p_star = {}",
        report.alpha0,
        report.alpha_star,
        report.alpha_underbar,
        report
            .p_star
            .map_or("unbounded".to_string(), |p| format!("{p:.9}")),
    );
    Ok(json!({ "alpha_underbar": report.alpha_underbar }))
}

fn run_simulate(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let params = cfg.params()?;
    let orders = cfg
        .moment_orders
        .clone()
        .unwrap_or_else(|| selfsim::default_profile_orders(&params));
    let run_cfg = PhysicalRunConfig {
        n_particles: cfg.n_particles,
        n0: cfg.n0,
        t_end: cfg.t_end,
        checkpoints: cfg.checkpoints,
        sampler: cfg.sampler_or_default(),
        moment_orders: orders.clone(),
        candidate_fraction: cfg.candidate_fraction_for(0.1),
        pair_budget: cfg.pair_budget,
    };
    let mut rng = stream_rng(cfg.seed, 0);
    let traj = dsmc::run_physical(&run_cfg, &params, &mut rng)?;
    write_trajectory_csv(&cfg.out.join("trajectory.csv"), &traj, &orders, cfg.d)?;
    println!(
        "simulate: {} checkpoints to t = {}, extinct = {}",
        traj.times.len(),
        traj.times.last().copied().unwrap_or(0.0),
        traj.extinct
    );
    if traj.extinct {
        return Err(fail(EXIT_EXTINCT, "ensemble went extinct before t_end"));
    }
    Ok(json!({ "checkpoints": traj.times.len(), "extinct": traj.extinct }))
}

fn write_trajectory_csv(
    path: &Path,
    traj: &dsmc::Trajectory,
    orders: &[f64],
    dim: usize,
) -> anyhow::Result<()> {
    let mut header: Vec<String> = vec!["t".into(), "n".into(), "energy".into()];
    for c in 0..dim {
        header.push(format!("u_{c}"));
    }
    header.push("theta".into());
    for k in orders {
        header.push(format!("M_{k}"));
        header.push(format!("M_{k}_se"));
    }
    header.extend(
        [
            "a_psi",
            "a_psi_se",
            "b_psi",
            "b_psi_se",
            "big_a_psi",
            "big_b_psi",
            "attempted_pairs",
            "accepted_collisions",
            "annihilations",
        ]
        .map(String::from),
    );
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(&header_refs);
    for i in 0..traj.times.len() {
        let b = &traj.bulk[i];
        let r = &traj.records[i];
        let ev = &traj.events[i];
        let mut row = vec![traj.times[i], b.n, b.energy];
        row.extend_from_slice(&b.u);
        row.push(b.theta);
        for &k in orders {
            let m = r.moment(k)?;
            row.push(m.value);
            row.push(m.std_error);
        }
        row.extend_from_slice(&[
            r.a_psi.value,
            r.a_psi.std_error,
            r.b_psi.value,
            r.b_psi.std_error,
            r.big_a_psi,
            r.big_b_psi,
            ev.attempted_pairs as f64,
            ev.accepted_collisions as f64,
            ev.annihilations as f64,
        ]);
        table.row(&row);
    }
    table.write(path)
}

fn run_profile(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let params = cfg.params()?;
    let mut pc = ProfileConfig::for_params(&params);
    pc.n_target = cfg.n_particles;
    pc.sampler = cfg.sampler_or_default();
    pc.bins = cfg.windows.bins;
    pc.r_max = cfg.windows.r_max;
    pc.window_mft = cfg.windows.window_mft;
    pc.tol = cfg.windows.tol;
    pc.consecutive = cfg.windows.consecutive;
    pc.max_windows = cfg.windows.max_windows;
    pc.min_windows = cfg.windows.min_windows;
    if let Some(orders) = &cfg.moment_orders {
        pc.moment_orders = orders.clone();
    }
    pc.pair_budget = cfg.pair_budget;
    pc.jitter = cfg.jitter;
    pc.compute_residuals = cfg.residuals;
    pc.candidate_fraction = cfg.candidate_fraction_for(0.1);

    let mut rng = stream_rng(cfg.seed, 0);
    let run = selfsim::find_profile(&pc, &params, &mut rng)?;
    if let Some(w) = &run.warning {
        eprintln!("warning: {w}");
    }
    write_profile_outputs(&cfg.out, &run)?;
    println!(
        "profile: {} windows, stationary = {}, final mass = {:.6}, final energy = {:.6}",
        run.window_profiles.len(),
        run.stationary,
        run.final_profile.mass,
        run.final_profile.energy
    );
    if run.extinct {
        return Err(fail(EXIT_EXTINCT, "ensemble went extinct mid-run"));
    }
    if !run.stationary {
        return Err(fail(
            EXIT_NON_CONVERGED,
            format!(
                "stationarity not reached within {} windows (last distance {:?})",
                pc.max_windows,
                run.distances.last()
            ),
        ));
    }
    Ok(json!({
        "stationary": run.stationary,
        "windows": run.window_profiles.len(),
        "final_mass": run.final_profile.mass,
        "final_energy": run.final_profile.energy,
        "max_isotropy_sigma": run.isotropy.max_sigma,
        "warning": run.warning,
    }))
}

fn write_profile_outputs(out: &Path, run: &selfsim::ProfileRun) -> anyhow::Result<()> {
    let mut table = CsvTable::new(&["bin_lo", "bin_hi", "density", "se"]);
    for i in 0..run.final_profile.bins() {
        table.row(&[
            run.final_profile.bin_edges[i],
            run.final_profile.bin_edges[i + 1],
            run.final_profile.density[i],
            run.final_profile_se[i],
        ]);
    }
    table.write(&out.join("profile.csv"))?;
    write_jsonl(&out.join("windows.jsonl"), &run.window_profiles)?;

    let mut diags = Vec::with_capacity(run.diagnostics.len());
    for (i, record) in run.diagnostics.iter().enumerate() {
        diags.push(WindowDiagnostics {
            record: record.clone(),
            distance: if i >= 1 { run.distances.get(i - 1).copied() } else { None },
            residual: run.residuals.get(i).copied(),
        });
    }
    write_jsonl(&out.join("diagnostics.jsonl"), &diags)?;
    write_json(&out.join("isotropy.json"), &run.isotropy)?;
    Ok(())
}

/// Summary of one verification check.
#[derive(Debug, Serialize)]
struct CheckSummary {
    name: String,
    pass: bool,
}

fn run_verify(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let input = cfg.input.as_ref().expect("validated");
    let manifest: Manifest = {
        let text = std::fs::read_to_string(input.join("manifest.json"))
            .with_context(|| format!("reading {}/manifest.json", input.display()))?;
        serde_json::from_str(&text).context("invalid manifest")?
    };
    let params = manifest.config.params()?;
    let diags: Vec<WindowDiagnostics> = read_jsonl(&input.join("diagnostics.jsonl"))?;
    let windows: Vec<RadialProfile> = read_jsonl(&input.join("windows.jsonl"))?;
    if diags.is_empty() || windows.is_empty() {
        bail!("input run has no diagnostics/windows");
    }
    let records: Vec<MomentRecord> = diags.iter().map(|d| d.record.clone()).collect();
    let alpha = params.alpha;
    let mut summaries = Vec::new();
    let mut push = |out: &Path, name: &str, report: &InequalityReport| -> anyhow::Result<bool> {
        write_json(&out.join(format!("{name}.json")), report)?;
        let pass = report.passed();
        println!(
            "verify {name}: {} ({} checkpoints, {} violations, max sigma {:.2})",
            if pass { "PASS" } else { "FAIL" },
            report.checkpoints,
            report.violations,
            report.max_violation_sigma
        );
        summaries.push(CheckSummary {
            name: name.into(),
            pass,
        });
        Ok(pass)
    };

    // Povzner moment inequality at k = 1 + gamma/2, on checkpoints spaced at
    // least `spacing_mft` mean free times apart so the finite differences
    // dominate the Monte Carlo noise.
    let k_target = 1.0 + 0.5 * params.gamma;
    let stride = (cfg.verify.spacing_mft / manifest.config.windows.window_mft).ceil().max(1.0) as usize;
    let thinned = analysis::thin_records(&records, stride);
    if thinned.len() >= 3 {
        let report = analysis::check_moment_inequality(&thinned, k_target, alpha, &params)?;
        push(&cfg.out, "moment_inequality", &report)?;
    } else {
        eprintln!("verify moment_inequality: skipped (too few checkpoints after striding)");
    }

    // Lower-bound propagation.
    let report = analysis::check_lower_bound(&records, alpha, &params)?;
    push(&cfg.out, "lower_bound", &report)?;

    // Uniform moment bound sup_t M_{1+g/2} <= max(M(0), Mbar).
    let mbar = analysis::moment_bound(alpha, &params)?;
    let m0 = records[0].moment(k_target)?;
    let cap = m0.value.max(mbar);
    let details: Vec<analysis::CheckDetail> = records
        .iter()
        .map(|r| {
            let m = r.moment(k_target)?;
            Ok(analysis::CheckDetail {
                t: r.t,
                lhs: m.value,
                rhs: cap,
                std_error: (m.std_error.powi(2) + m0.std_error.powi(2)).sqrt(),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let report = uniform_bound_report(details, mbar);
    push(&cfg.out, "uniform_moment_bound", &report)?;

    // Theorem-grade checks on the averaged tail profile.
    let tail = windows.len().min(manifest.config.windows.consecutive.max(2));
    let final_profile = RadialProfile::average(&windows[windows.len() - tail..])?;
    let mut probe_rng = stream_rng(cfg.seed, 7777);
    let probes: Vec<f64> = (0..cfg.verify.probes)
        .map(|_| probe_rng.random_range(0.0..0.75 * manifest.config.windows.r_max))
        .collect();
    let report = analysis::isotropic_lemma_check(&final_profile, params.gamma, &probes)?;
    push(&cfg.out, "isotropic_lemma", &report)?;

    let checkpoints: Vec<analysis::LpCheckpoint> = windows
        .iter()
        .zip(&diags)
        .map(|(w, d)| (w.clone(), d.record.a_psi))
        .collect();
    let report = analysis::lp_pairing_series(&checkpoints, cfg.verify.p, &params)?;
    push(&cfg.out, "lp_pairing", &report)?;

    // Weak-residual contraction along the run.
    let residuals: Vec<Measured> = diags.iter().filter_map(|d| d.residual).collect();
    let residual_summary = if residuals.len() >= 2 {
        let initial = residuals[0].value;
        let tail_n = residuals.len().min(manifest.config.windows.consecutive.max(2));
        let converged =
            residuals[residuals.len() - tail_n..].iter().map(|m| m.value).sum::<f64>() / tail_n as f64;
        let ratio = converged / initial.max(1e-300);
        let pass = ratio <= 0.2;
        println!(
            "verify weak_residual: {} (initial {:.4}, converged {:.4}, ratio {:.3})",
            if pass { "PASS" } else { "FAIL" },
            initial,
            converged,
            ratio
        );
        summaries.push(CheckSummary {
            name: "weak_residual".into(),
            pass,
        });
        json!({ "initial": initial, "converged": converged, "ratio": ratio, "pass": pass })
    } else {
        json!({ "skipped": "no residual diagnostics in input run" })
    };
    write_json(&cfg.out.join("weak_residual.json"), &residual_summary)?;

    let all_pass = summaries.iter().all(|s| s.pass);
    let result = json!({
        "checks": summaries,
        "all_pass": all_pass,
    });
    if !all_pass {
        write_json(&cfg.out.join("failure.json"), &result)?;
        return Err(fail(1, "one or more verification checks failed"));
    }
    Ok(result)
}

fn uniform_bound_report(details: Vec<analysis::CheckDetail>, mbar: f64) -> InequalityReport {
    let mut violations = 0;
    let mut max_sigma = f64::NEG_INFINITY;
    for d in &details {
        let gap = d.lhs - d.rhs;
        if d.std_error > 0.0 {
            max_sigma = max_sigma.max(gap / d.std_error);
        }
        if gap > 3.0 * d.std_error {
            violations += 1;
        }
    }
    InequalityReport {
        name: format!("uniform_moment_bound (Mbar = {mbar})"),
        checkpoints: details.len(),
        violations,
        max_violation_sigma: max_sigma,
        details,
    }
}

fn run_maxwell_oracle(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let params = cfg.params()?;
    if params.gamma != 0.0 {
        bail!("invalid parameter `gamma`: maxwell-oracle requires gamma = 0");
    }
    if !(params.alpha > 0.0) {
        bail!("invalid parameter `alpha`: maxwell-oracle requires alpha > 0");
    }
    let law = maxwell::MaxwellLaw::new(cfg.n0, params.alpha, vec![0.0; params.dim], 1.0)?;
    let t_end = cfg.mu_n0_t / (law.mu() * law.n0);
    let sampler = cfg.sampler_or_default();
    let run_cfg = PhysicalRunConfig {
        n_particles: cfg.n_particles,
        n0: cfg.n0,
        t_end,
        checkpoints: cfg.checkpoints,
        sampler: sampler.clone(),
        moment_orders: vec![0.0, 1.0],
        // The splitting bias of the pair-selection scheme is first order in
        // the step fraction; the oracle needs it an order below its 1%
        // tolerance.
        candidate_fraction: cfg.candidate_fraction_for(0.005),
        pair_budget: 1_000,
    };

    // Independent replicas on dedicated streams; quoted density errors are
    // the replica spread of each checkpoint statistic.
    let mut bulk_by_replica = Vec::with_capacity(cfg.replicas);
    let mut times = Vec::new();
    for r in 0..cfg.replicas {
        let mut rng = stream_rng(cfg.seed, 1000 + r as u64);
        let traj = dsmc::run_physical(&run_cfg, &params, &mut rng)?;
        if traj.extinct {
            return Err(fail(EXIT_EXTINCT, format!("replica {r} went extinct")));
        }
        if r == 0 {
            times = traj.times.clone();
        }
        bulk_by_replica.push(traj.bulk);
    }

    let replicas = cfg.replicas as f64;
    let mean_se = |samples: &[f64]| -> (f64, f64) {
        let mean = samples.iter().sum::<f64>() / replicas;
        if samples.len() < 2 {
            return (mean, 0.0);
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (replicas - 1.0);
        (mean, (var / replicas).sqrt())
    };
    // Bulk drift under gamma = 0 is pure pair-removal noise: the analytic
    // null is the subsampling variance from N0 survivors down to N_t.
    let weight = cfg.n0 / cfg.n_particles as f64;
    let drift_scales = |i: usize| -> (f64, f64) {
        let mut inv_diff = 0.0;
        let mut theta0 = 0.0;
        for rep in &bulk_by_replica {
            let count_t = rep[i].n / weight;
            let count_0 = rep[0].n / weight;
            inv_diff += (1.0 / count_t - 1.0 / count_0).max(0.0);
            theta0 += rep[0].theta;
        }
        inv_diff /= replicas;
        theta0 /= replicas;
        let se_u = (theta0 * inv_diff / replicas).sqrt();
        let se_theta = (2.0 * theta0 * theta0 / params.dim as f64 * inv_diff / replicas).sqrt();
        (se_u, se_theta)
    };

    let mut header: Vec<String> = vec!["t".into(), "n_dsmc".into(), "n_se".into(), "n_exact".into()];
    for c in 0..params.dim {
        header.push(format!("u_drift_{c}"));
    }
    header.extend(["u_drift_se", "theta", "theta_drift_se"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(&header_refs);

    let mut max_n_sigma = 0.0f64;
    let mut max_n_rel = 0.0f64;
    let mut final_u_sigma = 0.0f64;
    let mut final_theta_sigma = 0.0f64;
    let last = times.len() - 1;
    for (i, &t) in times.iter().enumerate() {
        let n_samples: Vec<f64> = bulk_by_replica.iter().map(|r| r[i].n).collect();
        let (n_mean, n_se) = mean_se(&n_samples);
        let n_exact = maxwell::n_exact(t, &law)?;
        let mut row = vec![t, n_mean, n_se, n_exact];
        if i > 0 {
            max_n_sigma = max_n_sigma.max((n_mean - n_exact).abs() / n_se.max(1e-300));
            max_n_rel = max_n_rel.max((n_mean - n_exact).abs() / n_exact);
        }
        let (se_u, se_theta) = drift_scales(i);
        for c in 0..params.dim {
            let drift: Vec<f64> = bulk_by_replica.iter().map(|r| r[i].u[c] - r[0].u[c]).collect();
            let d_mean = drift.iter().sum::<f64>() / replicas;
            row.push(d_mean);
            if i == last {
                final_u_sigma = final_u_sigma.max(d_mean.abs() / se_u.max(1e-300));
            }
        }
        row.push(se_u);
        let theta_drift: Vec<f64> = bulk_by_replica
            .iter()
            .map(|r| r[i].theta - r[0].theta)
            .collect();
        let theta_mean: Vec<f64> = bulk_by_replica.iter().map(|r| r[i].theta).collect();
        row.push(theta_mean.iter().sum::<f64>() / replicas);
        row.push(se_theta);
        if i == last {
            let drift_mean = theta_drift.iter().sum::<f64>() / replicas;
            final_theta_sigma = drift_mean.abs() / se_theta.max(1e-300);
        }
        table.row(&row);
    }
    table.write(&cfg.out.join("oracle.csv"))?;
    let (max_u_sigma, max_theta_sigma) = (final_u_sigma, final_theta_sigma);

    let pass_n = max_n_sigma <= 3.0 && max_n_rel <= 0.01;
    let pass_bulk = max_u_sigma <= 3.0 && max_theta_sigma <= 3.0;
    let oracle_report = json!({
        "replicas": cfg.replicas,
        "n_particles": cfg.n_particles,
        "mu_n0_t": cfg.mu_n0_t,
        "max_n_sigma": max_n_sigma,
        "max_n_rel_err": max_n_rel,
        "max_u_drift_sigma": max_u_sigma,
        "max_theta_drift_sigma": max_theta_sigma,
        "pass_density_law": pass_n,
        "pass_bulk_invariance": pass_bulk,
        "pass": pass_n && pass_bulk,
    });
    write_json(&cfg.out.join("oracle_report.json"), &oracle_report)?;
    println!(
        "maxwell-oracle: density law {} (max {:.2} sigma, {:.3}% rel), bulk invariance {}",
        if pass_n { "PASS" } else { "FAIL" },
        max_n_sigma,
        100.0 * max_n_rel,
        if pass_bulk { "PASS" } else { "FAIL" },
    );

    let mut equivalence_pass = true;
    if cfg.equivalence.enabled {
        let mut eq_params = params.clone();
        eq_params.alpha = cfg.equivalence.alpha;
        let settings = EquivalenceSettings {
            n_particles: cfg.n_particles,
            mu_n0_t: cfg.equivalence.mu_n0_t,
            sampler,
            bins: cfg.equivalence.bins,
            r_max: cfg.equivalence.r_max,
            null_runs: cfg.equivalence.null_runs,
            parallel: cfg.threads > 1 && !cfg.deterministic,
            candidate_fraction: cfg.candidate_fraction_for(0.05),
        };
        let report = maxwell::equivalence_check(&eq_params, &settings, cfg.seed)?;
        write_json(&cfg.out.join("equivalence.json"), &report)?;
        println!(
            "maxwell-oracle equivalence: {} (distance {:.4} vs null {:.4} +- {:.4})",
            if report.pass { "PASS" } else { "FAIL" },
            report.distance,
            report.null_mean,
            report.null_std
        );
        equivalence_pass = report.pass;
    }

    if !(pass_n && pass_bulk && equivalence_pass) {
        return Err(fail(1, "maxwell oracle checks failed"));
    }
    Ok(oracle_report)
}
