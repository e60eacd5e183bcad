//! Scenario execution: run the configured pipeline, persist plot-ready
//! artifacts (CSV densities, JSON reports), and write a manifest with
//! content hashes so that byte-identical reproduction is checkable.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::characteristics::transform_from_zeta;
use crate::config::ExperimentConfig;
use crate::drift::validate_conditions;
use crate::error::{Error, Result};
use crate::grid::{l1_distance, GridDensity};
use crate::particles::{chaos_distance, empirical_density, reference_bandwidth, simulate_particles};
use crate::pde::{solve_zeta, DensityTrajectory};
use crate::sensitivity::{snap_sources, solve_eta, solve_xi};
use crate::spde::{compare_methods, MethodComparison};
use crate::stable::{sample_brownian_path, stable_kernel};

pub const OUTPUT_ROOT_ENV: &str = "STABLEMKV_OUTPUT_ROOT";

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub wall_ms: u128,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct ChecksReport {
    pub mass_drift: f64,
    pub mass_ok: bool,
    pub tv_ratio: f64,
    pub tv_ok: bool,
    pub undershoot_ratio: f64,
    pub positivity_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form_ok: Option<bool>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub streams: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<ChecksReport>,
}

#[derive(Debug, Serialize)]
struct TrajectoryDiagnostics<'a> {
    times: Vec<f64>,
    mass: Vec<f64>,
    min_value: Vec<f64>,
    tv_norm: Vec<f64>,
    picard_iters: Vec<usize>,
    edge_mass_final: f64,
    noise_seed: Option<u64>,
    #[serde(skip)]
    _marker: std::marker::PhantomData<&'a ()>,
}

#[derive(Debug, Serialize)]
struct SensitivityReport {
    sources: Vec<f64>,
    pairs: Vec<(f64, f64)>,
    xi_mass_deviation: f64,
    eta_mass_deviation: Option<f64>,
    eta_symmetry_gap: Option<f64>,
    fd_steps: Vec<f64>,
    /// Relative L1 error of xi against the difference quotient, per
    /// (source, step size).
    fd_errors: Vec<Vec<f64>>,
    fd_monotone: bool,
}

#[derive(Debug, Serialize)]
struct ChaosReport {
    times: Vec<f64>,
    wasserstein: Vec<f64>,
    smoothed_l1_final: f64,
    bandwidth: f64,
    count: usize,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub checks_passed: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failure: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => Path::new(&root).join(&cfg.output_dir),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

fn collect_artifacts(dir: &Path) -> Result<Vec<ArtifactRecord>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let entry = entry?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().map(|n| n != "manifest.json").unwrap_or(true) {
                files.push(p);
            }
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|p| {
            Ok(ArtifactRecord {
                path: p
                    .strip_prefix(dir)
                    .unwrap_or(&p)
                    .to_string_lossy()
                    .into_owned(),
                sha256: hash_file(&p)?,
            })
        })
        .collect()
}

fn export_trajectory(
    dir: &Path,
    prefix: &str,
    traj: &DensityTrajectory,
    mu_of: impl Fn(usize) -> GridDensity,
    snapshots: usize,
) -> Result<()> {
    let retained = traj.retained_indices(snapshots);
    let mut index = String::from("snapshot,time,file\n");
    for (s, &i) in retained.iter().enumerate() {
        let file = format!("{prefix}_{s:04}.csv");
        mu_of(i).write_csv(&dir.join(&file))?;
        index.push_str(&format!("{s},{},{file}\n", traj.times()[i]));
    }
    std::fs::write(dir.join(format!("{prefix}_snapshots.csv")), index)?;
    Ok(())
}

/// Execute the configured pipeline. Returns the artifact directory and the
/// outcome of the requested checks; stage failures are recorded in the
/// manifest before the error propagates.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let scenario = cfg.build()?;
    let dir = resolve_output_dir(cfg);
    std::fs::create_dir_all(&dir)?;

    let mut stages: Vec<StageRecord> = Vec::new();
    let mut streams = vec![crate::rng::common_noise_label(cfg.master_seed)];

    macro_rules! stage {
        ($name:expr, $body:expr) => {{
            let started = Instant::now();
            let result = (|| -> Result<_> { $body })();
            match result {
                Ok(v) => {
                    stages.push(StageRecord {
                        name: $name.into(),
                        wall_ms: started.elapsed().as_millis(),
                        status: "ok".into(),
                        error: None,
                    });
                    v
                }
                Err(e) => {
                    stages.push(StageRecord {
                        name: $name.into(),
                        wall_ms: started.elapsed().as_millis(),
                        status: "failed".into(),
                        error: Some(e.to_string()),
                    });
                    let manifest = Manifest {
                        scenario: cfg.scenario.clone(),
                        version: env!("CARGO_PKG_VERSION").into(),
                        config_hash: cfg.hash(),
                        master_seed: cfg.master_seed,
                        streams: streams.clone(),
                        stages,
                        artifacts: collect_artifacts(&dir)?,
                        checks: None,
                    };
                    write_json(&dir.join("manifest.json"), &manifest)?;
                    return Err(e);
                }
            }
        }};
    }

    // config echo for provenance
    stage!("config", {
        let text = toml::to_string_pretty(cfg)
            .map_err(|e| Error::Config(format!("config echo failed: {e}")))?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    });

    stage!("validate", {
        let report = validate_conditions(&scenario.drift, &scenario.scale, cfg.mass_bound, 200)?;
        write_json(&dir.join("validation.json"), &report)?;
        if !report.pass {
            return Err(Error::Config(format!(
                "condition validation failed: {:?}",
                report.violations
            )));
        }
        Ok(())
    });

    let path = sample_brownian_path(cfg.time.horizon, scenario.n_noise_steps, cfg.master_seed)?;

    let zeta = stage!("solve", {
        let traj = solve_zeta(
            &scenario.initial,
            &path,
            &scenario.drift,
            &scenario.scale,
            &scenario.noise,
            scenario.params,
            &scenario.solver,
        )?;
        let diag = TrajectoryDiagnostics {
            times: traj.times().to_vec(),
            mass: traj.diagnostics().iter().map(|d| d.mass).collect(),
            min_value: traj.diagnostics().iter().map(|d| d.min_value).collect(),
            tv_norm: traj.diagnostics().iter().map(|d| d.tv_norm).collect(),
            picard_iters: traj.diagnostics().iter().map(|d| d.picard_iters).collect(),
            edge_mass_final: traj.final_density().edge_mass(0.05),
            noise_seed: traj.noise_seed(),
            _marker: std::marker::PhantomData,
        };
        write_json(&dir.join("diagnostics.json"), &diag)?;
        let per = (path.dt() / scenario.solver.dt).round() as usize;
        export_trajectory(
            &dir,
            "mu",
            &traj,
            |i| transform_from_zeta(traj.density(i), path.value(i / per.max(1)), &scenario.noise),
            cfg.time.snapshots,
        )?;
        export_trajectory(&dir, "zeta", &traj, |i| traj.density(i).clone(), cfg.time.snapshots)?;
        traj.final_density().write_binary(&dir.join("zeta_final.bin"))?;
        transform_from_zeta(traj.final_density(), path.value(path.n_steps()), &scenario.noise)
            .write_binary(&dir.join("mu_final.bin"))?;
        Ok(traj)
    });

    if let Some(compare) = &cfg.compare {
        stage!("compare", {
            let mut reports: Vec<MethodComparison> = Vec::new();
            for &seed in &compare.seeds {
                streams.push(crate::rng::common_noise_label(seed));
                reports.push(compare_methods(
                    &scenario.initial,
                    seed,
                    &scenario.drift,
                    &scenario.scale,
                    &scenario.noise,
                    scenario.params,
                    &scenario.solver,
                    cfg.time.horizon,
                    compare.refinements,
                )?);
            }
            write_json(&dir.join("compare.json"), &reports)?;
            Ok(())
        });
    }

    if let Some(pc) = &cfg.particles {
        stage!("particles", {
            let dtp = pc.dt.unwrap_or(scenario.solver.dt);
            let sub = (dtp / path.dt()).round() as usize;
            let ppath = if sub <= 1 { path.clone() } else { path.subsample(sub)? };
            streams.push(format!("particle:{}:0..{}", pc.idio_seed, pc.count));
            let states = simulate_particles(
                pc.count,
                &scenario.initial,
                &ppath,
                &scenario.drift,
                &scenario.scale,
                &scenario.noise,
                scenario.params,
                pc.idio_seed,
            )?;
            let last = states.last().expect("nonempty");
            last.write_csv(&dir.join("particles_final.csv"))?;

            // Wasserstein series against the solved measure at shared times
            let probe: Vec<usize> = {
                let n = states.len();
                (0..5.min(n)).map(|k| k * (n - 1) / 4.max(1)).collect()
            };
            let per = (path.dt() / scenario.solver.dt).round().max(1.0) as usize;
            let mut times = Vec::new();
            let mut wass = Vec::new();
            for &si in probe.iter() {
                let t = states[si].time;
                let zi = zeta.index_at_time(t)?;
                let mu = transform_from_zeta(zeta.density(zi), path.value(zi / per), &scenario.noise);
                times.push(t);
                wass.push(chaos_distance(&states[si], &mu));
            }
            let bw = pc
                .bandwidth
                .unwrap_or_else(|| reference_bandwidth(last, &scenario.grid));
            let kde = empirical_density(last, &scenario.grid, bw)?;
            let zi = zeta.len() - 1;
            let mu_t = transform_from_zeta(zeta.density(zi), path.value(path.n_steps()), &scenario.noise);
            let smoothed_l1_final = l1_distance(&kde, &smooth_with_gaussian(&mu_t, bw))?;
            write_json(
                &dir.join("chaos.json"),
                &ChaosReport {
                    times,
                    wasserstein: wass,
                    smoothed_l1_final,
                    bandwidth: bw,
                    count: pc.count,
                },
            )?;
            Ok(())
        });
    }

    if let Some(sc) = &cfg.sensitivity {
        stage!("sensitivity", {
            let sources = snap_sources(&scenario.grid, &sc.sources);
            let xi = solve_xi(
                &sources,
                &zeta,
                &path,
                &scenario.drift,
                &scenario.scale,
                &scenario.noise,
                scenario.params,
                &scenario.solver,
            )?;
            let retained = zeta.retained_indices(cfg.time.snapshots);
            for (si, _) in sources.iter().enumerate() {
                for (s, &ti) in retained.iter().enumerate() {
                    xi.slice(si, ti)
                        .write_csv(&dir.join(format!("xi_src{si}_{s:04}.csv")))?;
                }
            }

            let pairs: Vec<(f64, f64)> = sc
                .pairs
                .iter()
                .map(|p| (scenario.grid.snap(p[0]), scenario.grid.snap(p[1])))
                .collect();
            let mut eta_mass = None;
            let mut eta_gap = None;
            if !pairs.is_empty() {
                let mut all_sources = sources.clone();
                for &(x, z) in &pairs {
                    for v in [x, z] {
                        if !all_sources.contains(&v) {
                            all_sources.push(v);
                        }
                    }
                }
                let xi_full = if all_sources.len() == sources.len() {
                    xi.clone()
                } else {
                    solve_xi(
                        &all_sources,
                        &zeta,
                        &path,
                        &scenario.drift,
                        &scenario.scale,
                        &scenario.noise,
                        scenario.params,
                        &scenario.solver,
                    )?
                };
                let eta = solve_eta(
                    &pairs,
                    &xi_full,
                    &zeta,
                    &path,
                    &scenario.drift,
                    &scenario.scale,
                    &scenario.noise,
                    scenario.params,
                    &scenario.solver,
                )?;
                for (pi, _) in pairs.iter().enumerate() {
                    for (s, &ti) in retained.iter().enumerate() {
                        eta.slice(pi, ti)
                            .write_csv(&dir.join(format!("eta_pair{pi}_{s:04}.csv")))?;
                    }
                }
                eta_mass = Some(eta.max_mass_deviation());
                // swap-symmetry of the first pair as a structural check
                let (x, z) = pairs[0];
                let swapped = solve_eta(
                    &[(z, x)],
                    &xi_full,
                    &zeta,
                    &path,
                    &scenario.drift,
                    &scenario.scale,
                    &scenario.noise,
                    scenario.params,
                    &scenario.solver,
                )?;
                let tl = zeta.len() - 1;
                eta_gap = Some(l1_distance(eta.slice(0, tl), swapped.slice(0, tl))?);
            }

            // finite-difference quotients on the same frozen path
            let mut fd_errors = vec![Vec::new(); sources.len()];
            for &h in &sc.fd_steps {
                for (si, &x) in sources.iter().enumerate() {
                    let d = crate::grid::dirac_approx(&scenario.grid, x)?;
                    let y_h = scenario.initial.linear_comb(1.0, &d, h)?;
                    let traj_h = solve_zeta(
                        &y_h,
                        &path,
                        &scenario.drift,
                        &scenario.scale,
                        &scenario.noise,
                        scenario.params,
                        &scenario.solver,
                    )?;
                    let fd = traj_h
                        .final_density()
                        .linear_comb(1.0 / h, zeta.final_density(), -1.0 / h)?;
                    let xi_t = xi.slice(si, zeta.len() - 1);
                    fd_errors[si].push(l1_distance(&fd, xi_t)? / xi_t.tv_norm().max(1e-300));
                }
            }
            let fd_monotone = fd_errors.iter().all(|errs| {
                errs.windows(2).all(|w| w[1] <= w[0] + 1e-12)
            });
            write_json(
                &dir.join("sensitivity_report.json"),
                &SensitivityReport {
                    sources: sources.clone(),
                    pairs,
                    xi_mass_deviation: xi.max_mass_deviation(),
                    eta_mass_deviation: eta_mass,
                    eta_symmetry_gap: eta_gap,
                    fd_steps: sc.fd_steps.clone(),
                    fd_errors,
                    fd_monotone,
                },
            )?;
            Ok(())
        });
    }

    // requested acceptance checks
    let checks = if let Some(ck) = &cfg.checks {
        let mass_drift = zeta.max_mass_drift();
        let tv_ratio = zeta.max_tv_ratio();
        let undershoot = zeta.max_undershoot_ratio();
        let mut closed_form_error = None;
        let mut closed_form_ok = None;
        if let Some(tol) = ck.closed_form_tol {
            if scenario.drift.depends_on_measure()
                || !matches!(scenario.drift.base, crate::drift::BaseDrift::Zero)
                || !scenario.scale.is_constant()
            {
                return Err(Error::Config(
                    "closed-form check requires zero drift and constant scale".into(),
                ));
            }
            let kernel = stable_kernel(
                &scenario.grid,
                cfg.time.horizon,
                scenario.scale.values()[0],
                scenario.params,
            )?;
            let reference = kernel.convolve(&scenario.initial)?;
            let err = l1_distance(zeta.final_density(), &reference)?;
            closed_form_error = Some(err);
            closed_form_ok = Some(err < tol);
        }
        let mass_ok = mass_drift < ck.mass_rel_tol;
        let tv_ok = tv_ratio <= 1.0 + ck.tv_factor;
        let positivity_ok = undershoot <= ck.positivity_factor;
        let pass = mass_ok && tv_ok && positivity_ok && closed_form_ok.unwrap_or(true);
        Some(ChecksReport {
            mass_drift,
            mass_ok,
            tv_ratio,
            tv_ok,
            undershoot_ratio: undershoot,
            positivity_ok,
            closed_form_error,
            closed_form_ok,
            pass,
        })
    } else {
        None
    };
    let checks_passed = checks.as_ref().map(|c| c.pass).unwrap_or(true);

    let manifest = Manifest {
        scenario: cfg.scenario.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        streams,
        stages,
        artifacts: collect_artifacts(&dir)?,
        checks,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    Ok(RunOutcome {
        dir,
        checks_passed,
    })
}

fn smooth_with_gaussian(mu: &GridDensity, bandwidth: f64) -> GridDensity {
    let grid = *mu.grid();
    let kernel = GridDensity::from_fn(grid, false, |x| {
        (-x * x / (2.0 * bandwidth * bandwidth)).exp()
            / ((2.0 * std::f64::consts::PI).sqrt() * bandwidth)
    })
    .expect("gaussian kernel is finite");
    mu.convolve(&kernel).expect("same grid")
}

#[derive(Debug, Serialize)]
pub struct FileDiff {
    pub path: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_diff: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DiffReport {
    pub identical: bool,
    pub files: Vec<FileDiff>,
}

fn numeric_diff(a: &str, b: &str) -> Option<f64> {
    let mut max = 0.0_f64;
    let la: Vec<&str> = a.lines().collect();
    let lb: Vec<&str> = b.lines().collect();
    if la.len() != lb.len() {
        return None;
    }
    for (x, y) in la.iter().zip(lb.iter()) {
        let ca: Vec<&str> = x.split(',').collect();
        let cb: Vec<&str> = y.split(',').collect();
        if ca.len() != cb.len() {
            return None;
        }
        for (u, v) in ca.iter().zip(cb.iter()) {
            match (u.parse::<f64>(), v.parse::<f64>()) {
                (Ok(fu), Ok(fv)) => max = max.max((fu - fv).abs()),
                _ if u == v => {}
                _ => return None,
            }
        }
    }
    Some(max)
}

/// Numeric diff of two artifact directories: CSVs are compared cell by
/// cell, everything else byte for byte.
pub fn diff_artifact_dirs(a: &Path, b: &Path) -> Result<DiffReport> {
    let list = |d: &Path| -> Result<Vec<String>> {
        let mut names = Vec::new();
        let mut stack = vec![d.to_path_buf()];
        while let Some(cur) = stack.pop() {
            for entry in std::fs::read_dir(&cur)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    names.push(p.strip_prefix(d).unwrap().to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
        Ok(names)
    };
    let in_a = list(a)?;
    let in_b = list(b)?;
    let mut files = Vec::new();
    let mut identical = true;
    for name in &in_a {
        if !in_b.contains(name) {
            files.push(FileDiff {
                path: name.clone(),
                status: "only_in_first".into(),
                max_abs_diff: None,
            });
            identical = false;
            continue;
        }
        let ba = std::fs::read(a.join(name))?;
        let bb = std::fs::read(b.join(name))?;
        if ba == bb {
            files.push(FileDiff {
                path: name.clone(),
                status: "identical".into(),
                max_abs_diff: Some(0.0),
            });
        } else if name.ends_with(".csv") {
            let diff = numeric_diff(
                &String::from_utf8_lossy(&ba),
                &String::from_utf8_lossy(&bb),
            );
            files.push(FileDiff {
                path: name.clone(),
                status: "differs".into(),
                max_abs_diff: diff,
            });
            identical = false;
        } else {
            files.push(FileDiff {
                path: name.clone(),
                status: "differs".into(),
                max_abs_diff: None,
            });
            identical = false;
        }
    }
    for name in &in_b {
        if !in_a.contains(name) {
            files.push(FileDiff {
                path: name.clone(),
                status: "only_in_second".into(),
                max_abs_diff: None,
            });
            identical = false;
        }
    }
    Ok(DiffReport { identical, files })
}
