//! Deterministic nonlinear solver for the noise-removed density equation
//!   dg/dt = -(b~ g)' - |D|^{alpha/2}(a~ g),
//! plus a Duhamel fixed-point solver for the constant-scale case and an
//! empirical stability probe.
//!
//! Time stepping splits a~ into its spatial mean plus remainder. The mean
//! part is integrated exactly through the Fourier factor exp(-a_bar |k|^a dt);
//! drift divergence and the scale remainder are explicit. The measure
//! dependence of b~ is iterated to a fixed point within each step, with the
//! left-endpoint density as the initial guess. The noise value is frozen at
//! the left endpoint of each step. Every term is a divergence or a
//! zero-symbol operator, so total mass is conserved to roundoff.

use serde::Serialize;

use crate::characteristics::{dressed_drift, CommonNoiseSpec};
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fracops::{adjoint_rhs, ScaleField};
use crate::grid::{l1_distance, total_mass, Grid1D, GridDensity};
use crate::spectral::{signed_index, Spectral};
use crate::stable::{NoisePath, StableParams};

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub dt: f64,
    /// Relative L1 tolerance of the in-step fixed-point iteration.
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Exact integrating factor for the mean fractional part; plain
    /// explicit Euler when false.
    pub imex: bool,
}

impl SolverConfig {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
        }
        Ok(SolverConfig {
            dt,
            picard_tol: 1e-10,
            picard_max_iter: 25,
            imex: true,
        })
    }

    pub fn with_dt(&self, dt: f64) -> SolverConfig {
        SolverConfig { dt, ..*self }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepDiagnostics {
    pub time: f64,
    pub mass: f64,
    pub min_value: f64,
    pub tv_norm: f64,
    pub picard_iters: usize,
}

/// Time-stamped sequence of densities with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct DensityTrajectory {
    times: Vec<f64>,
    densities: Vec<GridDensity>,
    diagnostics: Vec<StepDiagnostics>,
    noise_seed: Option<u64>,
    dt: f64,
}

impl DensityTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn density(&self, i: usize) -> &GridDensity {
        &self.densities[i]
    }

    pub fn final_density(&self) -> &GridDensity {
        self.densities.last().expect("trajectory is nonempty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is nonempty")
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn grid(&self) -> &Grid1D {
        self.densities[0].grid()
    }

    pub fn noise_seed(&self) -> Option<u64> {
        self.noise_seed
    }

    pub(crate) fn set_noise_seed(&mut self, seed: Option<u64>) {
        self.noise_seed = seed;
    }

    pub(crate) fn from_parts(
        times: Vec<f64>,
        densities: Vec<GridDensity>,
        diagnostics: Vec<StepDiagnostics>,
        dt: f64,
    ) -> Self {
        DensityTrajectory {
            times,
            densities,
            diagnostics,
            noise_seed: None,
            dt,
        }
    }

    /// Largest relative deviation of the mass from the initial mass.
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.diagnostics[0].mass;
        self.diagnostics
            .iter()
            .fold(0.0_f64, |d, s| d.max((s.mass - m0).abs() / m0.abs().max(1e-300)))
    }

    /// Worst ratio of the total-variation norm to the initial one.
    pub fn max_tv_ratio(&self) -> f64 {
        let tv0 = self.diagnostics[0].tv_norm;
        self.diagnostics
            .iter()
            .fold(0.0_f64, |r, s| r.max(s.tv_norm / tv0.max(1e-300)))
    }

    /// Worst undershoot relative to the running maximum density.
    pub fn max_undershoot_ratio(&self) -> f64 {
        self.densities.iter().fold(0.0_f64, |r, d| {
            let max = d.max_value().max(1e-300);
            r.max((-d.min_value()).max(0.0) / max)
        })
    }

    /// Indices of `count` uniformly spaced snapshots including both ends.
    pub fn retained_indices(&self, count: usize) -> Vec<usize> {
        let n = self.times.len();
        if count <= 1 || n == 1 {
            return vec![n - 1];
        }
        let count = count.min(n);
        let mut idx: Vec<usize> = (0..count)
            .map(|i| ((i as f64) * (n - 1) as f64 / (count - 1) as f64).round() as usize)
            .collect();
        idx.dedup();
        idx
    }

    pub fn index_at_time(&self, t: f64) -> Result<usize> {
        let i = (t / self.dt).round();
        if (t - i * self.dt).abs() > 1e-9 * self.final_time().max(1.0) || i < 0.0 {
            return Err(Error::Domain(format!("time {t} is not a trajectory stamp")));
        }
        let i = i as usize;
        if i >= self.times.len() {
            return Err(Error::Domain(format!("time {t} beyond trajectory horizon")));
        }
        Ok(i)
    }
}

/// exp(-a_bar |k|^alpha dt) for every FFT bin.
pub(crate) fn decay_factors(grid: &Grid1D, a_bar: f64, alpha: f64, dt: f64) -> Vec<f64> {
    let n = grid.n_points();
    let base = std::f64::consts::PI / grid.half_width();
    (0..n)
        .map(|j| {
            let k = base * signed_index(j, n) as f64;
            (-a_bar * k.abs().powf(alpha) * dt).exp()
        })
        .collect()
}

pub(crate) fn apply_decay(values: &[f64], factors: &[f64]) -> Vec<f64> {
    let sp = Spectral::get(values.len());
    let mut spectrum = sp.forward(values);
    for (c, f) in spectrum.iter_mut().zip(factors.iter()) {
        *c *= *f;
    }
    sp.inverse_real(spectrum)
}

pub(crate) fn rel_l1(a: &[f64], b: &[f64], h: f64) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
    let norm: f64 = b.iter().map(|y| y.abs()).sum();
    h * diff / (h * norm).max(1e-300)
}

/// Shared per-step machinery: propagate `g` one step with a fixed drift
/// field, already-dressed scale remainder and decay factors.
pub(crate) fn propagate(
    g: &[f64],
    drift: &[f64],
    a_rem: &[f64],
    grid: &Grid1D,
    alpha: f64,
    dt: f64,
    factors: &[f64],
    imex: bool,
) -> Vec<f64> {
    let rhs = adjoint_rhs(g, drift, a_rem, grid, alpha);
    let staged: Vec<f64> = g.iter().zip(rhs.iter()).map(|(x, r)| x + dt * r).collect();
    if imex {
        apply_decay(&staged, factors)
    } else {
        staged
    }
}

pub(crate) struct StepOutcome {
    pub values: Vec<f64>,
    pub picard_iters: usize,
}

/// One IMEX step of the density equation with the measure dependence of
/// the drift iterated to a fixed point (lagged measure).
pub(crate) fn step_core(
    g: &GridDensity,
    w: f64,
    t: f64,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
    factors: &[f64],
) -> Result<StepOutcome> {
    let grid = *g.grid();
    let alpha = p.alpha();
    let s = noise.sigma_com * w;
    let a_dressed = if s == 0.0 { a.clone() } else { a.shifted(-s) };
    let a_bar = a_dressed.mean();
    let a_rem: Vec<f64> = if cfg.imex {
        a_dressed.values().iter().map(|v| v - a_bar).collect()
    } else {
        a_dressed.values().to_vec()
    };

    if !spec.depends_on_measure() {
        let b = dressed_drift(spec, g, w, noise)?;
        let values = propagate(
            g.values(),
            b.values(),
            &a_rem,
            &grid,
            alpha,
            cfg.dt,
            factors,
            cfg.imex,
        );
        return Ok(StepOutcome {
            values,
            picard_iters: 1,
        });
    }

    let h = grid.spacing();
    let mut measure = g.clone();
    let mut prev_out: Option<Vec<f64>> = None;
    for it in 1..=cfg.picard_max_iter {
        let b = dressed_drift(spec, &measure, w, noise)?;
        let out = propagate(
            g.values(),
            b.values(),
            &a_rem,
            &grid,
            alpha,
            cfg.dt,
            factors,
            cfg.imex,
        );
        if let Some(prev) = &prev_out {
            let delta = rel_l1(&out, prev, h);
            if delta < cfg.picard_tol {
                return Ok(StepOutcome {
                    values: out,
                    picard_iters: it - 1,
                });
            }
        }
        measure = GridDensity::from_values_signed(grid, out.clone());
        prev_out = Some(out);
    }
    let residual = prev_out
        .map(|o| rel_l1(&o, g.values(), h))
        .unwrap_or(f64::INFINITY);
    Err(Error::NoConvergence {
        t,
        residual,
        iters: cfg.picard_max_iter,
    })
}

/// One step of the density equation at noise value `w`.
pub fn step_density(
    g: &GridDensity,
    w: f64,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<GridDensity> {
    g.grid().check_same(a.grid())?;
    let factors = decay_factors(g.grid(), a.mean(), p.alpha(), cfg.dt);
    let out = step_core(g, w, 0.0, spec, a, noise, p, cfg, &factors)?;
    Ok(GridDensity::from_values_signed(*g.grid(), out.values))
}

fn check_initial(y: &GridDensity) -> Result<()> {
    let max = y.max_value();
    if y.min_value() < -1e-12 * max.max(1.0) {
        return Err(Error::Domain(
            "initial density must be nonnegative".into(),
        ));
    }
    if !total_mass(y).is_finite() {
        return Err(Error::Domain("initial density must have finite mass".into()));
    }
    Ok(())
}

fn substeps_per_noise_step(path: &NoisePath, cfg: &SolverConfig) -> Result<usize> {
    let ratio = path.dt() / cfg.dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!(
            "solver dt {} must divide the noise step {}",
            cfg.dt,
            path.dt()
        )));
    }
    Ok(k as usize)
}

fn diag(t: f64, g: &GridDensity, iters: usize) -> StepDiagnostics {
    StepDiagnostics {
        time: t,
        mass: total_mass(g),
        min_value: g.min_value(),
        tv_norm: g.tv_norm(),
        picard_iters: iters,
    }
}

/// Solve the noise-removed density equation along a noise path. The full
/// step-resolution trajectory is stored.
pub fn solve_zeta(
    y: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<DensityTrajectory> {
    y.grid().check_same(a.grid())?;
    check_initial(y)?;
    let per = substeps_per_noise_step(path, cfg)?;
    let total = per * path.n_steps();
    let factors = decay_factors(y.grid(), a.mean(), p.alpha(), cfg.dt);

    let mut times = Vec::with_capacity(total + 1);
    let mut densities = Vec::with_capacity(total + 1);
    let mut diagnostics = Vec::with_capacity(total + 1);
    times.push(0.0);
    densities.push(y.clone());
    diagnostics.push(diag(0.0, y, 0));

    let mut current = y.clone();
    for i in 0..total {
        let t = i as f64 * cfg.dt;
        let w = path.value(i / per);
        let out = step_core(&current, w, t, spec, a, noise, p, cfg, &factors)?;
        current = GridDensity::from_values_signed(*y.grid(), out.values);
        let t_next = (i + 1) as f64 * cfg.dt;
        times.push(t_next);
        diagnostics.push(diag(t_next, &current, out.picard_iters));
        densities.push(current.clone());
    }

    let mut traj = DensityTrajectory::from_parts(times, densities, diagnostics, cfg.dt);
    traj.set_noise_seed(Some(path.seed()));
    Ok(traj)
}

/// Duhamel fixed-point solver for constant scale coefficient: iterates
///   g_t = G_t * Y - int_0^t d/dx [ G_{t-s} * (b~_s g_s) ] ds
/// with trapezoidal quadrature in s and spectral evaluation in space.
pub fn mild_picard_solve(
    y: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a_bar: f64,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<DensityTrajectory> {
    if !(a_bar > 0.0) {
        return Err(Error::InvalidParam("scale coefficient must be positive".into()));
    }
    check_initial(y)?;
    let per = substeps_per_noise_step(path, cfg)?;
    let total = per * path.n_steps();
    let grid = *y.grid();
    let n = grid.n_points();
    let h = grid.spacing();
    let alpha = p.alpha();
    let sp = Spectral::get(n);

    // decay powers: decay[m][j] = exp(-a_bar |k_j|^alpha m dt)
    let one = decay_factors(&grid, a_bar, alpha, cfg.dt);
    let mut decay = Vec::with_capacity(total + 1);
    decay.push(vec![1.0; n]);
    for m in 1..=total {
        let prev = &decay[m - 1];
        decay.push(prev.iter().zip(one.iter()).map(|(a, b)| a * b).collect());
    }

    let base = std::f64::consts::PI / grid.half_width();
    let ik: Vec<rustfft::num_complex::Complex64> = (0..n)
        .map(|j| {
            if j == n / 2 {
                rustfft::num_complex::Complex64::new(0.0, 0.0)
            } else {
                rustfft::num_complex::Complex64::new(0.0, base * signed_index(j, n) as f64)
            }
        })
        .collect();

    let y_hat = sp.forward(y.values());
    let homogeneous: Vec<Vec<f64>> = (0..=total)
        .map(|i| {
            let spec_i: Vec<_> = y_hat
                .iter()
                .zip(decay[i].iter())
                .map(|(c, d)| c * *d)
                .collect();
            sp.inverse_real(spec_i)
        })
        .collect();

    let mut traj: Vec<Vec<f64>> = homogeneous.clone();
    let mut iters_used = 0;
    if spec.depends_on_measure() || !matches!(spec.base, crate::drift::BaseDrift::Zero) {
        for it in 1..=cfg.picard_max_iter {
            // spectral transport loads at every time of the current iterate
            let loads: Vec<Vec<rustfft::num_complex::Complex64>> = (0..=total)
                .map(|j| {
                    let gj = GridDensity::from_values_signed(grid, traj[j].clone());
                    let wj = path.value(j / per);
                    let b = dressed_drift(spec, &gj, wj, noise)?;
                    let bg: Vec<f64> = b
                        .values()
                        .iter()
                        .zip(traj[j].iter())
                        .map(|(x, y)| x * y)
                        .collect();
                    Ok(sp.forward(&bg))
                })
                .collect::<Result<_>>()?;

            let mut next: Vec<Vec<f64>> = Vec::with_capacity(total + 1);
            next.push(y.values().to_vec());
            let mut max_delta = 0.0_f64;
            for i in 1..=total {
                let mut acc = vec![rustfft::num_complex::Complex64::new(0.0, 0.0); n];
                for j in 0..=i {
                    let weight = if j == 0 || j == i { 0.5 } else { 1.0 };
                    let d = &decay[i - j];
                    let u = &loads[j];
                    for m in 0..n {
                        acc[m] += u[m] * d[m] * weight;
                    }
                }
                let y_hat_i = &homogeneous[i];
                let duhamel: Vec<_> = acc
                    .iter()
                    .zip(ik.iter())
                    .map(|(c, k)| -cfg.dt * k * c)
                    .collect();
                let correction = sp.inverse_real(duhamel);
                let gi: Vec<f64> = y_hat_i
                    .iter()
                    .zip(correction.iter())
                    .map(|(a, b)| a + b)
                    .collect();
                max_delta = max_delta.max(rel_l1(&gi, &traj[i], h));
                next.push(gi);
            }
            traj = next;
            iters_used = it;
            if max_delta < cfg.picard_tol {
                break;
            }
            if it == cfg.picard_max_iter {
                return Err(Error::NoConvergence {
                    t: total as f64 * cfg.dt,
                    residual: max_delta,
                    iters: it,
                });
            }
        }
    } else {
        iters_used = 1;
    }

    let times: Vec<f64> = (0..=total).map(|i| i as f64 * cfg.dt).collect();
    let densities: Vec<GridDensity> = traj
        .into_iter()
        .map(|v| GridDensity::from_values_signed(grid, v))
        .collect();
    let diagnostics: Vec<StepDiagnostics> = times
        .iter()
        .zip(densities.iter())
        .map(|(&t, d)| diag(t, d, iters_used))
        .collect();
    let mut out = DensityTrajectory::from_parts(times, densities, diagnostics, cfg.dt);
    out.set_noise_seed(Some(path.seed()));
    Ok(out)
}

/// Empirical stability constant: max over trajectory times of
/// l1(zeta1_t, zeta2_t) / l1(Y1, Y2).
pub fn stability_probe(
    y1: &GridDensity,
    y2: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    let d0 = l1_distance(y1, y2)?;
    if d0 == 0.0 {
        return Err(Error::Domain(
            "stability probe needs distinct initial data".into(),
        ));
    }
    let t1 = solve_zeta(y1, path, spec, a, noise, p, cfg)?;
    let t2 = solve_zeta(y2, path, spec, a, noise, p, cfg)?;
    let mut worst = 0.0_f64;
    for i in 0..t1.len() {
        worst = worst.max(l1_distance(t1.density(i), t2.density(i))? / d0);
    }
    Ok(worst)
}
