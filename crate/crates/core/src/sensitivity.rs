//! First- and second-order variational derivatives of the solution map
//! with respect to the initial measure, solved along a frozen trajectory.
//!
//! The first-order field xi starts from a point-mass surrogate and evolves
//! with the same transport-fractional principal part as the density, plus
//! the coupling through the drift's first variational derivative. The
//! second-order field eta starts from zero and carries an extra source
//! assembled from symmetrized xi-products and the drift's second
//! variational derivative. Both use the stepper of the base solve with the
//! same dressed coefficients (the post-fixed-point measure of each step),
//! and iterate the implicit coupling term to the same tolerance, so the
//! fields are the derivatives of the discrete solution map up to the
//! fixed-point tolerance. A backward dual equation provides an independent
//! duality route for validation.

use serde::Serialize;

use crate::characteristics::{
    dressed_directional_first, dressed_directional_second, dressed_drift, CommonNoiseSpec,
};
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fracops::ScaleField;
use crate::grid::{dirac_approx, total_mass, Grid1D, GridDensity, TestFunction};
use crate::pde::{apply_decay, decay_factors, rel_l1, DensityTrajectory, SolverConfig};
use crate::spectral;
use crate::stable::{sample_brownian_path, NoisePath, StableParams};

/// Slices xi_t(x; .) for a list of source points, all retained times.
#[derive(Debug, Clone)]
pub struct FirstOrderField {
    sources: Vec<f64>,
    times: Vec<f64>,
    /// data[source][time]
    data: Vec<Vec<GridDensity>>,
}

impl FirstOrderField {
    pub(crate) fn from_parts(
        sources: Vec<f64>,
        times: Vec<f64>,
        data: Vec<Vec<GridDensity>>,
    ) -> Self {
        FirstOrderField { sources, times, data }
    }

    pub fn sources(&self) -> &[f64] {
        &self.sources
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, source_idx: usize, time_idx: usize) -> &GridDensity {
        &self.data[source_idx][time_idx]
    }

    pub fn source_index(&self, x: f64) -> Option<usize> {
        self.sources.iter().position(|&s| s == x)
    }

    /// Worst deviation of the slice mass from 1 over all sources and times.
    pub fn max_mass_deviation(&self) -> f64 {
        self.data.iter().flatten().fold(0.0_f64, |d, slice| {
            d.max((total_mass(slice) - 1.0).abs())
        })
    }

    /// Sup over sources and times of the total-variation norm.
    pub fn sup_tv_norm(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0_f64, |s, slice| s.max(slice.tv_norm()))
    }
}

/// Slices eta_t(x, z; .) for a list of source pairs.
#[derive(Debug, Clone)]
pub struct SecondOrderField {
    pairs: Vec<(f64, f64)>,
    times: Vec<f64>,
    /// data[pair][time]
    data: Vec<Vec<GridDensity>>,
}

impl SecondOrderField {
    pub(crate) fn from_parts(
        pairs: Vec<(f64, f64)>,
        times: Vec<f64>,
        data: Vec<Vec<GridDensity>>,
    ) -> Self {
        SecondOrderField { pairs, times, data }
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, pair_idx: usize, time_idx: usize) -> &GridDensity {
        &self.data[pair_idx][time_idx]
    }

    /// Worst absolute slice mass (must differentiate to zero).
    pub fn max_mass_deviation(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0_f64, |d, s| d.max(total_mass(s).abs()))
    }
}

/// Assembled inhomogeneity of the second-order equation for one pair.
#[derive(Debug, Clone)]
pub struct SecondOrderSource {
    pub pair: (f64, f64),
    pub times: Vec<f64>,
    pub slices: Vec<GridDensity>,
}

fn substeps(path: &NoisePath, traj: &DensityTrajectory) -> Result<usize> {
    let ratio = path.dt() / traj.dt();
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(Error::InvalidParam(
            "trajectory dt must divide the noise step".into(),
        ));
    }
    Ok(k as usize)
}

struct StepCoefficients {
    drift: TestFunction,
    a_rem: Vec<f64>,
}

/// Dressed coefficients of step i, taken at the step's effective measure
/// (the stored endpoint density, which the fixed point of the base step
/// converged to).
fn step_coefficients(
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    traj: &DensityTrajectory,
    i: usize,
    w: f64,
    imex: bool,
) -> Result<StepCoefficients> {
    let s = noise.sigma_com * w;
    let a_dressed = if s == 0.0 { a.clone() } else { a.shifted(-s) };
    let a_bar = a_dressed.mean();
    let a_rem: Vec<f64> = if imex {
        a_dressed.values().iter().map(|v| v - a_bar).collect()
    } else {
        a_dressed.values().to_vec()
    };
    let drift = dressed_drift(spec, traj.density(i + 1), w, noise)?;
    Ok(StepCoefficients { drift, a_rem })
}

/// One linearized step: decay( base + dt * (homogeneous + coupling + source) )
/// with the coupling term iterated to the fixed point.
#[allow(clippy::too_many_arguments)]
fn linearized_step(
    field: &[f64],
    coeffs: &StepCoefficients,
    zeta_now: &GridDensity,
    zeta_next: &GridDensity,
    spec: &DriftSpec,
    noise: &CommonNoiseSpec,
    w: f64,
    p: StableParams,
    cfg: &SolverConfig,
    factors: &[f64],
    source: Option<&[f64]>,
    t: f64,
) -> Result<Vec<f64>> {
    let grid = *zeta_now.grid();
    let alpha = p.alpha();
    let homogeneous = crate::fracops::adjoint_rhs(
        field,
        coeffs.drift.values(),
        &coeffs.a_rem,
        &grid,
        alpha,
    );
    let finish = |coupling: Option<&[f64]>| -> Vec<f64> {
        let staged: Vec<f64> = (0..field.len())
            .map(|m| {
                let mut r = homogeneous[m];
                if let Some(c) = coupling {
                    r += c[m];
                }
                if let Some(q) = source {
                    r += q[m];
                }
                field[m] + cfg.dt * r
            })
            .collect();
        if cfg.imex {
            apply_decay(&staged, factors)
        } else {
            staged
        }
    };

    if !spec.depends_on_measure() {
        return Ok(finish(None));
    }

    let h = grid.spacing();
    let mut guess = GridDensity::from_values_signed(grid, field.to_vec());
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..cfg.picard_max_iter {
        let c = dressed_directional_first(spec, zeta_next, &guess, w, noise)?;
        let prod: Vec<f64> = zeta_now
            .values()
            .iter()
            .zip(c.values())
            .map(|(z, cv)| z * cv)
            .collect();
        let dprod = spectral::derivative(&prod, grid.half_width());
        let coupling: Vec<f64> = dprod.iter().map(|v| -v).collect();
        let out = finish(Some(&coupling));
        if let Some(pv) = &prev {
            if rel_l1(&out, pv, h) < cfg.picard_tol {
                return Ok(out);
            }
        }
        guess = GridDensity::from_values_signed(grid, out.clone());
        prev = Some(out);
    }
    Err(Error::NoConvergence {
        t,
        residual: f64::NAN,
        iters: cfg.picard_max_iter,
    })
}

/// Solve the first-order sensitivity field for the given source points
/// along a frozen trajectory (noise-removed coordinates).
#[allow(clippy::too_many_arguments)]
pub fn solve_xi(
    x_sources: &[f64],
    zeta_traj: &DensityTrajectory,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<FirstOrderField> {
    zeta_traj.grid().check_same(a.grid())?;
    if (zeta_traj.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidParam(
            "solver config dt must match the trajectory dt".into(),
        ));
    }
    let per = substeps(path, zeta_traj)?;
    let grid = *zeta_traj.grid();
    let total = zeta_traj.len() - 1;
    let factors = decay_factors(&grid, a.mean(), p.alpha(), cfg.dt);

    let mut data = Vec::with_capacity(x_sources.len());
    for &x in x_sources {
        let mut slice = dirac_approx(&grid, x)?;
        let mut history = Vec::with_capacity(total + 1);
        history.push(slice.clone());
        for i in 0..total {
            let w = path.value(i / per);
            let coeffs = step_coefficients(spec, a, noise, zeta_traj, i, w, cfg.imex)?;
            let t = i as f64 * cfg.dt;
            let out = linearized_step(
                slice.values(),
                &coeffs,
                zeta_traj.density(i),
                zeta_traj.density(i + 1),
                spec,
                noise,
                w,
                p,
                cfg,
                &factors,
                None,
                t,
            )?;
            slice = GridDensity::from_values_signed(grid, out);
            history.push(slice.clone());
        }
        data.push(history);
    }
    Ok(FirstOrderField {
        sources: x_sources.to_vec(),
        times: zeta_traj.times().to_vec(),
        data,
    })
}

/// Density-form source of the second-order equation at one time:
/// q = -d/dy [ xi_x c_z + xi_z c_x + zeta d2 ], where c_x, c_z are the
/// dressed first directional derivatives in the directions xi_x, xi_z and
/// d2 the dressed second directional derivative. Integrates to zero.
#[allow(clippy::too_many_arguments)]
pub fn assemble_q(
    spec: &DriftSpec,
    zeta_measure: &GridDensity,
    zeta_transport: &GridDensity,
    xi_x: &GridDensity,
    xi_z: &GridDensity,
    w: f64,
    noise: &CommonNoiseSpec,
) -> Result<GridDensity> {
    let grid = *zeta_measure.grid();
    let c_x = dressed_directional_first(spec, zeta_measure, xi_x, w, noise)?;
    let c_z = dressed_directional_first(spec, zeta_measure, xi_z, w, noise)?;
    let d2 = dressed_directional_second(spec, xi_x, xi_z, w, noise)?;
    let m: Vec<f64> = (0..grid.n_points())
        .map(|j| {
            xi_x.values()[j] * c_z.values()[j]
                + xi_z.values()[j] * c_x.values()[j]
                + zeta_transport.values()[j] * d2.values()[j]
        })
        .collect();
    let dm = spectral::derivative(&m, grid.half_width());
    Ok(GridDensity::from_values_signed(
        grid,
        dm.iter().map(|v| -v).collect(),
    ))
}

/// Solve the second-order sensitivity field for the given source pairs.
/// Requires xi slices for every source appearing in a pair; eta starts
/// from zero.
#[allow(clippy::too_many_arguments)]
pub fn solve_eta(
    pairs: &[(f64, f64)],
    xi_field: &FirstOrderField,
    zeta_traj: &DensityTrajectory,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<SecondOrderField> {
    if (zeta_traj.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidParam(
            "solver config dt must match the trajectory dt".into(),
        ));
    }
    let per = substeps(path, zeta_traj)?;
    let grid = *zeta_traj.grid();
    let total = zeta_traj.len() - 1;
    let factors = decay_factors(&grid, a.mean(), p.alpha(), cfg.dt);

    let mut data = Vec::with_capacity(pairs.len());
    for &(x, z) in pairs {
        let xi_x_idx = xi_field.source_index(x).ok_or_else(|| {
            Error::Domain(format!("no xi slices for source x = {x}"))
        })?;
        let xi_z_idx = xi_field.source_index(z).ok_or_else(|| {
            Error::Domain(format!("no xi slices for source z = {z}"))
        })?;

        let mut slice = GridDensity::from_values_signed(grid, vec![0.0; grid.n_points()]);
        let mut history = Vec::with_capacity(total + 1);
        history.push(slice.clone());
        for i in 0..total {
            let w = path.value(i / per);
            let coeffs = step_coefficients(spec, a, noise, zeta_traj, i, w, cfg.imex)?;
            let q = assemble_q(
                spec,
                zeta_traj.density(i + 1),
                zeta_traj.density(i),
                xi_field.slice(xi_x_idx, i),
                xi_field.slice(xi_z_idx, i),
                w,
                noise,
            )?;
            let t = i as f64 * cfg.dt;
            let out = linearized_step(
                slice.values(),
                &coeffs,
                zeta_traj.density(i),
                zeta_traj.density(i + 1),
                spec,
                noise,
                w,
                p,
                cfg,
                &factors,
                Some(q.values()),
                t,
            )?;
            slice = GridDensity::from_values_signed(grid, out);
            history.push(slice.clone());
        }
        data.push(history);
    }
    Ok(SecondOrderField {
        pairs: pairs.to_vec(),
        times: zeta_traj.times().to_vec(),
        data,
    })
}

/// Backward dual equation along the frozen trajectory, from the terminal
/// condition at step `t_from` down to time zero. The discrete recursion is
/// the exact adjoint of the homogeneous forward step, so the pairing
/// (f_t, xi_t) is conserved to roundoff when the coupling vanishes.
#[allow(clippy::too_many_arguments)]
pub fn solve_dual_backward(
    f_terminal: &TestFunction,
    zeta_traj: &DensityTrajectory,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
    t_from: usize,
) -> Result<TestFunction> {
    if t_from >= zeta_traj.len() {
        return Err(Error::Domain(format!(
            "t_from = {t_from} beyond trajectory length {}",
            zeta_traj.len()
        )));
    }
    let per = substeps(path, zeta_traj)?;
    let grid = *zeta_traj.grid();
    let factors = decay_factors(&grid, a.mean(), p.alpha(), cfg.dt);
    let alpha = p.alpha();

    let mut f = f_terminal.values().to_vec();
    for i in (0..t_from).rev() {
        let w = path.value(i / per);
        let coeffs = step_coefficients(spec, a, noise, zeta_traj, i, w, cfg.imex)?;
        let smoothed = if cfg.imex { apply_decay(&f, &factors) } else { f.clone() };
        let df = spectral::derivative(&smoothed, grid.half_width());
        let lf = spectral::frac_power(&smoothed, grid.half_width(), alpha);
        f = (0..f.len())
            .map(|m| {
                smoothed[m]
                    + cfg.dt * (coeffs.drift.values()[m] * df[m] - coeffs.a_rem[m] * lf[m])
            })
            .collect();
    }
    Ok(TestFunction::new(grid, f)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformityReport {
    pub seeds: Vec<u64>,
    pub sup_tv_per_seed: Vec<f64>,
    pub max_min_ratio: f64,
}

/// Re-solve the trajectory and xi field under several noise seeds and
/// compare the sup total-variation norms of the slices; the max/min ratio
/// across seeds probes how uniform in the noise the bounds are.
#[allow(clippy::too_many_arguments)]
pub fn uniformity_probe(
    y: &GridDensity,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
    horizon: f64,
    noise_steps: usize,
    sources: &[f64],
    seeds: &[u64],
) -> Result<UniformityReport> {
    if seeds.len() < 3 {
        return Err(Error::InvalidParam("uniformity probe needs at least 3 seeds".into()));
    }
    let mut sups = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let path = sample_brownian_path(horizon, noise_steps, seed)?;
        let traj = crate::pde::solve_zeta(y, &path, spec, a, noise, p, cfg)?;
        let xi = solve_xi(sources, &traj, &path, spec, a, noise, p, cfg)?;
        sups.push(xi.sup_tv_norm());
    }
    let max = sups.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = sups.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(UniformityReport {
        seeds: seeds.to_vec(),
        sup_tv_per_seed: sups,
        max_min_ratio: max / min.max(1e-300),
    })
}

/// Snap sensitivity sources to cell centers so the finite-difference
/// surrogate perturbs exactly the same cells.
pub fn snap_sources(grid: &Grid1D, sources: &[f64]) -> Vec<f64> {
    sources.iter().map(|&x| grid.snap(x)).collect()
}
