//! End-to-end pathwise solution of the measure equation with common noise,
//! and a direct Euler-Maruyama discretization of the unreduced equation
//! for cross-validation.
//!
//! The reference route removes the noise by the characteristics transform,
//! solves the deterministic equation, and shifts the result back; the
//! shifts are exact, so the noise costs nothing in stability. The direct
//! route steps the original equation with the explicit noise-gradient term
//! and the matching second-order correction, and exists to confirm that
//! both forms converge to the same pathwise limit under refinement.

use serde::Serialize;

use crate::characteristics::{transform_from_zeta, CommonNoiseSpec};
use crate::drift::{eval_drift, DriftSpec};
use crate::error::{Error, Result};
use crate::fracops::{adjoint_rhs, ScaleField};
use crate::grid::{l1_distance, total_mass, GridDensity};
use crate::pde::{solve_zeta, DensityTrajectory, SolverConfig, StepDiagnostics};
use crate::spectral;
use crate::stable::{sample_brownian_path, NoisePath, StableParams};

/// Solve the measure equation along one noise path via the
/// characteristics route; returns the trajectory in the original
/// (noise-carrying) coordinates.
pub fn solve_spde(
    y: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<DensityTrajectory> {
    let zeta = solve_zeta(y, path, spec, a, noise, p, cfg)?;
    let per = (path.dt() / cfg.dt).round() as usize;
    let times = zeta.times().to_vec();
    let mut densities = Vec::with_capacity(zeta.len());
    let mut diagnostics = Vec::with_capacity(zeta.len());
    for i in 0..zeta.len() {
        let w = path.value(i / per.max(1));
        let mu = transform_from_zeta(zeta.density(i), w, noise);
        diagnostics.push(StepDiagnostics {
            time: times[i],
            mass: total_mass(&mu),
            min_value: mu.min_value(),
            tv_norm: mu.tv_norm(),
            picard_iters: zeta.diagnostics()[i].picard_iters,
        });
        densities.push(mu);
    }
    let mut traj = DensityTrajectory::from_parts(times, densities, diagnostics, cfg.dt);
    traj.set_noise_seed(Some(path.seed()));
    Ok(traj)
}

/// One weak Euler-Maruyama step of the unreduced equation:
/// v <- v + dt (L* v + (1/2) sigma^2 v'') - dW sigma v'.
pub fn direct_ito_step(
    v: &GridDensity,
    dw: f64,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<GridDensity> {
    v.grid().check_same(a.grid())?;
    let grid = *v.grid();
    let b = eval_drift(spec, v)?;
    let adj = adjoint_rhs(v.values(), b.values(), a.values(), &grid, p.alpha());
    let second = spectral::second_derivative(v.values(), grid.half_width());
    let first = spectral::derivative(v.values(), grid.half_width());
    let sig = noise.sigma_com;
    let values = (0..grid.n_points())
        .map(|m| {
            v.values()[m] + cfg.dt * (adj[m] + 0.5 * sig * sig * second[m]) - dw * sig * first[m]
        })
        .collect();
    Ok(GridDensity::from_values_signed(grid, values))
}

/// Run the direct scheme along a full path, one step per noise increment.
pub fn solve_direct_ito(
    y: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
) -> Result<DensityTrajectory> {
    let step_cfg = cfg.with_dt(path.dt());
    let mut current = y.clone();
    let mut times = vec![0.0];
    let mut densities = vec![current.clone()];
    let mut diagnostics = vec![StepDiagnostics {
        time: 0.0,
        mass: total_mass(y),
        min_value: y.min_value(),
        tv_norm: y.tv_norm(),
        picard_iters: 0,
    }];
    for i in 0..path.n_steps() {
        current = direct_ito_step(
            &current,
            path.increments()[i],
            spec,
            a,
            noise,
            p,
            &step_cfg,
        )?;
        let t = (i + 1) as f64 * path.dt();
        times.push(t);
        diagnostics.push(StepDiagnostics {
            time: t,
            mass: total_mass(&current),
            min_value: current.min_value(),
            tv_norm: current.tv_norm(),
            picard_iters: 1,
        });
        densities.push(current.clone());
    }
    let mut traj = DensityTrajectory::from_parts(times, densities, diagnostics, path.dt());
    traj.set_noise_seed(Some(path.seed()));
    Ok(traj)
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodComparison {
    pub seed: u64,
    pub dts: Vec<f64>,
    pub terminal_l1: Vec<f64>,
    pub factors: Vec<f64>,
    /// Geometric mean of the per-halving contraction factors.
    pub mean_factor: f64,
}

/// Compare the characteristics route against the direct scheme on one
/// Brownian path refined dyadically `refinements` times; both solvers run
/// at the path resolution of each level.
#[allow(clippy::too_many_arguments)]
pub fn compare_methods(
    y: &GridDensity,
    seed: u64,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    cfg: &SolverConfig,
    horizon: f64,
    refinements: usize,
) -> Result<MethodComparison> {
    if refinements < 2 {
        return Err(Error::InvalidParam("need at least 2 refinement levels".into()));
    }
    let base_steps = (horizon / cfg.dt).round() as usize;
    if base_steps == 0 {
        return Err(Error::InvalidParam("horizon shorter than one step".into()));
    }
    let mut path = sample_brownian_path(horizon, base_steps, seed)?;
    let mut dts = Vec::with_capacity(refinements);
    let mut terminal_l1 = Vec::with_capacity(refinements);
    for level in 0..refinements {
        if level > 0 {
            path = path.refine();
        }
        let level_cfg = cfg.with_dt(path.dt());
        let reference = solve_spde(y, &path, spec, a, noise, p, &level_cfg)?;
        let direct = solve_direct_ito(y, &path, spec, a, noise, p, &level_cfg)?;
        dts.push(path.dt());
        terminal_l1.push(l1_distance(
            reference.final_density(),
            direct.final_density(),
        )?);
    }
    let factors: Vec<f64> = terminal_l1
        .windows(2)
        .map(|w| w[0] / w[1].max(1e-300))
        .collect();
    let mean_factor = (terminal_l1[0] / terminal_l1[refinements - 1].max(1e-300))
        .powf(1.0 / (refinements - 1) as f64);
    Ok(MethodComparison {
        seed,
        dts,
        terminal_l1,
        factors,
        mean_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::stable::stable_kernel;

    fn grid() -> Grid1D {
        Grid1D::new(20.0, 256).unwrap()
    }

    #[test]
    fn degenerate_noise_reduces_to_zeta_solution() {
        let g = grid();
        let p = StableParams::new(1.5).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let y = GridDensity::gaussian(g, 0.0, 2.0, 1.0).unwrap();
        let path = sample_brownian_path(0.25, 25, 3).unwrap();
        let noise = CommonNoiseSpec::off();
        let cfg = SolverConfig::new(0.01).unwrap();
        let mu = solve_spde(&y, &path, &DriftSpec::zero(), &a, &noise, p, &cfg).unwrap();
        let zeta = solve_zeta(&y, &path, &DriftSpec::zero(), &a, &noise, p, &cfg).unwrap();
        assert_eq!(
            mu.final_density().values(),
            zeta.final_density().values()
        );
    }

    #[test]
    fn constant_coefficients_match_kernel_and_shift() {
        let g = grid();
        let p = StableParams::new(1.5).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let y = GridDensity::gaussian(g, 0.0, 2.0, 1.0).unwrap();
        let t = 0.5;
        let path = sample_brownian_path(t, 125, 21).unwrap();
        let noise = CommonNoiseSpec::new(1.0).unwrap();
        let cfg = SolverConfig::new(0.004).unwrap();
        let mu = solve_spde(&y, &path, &DriftSpec::zero(), &a, &noise, p, &cfg).unwrap();
        let kernel = stable_kernel(&g, t, 1.0, p).unwrap();
        let smoothed = kernel.convolve(&y).unwrap();
        let reference =
            crate::characteristics::shift_density(&smoothed, noise.sigma_com * path.value(125));
        let err = l1_distance(mu.final_density(), &reference).unwrap();
        assert!(err < 2e-4, "pathwise closed-form error {err}");
        // mass preserved per path
        assert!(mu.max_mass_drift() < 1e-10);
    }

    #[test]
    fn ito_step_conserves_mass_and_single_mode_recursion() {
        let g = grid();
        let p = StableParams::new(1.5).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let noise = CommonNoiseSpec::new(1.0).unwrap();
        let cfg = SolverConfig::new(0.001).unwrap();

        let k = std::f64::consts::PI / g.half_width() * 5.0;
        let v = GridDensity::from_fn(g, true, |x| 1.0 / 40.0 + 0.2 * (k * x).cos()).unwrap();
        let dw = 0.0234;
        let out = direct_ito_step(&v, dw, &DriftSpec::zero(), &a, &noise, p, &cfg).unwrap();
        assert!((total_mass(&out) - total_mass(&v)).abs() < 1e-12);

        // analytic affine update of the single cosine mode
        let damp = 1.0 - cfg.dt * (k.powf(1.5) + 0.5 * k * k);
        let mut err = 0.0_f64;
        for (m, x) in g.centers().enumerate() {
            let expect = 1.0 / 40.0 + 0.2 * damp * (k * x).cos() + 0.2 * dw * k * (k * x).sin();
            err = err.max((out.values()[m] - expect).abs());
        }
        assert!(err < 1e-12, "single-mode recursion error {err}");
    }

    #[test]
    fn deterministic_limit_shrinks_with_dt() {
        let g = grid();
        let p = StableParams::new(1.5).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let y = GridDensity::gaussian(g, 0.0, 2.0, 1.0).unwrap();
        let cfg = SolverConfig::new(0.004).unwrap();
        let report = compare_methods(
            &y,
            5,
            &DriftSpec::zero(),
            &a,
            &CommonNoiseSpec::off(),
            p,
            &cfg,
            0.5,
            3,
        )
        .unwrap();
        for f in &report.factors {
            assert!(*f > 1.0, "no shrinkage: {:?}", report.terminal_l1);
        }
    }

    #[test]
    fn pathwise_determinism() {
        let g = grid();
        let p = StableParams::new(1.5).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let y = GridDensity::gaussian(g, 0.0, 2.0, 1.0).unwrap();
        let noise = CommonNoiseSpec::new(1.0).unwrap();
        let cfg = SolverConfig::new(0.01).unwrap();
        let path = sample_brownian_path(0.25, 25, 42).unwrap();
        let m1 = solve_spde(&y, &path, &DriftSpec::zero(), &a, &noise, p, &cfg).unwrap();
        let m2 = solve_spde(&y, &path, &DriftSpec::zero(), &a, &noise, p, &cfg).unwrap();
        assert_eq!(m1.final_density().values(), m2.final_density().values());

        // identical method against itself
        assert_eq!(
            l1_distance(m1.final_density(), m2.final_density()).unwrap(),
            0.0
        );
    }

    #[test]
    fn refusal_below_two_levels() {
        let g = grid();
        let p = StableParams::new(1.5).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let y = GridDensity::gaussian(g, 0.0, 2.0, 1.0).unwrap();
        let cfg = SolverConfig::new(0.01).unwrap();
        assert!(compare_methods(
            &y,
            1,
            &DriftSpec::zero(),
            &a,
            &CommonNoiseSpec::off(),
            p,
            &cfg,
            0.1,
            1
        )
        .is_err());
    }
}
