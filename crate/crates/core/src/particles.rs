//! Interacting N-particle system with common Brownian noise and
//! idiosyncratic stable jumps, plus empirical-measure metrics against the
//! grid solution.
//!
//! Each particle owns a named randomness stream (initial position and
//! jumps), so enabling, removing, or permuting particles never shifts
//! another particle's draws. The drift sees a kernel-smoothed empirical
//! density; accumulation runs over value-sorted positions, which makes the
//! smoothed field invariant under particle relabeling down to the last bit.

use rand::Rng;

use crate::characteristics::CommonNoiseSpec;
use crate::drift::{eval_drift, DriftSpec};
use crate::error::{Error, Result};
use crate::fracops::ScaleField;
use crate::grid::{total_mass, Grid1D, GridDensity};
use crate::rng;
use crate::stable::{sample_stable_increment, NoisePath, StableParams};

/// Particle positions at one time.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub positions: Vec<f64>,
    pub time: f64,
}

impl ParticleState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions wrapped into [-L, L) and sorted.
    pub fn wrapped_sorted(&self, grid: &Grid1D) -> Vec<f64> {
        let mut xs: Vec<f64> = self.positions.iter().map(|&x| grid.wrap(x)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("index,position\n");
        for (i, x) in self.positions.iter().enumerate() {
            out.push_str(&format!("{i},{x}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Inverse-CDF sample from a grid density (piecewise linear inside cells).
fn inverse_cdf_sample(y: &GridDensity, u: f64) -> f64 {
    let grid = y.grid();
    let h = grid.spacing();
    let mass = total_mass(y);
    let target = u * mass;
    let mut cum = 0.0;
    for (m, v) in y.values().iter().enumerate() {
        let cell = v.max(0.0) * h;
        if cum + cell >= target {
            let frac = if cell > 0.0 { (target - cum) / cell } else { 0.5 };
            return grid.center(m) - h / 2.0 + frac * h;
        }
        cum += cell;
    }
    grid.center(grid.n_points() - 1)
}

/// Gaussian kernel density estimate on the grid, renormalized to unit
/// mass. Differences are wrapped to the nearest periodic image.
pub fn empirical_density(state: &ParticleState, grid: &Grid1D, bandwidth: f64) -> Result<GridDensity> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidParam(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if state.is_empty() {
        return Err(Error::Domain("empty particle state".into()));
    }
    let xs = state.wrapped_sorted(grid);
    let n = grid.n_points();
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * bandwidth * xs.len() as f64);
    let mut values = vec![0.0; n];
    for (m, v) in values.iter_mut().enumerate() {
        let xc = grid.center(m);
        let mut acc = 0.0;
        for &x in &xs {
            let r = grid.wrap_diff(xc, x) / bandwidth;
            acc += (-0.5 * r * r).exp();
        }
        *v = norm * acc;
    }
    let mass = grid.spacing() * values.iter().sum::<f64>();
    for v in values.iter_mut() {
        *v /= mass;
    }
    GridDensity::new(*grid, values, false)
}

/// Reference-rate bandwidth 1.06 sigma N^{-1/5} from the wrapped sample.
pub fn reference_bandwidth(state: &ParticleState, grid: &Grid1D) -> f64 {
    let xs = state.wrapped_sorted(grid);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (1.06 * var.sqrt() * n.powf(-0.2)).max(grid.spacing())
}

fn interp(values: &[f64], grid: &Grid1D, x: f64) -> f64 {
    let n = grid.n_points();
    let h = grid.spacing();
    let u = (grid.wrap(x) + grid.half_width()) / h;
    let i = u.floor() as usize % n;
    let frac = u - u.floor();
    values[i] * (1.0 - frac) + values[(i + 1) % n] * frac
}

/// Simulate the particle system with explicit per-particle stream ids.
/// Returns the state at every noise-step boundary.
#[allow(clippy::too_many_arguments)]
pub fn simulate_particles_with_ids(
    ids: &[u64],
    y: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    idio_seed: u64,
) -> Result<Vec<ParticleState>> {
    if ids.is_empty() {
        return Err(Error::InvalidParam("need at least one particle".into()));
    }
    y.grid().check_same(a.grid())?;
    let grid = *y.grid();
    let dt = path.dt();
    let inv_alpha = 1.0 / p.alpha();

    let mut streams: Vec<_> = ids
        .iter()
        .map(|&id| rng::stream(idio_seed, &rng::particle_label(idio_seed, id)))
        .collect();

    let mut positions: Vec<f64> = streams
        .iter_mut()
        .map(|s| inverse_cdf_sample(y, s.gen::<f64>()))
        .collect();

    let mut states = Vec::with_capacity(path.n_steps() + 1);
    states.push(ParticleState {
        positions: positions.clone(),
        time: 0.0,
    });

    for step in 0..path.n_steps() {
        let dw = path.increments()[step];
        let state = ParticleState {
            positions: positions.clone(),
            time: step as f64 * dt,
        };
        let drift_grid = if spec.depends_on_measure() {
            let bw = reference_bandwidth(&state, &grid);
            let emp = empirical_density(&state, &grid, bw)?;
            Some(eval_drift(spec, &emp)?)
        } else {
            Some(eval_drift(spec, &GridDensity::zero(grid))?)
        };
        let b = drift_grid.expect("drift field present");

        for (i, x) in positions.iter_mut().enumerate() {
            let bx = interp(b.values(), &grid, *x);
            let ax = interp(a.values(), &grid, *x);
            let jump = sample_stable_increment(p, dt, &mut streams[i])?;
            *x += bx * dt + noise.sigma_com * dw + ax.powf(inv_alpha) * jump;
        }
        states.push(ParticleState {
            positions: positions.clone(),
            time: (step + 1) as f64 * dt,
        });
    }
    Ok(states)
}

/// Simulate N particles with the default stream ids 0..N.
#[allow(clippy::too_many_arguments)]
pub fn simulate_particles(
    n: usize,
    y: &GridDensity,
    path: &NoisePath,
    spec: &DriftSpec,
    a: &ScaleField,
    noise: &CommonNoiseSpec,
    p: StableParams,
    idio_seed: u64,
) -> Result<Vec<ParticleState>> {
    let ids: Vec<u64> = (0..n as u64).collect();
    simulate_particles_with_ids(&ids, y, path, spec, a, noise, p, idio_seed)
}

/// Wasserstein-1 distance between the empirical measure and a grid
/// density, by matching empirical order statistics against the density's
/// quantile function (both normalized).
pub fn chaos_distance(state: &ParticleState, pde_density: &GridDensity) -> f64 {
    let grid = pde_density.grid();
    let xs = state.wrapped_sorted(grid);
    let n = xs.len();
    let h = grid.spacing();
    let mass = total_mass(pde_density).max(1e-300);

    // cumulative mass at cell right edges
    let mut cdf = Vec::with_capacity(grid.n_points());
    let mut cum = 0.0;
    for v in pde_density.values() {
        cum += v.max(0.0) * h / mass;
        cdf.push(cum);
    }

    let quantile = |q: f64| -> f64 {
        let mut lo = 0usize;
        let mut hi = cdf.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if cdf[mid] < q {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let upper = cdf[lo];
        let lower = if lo == 0 { 0.0 } else { cdf[lo - 1] };
        let frac = if upper > lower { (q - lower) / (upper - lower) } else { 0.5 };
        grid.center(lo) - h / 2.0 + frac * h
    };

    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let q = (i as f64 + 0.5) / n as f64;
            (x - quantile(q)).abs()
        })
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{BaseDrift, DifferenceKernel, DriftTerm, InteractionKernel, KernelOrder};
    use crate::grid::{dirac_approx, l1_distance};
    use crate::stable::sample_brownian_path;
    use rand_distr::Distribution;

    fn grid() -> Grid1D {
        Grid1D::new(10.0, 256).unwrap()
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = grid();
        let y = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let p = StableParams::new(1.5).unwrap();
        let path = sample_brownian_path(0.1, 10, 5).unwrap();
        let noise = CommonNoiseSpec::new(0.5).unwrap();
        let spec = DriftSpec::measure_independent(BaseDrift::Zero);
        let s1 = simulate_particles(50, &y, &path, &spec, &a, &noise, p, 7).unwrap();
        let s2 = simulate_particles(50, &y, &path, &spec, &a, &noise, p, 7).unwrap();
        for (a1, a2) in s1.iter().zip(s2.iter()) {
            assert_eq!(a1.positions, a2.positions);
        }
    }

    #[test]
    fn relabeling_permutes_trajectories_exactly() {
        let g = grid();
        let y = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let a = ScaleField::constant(g, 1.0, 2.0).unwrap();
        let p = StableParams::new(1.5).unwrap();
        let path = sample_brownian_path(0.1, 10, 5).unwrap();
        let noise = CommonNoiseSpec::new(0.5).unwrap();
        let spec = DriftSpec {
            base: BaseDrift::Zero,
            terms: vec![DriftTerm {
                weight: 0.5,
                kernel: InteractionKernel {
                    order: KernelOrder::One,
                    kernel: DifferenceKernel::Gaussian { width: 1.0 },
                },
            }],
        };
        let ids: Vec<u64> = (0..40).collect();
        let rev: Vec<u64> = (0..40).rev().collect();
        let base = simulate_particles_with_ids(&ids, &y, &path, &spec, &a, &noise, p, 3).unwrap();
        let perm = simulate_particles_with_ids(&rev, &y, &path, &spec, &a, &noise, p, 3).unwrap();
        for (sb, sp) in base.iter().zip(perm.iter()) {
            let mut reversed = sp.positions.clone();
            reversed.reverse();
            assert_eq!(sb.positions, reversed);
        }
    }

    #[test]
    fn empirical_density_mass_and_shape() {
        let g = grid();
        let state = ParticleState {
            positions: vec![g.center(128)],
            time: 0.0,
        };
        let d = empirical_density(&state, &g, g.spacing()).unwrap();
        assert!((total_mass(&d) - 1.0).abs() < 1e-12);
        // unimodal, centered at the particle
        let max_idx = d
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_idx, 128);
        assert!(empirical_density(&state, &g, 0.0).is_err());
    }

    #[test]
    fn kde_recovers_a_gaussian_sample() {
        let g = grid();
        let mut gen = crate::rng::stream(9, "kde-test");
        let normal = rand_distr::Normal::new(0.0_f64, 1.0).unwrap();
        let n = 10_000;
        let positions: Vec<f64> = (0..n).map(|_| normal.sample(&mut gen)).collect();
        let state = ParticleState { positions, time: 0.0 };
        let bw = 1.06 * 1.0 * (n as f64).powf(-0.2);
        let kde = empirical_density(&state, &g, bw).unwrap();
        let truth = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let err = l1_distance(&kde, &truth).unwrap();
        assert!(err < 0.05, "KDE L1 error {err}");
    }

    #[test]
    fn chaos_distance_basics() {
        let g = grid();
        let c = g.center(100);
        let state = ParticleState {
            positions: vec![c; 64],
            time: 0.0,
        };
        let same = dirac_approx(&g, c).unwrap();
        assert!(chaos_distance(&state, &same) < g.spacing());

        let apart = dirac_approx(&g, c + 1.0).unwrap();
        let d = chaos_distance(&state, &apart);
        assert!((d - 1.0).abs() < g.spacing(), "transport cost {d}");
    }

    #[test]
    fn empirical_process_rate_for_exact_samples() {
        let g = grid();
        let truth = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let n = 4000;
        let mut dists = Vec::new();
        for seed in 0..5u64 {
            let mut gen = crate::rng::stream(seed, "chaos-rate");
            let positions: Vec<f64> = (0..n)
                .map(|_| inverse_cdf_sample(&truth, gen.gen::<f64>()))
                .collect();
            let state = ParticleState { positions, time: 0.0 };
            dists.push(chaos_distance(&state, &truth));
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = dists[2];
        assert!(
            median < 3.0 / (n as f64).sqrt(),
            "median W1 {median} above the empirical-process band"
        );
    }

    #[test]
    fn common_noise_moves_the_median() {
        let g = grid();
        let y = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        // smallest admissible idiosyncratic scale for M = 10
        let a = ScaleField::constant(g, 0.1, 10.0).unwrap();
        let p = StableParams::new(1.5).unwrap();
        let t = 0.25;
        let path = sample_brownian_path(t, 25, 33).unwrap();
        let noise = CommonNoiseSpec::new(1.0).unwrap();
        let spec = DriftSpec::zero();
        let n = 4000;
        let states = simulate_particles(n, &y, &path, &spec, &a, &noise, p, 11).unwrap();
        let median = |s: &ParticleState| {
            let xs = s.wrapped_sorted(&g);
            xs[xs.len() / 2]
        };
        let shift = median(states.last().unwrap()) - median(&states[0]);
        let expect = noise.sigma_com * path.value(path.n_steps());
        assert!(
            (shift - expect).abs() < 0.15,
            "median moved {shift}, expected {expect}"
        );
    }
}
