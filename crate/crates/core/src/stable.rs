//! Symmetric alpha-stable increments, Brownian paths, and the
//! constant-coefficient stable transition kernel.
//!
//! Normalization: an increment over dt has characteristic function
//! exp(-dt |u|^alpha), matching the spectral generator -|k|^alpha with unit
//! scale. Increments are produced by the polar construction (uniform angle
//! plus exponential) specialized to the symmetric case.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridDensity};
use crate::rng;
use crate::spectral::{signed_index, Spectral};

/// Stability index, strictly inside (1, 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    alpha: f64,
}

impl StableParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidParam(format!(
                "stability index must lie in the open interval (1, 2), got {alpha}"
            )));
        }
        Ok(StableParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// A sampled Brownian trajectory with its increments.
#[derive(Debug, Clone)]
pub struct NoisePath {
    horizon: f64,
    n_steps: usize,
    dt: f64,
    increments: Vec<f64>,
    values: Vec<f64>, // n_steps + 1 entries, values[0] = 0
    seed: u64,
    refinement_level: u32,
}

impl NoisePath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// W at step boundary i (0 <= i <= n_steps).
    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Path with W identically zero (degenerate common noise).
    pub fn zero(horizon: f64, n_steps: usize) -> Result<NoisePath> {
        if horizon <= 0.0 || n_steps == 0 {
            return Err(Error::InvalidParam("horizon and n_steps must be positive".into()));
        }
        Ok(NoisePath {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
            increments: vec![0.0; n_steps],
            values: vec![0.0; n_steps + 1],
            seed: 0,
            refinement_level: 0,
        })
    }

    /// Restriction to every m-th boundary (the same Brownian trajectory on
    /// a coarser clock). m must divide n_steps.
    pub fn subsample(&self, m: usize) -> Result<NoisePath> {
        if m == 0 || self.n_steps % m != 0 {
            return Err(Error::InvalidParam(format!(
                "subsample factor {m} must divide {} steps",
                self.n_steps
            )));
        }
        let values: Vec<f64> = (0..=self.n_steps / m).map(|i| self.values[i * m]).collect();
        let increments = values.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(NoisePath {
            horizon: self.horizon,
            n_steps: self.n_steps / m,
            dt: self.dt * m as f64,
            increments,
            values,
            seed: self.seed,
            refinement_level: self.refinement_level,
        })
    }

    /// Dyadic refinement: midpoints filled in by Brownian bridge, so the
    /// refined path agrees with this one at the coarse boundaries. The
    /// midpoint stream is derived from the path seed and target level.
    pub fn refine(&self) -> NoisePath {
        let level = self.refinement_level + 1;
        let mut gen = rng::stream(self.seed, &rng::bridge_label(self.seed, level));
        let n2 = 2 * self.n_steps;
        let dt2 = self.dt / 2.0;
        let mut values = Vec::with_capacity(n2 + 1);
        for i in 0..self.n_steps {
            let a = self.values[i];
            let b = self.values[i + 1];
            let z: f64 = StandardNormal.sample(&mut gen);
            let mid = 0.5 * (a + b) + (self.dt / 4.0).sqrt() * z;
            values.push(a);
            values.push(mid);
        }
        values.push(self.values[self.n_steps]);
        let increments = values.windows(2).map(|w| w[1] - w[0]).collect();
        NoisePath {
            horizon: self.horizon,
            n_steps: n2,
            dt: dt2,
            increments,
            values,
            seed: self.seed,
            refinement_level: level,
        }
    }
}

/// Sample a standard Brownian path on [0, T] with n_steps uniform steps.
/// Deterministic for a given seed.
pub fn sample_brownian_path(horizon: f64, n_steps: usize, seed: u64) -> Result<NoisePath> {
    if horizon <= 0.0 {
        return Err(Error::InvalidParam(format!("horizon must be positive, got {horizon}")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidParam("n_steps must be at least 1".into()));
    }
    let dt = horizon / n_steps as f64;
    let mut gen = rng::stream(seed, &rng::common_noise_label(seed));
    let sqrt_dt = dt.sqrt();
    let mut increments = Vec::with_capacity(n_steps);
    let mut values = Vec::with_capacity(n_steps + 1);
    values.push(0.0);
    let mut w = 0.0;
    for _ in 0..n_steps {
        let z: f64 = StandardNormal.sample(&mut gen);
        let dw = sqrt_dt * z;
        increments.push(dw);
        w += dw;
        values.push(w);
    }
    Ok(NoisePath {
        horizon,
        n_steps,
        dt,
        increments,
        values,
        seed,
        refinement_level: 0,
    })
}

/// One symmetric alpha-stable increment over dt, characteristic function
/// exp(-dt |u|^alpha). Polar construction: U uniform on (-pi/2, pi/2),
/// E exponential(1).
pub fn sample_stable_increment<R: Rng + ?Sized>(p: StableParams, dt: f64, gen: &mut R) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let alpha = p.alpha();
    let u: f64 = gen.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    let e: f64 = -(1.0 - gen.gen::<f64>()).ln();
    let x = (alpha * u).sin() / u.cos().powf(1.0 / alpha)
        * ((u * (1.0 - alpha)).cos() / e).powf((1.0 - alpha) / alpha);
    Ok(dt.powf(1.0 / alpha) * x)
}

/// Periodized stable transition kernel exp(-t a |k|^alpha) as a grid
/// density centered at x = 0; mass is exactly 1.
pub fn stable_kernel(grid: &Grid1D, t: f64, a_bar: f64, p: StableParams) -> Result<GridDensity> {
    if t < 0.0 {
        return Err(Error::InvalidParam(format!("time must be nonnegative, got {t}")));
    }
    if a_bar <= 0.0 {
        return Err(Error::InvalidParam(format!("scale must be positive, got {a_bar}")));
    }
    let n = grid.n_points();
    let h = grid.spacing();
    let mut delta = vec![0.0; n];
    delta[n / 2] = 1.0 / h;
    let sp = Spectral::get(n);
    let mut spectrum = sp.forward(&delta);
    let base = std::f64::consts::PI / grid.half_width();
    for (j, c) in spectrum.iter_mut().enumerate() {
        let k = base * signed_index(j, n) as f64;
        *c *= (-t * a_bar * k.abs().powf(p.alpha())).exp();
    }
    let values = sp.inverse_real(spectrum);
    Ok(GridDensity::from_values_signed(*grid, values))
}
