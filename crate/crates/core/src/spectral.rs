//! FFT workspace shared by all spectral operators.
//!
//! Plans are cached per grid size behind a mutex; the transforms themselves
//! are pure functions of their input buffers. Forward transforms are
//! unnormalized, the inverse applies the 1/n factor and keeps the real part
//! (all physical multipliers preserve conjugate symmetry up to the Nyquist
//! mode, whose imaginary leakage is discarded).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Spectral {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Spectral>>>> = OnceLock::new();

impl Spectral {
    pub fn get(n: usize) -> Arc<Spectral> {
        let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        map.entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Spectral {
                    n,
                    fwd: planner.plan_fft_forward(n),
                    inv: planner.plan_fft_inverse(n),
                })
            })
            .clone()
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut spectrum);
        let scale = 1.0 / self.n as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }
}

/// Signed mode index for FFT bin `j` of an `n`-point transform:
/// 0, 1, ..., n/2-1, -n/2, ..., -1.
pub(crate) fn signed_index(j: usize, n: usize) -> i64 {
    if j <= n / 2 - 1 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Apply a real multiplier `m(k)` in Fourier space, `k` the physical
/// frequency of each mode.
pub(crate) fn apply_real_multiplier<F>(values: &[f64], half_width: f64, m: F) -> Vec<f64>
where
    F: Fn(f64) -> f64,
{
    let n = values.len();
    let sp = Spectral::get(n);
    let mut spectrum = sp.forward(values);
    let base = std::f64::consts::PI / half_width;
    for (j, c) in spectrum.iter_mut().enumerate() {
        let k = base * signed_index(j, n) as f64;
        *c *= m(k);
    }
    sp.inverse_real(spectrum)
}

/// Spectral first derivative. The unpaired Nyquist mode is dropped, the
/// standard convention for odd-order derivatives on even grids.
pub(crate) fn derivative(values: &[f64], half_width: f64) -> Vec<f64> {
    let n = values.len();
    let sp = Spectral::get(n);
    let mut spectrum = sp.forward(values);
    let base = std::f64::consts::PI / half_width;
    for (j, c) in spectrum.iter_mut().enumerate() {
        if j == n / 2 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            let k = base * signed_index(j, n) as f64;
            *c *= Complex64::new(0.0, k);
        }
    }
    sp.inverse_real(spectrum)
}

/// Spectral second derivative (real multiplier -k^2, Nyquist kept).
pub(crate) fn second_derivative(values: &[f64], half_width: f64) -> Vec<f64> {
    apply_real_multiplier(values, half_width, |k| -k * k)
}

/// Fractional power |k|^alpha of the (negative) Laplacian.
pub(crate) fn frac_power(values: &[f64], half_width: f64, alpha: f64) -> Vec<f64> {
    apply_real_multiplier(values, half_width, |k| k.abs().powf(alpha))
}

/// Translate samples: output(x) = input(x - s), via phase multiplication.
/// Exact for band-limited data; preserves the mean (mass) identically.
pub(crate) fn shift(values: &[f64], half_width: f64, s: f64) -> Vec<f64> {
    if s == 0.0 {
        return values.to_vec();
    }
    let n = values.len();
    let sp = Spectral::get(n);
    let mut spectrum = sp.forward(values);
    let base = std::f64::consts::PI / half_width;
    for (j, c) in spectrum.iter_mut().enumerate() {
        let k = base * signed_index(j, n) as f64;
        *c *= Complex64::new(0.0, -k * s).exp();
    }
    sp.inverse_real(spectrum)
}

/// Periodic convolution of two sampled functions on the same grid:
/// (f * g)(x) = h Σ f(x - y_l) g(y_l), with the origin at x = 0
/// (grid midpoint). The (-1)^j phase recenters the circular convolution.
pub(crate) fn convolve(f: &[f64], g: &[f64], spacing: f64) -> Vec<f64> {
    let n = f.len();
    debug_assert_eq!(n, g.len());
    let sp = Spectral::get(n);
    let fa = sp.forward(f);
    let gb = sp.forward(g);
    let mut prod: Vec<Complex64> = fa
        .iter()
        .zip(gb.iter())
        .enumerate()
        .map(|(j, (a, b))| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            a * b * sign
        })
        .collect();
    for c in prod.iter_mut() {
        *c *= spacing;
    }
    sp.inverse_real(prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_sine_mode() {
        let n = 64;
        let l = 5.0;
        let k = 2.0 * std::f64::consts::PI / l; // mode j = 2
        let xs: Vec<f64> = (0..n).map(|m| -l + 2.0 * l * m as f64 / n as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| (k * x).sin()).collect();
        let d = derivative(&vals, l);
        for (m, &x) in xs.iter().enumerate() {
            assert!((d[m] - k * (k * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_is_exact_on_modes() {
        let n = 128;
        let l = 3.0;
        let k = std::f64::consts::PI / l * 3.0;
        let xs: Vec<f64> = (0..n).map(|m| -l + 2.0 * l * m as f64 / n as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| (k * x).cos()).collect();
        let s = 0.4321;
        let shifted = shift(&vals, l, s);
        for (m, &x) in xs.iter().enumerate() {
            assert!((shifted[m] - (k * (x - s)).cos()).abs() < 1e-11);
        }
    }

    #[test]
    fn convolution_identity_with_discrete_delta() {
        let n = 64;
        let l = 4.0;
        let h = 2.0 * l / n as f64;
        let mut delta = vec![0.0; n];
        delta[n / 2] = 1.0 / h; // unit mass at x = 0
        let xs: Vec<f64> = (0..n).map(|m| -l + h * m as f64).collect();
        let g: Vec<f64> = xs.iter().map(|&x| (-x * x).exp()).collect();
        let conv = convolve(&delta, &g, h);
        for m in 0..n {
            assert!((conv[m] - g[m]).abs() < 1e-12);
        }
    }
}
