//! Periodic 1-D grid, densities and test functions living on it.
//!
//! The domain is [-L, L) with n uniform cells, cell centers at
//! x_m = -L + m h. Measures are represented by their density values per
//! cell; the rectangle rule is spectrally accurate for smooth periodic
//! data. Negative undershoots of nominally nonnegative densities are
//! tracked, never clamped, so that conservation identities stay exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral;

/// Relative tolerance for undershoot in nonnegative densities.
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// Uniform periodic grid on [-L, L).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    half_width: f64,
    n_points: usize,
    spacing: f64,
}

impl Grid1D {
    /// `n_points` must be a power of two, at least 8.
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "half_width must be positive and finite, got {half_width}"
            )));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidParam(format!(
                "n_points must be a power of two >= 8, got {n_points}"
            )));
        }
        Ok(Grid1D {
            half_width,
            n_points,
            spacing: 2.0 * half_width / n_points as f64,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Cell center x_m = -L + m h.
    pub fn center(&self, m: usize) -> f64 {
        -self.half_width + self.spacing * m as f64
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |m| self.center(m))
    }

    /// Physical frequency of FFT bin j (period 2L).
    pub fn frequency(&self, j: usize) -> f64 {
        std::f64::consts::PI / self.half_width * spectral::signed_index(j, self.n_points) as f64
    }

    /// Wrap a point into [-L, L).
    pub fn wrap(&self, x: f64) -> f64 {
        let period = 2.0 * self.half_width;
        let mut y = (x + self.half_width).rem_euclid(period) - self.half_width;
        if y >= self.half_width {
            y -= period;
        }
        y
    }

    /// Signed periodic difference mapped into [-L, L).
    pub fn wrap_diff(&self, a: f64, b: f64) -> f64 {
        self.wrap(a - b)
    }

    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.half_width == other.half_width && self.n_points == other.n_points
    }

    pub fn check_same(&self, other: &Grid1D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(
                self.half_width,
                self.n_points,
                other.half_width,
                other.n_points,
            ))
        }
    }

    /// Nearest cell center to x (wrapped).
    pub fn snap(&self, x: f64) -> f64 {
        let u = (self.wrap(x) + self.half_width) / self.spacing;
        let m = (u.round() as usize) % self.n_points;
        self.center(m)
    }
}

/// A discretized density/measure on the grid. `signed` marks data that is
/// allowed to take both signs (sensitivity slices, differences).
#[derive(Debug, Clone)]
pub struct GridDensity {
    grid: Grid1D,
    values: Vec<f64>,
    signed: bool,
}

impl GridDensity {
    pub fn new(grid: Grid1D, values: Vec<f64>, signed: bool) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidParam(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.n_points()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("density contains non-finite values".into()));
        }
        if !signed {
            let max = values.iter().cloned().fold(0.0_f64, f64::max);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < -POSITIVITY_TOLERANCE * max.max(1e-300) {
                return Err(Error::Domain(format!(
                    "nonnegative density has undershoot {min:.3e} below tolerance"
                )));
            }
        }
        Ok(GridDensity { grid, values, signed })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid1D, signed: bool, f: F) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        GridDensity::new(grid, values, signed)
    }

    pub fn zero(grid: Grid1D) -> Self {
        GridDensity {
            grid,
            values: vec![0.0; grid.n_points()],
            signed: false,
        }
    }

    /// Gaussian bump sampled on the grid, rescaled so the grid mass is
    /// exactly `mass`.
    pub fn gaussian(grid: Grid1D, center: f64, std: f64, mass: f64) -> Result<Self> {
        if std <= 0.0 {
            return Err(Error::InvalidParam("gaussian std must be positive".into()));
        }
        let mut values: Vec<f64> = grid
            .centers()
            .map(|x| (-(x - center).powi(2) / (2.0 * std * std)).exp())
            .collect();
        let m: f64 = values.iter().sum::<f64>() * grid.spacing();
        for v in values.iter_mut() {
            *v *= mass / m;
        }
        GridDensity::new(grid, values, false)
    }

    pub fn uniform(grid: Grid1D, mass: f64) -> Self {
        let v = mass / (2.0 * grid.half_width());
        GridDensity {
            grid,
            values: vec![v; grid.n_points()],
            signed: false,
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total variation norm h Σ |v| (equals the mass for nonnegative data).
    pub fn tv_norm(&self) -> f64 {
        self.grid.spacing() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Mass in the outer `fraction` of cells on each side; monitors
    /// wrap-around contamination of the periodic truncation.
    pub fn edge_mass(&self, fraction: f64) -> f64 {
        let n = self.grid.n_points();
        let m = ((n as f64 * fraction).round() as usize).clamp(1, n / 2);
        let h = self.grid.spacing();
        let left: f64 = self.values[..m].iter().map(|v| v.abs()).sum();
        let right: f64 = self.values[n - m..].iter().map(|v| v.abs()).sum();
        h * (left + right)
    }

    /// Build directly from solver output; undershoot is tracked by the
    /// caller, so the nonnegativity gate is skipped.
    pub(crate) fn from_values_signed(grid: Grid1D, values: Vec<f64>) -> Self {
        GridDensity { grid, values, signed: true }
    }

    /// Linear combination a*self + b*other (result is signed).
    pub fn linear_comb(&self, a: f64, other: &GridDensity, b: f64) -> Result<GridDensity> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(GridDensity {
            grid: self.grid,
            values,
            signed: true,
        })
    }

    pub fn scale(&self, c: f64) -> GridDensity {
        GridDensity {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
            signed: self.signed || c < 0.0,
        }
    }

    /// Periodic convolution with another density (both treated as
    /// functions; origin at x = 0).
    pub fn convolve(&self, other: &GridDensity) -> Result<GridDensity> {
        self.grid.check_same(&other.grid)?;
        let vals = spectral::convolve(&self.values, &other.values, self.grid.spacing());
        Ok(GridDensity {
            grid: self.grid,
            values: vals,
            signed: self.signed || other.signed,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.centers().zip(self.values.iter()) {
            out.push_str(&format!("{x},{v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Binary artifact: little-endian header (L: f64, n_points: u64, h: f64)
    /// followed by the cell values as f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * self.values.len());
        buf.extend_from_slice(&self.grid.half_width().to_le_bytes());
        buf.extend_from_slice(&(self.grid.n_points() as u64).to_le_bytes());
        buf.extend_from_slice(&self.grid.spacing().to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<GridDensity> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 24 {
            return Err(Error::Domain("binary density artifact truncated".into()));
        }
        let l = f64::from_le_bytes(buf[0..8].try_into().unwrap());
        let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        if buf.len() != 24 + 8 * n {
            return Err(Error::Domain("binary density artifact has wrong length".into()));
        }
        let grid = Grid1D::new(l, n)?;
        let values = (0..n)
            .map(|i| f64::from_le_bytes(buf[24 + 8 * i..32 + 8 * i].try_into().unwrap()))
            .collect();
        Ok(GridDensity {
            grid,
            values,
            signed: true,
        })
    }
}

/// Sampled test function on the grid (dimensionless values).
#[derive(Debug, Clone)]
pub struct TestFunction {
    grid: Grid1D,
    values: Vec<f64>,
}

impl TestFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidParam(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.n_points()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("test function contains non-finite values".into()));
        }
        Ok(TestFunction { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid1D, f: F) -> Self {
        TestFunction {
            grid,
            values: grid.centers().map(f).collect(),
        }
    }

    pub fn constant(grid: Grid1D, c: f64) -> Self {
        TestFunction {
            grid,
            values: vec![c; grid.n_points()],
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn from_values(grid: Grid1D, values: Vec<f64>) -> Self {
        TestFunction { grid, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Pairing (f, mu) = h Σ f_j mu_j.
pub fn pairing(f: &TestFunction, mu: &GridDensity) -> Result<f64> {
    f.grid().check_same(mu.grid())?;
    Ok(f.grid().spacing()
        * f.values()
            .iter()
            .zip(mu.values().iter())
            .map(|(a, b)| a * b)
            .sum::<f64>())
}

/// Total mass h Σ values.
pub fn total_mass(mu: &GridDensity) -> f64 {
    mu.grid().spacing() * mu.values().iter().sum::<f64>()
}

/// L1 distance h Σ |mu1 - mu2|.
pub fn l1_distance(mu1: &GridDensity, mu2: &GridDensity) -> Result<f64> {
    mu1.grid().check_same(mu2.grid())?;
    Ok(mu1.grid().spacing()
        * mu1
            .values()
            .iter()
            .zip(mu2.values().iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Unit-mass surrogate for a point mass at x0: linear weight split over the
/// two bracketing cells, one cell exactly when x0 is a cell center.
pub fn dirac_approx(grid: &Grid1D, x0: f64) -> Result<GridDensity> {
    if !(x0 >= -grid.half_width() && x0 < grid.half_width()) {
        return Err(Error::Domain(format!(
            "x0 = {x0} outside [{}, {})",
            -grid.half_width(),
            grid.half_width()
        )));
    }
    let n = grid.n_points();
    let h = grid.spacing();
    let u = (x0 + grid.half_width()) / h;
    let i = u.floor() as usize;
    let frac = u - i as f64;
    let mut values = vec![0.0; n];
    values[i % n] = (1.0 - frac) / h;
    if frac != 0.0 {
        values[(i + 1) % n] += frac / h;
    }
    GridDensity::new(*grid, values, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Grid1D {
        Grid1D::new(10.0, 256).unwrap()
    }

    #[test]
    fn rejects_bad_grid_sizes() {
        assert!(Grid1D::new(10.0, 100).is_err());
        assert!(Grid1D::new(10.0, 4).is_err());
        assert!(Grid1D::new(-1.0, 64).is_err());
    }

    #[test]
    fn pairing_of_constant_with_unit_mass() {
        let g = grid();
        let mu = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let one = TestFunction::constant(g, 1.0);
        assert!((pairing(&one, &mu).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn pairing_odd_function_symmetric_density() {
        // x = 0 is a cell center, so the sampled density is even cell by
        // cell; the lone unpaired cell at -L carries e^{-50} of mass
        let g = grid();
        let mu = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let f = TestFunction::from_fn(g, |x| x);
        assert!(pairing(&f, &mu).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gaussian_second_moment() {
        let g = grid();
        let mu = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        let f = TestFunction::from_fn(g, |x| x * x);
        assert!((pairing(&f, &mu).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pairing_grid_mismatch_is_error() {
        let g1 = grid();
        let g2 = Grid1D::new(10.0, 128).unwrap();
        let mu = GridDensity::uniform(g2, 1.0);
        let f = TestFunction::constant(g1, 1.0);
        assert!(pairing(&f, &mu).is_err());
    }

    #[test]
    fn total_mass_basics() {
        let g = grid();
        assert!((total_mass(&GridDensity::uniform(g, 1.0)) - 1.0).abs() < 1e-13);
        assert_eq!(total_mass(&GridDensity::zero(g)), 0.0);
    }

    #[test]
    fn l1_distance_basics() {
        let g = grid();
        let mu = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(l1_distance(&mu, &mu).unwrap(), 0.0);
        let two = mu.scale(2.0);
        assert!((l1_distance(&mu, &two).unwrap() - 1.0).abs() < 1e-12);
        // disjointly supported unit bumps
        let b1 = GridDensity::gaussian(g, -5.0, 0.3, 1.0).unwrap();
        let b2 = GridDensity::gaussian(g, 5.0, 0.3, 1.0).unwrap();
        assert!((l1_distance(&b1, &b2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_at_cell_center_is_single_cell() {
        let g = grid();
        let x0 = g.center(17);
        let d = dirac_approx(&g, x0).unwrap();
        let nonzero: Vec<usize> = d
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![17]);
        assert!((d.values()[17] - 1.0 / g.spacing()).abs() < 1e-12);
        assert!((total_mass(&d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_outside_domain_is_error() {
        let g = grid();
        assert!(dirac_approx(&g, 10.0).is_err());
        assert!(dirac_approx(&g, -10.5).is_err());
    }

    #[test]
    fn dirac_pairing_second_order() {
        // keep the fractional offset product frac*(1-frac) fixed across
        // refinements (1/3 -> 2/3 -> 1/3) so the h^2 constant is stable
        let l = 10.0;
        let f = |x: f64| (std::f64::consts::PI / l * 3.0 * x).cos();
        let mut errs = Vec::new();
        for n in [64usize, 128, 256] {
            let g = Grid1D::new(l, n).unwrap();
            let x0 = g.center(n / 4) + g.spacing() / 3.0;
            let d = dirac_approx(&g, x0).unwrap();
            let tf = TestFunction::from_fn(g, f);
            errs.push((pairing(&tf, &d).unwrap() - f(x0)).abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "empirical order {order} below 1.9: {errs:?}");
        }
    }

    #[test]
    fn binary_round_trip() {
        let g = grid();
        let mu = GridDensity::gaussian(g, 0.5, 1.0, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        mu.write_binary(&p).unwrap();
        let back = GridDensity::read_binary(&p).unwrap();
        assert!(back.grid().same_as(mu.grid()));
        assert_eq!(back.values(), mu.values());
    }

    proptest! {
        #[test]
        fn pairing_is_bilinear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let g = Grid1D::new(5.0, 64).unwrap();
            let f = TestFunction::from_fn(g, |x| (x + seed as f64 * 0.01).sin());
            let w = TestFunction::from_fn(g, |x| (0.7 * x).cos());
            let mu = GridDensity::gaussian(g, 0.0, 1.0, 1.0).unwrap();
            let comb = TestFunction::new(g, f.values().iter().zip(w.values())
                .map(|(x, y)| a * x + b * y).collect()).unwrap();
            let lhs = pairing(&comb, &mu).unwrap();
            let rhs = a * pairing(&f, &mu).unwrap() + b * pairing(&w, &mu).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn l1_triangle_inequality(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, c3 in -2.0f64..2.0) {
            let g = Grid1D::new(5.0, 64).unwrap();
            let m1 = GridDensity::gaussian(g, c1, 0.8, 1.0).unwrap();
            let m2 = GridDensity::gaussian(g, c2, 1.1, 0.7).unwrap();
            let m3 = GridDensity::gaussian(g, c3, 0.5, 1.3).unwrap();
            let d13 = l1_distance(&m1, &m3).unwrap();
            let d12 = l1_distance(&m1, &m2).unwrap();
            let d23 = l1_distance(&m2, &m3).unwrap();
            prop_assert!(d13 <= d12 + d23 + 1e-12);
        }

        #[test]
        fn dirac_mass_is_one(x0 in -9.99f64..9.99) {
            let g = Grid1D::new(10.0, 128).unwrap();
            let d = dirac_approx(&g, x0).unwrap();
            prop_assert!((total_mass(&d) - 1.0).abs() < 1e-12);
        }
    }
}
