//! Measure-dependent drift b(x, mu) as an affine combination of integral
//! functionals of the measure, with closed-form first and second
//! variational derivatives.
//!
//! The shipped family is
//!   b(x, mu) = beta(x) + sum_m theta_m I_m(x, mu),
//! where an order-1 term has I = int K(x - y) mu(dy) and an order-2 term
//! has I = int int K(x - y1) K(x - y2) mu(dy1) mu(dy2) (symmetric in the
//! y-arguments by construction). Derivatives of order three and higher in
//! the measure vanish identically. Kernels are evaluated on the wrapped
//! periodic difference; convolutions run through the FFT, which samples
//! exactly the same wrapped kernel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fracops::ScaleField;
use crate::grid::{dirac_approx, Grid1D, GridDensity, TestFunction};
use crate::rng;
use crate::spectral;

/// Translation-invariant kernel K(r) from the closed-form registry.
#[derive(Debug, Clone, PartialEq)]
pub enum DifferenceKernel {
    /// exp(-r^2 / (2 w^2))
    Gaussian { width: f64 },
    /// cos(wavenumber * r); pick wavenumbers commensurate with the box
    /// (multiples of pi / L) to keep the wrapped kernel smooth.
    Cosine { wavenumber: f64 },
    Constant { value: f64 },
}

impl DifferenceKernel {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            DifferenceKernel::Gaussian { width } => (-r * r / (2.0 * width * width)).exp(),
            DifferenceKernel::Cosine { wavenumber } => (wavenumber * r).cos(),
            DifferenceKernel::Constant { value } => *value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DifferenceKernel::Gaussian { width } if *width <= 0.0 => Err(Error::InvalidParam(
                "gaussian kernel width must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    fn sample(&self, grid: &Grid1D) -> Vec<f64> {
        grid.centers().map(|x| self.eval(x)).collect()
    }
}

/// Order of the interaction functional (how many copies of the measure).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelOrder {
    One,
    Two,
}

/// One interaction functional with its kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    pub order: KernelOrder,
    pub kernel: DifferenceKernel,
}

/// Measure-independent part of the drift.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseDrift {
    Zero,
    Constant { value: f64 },
    /// amplitude * sin(wavenumber * x)
    Sin { amplitude: f64, wavenumber: f64 },
}

impl BaseDrift {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            BaseDrift::Zero => 0.0,
            BaseDrift::Constant { value } => *value,
            BaseDrift::Sin { amplitude, wavenumber } => amplitude * (wavenumber * x).sin(),
        }
    }
}

/// One weighted term theta * I(x, mu).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTerm {
    pub weight: f64,
    pub kernel: InteractionKernel,
}

/// The full drift specification.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub base: BaseDrift,
    pub terms: Vec<DriftTerm>,
}

impl DriftSpec {
    pub fn zero() -> Self {
        DriftSpec {
            base: BaseDrift::Zero,
            terms: Vec::new(),
        }
    }

    pub fn measure_independent(base: BaseDrift) -> Self {
        DriftSpec { base, terms: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            t.kernel.kernel.validate()?;
        }
        Ok(())
    }

    /// True when some interaction term has nonzero weight.
    pub fn depends_on_measure(&self) -> bool {
        self.terms.iter().any(|t| t.weight != 0.0)
    }

    /// True when a second variational derivative can be nonzero.
    pub fn has_second_order(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.weight != 0.0 && t.kernel.order == KernelOrder::Two)
    }
}

fn conv_kernel(k: &DifferenceKernel, mu: &GridDensity) -> Vec<f64> {
    spectral::convolve(&k.sample(mu.grid()), mu.values(), mu.grid().spacing())
}

/// b(x_j, mu) at every grid point.
pub fn eval_drift(spec: &DriftSpec, mu: &GridDensity) -> Result<TestFunction> {
    let grid = *mu.grid();
    let mut values: Vec<f64> = grid.centers().map(|x| spec.base.eval(x)).collect();
    for term in &spec.terms {
        if term.weight == 0.0 {
            continue;
        }
        let kmu = conv_kernel(&term.kernel.kernel, mu);
        match term.kernel.order {
            KernelOrder::One => {
                for (v, c) in values.iter_mut().zip(kmu.iter()) {
                    *v += term.weight * c;
                }
            }
            KernelOrder::Two => {
                for (v, c) in values.iter_mut().zip(kmu.iter()) {
                    *v += term.weight * c * c;
                }
            }
        }
    }
    TestFunction::new(grid, values)
}

/// First variational derivative delta b(x, mu) / delta mu(z) on the grid.
pub fn drift_first_vd(spec: &DriftSpec, mu: &GridDensity, z: f64) -> Result<TestFunction> {
    let grid = *mu.grid();
    let mut values = vec![0.0; grid.n_points()];
    for term in &spec.terms {
        if term.weight == 0.0 {
            continue;
        }
        match term.kernel.order {
            KernelOrder::One => {
                for (m, v) in values.iter_mut().enumerate() {
                    let r = grid.wrap_diff(grid.center(m), z);
                    *v += term.weight * term.kernel.kernel.eval(r);
                }
            }
            KernelOrder::Two => {
                let kmu = conv_kernel(&term.kernel.kernel, mu);
                for (m, v) in values.iter_mut().enumerate() {
                    let r = grid.wrap_diff(grid.center(m), z);
                    *v += 2.0 * term.weight * term.kernel.kernel.eval(r) * kmu[m];
                }
            }
        }
    }
    TestFunction::new(grid, values)
}

/// Second variational derivative; nonzero only for order-2 terms, and
/// symmetric under the (z, u) exchange.
pub fn drift_second_vd(spec: &DriftSpec, mu: &GridDensity, z: f64, u: f64) -> Result<TestFunction> {
    let grid = *mu.grid();
    let mut values = vec![0.0; grid.n_points()];
    for term in &spec.terms {
        if term.weight == 0.0 || term.kernel.order != KernelOrder::Two {
            continue;
        }
        for (m, v) in values.iter_mut().enumerate() {
            let x = grid.center(m);
            let rz = grid.wrap_diff(x, z);
            let ru = grid.wrap_diff(x, u);
            *v += 2.0 * term.weight * term.kernel.kernel.eval(rz) * term.kernel.kernel.eval(ru);
        }
    }
    TestFunction::new(grid, values)
}

/// Directional derivative int (delta b / delta mu)(z) rho(z) dz for a
/// signed direction density rho.
pub fn directional_first_vd(
    spec: &DriftSpec,
    mu: &GridDensity,
    rho: &GridDensity,
) -> Result<TestFunction> {
    mu.grid().check_same(rho.grid())?;
    let grid = *mu.grid();
    let mut values = vec![0.0; grid.n_points()];
    for term in &spec.terms {
        if term.weight == 0.0 {
            continue;
        }
        let krho = conv_kernel(&term.kernel.kernel, rho);
        match term.kernel.order {
            KernelOrder::One => {
                for (v, c) in values.iter_mut().zip(krho.iter()) {
                    *v += term.weight * c;
                }
            }
            KernelOrder::Two => {
                let kmu = conv_kernel(&term.kernel.kernel, mu);
                for (m, v) in values.iter_mut().enumerate() {
                    *v += 2.0 * term.weight * krho[m] * kmu[m];
                }
            }
        }
    }
    TestFunction::new(grid, values)
}

/// Second directional derivative against two direction densities.
pub fn directional_second_vd(
    spec: &DriftSpec,
    rho1: &GridDensity,
    rho2: &GridDensity,
) -> Result<TestFunction> {
    rho1.grid().check_same(rho2.grid())?;
    let grid = *rho1.grid();
    let mut values = vec![0.0; grid.n_points()];
    for term in &spec.terms {
        if term.weight == 0.0 || term.kernel.order != KernelOrder::Two {
            continue;
        }
        let k1 = conv_kernel(&term.kernel.kernel, rho1);
        let k2 = conv_kernel(&term.kernel.kernel, rho2);
        for (m, v) in values.iter_mut().enumerate() {
            *v += 2.0 * term.weight * k1[m] * k2[m];
        }
    }
    TestFunction::new(grid, values)
}

/// Numeric validation report for the regularity conditions on (a, b).
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub scale_min: f64,
    pub scale_max: f64,
    pub m_bound: f64,
    pub c1_ok: bool,
    pub sup_drift: f64,
    pub lipschitz_x: f64,
    pub c2_ok: bool,
    pub sup_first_vd: f64,
    pub sup_second_vd: f64,
    pub c3_ok: bool,
    pub probes: usize,
    pub mass_bound: f64,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Sampled-supremum estimates of the drift bounds over a design set of
/// measures of mass at most `lambda` (mixtures of up to three point-mass
/// surrogates plus smooth bumps), and a direct range check of the scale
/// field against its declared bound.
pub fn validate_conditions(
    spec: &DriftSpec,
    a: &ScaleField,
    lambda: f64,
    probes: usize,
) -> Result<ConditionReport> {
    let grid = *a.grid();
    let h = grid.spacing();
    let l = grid.half_width();
    let mut violations = Vec::new();

    let scale_min = a.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let scale_max = a.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c1_ok = scale_min >= 1.0 / a.m_bound() && scale_max <= a.m_bound();
    if !c1_ok {
        violations.push(format!(
            "(C1) scale field range [{scale_min:.6}, {scale_max:.6}] outside [1/M, M], M = {}",
            a.m_bound()
        ));
    }

    let mut gen = rng::stream(0xC0DE, "condition-probes");
    use rand::Rng;
    let mut sup_drift = 0.0_f64;
    let mut lipschitz = 0.0_f64;
    let mut sup_first = 0.0_f64;
    let mut sup_second = 0.0_f64;

    for _ in 0..probes.max(1) {
        let mass = lambda * gen.gen_range(0.05..1.0);
        let mu = if gen.gen_bool(0.5) {
            // mixture of up to 3 point-mass surrogates
            let parts = gen.gen_range(1..=3);
            let mut acc = GridDensity::zero(grid);
            let mut weights = vec![0.0; parts];
            let mut total = 0.0;
            for w in weights.iter_mut() {
                *w = gen.gen_range(0.1..1.0);
                total += *w;
            }
            for w in weights.iter() {
                let x0 = gen.gen_range(-l..l);
                let d = dirac_approx(&grid, x0)?;
                acc = acc.linear_comb(1.0, &d, mass * w / total)?;
            }
            acc
        } else {
            let c = gen.gen_range(-l / 2.0..l / 2.0);
            let s = gen.gen_range(0.2..2.0);
            GridDensity::gaussian(grid, c, s, mass)?
        };

        let b = eval_drift(spec, &mu)?;
        sup_drift = sup_drift.max(b.max_abs());
        for m in 0..grid.n_points() {
            let nb = (m + 1) % grid.n_points();
            lipschitz = lipschitz.max((b.values()[nb] - b.values()[m]).abs() / h);
        }
        let z = gen.gen_range(-l..l);
        let u = gen.gen_range(-l..l);
        sup_first = sup_first.max(drift_first_vd(spec, &mu, z)?.max_abs());
        sup_second = sup_second.max(drift_second_vd(spec, &mu, z, u)?.max_abs());
    }

    const FINITE_THRESHOLD: f64 = 1e6;
    let c2_ok = sup_drift.is_finite()
        && lipschitz.is_finite()
        && sup_drift < FINITE_THRESHOLD
        && lipschitz < FINITE_THRESHOLD;
    if !c2_ok {
        violations.push(format!(
            "(C2) drift bounds not finite: sup |b| = {sup_drift:.3e}, Lip_x = {lipschitz:.3e}"
        ));
    }
    let c3_ok =
        sup_first.is_finite() && sup_second.is_finite() && sup_first < FINITE_THRESHOLD && sup_second < FINITE_THRESHOLD;
    if !c3_ok {
        violations.push(format!(
            "(C3) variational-derivative bounds not finite: {sup_first:.3e}, {sup_second:.3e}"
        ));
    }

    let pass = c1_ok && c2_ok && c3_ok;
    Ok(ConditionReport {
        scale_min,
        scale_max,
        m_bound: a.m_bound(),
        c1_ok,
        sup_drift,
        lipschitz_x: lipschitz,
        c2_ok,
        sup_first_vd: sup_first,
        sup_second_vd: sup_second,
        c3_ok,
        probes,
        mass_bound: lambda,
        violations,
        pass,
    })
}
