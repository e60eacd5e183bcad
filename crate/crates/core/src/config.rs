//! Experiment configuration: a single TOML document with flat sections per
//! subsystem. Unknown keys are rejected outright; silent typos in a
//! scientific config destroy reproducibility. All randomness flows from
//! `master_seed` through named streams.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::characteristics::CommonNoiseSpec;
use crate::drift::{
    BaseDrift, DifferenceKernel, DriftSpec, DriftTerm, InteractionKernel, KernelOrder,
};
use crate::error::{Error, Result};
use crate::fracops::ScaleField;
use crate::grid::{Grid1D, GridDensity};
use crate::pde::SolverConfig;
use crate::stable::StableParams;

pub const SCALE_REGISTRY: &[&str] = &["constant", "cosine_ripple"];
pub const KERNEL_REGISTRY: &[&str] = &["gaussian", "cosine", "constant"];
pub const BASE_DRIFT_REGISTRY: &[&str] = &["zero", "constant", "sin"];
pub const INITIAL_REGISTRY: &[&str] = &["gaussian", "uniform"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub half_width: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub sigma_com: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScaleSection {
    pub kind: String,
    pub m_bound: f64,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub base: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub wavenumber: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BaseDriftSection {
    pub kind: String,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub wavenumber: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub weight: f64,
    pub order: u8,
    pub kind: String,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub wavenumber: Option<f64>,
    #[serde(default)]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub base: BaseDriftSection,
    #[serde(default)]
    pub kernels: Vec<KernelSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: String,
    #[serde(default)]
    pub center: Option<f64>,
    #[serde(default)]
    pub std: Option<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
}

fn default_snapshots() -> usize {
    11
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub imex: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            picard_tol: 1e-10,
            picard_max_iter: 25,
            imex: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    pub count: usize,
    pub idio_seed: u64,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Particle time step; defaults to the solver dt.
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub sources: Vec<f64>,
    #[serde(default)]
    pub pairs: Vec<[f64; 2]>,
    #[serde(default)]
    pub fd_steps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub refinements: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    pub mass_rel_tol: f64,
    pub tv_factor: f64,
    pub positivity_factor: f64,
    /// When set (and the scenario has zero drift, constant scale), the
    /// final density is checked against the closed-form kernel evolution.
    pub closed_form_tol: Option<f64>,
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection {
            mass_rel_tol: 1e-8,
            tv_factor: 1e-6,
            positivity_factor: 1e-6,
            closed_form_tol: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Mass class bound for the initial data and condition probes.
    #[serde(default = "default_mass_bound")]
    pub mass_bound: f64,
    pub grid: GridSection,
    pub model: ModelSection,
    pub scale: ScaleSection,
    pub drift: DriftSection,
    pub initial: InitialSection,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub particles: Option<ParticlesSection>,
    #[serde(default)]
    pub sensitivity: Option<SensitivitySection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub checks: Option<ChecksSection>,
}

fn default_output_dir() -> String {
    "runs/out".into()
}

fn default_mass_bound() -> f64 {
    2.0
}

/// Fully validated scenario components, built from a config.
pub struct Scenario {
    pub grid: Grid1D,
    pub params: StableParams,
    pub noise: CommonNoiseSpec,
    pub scale: ScaleField,
    pub drift: DriftSpec,
    pub initial: GridDensity,
    pub solver: SolverConfig,
    pub n_noise_steps: usize,
}

fn need(opt: Option<f64>, what: &str, section: &str) -> Result<f64> {
    opt.ok_or_else(|| Error::Config(format!("missing field `{what}` in [{section}]")))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        cfg.build()?; // surface validation errors at load time
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml_str(&text)
    }

    /// SHA-256 over the canonical (struct-ordered) JSON serialization;
    /// key order in the source document does not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn build(&self) -> Result<Scenario> {
        let grid = Grid1D::new(self.grid.half_width, self.grid.n_points)?;
        let params = StableParams::new(self.model.alpha)?;
        let noise = CommonNoiseSpec::new(self.model.sigma_com)?;

        let scale = match self.scale.kind.as_str() {
            "constant" => ScaleField::constant(
                grid,
                need(self.scale.value, "value", "scale")?,
                self.scale.m_bound,
            )?,
            "cosine_ripple" => {
                let base = need(self.scale.base, "base", "scale")?;
                let amp = need(self.scale.amplitude, "amplitude", "scale")?;
                let wn = need(self.scale.wavenumber, "wavenumber", "scale")?;
                ScaleField::from_fn(grid, self.scale.m_bound, |x| base + amp * (wn * x).cos())?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown scale kind `{other}`; registry: {SCALE_REGISTRY:?}"
                )))
            }
        };

        let base = match self.drift.base.kind.as_str() {
            "zero" => BaseDrift::Zero,
            "constant" => BaseDrift::Constant {
                value: need(self.drift.base.value, "value", "drift.base")?,
            },
            "sin" => BaseDrift::Sin {
                amplitude: need(self.drift.base.amplitude, "amplitude", "drift.base")?,
                wavenumber: need(self.drift.base.wavenumber, "wavenumber", "drift.base")?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown base drift `{other}`; registry: {BASE_DRIFT_REGISTRY:?}"
                )))
            }
        };
        let mut terms = Vec::with_capacity(self.drift.kernels.len());
        for (i, k) in self.drift.kernels.iter().enumerate() {
            let order = match k.order {
                1 => KernelOrder::One,
                2 => KernelOrder::Two,
                o => {
                    return Err(Error::Config(format!(
                        "kernel #{i}: order must be 1 or 2, got {o}"
                    )))
                }
            };
            let kernel = match k.kind.as_str() {
                "gaussian" => DifferenceKernel::Gaussian {
                    width: need(k.width, "width", "drift.kernels")?,
                },
                "cosine" => DifferenceKernel::Cosine {
                    wavenumber: need(k.wavenumber, "wavenumber", "drift.kernels")?,
                },
                "constant" => DifferenceKernel::Constant {
                    value: need(k.value, "value", "drift.kernels")?,
                },
                other => {
                    return Err(Error::Config(format!(
                        "kernel #{i}: unknown kernel `{other}`; registry: {KERNEL_REGISTRY:?}"
                    )))
                }
            };
            terms.push(DriftTerm {
                weight: k.weight,
                kernel: InteractionKernel { order, kernel },
            });
        }
        let drift = DriftSpec { base, terms };
        drift.validate()?;

        let initial = match self.initial.kind.as_str() {
            "gaussian" => GridDensity::gaussian(
                grid,
                need(self.initial.center, "center", "initial")?,
                need(self.initial.std, "std", "initial")?,
                self.initial.mass,
            )?,
            "uniform" => GridDensity::uniform(grid, self.initial.mass),
            other => {
                return Err(Error::Config(format!(
                    "unknown initial density `{other}`; registry: {INITIAL_REGISTRY:?}"
                )))
            }
        };
        if self.initial.mass > self.mass_bound {
            return Err(Error::Config(format!(
                "initial mass {} exceeds the declared mass bound {}",
                self.initial.mass, self.mass_bound
            )));
        }

        if !(self.time.horizon > 0.0 && self.time.dt > 0.0) {
            return Err(Error::Config("horizon and dt must be positive".into()));
        }
        let steps = self.time.horizon / self.time.dt;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(Error::Config(format!(
                "dt = {} must divide the horizon {}",
                self.time.dt, self.time.horizon
            )));
        }

        let mut solver = SolverConfig::new(self.time.dt)?;
        solver.picard_tol = self.solver.picard_tol;
        solver.picard_max_iter = self.solver.picard_max_iter;
        solver.imex = self.solver.imex;

        if let Some(p) = &self.particles {
            if p.count == 0 {
                return Err(Error::Config("particles.count must be positive".into()));
            }
            if let Some(dtp) = p.dt {
                let r = self.time.horizon / dtp;
                if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
                    return Err(Error::Config(
                        "particles.dt must divide the horizon".into(),
                    ));
                }
            }
        }
        if let Some(s) = &self.sensitivity {
            if s.sources.is_empty() {
                return Err(Error::Config("sensitivity.sources must be nonempty".into()));
            }
        }
        if let Some(c) = &self.compare {
            if c.refinements < 2 {
                return Err(Error::Config("compare.refinements must be at least 2".into()));
            }
            if c.seeds.is_empty() {
                return Err(Error::Config("compare.seeds must be nonempty".into()));
            }
        }

        Ok(Scenario {
            grid,
            params,
            noise,
            scale,
            drift,
            initial,
            solver,
            n_noise_steps: steps.round() as usize,
        })
    }
}

/// Built-in smoke scenario: drift-free constant-scale flow whose terminal
/// density has a closed form.
pub fn smoke_config() -> ExperimentConfig {
    ExperimentConfig {
        scenario: "smoke".into(),
        master_seed: 1,
        output_dir: "runs/smoke".into(),
        mass_bound: 2.0,
        grid: GridSection {
            half_width: 10.0,
            n_points: 256,
        },
        model: ModelSection {
            alpha: 1.5,
            sigma_com: 0.0,
        },
        scale: ScaleSection {
            kind: "constant".into(),
            m_bound: 2.0,
            value: Some(1.0),
            base: None,
            amplitude: None,
            wavenumber: None,
        },
        drift: DriftSection {
            base: BaseDriftSection {
                kind: "zero".into(),
                value: None,
                amplitude: None,
                wavenumber: None,
            },
            kernels: vec![],
        },
        initial: InitialSection {
            kind: "gaussian".into(),
            center: Some(0.0),
            std: Some(1.0),
            mass: 1.0,
        },
        time: TimeSection {
            horizon: 0.5,
            dt: 1e-3,
            snapshots: 11,
        },
        solver: SolverSection::default(),
        particles: None,
        sensitivity: None,
        compare: None,
        checks: Some(ChecksSection {
            closed_form_tol: Some(1e-4),
            ..ChecksSection::default()
        }),
    }
}
