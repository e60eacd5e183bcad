//! Pathwise solver for measure-valued evolution equations driven by
//! stable-like processes with a common Brownian forcing, together with
//! first- and second-order sensitivities of the solution with respect to
//! the initial measure.
//!
//! The pipeline removes the common noise by a shift change of variables
//! (`characteristics`), solves the resulting deterministic nonlinear
//! density equation spectrally on a periodic grid (`pde`), and shifts the
//! answer back (`spde`). An interacting particle system (`particles`) and
//! a direct discretization of the noisy equation provide independent
//! routes for validation. Sensitivities solve the linearized equations
//! along the frozen trajectory (`sensitivity`). Everything is driven by
//! named RNG streams derived from one master seed, so runs are exactly
//! reproducible.

pub mod characteristics;
pub mod config;
pub mod drift;
pub mod error;
pub mod fracops;
pub mod grid;
pub mod particles;
pub mod pde;
pub mod rng;
pub mod runner;
pub mod sensitivity;
pub mod spde;
mod spectral;
pub mod stable;

pub use error::{Error, Result};
