//! Periodic homogenization of the stochastic evolution Stokes system in a
//! perforated domain with a dynamic Fourier condition on the holes.
//!
//! Pipeline: [`geometry`] builds the cell and the perforated domain, [`cell`]
//! solves the periodic cell problems and the effective tensor, [`noise`]
//! samples the Q-Wiener increments, [`micro`] and [`hom`] integrate the
//! microscale and homogenized systems on shared noise, and [`harness`]
//! runs the convergence study.

pub mod cell;
pub mod error;
pub mod fields;
pub mod fem;
pub mod geometry;
pub mod harness;
pub mod hom;
pub mod micro;
pub mod noise;

pub use error::{Error, Result};
