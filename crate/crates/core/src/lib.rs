//! Quadratic differentials on the Riemann sphere: triangulation combinatorics,
//! cluster tori, trajectory structure and BPS spectra, wall-crossing
//! automorphisms, and numerical Riemann-Hilbert solutions via ODE monodromy.

#![allow(clippy::needless_range_loop, clippy::excessive_precision, clippy::type_complexity, clippy::too_many_arguments)]

pub mod bps;
pub mod cli;
pub mod cluster;
pub mod differential;
pub mod error;
pub mod exact;
pub mod foliation;
pub mod numerics;
pub mod opers;
pub mod rh;
pub mod surface;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
