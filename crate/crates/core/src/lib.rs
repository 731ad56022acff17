//! Closed geodesics, Jacobi spectra and weighted geodesic counts on
//! parametric surfaces.

pub mod clairaut;
pub mod continuation;
pub mod error;
pub mod geometry;
pub mod harmonics;
pub mod jacobi;
pub mod loops;
pub mod solver;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
