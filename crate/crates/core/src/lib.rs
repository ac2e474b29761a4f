//! Numerical affine Legendrian geometry in Sasakian manifolds.
//!
//! Models, discretized immersions, the phi-volume with its first and second
//! variations, stability spectra, cone calibration angles and a Newton solver
//! for deformations of special affine Legendrian submanifolds.

pub mod error;
pub mod model;
pub mod spectral;

pub use error::{GeometryError, Result};
pub mod immersion;
pub mod frame;
pub mod density;
pub mod calculus;
pub mod variation;
pub mod stability;
pub mod cone;
pub mod moduli;
