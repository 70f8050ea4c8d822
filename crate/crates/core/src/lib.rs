//! Neural ray-distribution fields: distil a volumetric teacher into a network
//! that maps each camera ray to a compact Fourier density/colour profile, so a
//! frame costs one network evaluation per pixel.

pub mod encoding;
pub mod checkpoint;
pub mod distill;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod nerdf;
pub mod nn;
pub mod scalar;
pub mod scenes;

pub use error::{NerdfError, Result};
