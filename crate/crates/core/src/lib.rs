//! Balanced and relatively balanced embeddings of polarized manifolds, with
//! the numerical diagnostics around them.

pub mod balance;
pub mod bergman;
pub mod calibration;
pub mod error;
pub mod expansion;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod quadrature;
pub mod stability;
pub mod symmetry;

pub use error::{Error, Result};
