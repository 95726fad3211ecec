//! Multiscale partition of unity method for numerical homogenization of
//! elliptic problems with rough coefficients on the unit square.
//!
//! The coarse space spanned by P1 hat functions is corrected by solving
//! localized fine-scale problems on element patches; the corrected hats still
//! sum to one and span a space with coefficient-independent approximation
//! properties.

pub mod coefficient;
pub mod corrector;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod msolver;
pub mod pou;

pub use error::{Error, Result};
