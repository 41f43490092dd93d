//! Layered approximate solutions of `Δu + λ²eᵘ = 0` on doubly connected planar domains.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the quadrature formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod laplace;
pub mod matching;
pub mod profile;
pub mod spectral;

pub use error::{Error, Result};

/// Complex numbers double as planar points throughout.
pub type C64 = rustfft::num_complex::Complex64;
