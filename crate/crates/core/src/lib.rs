//! Expected-utility design under uncertainty recast as variational inference.
//!
//! The pipeline computes a point estimate of the design and uncertain inputs
//! by Gauss-Newton, then alternates closed-form Gaussian updates with
//! Stiefel-manifold optimization to expose the design directions the expected
//! utility is most sensitive to. Importance sampling against the exact model
//! measures how good the Gaussian approximation is.

pub mod coupling;
pub mod error;
pub mod fem;
pub mod ising;
pub mod linalg;
pub mod map;
pub mod mesh;
pub mod pipeline;
pub mod problems;
pub mod random_field;
pub mod stiefel;
pub mod validation;
pub mod vb;

pub use error::{Error, Result};
