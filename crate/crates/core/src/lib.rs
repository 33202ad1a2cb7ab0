//! Bayesian spatial function-on-function regression.
//!
//! Curves are moved into an orthonormal basis space, where the regression
//! `Ỹ = X̃ψ̃ + R + ε̃` is fit by conjugate Gibbs sampling. The spatial random
//! effect `R` is either a full latent field (Matérn for point-level data,
//! ICAR for areal data) or a reduced-rank projection `Pδ` built from Moran
//! operator eigenvectors. Posterior draws are mapped back to the data space
//! for surface inference (simultaneous bands, SimBaS, contour-avoiding
//! regions) and functional kriging.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod baseline;
pub mod basis;
pub mod curves;
pub mod error;
pub mod linalg;
pub mod posterior;
pub mod projection;
pub mod sampler;
pub mod simulate;
pub mod spatial;
pub mod special;

pub use basis::{BasisFamily, BasisSystem, TensorSurface};
pub use curves::{CoefficientSet, FunctionalDataset};
pub use error::{Error, Result};
pub use projection::{Mesh, ProjectionBasis};
pub use sampler::{ModelKind, ModelSpec, PosteriorDraws};
pub use spatial::{CovarianceParams, SpatialStructure};
