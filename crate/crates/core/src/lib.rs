//! Per-particle reconstruction of flexible chain molecules from noisy
//! tomographic projections.
//!
//! A particle's chain is described by torsion (and, in 3D, bond) angles along
//! discrete Frenet frames. Angles are expanded as a known conformation plus a
//! combination of low graph-Laplacian eigenvectors computed over all
//! particles, and the expansion coefficients are fitted by SGD on the
//! projection residual.

pub mod array_io;
pub mod datasets;
pub mod error;
pub mod forward;
pub mod frenet;
pub mod metrics;
pub mod pipeline;
pub mod recon;
pub mod spectral;
pub mod store;
pub mod trajectory;

pub use error::{Error, Result};
