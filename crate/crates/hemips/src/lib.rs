//! Uncalibrated photometric stereo by hemispherical metric embedding.
//!
//! Pixels of a multi-illumination image stack are mapped to normalized
//! intensity vectors whose local distances approximate geodesic distances
//! between the underlying surface normals on the unit hemisphere. A discrete
//! Laplace-Beltrami operator built from those distances, with Dirichlet and
//! Neumann conditions on the detected equator, has the coordinate functions
//! x, y, z among its leading eigenvectors; reading them off recovers the
//! normal field, and integrating the normals recovers depth.
//!
//! The crate also ships a synthetic renderer (exact clamped-cosine shading
//! and its spherical-harmonic counterpart) so the whole chain can be
//! validated without external data, plus reference embedders (Isomap,
//! Isomap-chordal, LLE) and the evaluation metrics used to compare them.

pub mod baselines;
pub mod chart;
pub mod config;
pub mod error;
pub mod hemisphere;
pub mod equator;
pub mod laplacian;
pub mod mds;
pub mod pfm;
pub mod pipeline;
pub mod pixelgraph;
pub mod quadrature;
pub mod reconstruct;
pub mod render;
pub mod rng;
pub mod sh;
pub mod spectral;
pub mod sparse;

pub use error::{Error, Result};
