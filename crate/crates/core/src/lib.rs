//! Hybrid high-order (HHO) discretisation of the Gross-Pitaevskii eigenvalue
//! problem on two-dimensional Friedrichs-Keller triangulations.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] builds and red-refines structured triangulations and caches the
//!   geometric quantities used by the discretisation.
//! * [`fespace`] provides quadrature, L2-orthonormal modal bases on cells and
//!   faces, and the associated L2 projections.
//! * [`hho`] holds the hybrid unknowns, the local reconstruction and
//!   stabilisation, and the global bilinear form.
//! * [`gpe`] adds potentials, the discrete energies (standard and the
//!   cell-mean modified variant), eigenvalue residuals and the lower-bound
//!   certificate.
//! * [`solver`] contains the sparse SPD linear solvers and the
//!   energy-adaptive Sobolev gradient flow.

pub mod error;
pub mod fespace;
pub mod gpe;
pub mod hho;
pub mod mesh;
pub mod solver;

pub use error::{Error, Result};
