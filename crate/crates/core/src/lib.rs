//! Two-dimensional P1 finite elements for Helmholtz and Laplacian eigenvalue
//! problems, with shape gradients, topological derivatives and descent loops
//! built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: triangulations with tagged boundaries, generators, hole
//!   punching, deformation and file I/O.
//! * [`fem`]: P1 assembly, boundary conditions, boundary calculus and the
//!   sparse direct solver wrapper.
//! * [`helmholtz`] and [`spectral`]: state, adjoint and eigenvalue solves.
//! * [`shape_grad`] and [`topo`]: derivative formulas and their
//!   finite-difference / quotient oracles.
//! * [`optimize`]: Hadamard-flow descent with an optional topology phase.
//! * [`oracle`]: analytic reference values and convergence fitting.
//! * [`validation`]: benchmark comparisons shared by the CLI and test suites.

pub mod error;
pub mod fem;
pub mod helmholtz;
pub mod mesh;
pub mod optimize;
pub mod oracle;
pub mod shape_grad;
pub mod spectral;
pub mod topo;
pub mod validation;

pub use error::{Error, Result};
pub use mesh::{BoundaryTag, Mesh, Vec2};
