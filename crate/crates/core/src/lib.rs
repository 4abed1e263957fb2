//! Discrete 2D Helmholtz problems on uniform nodal grids, matrix-free
//! stencil operators, the shifted-Laplacian V-cycle, and restarted flexible
//! GMRES for single and batched right-hand sides.
//!
//! Everything on the classical solver path runs in 64-bit complex
//! arithmetic. Data-parallel loops go through [`par`], which uses rayon when
//! the `parallel` feature is enabled and plain iterators otherwise.

pub mod error;
pub mod field;
pub mod grid;
pub mod krylov;
pub mod metrics;
pub mod multigrid;
pub mod operators;
pub mod par;
pub mod problem;
pub mod slw;
pub mod transfer;

pub use error::{Error, Result};
pub use field::{ComplexField, Field, RealField};
pub use grid::ProblemGrid;
pub use krylov::{block_fgmres, fgmres, FieldMap, KrylovConfig, SolveReport};
pub use metrics::{convergence_factor, ConvergenceFactor};
pub use multigrid::{Hierarchy, VCycleConfig};
pub use operators::{Shift, StencilOperator};
pub use problem::{Attenuation, HelmholtzProblem, SlownessSquared};

pub use num_complex::Complex64;
