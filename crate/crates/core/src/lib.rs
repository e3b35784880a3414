//! Numerical laboratory for recovering a divergence-free convection term and
//! a potential in `d_t u - sum_j (d_j + A_j)^2 u + q u = 0` from partial
//! Dirichlet-to-Neumann data.
//!
//! All numerics are generic over [`Real`] (`f32`/`f64`); the `f64`
//! aliases below are what the CLI and the experiments use.

pub mod carleman;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod fields;
pub mod go;
pub mod grid;
pub mod linalg;
pub mod quadrature;
pub mod reconstruction;
pub mod scalar;
pub mod solver;
pub mod spectral;
pub mod suites;
pub mod testfn;

pub use error::{LabError, Result};
pub use scalar::{Cplx, Real};

pub type Grid = grid::SpaceTimeGrid<f64>;
pub type Partition = grid::BoundaryPartition<f64>;
pub type Field = grid::SpaceTimeField<Cplx<f64>>;
pub type Trace = grid::BoundaryTrace<Cplx<f64>>;
pub type Dirichlet = solver::DirichletData<f64>;
pub type Weight = go::CarlemanWeight<f64>;
pub type Amplitude = go::Amplitude<f64>;
pub type GoSolution = go::GoSolution<f64>;
pub type AReconstruction = reconstruction::AReconstruction<f64>;
pub type QReconstruction = reconstruction::QReconstruction<f64>;
