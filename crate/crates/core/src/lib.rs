//! Classical emulation of the quantum multigrid (qMG) algorithm.
//!
//! Pipeline: [`fem`] assembles a Poisson system, [`multigrid`] runs the
//! classical V-cycle oracle, [`qmg`] builds the block history vector by
//! applying shift-structured block operations, [`blockenc`] simulates the
//! block-encoding layer at tiny scale and [`analysis`] turns a run into
//! probabilities and resource counts.
//!
//! Numerical types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which every reported number uses.

pub mod analysis;
pub mod blockenc;
pub mod fem;
pub mod linalg;
pub mod multigrid;
pub mod qmg;
mod scalar;
pub mod sparse;

pub use scalar::Scalar;

pub type Real = f64;
pub type AssembledSystemF64 = fem::AssembledSystem<f64>;
pub type GridHierarchyF64 = multigrid::GridHierarchy<f64>;
pub type CycleTraceF64 = multigrid::CycleTrace<f64>;
pub type HistoryVectorF64 = qmg::HistoryVector<f64>;
