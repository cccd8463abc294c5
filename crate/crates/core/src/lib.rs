//! Numerical laboratory for coarse-grained diffusion matrices of random
//! elliptic coefficient fields in high contrast.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod besov;
pub mod cellsolve;
pub mod error;
pub mod fields;
pub mod grids;
pub mod homogcheck;
pub mod io;
pub mod matalg;
pub mod orlicz;
pub mod renorm;
pub mod rng;

pub use error::{Error, Result};
pub use fields::{CoefficientField, Region, SamplerSpec, ScalarLattice};
pub use grids::{AdaptedCube, TriadicCube};
pub use matalg::{BlockMatrix, Components, EllipticityReport, Mat, SkewMatrix, SymMatrix};
