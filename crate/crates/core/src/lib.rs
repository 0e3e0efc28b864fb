//! Numerical laboratory for edge statistics of unimodular random band matrices.
//!
//! Modules follow the data flow: torus kernels feed the ensemble constants,
//! which feed the polynomial families; path oracles and the diagram calculus
//! check the combinatorics; `exp_cli` runs seeded experiments end to end.

pub mod diagram_lab;
pub mod error;
pub mod exp_cli;
pub mod linalg;
pub mod nbw_oracle;
pub mod poly_engine;
pub mod quad;
pub mod rbm_model;
pub mod stats;
pub mod torus_walk;

pub use error::{LabError, Result};
