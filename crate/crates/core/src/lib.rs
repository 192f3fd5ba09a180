//! Random sketching for least squares: sketch operators, streaming
//! countsketch, approximate matrix multiplication, embedding diagnostics,
//! sketched regression with inference, pooling over disjoint sketches, sketch
//! size rules, and a reproducible Monte Carlo harness.

pub mod amm;
pub mod cli;
pub mod dgp;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod pooling;
pub mod regression;
pub mod rng;
pub mod size;
pub mod sketch;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use regression::{ContrastVector, RegressionFit, VarianceMode};
pub use sketch::{apply_sketch, build_sketch, SchemeId, SketchOperator};
