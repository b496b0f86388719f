//! Degenerate Kolmogorov operators with block-structured drift: structure
//! validation, controllability Gramians, Gaussian kernels, optimal controls,
//! Harnack chains and Monte-Carlo sampling of the associated diffusions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod config;
pub mod control;
pub mod error;
pub mod fields;
pub mod gramian;
pub mod kernel;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod quadrature;

pub use config::{load_model, parse_model, LoadError, Model, ModelConfig};
pub use error::{Error, Result, StructureError};
pub use fields::{Coefficients, DiffusionField, OperatorSpec, ScalarField};
pub use gramian::{gramian, gramian_by_quadrature, gramian_homogeneous, gramian_weighted, Gramian};
pub use model::{
    group_compose, group_inverse, homogeneous_dimension, kalman_rank, scaled_system, validate_structure,
    BlockStructure, SpaceTimePoint, SystemMatrix,
};
