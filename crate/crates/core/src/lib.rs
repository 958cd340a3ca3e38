#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Holomorphic isotropic sections of Hermitian bundles over the disk and the destabilizing test sections built from them.

pub mod cauchy;
pub mod config;
pub mod destabilizer;
pub mod error;
pub mod geometry;
pub mod gaussian;
pub mod grid;
pub mod isotropy;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod stability;
pub mod tweak;

pub use error::{Error, Result};
