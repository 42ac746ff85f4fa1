#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Double machine learning for the partially linear model with
//! support-points sample splitting.

pub mod data;
pub mod dml;
pub mod error;
pub mod learners;
pub mod rng;
pub mod simulate;
pub mod support_points;

pub use error::{Error, ErrorClass, Result};
