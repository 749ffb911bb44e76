// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod bspline;
pub mod edges;
pub mod error;
pub mod fit;
pub mod image;
pub mod pipeline;
pub mod simdata;
