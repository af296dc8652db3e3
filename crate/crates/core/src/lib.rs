//! Object-aware monocular optical flow.

// `!(a < b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod bgflow;
pub mod costvol;
pub mod epigeo;
pub mod fgflow;
pub mod error;
pub mod imgproc;
pub mod matchnet;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image32 = imgproc::Image<f32>;
pub type Image64 = imgproc::Image<f64>;
pub type Flow32 = imgproc::FlowField<f32>;
pub type Flow64 = imgproc::FlowField<f64>;
pub type NetParams32 = matchnet::NetParams<f32>;
pub type NetParams64 = matchnet::NetParams<f64>;
pub type CostVolume32 = costvol::TopKCostVolume<f32>;
pub type CostVolume64 = costvol::TopKCostVolume<f64>;
