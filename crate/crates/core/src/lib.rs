//! Multiscale brightness-temperature disaggregation.
//!
//! The coarse field is segmented with a Cauchy–Schwarz information-theoretic
//! clustering of `[T_B, lat, lon]`; one ε-SVR per segment then maps
//! coarse-scale covariates to `T_B` and is applied to fine-scale covariates.
//!
//! Numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below fix the precision.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod segmentation;
pub mod svr;
pub mod synth;

pub use error::{Result, SrrmError};
pub use scalar::Scalar;

pub type Grid64 = raster::Grid<f64>;
pub type Grid32 = raster::Grid<f32>;
pub type FeatureTable64 = raster::FeatureTable<f64>;
pub type FractionStack64 = raster::FractionStack<f64>;
pub type SvrModel64 = svr::SvrModel<f64>;
pub type SvrTrainConfig64 = svr::SvrTrainConfig<f64>;
pub type Scene64 = pipeline::Scene<f64>;
pub type PipelineConfig64 = pipeline::PipelineConfig<f64>;
pub type DisaggregationResult64 = pipeline::DisaggregationResult<f64>;
