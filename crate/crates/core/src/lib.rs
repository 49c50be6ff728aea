//! Learned Stein discrepancies for unnormalized density models.
//!
//! A neural critic `f: ℝᴰ → ℝᴰ` is trained to maximize
//! `E_p[∇ log q(x)ᵀ f(x) + Tr ∇f(x)] − λ E_p‖f(x)‖²`, which needs only the
//! model's score. The learned discrepancy drives three procedures:
//!
//! - model comparison on held-out data ([`procedures::compare_models`])
//! - a linear-time goodness-of-fit test ([`procedures::gof_test`])
//! - sampler-free training of energy-based models ([`procedures::train_lsd`])
//!
//!
//! Everything is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`); the aliases at the crate root fix `f64`, which is what the
//! experiments use.

// `!(x > 0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod diffnet;
pub mod discrepancy;
mod error;
pub mod linalg;
pub mod procedures;
pub mod rng;
pub mod samplers;
pub mod scorezoo;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MlpNet64 = diffnet::MlpNet<f64>;
pub type ParamVector64 = diffnet::ParamVector<f64>;

pub type GaussianModel64 = scorezoo::GaussianModel<f64>;
pub type GbrbmModel64 = scorezoo::GbrbmModel<f64>;
pub type IcaModel64 = scorezoo::IcaModel<f64>;
pub type DeepEbmModel64 = scorezoo::DeepEbmModel<f64>;
pub type SteinTerms64 = discrepancy::SteinTerms<f64>;
pub type DiscrepancyEstimate64 = discrepancy::DiscrepancyEstimate<f64>;
pub type SplitData64 = procedures::SplitData<f64>;

pub type MlpNet32 = diffnet::MlpNet<f32>;
