//! Blind single-image deblurring with extreme-channel priors.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tape`]) drives a multi-scale encoder/decoder network ([`network`])
//! whose encoder embeds differentiable dark/bright-channel extraction
//! ([`ecpel`]). Training ([`train`]) minimizes a sparsity-regularized
//! multi-scale L1 objective ([`loss`]) with Adam ([`adam`]) on synthetic
//! blur/sharp pairs ([`data`]).

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod ecpel;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod params;
pub mod tape;
pub mod train;
pub mod tensor;
