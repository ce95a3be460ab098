//! Per-pixel Gaussian splatting for sparse-view scene reconstruction.
//!
//! Every pixel of every input view owns one Gaussian that is constrained to
//! the pixel's camera ray. A shared convolutional decoder predicts residual
//! depth and opacity per view, and training combines a photometric loss with
//! disparity smoothness and flow-consistency terms.

pub mod autodiff;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod gradcheck;
pub mod init;
pub mod io;
pub mod losses;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
