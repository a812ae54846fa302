//! Frequency band substitution over DDIM trajectories for training-free
//! image-to-image translation, as pure numerics on latent features.
//!
//! The denoiser is a trait: [`AnalyticGaussianDenoiser`] gives exact answers
//! for Gaussian data, and [`bridge::BridgeClient`] forwards to an external
//! model process.

pub mod bridge;
pub mod dct;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod fbs;
pub mod io;
pub mod masks;
pub mod pipeline;
pub mod report;
pub mod stp;
pub mod tensor;

pub use dct::{dct1d_axis, dct2d, idct1d_axis, idct2d, Axis, Spectrum};
pub use denoiser::{toy_priors, AnalyticGaussianDenoiser, CallCounts, Conditioning, Denoiser, GaussianPrior};
pub use diffusion::Schedule;
pub use error::{Error, Result};
pub use fbs::{adafbs, blend_masked, fbs2d};
pub use io::{load_tensor, save_tensor};
pub use masks::{make_mask_2d, make_mask_pair_1d, Band, BandMode, BandSpec, ThresholdKind};
pub use pipeline::{
    run_fbsdiff, run_fbsdiffpp, run_localized, run_style_specific, PipelineConfig, RunReport,
    StpSettings, Substitution, Variant,
};
pub use report::{band_energies, BandClass, BandEnergies, BandPartition};
pub use stp::{stp_apply, stp_sample, ResizeKernel, SpatialTransformParams};
pub use tensor::{FeatureMask, LatentFeature, Shape};
