//! Dynamic motion blur as per-pixel exposure trajectories.
//!
//! A blurry image is modeled as the average of N backward-warped copies of
//! the sharp mid-exposure frame, one per exposure timestep. The per-pixel
//! displacements form an exposure trajectory, optionally constrained to a
//! linear, bi-directional linear or quadratic curve. This crate provides
//! the differentiable forward model, a gradient-based solver that recovers
//! trajectories from a blurry/sharp pair, and the downstream uses of a
//! recovered trajectory (frame extraction, motion-aware convolution).

pub mod blur;
pub mod error;
pub mod etrf;
pub mod extraction;
pub mod image;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod recover;
pub mod sampler;
pub mod ssim;
pub mod synthesis;
pub mod trajectory;
pub mod viz;

pub use crate::blur::{create_blur, equivalent_kernel, equivalent_kernel_blur, blur_grad_wrt_offsets};
pub use crate::error::{Error, Result};
pub use crate::image::{load_image, save_image, BoundaryMode, FlowMap, Image, OffsetField};
pub use crate::recover::{recover, reblur, RecoveryConfig, RecoveryReport};
pub use crate::trajectory::{endpoint_flow, expand, resample, ConstraintMode, TrajectoryField};
