//! Multi-view DDIM sampling with 3D-aware z₀ substitution.
//!
//! The sampler denoises a stack of camera-conditioned latents, periodically
//! fusing the predicted clean views into a single Gaussian-splat model and
//! feeding its renders back into the trajectory.

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod gsplat;
pub mod io;
pub mod metrics;
pub mod recon;
pub mod sampler;
pub mod scenes;

pub use error::{Error, Result};
