//! Zero-shot 3D style transfer over tensor-factorized feature-grid radiance
//! fields.
//!
//! The crate models a scene as two factorized voxel grids — a density grid
//! and a high-dimensional feature grid — rendered by emission–absorption
//! volume rendering into full-resolution 2D feature maps. Stylization then
//! happens in two stages that are designed to commute with the rendering
//! integral: a sampling-invariant per-point content transformation applied
//! in 3D, and a deferred per-pixel style transformation applied in 2D whose
//! result is provably identical to applying the same linear style mapping
//! point-by-point in 3D. A linear decoder turns feature maps into RGB.
//!
//! Modules:
//! - [`tensor_grid`]: vector–matrix factorized density and feature grids.
//! - [`volume_renderer`]: cameras, ray sampling, weights, feature-map rendering.
//! - [`sict`]: sampling-invariant content transformation (normalization + channel attention).
//! - [`style_transform`]: style statistics, deferred style transformation, blending.
//! - [`decoder`]: linear feature-to-RGB decoding and least-squares fitting.
//! - [`scene_synth`]: procedural analytic scenes used as ground truth.
//! - [`trainer`]: stage-1 grid fitting with analytic gradients.
//! - [`io`]: checkpoint / tensor / image / config serialization.
//! - [`verify`]: self-checking numerical property harness.

pub mod decoder;
pub mod error;
pub mod io;
pub mod math;
pub mod model;
pub mod scene_synth;
pub mod sict;
pub mod style_transform;
pub mod tensor_grid;
pub mod trainer;
pub mod verify;
pub mod volume_renderer;

pub use error::{Error, ParseError, Result};
