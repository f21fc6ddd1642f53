//! Artifact serialization.

pub mod checkpoint;
pub mod config;
pub mod ppm;
pub mod tensor;
