//! The SRFT tensor format: the carrier for style feature maps and other
//! dense arrays exchanged with the CLI.
//!
//! Layout, all little-endian: magic `SRFT`, version `u32 = 1`, `ndim u32`,
//! `dims u32 × ndim`, then `f32` data in row-major order with the last
//! dimension fastest. The payload length must equal `product(dims) × 4`
//! exactly. Like the checkpoint format, values are stored as `f32` and
//! computed as `f64`, so save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, ParseError, Result};
use crate::style_transform::StyleFeatures;
use crate::volume_renderer::FeatureMap;

pub const TENSOR_MAGIC: [u8; 4] = *b"SRFT";
pub const TENSOR_VERSION: u32 = 1;

/// Dimensions are capped so a hostile header cannot request absurd shapes;
/// every real tensor here is rank 1–3.
pub const MAX_TENSOR_NDIM: usize = 8;

/// A dense row-major tensor (last dimension fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if dims.is_empty() || dims.len() > MAX_TENSOR_NDIM {
            return Err(Error::domain(format!(
                "tensor rank must be between 1 and {MAX_TENSOR_NDIM}, got {}",
                dims.len()
            )));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Resource(format!("tensor shape {dims:?} overflows")))?;
        if data.len() != count {
            return Err(Error::domain(format!(
                "tensor shape {dims:?} holds {count} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }
}

/// Serializes a tensor into SRFT bytes.
pub fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &tensor.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn truncated(context: impl Into<String>) -> Error {
    Error::Parse(ParseError::Truncated { context: context.into() })
}

/// Decodes SRFT bytes. Never panics: every malformed input is a typed error,
/// and nothing is allocated beyond what the actual payload size supports.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(truncated("file shorter than the 4-byte magic"));
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != TENSOR_MAGIC {
        return Err(ParseError::BadMagic { expected: TENSOR_MAGIC, found }.into());
    }
    if bytes.len() < 12 {
        return Err(truncated("file ends inside the version or rank field"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != TENSOR_VERSION {
        return Err(ParseError::UnsupportedVersion { found: version, supported: TENSOR_VERSION }.into());
    }
    let ndim = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if ndim == 0 || ndim > MAX_TENSOR_NDIM {
        return Err(ParseError::MalformedHeader(format!(
            "tensor rank must be between 1 and {MAX_TENSOR_NDIM}, got {ndim}"
        ))
        .into());
    }
    let dims_end = 12 + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(truncated(format!("file ends inside the {ndim}-entry dimension list")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 12 + 4 * i;
        dims.push(u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]) as usize);
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| ParseError::MalformedHeader(format!("tensor shape {dims:?} overflows")))?;
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| ParseError::MalformedHeader(format!("tensor shape {dims:?} overflows")))?;
    if payload.len() as u64 != expected {
        return Err(ParseError::DimensionMismatch(format!(
            "shape {dims:?} requires a {expected}-byte payload, found {}",
            payload.len()
        ))
        .into());
    }
    let mut data = Vec::with_capacity(count as usize);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(ParseError::ValueOutOfRange(format!("tensor value [{i}] is not finite")).into());
        }
        data.push(f64::from(v));
    }
    Tensor::new(dims, data)
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(tensor))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    decode_tensor(&bytes)
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

/// Style features as a `[height, width, channels]` tensor (channel fastest,
/// matching the in-memory layout).
pub fn style_features_to_tensor(features: &StyleFeatures) -> Result<Tensor> {
    Tensor::new(vec![features.height, features.width, features.channels], features.data.clone())
}

/// Interprets a rank-3 `[height, width, channels]` tensor as style features.
pub fn tensor_to_style_features(tensor: &Tensor) -> Result<StyleFeatures> {
    let [height, width, channels]: [usize; 3] = tensor
        .dims()
        .try_into()
        .map_err(|_| Error::domain(format!(
            "style features need a rank-3 [height, width, channels] tensor, got shape {:?}",
            tensor.dims()
        )))?;
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::domain(format!(
            "style feature dimensions must be nonzero, got {:?}",
            tensor.dims()
        )));
    }
    Ok(StyleFeatures { width, height, channels, data: tensor.data().to_vec() })
}

/// A rendered feature map as a `[height, width, channels]` tensor. The
/// per-pixel accumulated ray weights are not part of the tensor; they travel
/// separately (see [`ray_weights_to_tensor`]).
pub fn feature_map_to_tensor(map: &FeatureMap) -> Result<Tensor> {
    Tensor::new(vec![map.height, map.width, map.channels], map.data.clone())
}

/// The accumulated per-pixel ray weights of a feature map as a
/// `[height, width]` tensor.
pub fn ray_weights_to_tensor(map: &FeatureMap) -> Result<Tensor> {
    Tensor::new(vec![map.height, map.width], map.ray_weight.clone())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
