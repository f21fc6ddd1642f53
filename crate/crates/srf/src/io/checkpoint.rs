//! The SRFG checkpoint format: one file holding everything a [`Model`] needs.
//!
//! Layout: magic `SRFG`, version `u32 = 1`, then a sequence of sections, each
//! `[tag: u32][length: u64][payload]`. Everything is little-endian and arrays
//! are stored as `f32` (computation stays `f64`; values are truncated on save
//! and widened exactly on load, so save → load → save is byte-identical).
//!
//! Defined tags, written in ascending order:
//!
//! | tag | payload |
//! |-----|---------|
//! | 1 | geometry: resolution `3×u32`, bbox min/max `6×f32` |
//! | 2 | feature factors: `R u32`, `C u32`, then per axis the line then plane array |
//! | 3 | density factors: `R u32`, raw-density offset `f32`, then per axis the line then plane array |
//! | 4 | basis matrix: `rows u32`, `cols u32`, row-major `f32` |
//! | 5 | normalization state: running mean `f32×C`, running variance `f32×C`, momentum `f32`, epsilon `f32` |
//! | 6 | attention: `C u32`, `C′ u32`, then `W_q`, `W_k`, `W_v`, each `C′×C` row-major `f32` |
//! | 7 | restore convolution: `rows u32`, `cols u32`, row-major `f32` |
//! | 8 | decoder: `C u32`, weight `3×C` row-major `f32`, bias `3×f32`, background `3×f32` |
//! | 9 | reserved for a future deep decoder; skipped silently |
//!
//! The reader accepts sections in any order, skips unknown tags by their
//! declared length (recording a warning), rejects duplicates, and validates
//! every cross-section shape constraint before assembling the model. Any
//! malformed input yields a typed [`ParseError`]; no input panics. Loading is
//! reentrant (pure function of the bytes); concurrent writers to one path are
//! the caller's responsibility.

use std::fs;
use std::path::Path;

use crate::decoder::DecoderParams;
use crate::error::{Error, ParseError, Result};
use crate::math::{Mat, Vec3};
use crate::model::Model;
use crate::sict::{AttentionParams, VolumeAdaptiveNorm};
use crate::style_transform::DstParams;
use crate::tensor_grid::{GridGeometry, VmDensityField, VmFactors, VmFeatureField};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SRFG";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_GEOMETRY: u32 = 1;
const TAG_FEATURE_FACTORS: u32 = 2;
const TAG_DENSITY_FACTORS: u32 = 3;
const TAG_BASIS: u32 = 4;
const TAG_NORM: u32 = 5;
const TAG_ATTENTION: u32 = 6;
const TAG_DST: u32 = 7;
const TAG_DECODER: u32 = 8;
const TAG_RESERVED_DEEP_DECODER: u32 = 9;

/// A successfully decoded checkpoint: the model plus any warnings the reader
/// accumulated (currently only skipped unknown sections). The library never
/// prints; surfacing warnings is the caller's choice.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: Model,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn push_f32_slice(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        push_f32(out, v);
    }
}

fn push_section(out: &mut Vec<u8>, tag: u32, payload: &[u8]) {
    push_u32(out, tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn factor_arrays(payload: &mut Vec<u8>, factors: &VmFactors) {
    for axis in 0..3 {
        push_f32_slice(payload, factors.line(axis));
        push_f32_slice(payload, factors.plane(axis));
    }
}

/// Serializes a model into SRFG bytes. Total function: every model that
/// passed construction validation encodes.
pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION);

    let geometry = model.geometry();
    let mut payload = Vec::new();
    for n in geometry.resolution() {
        push_u32(&mut payload, n as u32);
    }
    let lo = geometry.bbox_min();
    let hi = geometry.bbox_max();
    push_f32_slice(&mut payload, &[lo.x, lo.y, lo.z, hi.x, hi.y, hi.z]);
    push_section(&mut out, TAG_GEOMETRY, &payload);

    let features = model.features();
    payload.clear();
    push_u32(&mut payload, features.factors().rank() as u32);
    push_u32(&mut payload, features.channels() as u32);
    factor_arrays(&mut payload, features.factors());
    push_section(&mut out, TAG_FEATURE_FACTORS, &payload);

    let density = model.density();
    payload.clear();
    push_u32(&mut payload, density.factors().rank() as u32);
    push_f32(&mut payload, density.raw_offset());
    factor_arrays(&mut payload, density.factors());
    push_section(&mut out, TAG_DENSITY_FACTORS, &payload);

    let basis = features.basis();
    payload.clear();
    push_u32(&mut payload, basis.rows() as u32);
    push_u32(&mut payload, basis.cols() as u32);
    push_f32_slice(&mut payload, basis.data());
    push_section(&mut out, TAG_BASIS, &payload);

    let norm = model.norm();
    payload.clear();
    push_f32_slice(&mut payload, &norm.running_mean);
    push_f32_slice(&mut payload, &norm.running_var);
    push_f32(&mut payload, norm.momentum);
    push_f32(&mut payload, norm.epsilon);
    push_section(&mut out, TAG_NORM, &payload);

    let attention = model.attention();
    payload.clear();
    push_u32(&mut payload, attention.input_channels() as u32);
    push_u32(&mut payload, attention.reduced_channels() as u32);
    push_f32_slice(&mut payload, attention.w_query().data());
    push_f32_slice(&mut payload, attention.w_key().data());
    push_f32_slice(&mut payload, attention.w_value().data());
    push_section(&mut out, TAG_ATTENTION, &payload);

    let dst = model.dst();
    payload.clear();
    push_u32(&mut payload, dst.conv.rows() as u32);
    push_u32(&mut payload, dst.conv.cols() as u32);
    push_f32_slice(&mut payload, dst.conv.data());
    push_section(&mut out, TAG_DST, &payload);

    let decoder = model.decoder();
    payload.clear();
    push_u32(&mut payload, decoder.channels() as u32);
    push_f32_slice(&mut payload, decoder.weight.data());
    push_f32_slice(&mut payload, &decoder.bias);
    push_f32_slice(&mut payload, &decoder.background);
    push_section(&mut out, TAG_DECODER, &payload);

    out
}

/// Writes `model` to `path` in SRFG format.
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Bounded little-endian reader over one section payload. Every shortfall
/// turns into a [`ParseError::BadSection`] naming the section and the field
/// being read.
struct SectionReader<'a> {
    tag: u32,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> SectionReader<'a> {
    fn new(tag: u32, buf: &'a [u8]) -> SectionReader<'a> {
        SectionReader { tag, buf, pos: 0 }
    }

    fn bad(&self, reason: impl Into<String>) -> ParseError {
        ParseError::BadSection { tag: self.tag, reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], ParseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            self.bad(format!(
                "payload ends while reading {what} (need {n} bytes at offset {}, have {})",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, ParseError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> std::result::Result<f64, ParseError> {
        let b = self.take(4, what)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(self.bad(format!("{what} is not finite")));
        }
        Ok(f64::from(v))
    }

    /// Reads `count` finite f32 values, widened to f64. `count` is always a
    /// product of already-validated dimensions, but the byte math is still
    /// checked so an adversarial header cannot wrap the request.
    fn f32_array(&mut self, count: usize, what: &str) -> std::result::Result<Vec<f64>, ParseError> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| self.bad(format!("{what} element count {count} overflows")))?;
        let raw = self.take(bytes, what)?;
        let mut out = Vec::with_capacity(count);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(self.bad(format!("{what}[{i}] is not finite")));
            }
            out.push(f64::from(v));
        }
        Ok(out)
    }

    fn finish(self) -> std::result::Result<(), ParseError> {
        if self.pos != self.buf.len() {
            return Err(self.bad(format!(
                "{} bytes of trailing data after the last field",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Converts a domain error raised while assembling a section's contents into
/// a parse error that names the section.
fn section_error(tag: u32, err: Error) -> Error {
    match err {
        Error::Parse(p) => Error::Parse(p),
        other => Error::Parse(ParseError::BadSection { tag, reason: other.to_string() }),
    }
}

/// Splits the file into `(tag, payload)` pairs after checking magic and
/// version, validating each declared length against the remaining bytes.
fn split_sections(bytes: &[u8]) -> std::result::Result<Vec<(u32, &[u8])>, ParseError> {
    if bytes.len() < 4 {
        return Err(ParseError::Truncated { context: "file shorter than the 4-byte magic".to_string() });
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != CHECKPOINT_MAGIC {
        return Err(ParseError::BadMagic { expected: CHECKPOINT_MAGIC, found });
    }
    if bytes.len() < 8 {
        return Err(ParseError::Truncated { context: "file ends inside the version field".to_string() });
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != CHECKPOINT_VERSION {
        return Err(ParseError::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
    }

    let mut sections = Vec::new();
    let mut rest = &bytes[8..];
    while !rest.is_empty() {
        if rest.len() < 12 {
            return Err(ParseError::Truncated {
                context: format!("{} bytes left where a 12-byte section header is required", rest.len()),
            });
        }
        let tag = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]);
        let declared = u64::from_le_bytes([
            rest[4], rest[5], rest[6], rest[7], rest[8], rest[9], rest[10], rest[11],
        ]);
        let remaining = (rest.len() - 12) as u64;
        if declared > remaining {
            return Err(ParseError::SectionOverrun { tag, declared, remaining });
        }
        let len = declared as usize;
        sections.push((tag, &rest[12..12 + len]));
        rest = &rest[12 + len..];
    }
    Ok(sections)
}

/// Raw payloads of the eight required sections, collected before decoding so
/// section order in the file does not matter.
#[derive(Default)]
struct RawSections<'a> {
    slots: [Option<&'a [u8]>; 8],
}

impl<'a> RawSections<'a> {
    fn store(&mut self, tag: u32, payload: &'a [u8]) -> std::result::Result<(), ParseError> {
        let slot = &mut self.slots[(tag - 1) as usize];
        if slot.is_some() {
            return Err(ParseError::BadSection { tag, reason: "duplicate section".to_string() });
        }
        *slot = Some(payload);
        Ok(())
    }

    fn get(&self, tag: u32, name: &'static str) -> std::result::Result<&'a [u8], ParseError> {
        self.slots[(tag - 1) as usize].ok_or(ParseError::MissingSection(name))
    }
}

fn decode_geometry(payload: &[u8]) -> Result<GridGeometry> {
    let mut r = SectionReader::new(TAG_GEOMETRY, payload);
    let mut resolution = [0usize; 3];
    for (axis, slot) in resolution.iter_mut().enumerate() {
        *slot = r.u32(&format!("resolution[{axis}]"))? as usize;
    }
    let mut bbox = [0.0f64; 6];
    for (i, slot) in bbox.iter_mut().enumerate() {
        *slot = r.f32(&format!("bbox[{i}]"))?;
    }
    r.finish()?;
    GridGeometry::new(
        resolution,
        Vec3::new(bbox[0], bbox[1], bbox[2]),
        Vec3::new(bbox[3], bbox[4], bbox[5]),
    )
    .map_err(|e| section_error(TAG_GEOMETRY, e))
}

/// Reads the six factor arrays (line then plane per axis) whose lengths are
/// fixed by the rank and the grid resolution.
fn decode_factor_arrays(
    r: &mut SectionReader<'_>,
    geometry: &GridGeometry,
    rank: usize,
) -> Result<VmFactors> {
    let tag = r.tag;
    let mut factors = VmFactors::zeros(geometry, rank).map_err(|e| section_error(tag, e))?;
    let n = geometry.resolution();
    for axis in 0..3 {
        let line_len = rank * n[axis];
        let line = r.f32_array(line_len, &format!("axis-{axis} line factor"))?;
        factors.line_mut(axis).copy_from_slice(&line);

        let (b, c) = crate::tensor_grid::plane_axes(axis);
        let plane_len = rank
            .checked_mul(n[b])
            .and_then(|v| v.checked_mul(n[c]))
            .ok_or_else(|| ParseError::BadSection {
                tag,
                reason: format!("axis-{axis} plane factor size overflows"),
            })?;
        let plane = r.f32_array(plane_len, &format!("axis-{axis} plane factor"))?;
        factors.plane_mut(axis).copy_from_slice(&plane);
    }
    Ok(factors)
}

/// Decodes SRFG bytes into a model plus reader warnings.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    let mut warnings = Vec::new();
    let mut raw = RawSections::default();
    for (tag, payload) in split_sections(bytes)? {
        match tag {
            TAG_GEOMETRY..=TAG_DECODER => raw.store(tag, payload)?,
            TAG_RESERVED_DEEP_DECODER => {} // defined but reserved; contents ignored
            other => warnings.push(format!(
                "skipped unknown section tag {other} ({} bytes)",
                payload.len()
            )),
        }
    }

    let geometry = decode_geometry(raw.get(TAG_GEOMETRY, "geometry")?)?;

    let payload = raw.get(TAG_FEATURE_FACTORS, "feature factors")?;
    let mut r = SectionReader::new(TAG_FEATURE_FACTORS, payload);
    let feature_rank = r.u32("rank")? as usize;
    let channels = r.u32("channel count")? as usize;
    let feature_factors = decode_factor_arrays(&mut r, &geometry, feature_rank)?;
    r.finish()?;

    let payload = raw.get(TAG_DENSITY_FACTORS, "density factors")?;
    let mut r = SectionReader::new(TAG_DENSITY_FACTORS, payload);
    let density_rank = r.u32("rank")? as usize;
    let raw_offset = r.f32("raw-density offset")?;
    let density_factors = decode_factor_arrays(&mut r, &geometry, density_rank)?;
    r.finish()?;

    let payload = raw.get(TAG_BASIS, "basis matrix")?;
    let mut r = SectionReader::new(TAG_BASIS, payload);
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| ParseError::BadSection {
        tag: TAG_BASIS,
        reason: format!("{rows}x{cols} matrix size overflows"),
    })?;
    let basis = Mat::from_vec(rows, cols, r.f32_array(count, "basis entries")?);
    r.finish()?;

    let payload = raw.get(TAG_NORM, "normalization state")?;
    if payload.len() != 8 * channels + 8 {
        return Err(ParseError::DimensionMismatch(format!(
            "normalization section holds {} bytes, but {channels} channels require {}",
            payload.len(),
            8 * channels + 8
        ))
        .into());
    }
    let mut r = SectionReader::new(TAG_NORM, payload);
    let running_mean = r.f32_array(channels, "running mean")?;
    let running_var = r.f32_array(channels, "running variance")?;
    let momentum = r.f32("momentum")?;
    let epsilon = r.f32("epsilon")?;
    r.finish()?;
    if !(0.0..=1.0).contains(&momentum) {
        return Err(r_err(TAG_NORM, format!("momentum {momentum} outside [0, 1]")));
    }
    if epsilon <= 0.0 {
        return Err(r_err(TAG_NORM, format!("epsilon {epsilon} must be positive")));
    }
    if let Some(v) = running_var.iter().find(|v| **v < 0.0) {
        return Err(r_err(TAG_NORM, format!("running variance {v} must be nonnegative")));
    }
    let mut norm = VolumeAdaptiveNorm::new(channels);
    norm.running_mean = running_mean;
    norm.running_var = running_var;
    norm.momentum = momentum;
    norm.epsilon = epsilon;

    let payload = raw.get(TAG_ATTENTION, "attention parameters")?;
    let mut r = SectionReader::new(TAG_ATTENTION, payload);
    let attn_in = r.u32("input channel count")? as usize;
    let attn_reduced = r.u32("reduced channel count")? as usize;
    let count = attn_reduced.checked_mul(attn_in).ok_or_else(|| ParseError::BadSection {
        tag: TAG_ATTENTION,
        reason: format!("{attn_reduced}x{attn_in} projection size overflows"),
    })?;
    let w_query = Mat::from_vec(attn_reduced, attn_in, r.f32_array(count, "query projection")?);
    let w_key = Mat::from_vec(attn_reduced, attn_in, r.f32_array(count, "key projection")?);
    let w_value = Mat::from_vec(attn_reduced, attn_in, r.f32_array(count, "value projection")?);
    r.finish()?;
    let attention = AttentionParams::new(w_query, w_key, w_value)
        .map_err(|e| section_error(TAG_ATTENTION, e))?;

    let payload = raw.get(TAG_DST, "restore convolution")?;
    let mut r = SectionReader::new(TAG_DST, payload);
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| ParseError::BadSection {
        tag: TAG_DST,
        reason: format!("{rows}x{cols} matrix size overflows"),
    })?;
    let conv = Mat::from_vec(rows, cols, r.f32_array(count, "convolution entries")?);
    r.finish()?;
    let dst = DstParams::new(conv).map_err(|e| section_error(TAG_DST, e))?;

    let payload = raw.get(TAG_DECODER, "decoder parameters")?;
    let mut r = SectionReader::new(TAG_DECODER, payload);
    let dec_channels = r.u32("channel count")? as usize;
    let count = dec_channels.checked_mul(3).ok_or_else(|| ParseError::BadSection {
        tag: TAG_DECODER,
        reason: format!("3x{dec_channels} weight size overflows"),
    })?;
    let weight = Mat::from_vec(3, dec_channels, r.f32_array(count, "weight entries")?);
    let bias_v = r.f32_array(3, "bias")?;
    let background_v = r.f32_array(3, "background")?;
    r.finish()?;
    let decoder = DecoderParams::new(
        weight,
        [bias_v[0], bias_v[1], bias_v[2]],
        [background_v[0], background_v[1], background_v[2]],
    )
    .map_err(|e| section_error(TAG_DECODER, e))?;

    if basis.rows() != channels {
        return Err(ParseError::DimensionMismatch(format!(
            "basis has {} rows, feature factor section declares {channels} channels",
            basis.rows()
        ))
        .into());
    }
    let features = VmFeatureField::new(geometry.clone(), feature_factors, basis)
        .map_err(|e| section_error(TAG_BASIS, e))?;
    let density = VmDensityField::new(geometry, density_factors, raw_offset);
    let model = Model::from_parts(density, features, norm, attention, dst, decoder)
        .map_err(|e| Error::Parse(ParseError::DimensionMismatch(e.to_string())))?;

    Ok(LoadedCheckpoint { model, warnings })
}

fn r_err(tag: u32, reason: String) -> Error {
    Error::Parse(ParseError::BadSection { tag, reason })
}

/// Reads and decodes `path`.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}

/// Lists `(tag, payload length)` pairs without decoding payloads — the
/// cheap inspection pass used by `info`-style tooling.
pub fn list_sections(bytes: &[u8]) -> Result<Vec<(u32, u64)>> {
    Ok(split_sections(bytes)?
        .into_iter()
        .map(|(tag, payload)| (tag, payload.len() as u64))
        .collect())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
