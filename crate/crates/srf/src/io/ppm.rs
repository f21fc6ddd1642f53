//! Binary PPM (`P6`) image I/O — the contractual image format.
//!
//! The writer always emits the canonical header `P6\n{width} {height}\n255\n`
//! (tokens separated by single whitespace characters, maxval fixed at 255)
//! followed by interleaved RGB bytes, each `round(clamp(x, 0, 1) · 255)`.
//! The reader accepts the standard liberties — runs of whitespace and `#`
//! comments between header tokens — but requires maxval 255 and an exact
//! raster length, and never panics on malformed input.

use std::fs;
use std::path::Path;

use crate::decoder::RgbImage;
use crate::error::{ParseError, Result};

/// Quantizes one linear channel value to a byte: `round(clamp(x, 0, 1)·255)`.
/// Non-finite values clamp to 0 so a pathological render still writes a
/// structurally valid image.
pub fn quantize(x: f64) -> u8 {
    if !(x > 0.0) {
        // Catches NaN as well as everything ≤ 0.
        return 0;
    }
    (x.min(1.0) * 255.0).round() as u8
}

/// Serializes an image to P6 bytes.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.width * image.height * 3);
    for v in 0..image.height {
        for u in 0..image.width {
            for c in image.pixel(u, v) {
                out.push(quantize(c));
            }
        }
    }
    out
}

pub fn save_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

/// Byte cursor over the PPM header. Whitespace runs and `#` comments
/// separate tokens, per the format's grammar.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    /// Parses one unsigned decimal header token.
    fn integer(&mut self, what: &str) -> Result<u64> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ParseError::MalformedHeader(format!(
                "expected a decimal {what} at byte {start}"
            ))
            .into());
        }
        if self.pos - start > 10 {
            return Err(ParseError::ValueOutOfRange(format!("{what} has too many digits")).into());
        }
        let mut value: u64 = 0;
        for &b in &self.bytes[start..self.pos] {
            value = value * 10 + u64::from(b - b'0');
        }
        Ok(value)
    }
}

/// Decodes P6 bytes into a linear-channel image (each byte becomes `v/255`).
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 {
        return Err(ParseError::Truncated { context: "file shorter than the 2-byte magic".to_string() }.into());
    }
    if &bytes[..2] != b"P6" {
        return Err(ParseError::BadMagic {
            expected: [b'P', b'6', b' ', b' '],
            found: [bytes[0], bytes[1], b' ', b' '],
        }
        .into());
    }
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    let width = cursor.integer("width")?;
    let height = cursor.integer("height")?;
    let maxval = cursor.integer("maxval")?;
    if width == 0 || height == 0 {
        return Err(ParseError::ValueOutOfRange(format!(
            "image dimensions must be nonzero, got {width}x{height}"
        ))
        .into());
    }
    if maxval != 255 {
        return Err(ParseError::ValueOutOfRange(format!("maxval must be 255, got {maxval}")).into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => {
            return Err(ParseError::MalformedHeader(
                "maxval must be followed by a single whitespace byte".to_string(),
            )
            .into())
        }
    }
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| ParseError::ValueOutOfRange(format!("{width}x{height} raster overflows")))?;
    let raster = &bytes[cursor.pos..];
    if (raster.len() as u64) < expected {
        return Err(ParseError::Truncated {
            context: format!("raster holds {} of {expected} bytes", raster.len()),
        }
        .into());
    }
    if raster.len() as u64 > expected {
        return Err(ParseError::DimensionMismatch(format!(
            "{} trailing bytes after the {expected}-byte raster",
            raster.len() as u64 - expected
        ))
        .into());
    }
    let (width, height) = (width as usize, height as usize);
    let mut image = RgbImage::zeros(width, height);
    for (i, chunk) in raster.chunks_exact(3).enumerate() {
        let (u, v) = (i % width, i / width);
        image.set_pixel(
            u,
            v,
            [
                f64::from(chunk[0]) / 255.0,
                f64::from(chunk[1]) / 255.0,
                f64::from(chunk[2]) / 255.0,
            ],
        );
    }
    Ok(image)
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path)?;
    decode_ppm(&bytes)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
