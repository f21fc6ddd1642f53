//! Style statistics and the deferred style transformation (DST).
//!
//! A style is summarized by channelwise second-order statistics of its
//! feature tensor: the global scalar mean `μ` and standard deviation `σ`
//! taken over every value, and the `C′ × C′` channel covariance whose
//! principal square root `T` acts as a whitening-free "recoloring" matrix.
//! Stylizing a rendered content feature map is then purely linear per pixel:
//!
//! ```text
//! out = conv · (T · f) · σ  +  w_r · μ
//! ```
//!
//! where `conv` restores the engine's channel count. Because every term is
//! linear in `f` and the `μ` term carries the accumulated ray weight, this
//! 2D operation commutes exactly with volume rendering: applying the same
//! transformation to every 3D sample and then integrating gives the same
//! image. [`apply_pointwise_style`] implements that 3D route independently
//! so the equivalence can be verified numerically instead of assumed.
//!
//! Multiple stylized maps can be blended — globally with convex weights
//! ([`interpolate_styles`]) or per pixel with masks that partition unity
//! ([`composite_styles`]) — while staying inside the same linear family.

use crate::decoder::RgbImage;
use crate::error::{Error, Result};
use crate::math::{symmetric_sqrt, Mat};
use crate::volume_renderer::FeatureMap;

/// A style's feature tensor: `channels` maps of `height × width` values,
/// stored row-major with channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeatures {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl StyleFeatures {
    pub fn zeros(width: usize, height: usize, channels: usize) -> StyleFeatures {
        StyleFeatures { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let base = (v * self.width + u) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Second-order statistics of a style: scalar mean and standard deviation
/// over the whole tensor, channel covariance, and its principal square root.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub mu: f64,
    pub sigma: f64,
    pub covariance: Mat,
    pub transform: Mat,
}

impl StyleStats {
    /// Channel count the stats were computed over.
    pub fn channels(&self) -> usize {
        self.transform.rows()
    }

    /// Stats whose transformation is the identity: `T = I`, `σ = 1`,
    /// `μ = 0`. Applying them changes nothing.
    pub fn identity(channels: usize) -> StyleStats {
        StyleStats {
            mu: 0.0,
            sigma: 1.0,
            covariance: Mat::identity(channels),
            transform: Mat::identity(channels),
        }
    }
}

/// Computes [`StyleStats`] from a style feature tensor. Variance and
/// covariance use the population convention (divide by the count). Requires
/// at least two pixels so the covariance is meaningful.
pub fn compute_style_stats(features: &StyleFeatures) -> Result<StyleStats> {
    let pixels = features.pixels();
    let c = features.channels;
    if c == 0 {
        return Err(Error::domain("style features need at least one channel".to_string()));
    }
    if pixels < 2 {
        return Err(Error::domain(format!(
            "style statistics need at least 2 pixels, got {pixels}"
        )));
    }
    if features.data.len() != pixels * c {
        return Err(Error::domain("style feature buffer length mismatch".to_string()));
    }
    if !features.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("style features"));
    }

    // Global scalar mean and population standard deviation over all values.
    let total = features.data.len() as f64;
    let mu = features.data.iter().sum::<f64>() / total;
    let var = features.data.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / total;
    let sigma = var.sqrt();

    // Per-channel means, then channel covariance across pixels.
    let mut channel_mean = vec![0.0; c];
    for row in features.data.chunks_exact(c) {
        for (m, x) in channel_mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in channel_mean.iter_mut() {
        *m /= pixels as f64;
    }
    let mut cov = Mat::zeros(c, c);
    for row in features.data.chunks_exact(c) {
        for i in 0..c {
            let di = row[i] - channel_mean[i];
            for j in i..c {
                cov[(i, j)] += di * (row[j] - channel_mean[j]);
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = cov[(i, j)] / pixels as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let transform = symmetric_sqrt(&cov)?;
    Ok(StyleStats { mu, sigma, covariance: cov, transform })
}

/// The learned linear channel restorer (`C × C′`), the 2D half of the style
/// pathway. Applied after `T`, it maps reduced style channels back to the
/// engine's feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct DstParams {
    pub conv: Mat,
}

impl DstParams {
    pub fn new(conv: Mat) -> Result<DstParams> {
        if conv.rows() == 0 || conv.cols() == 0 {
            return Err(Error::domain("conv matrix must be nonempty".to_string()));
        }
        if !conv.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("conv matrix"));
        }
        Ok(DstParams { conv })
    }

    /// A `C × C′` matrix that is the identity on the leading diagonal —
    /// the do-nothing restorer used for identity stylization and fresh
    /// models.
    pub fn identity_restore(output_channels: usize, input_channels: usize) -> Result<DstParams> {
        DstParams::new(Mat::from_fn(output_channels, input_channels, |i, j| {
            if i == j {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn output_channels(&self) -> usize {
        self.conv.rows()
    }

    pub fn input_channels(&self) -> usize {
        self.conv.cols()
    }
}

/// Applies the deferred style transformation to a rendered feature map:
/// per pixel, `out = conv · (T · f) · σ + w_r · μ` on `C′` input channels,
/// producing `conv.rows()` output channels. Ray weights carry over.
pub fn apply_dst(map: &FeatureMap, stats: &StyleStats, params: &DstParams) -> Result<FeatureMap> {
    if map.channels != stats.channels() {
        return Err(Error::domain(format!(
            "style transform expects {} channels, map has {}",
            stats.channels(),
            map.channels
        )));
    }
    if params.input_channels() != stats.channels() {
        return Err(Error::domain(format!(
            "conv expects {} input channels, style transform has {}",
            params.input_channels(),
            stats.channels()
        )));
    }
    let out_c = params.output_channels();
    let mut out = FeatureMap::zeros(map.width, map.height, out_c);
    out.ray_weight.copy_from_slice(&map.ray_weight);
    let mut styled = vec![0.0; map.channels];
    for v in 0..map.height {
        for u in 0..map.width {
            stats.transform.matvec_into(map.pixel(u, v), &mut styled);
            let wr = map.ray_weight_at(u, v);
            let dst = out.pixel_mut(u, v);
            for c in 0..out_c {
                let mut acc = 0.0;
                for (w, x) in params.conv.row(c).iter().zip(&styled) {
                    acc += w * x;
                }
                dst[c] = acc * stats.sigma + wr * stats.mu;
            }
        }
    }
    Ok(out)
}

/// The 3D route kept deliberately separate from [`apply_dst`]: styles each
/// sample's `C′`-vector individually (`conv · (T · f_i) · σ + μ` on every
/// channel) and integrates with the given weights, returning one ray's
/// styled `C`-vector. Rendering equivalence demands this equals the deferred
/// result computed from `Σ w_i f_i` and `Σ w_i`.
pub fn apply_pointwise_style(
    features: &[f64],
    weights: &[f64],
    stats: &StyleStats,
    params: &DstParams,
) -> Result<Vec<f64>> {
    let c_in = stats.channels();
    if params.input_channels() != c_in {
        return Err(Error::domain("conv and style transform disagree on channels".to_string()));
    }
    if weights.is_empty() || features.len() != weights.len() * c_in {
        return Err(Error::domain(format!(
            "feature buffer length {} does not match {} weights x {c_in} channels",
            features.len(),
            weights.len()
        )));
    }
    let c_out = params.output_channels();
    let mut integrated = vec![0.0; c_out];
    let mut styled_point = vec![0.0; c_in];
    for (i, &w) in weights.iter().enumerate() {
        let f = &features[i * c_in..(i + 1) * c_in];
        stats.transform.matvec_into(f, &mut styled_point);
        for c in 0..c_out {
            let mut acc = 0.0;
            for (k, x) in params.conv.row(c).iter().zip(&styled_point) {
                acc += k * x;
            }
            integrated[c] += w * (acc * stats.sigma + stats.mu);
        }
    }
    Ok(integrated)
}

/// Convex blend of stylized maps with global weights summing to 1 (within
/// `1e-6`). Maps whose weight is exactly zero are skipped, and a single
/// weight of exactly 1 returns that map unchanged — so weights `(1, 0)`
/// reproduce the first map bit for bit.
pub fn interpolate_styles(maps: &[&FeatureMap], weights: &[f64]) -> Result<FeatureMap> {
    if maps.is_empty() || maps.len() != weights.len() {
        return Err(Error::domain(format!(
            "need equally many maps and weights (nonzero), got {} and {}",
            maps.len(),
            weights.len()
        )));
    }
    let (w0, h0, c0) = (maps[0].width, maps[0].height, maps[0].channels);
    for m in maps {
        if m.width != w0 || m.height != h0 || m.channels != c0 {
            return Err(Error::domain("interpolation maps must share dimensions".to_string()));
        }
    }
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::NonFinite("interpolation weights"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "interpolation weights must sum to 1 within 1e-6, got {sum}"
        )));
    }
    let active: Vec<usize> = (0..maps.len()).filter(|&k| weights[k] != 0.0).collect();
    if active.len() == 1 && weights[active[0]] == 1.0 {
        return Ok(maps[active[0]].clone());
    }
    let mut out = FeatureMap::zeros(w0, h0, c0);
    for &k in &active {
        let wk = weights[k];
        for (o, x) in out.data.iter_mut().zip(&maps[k].data) {
            *o += wk * x;
        }
        for (o, x) in out.ray_weight.iter_mut().zip(&maps[k].ray_weight) {
            *o += wk * x;
        }
    }
    Ok(out)
}

/// Per-pixel composition of stylized maps under masks. Every mask has one
/// value per pixel in `[0, 1]`, and at each pixel the masks must partition
/// unity within `1e-6`. Zero mask values are skipped, so binary masks splice
/// source pixels exactly.
pub fn composite_styles(maps: &[&FeatureMap], masks: &[&[f64]]) -> Result<FeatureMap> {
    if maps.is_empty() || maps.len() != masks.len() {
        return Err(Error::domain(format!(
            "need equally many maps and masks (nonzero), got {} and {}",
            maps.len(),
            masks.len()
        )));
    }
    let (w0, h0, c0) = (maps[0].width, maps[0].height, maps[0].channels);
    let pixels = w0 * h0;
    for m in maps {
        if m.width != w0 || m.height != h0 || m.channels != c0 {
            return Err(Error::domain("composite maps must share dimensions".to_string()));
        }
    }
    for (k, mask) in masks.iter().enumerate() {
        if mask.len() != pixels {
            return Err(Error::domain(format!(
                "mask {k} has {} values, expected {pixels}",
                mask.len()
            )));
        }
        if !mask.iter().all(|m| m.is_finite() && (0.0..=1.0).contains(m)) {
            return Err(Error::domain(format!("mask {k} has values outside [0, 1]")));
        }
    }
    for p in 0..pixels {
        let sum: f64 = masks.iter().map(|m| m[p]).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!(
                "masks must partition unity at every pixel; pixel {p} sums to {sum}"
            )));
        }
    }
    let mut out = FeatureMap::zeros(w0, h0, c0);
    for p in 0..pixels {
        for (k, mask) in masks.iter().enumerate() {
            let mk = mask[p];
            if mk == 0.0 {
                continue;
            }
            if mk == 1.0 {
                out.data[p * c0..(p + 1) * c0].copy_from_slice(&maps[k].data[p * c0..(p + 1) * c0]);
                out.ray_weight[p] = maps[k].ray_weight[p];
                continue;
            }
            for c in 0..c0 {
                out.data[p * c0 + c] += mk * maps[k].data[p * c0 + c];
            }
            out.ray_weight[p] += mk * maps[k].ray_weight[p];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Style feature extraction
// ---------------------------------------------------------------------------

/// Largest Gaussian scale used by the filter bank.
const MAX_SIGMA: f64 = 4.0;

/// Minimum image side: the σ = 4 kernel spans `2·ceil(3σ) + 1 = 25` pixels.
pub const MIN_STYLE_IMAGE_SIDE: usize = 25;

/// Number of fixed filter-bank channels available.
pub const STYLE_BANK_CHANNELS: usize = 16;

/// Extracts multi-scale style features from an RGB image with a fixed,
/// deterministic linear filter bank, at half the input resolution.
///
/// The bank (Rec. 709 luma `Y = 0.2126 R + 0.7152 G + 0.0722 B`; `G_σ` is a
/// separable Gaussian blur with radius `ceil(3σ)` and replicate padding;
/// derivatives are central differences with replicate padding):
///
/// | ch | content                         | ch | content                        |
/// |----|---------------------------------|----|--------------------------------|
/// | 0  | `G_1` Y                         | 8  | `G_1` Y − `G_2` Y              |
/// | 1  | `G_1` R                         | 9  | `G_2` Y − `G_4` Y              |
/// | 2  | `G_1` G                         | 10 | `(∂x + ∂y)/√2` of `G_1` Y      |
/// | 3  | `G_1` B                         | 11 | `(∂x − ∂y)/√2` of `G_1` Y      |
/// | 4  | `∂x` of `G_1` Y                 | 12 | `G_1` R − `G_2` R              |
/// | 5  | `∂y` of `G_1` Y                 | 13 | `G_1` G − `G_2` G              |
/// | 6  | `∂x` of `G_2` Y                 | 14 | `G_1` B − `G_2` B              |
/// | 7  | `∂y` of `G_2` Y                 | 15 | `G_4` Y                        |
///
/// The first `channels` of the bank are returned. Requires
/// `channels ≤ 16` and both image sides at least [`MIN_STYLE_IMAGE_SIDE`]
/// so every kernel fits.
pub fn extract_style_features(image: &RgbImage, channels: usize) -> Result<StyleFeatures> {
    if channels == 0 || channels > STYLE_BANK_CHANNELS {
        return Err(Error::domain(format!(
            "style extraction supports 1..={STYLE_BANK_CHANNELS} channels, got {channels}"
        )));
    }
    let (w, h) = (image.width, image.height);
    if w < MIN_STYLE_IMAGE_SIDE || h < MIN_STYLE_IMAGE_SIDE {
        return Err(Error::domain(format!(
            "style image must be at least {MIN_STYLE_IMAGE_SIDE}x{MIN_STYLE_IMAGE_SIDE} \
             for the largest (σ = {MAX_SIGMA}) kernel, got {w}x{h}"
        )));
    }
    if image.data.len() != w * h * 3 {
        return Err(Error::domain("image buffer length mismatch".to_string()));
    }
    if !image.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("style image"));
    }

    let plane = |c: usize| -> Vec<f64> { image.data.iter().skip(c).step_by(3).cloned().collect() };
    let r = plane(0);
    let g = plane(1);
    let b = plane(2);
    let mut luma = vec![0.0; w * h];
    for i in 0..w * h {
        luma[i] = 0.2126 * r[i] + 0.7152 * g[i] + 0.0722 * b[i];
    }

    let blur = |src: &[f64], sigma: f64| gaussian_blur(src, w, h, sigma);
    let y1 = blur(&luma, 1.0);
    let y2 = blur(&luma, 2.0);
    let y4 = blur(&luma, 4.0);
    let r1 = blur(&r, 1.0);
    let g1 = blur(&g, 1.0);
    let b1 = blur(&b, 1.0);
    let r2 = blur(&r, 2.0);
    let g2 = blur(&g, 2.0);
    let b2 = blur(&b, 2.0);
    let (y1x, y1y) = central_gradient(&y1, w, h);
    let (y2x, y2y) = central_gradient(&y2, w, h);

    let sub = |a: &[f64], c: &[f64]| -> Vec<f64> { a.iter().zip(c).map(|(x, y)| x - y).collect() };
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let diag_sum: Vec<f64> = y1x.iter().zip(&y1y).map(|(x, y)| (x + y) * inv_sqrt2).collect();
    let diag_diff: Vec<f64> = y1x.iter().zip(&y1y).map(|(x, y)| (x - y) * inv_sqrt2).collect();

    let bank: [&[f64]; STYLE_BANK_CHANNELS] = [
        &y1,
        &r1,
        &g1,
        &b1,
        &y1x,
        &y1y,
        &y2x,
        &y2y,
        &sub(&y1, &y2),
        &sub(&y2, &y4),
        &diag_sum,
        &diag_diff,
        &sub(&r1, &r2),
        &sub(&g1, &g2),
        &sub(&b1, &b2),
        &y4,
    ];

    // Half resolution: keep even-indexed rows and columns.
    let (hw, hh) = (w / 2, h / 2);
    let mut out = StyleFeatures::zeros(hw, hh, channels);
    for v in 0..hh {
        for u in 0..hw {
            let src = (2 * v) * w + 2 * u;
            let base = (v * hw + u) * channels;
            for c in 0..channels {
                out.data[base + c] = bank[c][src];
            }
        }
    }
    Ok(out)
}

/// Separable Gaussian blur with replicate padding. Kernel radius `ceil(3σ)`,
/// weights `exp(-i²/2σ²)` normalized to sum 1.
fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }

    // Horizontal pass.
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += k * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Central-difference gradients with replicate padding.
fn central_gradient(src: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xp = (x + 1).min(w - 1);
            let xm = x.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            let ym = y.saturating_sub(1);
            dx[y * w + x] = 0.5 * (src[y * w + xp] - src[y * w + xm]);
            dy[y * w + x] = 0.5 * (src[yp * w + x] - src[ym * w + x]);
        }
    }
    (dx, dy)
}
