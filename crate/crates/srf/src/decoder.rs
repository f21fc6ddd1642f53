//! Linear feature-to-RGB decoding.
//!
//! A rendered feature map turns into color through a single affine map per
//! pixel — `rgb = W f + b` — composited over a constant background using the
//! accumulated ray weight, then clamped to `[0, 1]`:
//!
//! ```text
//! out = clamp(W f + b + (1 - w_r) · background, 0, 1)
//! ```
//!
//! Keeping the decoder linear is what lets a 2D style transformation applied
//! to the feature map commute exactly with the rendering integral.
//! [`fit_decoder`] recovers `(W, b)` from rendered maps and reference images
//! by ridge-regularized least squares on foreground pixels.

use crate::error::{Error, Result};
use crate::math::{cholesky_solve, Mat};
use crate::volume_renderer::FeatureMap;

/// Plain RGB image with `f64` channels, nominally in `[0, 1]`. Row-major,
/// channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn zeros(width: usize, height: usize) -> RgbImage {
        RgbImage { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let base = (v * self.width + u) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let base = (v * self.width + u) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Decoder parameters: a `3 × C` weight matrix, per-channel bias, and the
/// background color blended in by `(1 - w_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub weight: Mat,
    pub bias: [f64; 3],
    pub background: [f64; 3],
}

impl DecoderParams {
    pub fn new(weight: Mat, bias: [f64; 3], background: [f64; 3]) -> Result<DecoderParams> {
        if weight.rows() != 3 {
            return Err(Error::domain(format!(
                "decoder weight must have 3 rows, got {}",
                weight.rows()
            )));
        }
        if weight.cols() == 0 {
            return Err(Error::domain("decoder weight needs at least one input channel".to_string()));
        }
        if !weight.data().iter().all(|v| v.is_finite())
            || !bias.iter().all(|v| v.is_finite())
            || !background.iter().all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("decoder parameters"));
        }
        Ok(DecoderParams { weight, bias, background })
    }

    pub fn channels(&self) -> usize {
        self.weight.cols()
    }
}

/// Decodes a feature map to RGB. The affine map runs unclamped; background
/// compositing happens before the single final clamp, so a fully transparent
/// pixel shows `clamp(bias + background)`.
pub fn decode(map: &FeatureMap, params: &DecoderParams) -> Result<RgbImage> {
    if map.channels != params.channels() {
        return Err(Error::domain(format!(
            "decoder expects {} channels, map has {}",
            params.channels(),
            map.channels
        )));
    }
    let mut out = RgbImage::zeros(map.width, map.height);
    let mut rgb = [0.0; 3];
    for v in 0..map.height {
        for u in 0..map.width {
            let f = map.pixel(u, v);
            let wr = map.ray_weight_at(u, v);
            for c in 0..3 {
                let mut acc = params.bias[c] + (1.0 - wr) * params.background[c];
                for (w, x) in params.weight.row(c).iter().zip(f) {
                    acc += w * x;
                }
                rgb[c] = acc.clamp(0.0, 1.0);
            }
            out.set_pixel(u, v, rgb);
        }
    }
    Ok(out)
}

/// Fits decoder weights and bias by least squares over the foreground pixels
/// (`w_r > 0.5`) of one or more rendered maps against reference images.
/// Background contribution `(1 - w_r) · bg` is subtracted from the targets
/// so the solve sees the pure affine relation. A tiny ridge (`1e-8`) keeps
/// rank-deficient feature maps solvable without visibly biasing
/// well-conditioned fits. Returns the parameters and the mean squared
/// residual over the foreground pixels.
pub fn fit_decoder(
    maps: &[&FeatureMap],
    targets: &[&RgbImage],
    background: [f64; 3],
) -> Result<(DecoderParams, f64)> {
    if maps.is_empty() || maps.len() != targets.len() {
        return Err(Error::domain(format!(
            "need equally many maps and targets, got {} and {}",
            maps.len(),
            targets.len()
        )));
    }
    let channels = maps[0].channels;
    for (map, target) in maps.iter().zip(targets) {
        if map.channels != channels {
            return Err(Error::domain("all maps must share a channel count".to_string()));
        }
        if map.width != target.width || map.height != target.height {
            return Err(Error::domain(format!(
                "map {}x{} does not match target {}x{}",
                map.width, map.height, target.width, target.height
            )));
        }
    }

    // Accumulate normal equations over foreground pixels: unknowns are the C
    // weights plus the bias, per output channel.
    let dim = channels + 1;
    let mut normal = Mat::zeros(dim, dim);
    let mut rhs = vec![vec![0.0; dim]; 3];
    let mut foreground = 0usize;
    let mut row = vec![0.0; dim];
    for (map, target) in maps.iter().zip(targets) {
        for v in 0..map.height {
            for u in 0..map.width {
                let wr = map.ray_weight_at(u, v);
                if wr <= 0.5 {
                    continue;
                }
                foreground += 1;
                row[..channels].copy_from_slice(map.pixel(u, v));
                row[channels] = 1.0;
                for i in 0..dim {
                    for j in i..dim {
                        normal[(i, j)] += row[i] * row[j];
                    }
                }
                let t = target.pixel(u, v);
                for c in 0..3 {
                    let y = t[c] - (1.0 - wr) * background[c];
                    for i in 0..dim {
                        rhs[c][i] += row[i] * y;
                    }
                }
            }
        }
    }
    if foreground < dim {
        return Err(Error::domain(format!(
            "decoder fit needs at least {dim} foreground pixels (w_r > 0.5), found {foreground}"
        )));
    }
    for i in 0..dim {
        for j in 0..i {
            normal[(i, j)] = normal[(j, i)];
        }
        normal[(i, i)] += 1e-8;
    }
    let solutions = cholesky_solve(&normal, &rhs)?;
    let weight = Mat::from_fn(3, channels, |c, j| solutions[c][j]);
    let bias = [solutions[0][channels], solutions[1][channels], solutions[2][channels]];
    let params = DecoderParams::new(weight, bias, background)?;

    // Residual of the recovered affine map over the same foreground pixels.
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for (map, target) in maps.iter().zip(targets) {
        for v in 0..map.height {
            for u in 0..map.width {
                let wr = map.ray_weight_at(u, v);
                if wr <= 0.5 {
                    continue;
                }
                let f = map.pixel(u, v);
                let t = target.pixel(u, v);
                for c in 0..3 {
                    let mut pred = params.bias[c];
                    for (w, x) in params.weight.row(c).iter().zip(f) {
                        pred += w * x;
                    }
                    let y = t[c] - (1.0 - wr) * background[c];
                    sq_sum += (pred - y) * (pred - y);
                    count += 1;
                }
            }
        }
    }
    Ok((params, sq_sum / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SplitMix64;

    fn map_with(width: usize, height: usize, channels: usize, seed: u64, wr: impl Fn(usize, usize) -> f64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        let mut map = FeatureMap::zeros(width, height, channels);
        for v in map.data.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        for v in 0..height {
            for u in 0..width {
                map.ray_weight[v * width + u] = wr(u, v);
            }
        }
        map
    }

    #[test]
    fn empty_ray_weight_reproduces_background() {
        let map = FeatureMap::zeros(4, 3, 5); // all features and weights zero
        let params = DecoderParams::new(
            Mat::from_fn(3, 5, |_, _| 9.9),
            [0.0; 3],
            [0.25, 0.5, 0.75],
        )
        .unwrap();
        let img = decode(&map, &params).unwrap();
        for v in 0..3 {
            for u in 0..4 {
                assert_eq!(img.pixel(u, v), [0.25, 0.5, 0.75]);
            }
        }
    }

    #[test]
    fn decode_applies_affine_map_and_clamps() {
        let mut map = FeatureMap::zeros(2, 1, 2);
        map.ray_weight = vec![1.0, 1.0];
        map.data = vec![0.5, -0.25, 3.0, 0.0];
        let params = DecoderParams::new(
            Mat::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            [0.1, 0.5, 0.0],
            [1.0; 3],
        )
        .unwrap();
        let img = decode(&map, &params).unwrap();
        // Pixel 0: (0.5+0.1, -0.25+0.5, 0.25+0.0) — all in range.
        let p0 = img.pixel(0, 0);
        assert!((p0[0] - 0.6).abs() < 1e-12);
        assert!((p0[1] - 0.25).abs() < 1e-12);
        assert!((p0[2] - 0.25).abs() < 1e-12);
        // Pixel 1: red channel 3.1 clamps to 1.
        let p1 = img.pixel(1, 0);
        assert_eq!(p1[0], 1.0);
    }

    #[test]
    fn decode_rejects_channel_mismatch() {
        let map = FeatureMap::zeros(2, 2, 4);
        let params =
            DecoderParams::new(Mat::zeros(3, 5), [0.0; 3], [0.0; 3]).unwrap();
        assert!(decode(&map, &params).is_err());
    }

    #[test]
    fn fit_recovers_planted_decoder() {
        let channels = 6;
        let mut rng = SplitMix64::new(42);
        let true_w = Mat::from_fn(3, channels, |_, _| rng.uniform(-0.3, 0.3));
        let true_b = [0.4, 0.5, 0.6];
        let bg = [1.0, 0.9, 0.8];
        // Two views with varying ray weights in (0.6, 1.0).
        let mut maps = Vec::new();
        let mut targets = Vec::new();
        for view in 0..2u64 {
            let map = map_with(9, 7, channels, 100 + view, |u, v| 0.6 + 0.4 * ((u * 13 + v * 7) % 10) as f64 / 10.0);
            let mut target = RgbImage::zeros(9, 7);
            for v in 0..7 {
                for u in 0..9 {
                    let f = map.pixel(u, v);
                    let wr = map.ray_weight_at(u, v);
                    let mut rgb = [0.0; 3];
                    for c in 0..3 {
                        let mut acc = true_b[c] + (1.0 - wr) * bg[c];
                        for (w, x) in true_w.row(c).iter().zip(f) {
                            acc += w * x;
                        }
                        rgb[c] = acc; // stays inside [0,1] by construction
                    }
                    target.set_pixel(u, v, rgb);
                }
            }
            maps.push(map);
            targets.push(target);
        }
        let map_refs: Vec<&FeatureMap> = maps.iter().collect();
        let target_refs: Vec<&RgbImage> = targets.iter().collect();
        let (params, residual) = fit_decoder(&map_refs, &target_refs, bg).unwrap();
        assert!(params.weight.max_abs_diff(&true_w) < 1e-6);
        for c in 0..3 {
            assert!((params.bias[c] - true_b[c]).abs() < 1e-6);
        }
        assert!(residual < 1e-12);
    }

    #[test]
    fn all_zero_features_fit_bias_to_mean_target() {
        let mut map = FeatureMap::zeros(4, 4, 3);
        map.ray_weight = vec![1.0; 16];
        let mut target = RgbImage::zeros(4, 4);
        let mut rng = SplitMix64::new(5);
        for v in 0..4 {
            for u in 0..4 {
                target.set_pixel(u, v, [rng.uniform(0.2, 0.8), 0.5, rng.uniform(0.2, 0.8)]);
            }
        }
        let (params, _) = fit_decoder(&[&map], &[&target], [0.0; 3]).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..16).map(|i| target.data[i * 3 + c]).sum::<f64>() / 16.0;
            assert!((params.bias[c] - mean).abs() < 1e-6, "channel {c}");
        }
    }

    #[test]
    fn ridge_matches_unridged_solution_on_well_conditioned_data() {
        let channels = 4;
        let map = map_with(8, 8, channels, 7, |_, _| 1.0);
        let mut target = RgbImage::zeros(8, 8);
        let mut rng = SplitMix64::new(8);
        for i in 0..target.data.len() {
            target.data[i] = rng.uniform(0.0, 1.0);
        }
        let (_, ridged) = fit_decoder(&[&map], &[&target], [0.0; 3]).unwrap();

        // Independent unridged solve of the same normal equations.
        let dim = channels + 1;
        let mut normal = Mat::zeros(dim, dim);
        let mut rhs = vec![vec![0.0; dim]; 3];
        for v in 0..8 {
            for u in 0..8 {
                let mut row = map.pixel(u, v).to_vec();
                row.push(1.0);
                for i in 0..dim {
                    for j in 0..dim {
                        normal[(i, j)] += row[i] * row[j];
                    }
                }
                let t = target.pixel(u, v);
                for c in 0..3 {
                    for i in 0..dim {
                        rhs[c][i] += row[i] * t[c];
                    }
                }
            }
        }
        let beta = cholesky_solve(&normal, &rhs).unwrap();
        let mut sq = 0.0;
        for v in 0..8 {
            for u in 0..8 {
                let f = map.pixel(u, v);
                let t = target.pixel(u, v);
                for c in 0..3 {
                    let mut pred = beta[c][channels];
                    for j in 0..channels {
                        pred += beta[c][j] * f[j];
                    }
                    sq += (pred - t[c]) * (pred - t[c]);
                }
            }
        }
        let unridged = sq / (64.0 * 3.0);
        assert!((ridged - unridged).abs() < 1e-6);
    }

    #[test]
    fn rank_deficient_features_still_fit() {
        // Two identical channels: XᵀX is singular without the ridge.
        let mut map = FeatureMap::zeros(6, 6, 2);
        map.ray_weight = vec![1.0; 36];
        let mut rng = SplitMix64::new(9);
        for p in 0..36 {
            let x = rng.uniform(-1.0, 1.0);
            map.data[p * 2] = x;
            map.data[p * 2 + 1] = x;
        }
        let mut target = RgbImage::zeros(6, 6);
        for i in 0..target.data.len() {
            target.data[i] = rng.uniform(0.0, 1.0);
        }
        let (params, residual) = fit_decoder(&[&map], &[&target], [0.0; 3]).unwrap();
        assert!(params.weight.data().iter().all(|v| v.is_finite()));
        assert!(residual.is_finite());
    }

    #[test]
    fn too_few_foreground_pixels_is_a_domain_error() {
        let map = FeatureMap::zeros(4, 4, 8); // all ray weights zero
        let target = RgbImage::zeros(4, 4);
        match fit_decoder(&[&map], &[&target], [0.0; 3]) {
            Err(Error::Domain(msg)) => assert!(msg.contains("foreground")),
            other => panic!("expected domain error, got {other:?}"),
        }
    }
}
