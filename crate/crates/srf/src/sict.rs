//! Sampling-invariant content transformation (SICT).
//!
//! Stylization needs a learned transformation of per-point features, but any
//! statistic computed over the particular set of ray samples in a batch
//! would make a 3D point's transformed feature depend on which other points
//! happened to be sampled with it — breaking multi-view consistency. SICT
//! avoids that by composing two strictly per-point operations:
//!
//! 1. **Volume-adaptive normalization** — channelwise whitening using
//!    *running* statistics accumulated over the whole volume during a
//!    calibration pass, not the statistics of the current batch. In
//!    evaluation mode the operation is a pure function of one point.
//! 2. **Channel attention** — for each point, query/key/value projections of
//!    its own feature vector form a `C′ × C′` attention matrix (row softmax
//!    of `q kᵀ / √C′`) that remixes the value vector. No cross-point terms.
//!
//! The diagnostic [`apply_sict_batch_stats`] deliberately normalizes with the
//! current batch's statistics instead; the verification harness uses it to
//! demonstrate the inconsistency running statistics exist to prevent.

use crate::error::{Error, Result};
use crate::math::{softmax_in_place, Mat};
use crate::volume_renderer::{PointBatch, PointTransform, VolumeSource};
use crate::math::{SplitMix64, Vec3};

/// Whether normalization consumes batch statistics (accumulating them into
/// the running estimates) or applies the frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Channelwise normalization state with running mean/variance estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeAdaptiveNorm {
    channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: NormMode,
}

impl VolumeAdaptiveNorm {
    /// Fresh state: zero mean, unit variance, momentum 0.1, epsilon 1e-5,
    /// evaluation mode.
    pub fn new(channels: usize) -> VolumeAdaptiveNorm {
        VolumeAdaptiveNorm {
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: NormMode::Eval,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn validate(&self) -> Result<()> {
        if self.running_mean.len() != self.channels || self.running_var.len() != self.channels {
            return Err(Error::domain("normalization state has inconsistent channel count".to_string()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::domain(format!("momentum must be in [0, 1], got {}", self.momentum)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::domain("running variance must be nonnegative".to_string()));
        }
        Ok(())
    }

    /// Channelwise mean and (population) variance of `count` points stored
    /// row-major in `points`.
    pub fn batch_stats(&self, points: &[f64], count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if count == 0 {
            return Err(Error::domain("batch statistics need at least one point".to_string()));
        }
        if points.len() != count * self.channels {
            return Err(Error::domain(format!(
                "point buffer length {} does not match {count} x {} channels",
                points.len(),
                self.channels
            )));
        }
        let mut mean = vec![0.0; self.channels];
        for row in points.chunks_exact(self.channels) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; self.channels];
        for row in points.chunks_exact(self.channels) {
            for c in 0..self.channels {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= count as f64;
        }
        Ok((mean, var))
    }

    /// Normalizes a batch of `count` points. In train mode the batch's own
    /// statistics are used and folded into the running estimates
    /// (`running ← (1 - momentum) · running + momentum · batch`); in eval
    /// mode each point is normalized independently with the frozen running
    /// statistics, making the result invariant to how points are batched.
    pub fn normalize(&mut self, points: &[f64], count: usize) -> Result<Vec<f64>> {
        self.validate()?;
        match self.mode {
            NormMode::Train => {
                let (mean, var) = self.batch_stats(points, count)?;
                for c in 0..self.channels {
                    self.running_mean[c] =
                        (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                    self.running_var[c] =
                        (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c];
                }
                Ok(normalize_with(points, self.channels, &mean, &var, self.epsilon))
            }
            NormMode::Eval => {
                if points.len() != count * self.channels {
                    return Err(Error::domain("point buffer length mismatch".to_string()));
                }
                let mut out = vec![0.0; points.len()];
                for (row_in, row_out) in points
                    .chunks_exact(self.channels)
                    .zip(out.chunks_exact_mut(self.channels))
                {
                    self.normalize_point(row_in, row_out);
                }
                Ok(out)
            }
        }
    }

    /// Pure per-point normalization with the running statistics — the eval
    /// path. Identical arithmetic regardless of any surrounding batch, which
    /// is what makes the whole transform sampling-invariant.
    pub fn normalize_point(&self, x: &[f64], out: &mut [f64]) {
        for c in 0..self.channels {
            out[c] = (x[c] - self.running_mean[c]) / (self.running_var[c] + self.epsilon).sqrt();
        }
    }
}

fn normalize_with(points: &[f64], channels: usize, mean: &[f64], var: &[f64], epsilon: f64) -> Vec<f64> {
    let mut out = vec![0.0; points.len()];
    for (row_in, row_out) in points.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        for c in 0..channels {
            row_out[c] = (row_in[c] - mean[c]) / (var[c] + epsilon).sqrt();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Channel attention
// ---------------------------------------------------------------------------

/// Projection matrices for per-point channel attention. Each is `C′ × C`
/// with `C′ ≤ C`; the output has `C′` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    w_query: Mat,
    w_key: Mat,
    w_value: Mat,
}

impl AttentionParams {
    pub fn new(w_query: Mat, w_key: Mat, w_value: Mat) -> Result<AttentionParams> {
        let (r, c) = (w_query.rows(), w_query.cols());
        for (name, m) in [("key", &w_key), ("value", &w_value)] {
            if m.rows() != r || m.cols() != c {
                return Err(Error::domain(format!(
                    "attention {name} projection must be {r}x{c}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if r == 0 || c == 0 {
            return Err(Error::domain("attention projections must be nonempty".to_string()));
        }
        if r > c {
            return Err(Error::domain(format!(
                "reduced channel count {r} must not exceed input channels {c}"
            )));
        }
        Ok(AttentionParams { w_query, w_key, w_value })
    }

    /// Deterministic, seed-free default: every projection is the first `C′`
    /// rows of the `C×C` identity, so attention initially passes the leading
    /// channels through (softmax mixing aside) and needs no calibration data.
    pub fn identity_rows(channels: usize, reduced: usize) -> Result<AttentionParams> {
        let make = || Mat::from_fn(reduced, channels, |r, c| if r == c { 1.0 } else { 0.0 });
        AttentionParams::new(make(), make(), make())
    }

    /// Seeded uniform initialization in `[-s, s]` with `s = 1/√C`.
    pub fn seeded(channels: usize, reduced: usize, rng: &mut SplitMix64) -> Result<AttentionParams> {
        let s = 1.0 / (channels as f64).sqrt();
        let mut make = || Mat::from_fn(reduced, channels, |_, _| rng.uniform(-s, s));
        let q = make();
        let k = make();
        let v = make();
        AttentionParams::new(q, k, v)
    }

    pub fn input_channels(&self) -> usize {
        self.w_query.cols()
    }

    pub fn reduced_channels(&self) -> usize {
        self.w_query.rows()
    }

    pub fn w_query(&self) -> &Mat {
        &self.w_query
    }

    pub fn w_key(&self) -> &Mat {
        &self.w_key
    }

    pub fn w_value(&self) -> &Mat {
        &self.w_value
    }

    /// Attention for a single point: `out = softmax_rows(q kᵀ / √C′) · v`
    /// where `q`, `k`, `v` are this point's own projections. Everything is a
    /// function of `x` alone.
    pub fn apply_point(&self, x: &[f64], out: &mut [f64]) {
        let reduced = self.reduced_channels();
        debug_assert_eq!(x.len(), self.input_channels());
        debug_assert_eq!(out.len(), reduced);
        let q = self.w_query.matvec(x);
        let k = self.w_key.matvec(x);
        let v = self.w_value.matvec(x);
        let scale = 1.0 / (reduced as f64).sqrt();
        let mut row = vec![0.0; reduced];
        for i in 0..reduced {
            for j in 0..reduced {
                row[j] = q[i] * k[j] * scale;
            }
            softmax_in_place(&mut row);
            let mut acc = 0.0;
            for j in 0..reduced {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Composed transform
// ---------------------------------------------------------------------------

/// Applies SICT to every valid point of a batch: normalization followed by
/// channel attention. Invalid (culled) points produce zero rows. Output is
/// row-major `N × C′`.
pub fn apply_sict(
    batch: &PointBatch,
    norm: &mut VolumeAdaptiveNorm,
    attention: &AttentionParams,
) -> Result<Vec<f64>> {
    check_compatible(batch.channels, norm, attention)?;
    let reduced = attention.reduced_channels();
    let n = batch.len();
    let valid_rows: Vec<usize> = (0..n).filter(|i| batch.valid[*i]).collect();
    let mut packed = Vec::with_capacity(valid_rows.len() * batch.channels);
    for &i in &valid_rows {
        packed.extend_from_slice(batch.feature(i));
    }
    let mut out = vec![0.0; n * reduced];
    if valid_rows.is_empty() {
        return Ok(out);
    }
    let normed = norm.normalize(&packed, valid_rows.len())?;
    for (slot, &i) in valid_rows.iter().enumerate() {
        let row = &normed[slot * batch.channels..(slot + 1) * batch.channels];
        attention.apply_point(row, &mut out[i * reduced..(i + 1) * reduced]);
    }
    Ok(out)
}

/// Diagnostic variant that normalizes with the *current batch's* statistics
/// even though no training is happening (running state is left untouched).
/// This is what a naive instance normalization would compute; the verify
/// harness uses it to show that a point's output then depends on its batch
/// companions, which is exactly the artifact running statistics avoid.
pub fn apply_sict_batch_stats(
    batch: &PointBatch,
    norm: &VolumeAdaptiveNorm,
    attention: &AttentionParams,
) -> Result<Vec<f64>> {
    check_compatible(batch.channels, norm, attention)?;
    let reduced = attention.reduced_channels();
    let n = batch.len();
    let valid_rows: Vec<usize> = (0..n).filter(|i| batch.valid[*i]).collect();
    let mut out = vec![0.0; n * reduced];
    if valid_rows.is_empty() {
        return Ok(out);
    }
    let mut packed = Vec::with_capacity(valid_rows.len() * batch.channels);
    for &i in &valid_rows {
        packed.extend_from_slice(batch.feature(i));
    }
    let (mean, var) = norm.batch_stats(&packed, valid_rows.len())?;
    let normed = normalize_with(&packed, batch.channels, &mean, &var, norm.epsilon);
    for (slot, &i) in valid_rows.iter().enumerate() {
        let row = &normed[slot * batch.channels..(slot + 1) * batch.channels];
        attention.apply_point(row, &mut out[i * reduced..(i + 1) * reduced]);
    }
    Ok(out)
}

fn check_compatible(
    channels: usize,
    norm: &VolumeAdaptiveNorm,
    attention: &AttentionParams,
) -> Result<()> {
    if norm.channels() != channels {
        return Err(Error::domain(format!(
            "normalization expects {} channels, batch has {channels}",
            norm.channels()
        )));
    }
    if attention.input_channels() != channels {
        return Err(Error::domain(format!(
            "attention expects {} input channels, batch has {channels}",
            attention.input_channels()
        )));
    }
    Ok(())
}

/// SICT as a renderer [`PointTransform`]. Construction requires eval mode:
/// only the per-point path may feed the rendering integral.
#[derive(Debug)]
pub struct SictTransform<'a> {
    norm: &'a VolumeAdaptiveNorm,
    attention: &'a AttentionParams,
}

impl<'a> SictTransform<'a> {
    pub fn new(norm: &'a VolumeAdaptiveNorm, attention: &'a AttentionParams) -> Result<SictTransform<'a>> {
        if norm.mode != NormMode::Eval {
            return Err(Error::Contract(
                "rendering with SICT requires eval-mode normalization state".to_string(),
            ));
        }
        if norm.channels() != attention.input_channels() {
            return Err(Error::domain(format!(
                "normalization channels {} do not match attention input {}",
                norm.channels(),
                attention.input_channels()
            )));
        }
        Ok(SictTransform { norm, attention })
    }
}

impl PointTransform for SictTransform<'_> {
    fn check_channels(&self, input_channels: usize) -> Result<usize> {
        check_compatible(input_channels, self.norm, self.attention)?;
        Ok(self.attention.reduced_channels())
    }

    fn apply(&self, input: &[f64], output: &mut [f64]) {
        let mut normed = vec![0.0; input.len()];
        self.norm.normalize_point(input, &mut normed);
        self.attention.apply_point(&normed, output);
    }
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Accumulates running normalization statistics by streaming batches of
/// uniformly sampled in-bounds points through train-mode normalization.
/// Sequential and fully determined by `seed`; the state is returned to eval
/// mode afterwards.
pub fn calibrate(
    norm: &mut VolumeAdaptiveNorm,
    volume: &impl VolumeSource,
    total_points: usize,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    if norm.channels() != volume.channels() {
        return Err(Error::domain(format!(
            "normalization expects {} channels, volume has {}",
            norm.channels(),
            volume.channels()
        )));
    }
    if total_points == 0 || batch_size == 0 {
        return Err(Error::domain("calibration needs at least one point and batch size 1".to_string()));
    }
    let (lo, hi) = volume.clip_bounds().ok_or_else(|| {
        Error::domain("calibration requires a volume with finite clip bounds".to_string())
    })?;
    let c = volume.channels();
    let mut rng = SplitMix64::new(seed);
    let mut remaining = total_points;
    let mut features = vec![0.0; batch_size * c];
    norm.mode = NormMode::Train;
    while remaining > 0 {
        let count = remaining.min(batch_size);
        for i in 0..count {
            let p = Vec3::new(
                rng.uniform(lo.x, hi.x),
                rng.uniform(lo.y, hi.y),
                rng.uniform(lo.z, hi.z),
            );
            volume.sample_point(p, &mut features[i * c..(i + 1) * c]);
        }
        let result = norm.normalize(&features[..count * c], count);
        if let Err(e) = result {
            norm.mode = NormMode::Eval;
            return Err(e);
        }
        remaining -= count;
    }
    norm.mode = NormMode::Eval;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::max_abs_diff;

    fn random_points(count: usize, channels: usize, seed: u64, spread: f64, center: f64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        (0..count * channels).map(|_| center + rng.uniform(-spread, spread)).collect()
    }

    fn random_attention(channels: usize, reduced: usize, seed: u64) -> AttentionParams {
        let mut rng = SplitMix64::new(seed);
        AttentionParams::seeded(channels, reduced, &mut rng).unwrap()
    }

    fn batch_from_rows(rows: &[f64], channels: usize) -> PointBatch {
        let n = rows.len() / channels;
        PointBatch {
            positions: vec![Vec3::ZERO; n],
            depths: vec![0.0; n],
            deltas: vec![0.0; n],
            densities: vec![0.0; n],
            features: rows.to_vec(),
            valid: vec![true; n],
            channels,
        }
    }

    #[test]
    fn eval_normalization_is_per_point_and_batch_invariant() {
        let mut norm = VolumeAdaptiveNorm::new(4);
        norm.running_mean = vec![0.5, -1.0, 0.0, 2.0];
        norm.running_var = vec![1.0, 0.25, 4.0, 0.01];
        let points = random_points(12, 4, 3, 2.0, 0.0);
        let full = norm.normalize(&points, 12).unwrap();
        // Point-by-point application is bitwise identical.
        for i in 0..12 {
            let mut one = vec![0.0; 4];
            norm.normalize_point(&points[i * 4..(i + 1) * 4], &mut one);
            assert_eq!(one, full[i * 4..(i + 1) * 4].to_vec());
        }
        // Splitting the batch changes nothing, bitwise.
        let first = norm.normalize(&points[..5 * 4], 5).unwrap();
        let second = norm.normalize(&points[5 * 4..], 7).unwrap();
        let stitched: Vec<f64> = first.into_iter().chain(second).collect();
        assert_eq!(full, stitched);
    }

    #[test]
    fn train_normalization_updates_running_stats_by_momentum() {
        let mut norm = VolumeAdaptiveNorm::new(2);
        norm.mode = NormMode::Train;
        let points = vec![1.0, 10.0, 3.0, 14.0]; // 2 points, 2 channels
        let (mean, var) = norm.batch_stats(&points, 2).unwrap();
        assert_eq!(mean, vec![2.0, 12.0]);
        assert_eq!(var, vec![1.0, 4.0]); // population variance
        norm.normalize(&points, 2).unwrap();
        // running = 0.9 * initial + 0.1 * batch, with initial (0, 1).
        assert!((norm.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((norm.running_mean[1] - 1.2).abs() < 1e-15);
        assert!((norm.running_var[0] - (0.9 + 0.1)).abs() < 1e-15);
        assert!((norm.running_var[1] - (0.9 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn momentum_extremes_freeze_or_replace_running_stats() {
        let points = random_points(8, 3, 5, 1.0, 0.7);
        let mut frozen = VolumeAdaptiveNorm::new(3);
        frozen.mode = NormMode::Train;
        frozen.momentum = 0.0;
        frozen.normalize(&points, 8).unwrap();
        assert_eq!(frozen.running_mean, vec![0.0; 3]);
        assert_eq!(frozen.running_var, vec![1.0; 3]);

        let mut replace = VolumeAdaptiveNorm::new(3);
        replace.mode = NormMode::Train;
        replace.momentum = 1.0;
        let (mean, var) = replace.batch_stats(&points, 8).unwrap();
        replace.normalize(&points, 8).unwrap();
        assert_eq!(replace.running_mean, mean);
        assert_eq!(replace.running_var, var);
    }

    #[test]
    fn constant_batch_normalizes_to_zero_without_nans() {
        let mut norm = VolumeAdaptiveNorm::new(2);
        norm.mode = NormMode::Train;
        let points = vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0];
        let out = norm.normalize(&points, 3).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_reduced_channel_attention_returns_value_exactly() {
        let params = AttentionParams::new(
            Mat::from_vec(1, 3, vec![0.2, -0.4, 1.0]),
            Mat::from_vec(1, 3, vec![-1.0, 0.5, 0.3]),
            Mat::from_vec(1, 3, vec![0.7, 0.7, -0.1]),
        )
        .unwrap();
        let x = [0.3, -1.2, 2.0];
        let mut out = [0.0];
        params.apply_point(&x, &mut out);
        let v = params.w_value().matvec(&x)[0];
        assert_eq!(out[0], v, "1x1 attention must be the identity on v");
    }

    #[test]
    fn zero_query_attention_averages_values() {
        let c = 4;
        let reduced = 3;
        let params = AttentionParams::new(
            Mat::zeros(reduced, c),
            random_attention(c, reduced, 8).w_key().clone(),
            random_attention(c, reduced, 9).w_value().clone(),
        )
        .unwrap();
        let x = [0.5, -0.3, 1.1, 0.2];
        let mut out = vec![0.0; reduced];
        params.apply_point(&x, &mut out);
        let v = params.w_value().matvec(&x);
        let mean = v.iter().sum::<f64>() / reduced as f64;
        for o in &out {
            assert!((o - mean).abs() < 1e-12, "uniform attention averages the value vector");
        }
    }

    #[test]
    fn attention_rejects_inconsistent_projections() {
        let a = Mat::zeros(2, 4);
        let b = Mat::zeros(3, 4);
        assert!(AttentionParams::new(a.clone(), b, a.clone()).is_err());
        // Reduced channels above input channels are rejected.
        let wide = Mat::zeros(5, 4);
        assert!(AttentionParams::new(wide.clone(), wide.clone(), wide).is_err());
    }

    #[test]
    fn apply_sict_zeroes_masked_rows_and_matches_per_point_path() {
        let c = 6;
        let reduced = 4;
        let mut norm = VolumeAdaptiveNorm::new(c);
        norm.running_mean = random_points(1, c, 1, 1.0, 0.0);
        norm.running_var = random_points(1, c, 2, 0.4, 1.0);
        let attention = random_attention(c, reduced, 3);
        let rows = random_points(5, c, 4, 1.5, 0.0);
        let mut batch = batch_from_rows(&rows, c);
        batch.valid[2] = false;
        let out = apply_sict(&batch, &mut norm, &attention).unwrap();
        assert_eq!(&out[2 * reduced..3 * reduced], &[0.0; 4]);
        let transform = SictTransform::new(&norm, &attention).unwrap();
        for i in [0usize, 1, 3, 4] {
            let mut expected = vec![0.0; reduced];
            transform.apply(batch.feature(i), &mut expected);
            assert_eq!(&out[i * reduced..(i + 1) * reduced], &expected[..], "row {i}");
        }
    }

    #[test]
    fn batch_stat_normalization_depends_on_companions() {
        // The same probe point lands in two batches with very different
        // companions; the batch-statistics path gives it different outputs
        // (the artifact), the eval path gives bitwise identical ones.
        let c = 3;
        let reduced = 2;
        let norm = VolumeAdaptiveNorm::new(c);
        let attention = random_attention(c, reduced, 10);
        let probe = [0.25, -0.75, 0.5];
        let mut rows_a = probe.to_vec();
        rows_a.extend(random_points(6, c, 11, 0.3, 2.0));
        let mut rows_b = probe.to_vec();
        rows_b.extend(random_points(6, c, 12, 0.3, -2.0));
        let batch_a = batch_from_rows(&rows_a, c);
        let batch_b = batch_from_rows(&rows_b, c);

        let vanilla_a = apply_sict_batch_stats(&batch_a, &norm, &attention).unwrap();
        let vanilla_b = apply_sict_batch_stats(&batch_b, &norm, &attention).unwrap();
        let diff = max_abs_diff(&vanilla_a[..reduced], &vanilla_b[..reduced]);
        assert!(diff > 1e-3, "batch statistics should visibly change the probe, diff {diff}");

        let mut norm_a = norm.clone();
        let mut norm_b = norm.clone();
        let eval_a = apply_sict(&batch_a, &mut norm_a, &attention).unwrap();
        let eval_b = apply_sict(&batch_b, &mut norm_b, &attention).unwrap();
        assert_eq!(&eval_a[..reduced], &eval_b[..reduced], "eval path must be batch-independent");
    }

    #[test]
    fn sict_transform_requires_eval_mode() {
        let mut norm = VolumeAdaptiveNorm::new(3);
        norm.mode = NormMode::Train;
        let attention = random_attention(3, 2, 13);
        match SictTransform::new(&norm, &attention) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn calibration_converges_running_stats_toward_field_stats() {
        struct Uniform;
        impl VolumeSource for Uniform {
            fn channels(&self) -> usize {
                2
            }
            fn clip_bounds(&self) -> Option<(Vec3, Vec3)> {
                Some((Vec3::splat(-1.0), Vec3::splat(1.0)))
            }
            fn sample_point(&self, p: Vec3, out: &mut [f64]) -> f64 {
                out[0] = 3.0 + p.x; // mean 3, variance 1/3
                out[1] = -2.0;      // constant
                0.0
            }
        }
        let mut norm = VolumeAdaptiveNorm::new(2);
        calibrate(&mut norm, &Uniform, 40_000, 512, 77).unwrap();
        assert_eq!(norm.mode, NormMode::Eval);
        // 40000/512 ≈ 79 momentum-0.1 updates leave a 0.9^79 ≈ 2.4e-4
        // residue of the initial state even on constant channels.
        assert!((norm.running_mean[0] - 3.0).abs() < 0.05);
        assert!((norm.running_mean[1] + 2.0).abs() < 1e-3);
        assert!((norm.running_var[0] - 1.0 / 3.0).abs() < 0.05);
        assert!(norm.running_var[1].abs() < 1e-3);
        // Determinism: same seed, same stats, bitwise.
        let mut again = VolumeAdaptiveNorm::new(2);
        calibrate(&mut again, &Uniform, 40_000, 512, 77).unwrap();
        assert_eq!(norm, again);
    }

    #[test]
    fn calibration_requires_bounded_volume() {
        struct Unbounded;
        impl VolumeSource for Unbounded {
            fn channels(&self) -> usize {
                1
            }
            fn clip_bounds(&self) -> Option<(Vec3, Vec3)> {
                None
            }
            fn sample_point(&self, _p: Vec3, out: &mut [f64]) -> f64 {
                out[0] = 0.0;
                0.0
            }
        }
        let mut norm = VolumeAdaptiveNorm::new(1);
        assert!(calibrate(&mut norm, &Unbounded, 100, 10, 0).is_err());
    }
}
