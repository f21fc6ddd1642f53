//! Cameras, ray sampling, emission–absorption weights, and feature-map
//! rendering.
//!
//! Rendering integrates per-point feature vectors along camera rays: sample
//! positions receive weights `w_i = T_i · (1 - e^{-σ_i δ_i})` with
//! transmittance `T_i = e^{-Σ_{j<i} σ_j δ_j}`, and a pixel's feature is
//! `Σ_i w_i F_i`. The accumulated weight `w_r = Σ_i w_i` telescopes to
//! `1 - e^{-Σ_i σ_i δ_i}`, which tests exploit as an exact invariant.
//!
//! The renderer is generic over a [`VolumeSource`] so the same quadrature
//! drives factorized grids and analytic reference scenes, and over an
//! optional [`PointTransform`] applied to each sample's features before
//! integration (the hook used by the sampling-invariant content transform).
//! Every pixel derives its own RNG stream from `(seed, u, v)`, so rendering
//! a single pixel in isolation is bit-identical to rendering it within the
//! full image, and row-parallel execution cannot affect results.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{mix_seed, Mat, SplitMix64, Vec3};

// ---------------------------------------------------------------------------
// Sources and transforms
// ---------------------------------------------------------------------------

/// A volumetric scene the renderer can sample: nonnegative density plus a
/// `C`-channel feature vector at any point inside the clip bounds.
pub trait VolumeSource: Sync {
    fn channels(&self) -> usize;

    /// Axis-aligned box outside which the source is treated as empty, or
    /// `None` if it is defined everywhere. The renderer culls samples to this
    /// box and never queries outside it.
    fn clip_bounds(&self) -> Option<(Vec3, Vec3)>;

    /// Activated density (≥ 0) and features at `p`. Only called for points
    /// inside the clip bounds.
    fn sample_point(&self, p: Vec3, features_out: &mut [f64]) -> f64;
}

/// Per-point feature transformation applied before integration.
pub trait PointTransform: Sync {
    /// Validates the input channel count and returns the output channel
    /// count.
    fn check_channels(&self, input_channels: usize) -> Result<usize>;

    /// Maps one point's feature vector. Must be a pure function of `input`.
    fn apply(&self, input: &[f64], output: &mut [f64]);
}

/// Transform that copies features through unchanged. Rendering with it is
/// bit-identical to rendering with no transform at all.
pub struct IdentityTransform;

impl PointTransform for IdentityTransform {
    fn check_channels(&self, input_channels: usize) -> Result<usize> {
        Ok(input_channels)
    }

    fn apply(&self, input: &[f64], output: &mut [f64]) {
        output.copy_from_slice(input);
    }
}

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

/// Pinhole camera. The pose maps camera coordinates to world coordinates;
/// camera axes are x-right, y-down, z-forward (a right-handed frame), and
/// pixel `(u, v)` casts a ray through its center `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone)]
pub struct Camera {
    rotation: Mat, // 3×3, columns are the camera axes expressed in world space
    position: Vec3,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

/// A world-space ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Camera {
    pub fn new(
        rotation: Mat,
        position: Vec3,
        (fx, fy): (f64, f64),
        (cx, cy): (f64, f64),
        (width, height): (usize, usize),
    ) -> Result<Camera> {
        if rotation.rows() != 3 || rotation.cols() != 3 {
            return Err(Error::domain("camera rotation must be 3x3".to_string()));
        }
        if !rotation.data().iter().all(|v| v.is_finite()) || !position.is_finite() {
            return Err(Error::NonFinite("camera pose"));
        }
        // Orthonormality: RᵀR = I within 1e-5, and right-handed (det = +1).
        let rtr = rotation.transpose().matmul(&rotation);
        if rtr.max_abs_diff(&Mat::identity(3)) > 1e-5 {
            return Err(Error::domain(
                "camera rotation is not orthonormal within 1e-5".to_string(),
            ));
        }
        let det = rotation[(0, 0)] * (rotation[(1, 1)] * rotation[(2, 2)] - rotation[(1, 2)] * rotation[(2, 1)])
            - rotation[(0, 1)] * (rotation[(1, 0)] * rotation[(2, 2)] - rotation[(1, 2)] * rotation[(2, 0)])
            + rotation[(0, 2)] * (rotation[(1, 0)] * rotation[(2, 1)] - rotation[(1, 1)] * rotation[(2, 0)]);
        if (det - 1.0).abs() > 1e-5 {
            return Err(Error::domain(format!(
                "camera rotation must be right-handed (det 1), got det {det:.6}"
            )));
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::domain("camera focal lengths must be positive".to_string()));
        }
        if width == 0 || height == 0 {
            return Err(Error::domain("camera image must be at least 1x1".to_string()));
        }
        Ok(Camera { rotation, position, fx, fy, cx, cy, width, height })
    }

    /// Builds a camera at `eye` looking toward `target`, with `up` fixing the
    /// roll, from a vertical field of view in degrees (square pixels,
    /// principal point at the image center).
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y_degrees: f64,
        (width, height): (usize, usize),
    ) -> Result<Camera> {
        if !(eye.is_finite() && target.is_finite() && up.is_finite()) {
            return Err(Error::NonFinite("camera placement"));
        }
        let forward = target - eye;
        if forward.length() < 1e-9 {
            return Err(Error::domain("camera eye and target coincide".to_string()));
        }
        let forward = forward.normalized();
        let right = forward.cross(up);
        if right.length() < 1e-9 {
            return Err(Error::domain("camera view direction is parallel to up".to_string()));
        }
        let right = right.normalized();
        let down = forward.cross(right).normalized();
        if !(fov_y_degrees > 0.0 && fov_y_degrees < 180.0) {
            return Err(Error::domain(format!(
                "vertical field of view must be in (0, 180) degrees, got {fov_y_degrees}"
            )));
        }
        let fy = 0.5 * height as f64 / (fov_y_degrees.to_radians() * 0.5).tan();
        let rotation = Mat::from_vec(
            3,
            3,
            vec![
                right.x, down.x, forward.x, //
                right.y, down.y, forward.y, //
                right.z, down.z, forward.z,
            ],
        );
        Camera::new(rotation, eye, (fy, fy), (width as f64 * 0.5, height as f64 * 0.5), (width, height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    /// The world-space ray through the center of pixel `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> Result<Ray> {
        if u >= self.width || v >= self.height {
            return Err(Error::domain(format!(
                "pixel ({u}, {v}) outside image bounds {}x{}",
                self.width, self.height
            )));
        }
        let xc = (u as f64 + 0.5 - self.cx) / self.fx;
        let yc = (v as f64 + 0.5 - self.cy) / self.fy;
        let d = Vec3::new(
            self.rotation[(0, 0)] * xc + self.rotation[(0, 1)] * yc + self.rotation[(0, 2)],
            self.rotation[(1, 0)] * xc + self.rotation[(1, 1)] * yc + self.rotation[(1, 2)],
            self.rotation[(2, 0)] * xc + self.rotation[(2, 1)] * yc + self.rotation[(2, 2)],
        );
        Ok(Ray { origin: self.position, dir: d.normalized() })
    }

    pub fn rotation(&self) -> &Mat {
        &self.rotation
    }

    pub fn intrinsics(&self) -> (f64, f64, f64, f64) {
        (self.fx, self.fy, self.cx, self.cy)
    }
}

// ---------------------------------------------------------------------------
// Ray sampling
// ---------------------------------------------------------------------------

/// How rays are discretized into quadrature points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    /// When false, samples sit at uniform bin centers (midpoint rule). When
    /// true, each sample jitters uniformly within its bin, with the stream
    /// derived from `(seed, u, v)`.
    pub stratified: bool,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            return Err(Error::domain("samples_per_ray must be at least 1".to_string()));
        }
        if !(self.near.is_finite() && self.far.is_finite()) {
            return Err(Error::NonFinite("sampling near/far"));
        }
        if self.near < 0.0 {
            return Err(Error::domain(format!("near must be nonnegative, got {}", self.near)));
        }
        if self.near >= self.far {
            return Err(Error::domain(format!(
                "near must be strictly less than far, got near {} >= far {}",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

/// Depths and segment lengths for one ray. Uniform mode places samples at
/// bin centers with every `δ_i` equal to the bin width; stratified mode
/// jitters within bins, taking gaps between consecutive samples and closing
/// the last segment at `far`.
pub(crate) fn sample_depths(spec: &SamplingSpec, u: usize, v: usize) -> (Vec<f64>, Vec<f64>) {
    let n = spec.samples_per_ray;
    let h = (spec.far - spec.near) / n as f64;
    let mut depths = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    if spec.stratified {
        let mut rng = SplitMix64::new(mix_seed(spec.seed, u as u64, v as u64));
        for i in 0..n {
            depths.push(spec.near + (i as f64 + rng.next_f64()) * h);
        }
        for i in 0..n - 1 {
            deltas.push(depths[i + 1] - depths[i]);
        }
        deltas.push(spec.far - depths[n - 1]);
    } else {
        for i in 0..n {
            depths.push(spec.near + (i as f64 + 0.5) * h);
            deltas.push(h);
        }
    }
    (depths, deltas)
}

/// The quadrature points of one ray: positions, segment lengths, sampled
/// densities and features, and a per-point validity mask (false for points
/// culled by the source's clip bounds, whose density and features are zero).
#[derive(Debug, Clone)]
pub struct PointBatch {
    pub positions: Vec<Vec3>,
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub densities: Vec<f64>,
    /// Row-major `N × C`.
    pub features: Vec<f64>,
    pub valid: Vec<bool>,
    pub channels: usize,
}

impl PointBatch {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

/// Samples one camera ray against a volume source.
pub fn sample_ray(
    volume: &impl VolumeSource,
    camera: &Camera,
    (u, v): (usize, usize),
    spec: &SamplingSpec,
) -> Result<PointBatch> {
    spec.validate()?;
    let ray = camera.ray(u, v)?;
    let (depths, deltas) = sample_depths(spec, u, v);
    let c = volume.channels();
    let n = depths.len();
    let mut batch = PointBatch {
        positions: Vec::with_capacity(n),
        depths,
        deltas,
        densities: vec![0.0; n],
        features: vec![0.0; n * c],
        valid: vec![false; n],
        channels: c,
    };
    let bounds = volume.clip_bounds();
    for i in 0..n {
        let p = ray.origin + ray.dir * batch.depths[i];
        batch.positions.push(p);
        let inside = match bounds {
            Some((lo, hi)) => (0..3).all(|a| p.axis(a) >= lo.axis(a) && p.axis(a) <= hi.axis(a)),
            None => true,
        };
        if inside {
            batch.valid[i] = true;
            batch.densities[i] = volume.sample_point(p, &mut batch.features[i * c..(i + 1) * c]);
        }
    }
    Ok(batch)
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Emission–absorption weights for one ray. Returns the per-sample weights
/// and their sum `w_r`. Uses the transmittance recurrence
/// `T_{i+1} = T_i · e^{-σ_i δ_i}`, `w_i = T_i · (1 - e^{-σ_i δ_i})`, with
/// `expm1` for accuracy at small optical depths.
pub fn compute_weights(densities: &[f64], deltas: &[f64]) -> Result<(Vec<f64>, f64)> {
    if densities.len() != deltas.len() {
        return Err(Error::domain(format!(
            "densities ({}) and deltas ({}) must have equal length",
            densities.len(),
            deltas.len()
        )));
    }
    let mut weights = Vec::with_capacity(densities.len());
    let mut transmittance = 1.0;
    let mut sum = 0.0;
    for (i, (&sigma, &delta)) in densities.iter().zip(deltas).enumerate() {
        if !(sigma.is_finite() && delta.is_finite()) {
            return Err(Error::NonFinite("density or segment length"));
        }
        if sigma < 0.0 || delta < 0.0 {
            return Err(Error::domain(format!(
                "negative density or segment length at sample {i} (sigma {sigma}, delta {delta})"
            )));
        }
        let optical = sigma * delta;
        let w = transmittance * (-(-optical).exp_m1());
        weights.push(w);
        sum += w;
        transmittance *= (-optical).exp();
    }
    Ok((weights, sum))
}

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

/// A rendered image of feature vectors plus the accumulated ray weight per
/// pixel. Data is row-major `height × width × channels` (channel fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub ray_weight: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> FeatureMap {
        FeatureMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            ray_weight: vec![0.0; width * height],
        }
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let base = (v * self.width + u) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [f64] {
        let base = (v * self.width + u) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    pub fn ray_weight_at(&self, u: usize, v: usize) -> f64 {
        self.ray_weight[v * self.width + u]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Renders the full-resolution feature map of a volume source, optionally
/// passing each sample's features through a per-point transform before
/// integration. Rows are rendered in parallel; results are independent of
/// the parallel schedule because every pixel derives its own RNG stream and
/// owns its output slot.
pub fn render_feature_map(
    volume: &impl VolumeSource,
    camera: &Camera,
    spec: &SamplingSpec,
    transform: Option<&(dyn PointTransform + Sync)>,
) -> Result<FeatureMap> {
    spec.validate()?;
    let in_c = volume.channels();
    let out_c = match transform {
        Some(t) => t.check_channels(in_c)?,
        None => in_c,
    };
    let (w, h) = (camera.width(), camera.height());
    let mut map = FeatureMap::zeros(w, h, out_c);

    map.data
        .par_chunks_mut(w * out_c)
        .zip(map.ray_weight.par_chunks_mut(w))
        .enumerate()
        .try_for_each(|(v, (row, row_wr))| -> Result<()> {
            let mut transformed = vec![0.0; out_c];
            for u in 0..w {
                let batch = sample_ray(volume, camera, (u, v), spec)?;
                let (weights, wr) = compute_weights(&batch.densities, &batch.deltas)?;
                let out = &mut row[u * out_c..(u + 1) * out_c];
                for i in 0..batch.len() {
                    if !batch.valid[i] || weights[i] == 0.0 {
                        continue;
                    }
                    let feat = batch.feature(i);
                    let feat = match transform {
                        Some(t) => {
                            t.apply(feat, &mut transformed);
                            &transformed[..]
                        }
                        None => feat,
                    };
                    for (o, f) in out.iter_mut().zip(feat) {
                        *o += weights[i] * f;
                    }
                }
                row_wr[u] = wr;
            }
            Ok(())
        })?;
    Ok(map)
}
