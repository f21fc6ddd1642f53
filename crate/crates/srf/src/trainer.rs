//! Stage-1 fitting: plain gradient descent that pulls the factorized grids
//! toward a scene oracle's feature and RGB renders, using hand-derived
//! analytic gradients (the adjoint of the integration weights, the softplus
//! activation, and the interpolation stencils), plus the loss metrics used to
//! score stylized renders.
//!
//! ## Gradient derivation
//!
//! With optical depth `x_i = σ_i δ_i`, transmittance `T_i = exp(-Σ_{j<i} x_j)`
//! and weight `w_i = T_i (1 - e^{-x_i})`, the integrated feature is
//! `F̄ = Σ w_i F_i` and the accumulated weight `w_r = Σ w_i`, so
//!
//! * `∂F̄/∂F_i = w_i` — the feature path is linear;
//! * `∂w_i/∂x_i = T_i e^{-x_i} = T_{i+1}` (for a single sample, `e^{-x_1}`);
//! * `∂w_i/∂x_j = -w_i` for `j < i` — earlier samples shade later ones.
//!
//! The second and third lines give `∂L/∂x_j = g_j T_{j+1} - Σ_{i>j} g_i w_i`
//! with `g_i = ∂L/∂w_i`, which the backward pass evaluates with one reverse
//! sweep and a running suffix sum (O(N) per ray). From `x_i` the chain
//! continues through `δ_i`, the softplus derivative (the logistic), and the
//! interpolation stencil into factor entries; the feature path continues
//! through the basis matrix and the same stencil.

use crate::decoder::{fit_decoder, RgbImage};
use crate::error::{Error, Result};
use crate::math::{logistic, mean_squared_error, softplus, SplitMix64, Vec3};
use crate::model::{GroupRates, Model, ModelGrads};
use crate::scene_synth::{reference_render, SceneOracle};
use crate::style_transform::StyleStats;
use crate::tensor_grid::{GridGeometry, GridStencil};
use crate::volume_renderer::{
    compute_weights, render_feature_map, sample_depths, Camera, FeatureMap, SamplingSpec,
    VolumeSource,
};
use std::io::Write;

/// Abort threshold: a batch loss above this is treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Fixed rate multipliers turning the configured scalar learning rate into
/// per-group descent rates (see [`GroupRates`]). Measured at the reference
/// scale (32³ grid, rank 8, 16 channels, 128-ray batches), gradient RMS per
/// group spans five orders of magnitude — decoder bias ~1e-1, factor entries
/// ~5e-6 — because each factor's gradient carries the product of the other,
/// initially small, groups. These constants level the effective steps: at the
/// default scalar rate 5e-3 a factor entry moves a few percent of its own
/// scale per step while the decoder head stays well inside its stability
/// bound. Compile-time constants, not adaptive state.
pub const LR_MULT_FEATURE_FACTORS: f64 = 32_000.0;
pub const LR_MULT_BASIS: f64 = 32_000.0;
pub const LR_MULT_DENSITY_FACTORS: f64 = 32_000.0;
pub const LR_MULT_DECODER: f64 = 200.0;

/// The per-group rates used by [`fit_stage1`] for a configured scalar rate.
pub fn stage1_rates(learning_rate: f64) -> GroupRates {
    GroupRates {
        feature_factors: learning_rate * LR_MULT_FEATURE_FACTORS,
        basis: learning_rate * LR_MULT_BASIS,
        density_factors: learning_rate * LR_MULT_DENSITY_FACTORS,
        decoder: learning_rate * LR_MULT_DECODER,
    }
}

// ---------------------------------------------------------------------------
// Configuration and loss reports
// ---------------------------------------------------------------------------

/// Configuration for [`fit_stage1`]. Grid shape lives here because stage 1
/// owns model creation; everything is deterministic given `seed`.
#[derive(Debug, Clone)]
pub struct Stage1Config {
    pub resolution: [usize; 3],
    pub rank: usize,
    pub reduced_channels: usize,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub background: [f64; 3],
    pub learning_rate: f64,
    /// Gradient steps. Zero is allowed and returns the initialization
    /// unchanged (useful as a baseline); the normal operating range is ≥ 1.
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub seed: u64,
    pub rgb_loss_weight: f64,
}

impl Default for Stage1Config {
    fn default() -> Stage1Config {
        Stage1Config {
            resolution: [32, 32, 32],
            rank: 8,
            reduced_channels: 8,
            bbox_min: Vec3::splat(-1.0),
            bbox_max: Vec3::splat(1.0),
            background: [0.5; 3],
            learning_rate: 5e-3,
            iterations: 2000,
            rays_per_batch: 128,
            samples_per_ray: 64,
            seed: 0,
            rgb_loss_weight: 1.0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::domain(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.rays_per_batch == 0 {
            return Err(Error::domain("rays_per_batch must be at least 1".to_string()));
        }
        if self.samples_per_ray == 0 {
            return Err(Error::domain("samples_per_ray must be at least 1".to_string()));
        }
        if !(self.rgb_loss_weight.is_finite() && self.rgb_loss_weight >= 0.0) {
            return Err(Error::domain(format!(
                "rgb_loss_weight must be nonnegative, got {}",
                self.rgb_loss_weight
            )));
        }
        if self.rank == 0 {
            return Err(Error::domain("rank must be at least 1".to_string()));
        }
        if self.reduced_channels == 0 {
            return Err(Error::domain("reduced_channels must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Loss values for one training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub feature_mse: f64,
    pub rgb_mse: f64,
    pub total: f64,
}

/// Combined grid-fitting loss: `feature_mse + weight · rgb_mse`, each term a
/// mean over all elements of its tensor. Empty tensors contribute zero.
pub fn grid_loss(
    pred_features: &[f64],
    gt_features: &[f64],
    pred_rgb: &[f64],
    gt_rgb: &[f64],
    weight: f64,
) -> Result<LossReport> {
    if pred_features.len() != gt_features.len() {
        return Err(Error::domain(format!(
            "feature tensors differ in size: {} vs {}",
            pred_features.len(),
            gt_features.len()
        )));
    }
    if pred_rgb.len() != gt_rgb.len() {
        return Err(Error::domain(format!(
            "rgb tensors differ in size: {} vs {}",
            pred_rgb.len(),
            gt_rgb.len()
        )));
    }
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(Error::domain(format!("loss weight must be nonnegative, got {weight}")));
    }
    let feature_mse = if pred_features.is_empty() {
        0.0
    } else {
        mean_squared_error(pred_features, gt_features)
    };
    let rgb_mse = if pred_rgb.is_empty() { 0.0 } else { mean_squared_error(pred_rgb, gt_rgb) };
    Ok(LossReport { iteration: 0, feature_mse, rgb_mse, total: feature_mse + weight * rgb_mse })
}

/// Writes a loss curve as CSV with header `iteration,feature_mse,rgb_mse,total`.
pub fn write_loss_csv(losses: &[LossReport], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "iteration,feature_mse,rgb_mse,total")?;
    for l in losses {
        writeln!(out, "{},{},{},{}", l.iteration, l.feature_mse, l.rgb_mse, l.total)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Recorded forward pass and analytic backward pass
// ---------------------------------------------------------------------------

/// Everything the backward pass needs from one ray's forward integration.
/// Only in-bounds samples are stored; out-of-bounds samples carry exactly
/// zero weight and zero gradient, and they leave transmittance untouched, so
/// dropping them loses nothing.
#[derive(Debug, Clone)]
pub struct RayForward {
    revision: u64,
    channels: usize,
    terms: usize,
    count: usize,
    stencils: Vec<GridStencil>,
    /// `count × terms` feature factor coefficients.
    coeffs: Vec<f64>,
    /// `count × channels` per-sample features.
    features: Vec<f64>,
    raws: Vec<f64>,
    deltas: Vec<f64>,
    weights: Vec<f64>,
    /// `T_{i+1}`, the transmittance *after* each stored sample.
    trans_next: Vec<f64>,
    /// Integrated feature vector `F̄` for this ray.
    pub bar_features: Vec<f64>,
    /// Accumulated weight `w_r` for this ray.
    pub ray_weight: f64,
}

/// Runs one ray's integration while recording the intermediate state needed
/// for [`render_backward`]. Produces the same `F̄` and `w_r` (bitwise) as
/// [`render_feature_map`] does for that pixel with no transform.
pub fn forward_ray(
    model: &Model,
    camera: &Camera,
    (u, v): (usize, usize),
    spec: &SamplingSpec,
) -> Result<RayForward> {
    spec.validate()?;
    let ray = camera.ray(u, v)?;
    let (depths, deltas) = sample_depths(spec, u, v);
    let geometry = model.geometry();
    let channels = model.channels();
    let terms = 3 * model.rank();
    let n = depths.len();

    let mut fwd = RayForward {
        revision: model.revision(),
        channels,
        terms,
        count: 0,
        stencils: Vec::new(),
        coeffs: Vec::new(),
        features: Vec::new(),
        raws: Vec::new(),
        deltas: Vec::new(),
        weights: Vec::new(),
        trans_next: Vec::new(),
        bar_features: vec![0.0; channels],
        ray_weight: 0.0,
    };

    let basis = model.features().basis();
    let bdata = basis.data();
    let mut densities = vec![0.0; n];
    let mut kept = Vec::new();
    for i in 0..n {
        let p = ray.origin + ray.dir * depths[i];
        if !geometry.contains(p) {
            continue;
        }
        let st = geometry.stencil(p);
        let base = fwd.coeffs.len();
        fwd.coeffs.resize(base + terms, 0.0);
        model.features().factors().coefficients_into(geometry, &st, &mut fwd.coeffs[base..]);
        let fb = fwd.features.len();
        fwd.features.resize(fb + channels, 0.0);
        for c in 0..channels {
            let mut acc = 0.0;
            let row = &bdata[c * terms..(c + 1) * terms];
            for (b, phi) in row.iter().zip(&fwd.coeffs[base..]) {
                acc += b * phi;
            }
            fwd.features[fb + c] = acc;
        }
        let raw = model.density().raw_at_stencil(&st);
        densities[i] = softplus(raw);
        fwd.stencils.push(st);
        fwd.raws.push(raw);
        fwd.deltas.push(deltas[i]);
        kept.push(i);
    }
    fwd.count = kept.len();

    let (weights, ray_weight) = compute_weights(&densities, &deltas)?;
    fwd.ray_weight = ray_weight;
    let mut transmittance = 1.0;
    let mut next_kept = 0;
    for (i, w) in weights.iter().enumerate() {
        transmittance *= (-densities[i] * deltas[i]).exp();
        if next_kept < kept.len() && kept[next_kept] == i {
            fwd.weights.push(*w);
            fwd.trans_next.push(transmittance);
            if *w != 0.0 {
                let fb = next_kept * channels;
                for (o, f) in fwd.bar_features.iter_mut().zip(&fwd.features[fb..fb + channels]) {
                    *o += w * f;
                }
            }
            next_kept += 1;
        }
    }
    Ok(fwd)
}

/// Given upstream gradients `∂L/∂F̄` and `∂L/∂w_r` for one ray, accumulates
/// exact analytic gradients on every grid parameter (factor entries, basis
/// entries, raw density factor entries) into `grads`.
///
/// The forward record must have been taken at the model's current revision;
/// a record from before any parameter update is rejected as stale.
pub fn render_backward(
    model: &Model,
    forward: &RayForward,
    d_bar_features: &[f64],
    d_ray_weight: f64,
    grads: &mut ModelGrads,
) -> Result<()> {
    if forward.revision != model.revision() {
        return Err(Error::Contract(format!(
            "stale forward state: recorded at model revision {}, model is now at revision {}",
            forward.revision,
            model.revision()
        )));
    }
    let channels = forward.channels;
    let terms = forward.terms;
    if d_bar_features.len() != channels {
        return Err(Error::domain(format!(
            "upstream feature gradient has {} channels, ray has {channels}",
            d_bar_features.len()
        )));
    }
    if !d_ray_weight.is_finite() || d_bar_features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("upstream gradient"));
    }

    let geometry = model.geometry();
    let basis = model.features().basis();
    let bdata = basis.data();
    // ∂L/∂φ_k = w_i · (Bᵀ · ∂L/∂F̄)_k; the basis factor is shared by samples.
    let mut bt_g = vec![0.0; terms];
    for (c, &d) in d_bar_features.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &bdata[c * terms..(c + 1) * terms];
        for (t, b) in bt_g.iter_mut().zip(row) {
            *t += d * b;
        }
    }

    let mut d_phi = vec![0.0; terms];
    let density_terms = 3 * model.density().factors().rank();
    let mut d_density = vec![0.0; density_terms];
    let mut g_vals = vec![0.0; forward.count];

    for i in 0..forward.count {
        let w = forward.weights[i];
        let feat = &forward.features[i * channels..(i + 1) * channels];
        let mut g = d_ray_weight;
        for (d, f) in d_bar_features.iter().zip(feat) {
            g += d * f;
        }
        g_vals[i] = g;
        if w == 0.0 {
            continue;
        }
        let phi = &forward.coeffs[i * terms..(i + 1) * terms];
        let gb = grads.basis.data_mut();
        for (c, &d) in d_bar_features.iter().enumerate() {
            let row_d = w * d;
            if row_d == 0.0 {
                continue;
            }
            let row = &mut gb[c * terms..(c + 1) * terms];
            for (o, p) in row.iter_mut().zip(phi) {
                *o += row_d * p;
            }
        }
        for (o, t) in d_phi.iter_mut().zip(&bt_g) {
            *o = w * t;
        }
        model.features().factors().scatter_coefficient_grads(
            geometry,
            &forward.stencils[i],
            &d_phi,
            &mut grads.feature_factors,
        );
    }

    // Reverse sweep: ∂L/∂x_j = g_j·T_{j+1} − Σ_{i>j} g_i·w_i.
    let mut suffix = 0.0;
    for i in (0..forward.count).rev() {
        let dx = g_vals[i] * forward.trans_next[i] - suffix;
        suffix += g_vals[i] * forward.weights[i];
        let d_raw = dx * forward.deltas[i] * logistic(forward.raws[i]);
        if d_raw == 0.0 {
            continue;
        }
        d_density.iter_mut().for_each(|v| *v = d_raw);
        model.density().factors().scatter_coefficient_grads(
            geometry,
            &forward.stencils[i],
            &d_density,
            &mut grads.density_factors,
        );
    }
    Ok(())
}

/// Pure weight-chain derivative used by the backward sweep, exposed for
/// direct verification: given `g_i = ∂L/∂w_i`, per-sample weights, and the
/// post-sample transmittances `T_{i+1}`, returns `∂L/∂x_i` for every sample.
pub fn optical_depth_grads(g: &[f64], weights: &[f64], trans_next: &[f64]) -> Vec<f64> {
    debug_assert!(g.len() == weights.len() && g.len() == trans_next.len());
    let mut out = vec![0.0; g.len()];
    let mut suffix = 0.0;
    for i in (0..g.len()).rev() {
        out[i] = g[i] * trans_next[i] - suffix;
        suffix += g[i] * weights[i];
    }
    out
}

// ---------------------------------------------------------------------------
// Batch objective
// ---------------------------------------------------------------------------

/// One supervised ray: where to shoot it and what the oracle says it should
/// integrate to.
pub struct RayTarget<'a> {
    pub camera: &'a Camera,
    pub spec: &'a SamplingSpec,
    pub pixel: (usize, usize),
    pub gt_features: &'a [f64],
    pub gt_rgb: [f64; 3],
}

/// Evaluates the batch objective
/// `mean((F̄−gt_f)²) + rgb_weight · mean((linear_decode(F̄,w_r)−gt_rgb)²)`
/// over a fixed ray set and, when `grads` is given, accumulates its exact
/// gradient. The RGB term uses the *linear* decode (no clamp) so gradients
/// do not vanish at the clamp boundary; the oracle's reference images never
/// clamp, so the measured loss is the same quantity.
///
/// Returns `(feature_mse, rgb_mse)`. Rays are processed in slice order and
/// gradients accumulate sequentially, so results are bit-reproducible.
pub fn batch_objective(
    model: &Model,
    rays: &[RayTarget<'_>],
    rgb_weight: f64,
    mut grads: Option<&mut ModelGrads>,
) -> Result<(f64, f64)> {
    if rays.is_empty() {
        return Err(Error::domain("batch needs at least one ray".to_string()));
    }
    let channels = model.channels();
    let decoder = model.decoder();
    let n_f = (rays.len() * channels) as f64;
    let n_rgb = (rays.len() * 3) as f64;
    let mut sq_f = 0.0;
    let mut sq_rgb = 0.0;
    let mut d_bar = vec![0.0; channels];

    for ray in rays {
        if ray.gt_features.len() != channels {
            return Err(Error::domain(format!(
                "ground-truth features have {} channels, model has {channels}",
                ray.gt_features.len()
            )));
        }
        let fwd = forward_ray(model, ray.camera, ray.pixel, ray.spec)?;
        let bar = &fwd.bar_features;

        // Linear decode: rgb_k = bias_k + Σ_c W_{kc}·F̄_c + (1−w_r)·bg_k.
        let mut e_rgb = [0.0; 3];
        for k in 0..3 {
            let mut pred = decoder.bias[k] + (1.0 - fwd.ray_weight) * decoder.background[k];
            for (c, b) in bar.iter().enumerate() {
                pred += decoder.weight[(k, c)] * b;
            }
            e_rgb[k] = pred - ray.gt_rgb[k];
            sq_rgb += e_rgb[k] * e_rgb[k];
        }
        for (c, (b, gt)) in bar.iter().zip(ray.gt_features).enumerate() {
            let e = b - gt;
            sq_f += e * e;
            d_bar[c] = 2.0 * e / n_f;
        }

        if let Some(g) = grads.as_deref_mut() {
            let rgb_scale = 2.0 * rgb_weight / n_rgb;
            let mut d_wr = 0.0;
            for k in 0..3 {
                let d = rgb_scale * e_rgb[k];
                d_wr -= d * decoder.background[k];
                g.decoder_bias[k] += d;
                for (c, b) in bar.iter().enumerate() {
                    g.decoder_weight[(k, c)] += d * b;
                    d_bar[c] += d * decoder.weight[(k, c)];
                }
            }
            render_backward(model, &fwd, &d_bar, d_wr, g)?;
        }
    }
    Ok((sq_f / n_f, sq_rgb / n_rgb))
}

// ---------------------------------------------------------------------------
// Stage-1 fitting
// ---------------------------------------------------------------------------

/// Result of a stage-1 fit.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    /// One entry per gradient step (the batch losses).
    pub losses: Vec<LossReport>,
    /// Full-render feature MSE against the oracle before any step.
    pub initial_feature_mse: f64,
    /// Full-render feature MSE after the last step.
    pub final_feature_mse: f64,
    /// Mean squared RGB residual of the final least-squares decoder fit;
    /// `None` when `iterations == 0` (no fit happened).
    pub decoder_residual: Option<f64>,
}

/// Derives a sampling interval that covers the grid's bounding box as seen
/// from `camera`: the box's circumscribed sphere padded by 5%, clamped to
/// positive depth. Uniform (midpoint) sampling, so renders are seed-free.
pub fn derive_sampling_spec(
    geometry: &GridGeometry,
    camera: &Camera,
    samples_per_ray: usize,
) -> SamplingSpec {
    let center = (geometry.bbox_min() + geometry.bbox_max()) * 0.5;
    let half_diag = (geometry.bbox_max() - geometry.bbox_min()).length() * 0.5;
    let reach = half_diag * 1.05;
    let dist = (camera.position() - center).length();
    SamplingSpec {
        samples_per_ray,
        near: (dist - reach).max(1e-3),
        far: dist + reach,
        stratified: false,
        seed: 0,
    }
}

/// Fits a fresh model to the oracle scene by plain gradient descent.
///
/// Ground truth is rendered once per camera with the same sampling spec the
/// model is trained and evaluated with, so the loss measures grid fidelity
/// rather than quadrature differences. Each iteration draws
/// `rays_per_batch` pixels (camera, column, row — in that order) from one
/// seeded stream, accumulates analytic gradients over the batch in draw
/// order, and takes one descent step. After the last step the decoder is
/// refit in closed form against the oracle images.
///
/// With `iterations == 0` the seeded initialization is returned unchanged
/// (no decoder refit), as a baseline for convergence measurements.
pub fn fit_stage1(
    scene: &SceneOracle,
    cameras: &[Camera],
    config: &Stage1Config,
) -> Result<FitOutcome> {
    config.validate()?;
    if cameras.len() < 2 {
        return Err(Error::domain(format!(
            "stage-1 fitting needs at least 2 cameras for multi-view constraints, got {}",
            cameras.len()
        )));
    }
    let geometry = GridGeometry::new(config.resolution, config.bbox_min, config.bbox_max)?;
    let channels = scene.channels();
    let mut model = Model::seeded(
        geometry.clone(),
        config.rank,
        channels,
        config.reduced_channels,
        config.background,
        config.seed,
    )?;

    let specs: Vec<SamplingSpec> =
        cameras.iter().map(|c| derive_sampling_spec(&geometry, c, config.samples_per_ray)).collect();

    let mut gt_maps = Vec::with_capacity(cameras.len());
    let mut gt_rgbs = Vec::with_capacity(cameras.len());
    for (camera, spec) in cameras.iter().zip(&specs) {
        let (map, rgb) = reference_render(scene, camera, spec, config.background)?;
        gt_maps.push(map);
        gt_rgbs.push(rgb);
    }

    let (_, initial_feature_mse) = eval_feature_mse(&model, cameras, &specs, &gt_maps)?;

    // The ray-sampling stream is decoupled from the seed the model init
    // consumed so adding parameters never shifts which rays get drawn.
    let mut rng = SplitMix64::new(crate::math::mix_seed(config.seed, 0x7261_7973, 0));
    let mut grads = ModelGrads::zeros_like(&model);
    let mut losses = Vec::with_capacity(config.iterations);
    let rates = stage1_rates(config.learning_rate);

    for iteration in 0..config.iterations {
        grads.fill_zero();
        let mut picks = Vec::with_capacity(config.rays_per_batch);
        for _ in 0..config.rays_per_batch {
            let ci = rng.next_index(cameras.len());
            let u = rng.next_index(cameras[ci].width());
            let v = rng.next_index(cameras[ci].height());
            picks.push((ci, u, v));
        }
        let rays: Vec<RayTarget<'_>> = picks
            .iter()
            .map(|&(ci, u, v)| RayTarget {
                camera: &cameras[ci],
                spec: &specs[ci],
                pixel: (u, v),
                gt_features: gt_maps[ci].pixel(u, v),
                gt_rgb: gt_rgbs[ci].pixel(u, v),
            })
            .collect();
        let (feature_mse, rgb_mse) =
            batch_objective(&model, &rays, config.rgb_loss_weight, Some(&mut grads))?;
        let total = feature_mse + config.rgb_loss_weight * rgb_mse;
        losses.push(LossReport { iteration, feature_mse, rgb_mse, total });
        if !total.is_finite() || total > DIVERGENCE_LOSS {
            return Err(Error::domain(format!(
                "training diverged at iteration {iteration}: batch loss {total} exceeds {DIVERGENCE_LOSS} \
                 (learning rate {} is likely too large)",
                config.learning_rate
            )));
        }
        model.apply_gradients(&grads, &rates)?;
    }

    if config.iterations == 0 {
        return Ok(FitOutcome {
            model,
            losses,
            initial_feature_mse,
            final_feature_mse: initial_feature_mse,
            decoder_residual: None,
        });
    }

    let (final_maps, final_feature_mse) = eval_feature_mse(&model, cameras, &specs, &gt_maps)?;
    let map_refs: Vec<&FeatureMap> = final_maps.iter().collect();
    let rgb_refs: Vec<&RgbImage> = gt_rgbs.iter().collect();
    let (decoder, decoder_residual) = fit_decoder(&map_refs, &rgb_refs, config.background)?;
    model.set_decoder(decoder)?;

    Ok(FitOutcome {
        model,
        losses,
        initial_feature_mse,
        final_feature_mse,
        decoder_residual: Some(decoder_residual),
    })
}

/// Renders every camera with the current grids and returns the maps plus the
/// mean squared feature error against the oracle maps (mean over all pixels,
/// channels, and cameras).
fn eval_feature_mse(
    model: &Model,
    cameras: &[Camera],
    specs: &[SamplingSpec],
    gt_maps: &[FeatureMap],
) -> Result<(Vec<FeatureMap>, f64)> {
    let mut maps = Vec::with_capacity(cameras.len());
    let mut sq = 0.0;
    let mut n = 0usize;
    for ((camera, spec), gt) in cameras.iter().zip(specs).zip(gt_maps) {
        let map = render_feature_map(&model.volume(), camera, spec, None)?;
        debug_assert_eq!(map.data.len(), gt.data.len());
        for (a, b) in map.data.iter().zip(&gt.data) {
            let e = a - b;
            sq += e * e;
        }
        n += map.data.len();
        maps.push(map);
    }
    Ok((maps, sq / n as f64))
}

// ---------------------------------------------------------------------------
// Stage-2 metrics
// ---------------------------------------------------------------------------

/// Content/style losses for a stylized feature map against its content map
/// and target style statistics: `L_c` is the feature MSE, `L_s` penalizes the
/// distance between the stylized map's global mean/std (population) and the
/// style's, and `total = L_c + lambda·L_s`. Diagnostic only — nothing in the
/// pipeline optimizes these.
pub fn stylization_metrics(
    stylized: &FeatureMap,
    content: &FeatureMap,
    stats: &StyleStats,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    if stylized.width != content.width
        || stylized.height != content.height
        || stylized.channels != content.channels
    {
        return Err(Error::domain(format!(
            "stylized map is {}x{}x{}, content map is {}x{}x{}",
            stylized.width,
            stylized.height,
            stylized.channels,
            content.width,
            content.height,
            content.channels
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if stylized.data.is_empty() {
        return Err(Error::domain("stylization metrics need at least one pixel".to_string()));
    }
    let l_c = mean_squared_error(&stylized.data, &content.data);
    let n = stylized.data.len() as f64;
    let mean = stylized.data.iter().sum::<f64>() / n;
    let var = stylized.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let l_s = (mean - stats.mu) * (mean - stats.mu) + (std - stats.sigma) * (std - stats.sigma);
    Ok((l_c, l_s, l_c + lambda * l_s))
}
