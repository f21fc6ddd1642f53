//! Aggregate radiance-field model: the factorized density and feature grids
//! together with the feature-space transform stages (normalization state,
//! channel attention, style restore convolution) and the linear decoder.
//!
//! The model owns every trainable and serializable array in one place so the
//! trainer, checkpoint codec, and CLI agree on what "the model" is. Mutation
//! goes through [`Model::apply_gradients`] or [`Model::param_mut`], both of
//! which bump a revision counter; recorded forward passes remember the
//! revision they saw, letting the backward pass reject stale state instead of
//! silently producing gradients for parameters that have since moved.

use crate::decoder::DecoderParams;
use crate::error::{Error, Result};
use crate::math::{Mat, SplitMix64, Vec3};
use crate::sict::{AttentionParams, VolumeAdaptiveNorm};
use crate::style_transform::DstParams;
use crate::tensor_grid::{FactorGrads, GridGeometry, VmDensityField, VmFactors, VmFeatureField};
use crate::volume_renderer::VolumeSource;

/// Raw-density offset given to freshly seeded models. `softplus(-1) ≈ 0.31`
/// starts the volume as thin fog — present enough that rays see gradient
/// signal everywhere, transparent enough that surfaces can carve themselves
/// out. Keeping the offset as a constant outside the factor product (instead
/// of baking `-1` into the factor entries) preserves the random asymmetry
/// between ranks; identical factor entries would receive identical gradients
/// forever and collapse the decomposition to rank one.
pub const FRESH_DENSITY_RAW_OFFSET: f64 = -1.0;

/// Half-width of the seeded uniform initialization for factor entries.
pub const FACTOR_INIT_RANGE: f64 = 0.1;

/// Half-width of the seeded uniform initialization for basis-matrix entries.
/// Deliberately O(1), much larger than the factor range: with a small basis
/// the early feature gradients are damped twice over (factor × basis) and
/// plain gradient descent stalls on a plateau; an O(1) basis hands the mixing
/// stage full strength from the start so the factors, which carry the spatial
/// structure, receive usable gradients immediately.
pub const BASIS_INIT_RANGE: f64 = 1.0;

/// Addressable scalar parameter inside a [`Model`], used by gradient
/// verification to perturb one entry at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    FeatureLine { axis: usize, index: usize },
    FeaturePlane { axis: usize, index: usize },
    Basis { index: usize },
    DensityLine { axis: usize, index: usize },
    DensityPlane { axis: usize, index: usize },
    DecoderWeight { index: usize },
    DecoderBias { index: usize },
}

/// Gradient accumulator shaped like the trainable part of a [`Model`].
///
/// Normalization statistics, attention projections, and the style convolution
/// are deliberately absent: they are calibrated or loaded, never descended on.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub feature_factors: FactorGrads,
    /// `C × 3R`, matching the basis matrix.
    pub basis: Mat,
    pub density_factors: FactorGrads,
    /// `3 × C`, matching the decoder weight.
    pub decoder_weight: Mat,
    pub decoder_bias: [f64; 3],
}

/// Per-group descent rates. Plain gradient descent with one global rate
/// cannot serve parameter groups whose natural gradient scales differ by
/// orders of magnitude (the linear decoder head sees O(1e-1) gradients while
/// factor entries see O(1e-5) ones, each factor's gradient being damped by
/// the other factors' magnitudes). A fixed diagonal rate per group is still
/// memoryless, deterministic descent — no running state, no adaptivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub feature_factors: f64,
    pub basis: f64,
    pub density_factors: f64,
    pub decoder: f64,
}

impl GroupRates {
    pub fn uniform(rate: f64) -> GroupRates {
        GroupRates { feature_factors: rate, basis: rate, density_factors: rate, decoder: rate }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("feature_factors", self.feature_factors),
            ("basis", self.basis),
            ("density_factors", self.density_factors),
            ("decoder", self.decoder),
        ] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::domain(format!("{name} rate must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> ModelGrads {
        ModelGrads {
            feature_factors: FactorGrads::zeros_like(model.features.factors()),
            basis: Mat::zeros(model.features.basis().rows(), model.features.basis().cols()),
            density_factors: FactorGrads::zeros_like(model.density.factors()),
            decoder_weight: Mat::zeros(3, model.decoder.channels()),
            decoder_bias: [0.0; 3],
        }
    }

    pub fn fill_zero(&mut self) {
        self.feature_factors.fill_zero();
        self.basis.data_mut().iter_mut().for_each(|x| *x = 0.0);
        self.density_factors.fill_zero();
        self.decoder_weight.data_mut().iter_mut().for_each(|x| *x = 0.0);
        self.decoder_bias = [0.0; 3];
    }

    /// Reads the accumulated gradient for one parameter slot.
    pub fn get(&self, slot: ParamSlot) -> Result<f64> {
        let fetch = |v: &[f64], i: usize, what: &str| {
            v.get(i).copied().ok_or_else(|| {
                Error::domain(format!("{what} gradient index {i} out of range ({} entries)", v.len()))
            })
        };
        match slot {
            ParamSlot::FeatureLine { axis, index } => {
                fetch(&self.feature_factors.line[check_axis(axis)?], index, "feature line")
            }
            ParamSlot::FeaturePlane { axis, index } => {
                fetch(&self.feature_factors.plane[check_axis(axis)?], index, "feature plane")
            }
            ParamSlot::Basis { index } => fetch(self.basis.data(), index, "basis"),
            ParamSlot::DensityLine { axis, index } => {
                fetch(&self.density_factors.line[check_axis(axis)?], index, "density line")
            }
            ParamSlot::DensityPlane { axis, index } => {
                fetch(&self.density_factors.plane[check_axis(axis)?], index, "density plane")
            }
            ParamSlot::DecoderWeight { index } => fetch(self.decoder_weight.data(), index, "decoder weight"),
            ParamSlot::DecoderBias { index } => fetch(&self.decoder_bias, index, "decoder bias"),
        }
    }
}

fn check_axis(axis: usize) -> Result<usize> {
    if axis < 3 {
        Ok(axis)
    } else {
        Err(Error::domain(format!("axis must be 0..3, got {axis}")))
    }
}

/// The full engine state for one scene.
#[derive(Debug, Clone)]
pub struct Model {
    density: VmDensityField,
    features: VmFeatureField,
    norm: VolumeAdaptiveNorm,
    attention: AttentionParams,
    dst: DstParams,
    decoder: DecoderParams,
    revision: u64,
}

impl Model {
    /// Deterministically initialized model. Factor entries and the basis are
    /// drawn `uniform(-0.1, 0.1)` from one seeded stream in a documented
    /// order (feature line/plane factors axis by axis, then the basis
    /// row-major, then density factors); the density field starts as thin fog
    /// via [`FRESH_DENSITY_RAW_OFFSET`]. Attention defaults to the leading
    /// rows of the identity, the restore convolution to the identity
    /// embedding, and the decoder to zero weights with mid-gray bias so an
    /// untrained render is a flat plausible image rather than noise.
    pub fn seeded(
        geometry: GridGeometry,
        rank: usize,
        channels: usize,
        reduced_channels: usize,
        background: [f64; 3],
        seed: u64,
    ) -> Result<Model> {
        if channels == 0 {
            return Err(Error::domain("channels must be at least 1".to_string()));
        }
        let mut rng = SplitMix64::new(seed);
        let r = FACTOR_INIT_RANGE;
        let b = BASIS_INIT_RANGE;
        let feature_factors = VmFactors::seeded_uniform(&geometry, rank, -r, r, &mut rng)?;
        let basis = Mat::from_fn(channels, 3 * rank, |_, _| rng.uniform(-b, b));
        let density_factors = VmFactors::seeded_uniform(&geometry, rank, -r, r, &mut rng)?;
        let features = VmFeatureField::new(geometry.clone(), feature_factors, basis)?;
        let density = VmDensityField::new(geometry, density_factors, FRESH_DENSITY_RAW_OFFSET);
        let norm = VolumeAdaptiveNorm::new(channels);
        let attention = AttentionParams::identity_rows(channels, reduced_channels)?;
        let dst = DstParams::identity_restore(channels, reduced_channels)?;
        let decoder = DecoderParams::new(Mat::zeros(3, channels), [0.5; 3], background)?;
        Model::from_parts(density, features, norm, attention, dst, decoder)
    }

    /// Assembles a model from already-built parts (the checkpoint load path),
    /// validating that every stage agrees on geometry and channel counts.
    pub fn from_parts(
        density: VmDensityField,
        features: VmFeatureField,
        norm: VolumeAdaptiveNorm,
        attention: AttentionParams,
        dst: DstParams,
        decoder: DecoderParams,
    ) -> Result<Model> {
        let g = features.geometry();
        let d = density.geometry();
        if g.resolution() != d.resolution()
            || g.bbox_min() != d.bbox_min()
            || g.bbox_max() != d.bbox_max()
        {
            return Err(Error::domain(
                "feature and density grids must share one geometry".to_string(),
            ));
        }
        let channels = features.channels();
        if norm.channels() != channels {
            return Err(Error::domain(format!(
                "normalization tracks {} channels, feature grid has {channels}",
                norm.channels()
            )));
        }
        if attention.input_channels() != channels {
            return Err(Error::domain(format!(
                "attention expects {} input channels, feature grid has {channels}",
                attention.input_channels()
            )));
        }
        if dst.input_channels() != attention.reduced_channels() {
            return Err(Error::domain(format!(
                "restore convolution expects {} input channels, attention produces {}",
                dst.input_channels(),
                attention.reduced_channels()
            )));
        }
        if dst.output_channels() != channels {
            return Err(Error::domain(format!(
                "restore convolution produces {} channels, decoder path needs {channels}",
                dst.output_channels()
            )));
        }
        if decoder.channels() != channels {
            return Err(Error::domain(format!(
                "decoder expects {} channels, feature grid has {channels}",
                decoder.channels()
            )));
        }
        Ok(Model { density, features, norm, attention, dst, decoder, revision: 0 })
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.features.geometry()
    }

    pub fn channels(&self) -> usize {
        self.features.channels()
    }

    pub fn reduced_channels(&self) -> usize {
        self.attention.reduced_channels()
    }

    pub fn rank(&self) -> usize {
        self.features.factors().rank()
    }

    pub fn density(&self) -> &VmDensityField {
        &self.density
    }

    pub fn features(&self) -> &VmFeatureField {
        &self.features
    }

    pub fn norm(&self) -> &VolumeAdaptiveNorm {
        &self.norm
    }

    /// Calibration mutates running statistics; that does not invalidate
    /// recorded grid forward passes (the grids are untouched), so this
    /// accessor does not bump the revision.
    pub fn norm_mut(&mut self) -> &mut VolumeAdaptiveNorm {
        &mut self.norm
    }

    pub fn attention(&self) -> &AttentionParams {
        &self.attention
    }

    pub fn dst(&self) -> &DstParams {
        &self.dst
    }

    pub fn decoder(&self) -> &DecoderParams {
        &self.decoder
    }

    pub fn set_decoder(&mut self, decoder: DecoderParams) -> Result<()> {
        if decoder.channels() != self.channels() {
            return Err(Error::domain(format!(
                "decoder expects {} channels, feature grid has {}",
                decoder.channels(),
                self.channels()
            )));
        }
        self.decoder = decoder;
        self.revision += 1;
        Ok(())
    }

    /// Number of trainable scalars in the grids (factors plus basis), the
    /// quantity compared against a dense grid in the compression check.
    pub fn grid_param_count(&self) -> usize {
        self.features.param_count() + self.density.param_count()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// One plain gradient-descent step: `θ ← θ − rate(θ's group) · g` on
    /// every trainable group. Bumps the revision so outstanding forward
    /// records go stale.
    pub fn apply_gradients(&mut self, grads: &ModelGrads, rates: &GroupRates) -> Result<()> {
        rates.validate()?;
        fn step(rate: f64, p: &mut [f64], g: &[f64]) {
            debug_assert_eq!(p.len(), g.len());
            for (x, d) in p.iter_mut().zip(g) {
                *x -= rate * d;
            }
        }
        for axis in 0..3 {
            step(
                rates.feature_factors,
                self.features.factors_mut().line_mut(axis),
                &grads.feature_factors.line[axis],
            );
            step(
                rates.feature_factors,
                self.features.factors_mut().plane_mut(axis),
                &grads.feature_factors.plane[axis],
            );
            step(
                rates.density_factors,
                self.density.factors_mut().line_mut(axis),
                &grads.density_factors.line[axis],
            );
            step(
                rates.density_factors,
                self.density.factors_mut().plane_mut(axis),
                &grads.density_factors.plane[axis],
            );
        }
        step(rates.basis, self.features.basis_mut().data_mut(), grads.basis.data());
        step(rates.decoder, self.decoder.weight.data_mut(), grads.decoder_weight.data());
        step(rates.decoder, &mut self.decoder.bias, &grads.decoder_bias);
        self.revision += 1;
        Ok(())
    }

    /// Mutable access to one trainable scalar. Bumps the revision (the caller
    /// holds a live `&mut`, so the value must be assumed changed).
    pub fn param_mut(&mut self, slot: ParamSlot) -> Result<&mut f64> {
        self.revision += 1;
        fn fetch<'a>(v: &'a mut [f64], i: usize, what: &str) -> Result<&'a mut f64> {
            let len = v.len();
            v.get_mut(i)
                .ok_or_else(|| Error::domain(format!("{what} index {i} out of range ({len} entries)")))
        }
        match slot {
            ParamSlot::FeatureLine { axis, index } => {
                fetch(self.features.factors_mut().line_mut(check_axis(axis)?), index, "feature line")
            }
            ParamSlot::FeaturePlane { axis, index } => {
                fetch(self.features.factors_mut().plane_mut(check_axis(axis)?), index, "feature plane")
            }
            ParamSlot::Basis { index } => fetch(self.features.basis_mut().data_mut(), index, "basis"),
            ParamSlot::DensityLine { axis, index } => {
                fetch(self.density.factors_mut().line_mut(check_axis(axis)?), index, "density line")
            }
            ParamSlot::DensityPlane { axis, index } => {
                fetch(self.density.factors_mut().plane_mut(check_axis(axis)?), index, "density plane")
            }
            ParamSlot::DecoderWeight { index } => {
                fetch(self.decoder.weight.data_mut(), index, "decoder weight")
            }
            ParamSlot::DecoderBias { index } => fetch(&mut self.decoder.bias, index, "decoder bias"),
        }
    }

    /// Read-only view of the grids as a renderable volume.
    pub fn volume(&self) -> GridVolume<'_> {
        GridVolume { model: self }
    }
}

/// The model's grids exposed as a [`VolumeSource`]: activated density plus
/// raw (untransformed) grid features. Feature-space transforms are layered on
/// top by the rendering pipeline, not baked in here.
#[derive(Clone, Copy)]
pub struct GridVolume<'a> {
    model: &'a Model,
}

impl VolumeSource for GridVolume<'_> {
    fn channels(&self) -> usize {
        self.model.channels()
    }

    fn clip_bounds(&self) -> Option<(Vec3, Vec3)> {
        let g = self.model.geometry();
        Some((g.bbox_min(), g.bbox_max()))
    }

    fn sample_point(&self, p: Vec3, features_out: &mut [f64]) -> f64 {
        let m = self.model;
        let geometry = m.features.geometry();
        let st = geometry.stencil(p);
        // One fused pass per factor set; the basis product accumulates column
        // by column so no 3R scratch buffer is needed.
        let basis = m.features.basis();
        let cols = basis.cols();
        let bdata = basis.data();
        features_out.iter_mut().for_each(|f| *f = 0.0);
        m.features.factors().for_each_coefficient(geometry, &st, |k, phi| {
            if phi != 0.0 {
                for (c, f) in features_out.iter_mut().enumerate() {
                    *f += phi * bdata[c * cols + k];
                }
            }
        });
        crate::math::softplus(m.density.raw_at_stencil(&st))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::max_abs_diff;
    use crate::volume_renderer::{render_feature_map, Camera, SamplingSpec};

    fn test_geometry() -> GridGeometry {
        GridGeometry::new([6, 5, 4], Vec3::splat(-1.0), Vec3::new(1.0, 0.8, 1.2)).unwrap()
    }

    fn test_model(seed: u64) -> Model {
        Model::seeded(test_geometry(), 3, 5, 2, [0.2, 0.3, 0.4], seed).unwrap()
    }

    #[test]
    fn seeded_model_is_reproducible_and_within_init_range() {
        let a = test_model(9);
        let b = test_model(9);
        assert_eq!(a.features().factors().line(1), b.features().factors().line(1));
        assert_eq!(a.features().basis().data(), b.features().basis().data());
        assert_eq!(a.density().factors().plane(2), b.density().factors().plane(2));
        for v in a.features().basis().data() {
            assert!(v.abs() <= BASIS_INIT_RANGE);
        }
        for v in a.features().factors().line(0) {
            assert!(v.abs() <= FACTOR_INIT_RANGE);
        }
        let c = test_model(10);
        assert_ne!(a.features().factors().line(0), c.features().factors().line(0));
    }

    #[test]
    fn volume_density_matches_field_and_features_match_field() {
        let m = test_model(4);
        let vol = m.volume();
        let mut rng = SplitMix64::new(77);
        for _ in 0..200 {
            let p = Vec3::new(
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 0.8),
                rng.uniform(-1.0, 1.2),
            );
            let mut feats = vec![0.0; m.channels()];
            let d = vol.sample_point(p, &mut feats);
            let expect_d = m.density().sample_density(p).unwrap();
            let expect_f = m.features().sample(p).unwrap();
            assert!((d - expect_d).abs() < 1e-15);
            assert!(max_abs_diff(&feats, &expect_f) < 1e-15);
        }
    }

    #[test]
    fn fresh_model_is_thin_fog_near_raw_offset() {
        let m = test_model(123);
        // Factor products are at most ~0.01 per term, so raw density stays
        // near the -1 offset everywhere and activated density near softplus(-1).
        let mut rng = SplitMix64::new(5);
        for _ in 0..100 {
            let p = Vec3::new(
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 0.8),
                rng.uniform(-1.0, 1.2),
            );
            let raw = m.density().sample_raw(p).unwrap();
            assert!((raw - FRESH_DENSITY_RAW_OFFSET).abs() < 0.1, "raw {raw}");
        }
    }

    #[test]
    fn apply_gradients_steps_and_bumps_revision() {
        let mut m = test_model(2);
        let before = m.features().factors().line(0)[0];
        let rev = m.revision();
        let mut g = ModelGrads::zeros_like(&m);
        g.feature_factors.line[0][0] = 2.0;
        g.decoder_bias[1] = 1.0;
        let rates = GroupRates { decoder: 0.5, ..GroupRates::uniform(0.25) };
        m.apply_gradients(&g, &rates).unwrap();
        assert_eq!(m.features().factors().line(0)[0], before - 0.5);
        assert_eq!(m.decoder().bias[1], 0.5 - 0.5);
        assert_eq!(m.revision(), rev + 1);
        assert!(m.apply_gradients(&g, &GroupRates::uniform(0.0)).is_err());
    }

    #[test]
    fn param_mut_addresses_every_group_and_bumps_revision() {
        let mut m = test_model(3);
        let slots = [
            ParamSlot::FeatureLine { axis: 0, index: 1 },
            ParamSlot::FeaturePlane { axis: 2, index: 4 },
            ParamSlot::Basis { index: 7 },
            ParamSlot::DensityLine { axis: 1, index: 0 },
            ParamSlot::DensityPlane { axis: 0, index: 2 },
            ParamSlot::DecoderWeight { index: 3 },
            ParamSlot::DecoderBias { index: 2 },
        ];
        for slot in slots {
            let rev = m.revision();
            *m.param_mut(slot).unwrap() += 0.5;
            assert_eq!(m.revision(), rev + 1);
        }
        assert!(m.param_mut(ParamSlot::Basis { index: 10_000 }).is_err());
        assert!(m.param_mut(ParamSlot::FeatureLine { axis: 3, index: 0 }).is_err());
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        let m = test_model(1);
        let other_geom = GridGeometry::new([4, 4, 4], Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        let density = VmDensityField::new(
            other_geom.clone(),
            VmFactors::zeros(&other_geom, 3).unwrap(),
            0.0,
        );
        assert!(matches!(
            Model::from_parts(
                density,
                m.features().clone(),
                m.norm().clone(),
                m.attention().clone(),
                m.dst().clone(),
                m.decoder().clone(),
            ),
            Err(Error::Domain(_))
        ));
        let bad_decoder = DecoderParams::new(Mat::zeros(3, 2), [0.0; 3], [0.0; 3]).unwrap();
        let mut m2 = test_model(1);
        assert!(m2.set_decoder(bad_decoder).is_err());
    }

    #[test]
    fn fresh_model_renders_flat_bias_plus_fogged_background() {
        // Zero decoder weight ⇒ the image is bias + (1 - w_r)·background for
        // every pixel, regardless of what the random features are.
        let m = test_model(8);
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::ZERO,
            Vec3::new(0.0, 1.0, 0.0),
            45.0,
            (8, 8),
        )
        .unwrap();
        let spec = SamplingSpec { samples_per_ray: 16, near: 0.5, far: 5.5, stratified: false, seed: 0 };
        let map = render_feature_map(&m.volume(), &cam, &spec, None).unwrap();
        let img = crate::decoder::decode(&map, m.decoder()).unwrap();
        for v in 0..8 {
            for u in 0..8 {
                let wr = map.ray_weight_at(u, v);
                let px = img.pixel(u, v);
                for c in 0..3 {
                    let expect = (0.5 + (1.0 - wr) * m.decoder().background[c]).clamp(0.0, 1.0);
                    assert!((px[c] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
