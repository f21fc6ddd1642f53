//! Procedural analytic scenes used as ground truth.
//!
//! A scene is a set of smooth density blobs built from signed distance
//! functions (sphere, box, torus): each primitive contributes
//! `amplitude · smoothstep(-sdf / softness)`, so density is exactly zero
//! outside a primitive's surface, rises smoothly through a shell of width
//! `3 · softness`, and saturates at `amplitude` inside. Features are a fixed
//! sinusoidal spatial encoding plus per-primitive channel offsets weighted
//! by the same membership, and reference RGB comes from a fixed linear
//! decoder — so a grid fitted to the oracle's renders can in principle
//! recover the color mapping exactly, with no hidden nonlinearity anywhere.
//!
//! Everything is a closed-form function of position: renders are
//! deterministic, and quadrature accuracy can be judged by self-refinement
//! (doubling the sample count and watching the change shrink).

use crate::decoder::{decode, DecoderParams, RgbImage};
use crate::error::{Error, Result};
use crate::math::{smoothstep, Mat, Vec3};
use crate::volume_renderer::{render_feature_map, Camera, FeatureMap, SamplingSpec, VolumeSource};

/// Analytic shape of one primitive, centered at the origin. Sizes are in
/// world units; the torus ring lies in the XZ plane.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveShape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    Torus { major_radius: f64, minor_radius: f64 },
}

/// A placed primitive: shape, center, and the density it saturates to.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub center: Vec3,
    pub density_amplitude: f64,
}

impl Primitive {
    /// Signed distance from `p` to the primitive surface (negative inside).
    pub fn sdf(&self, p: Vec3) -> f64 {
        let q = p - self.center;
        match &self.shape {
            PrimitiveShape::Sphere { radius } => q.length() - radius,
            PrimitiveShape::Box { half_extents } => {
                let dx = q.x.abs() - half_extents.x;
                let dy = q.y.abs() - half_extents.y;
                let dz = q.z.abs() - half_extents.z;
                let outside =
                    Vec3::new(dx.max(0.0), dy.max(0.0), dz.max(0.0)).length();
                let inside = dx.max(dy).max(dz).min(0.0);
                outside + inside
            }
            PrimitiveShape::Torus { major_radius, minor_radius } => {
                let ring = (q.x * q.x + q.z * q.z).sqrt() - major_radius;
                (ring * ring + q.y * q.y).sqrt() - minor_radius
            }
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::NonFinite("primitive center"));
        }
        if !(self.density_amplitude.is_finite() && self.density_amplitude >= 0.0) {
            return Err(Error::domain(format!(
                "primitive {index}: density amplitude must be finite and nonnegative, got {}",
                self.density_amplitude
            )));
        }
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!(
                    "primitive {index}: {name} must be positive, got {v}"
                )));
            }
            Ok(())
        };
        match &self.shape {
            PrimitiveShape::Sphere { radius } => positive("radius", *radius),
            PrimitiveShape::Box { half_extents } => {
                positive("half extent x", half_extents.x)?;
                positive("half extent y", half_extents.y)?;
                positive("half extent z", half_extents.z)
            }
            PrimitiveShape::Torus { major_radius, minor_radius } => {
                positive("major radius", *major_radius)?;
                positive("minor radius", *minor_radius)?;
                if minor_radius >= major_radius {
                    return Err(Error::domain(format!(
                        "primitive {index}: minor radius {minor_radius} must be below major radius {major_radius}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Scale of the per-primitive feature offsets; see [`SceneOracle::features_into`].
const OFFSET_SCALE: f64 = 0.3;

/// An analytic scene: primitives, a shared shell softness, and the feature
/// channel count. Implements [`VolumeSource`] with no clip bounds (density
/// is zero away from the primitives anyway).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOracle {
    primitives: Vec<Primitive>,
    softness: f64,
    channels: usize,
}

impl SceneOracle {
    pub fn new(primitives: Vec<Primitive>, softness: f64, channels: usize) -> Result<SceneOracle> {
        if primitives.is_empty() {
            return Err(Error::domain("scene needs at least one primitive".to_string()));
        }
        if !(softness.is_finite() && softness > 0.0) {
            return Err(Error::domain(format!("softness must be positive, got {softness}")));
        }
        if channels == 0 {
            return Err(Error::domain("scene needs at least one feature channel".to_string()));
        }
        for (i, p) in primitives.iter().enumerate() {
            p.validate(i)?;
        }
        Ok(SceneOracle { primitives, softness, channels })
    }

    /// The canonical test scene: one sphere of radius 0.6 at the origin,
    /// amplitude 8 (optically thick through the middle), softness 0.05.
    pub fn single_sphere(channels: usize) -> SceneOracle {
        SceneOracle::new(
            vec![Primitive {
                shape: PrimitiveShape::Sphere { radius: 0.6 },
                center: Vec3::ZERO,
                density_amplitude: 8.0,
            }],
            0.05,
            channels,
        )
        .expect("canonical sphere scene is valid")
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn softness(&self) -> f64 {
        self.softness
    }

    /// Membership of `p` in primitive `i`: 0 outside the surface, 1 deeper
    /// than `3 · softness` inside, smooth in between.
    pub fn membership(&self, i: usize, p: Vec3) -> f64 {
        // smoothstep maps [0,1]; -sdf/(3s) reaches 1 at depth 3s.
        smoothstep(-self.primitives[i].sdf(p) / (3.0 * self.softness))
    }

    /// Total density at `p`: the amplitude-weighted sum of memberships.
    pub fn density(&self, p: Vec3) -> f64 {
        (0..self.primitives.len())
            .map(|i| self.primitives[i].density_amplitude * self.membership(i, p))
            .sum()
    }

    /// Feature vector at `p`. Channel `j` is a fixed sinusoid of one
    /// coordinate plus per-primitive offsets weighted by membership:
    ///
    /// ```text
    /// axis  = j mod 3          (x, y, z cycling)
    /// k     = 1 + j / 6        (harmonic)
    /// phase = π/2 if (j/3) odd else 0
    /// base_j(p)   = sin(k · π · p[axis] + phase)
    /// offset_p[j] = 0.3 · sin(1.7 · (p_idx + 1) · (j + 1))
    /// f_j(p) = base_j(p) + Σ_p membership_p · offset_p[j]
    /// ```
    pub fn features_into(&self, p: Vec3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        for (j, o) in out.iter_mut().enumerate() {
            let axis = j % 3;
            let k = (1 + j / 6) as f64;
            let phase = if (j / 3) % 2 == 1 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
            *o = (k * std::f64::consts::PI * p.axis(axis) + phase).sin();
        }
        for i in 0..self.primitives.len() {
            let m = self.membership(i, p);
            if m == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += m * OFFSET_SCALE * (1.7 * (i + 1) as f64 * (j + 1) as f64).sin();
            }
        }
    }

    /// The fixed linear decoder that defines the oracle's reference colors:
    /// weight 0.2 on the matching leading channel, bias 0.5. Together with a
    /// mid-gray background this keeps unclamped RGB inside [0, 1] for scenes
    /// of up to five primitives, so reference images carry no clipping.
    pub fn decoder_params(&self, background: [f64; 3]) -> DecoderParams {
        let weight = Mat::from_fn(3, self.channels, |c, j| if c == j { 0.2 } else { 0.0 });
        DecoderParams::new(weight, [0.5; 3], background).expect("oracle decoder params are valid")
    }
}

impl VolumeSource for SceneOracle {
    fn channels(&self) -> usize {
        self.channels
    }

    fn clip_bounds(&self) -> Option<(Vec3, Vec3)> {
        None
    }

    fn sample_point(&self, p: Vec3, features_out: &mut [f64]) -> f64 {
        self.features_into(p, features_out);
        self.density(p)
    }
}

/// Renders the oracle directly: the feature map by the shared quadrature,
/// and RGB through the oracle's own fixed linear decoder. With a high sample
/// count this is the ground truth that grid fitting and stylization are
/// judged against.
pub fn reference_render(
    scene: &SceneOracle,
    camera: &Camera,
    spec: &SamplingSpec,
    background: [f64; 3],
) -> Result<(FeatureMap, RgbImage)> {
    let map = render_feature_map(scene, camera, spec, None)?;
    let rgb = decode(&map, &scene.decoder_params(background))?;
    Ok((map, rgb))
}
