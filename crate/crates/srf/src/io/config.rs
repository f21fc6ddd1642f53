//! The JSON run configuration: scene, grid shape, cameras, sampling,
//! training, and style inputs in one file, with dotted-path overrides for
//! the CLI's `--set key=value` flag.
//!
//! Unknown keys are rejected (with the offending field named in the error),
//! absent sections fall back to documented defaults — notably 64 samples per
//! ray and non-stratified sampling — and every semantic rule failure names
//! the field that broke it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene_synth::{Primitive, PrimitiveShape, SceneOracle};
use crate::tensor_grid::GridGeometry;
use crate::trainer::{derive_sampling_spec, Stage1Config};
use crate::volume_renderer::{Camera, SamplingSpec};

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// One analytic primitive. `density` is the saturated interior density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveConfig {
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default = "default_density")]
        density: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default = "default_density")]
        density: f64,
    },
    Torus {
        center: [f64; 3],
        major_radius: f64,
        minor_radius: f64,
        #[serde(default = "default_density")]
        density: f64,
    },
}

fn default_density() -> f64 {
    8.0
}

impl PrimitiveConfig {
    fn build(&self) -> Primitive {
        match *self {
            PrimitiveConfig::Sphere { center, radius, density } => Primitive {
                shape: PrimitiveShape::Sphere { radius },
                center: Vec3::from_array(center),
                density_amplitude: density,
            },
            PrimitiveConfig::Box { center, half_extents, density } => Primitive {
                shape: PrimitiveShape::Box { half_extents: Vec3::from_array(half_extents) },
                center: Vec3::from_array(center),
                density_amplitude: density,
            },
            PrimitiveConfig::Torus { center, major_radius, minor_radius, density } => Primitive {
                shape: PrimitiveShape::Torus { major_radius, minor_radius },
                center: Vec3::from_array(center),
                density_amplitude: density,
            },
        }
    }
}

/// The procedural scene used as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub primitives: Vec<PrimitiveConfig>,
    /// Shell softness of every primitive's density falloff.
    #[serde(default = "default_softness")]
    pub softness: f64,
}

fn default_softness() -> f64 {
    0.05
}

/// Shape of the factorized grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub resolution: [usize; 3],
    pub rank: usize,
    pub channels: usize,
    pub reduced_channels: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl Default for GridConfig {
    fn default() -> GridConfig {
        GridConfig {
            resolution: [32, 32, 32],
            rank: 8,
            channels: 16,
            reduced_channels: 8,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
        }
    }
}

/// One pinhole camera, specified look-at style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub position: [f64; 3],
    #[serde(default)]
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y_degrees: f64,
    #[serde(default = "default_image_side")]
    pub width: usize,
    #[serde(default = "default_image_side")]
    pub height: usize,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f64 {
    45.0
}

fn default_image_side() -> usize {
    64
}

impl CameraConfig {
    fn build(&self) -> Result<Camera> {
        Camera::look_at(
            Vec3::from_array(self.position),
            Vec3::from_array(self.look_at),
            Vec3::from_array(self.up),
            self.fov_y_degrees,
            (self.width, self.height),
        )
    }
}

/// Ray quadrature. When `near`/`far` are omitted they are derived per camera
/// from the grid's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub samples_per_ray: usize,
    pub stratified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> SamplingConfig {
        SamplingConfig { samples_per_ray: 64, stratified: false, near: None, far: None, seed: 0 }
    }
}

/// Stage-1 fitting knobs (grid shape lives in [`GridConfig`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub seed: u64,
    pub rgb_loss_weight: f64,
}

impl Default for TrainingConfig {
    fn default() -> TrainingConfig {
        TrainingConfig {
            learning_rate: 5e-3,
            iterations: 2000,
            rays_per_batch: 128,
            seed: 0,
            rgb_loss_weight: 1.0,
        }
    }
}

/// Style inputs: reference images (`.ppm`) or feature tensors (`.srft`) and
/// the content/style balance used by the stylization metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    pub paths: Vec<PathBuf>,
    pub lambda: f64,
}

impl Default for StyleConfig {
    fn default() -> StyleConfig {
        StyleConfig { paths: Vec::new(), lambda: 1.0 }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub style: StyleConfig,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
}

fn default_background() -> [f64; 3] {
    [0.5; 3]
}

// ---------------------------------------------------------------------------
// Parsing and overrides
// ---------------------------------------------------------------------------

/// Parses a configuration document, rejecting unknown keys and validating
/// the semantic rules below.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(text, &[])
}

/// Parses a configuration document, then applies `--set`-style dotted-path
/// overrides before validation, e.g. `("grid.rank", "4")` or
/// `("cameras.0.width", "128")`.
pub fn parse_config_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("invalid JSON at line {}, column {}: {e}", e.line(), e.column())))?;
    for (path, raw) in overrides {
        apply_override(&mut value, path, raw)?;
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Reads and parses `path` with overrides.
pub fn read_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_with_overrides(&text, overrides)
        .map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Sets the JSON node at dotted `path` to `raw` (parsed as JSON when
/// possible, otherwise taken as a string). Missing object keys along the way
/// are created — a typo therefore surfaces later as an unknown-field error —
/// but array indices must already exist.
pub fn apply_override(root: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Config("override path is empty".to_string()));
    }
    let new_value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (depth, segment) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(segment.to_string(), new_value);
                    return Ok(());
                }
                node = map
                    .entry(segment.to_string())
                    .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
            }
            serde_json::Value::Array(items) => {
                let index: usize = segment.parse().map_err(|_| {
                    Error::Config(format!(
                        "override '{path}': segment '{segment}' must be an array index"
                    ))
                })?;
                let len = items.len();
                let slot = items.get_mut(index).ok_or_else(|| {
                    Error::Config(format!(
                        "override '{path}': index {index} is out of bounds (length {len})"
                    ))
                })?;
                if last {
                    *slot = new_value;
                    return Ok(());
                }
                node = slot;
            }
            other => {
                return Err(Error::Config(format!(
                    "override '{path}': segment '{segment}' addresses into a {} value",
                    json_kind(other)
                )));
            }
        }
    }
    unreachable!("loop returns on the last segment");
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "boolean",
        serde_json::Value::Number(_) => "number",
        serde_json::Value::String(_) => "string",
        serde_json::Value::Array(_) => "array",
        serde_json::Value::Object(_) => "object",
    }
}

// ---------------------------------------------------------------------------
// Validation and builders
// ---------------------------------------------------------------------------

impl RunConfig {
    /// Semantic validation with field-level diagnostics. Structural
    /// validation (types, unknown keys) already happened during
    /// deserialization.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));

        if self.cameras.is_empty() {
            return Err(Error::Config("cameras: at least one camera is required".to_string()));
        }
        for (i, camera) in self.cameras.iter().enumerate() {
            camera.build().map_err(|e| field(&format!("cameras.{i}"), e))?;
        }
        self.build_scene().map_err(|e| field("scene", e))?;
        self.build_geometry().map_err(|e| field("grid", e))?;
        if self.grid.rank == 0 {
            return Err(Error::Config("grid.rank: must be at least 1".to_string()));
        }
        if self.grid.channels == 0 {
            return Err(Error::Config("grid.channels: must be at least 1".to_string()));
        }
        if self.grid.reduced_channels == 0 || self.grid.reduced_channels > self.grid.channels {
            return Err(Error::Config(format!(
                "grid.reduced_channels: must be in 1..={}, got {}",
                self.grid.channels, self.grid.reduced_channels
            )));
        }
        if self.sampling.samples_per_ray == 0 {
            return Err(Error::Config("sampling.samples_per_ray: must be at least 1".to_string()));
        }
        match (self.sampling.near, self.sampling.far) {
            (None, None) => {}
            (Some(near), Some(far)) => {
                if !(near.is_finite() && far.is_finite()) {
                    return Err(Error::Config("sampling.near/far: must be finite".to_string()));
                }
                if near < 0.0 {
                    return Err(Error::Config(format!(
                        "sampling.near: must be nonnegative, got {near}"
                    )));
                }
                if near >= far {
                    return Err(Error::Config(format!(
                        "sampling.near: must be strictly below sampling.far, got near {near} >= far {far}"
                    )));
                }
            }
            _ => {
                return Err(Error::Config(
                    "sampling.near and sampling.far must be given together or both omitted"
                        .to_string(),
                ))
            }
        }
        self.stage1_config().validate().map_err(|e| field("training", e))?;
        if !(self.style.lambda.is_finite() && self.style.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "style.lambda: must be finite and nonnegative, got {}",
                self.style.lambda
            )));
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("background: must be finite".to_string()));
        }
        Ok(())
    }

    pub fn build_scene(&self) -> Result<SceneOracle> {
        let primitives = self.scene.primitives.iter().map(PrimitiveConfig::build).collect();
        SceneOracle::new(primitives, self.scene.softness, self.grid.channels)
    }

    pub fn build_cameras(&self) -> Result<Vec<Camera>> {
        self.cameras.iter().map(CameraConfig::build).collect()
    }

    pub fn build_geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(
            self.grid.resolution,
            Vec3::from_array(self.grid.bbox_min),
            Vec3::from_array(self.grid.bbox_max),
        )
    }

    /// The stage-1 configuration implied by the grid, sampling, and training
    /// sections.
    pub fn stage1_config(&self) -> Stage1Config {
        Stage1Config {
            resolution: self.grid.resolution,
            rank: self.grid.rank,
            reduced_channels: self.grid.reduced_channels,
            bbox_min: Vec3::from_array(self.grid.bbox_min),
            bbox_max: Vec3::from_array(self.grid.bbox_max),
            background: self.background,
            learning_rate: self.training.learning_rate,
            iterations: self.training.iterations,
            rays_per_batch: self.training.rays_per_batch,
            samples_per_ray: self.sampling.samples_per_ray,
            seed: self.training.seed,
            rgb_loss_weight: self.training.rgb_loss_weight,
        }
    }

    /// The sampling spec for rendering through `camera`: explicit `near`/
    /// `far` when configured, otherwise derived from the grid's bounding box.
    pub fn sampling_spec(&self, geometry: &GridGeometry, camera: &Camera) -> SamplingSpec {
        let mut spec = match (self.sampling.near, self.sampling.far) {
            (Some(near), Some(far)) => SamplingSpec {
                samples_per_ray: self.sampling.samples_per_ray,
                near,
                far,
                stratified: false,
                seed: 0,
            },
            _ => derive_sampling_spec(geometry, camera, self.sampling.samples_per_ray),
        };
        spec.stratified = self.sampling.stratified;
        spec.seed = self.sampling.seed;
        spec
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scene": { "primitives": [ { "kind": "sphere", "center": [0, 0, 0], "radius": 0.6 } ] },
        "cameras": [ { "position": [0, 0, -2.5] } ]
    }"#;

    fn config_error(text: &str) -> String {
        match parse_config(text) {
            Err(Error::Config(msg)) => msg,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let config = parse_config(MINIMAL).unwrap();
        assert_eq!(config.sampling.samples_per_ray, 64);
        assert!(!config.sampling.stratified);
        assert_eq!(config.sampling.near, None);
        assert_eq!(config.grid.resolution, [32, 32, 32]);
        assert_eq!(config.grid.rank, 8);
        assert_eq!(config.grid.channels, 16);
        assert_eq!(config.grid.reduced_channels, 8);
        assert_eq!(config.training.learning_rate, 5e-3);
        assert_eq!(config.training.iterations, 2000);
        assert_eq!(config.training.rays_per_batch, 128);
        assert_eq!(config.background, [0.5; 3]);
        assert_eq!(config.scene.softness, 0.05);
        assert_eq!(config.cameras[0].fov_y_degrees, 45.0);
        assert_eq!((config.cameras[0].width, config.cameras[0].height), (64, 64));
        assert!(config.style.paths.is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_offending_name() {
        let text = MINIMAL.replace("\"cameras\"", "\"resolutoin\": 3, \"cameras\"");
        let msg = config_error(&text);
        assert!(msg.contains("resolutoin"), "error should name the unknown key: {msg}");

        let nested = MINIMAL.replace("\"radius\": 0.6", "\"radius\": 0.6, \"radiis\": 1.0");
        let msg = config_error(&nested);
        assert!(msg.contains("radiis"), "error should name the nested unknown key: {msg}");
    }

    #[test]
    fn json_syntax_errors_carry_line_and_column() {
        let msg = config_error("{ \"scene\": }");
        assert!(msg.contains("line 1"), "syntax error should locate itself: {msg}");
    }

    #[test]
    fn near_not_below_far_is_rejected_naming_the_field() {
        let text = MINIMAL.replace(
            "\"cameras\"",
            "\"sampling\": { \"near\": 4.0, \"far\": 4.0 }, \"cameras\"",
        );
        let msg = config_error(&text);
        assert!(msg.contains("sampling.near"), "error should name the field: {msg}");
    }

    #[test]
    fn near_without_far_is_rejected() {
        let text = MINIMAL.replace("\"cameras\"", "\"sampling\": { \"near\": 0.5 }, \"cameras\"");
        let msg = config_error(&text);
        assert!(msg.contains("together"), "error: {msg}");
    }

    #[test]
    fn empty_scenes_and_missing_cameras_are_rejected() {
        let msg = config_error(
            r#"{ "scene": { "primitives": [] },
                 "cameras": [ { "position": [0, 0, -2.5] } ] }"#,
        );
        assert!(msg.contains("scene"), "error: {msg}");
        let msg = config_error(
            r#"{ "scene": { "primitives": [ { "kind": "sphere", "center": [0,0,0], "radius": 0.6 } ] },
                 "cameras": [] }"#,
        );
        assert!(msg.contains("cameras"), "error: {msg}");
    }

    #[test]
    fn reduced_channels_above_channels_is_rejected() {
        let text = MINIMAL.replace(
            "\"cameras\"",
            "\"grid\": { \"channels\": 4, \"reduced_channels\": 5 }, \"cameras\"",
        );
        let msg = config_error(&text);
        assert!(msg.contains("grid.reduced_channels"), "error: {msg}");
    }

    #[test]
    fn builders_produce_working_objects() {
        let config = parse_config(MINIMAL).unwrap();
        let scene = config.build_scene().unwrap();
        assert_eq!(scene.primitives().len(), 1);
        let cameras = config.build_cameras().unwrap();
        assert_eq!(cameras.len(), 1);
        let geometry = config.build_geometry().unwrap();
        let spec = config.sampling_spec(&geometry, &cameras[0]);
        assert_eq!(spec.samples_per_ray, 64);
        assert!(spec.near < spec.far);
        let stage1 = config.stage1_config();
        stage1.validate().unwrap();
        assert_eq!(stage1.samples_per_ray, 64);
    }

    #[test]
    fn explicit_near_far_override_derivation() {
        let text = MINIMAL.replace(
            "\"cameras\"",
            "\"sampling\": { \"near\": 1.25, \"far\": 3.75, \"stratified\": true, \"seed\": 7 }, \"cameras\"",
        );
        let config = parse_config(&text).unwrap();
        let geometry = config.build_geometry().unwrap();
        let camera = config.build_cameras().unwrap().remove(0);
        let spec = config.sampling_spec(&geometry, &camera);
        assert_eq!((spec.near, spec.far), (1.25, 3.75));
        assert!(spec.stratified);
        assert_eq!(spec.seed, 7);
    }

    #[test]
    fn overrides_reach_nested_fields_and_array_elements() {
        let config = parse_config_with_overrides(
            MINIMAL,
            &[
                ("grid.rank".to_string(), "4".to_string()),
                ("cameras.0.width".to_string(), "128".to_string()),
                ("sampling.stratified".to_string(), "true".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(config.grid.rank, 4);
        assert_eq!(config.cameras[0].width, 128);
        assert!(config.sampling.stratified);
    }

    #[test]
    fn override_of_an_unknown_field_is_rejected() {
        let err = parse_config_with_overrides(
            MINIMAL,
            &[("grid.rnak".to_string(), "4".to_string())],
        );
        match err {
            Err(Error::Config(msg)) => assert!(msg.contains("rnak"), "error: {msg}"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn override_with_bad_array_index_is_rejected() {
        for path in ["cameras.5.width", "cameras.x.width"] {
            let err = parse_config_with_overrides(
                MINIMAL,
                &[(path.to_string(), "128".to_string())],
            );
            match err {
                Err(Error::Config(msg)) => assert!(msg.contains(path), "error: {msg}"),
                other => panic!("expected a config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn all_primitive_kinds_parse_and_build() {
        let text = r#"{
            "scene": { "primitives": [
                { "kind": "sphere", "center": [0, 0, 0], "radius": 0.6 },
                { "kind": "box", "center": [0.2, 0, 0], "half_extents": [0.3, 0.2, 0.1], "density": 5.0 },
                { "kind": "torus", "center": [0, -0.2, 0], "major_radius": 0.5, "minor_radius": 0.15 }
            ], "softness": 0.08 },
            "cameras": [ { "position": [0, 0.5, -2.5], "look_at": [0, 0, 0] } ]
        }"#;
        let config = parse_config(text).unwrap();
        let scene = config.build_scene().unwrap();
        assert_eq!(scene.primitives().len(), 3);
        assert_eq!(scene.primitives()[1].density_amplitude, 5.0);
        assert_eq!(scene.primitives()[2].density_amplitude, 8.0);
    }

    #[test]
    fn serialization_round_trips_semantically() {
        let config = parse_config(MINIMAL).unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, config);
    }

    #[test]
    fn read_config_names_the_file_on_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{").unwrap();
        match read_config(&path, &[]) {
            Err(Error::Config(msg)) => assert!(msg.contains("bad.json"), "error: {msg}"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }
}
