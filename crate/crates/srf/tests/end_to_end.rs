//! Exercises the full consumer flow through the public API: fit on the
//! analytic scene, round-trip the checkpoint through a file, render feature
//! maps with the content transform, and stylize with deferred statistics.

use srf::decoder::{decode, RgbImage};
use srf::io::checkpoint::{load_checkpoint, save_checkpoint};
use srf::math::Vec3;
use srf::scene_synth::SceneOracle;
use srf::sict::SictTransform;
use srf::style_transform::{
    apply_dst, compute_style_stats, extract_style_features, interpolate_styles, StyleStats,
};
use srf::trainer::{derive_sampling_spec, fit_stage1, Stage1Config};
use srf::volume_renderer::render_feature_map;

#[test]
fn fit_checkpoint_render_stylize_pipeline() {
    let scene = SceneOracle::single_sphere(6);
    let cameras = [
        srf::volume_renderer::Camera::look_at(
            Vec3::new(0.0, 0.2, -2.4),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            45.0,
            (12, 12),
        )
        .unwrap(),
        srf::volume_renderer::Camera::look_at(
            Vec3::new(2.4, 0.2, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            45.0,
            (12, 12),
        )
        .unwrap(),
    ];
    let config = Stage1Config {
        resolution: [8, 8, 8],
        rank: 2,
        reduced_channels: 3,
        learning_rate: 1e-3,
        iterations: 5,
        rays_per_batch: 48,
        samples_per_ray: 10,
        seed: 13,
        ..Stage1Config::default()
    };
    let outcome = fit_stage1(&scene, &cameras, &config).expect("fit");
    assert!(
        outcome.final_feature_mse <= outcome.initial_feature_mse,
        "five steps must not increase the objective ({} -> {})",
        outcome.initial_feature_mse,
        outcome.final_feature_mse
    );

    // The checkpoint survives a trip through the filesystem.
    let dir = tempfile::TempDir::new().expect("tempdir");
    let path = dir.path().join("model.srfg");
    save_checkpoint(&path, &outcome.model).expect("save");
    let loaded = load_checkpoint(&path).expect("load");
    assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
    let model = loaded.model;

    // Render a content-transformed feature map and decode it.
    let sict = SictTransform::new(model.norm(), model.attention()).expect("content transform");
    let spec = derive_sampling_spec(model.geometry(), &cameras[0], 10);
    let map = render_feature_map(&model.volume(), &cameras[0], &spec, Some(&sict))
        .expect("feature render");
    assert_eq!((map.width, map.height), (12, 12));
    assert_eq!(map.channels, model.reduced_channels());

    let identity = StyleStats::identity(model.reduced_channels());
    let id_map = apply_dst(&map, &identity, model.dst()).expect("identity style");
    let plain: RgbImage = decode(&id_map, model.decoder()).expect("decode");
    for v in 0..plain.height {
        for u in 0..plain.width {
            for c in plain.pixel(u, v) {
                assert!((0.0..=1.0).contains(&c), "decoded colors stay in [0, 1], got {c}");
            }
        }
    }

    // A real style leaves the ray weights untouched but moves the features.
    let mut swatch = RgbImage::zeros(32, 32);
    for v in 0..32 {
        for u in 0..32 {
            let x = u as f64 / 31.0;
            let y = v as f64 / 31.0;
            swatch.set_pixel(u, v, [x, (1.0 - x) * y, 0.25 + 0.5 * y]);
        }
    }
    let features =
        extract_style_features(&swatch, model.reduced_channels()).expect("style features");
    let stats = compute_style_stats(&features).expect("style stats");
    let styled_map = apply_dst(&map, &stats, model.dst()).expect("styled");
    assert_eq!(styled_map.ray_weight, id_map.ray_weight, "stylization is appearance-only");
    assert_ne!(styled_map.data, id_map.data, "a non-identity style must move the features");

    // Interpolation blends the two stylizations pointwise.
    let mid = interpolate_styles(&[&styled_map, &id_map], &[0.5, 0.5]).expect("midpoint");
    for (i, &value) in mid.data.iter().enumerate() {
        let expected = 0.5 * (styled_map.data[i] + id_map.data[i]);
        assert!(
            (value - expected).abs() <= 1e-12,
            "midpoint[{i}] = {value}, expected {expected}"
        );
    }
}
