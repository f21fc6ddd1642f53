//! Prints per-group parameter and gradient RMS at iteration 0 of the
//! reference fit setup — the measurements behind the per-group rate
//! multipliers in the trainer. Rerun after changing initialization scales.

use srf::math::{SplitMix64, Vec3};
use srf::model::{Model, ModelGrads};
use srf::scene_synth::{reference_render, SceneOracle};
use srf::tensor_grid::GridGeometry;
use srf::trainer::{batch_objective, derive_sampling_spec, RayTarget};
use srf::volume_renderer::Camera;

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn main() {
    let scene = SceneOracle::single_sphere(16);
    let up = Vec3::new(0.0, 1.0, 0.0);
    let cameras: Vec<Camera> = [
        Vec3::new(0.0, 0.9, -2.5),
        Vec3::new(2.5, -0.6, 0.4),
    ]
    .iter()
    .map(|&eye| Camera::look_at(eye, Vec3::ZERO, up, 45.0, (64, 64)).unwrap())
    .collect();
    let geometry = GridGeometry::new([32; 3], Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
    let model = Model::seeded(geometry.clone(), 8, 16, 8, [0.5; 3], 0).unwrap();
    let spec = derive_sampling_spec(&geometry, &cameras[0], 64);
    let (gt_map, gt_rgb) = reference_render(&scene, &cameras[0], &spec, [0.5; 3]).unwrap();

    let mut rng = SplitMix64::new(1);
    let picks: Vec<(usize, usize)> =
        (0..128).map(|_| (rng.next_index(64), rng.next_index(64))).collect();
    let rays: Vec<RayTarget<'_>> = picks
        .iter()
        .map(|&(u, v)| RayTarget {
            camera: &cameras[0],
            spec: &spec,
            pixel: (u, v),
            gt_features: gt_map.pixel(u, v),
            gt_rgb: gt_rgb.pixel(u, v),
        })
        .collect();
    let mut grads = ModelGrads::zeros_like(&model);
    batch_objective(&model, &rays, 1.0, Some(&mut grads)).unwrap();

    let f = model.features().factors();
    println!("param rms:");
    println!("  feature line  {:.3e}", rms(f.line(0)));
    println!("  feature plane {:.3e}", rms(f.plane(0)));
    println!("  basis         {:.3e}", rms(model.features().basis().data()));
    println!("grad rms (batch 128):");
    println!("  feature line  {:.3e}", rms(&grads.feature_factors.line[0]));
    println!("  feature plane {:.3e}", rms(&grads.feature_factors.plane[0]));
    println!("  basis         {:.3e}", rms(grads.basis.data()));
    println!("  density line  {:.3e}", rms(&grads.density_factors.line[0]));
    println!("  density plane {:.3e}", rms(&grads.density_factors.plane[0]));
    println!("  decoder w     {:.3e}", rms(grads.decoder_weight.data()));
    println!("  decoder b     {:.3e}", rms(&grads.decoder_bias));
}
