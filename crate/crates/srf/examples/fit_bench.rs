//! Convergence/wall-clock probe for the stage-1 fit at the reference scale.
//! Run with: cargo run --release -p srf --example fit_bench [lr] [iters]

use srf::math::Vec3;
use srf::scene_synth::SceneOracle;
use srf::trainer::{fit_stage1, Stage1Config};
use srf::volume_renderer::Camera;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
    let iterations: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);

    let scene = SceneOracle::single_sphere(16);
    let up = Vec3::new(0.0, 1.0, 0.0);
    let cameras: Vec<Camera> = [
        Vec3::new(0.0, 0.9, -2.5),
        Vec3::new(2.5, -0.6, 0.4),
        Vec3::new(-2.3, 0.4, 1.1),
        Vec3::new(0.3, -1.0, 2.4),
    ]
    .iter()
    .map(|&eye| Camera::look_at(eye, Vec3::ZERO, up, 45.0, (64, 64)).unwrap())
    .collect();

    let config = Stage1Config { learning_rate: lr, iterations, ..Stage1Config::default() };
    let t0 = std::time::Instant::now();
    let out = fit_stage1(&scene, &cameras, &config).unwrap();
    let dt = t0.elapsed();

    println!("lr {lr}  iterations {iterations}");
    println!("initial feature MSE: {:.6e}", out.initial_feature_mse);
    println!("final   feature MSE: {:.6e}", out.final_feature_mse);
    println!("ratio: {:.4}%", 100.0 * out.final_feature_mse / out.initial_feature_mse);
    println!("decoder residual: {:?}", out.decoder_residual);
    println!("wall: {:.2?}", dt);
    for (i, l) in out.losses.iter().enumerate() {
        if i % 200 == 0 || i + 1 == out.losses.len() {
            println!("  iter {:4}  total {:.6e}  feat {:.6e}  rgb {:.6e}", l.iteration, l.total, l.feature_mse, l.rgb_mse);
        }
    }
}
