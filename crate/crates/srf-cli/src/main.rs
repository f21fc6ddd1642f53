//! `srf` — command-line driver for the feature-grid style-transfer engine.
//!
//! Subcommands cover the whole pipeline: `fit` trains the factorized grids
//! against the configured analytic scene, `calibrate` re-estimates the
//! normalization statistics over the fitted volume, `render` produces the
//! unstyled content view, `stylize` / `interpolate` / `composite` apply one
//! or several reference styles, `synth` emits the oracle's ground-truth
//! artifacts, `verify` runs the numerical property battery, and `info`
//! inspects a checkpoint.
//!
//! `render` and the style commands share one rendering path — per-point
//! content transform, feature-map rendering, channel-restoring style
//! transform, linear decode — differing only in the style statistics
//! (`render` uses the identity style). Identical inputs and seeds therefore
//! produce byte-identical artifacts, and an identity style reproduces the
//! `render` output bit for bit.
//!
//! Exit codes: 0 success, 1 failed verification property, 2 usage error,
//! 3 domain/config error, 4 I/O or parse error. The environment variable
//! `STYLERF_THREADS` caps rendering parallelism (0 or unset = automatic).

use clap::{Args, Parser, Subcommand};
use srf::decoder::decode;
use srf::error::{Error, Result};
use srf::io::checkpoint::{list_sections, load_checkpoint, save_checkpoint};
use srf::io::config::{read_config, RunConfig};
use srf::io::ppm::{load_ppm, save_ppm};
use srf::io::tensor::{
    feature_map_to_tensor, load_tensor, ray_weights_to_tensor, save_tensor,
    tensor_to_style_features,
};
use srf::model::Model;
use srf::scene_synth::reference_render;
use srf::sict::SictTransform;
use srf::style_transform::{
    apply_dst, composite_styles, compute_style_stats, extract_style_features,
    interpolate_styles, StyleStats,
};
use srf::trainer::{fit_stage1, write_loss_csv};
use srf::verify::{all_pass, report_csv, report_text, run_all};
use srf::volume_renderer::{render_feature_map, Camera, FeatureMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Points and batch size of the `calibrate` pass (seeded uniform samples
/// over the grid's bounding box).
const CALIBRATION_POINTS: usize = 1 << 16;
const CALIBRATION_BATCH: usize = 4096;

#[derive(Parser, Debug)]
#[command(
    name = "srf",
    version,
    about = "Feature-grid radiance fields with zero-shot 3D style transfer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the factorized grids to the configured scene and write a checkpoint.
    Fit(CommonArgs),
    /// Re-estimate normalization running statistics over the fitted volume.
    Calibrate(ModelArgs),
    /// Render each camera's content view (identity style) to a PPM image.
    Render(ModelArgs),
    /// Render each camera with the first configured style applied.
    Stylize(ModelArgs),
    /// Blend all configured styles with the given interpolation weights.
    Interpolate(InterpolateArgs),
    /// Splice all configured styles with vertical-band binary masks.
    Composite(ModelArgs),
    /// Run the numerical property battery and report PASS/FAIL per property.
    Verify(CommonArgs),
    /// Render the analytic oracle scene to ground-truth artifacts.
    Synth(CommonArgs),
    /// Inspect a checkpoint: sections, shapes, and load warnings.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Run configuration file (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Directory artifacts are written to (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Override both the training seed and the sampling seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Override sampling.samples_per_ray.
    #[arg(long, value_name = "N")]
    samples: Option<usize>,

    /// Dotted-path config override, e.g. --set training.iterations=50
    /// (repeatable; applied in order, before --seed/--samples).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, String)>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Checkpoint to load (default: <out>/model.srfg).
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Comma-separated interpolation weights, one per configured style;
    /// must sum to 1.
    #[arg(long, value_name = "W1,W2,...", value_delimiter = ',', required = true)]
    weights: Vec<f64>,
}

#[derive(Args, Debug)]
struct InfoArgs {
    /// Checkpoint file to inspect.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
}

fn parse_override(raw: &str) -> std::result::Result<(String, String), String> {
    match raw.split_once('=') {
        Some((key, value)) if !key.is_empty() => Ok((key.to_string(), value.to_string())),
        _ => Err(format!("expected KEY=VALUE, got {raw:?}")),
    }
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(("training.seed".to_string(), seed.to_string()));
            overrides.push(("sampling.seed".to_string(), seed.to_string()));
        }
        if let Some(samples) = self.samples {
            overrides.push(("sampling.samples_per_ray".to_string(), samples.to_string()));
        }
        overrides
    }

    fn load_config(&self) -> Result<RunConfig> {
        read_config(&self.config, &self.overrides())
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

impl ModelArgs {
    fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.common.out.join("model.srfg"))
    }

    fn load_model(&self) -> Result<Model> {
        let loaded = load_checkpoint(&self.model_path())?;
        for warning in &loaded.warnings {
            eprintln!("warning: {warning}");
        }
        Ok(loaded.model)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(code) = init_threads() {
        return code;
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// Applies `STYLERF_THREADS` before any rendering happens. Zero or unset
/// leaves the pool at its automatic size; a malformed value is a usage error.
fn init_threads() -> std::result::Result<(), ExitCode> {
    let raw = match std::env::var("STYLERF_THREADS") {
        Ok(raw) => raw,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(err) => {
            eprintln!("error: STYLERF_THREADS: {err}");
            return Err(ExitCode::from(2));
        }
    };
    let threads: usize = match raw.trim().parse() {
        Ok(n) => n,
        Err(_) => {
            eprintln!("error: STYLERF_THREADS must be a nonnegative integer, got {raw:?}");
            return Err(ExitCode::from(2));
        }
    };
    if threads > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: building thread pool: {err}");
            return Err(ExitCode::from(2));
        }
    }
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Fit(args) => cmd_fit(&args)?,
        Command::Calibrate(args) => cmd_calibrate(&args)?,
        Command::Render(args) => cmd_render(&args)?,
        Command::Stylize(args) => cmd_stylize(&args)?,
        Command::Interpolate(args) => cmd_interpolate(&args)?,
        Command::Composite(args) => cmd_composite(&args)?,
        Command::Verify(args) => return cmd_verify(&args),
        Command::Synth(args) => cmd_synth(&args)?,
        Command::Info(args) => cmd_info(&args)?,
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the rendering subcommands
// ---------------------------------------------------------------------------

/// Renders the content-transformed feature map for every configured camera.
/// This is the single rendering path behind `render`, `stylize`,
/// `interpolate`, and `composite`; they differ only in what happens to the
/// maps afterwards.
fn content_maps(model: &Model, config: &RunConfig) -> Result<(Vec<Camera>, Vec<FeatureMap>)> {
    let cameras = config.build_cameras()?;
    let sict = SictTransform::new(model.norm(), model.attention())?;
    let volume = model.volume();
    let mut maps = Vec::with_capacity(cameras.len());
    for camera in &cameras {
        let spec = config.sampling_spec(model.geometry(), camera);
        maps.push(render_feature_map(&volume, camera, &spec, Some(&sict))?);
    }
    Ok((cameras, maps))
}

/// Style statistics from one configured style path. PPM images go through
/// the built-in feature extractor at the model's reduced channel count;
/// SRFT tensors are used as feature maps directly.
fn style_stats_from_path(path: &Path, reduced_channels: usize) -> Result<StyleStats> {
    let features = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => extract_style_features(&load_ppm(path)?, reduced_channels)?,
        Some("srft") => {
            let features = tensor_to_style_features(&load_tensor(path)?)?;
            if features.channels != reduced_channels {
                return Err(Error::Config(format!(
                    "style tensor {} has {} channels, the model produces {reduced_channels}",
                    path.display(),
                    features.channels
                )));
            }
            features
        }
        _ => {
            return Err(Error::Config(format!(
                "style path {} must end in .ppm (image) or .srft (feature tensor)",
                path.display()
            )))
        }
    };
    compute_style_stats(&features)
}

fn configured_styles(config: &RunConfig, reduced_channels: usize) -> Result<Vec<StyleStats>> {
    if config.style.paths.is_empty() {
        return Err(Error::Config("style.paths must list at least one style".to_string()));
    }
    config.style.paths.iter().map(|p| style_stats_from_path(p, reduced_channels)).collect()
}

fn write_image(out: &Path, name: &str, map: &FeatureMap, model: &Model) -> Result<PathBuf> {
    let image = decode(map, model.decoder())?;
    let path = out.join(name);
    save_ppm(&path, &image)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_fit(args: &CommonArgs) -> Result<()> {
    let config = args.load_config()?;
    args.ensure_out()?;
    let scene = config.build_scene()?;
    let cameras = config.build_cameras()?;
    let stage1 = config.stage1_config();
    let outcome = fit_stage1(&scene, &cameras, &stage1)?;

    let model_path = args.out.join("model.srfg");
    save_checkpoint(&model_path, &outcome.model)?;
    let mut csv = Vec::new();
    write_loss_csv(&outcome.losses, &mut csv)?;
    fs::write(args.out.join("loss.csv"), csv)?;

    if outcome.initial_feature_mse > 0.0 {
        println!(
            "fit: {} iterations, feature MSE {:.6e} -> {:.6e} ({:.3}% of initial)",
            stage1.iterations,
            outcome.initial_feature_mse,
            outcome.final_feature_mse,
            100.0 * outcome.final_feature_mse / outcome.initial_feature_mse
        );
    } else {
        println!(
            "fit: {} iterations, feature MSE {:.6e} -> {:.6e}",
            stage1.iterations, outcome.initial_feature_mse, outcome.final_feature_mse
        );
    }
    if let Some(residual) = outcome.decoder_residual {
        println!("fit: decoder residual {residual:.6e}");
    }
    println!("fit: wrote {}", model_path.display());
    Ok(())
}

fn cmd_calibrate(args: &ModelArgs) -> Result<()> {
    let config = args.common.load_config()?;
    args.common.ensure_out()?;
    let mut model = args.load_model()?;
    let mut norm = model.norm().clone();
    srf::sict::calibrate(
        &mut norm,
        &model.volume(),
        CALIBRATION_POINTS,
        CALIBRATION_BATCH,
        config.sampling.seed,
    )?;
    *model.norm_mut() = norm;
    let path = args.common.out.join("model.srfg");
    save_checkpoint(&path, &model)?;
    println!(
        "calibrate: running statistics over {CALIBRATION_POINTS} points, wrote {}",
        path.display()
    );
    Ok(())
}

fn cmd_render(args: &ModelArgs) -> Result<()> {
    let config = args.common.load_config()?;
    args.common.ensure_out()?;
    let model = args.load_model()?;
    let (_, maps) = content_maps(&model, &config)?;
    let identity = StyleStats::identity(model.reduced_channels());
    for (i, map) in maps.iter().enumerate() {
        let styled = apply_dst(map, &identity, model.dst())?;
        let path = write_image(&args.common.out, &format!("render_{i:02}.ppm"), &styled, &model)?;
        println!("render: wrote {}", path.display());
    }
    Ok(())
}

fn cmd_stylize(args: &ModelArgs) -> Result<()> {
    let config = args.common.load_config()?;
    args.common.ensure_out()?;
    let model = args.load_model()?;
    // An empty style list is the identity style: stylize then reproduces
    // `render` exactly, which is the pipeline's self-check.
    let stats = if config.style.paths.is_empty() {
        eprintln!("note: no styles configured; applying the identity style");
        vec![StyleStats::identity(model.reduced_channels())]
    } else {
        configured_styles(&config, model.reduced_channels())?
    };
    if stats.len() > 1 {
        eprintln!(
            "note: {} styles configured; stylize applies the first (see interpolate/composite)",
            stats.len()
        );
    }
    let (_, maps) = content_maps(&model, &config)?;
    for (i, map) in maps.iter().enumerate() {
        let styled = apply_dst(map, &stats[0], model.dst())?;
        let path = write_image(&args.common.out, &format!("stylize_{i:02}.ppm"), &styled, &model)?;
        println!("stylize: wrote {}", path.display());
    }
    Ok(())
}

fn cmd_interpolate(args: &InterpolateArgs) -> Result<()> {
    let config = args.model.common.load_config()?;
    args.model.common.ensure_out()?;
    let model = args.model.load_model()?;
    let stats = configured_styles(&config, model.reduced_channels())?;
    if stats.len() != args.weights.len() {
        return Err(Error::domain(format!(
            "got {} interpolation weights for {} configured styles",
            args.weights.len(),
            stats.len()
        )));
    }
    let (_, maps) = content_maps(&model, &config)?;
    for (i, map) in maps.iter().enumerate() {
        let styled: Vec<FeatureMap> =
            stats.iter().map(|s| apply_dst(map, s, model.dst())).collect::<Result<_>>()?;
        let refs: Vec<&FeatureMap> = styled.iter().collect();
        let blended = interpolate_styles(&refs, &args.weights)?;
        let path =
            write_image(&args.model.common.out, &format!("interpolate_{i:02}.ppm"), &blended, &model)?;
        println!("interpolate: wrote {}", path.display());
    }
    Ok(())
}

/// Binary masks assigning each style a vertical band of columns: style `k`
/// of `n` owns columns `[k·w/n, (k+1)·w/n)`. Exactly one mask is 1 at every
/// pixel, so they partition unity.
fn band_masks(width: usize, height: usize, bands: usize) -> Vec<Vec<f64>> {
    let mut masks = vec![vec![0.0; width * height]; bands];
    for u in 0..width {
        let k = (u * bands / width).min(bands - 1);
        for v in 0..height {
            masks[k][v * width + u] = 1.0;
        }
    }
    masks
}

fn cmd_composite(args: &ModelArgs) -> Result<()> {
    let config = args.common.load_config()?;
    args.common.ensure_out()?;
    let model = args.load_model()?;
    let stats = configured_styles(&config, model.reduced_channels())?;
    let (_, maps) = content_maps(&model, &config)?;
    for (i, map) in maps.iter().enumerate() {
        let styled: Vec<FeatureMap> =
            stats.iter().map(|s| apply_dst(map, s, model.dst())).collect::<Result<_>>()?;
        let refs: Vec<&FeatureMap> = styled.iter().collect();
        let masks = band_masks(map.width, map.height, styled.len());
        let mask_refs: Vec<&[f64]> = masks.iter().map(|m| m.as_slice()).collect();
        let spliced = composite_styles(&refs, &mask_refs)?;
        let path =
            write_image(&args.common.out, &format!("composite_{i:02}.ppm"), &spliced, &model)?;
        println!("composite: wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify(args: &CommonArgs) -> Result<ExitCode> {
    let config = args.load_config()?;
    args.ensure_out()?;
    let reports = run_all(config.training.seed)?;
    let text = report_text(&reports);
    print!("{text}");
    fs::write(args.out.join("verify.txt"), &text)?;
    fs::write(args.out.join("verify.csv"), report_csv(&reports))?;
    Ok(if all_pass(&reports) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_synth(args: &CommonArgs) -> Result<()> {
    let config = args.load_config()?;
    args.ensure_out()?;
    let scene = config.build_scene()?;
    let cameras = config.build_cameras()?;
    let geometry = config.build_geometry()?;
    for (i, camera) in cameras.iter().enumerate() {
        let spec = config.sampling_spec(&geometry, camera);
        let (map, rgb) = reference_render(&scene, camera, &spec, config.background)?;
        save_ppm(&args.out.join(format!("synth_rgb_{i:02}.ppm")), &rgb)?;
        save_tensor(
            &args.out.join(format!("synth_features_{i:02}.srft")),
            &feature_map_to_tensor(&map)?,
        )?;
        save_tensor(
            &args.out.join(format!("synth_weights_{i:02}.srft")),
            &ray_weights_to_tensor(&map)?,
        )?;
        println!("synth: camera {i}: wrote rgb image, feature tensor, weight tensor");
    }
    Ok(())
}

fn section_name(tag: u32) -> &'static str {
    match tag {
        1 => "geometry",
        2 => "feature factors",
        3 => "density factors",
        4 => "feature basis",
        5 => "normalization",
        6 => "attention",
        7 => "restore conv",
        8 => "decoder",
        9 => "reserved",
        _ => "unknown",
    }
}

fn cmd_info(args: &InfoArgs) -> Result<()> {
    let bytes = fs::read(&args.model)?;
    let sections = list_sections(&bytes)?;
    println!("{}: {} sections", args.model.display(), sections.len());
    for (tag, len) in &sections {
        println!("  section {tag:2} ({}): {len} bytes", section_name(*tag));
    }
    let loaded = load_checkpoint(&args.model)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let model = &loaded.model;
    let [nx, ny, nz] = model.geometry().resolution();
    println!(
        "grid {nx}x{ny}x{nz}, rank {}, channels {}, reduced channels {}, {} grid parameters",
        model.rank(),
        model.channels(),
        model.reduced_channels(),
        model.grid_param_count()
    );
    Ok(())
}
