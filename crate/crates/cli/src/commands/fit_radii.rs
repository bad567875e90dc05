//! `svs fit-radii`: gradient-descent fitting against target views.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Deserialize;
use svs_core::image_buf::ImageBuf;
use svs_core::io;
use svs_core::optim::{fit_with_callback, FitConfig, FitTarget, OptimizeFlags};
use svs_core::rasterizer::{render, RenderSettings};
use svs_core::sphere_cloud::{cloud_from_rgbd, sparse_sample, FeatureSource, RadiusBounds};

use crate::common::{auto_background, auto_radius, with_path, CliError, CliResult};

#[derive(ClapArgs)]
pub struct Args {
    /// Input view directory.
    #[arg(long)]
    input: PathBuf,

    /// JSON manifest: {"targets": ["view_dir", ...]}.
    #[arg(long)]
    targets: PathBuf,

    #[arg(long, default_value_t = 200)]
    steps: usize,

    #[arg(long, default_value_t = 0.05)]
    lr: f64,

    /// Comma-separated subset of radii,features,positions.
    #[arg(long, default_value = "radii")]
    optimize: String,

    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Soft-regime blending temperature used during descent.
    #[arg(long, default_value_t = 0.3)]
    gamma: f64,

    #[arg(long, default_value_t = 2.0)]
    sharpness: f64,

    #[arg(long)]
    init_radius: Option<f64>,

    /// Trace CSV path (step,total,l1,bce,cons,grad_norm,ms).
    #[arg(long)]
    trace: Option<PathBuf>,

    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 25)]
    log_every: usize,
}

#[derive(Deserialize)]
struct Manifest {
    targets: Vec<PathBuf>,
}

fn parse_optimize(list: &str) -> Result<OptimizeFlags, CliError> {
    let mut flags = OptimizeFlags {
        radii: false,
        features: false,
        positions: false,
    };
    for item in list.split(',') {
        match item.trim() {
            "radii" => flags.radii = true,
            "features" => flags.features = true,
            "positions" => flags.positions = true,
            other => {
                return Err(CliError::usage(format!(
                    "unknown parameter group '{other}' (expected radii, features, positions)"
                )))
            }
        }
    }
    Ok(flags)
}

pub fn run(args: Args) -> CliResult {
    let (frame, src_cam) = with_path(io::load_view(&args.input), &args.input)?;
    let manifest_text = std::fs::read_to_string(&args.targets)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.targets.display())))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.targets.is_empty() {
        return Err(CliError::usage("manifest lists no targets"));
    }
    let manifest_dir = args.targets.parent().unwrap_or(Path::new("."));

    let frame = if args.sparsity < 1.0 {
        let keep = sparse_sample(&frame.depth, args.sparsity, args.seed)?;
        frame.with_depth_subset(&keep)?
    } else {
        frame
    };
    let radius = auto_radius(&frame, src_cam.fx, args.init_radius, 0.72)?;
    let cloud = cloud_from_rgbd(
        &frame,
        &src_cam,
        radius,
        RadiusBounds::default(),
        FeatureSource::Rgb,
    )?;

    let mut targets = Vec::new();
    for rel in &manifest.targets {
        let dir = if rel.is_absolute() {
            rel.clone()
        } else {
            manifest_dir.join(rel)
        };
        let (tframe, tcam) = with_path(io::load_view(&dir), &dir)?;
        targets.push(FitTarget {
            camera: tcam,
            image: tframe.rgb,
            fg_mask: tframe.fg_mask,
        });
    }

    let settings = RenderSettings {
        gamma: args.gamma,
        sharpness: args.sharpness,
        background_feature: auto_background(&frame),
        ..RenderSettings::default()
    };
    let mut config = FitConfig::new(targets, settings.clone());
    config.steps = args.steps;
    config.learning_rate = args.lr;
    config.optimize = parse_optimize(&args.optimize)?;
    config.log_every = args.log_every.max(1);

    let (fitted, trace) = fit_with_callback(&cloud, &config, |step, s| {
        println!(
            "step {step:4}  total {:.6}  l1 {:.6}  bce {:.6}  grad {:.3e}",
            s.total, s.l1, s.mask_bce, s.grad_norm
        );
    })?;

    std::fs::create_dir_all(&args.out)?;
    if let Some(trace_path) = &args.trace {
        let mut f = std::fs::File::create(trace_path)?;
        writeln!(f, "step,total,l1,bce,cons,grad_norm,ms")?;
        for (i, s) in trace.steps.iter().enumerate() {
            writeln!(
                f,
                "{i},{},{},{},{},{},{:.3}",
                s.total, s.l1, s.mask_bce, s.consistency, s.grad_norm, s.millis
            )?;
        }
    }

    // fitted radii for inspection plus a render per target
    let radii = fitted.radii();
    io::write_pfm(
        &args.out.join("radii.pfm"),
        &ImageBuf::from_vec(radii.len(), 1, 1, radii),
    )?;
    for (i, target) in config.targets.iter().enumerate() {
        let out = render(&fitted, &target.camera, &settings)?;
        io::write_rgb8_png(
            &args.out.join(format!("fitted_target_{i:02}.png")),
            &out.features,
        )?;
    }
    let final_loss = trace.steps.last().map(|s| s.total).unwrap_or(f64::NAN);
    println!("final loss {final_loss:.6}");
    println!("wrote {}", args.out.display());
    Ok(())
}
