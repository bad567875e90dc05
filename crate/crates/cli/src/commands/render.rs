//! `svs render`: sparse RGB-D input -> novel view.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use svs_core::completion::pull_push;
use svs_core::io;
use svs_core::rasterizer::{render, RenderSettings};
use svs_core::sphere_cloud::{cloud_from_rgbd, sparse_sample, FeatureSource, RadiusBounds};

use crate::common::{auto_background, auto_radius, with_path, CliResult, MetricsReport};

#[derive(ClapArgs)]
pub struct Args {
    /// Input view directory (rgb.png, depth.png, camera.json).
    #[arg(long)]
    input: PathBuf,

    /// Target camera JSON.
    #[arg(long)]
    camera: PathBuf,

    /// Fraction of valid depth pixels to keep, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Blending temperature.
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,

    /// Coverage edge sharpness (px^-1).
    #[arg(long, default_value_t = 8.0)]
    sharpness: f64,

    /// Initial sphere radius in meters (default: auto from median depth).
    #[arg(long)]
    init_radius: Option<f64>,

    #[arg(long)]
    out: PathBuf,

    /// Fill alpha holes with pull-push before writing the preview.
    #[arg(long, default_value_t = false)]
    complete: bool,

    /// Ground-truth view directory; enables metrics.json.
    #[arg(long)]
    gt: Option<PathBuf>,
}

pub fn run(args: Args) -> CliResult {
    let (frame, src_cam) = with_path(io::load_view(&args.input), &args.input)?;
    let target_cam = with_path(io::load_camera_json(&args.camera), &args.camera)?;

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

    let settings = RenderSettings {
        gamma: args.gamma,
        sharpness: args.sharpness,
        background_feature: auto_background(&frame),
        ..RenderSettings::default()
    };
    let out = render(&cloud, &target_cam, &settings)?;

    std::fs::create_dir_all(&args.out)?;
    let image = if args.complete {
        pull_push(&out.features, &out.alpha)?
    } else {
        out.features.clone()
    };
    io::write_rgb8_png(&args.out.join("novel_view.png"), &image)?;
    io::write_pfm(&args.out.join("features.pfm"), &out.features)?;
    io::write_pfm(&args.out.join("alpha.pfm"), &out.alpha)?;
    io::write_pfm(&args.out.join("depth.pfm"), &out.depth)?;
    io::write_pfm_i32(
        &args.out.join("winner.pfm"),
        &out.winner,
        target_cam.width,
        target_cam.height,
    )?;

    if let Some(gt_dir) = &args.gt {
        let (gt_frame, _) = with_path(io::load_view(gt_dir), gt_dir)?;
        let report = MetricsReport::compute(
            &image,
            &gt_frame.rgb,
            None,
            Some(&out.alpha),
            gt_frame.fg_mask.as_ref(),
            0.0,
        )?;
        report.write(&args.out.join("metrics.json"))?;
        println!(
            "psnr {:.2} dB  ssim {:.4}  coverage {:.4}",
            report.psnr, report.ssim, report.coverage
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
