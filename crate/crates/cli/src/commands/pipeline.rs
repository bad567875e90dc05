//! `svs pipeline`: render -> IUV texture transfer -> fuse -> complete.
//!
//! The sphere render is premultiplied (black background, alpha as the
//! confidence map). When target IUV correspondences are available the
//! occlusion-free view is warped in and fused, the subject silhouette
//! (IUV part > 0) bounds the pull-push completion, and the estimated
//! background color fills the rest. Without IUV maps only the raw render is
//! produced.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use svs_core::completion::complete_within;
use svs_core::image_buf::Mask;
use svs_core::io;
use svs_core::rasterizer::{render, RenderSettings};
use svs_core::sphere_cloud::{cloud_from_rgbd, sparse_sample, FeatureSource, RadiusBounds};
use svs_core::warping::{fuse, iuv_warp};

use crate::common::{auto_background, auto_radius, with_path, CliResult, MetricsReport};

#[derive(ClapArgs)]
pub struct Args {
    /// Input view directory (rgb.png, depth.png, camera.json).
    #[arg(long)]
    input: PathBuf,

    /// Occlusion-free view directory (rgb.png + iuv.png).
    #[arg(long)]
    occlusion_free: PathBuf,

    /// Target camera JSON; a sibling iuv.png in the same directory provides
    /// the target correspondences, rgb.png the optional ground truth.
    #[arg(long)]
    camera: PathBuf,

    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,

    #[arg(long, default_value_t = 8.0)]
    sharpness: f64,

    #[arg(long)]
    init_radius: Option<f64>,

    /// Skip the final pull-push completion.
    #[arg(long, default_value_t = false)]
    no_complete: bool,
}

pub fn run(args: Args) -> CliResult {
    let (frame, src_cam) = with_path(io::load_view(&args.input), &args.input)?;
    let target_cam = with_path(io::load_camera_json(&args.camera), &args.camera)?;
    let target_dir = args.camera.parent().map(PathBuf::from).unwrap_or_default();

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
    let background = auto_background(&frame);
    // premultiplied render: subject over black, alpha doubles as confidence
    let settings = RenderSettings {
        gamma: args.gamma,
        sharpness: args.sharpness,
        background_feature: vec![0.0; 3],
        ..RenderSettings::default()
    };
    let rendered = render(&cloud, &target_cam, &settings)?;

    std::fs::create_dir_all(&args.out)?;
    io::write_rgb8_png(&args.out.join("render_raw.png"), &rendered.features)?;
    io::write_pfm(&args.out.join("alpha.pfm"), &rendered.alpha)?;
    io::write_pfm(&args.out.join("depth.pfm"), &rendered.depth)?;

    // Texture transfer needs source and target IUV correspondences.
    let of_rgb_path = args.occlusion_free.join("rgb.png");
    let of_iuv_path = args.occlusion_free.join("iuv.png");
    let dst_iuv_path = target_dir.join("iuv.png");

    let final_image = if of_iuv_path.exists() && dst_iuv_path.exists() {
        let of_rgb = with_path(io::read_rgb8_png(&of_rgb_path), &of_rgb_path)?;
        let of_iuv = with_path(io::read_iuv_png(&of_iuv_path), &of_iuv_path)?;
        let dst_iuv = with_path(io::read_iuv_png(&dst_iuv_path), &dst_iuv_path)?;
        let warped = iuv_warp(&of_rgb, &of_iuv, &dst_iuv)?;
        io::write_rgb8_png(&args.out.join("warped.png"), &warped.image)?;
        let fused = fuse(&rendered.features, &rendered.alpha, &warped)?;
        io::write_rgb8_png(&args.out.join("fused.png"), &fused)?;

        if args.no_complete {
            fused
        } else {
            // subject silhouette from the target correspondences
            let mut region = Mask::new(dst_iuv.width(), dst_iuv.height(), false);
            let mut weights = rendered.alpha.clone();
            for y in 0..region.height() {
                for x in 0..region.width() {
                    region.set(x, y, dst_iuv.get(x, y, 0) > 0.0);
                    if warped.validity.get(x, y) {
                        weights.set(x, y, 0, 1.0);
                    }
                }
            }
            complete_within(&fused, &weights, &region, &background)?
        }
    } else {
        eprintln!(
            "warning: IUV maps not found ({} / {}), running render-only path",
            of_iuv_path.display(),
            dst_iuv_path.display()
        );
        rendered.features.clone()
    };
    io::write_rgb8_png(&args.out.join("novel_view.png"), &final_image)?;

    let gt_path = target_dir.join("rgb.png");
    if gt_path.exists() {
        let gt = with_path(io::read_rgb8_png(&gt_path), &gt_path)?;
        let gt_mask_path = target_dir.join("mask.png");
        let gt_mask = if gt_mask_path.exists() {
            Some(io::read_mask_png(&gt_mask_path)?)
        } else {
            None
        };
        let report = MetricsReport::compute(
            &final_image,
            &gt,
            None,
            Some(&rendered.alpha),
            gt_mask.as_ref(),
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
