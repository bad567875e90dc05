//! `svs sparsity-sweep`: run the {5, 10, 25, 100}% depth sparsity protocol.

use std::io::Write;
use std::path::PathBuf;

use clap::Args as ClapArgs;
use svs_core::completion::complete_within;
use svs_core::image_buf::Mask;
use svs_core::io;
use svs_core::losses::l1_loss;
use svs_core::metrics::{coverage_alpha, psnr, ssim};
use svs_core::optim::{fit, FitConfig, FitTarget};
use svs_core::rasterizer::{render, RenderSettings};
use svs_core::sphere_cloud::{cloud_from_rgbd, sparse_sample, FeatureSource, RadiusBounds};

use crate::common::{auto_background, auto_radius, with_path, CliError, CliResult};

pub const SWEEP_FRACTIONS: [f64; 4] = [0.05, 0.10, 0.25, 1.0];

#[derive(ClapArgs)]
pub struct Args {
    /// Fixture directory (input/, target_00/, target_01/, ...).
    #[arg(long)]
    fixture: PathBuf,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// Fitting steps per sparsity level.
    #[arg(long, default_value_t = 250)]
    steps: usize,

    #[arg(long, default_value_t = 0.08)]
    lr: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long)]
    init_radius: Option<f64>,

    /// Weight of the mask (BCE) term during fitting.
    #[arg(long, default_value_t = 0.1)]
    mask_weight: f64,

    /// Blending temperature of the final evaluation render.
    #[arg(long, default_value_t = 0.002)]
    eval_gamma: f64,
}

pub fn run(args: Args) -> CliResult {
    let input_dir = args.fixture.join("input");
    let fit_dir = args.fixture.join("target_00");
    let eval_dir = args.fixture.join("target_01");
    let (frame, src_cam) = with_path(io::load_view(&input_dir), &input_dir)?;
    let (fit_frame, fit_cam) = with_path(io::load_view(&fit_dir), &fit_dir)?;
    let (eval_frame, eval_cam) = with_path(io::load_view(&eval_dir), &eval_dir)?;

    let background = auto_background(&frame);
    let eval_mask: &Mask = eval_frame
        .fg_mask
        .as_ref()
        .ok_or_else(|| CliError::usage("eval view needs mask.png for masked completion"))?;
    let fit_settings = RenderSettings {
        gamma: 0.3,
        sharpness: 2.0,
        background_feature: background.clone(),
        ..RenderSettings::default()
    };
    // crisp re-render of the fitted cloud, premultiplied for completion
    let eval_settings = RenderSettings {
        gamma: args.eval_gamma,
        sharpness: 1.5,
        background_feature: vec![0.0; 3],
        ..RenderSettings::default()
    };

    let mut rows = Vec::new();
    for (level, &fraction) in SWEEP_FRACTIONS.iter().enumerate() {
        let sub = if fraction < 1.0 {
            let keep = sparse_sample(&frame.depth, fraction, args.seed + level as u64)?;
            frame.with_depth_subset(&keep)?
        } else {
            frame.clone()
        };
        // one full pixel footprint at the median depth fits sparse levels best
        let radius = auto_radius(&sub, src_cam.fx, args.init_radius, 1.0)?;
        let cloud = cloud_from_rgbd(
            &sub,
            &src_cam,
            radius,
            RadiusBounds::default(),
            FeatureSource::Rgb,
        )?;

        let mut config = FitConfig::new(
            vec![FitTarget {
                camera: fit_cam.clone(),
                image: fit_frame.rgb.clone(),
                fg_mask: fit_frame.fg_mask.clone(),
            }],
            fit_settings.clone(),
        );
        config.steps = args.steps;
        config.learning_rate = args.lr;
        config.weights.mask = args.mask_weight;
        let (fitted, _) = fit(&cloud, &config)?;

        let out = render(&fitted, &eval_cam, &eval_settings)?;
        let completed = complete_within(&out.features, &out.alpha, eval_mask, &background)?;
        let row = (
            fraction,
            psnr(&completed, &eval_frame.rgb, None, 1.0)?,
            ssim(&completed, &eval_frame.rgb)?,
            coverage_alpha(&out.alpha),
            l1_loss(&completed, &eval_frame.rgb, None)?,
        );
        println!(
            "sparsity {:>4.0}%  psnr {:6.2} dB  ssim {:.4}  coverage {:.4}",
            row.0 * 100.0,
            row.1,
            row.2,
            row.3
        );
        rows.push(row);
    }

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(&args.out)?;
    writeln!(f, "sparsity,psnr,ssim,coverage,l1")?;
    for (fr, p, s, c, l) in &rows {
        writeln!(f, "{fr},{p},{s},{c},{l}")?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
