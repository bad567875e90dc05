//! `svs evaluate`: metrics between a prediction and ground truth.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use svs_core::io;
use svs_core::losses::consistency_loss;

use crate::common::{load_image, with_path, CliResult, MetricsReport};

#[derive(ClapArgs)]
pub struct Args {
    /// Predicted image (png or pfm).
    #[arg(long)]
    pred: PathBuf,

    /// Ground-truth image (png or pfm).
    #[arg(long)]
    gt: PathBuf,

    /// Restrict PSNR/L1 to this mask (png).
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Predicted alpha (pfm); enables coverage and mask_bce.
    #[arg(long)]
    pred_alpha: Option<PathBuf>,

    /// Ground-truth foreground mask (png); enables mask_bce.
    #[arg(long)]
    gt_mask: Option<PathBuf>,

    /// Right-eye prediction for the stereo consistency term.
    #[arg(long)]
    right_pred: Option<PathBuf>,

    /// Left-view depth (pfm) for the stereo consistency term.
    #[arg(long)]
    left_depth: Option<PathBuf>,

    /// Left camera JSON.
    #[arg(long)]
    left_camera: Option<PathBuf>,

    /// Right camera JSON.
    #[arg(long)]
    right_camera: Option<PathBuf>,

    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> CliResult {
    let pred = load_image(&args.pred)?;
    let gt = load_image(&args.gt)?;
    let mask = match &args.mask {
        Some(p) => Some(with_path(io::read_mask_png(p), p)?),
        None => None,
    };
    let pred_alpha = match &args.pred_alpha {
        Some(p) => Some(with_path(io::read_pfm(p), p)?),
        None => None,
    };
    let gt_mask = match &args.gt_mask {
        Some(p) => Some(with_path(io::read_mask_png(p), p)?),
        None => None,
    };

    let consistency = match (&args.right_pred, &args.left_depth, &args.left_camera, &args.right_camera)
    {
        (Some(rp), Some(ld), Some(lc), Some(rc)) => {
            let right = load_image(rp)?;
            let depth = with_path(io::read_pfm(ld), ld)?;
            let left_cam = with_path(io::load_camera_json(lc), lc)?;
            let right_cam = with_path(io::load_camera_json(rc), rc)?;
            consistency_loss(&pred, &right, &depth, &left_cam, &right_cam)?
        }
        _ => 0.0,
    };

    let report = MetricsReport::compute(
        &pred,
        &gt,
        mask.as_ref(),
        pred_alpha.as_ref(),
        gt_mask.as_ref(),
        consistency,
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, json + "\n")?;
    }
    Ok(())
}
