//! Shared CLI plumbing: errors with exit codes, size parsing, metric reports.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use svs_core::image_buf::{ImageBuf, Mask};
use svs_core::sphere_cloud::RgbdFrame;
use svs_core::SvsError;

/// Exit code 2 for usage/IO problems, 3 for numerical failures.
#[derive(Debug)]
pub struct CliError {
    message: String,
    numerical: bool,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            numerical: false,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.numerical {
            3
        } else {
            2
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SvsError> for CliError {
    fn from(err: SvsError) -> Self {
        let numerical = matches!(err, SvsError::NumericalDivergence { .. });
        Self {
            message: err.to_string(),
            numerical,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self {
            message: err.to_string(),
            numerical: false,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        Self {
            message: err.to_string(),
            numerical: false,
        }
    }
}

pub type CliResult = Result<(), CliError>;

/// Attaches a path to file errors so the message names the missing input.
pub fn with_path<T>(result: svs_core::Result<T>, path: &Path) -> Result<T, CliError> {
    result.map_err(|e| CliError {
        message: format!("{}: {e}", path.display()),
        numerical: matches!(e, SvsError::NumericalDivergence { .. }),
    })
}

/// Parses "WxH".
pub fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::usage(format!("bad size '{s}', expected WxH")))?;
    let w = w
        .parse()
        .map_err(|_| CliError::usage(format!("bad width in '{s}'")))?;
    let h = h
        .parse()
        .map_err(|_| CliError::usage(format!("bad height in '{s}'")))?;
    Ok((w, h))
}

/// Initial sphere radius: the requested value, or `footprints` pixel
/// footprints at the median scene depth.
pub fn auto_radius(
    frame: &RgbdFrame,
    fx: f64,
    requested: Option<f64>,
    footprints: f64,
) -> Result<f64, CliError> {
    if let Some(r) = requested {
        return Ok(r);
    }
    let z = frame
        .median_depth()
        .ok_or_else(|| CliError::usage("no valid depth pixels in input"))?;
    Ok(footprints * z / fx)
}

/// Background feature: mean color over invalid-depth pixels (falls back to
/// black when the frame is fully dense).
pub fn auto_background(frame: &RgbdFrame) -> Vec<f64> {
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if !frame.valid_mask.get(x, y) {
                let p = frame.rgb.pixel(x, y);
                for c in 0..3 {
                    sum[c] += p[c];
                }
                n += 1;
            }
        }
    }
    if n == 0 {
        vec![0.0; 3]
    } else {
        sum.iter().map(|v| v / n as f64).collect()
    }
}

/// Metric report written by `render`, `pipeline`, and `evaluate`.
#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub coverage: f64,
    pub l1: f64,
    pub mask_bce: f64,
    pub consistency: f64,
}

impl MetricsReport {
    pub fn compute(
        pred: &ImageBuf,
        gt: &ImageBuf,
        mask: Option<&Mask>,
        pred_alpha: Option<&ImageBuf>,
        gt_mask: Option<&Mask>,
        consistency: f64,
    ) -> Result<Self, CliError> {
        let psnr = svs_core::metrics::psnr(pred, gt, mask, 1.0)?;
        let ssim = svs_core::metrics::ssim(pred, gt)?;
        let coverage = match pred_alpha {
            Some(alpha) => svs_core::metrics::coverage_alpha(alpha),
            None => mask.map_or(1.0, svs_core::metrics::coverage_mask),
        };
        let l1 = svs_core::losses::l1_loss(pred, gt, mask)?;
        let mask_bce = match (pred_alpha, gt_mask) {
            (Some(alpha), Some(gm)) => svs_core::losses::mask_bce(alpha, gm)?,
            _ => 0.0,
        };
        Ok(Self {
            psnr,
            ssim,
            coverage,
            l1,
            mask_bce,
            consistency,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Loads an image by extension: PNG (8-bit RGB) or PFM.
pub fn load_image(path: &Path) -> Result<ImageBuf, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => with_path(svs_core::io::read_pfm(path), path),
        _ => with_path(svs_core::io::read_rgb8_png(path), path),
    }
}
