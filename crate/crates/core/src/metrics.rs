//! Image quality metrics: PSNR, SSIM, coverage.

use crate::error::{Result, SvsError};
use crate::image_buf::{ImageBuf, Mask};

/// PSNR values are capped here; identical images report the cap.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean squared error over masked pixels and channels.
pub fn mse(pred: &ImageBuf, gt: &ImageBuf, mask: Option<&Mask>) -> Result<f64> {
    pred.expect_shape(gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let p = pred.pixel(x, y);
            let g = gt.pixel(x, y);
            for c in 0..pred.channels() {
                let d = p[c] - g[c];
                sum += d * d;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(SvsError::EmptyMask);
    }
    Ok(sum / (count * pred.channels()) as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &ImageBuf, gt: &ImageBuf, mask: Option<&Mask>, peak: f64) -> Result<f64> {
    let err = mse(pred, gt, mask)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filtering of one channel; the output is only evaluated
/// on the interior where the full window fits.
fn filter_channel(img: &ImageBuf, channel: usize, kernel: &[f64]) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let r = kernel.len() / 2;
    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        for x in r..w - r {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * img.get(x + k - r, y, channel);
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h - r {
        for x in r..w - r {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(y + k - r) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over the interior window positions, averaged across channels.
/// Uses an 11x11 Gaussian window with sigma 1.5 and K1 = 0.01, K2 = 0.03 on a
/// unit dynamic range.
pub fn ssim(pred: &ImageBuf, gt: &ImageBuf) -> Result<f64> {
    pred.expect_shape(gt)?;
    let (w, h) = (pred.width(), pred.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(SvsError::shape(
            format!("at least {SSIM_WINDOW}x{SSIM_WINDOW} image"),
            pred.shape_string(),
        ));
    }
    let r = SSIM_WINDOW / 2;
    let kernel = gaussian_kernel(r, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mut total = 0.0;
    for c in 0..pred.channels() {
        let sq = |img: &ImageBuf| {
            let mut out = ImageBuf::new(w, h, 1);
            for y in 0..h {
                for x in 0..w {
                    out.set(x, y, 0, img.get(x, y, c) * img.get(x, y, c));
                }
            }
            out
        };
        let prod = {
            let mut out = ImageBuf::new(w, h, 1);
            for y in 0..h {
                for x in 0..w {
                    out.set(x, y, 0, pred.get(x, y, c) * gt.get(x, y, c));
                }
            }
            out
        };
        let mu_x = filter_channel(pred, c, &kernel);
        let mu_y = filter_channel(gt, c, &kernel);
        let xx = filter_channel(&sq(pred), 0, &kernel);
        let yy = filter_channel(&sq(gt), 0, &kernel);
        let xy = filter_channel(&prod, 0, &kernel);

        let mut acc = 0.0;
        let mut count = 0usize;
        for y in r..h - r {
            for x in r..w - r {
                let i = y * w + x;
                let (mx, my) = (mu_x[i], mu_y[i]);
                let var_x = xx[i] - mx * mx;
                let var_y = yy[i] - my * my;
                let cov = xy[i] - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / pred.channels() as f64)
}

/// Mean of an alpha / weight image.
pub fn coverage_alpha(alpha: &ImageBuf) -> f64 {
    if alpha.data().is_empty() {
        return 0.0;
    }
    alpha.data().iter().sum::<f64>() / alpha.data().len() as f64
}

/// Fraction of set pixels.
pub fn coverage_mask(mask: &Mask) -> f64 {
    mask.fraction()
}

/// Mean alpha restricted to a region.
pub fn coverage_alpha_in(alpha: &ImageBuf, region: &Mask) -> Result<f64> {
    if alpha.width() != region.width() || alpha.height() != region.height() {
        return Err(SvsError::shape(
            format!("{}x{} region", alpha.width(), alpha.height()),
            format!("{}x{}", region.width(), region.height()),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..alpha.height() {
        for x in 0..alpha.width() {
            if region.get(x, y) {
                sum += alpha.get(x, y, 0);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(SvsError::EmptyMask);
    }
    Ok(sum / n as f64)
}
