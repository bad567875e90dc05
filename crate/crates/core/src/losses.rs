//! Scalar photometric objectives and their gradients.

use crate::error::{Result, SvsError};
use crate::geometry::Camera;
use crate::image_buf::{ImageBuf, Mask};
use crate::warping::consistency_residual;

/// Clamp applied to predicted mask probabilities before the log.
pub const BCE_EPSILON: f64 = 1e-7;

/// Weights of the photometric terms: `total = image * l1 + mask * bce +
/// consistency * lc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub image: f64,
    pub mask: f64,
    pub consistency: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            image: 1.0,
            mask: 0.5,
            consistency: 0.5,
        }
    }
}

/// Individual loss terms plus their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub l1: f64,
    pub mask_bce: f64,
    pub consistency: f64,
    pub total: f64,
    pub term_weights: TermWeights,
}

impl LossReport {
    pub fn recompute_total(&self) -> f64 {
        self.term_weights.image * self.l1
            + self.term_weights.mask * self.mask_bce
            + self.term_weights.consistency * self.consistency
    }
}

fn masked_count(pred: &ImageBuf, mask: Option<&Mask>) -> Result<usize> {
    let count = match mask {
        Some(m) => {
            if m.width() != pred.width() || m.height() != pred.height() {
                return Err(SvsError::shape(
                    format!("{}x{} mask", pred.width(), pred.height()),
                    format!("{}x{}", m.width(), m.height()),
                ));
            }
            m.count()
        }
        None => pred.width() * pred.height(),
    };
    if count == 0 {
        return Err(SvsError::EmptyMask);
    }
    Ok(count)
}

/// Mean absolute difference over masked pixels and channels.
pub fn l1_loss(pred: &ImageBuf, gt: &ImageBuf, mask: Option<&Mask>) -> Result<f64> {
    pred.expect_shape(gt)?;
    let count = masked_count(pred, mask)? * pred.channels();
    let mut sum = 0.0;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let p = pred.pixel(x, y);
            let g = gt.pixel(x, y);
            for c in 0..pred.channels() {
                sum += (p[c] - g[c]).abs();
            }
        }
    }
    Ok(sum / count as f64)
}

/// [`l1_loss`] plus its gradient w.r.t. `pred`: `sign(pred - gt) / count`.
pub fn l1_loss_with_grad(
    pred: &ImageBuf,
    gt: &ImageBuf,
    mask: Option<&Mask>,
) -> Result<(f64, ImageBuf)> {
    pred.expect_shape(gt)?;
    let count = (masked_count(pred, mask)? * pred.channels()) as f64;
    let mut grad = ImageBuf::new(pred.width(), pred.height(), pred.channels());
    let mut sum = 0.0;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let p = pred.pixel(x, y);
            let g = gt.pixel(x, y);
            let out = grad.pixel_mut(x, y);
            for c in 0..pred.channels() {
                let diff = p[c] - g[c];
                sum += diff.abs();
                out[c] = diff.signum() * (diff != 0.0) as u8 as f64 / count;
            }
        }
    }
    Ok((sum / count, grad))
}

/// Mean binary cross-entropy between a soft prediction and a binary mask.
/// Predictions are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]`.
pub fn mask_bce(pred: &ImageBuf, gt: &Mask) -> Result<f64> {
    Ok(mask_bce_with_grad(pred, gt)?.0)
}

/// [`mask_bce`] plus its gradient w.r.t. `pred` (zero where the clamp is
/// active).
pub fn mask_bce_with_grad(pred: &ImageBuf, gt: &Mask) -> Result<(f64, ImageBuf)> {
    if pred.width() != gt.width() || pred.height() != gt.height() || pred.channels() != 1 {
        return Err(SvsError::shape(
            format!("{}x{}x1 prediction", gt.width(), gt.height()),
            pred.shape_string(),
        ));
    }
    let n = (pred.width() * pred.height()) as f64;
    let mut grad = ImageBuf::new(pred.width(), pred.height(), 1);
    let mut sum = 0.0;
    for i in 0..pred.data().len() {
        let raw = pred.data()[i];
        let p = raw.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let y = gt.data()[i] as u8 as f64;
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        if raw > BCE_EPSILON && raw < 1.0 - BCE_EPSILON {
            grad.data_mut()[i] = (p - y) / (p * (1.0 - p)) / n;
        }
    }
    Ok((sum / n, grad))
}

/// Mean stereo consistency residual (thin wrapper over
/// [`consistency_residual`]).
pub fn consistency_loss(
    left: &ImageBuf,
    right: &ImageBuf,
    left_depth: &ImageBuf,
    left_cam: &Camera,
    right_cam: &Camera,
) -> Result<f64> {
    Ok(consistency_residual(left, right, left_depth, left_cam, right_cam)?.mean)
}

/// Stereo inputs for the consistency term of [`photometric_total`].
pub struct StereoViews<'a> {
    pub left: &'a ImageBuf,
    pub right: &'a ImageBuf,
    pub left_depth: &'a ImageBuf,
    pub left_camera: &'a Camera,
    pub right_camera: &'a Camera,
}

/// Aggregate photometric loss with weights (1, 0.5, 0.5); the mask and
/// consistency terms vanish when their inputs are absent.
pub fn photometric_total(
    pred: &ImageBuf,
    gt: &ImageBuf,
    pred_mask: Option<&ImageBuf>,
    gt_mask: Option<&Mask>,
    stereo: Option<&StereoViews>,
) -> Result<LossReport> {
    let l1 = l1_loss(pred, gt, None)?;
    let bce = match (pred_mask, gt_mask) {
        (Some(pm), Some(gm)) => mask_bce(pm, gm)?,
        _ => 0.0,
    };
    let consistency = match stereo {
        Some(s) => consistency_loss(s.left, s.right, s.left_depth, s.left_camera, s.right_camera)?,
        None => 0.0,
    };
    let term_weights = TermWeights::default();
    let mut report = LossReport {
        l1,
        mask_bce: bce,
        consistency,
        total: 0.0,
        term_weights,
    };
    report.total = report.recompute_total();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: f64) -> ImageBuf {
        ImageBuf::filled(w, h, &[v, v, v])
    }

    #[test]
    fn l1_zero_for_equal_images() {
        let a = img(6, 4, 0.4);
        assert_eq!(l1_loss(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn l1_constant_offset() {
        let a = img(6, 4, 0.5);
        let b = img(6, 4, 0.4);
        assert!((l1_loss(&a, &b, None).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn l1_respects_mask_and_rejects_empty() {
        let mut a = img(4, 4, 0.0);
        let b = img(4, 4, 0.0);
        a.set(0, 0, 0, 0.9);
        let mut m = Mask::new(4, 4, false);
        m.set(1, 1, true);
        assert_eq!(l1_loss(&a, &b, Some(&m)).unwrap(), 0.0);
        let empty = Mask::new(4, 4, false);
        assert!(matches!(
            l1_loss(&a, &b, Some(&empty)),
            Err(SvsError::EmptyMask)
        ));
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let mut pred = ImageBuf::new(5, 3, 3);
        let mut gt = ImageBuf::new(5, 3, 3);
        for (i, v) in pred.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin().abs();
        }
        for (i, v) in gt.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.53).cos().abs();
        }
        let (_, grad) = l1_loss_with_grad(&pred, &gt, None).unwrap();
        let h = 1e-6;
        for i in [0usize, 7, 22, 44] {
            let mut plus = pred.clone();
            plus.data_mut()[i] += h;
            let mut minus = pred.clone();
            minus.data_mut()[i] -= h;
            let fd = (l1_loss(&plus, &gt, None).unwrap() - l1_loss(&minus, &gt, None).unwrap())
                / (2.0 * h);
            assert!(
                (fd - grad.data()[i]).abs() < 1e-6,
                "i={i}: fd {fd} vs {}",
                grad.data()[i]
            );
        }
    }

    #[test]
    fn bce_reference_values() {
        let gt_on = Mask::new(4, 4, true);
        let ones = ImageBuf::filled(4, 4, &[1.0]);
        let match_loss = mask_bce(&ones, &gt_on).unwrap();
        assert!(match_loss <= -(1.0f64 - BCE_EPSILON).ln() + 1e-12);

        let half = ImageBuf::filled(4, 4, &[0.5]);
        assert!((mask_bce(&half, &gt_on).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let zeros = ImageBuf::filled(4, 4, &[0.0]);
        let inverted = mask_bce(&zeros, &gt_on).unwrap();
        assert!((inverted - (-(BCE_EPSILON).ln())).abs() < 1e-6, "{inverted}");
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut pred = ImageBuf::new(4, 2, 1);
        for (i, v) in pred.data_mut().iter_mut().enumerate() {
            *v = 0.1 + 0.1 * i as f64;
        }
        let mut gt = Mask::new(4, 2, false);
        gt.set(1, 0, true);
        gt.set(3, 1, true);
        let (_, grad) = mask_bce_with_grad(&pred, &gt).unwrap();
        let h = 1e-7;
        for i in 0..8 {
            let mut plus = pred.clone();
            plus.data_mut()[i] += h;
            let mut minus = pred.clone();
            minus.data_mut()[i] -= h;
            let fd =
                (mask_bce(&plus, &gt).unwrap() - mask_bce(&minus, &gt).unwrap()) / (2.0 * h);
            let rel = (fd - grad.data()[i]).abs() / grad.data()[i].abs().max(1e-9);
            assert!(rel < 1e-6, "i={i}: fd {fd} vs {}", grad.data()[i]);
        }
    }

    #[test]
    fn photometric_total_combines_terms() {
        let pred = img(4, 4, 0.5);
        let gt = img(4, 4, 0.4);
        let pm = ImageBuf::filled(4, 4, &[0.5]);
        let gm = Mask::new(4, 4, true);
        let report = photometric_total(&pred, &gt, Some(&pm), Some(&gm), None).unwrap();
        assert!((report.l1 - 0.1).abs() < 1e-12);
        assert!((report.mask_bce - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(report.consistency, 0.0);
        assert!((report.total - report.recompute_total()).abs() < 1e-12);
        assert!((report.total - (0.1 + 0.5 * std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_total_is_tiny() {
        let pred = img(4, 4, 0.3);
        let report = photometric_total(&pred, &pred, None, None, None).unwrap();
        assert!(report.total.abs() < 1e-12);
    }
}
