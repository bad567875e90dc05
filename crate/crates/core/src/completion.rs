//! Pull-push pyramid hole filling.

use crate::error::{Result, SvsError};
use crate::image_buf::{ImageBuf, Mask};
use crate::parallel::map_indexed;

/// One pyramid level: per-pixel value and confidence weight in [0, 1].
struct Level {
    size: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
}

/// Fills unconfident pixels of `image` from coarser pyramid levels.
///
/// `weights` holds one confidence per pixel in [0, 1]; pixels at weight 1 are
/// preserved bit-exactly, pixels at weight 0 are replaced by the pyramid
/// estimate, and fractional weights blend linearly between the two. The image
/// is padded internally to a power-of-two square (pad weight 0) and cropped
/// back. Fill values are convex combinations of the confident input pixels.
pub fn pull_push(image: &ImageBuf, weights: &ImageBuf) -> Result<ImageBuf> {
    if weights.width() != image.width()
        || weights.height() != image.height()
        || weights.channels() != 1
    {
        return Err(SvsError::shape(
            format!("{}x{}x1 weights", image.width(), image.height()),
            weights.shape_string(),
        ));
    }
    if weights.data().iter().all(|&w| w <= 0.0) {
        return Err(SvsError::AllInvalid);
    }
    let (w, h, c) = (image.width(), image.height(), image.channels());
    if weights.data().iter().all(|&v| v >= 1.0) {
        return Ok(image.clone());
    }

    let size = w.max(h).next_power_of_two();
    let mut base = Level {
        size,
        values: vec![0.0; size * size * c],
        weights: vec![0.0; size * size],
    };
    for y in 0..h {
        for x in 0..w {
            let wgt = weights.get(x, y, 0).clamp(0.0, 1.0);
            base.weights[y * size + x] = wgt;
            base.values[(y * size + x) * c..(y * size + x + 1) * c]
                .copy_from_slice(image.pixel(x, y));
        }
    }

    // Pull: weighted 2x2 box averages down to 1x1, weights capped at 1.
    let mut pyramid = vec![base];
    while pyramid.last().unwrap().size > 1 {
        let fine = pyramid.last().unwrap();
        let half = fine.size / 2;
        let rows = map_indexed(half, |y| {
            let mut values = vec![0.0; half * c];
            let mut wts = vec![0.0; half];
            for x in 0..half {
                let mut wsum = 0.0;
                let mut vsum = vec![0.0; c];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let fi = (2 * y + dy) * fine.size + 2 * x + dx;
                        let fw = fine.weights[fi];
                        if fw > 0.0 {
                            wsum += fw;
                            for ch in 0..c {
                                vsum[ch] += fw * fine.values[fi * c + ch];
                            }
                        }
                    }
                }
                if wsum > 0.0 {
                    for ch in 0..c {
                        values[x * c + ch] = vsum[ch] / wsum;
                    }
                    wts[x] = wsum.min(1.0);
                }
            }
            (values, wts)
        });
        let mut values = Vec::with_capacity(half * half * c);
        let mut wts = Vec::with_capacity(half * half);
        for (v, wt) in rows {
            values.extend_from_slice(&v);
            wts.extend_from_slice(&wt);
        }
        pyramid.push(Level {
            size: half,
            values,
            weights: wts,
        });
    }

    // Push: walk back down, blending pyramid estimates into unconfident
    // pixels. After processing, every level is dense.
    let top = pyramid.len() - 1;
    for i in 0..pyramid[top].weights.len() {
        pyramid[top].weights[i] = 1.0;
    }
    for lvl in (0..top).rev() {
        let (fine_levels, coarse_levels) = pyramid.split_at_mut(lvl + 1);
        let fine = &mut fine_levels[lvl];
        let coarse = &coarse_levels[0];
        let size = fine.size;
        let rows = map_indexed(size, |y| {
            let mut row = vec![0.0; size * c];
            for x in 0..size {
                let fi = y * size + x;
                let fw = fine.weights[fi];
                if fw >= 1.0 {
                    row[x * c..(x + 1) * c]
                        .copy_from_slice(&fine.values[fi * c..(fi + 1) * c]);
                    continue;
                }
                let mut up = vec![0.0; c];
                sample_level_bilinear(coarse, c, (x as f64 + 0.5) / 2.0, (y as f64 + 0.5) / 2.0, &mut up);
                for ch in 0..c {
                    row[x * c + ch] = fw * fine.values[fi * c + ch] + (1.0 - fw) * up[ch];
                }
            }
            row
        });
        for (y, row) in rows.into_iter().enumerate() {
            fine.values[y * size * c..(y + 1) * size * c].copy_from_slice(&row);
        }
        for wv in fine.weights.iter_mut() {
            *wv = 1.0;
        }
    }

    let filled = &pyramid[0];
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if weights.get(x, y, 0) >= 1.0 {
                continue; // bit-exact preservation
            }
            let fi = y * size + x;
            out.pixel_mut(x, y)
                .copy_from_slice(&filled.values[fi * c..(fi + 1) * c]);
        }
    }
    Ok(out)
}

/// Dense completion restricted to a region: pull-push fills unconfident
/// pixels inside `region` from the confident ones, and everything outside
/// takes the `fill` color. Used to complete a subject silhouette without
/// smearing it across the (known) background.
pub fn complete_within(
    image: &ImageBuf,
    weights: &ImageBuf,
    region: &Mask,
    fill: &[f64],
) -> Result<ImageBuf> {
    if region.width() != image.width() || region.height() != image.height() {
        return Err(SvsError::shape(
            format!("{}x{} region", image.width(), image.height()),
            format!("{}x{}", region.width(), region.height()),
        ));
    }
    if fill.len() != image.channels() {
        return Err(SvsError::shape(
            format!("fill of dim {}", image.channels()),
            format!("dim {}", fill.len()),
        ));
    }
    let mut masked = weights.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if !region.get(x, y) {
                masked.set(x, y, 0, 0.0);
            }
        }
    }
    let mut out = match pull_push(image, &masked) {
        Ok(out) => out,
        // nothing confident inside the region: fill everything
        Err(SvsError::AllInvalid) => ImageBuf::filled(image.width(), image.height(), fill),
        Err(e) => return Err(e),
    };
    for y in 0..image.height() {
        for x in 0..image.width() {
            if !region.get(x, y) {
                out.pixel_mut(x, y).copy_from_slice(fill);
            }
        }
    }
    Ok(out)
}

/// Pull-push with a binary validity mask.
pub fn pull_push_masked(image: &ImageBuf, valid: &Mask) -> Result<ImageBuf> {
    let weights = ImageBuf::from_vec(
        valid.width(),
        valid.height(),
        1,
        valid.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    );
    pull_push(image, &weights)
}

/// Bilinear sample with clamped taps (levels are square, pixel centers at +0.5).
fn sample_level_bilinear(level: &Level, c: usize, u: f64, v: f64, out: &mut [f64]) {
    let n = level.size as i64;
    let xf = u - 0.5;
    let yf = v - 0.5;
    let x0 = xf.floor();
    let y0 = yf.floor();
    let ax = xf - x0;
    let ay = yf - y0;
    out.fill(0.0);
    for (dy, wy) in [(0i64, 1.0 - ay), (1, ay)] {
        for (dx, wx) in [(0i64, 1.0 - ax), (1, ax)] {
            let x = (x0 as i64 + dx).clamp(0, n - 1) as usize;
            let y = (y0 as i64 + dy).clamp(0, n - 1) as usize;
            let idx = (y * level.size + x) * c;
            for ch in 0..c {
                out[ch] += wx * wy * level.values[idx + ch];
            }
        }
    }
}
