//! Warping operators: forward depth-based point warping, inverse bilinear
//! warping, IUV-based texture transfer, and confidence compositing/fusion.

use crate::completion::pull_push;
use crate::error::{Result, SvsError};
use crate::geometry::Camera;
use crate::image_buf::{ImageBuf, Mask};
use crate::parallel::map_indexed;
use crate::sphere_cloud::RgbdFrame;

/// Number of IUV body parts; part index 0 is background.
pub const IUV_PARTS: usize = 24;

/// Default per-part texture atlas resolution.
pub const ATLAS_RESOLUTION: usize = 256;

/// A warped image together with the pixels that actually received data.
#[derive(Debug, Clone)]
pub struct WarpedImage {
    pub image: ImageBuf,
    pub validity: Mask,
}

impl WarpedImage {
    fn empty(width: usize, height: usize, channels: usize) -> Self {
        Self {
            image: ImageBuf::new(width, height, channels),
            validity: Mask::new(width, height, false),
        }
    }
}

/// Scatters every valid source pixel into the destination view as a
/// pixel-sized point, z-buffered on collisions (ties below 1e-9 m keep the
/// lower source index).
pub fn forward_depth_warp(frame: &RgbdFrame, src: &Camera, dst: &Camera) -> Result<WarpedImage> {
    if frame.width() != src.width || frame.height() != src.height {
        return Err(SvsError::shape(
            format!("{}x{} source camera", src.width, src.height),
            format!("{}x{} frame", frame.width(), frame.height()),
        ));
    }
    let c = frame.rgb.channels();
    let mut out = WarpedImage::empty(dst.width, dst.height, c);
    let mut zbuf = vec![f64::INFINITY; dst.width * dst.height];
    let src_to_world = src.pose.inverse();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let z = frame.depth.get(x, y, 0);
            if z <= 0.0 {
                continue;
            }
            let p_world =
                src_to_world.apply(&src.unproject_pixel(x as f64 + 0.5, y as f64 + 0.5, z)?);
            let p_dst = dst.world_to_camera(&p_world);
            if p_dst.z <= 0.0 {
                continue;
            }
            let (u, v, zd) = dst.project(&p_dst)?;
            let ix = (u - 0.5).round();
            let iy = (v - 0.5).round();
            if ix < 0.0 || iy < 0.0 || ix >= dst.width as f64 || iy >= dst.height as f64 {
                continue;
            }
            let (ix, iy) = (ix as usize, iy as usize);
            let slot = iy * dst.width + ix;
            // strictly nearer wins; near-ties keep the earlier source pixel
            if zd < zbuf[slot] - 1e-9 {
                zbuf[slot] = zd;
                out.image.pixel_mut(ix, iy).copy_from_slice(frame.rgb.pixel(x, y));
                out.validity.set(ix, iy, true);
            }
        }
    }
    Ok(out)
}

/// Gathers source colors for every destination pixel with known depth:
/// unproject in `dst`, reproject into `src`, sample bilinearly. Pixels whose
/// sample footprint leaves the source image (or lands behind it) are invalid.
pub fn inverse_warp(
    src_image: &ImageBuf,
    dst_depth: &ImageBuf,
    dst: &Camera,
    src: &Camera,
) -> Result<WarpedImage> {
    if src_image.width() != src.width || src_image.height() != src.height {
        return Err(SvsError::shape(
            format!("{}x{} source camera", src.width, src.height),
            src_image.shape_string(),
        ));
    }
    if dst_depth.width() != dst.width || dst_depth.height() != dst.height || dst_depth.channels() != 1
    {
        return Err(SvsError::shape(
            format!("{}x{}x1 destination depth", dst.width, dst.height),
            dst_depth.shape_string(),
        ));
    }
    let c = src_image.channels();
    let dst_to_world = dst.pose.inverse();
    // identical cameras resample at exact pixel centers, bypassing round-trip
    // rounding noise so the identity is exact
    let identity = dst == src;
    let rows = map_indexed(dst.height, |y| {
        let mut row = vec![0.0; dst.width * c];
        let mut valid = vec![false; dst.width];
        let mut sample = vec![0.0; c];
        for x in 0..dst.width {
            let z = dst_depth.get(x, y, 0);
            if z <= 0.0 {
                continue;
            }
            let (u, v) = if identity {
                (x as f64 + 0.5, y as f64 + 0.5)
            } else {
                let p_world = dst_to_world.apply(
                    &dst.unproject_pixel(x as f64 + 0.5, y as f64 + 0.5, z)
                        .expect("z > 0"),
                );
                let p_src = src.world_to_camera(&p_world);
                if p_src.z <= 0.0 {
                    continue;
                }
                let (u, v, _) = src.project(&p_src).expect("z > 0");
                (u, v)
            };
            if src_image.sample_bilinear(u, v, &mut sample) {
                row[x * c..(x + 1) * c].copy_from_slice(&sample);
                valid[x] = true;
            }
        }
        (row, valid)
    });
    let mut out = WarpedImage::empty(dst.width, dst.height, c);
    for (y, (row, valid)) in rows.into_iter().enumerate() {
        out.image.data_mut()[y * dst.width * c..(y + 1) * dst.width * c].copy_from_slice(&row);
        for (x, v) in valid.into_iter().enumerate() {
            out.validity.set(x, y, v);
        }
    }
    Ok(out)
}

/// Transpose of the bilinear gather in [`inverse_warp`]: scatters an upstream
/// gradient on the warped image back onto the source image.
pub fn inverse_warp_transpose(
    upstream: &ImageBuf,
    dst_depth: &ImageBuf,
    dst: &Camera,
    src: &Camera,
) -> Result<ImageBuf> {
    if upstream.width() != dst.width || upstream.height() != dst.height {
        return Err(SvsError::shape(
            format!("{}x{} destination camera", dst.width, dst.height),
            upstream.shape_string(),
        ));
    }
    let c = upstream.channels();
    let mut grad = ImageBuf::new(src.width, src.height, c);
    let dst_to_world = dst.pose.inverse();
    for y in 0..dst.height {
        for x in 0..dst.width {
            let z = dst_depth.get(x, y, 0);
            if z <= 0.0 {
                continue;
            }
            let p_world = dst_to_world
                .apply(&dst.unproject_pixel(x as f64 + 0.5, y as f64 + 0.5, z)?);
            let p_src = src.world_to_camera(&p_world);
            if p_src.z <= 0.0 {
                continue;
            }
            let (u, v, _) = src.project(&p_src)?;
            let xf = u - 0.5;
            let yf = v - 0.5;
            let x0 = xf.floor();
            let y0 = yf.floor();
            let ax = xf - x0;
            let ay = yf - y0;
            let mut inside = true;
            let mut taps = [(0usize, 0usize, 0.0f64); 4];
            let mut k = 0;
            for (dy, wy) in [(0i64, 1.0 - ay), (1, ay)] {
                for (dx, wx) in [(0i64, 1.0 - ax), (1, ax)] {
                    let tx = x0 as i64 + dx;
                    let ty = y0 as i64 + dy;
                    if tx < 0 || ty < 0 || tx >= src.width as i64 || ty >= src.height as i64 {
                        inside = false;
                        continue;
                    }
                    taps[k] = (tx as usize, ty as usize, wx * wy);
                    k += 1;
                }
            }
            if !inside {
                continue; // the forward gather marked this pixel invalid
            }
            let up = upstream.pixel(x, y);
            for &(tx, ty, w) in &taps[..k] {
                let g = grad.pixel_mut(tx, ty);
                for ch in 0..c {
                    g[ch] += w * up[ch];
                }
            }
        }
    }
    Ok(grad)
}

/// Result of [`consistency_residual`].
#[derive(Debug, Clone)]
pub struct ConsistencyResidual {
    /// |left - warped right| at valid pixels, 0 elsewhere.
    pub residual: ImageBuf,
    pub validity: Mask,
    /// Mean absolute residual over valid pixels and channels.
    pub mean: f64,
}

/// Photometric residual between a left view and the right view warped into it
/// through the left depth.
pub fn consistency_residual(
    left: &ImageBuf,
    right: &ImageBuf,
    left_depth: &ImageBuf,
    left_cam: &Camera,
    right_cam: &Camera,
) -> Result<ConsistencyResidual> {
    if left.width() != left_cam.width || left.height() != left_cam.height {
        return Err(SvsError::shape(
            format!("{}x{} left camera", left_cam.width, left_cam.height),
            left.shape_string(),
        ));
    }
    let warped = inverse_warp(right, left_depth, left_cam, right_cam)?;
    let c = left.channels();
    let mut residual = ImageBuf::new(left.width(), left.height(), c);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..left.height() {
        for x in 0..left.width() {
            if !warped.validity.get(x, y) {
                continue;
            }
            let l = left.pixel(x, y);
            let w = warped.image.pixel(x, y);
            let r = residual.pixel_mut(x, y);
            for ch in 0..c {
                r[ch] = (l[ch] - w[ch]).abs();
                sum += r[ch];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(SvsError::EmptyOverlap);
    }
    Ok(ConsistencyResidual {
        residual,
        validity: warped.validity,
        mean: sum / (count * c) as f64,
    })
}

/// Per-part texture atlas built by scattering source pixels to their (U, V)
/// bins. Bins average colliding pixels; empty bins are pull-push filled.
pub struct TextureAtlas {
    resolution: usize,
    parts: Vec<Option<ImageBuf>>,
}

impl TextureAtlas {
    /// Builds atlases for every part present in `src_iuv`.
    pub fn build(src_image: &ImageBuf, src_iuv: &ImageBuf, resolution: usize) -> Result<Self> {
        src_iuv_check(src_image, src_iuv)?;
        let c = src_image.channels();
        let a = resolution;
        let mut sums: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; IUV_PARTS + 1];
        for y in 0..src_image.height() {
            for x in 0..src_image.width() {
                let iuv = src_iuv.pixel(x, y);
                let part = iuv[0] as usize;
                if part == 0 || part > IUV_PARTS {
                    continue;
                }
                let slot = sums[part].get_or_insert_with(|| (vec![0.0; a * a * c], vec![0.0; a * a]));
                let bu = ((iuv[1] * (a - 1) as f64).round() as i64).clamp(0, a as i64 - 1) as usize;
                let bv = ((iuv[2] * (a - 1) as f64).round() as i64).clamp(0, a as i64 - 1) as usize;
                let bin = bv * a + bu;
                slot.1[bin] += 1.0;
                let px = src_image.pixel(x, y);
                for ch in 0..c {
                    slot.0[bin * c + ch] += px[ch];
                }
            }
        }
        let mut parts: Vec<Option<ImageBuf>> = vec![None; IUV_PARTS + 1];
        for part in 1..=IUV_PARTS {
            let Some((vals, counts)) = sums[part].take() else {
                continue;
            };
            let mut img = ImageBuf::from_vec(a, a, c, vals);
            let mut weights = ImageBuf::new(a, a, 1);
            for bin in 0..a * a {
                if counts[bin] > 0.0 {
                    for ch in 0..c {
                        img.data_mut()[bin * c + ch] /= counts[bin];
                    }
                    weights.data_mut()[bin] = 1.0;
                }
            }
            parts[part] = Some(pull_push(&img, &weights)?);
        }
        Ok(Self { resolution, parts })
    }

    pub fn part(&self, id: usize) -> Option<&ImageBuf> {
        self.parts.get(id).and_then(|p| p.as_ref())
    }

    /// Clamped bilinear lookup on a part chart.
    pub fn sample(&self, part: usize, u: f64, v: f64, out: &mut [f64]) -> bool {
        let Some(chart) = self.part(part) else {
            return false;
        };
        let a = self.resolution as f64;
        let su = (u.clamp(0.0, 1.0) * (a - 1.0) + 0.5).clamp(0.5, a - 0.5);
        let sv = (v.clamp(0.0, 1.0) * (a - 1.0) + 0.5).clamp(0.5, a - 0.5);
        chart.sample_bilinear(su, sv, out);
        true
    }
}

fn src_iuv_check(image: &ImageBuf, iuv: &ImageBuf) -> Result<()> {
    if iuv.width() != image.width() || iuv.height() != image.height() || iuv.channels() != 3 {
        return Err(SvsError::shape(
            format!("{}x{}x3 iuv", image.width(), image.height()),
            iuv.shape_string(),
        ));
    }
    Ok(())
}

/// Transfers appearance from a source view to the pixels of a destination
/// view through per-part (U, V) charts. Destination pixels whose part is
/// absent from the source (or background) come back invalid.
pub fn iuv_warp(src_image: &ImageBuf, src_iuv: &ImageBuf, dst_iuv: &ImageBuf) -> Result<WarpedImage> {
    iuv_warp_with_resolution(src_image, src_iuv, dst_iuv, ATLAS_RESOLUTION)
}

pub fn iuv_warp_with_resolution(
    src_image: &ImageBuf,
    src_iuv: &ImageBuf,
    dst_iuv: &ImageBuf,
    resolution: usize,
) -> Result<WarpedImage> {
    if dst_iuv.channels() != 3 {
        return Err(SvsError::shape("HxWx3 iuv".to_string(), dst_iuv.shape_string()));
    }
    let atlas = TextureAtlas::build(src_image, src_iuv, resolution)?;
    let c = src_image.channels();
    let (w, h) = (dst_iuv.width(), dst_iuv.height());
    let rows = map_indexed(h, |y| {
        let mut row = vec![0.0; w * c];
        let mut valid = vec![false; w];
        let mut sample = vec![0.0; c];
        for x in 0..w {
            let iuv = dst_iuv.pixel(x, y);
            let part = iuv[0] as usize;
            if part == 0 || part > IUV_PARTS {
                continue;
            }
            if atlas.sample(part, iuv[1], iuv[2], &mut sample) {
                row[x * c..(x + 1) * c].copy_from_slice(&sample);
                valid[x] = true;
            }
        }
        (row, valid)
    });
    let mut out = WarpedImage::empty(w, h, c);
    for (y, (row, valid)) in rows.into_iter().enumerate() {
        out.image.data_mut()[y * w * c..(y + 1) * w * c].copy_from_slice(&row);
        for (x, v) in valid.into_iter().enumerate() {
            out.validity.set(x, y, v);
        }
    }
    Ok(out)
}

/// `I_raw * I_m * I_c`, broadcasting the mask and confidence over channels.
/// All inputs must lie in [0, 1].
pub fn composite(raw: &ImageBuf, mask: &ImageBuf, confidence: &ImageBuf) -> Result<ImageBuf> {
    for (name, img, channels) in [
        ("mask", mask, 1usize),
        ("confidence", confidence, 1usize),
    ] {
        if img.width() != raw.width() || img.height() != raw.height() || img.channels() != channels {
            return Err(SvsError::shape(
                format!("{}x{}x{channels} {name}", raw.width(), raw.height()),
                img.shape_string(),
            ));
        }
    }
    for &v in raw.data().iter().chain(mask.data()).chain(confidence.data()) {
        if !(0.0..=1.0).contains(&v) {
            return Err(SvsError::OutOfRange { value: v });
        }
    }
    let c = raw.channels();
    let mut out = raw.clone();
    for y in 0..raw.height() {
        for x in 0..raw.width() {
            let f = mask.get(x, y, 0) * confidence.get(x, y, 0);
            let p = out.pixel_mut(x, y);
            for ch in 0..c {
                p[ch] *= f;
            }
        }
    }
    Ok(out)
}

/// `I_p + (1 - I_c) * I_w` at valid warp pixels, clamped to [0, 1].
/// `composited` is expected to already carry its confidence weighting.
pub fn fuse(composited: &ImageBuf, confidence: &ImageBuf, warped: &WarpedImage) -> Result<ImageBuf> {
    composited.expect_shape(&warped.image)?;
    if confidence.width() != composited.width()
        || confidence.height() != composited.height()
        || confidence.channels() != 1
    {
        return Err(SvsError::shape(
            format!("{}x{}x1 confidence", composited.width(), composited.height()),
            confidence.shape_string(),
        ));
    }
    let c = composited.channels();
    let mut out = composited.clone();
    for y in 0..out.height() {
        for x in 0..out.width() {
            if !warped.validity.get(x, y) {
                continue;
            }
            let gate = 1.0 - confidence.get(x, y, 0);
            let w = warped.image.pixel(x, y);
            let p = out.pixel_mut(x, y);
            for ch in 0..c {
                p[ch] = (p[ch] + gate * w[ch]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use nalgebra::{Matrix3, Vector3};

    fn cam(w: usize, h: usize, fx: f64, pose: RigidTransform) -> Camera {
        Camera::new(fx, fx, w as f64 / 2.0, h as f64 / 2.0, w, h, 0.1, 10.0, pose).unwrap()
    }

    fn plane_frame(w: usize, h: usize, z: f64) -> RgbdFrame {
        let mut rgb = ImageBuf::new(w, h, 3);
        let mut depth = ImageBuf::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                rgb.set(x, y, 0, x as f64 / w as f64);
                rgb.set(x, y, 1, y as f64 / h as f64);
                rgb.set(x, y, 2, 0.25);
                depth.set(x, y, 0, z);
            }
        }
        RgbdFrame::new(rgb, depth).unwrap()
    }

    #[test]
    fn forward_warp_identity_reproduces_valid_pixels() {
        let c = cam(16, 16, 30.0, RigidTransform::identity());
        let mut frame = plane_frame(16, 16, 2.0);
        frame.depth.set(3, 4, 0, 0.0);
        frame.valid_mask.set(3, 4, false);
        let out = forward_depth_warp(&frame, &c, &c).unwrap();
        assert_eq!(out.validity, frame.valid_mask);
        for y in 0..16 {
            for x in 0..16 {
                if frame.valid_mask.get(x, y) {
                    assert_eq!(out.image.pixel(x, y), frame.rgb.pixel(x, y));
                } else {
                    assert_eq!(out.image.pixel(x, y), &[0.0, 0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn forward_warp_translation_shifts_plane_by_fx_tx_over_z() {
        // camera moved by +0.1 in x: world-to-camera translation is -0.1
        let src = cam(32, 32, 100.0, RigidTransform::identity());
        let dst = cam(
            32,
            32,
            100.0,
            RigidTransform::new(Matrix3::identity(), Vector3::new(-0.1, 0.0, 0.0)),
        );
        let frame = plane_frame(32, 32, 2.0);
        let out = forward_depth_warp(&frame, &src, &dst).unwrap();
        // shift = fx * (-0.1) / 2 = -5 px exactly
        for y in 0..32 {
            for x in 0..32 {
                let sx = x as i64 + 5;
                if sx < 32 {
                    assert!(out.validity.get(x, y), "pixel {x},{y} should be covered");
                    assert_eq!(out.image.pixel(x, y), frame.rgb.pixel(sx as usize, y));
                } else {
                    assert!(!out.validity.get(x, y));
                }
            }
        }
    }

    #[test]
    fn forward_warp_collision_keeps_nearer_point() {
        let c = cam(8, 4, 8.0, RigidTransform::identity());
        let mut rgb = ImageBuf::new(8, 4, 3);
        let mut depth = ImageBuf::new(8, 4, 1);
        // red point at pixel (0,1), z = 1; green at (3,1), z = 2
        rgb.set(0, 1, 0, 1.0);
        depth.set(0, 1, 0, 1.0);
        rgb.set(3, 1, 1, 1.0);
        depth.set(3, 1, 0, 2.0);
        let frame = RgbdFrame::new(rgb, depth).unwrap();
        // translation chosen so both project onto dst pixel (6, 1)
        let dst = cam(
            8,
            4,
            8.0,
            RigidTransform::new(Matrix3::identity(), Vector3::new(0.75, 0.0, 0.0)),
        );
        let out = forward_depth_warp(&frame, &c, &dst).unwrap();
        assert_eq!(out.validity.count(), 1);
        assert!(out.validity.get(6, 1));
        // the nearer (red) point wins the collision
        assert_eq!(out.image.pixel(6, 1), &[1.0, 0.0, 0.0]);
        assert!(out.validity.count() <= frame.valid_mask.count());
    }

    #[test]
    fn inverse_warp_identity_is_exact_in_interior() {
        let c = cam(16, 16, 30.0, RigidTransform::identity());
        let frame = plane_frame(16, 16, 2.0);
        let out = inverse_warp(&frame.rgb, &frame.depth, &c, &c).unwrap();
        for y in 1..15 {
            for x in 1..15 {
                assert!(out.validity.get(x, y));
                for ch in 0..3 {
                    assert!(
                        (out.image.get(x, y, ch) - frame.rgb.get(x, y, ch)).abs() < 1e-6,
                        "mismatch at {x},{y},{ch}"
                    );
                }
            }
        }
    }

    #[test]
    fn inverse_warp_marks_out_of_bounds_invalid() {
        let src = cam(16, 16, 30.0, RigidTransform::identity());
        // destination looks at the same plane but from far to the side
        let dst = cam(
            16,
            16,
            30.0,
            RigidTransform::new(Matrix3::identity(), Vector3::new(-2.0, 0.0, 0.0)),
        );
        let frame = plane_frame(16, 16, 2.0);
        let out = inverse_warp(&frame.rgb, &frame.depth, &dst, &src).unwrap();
        assert!(out.validity.count() < 16 * 16);
        for y in 0..16 {
            for x in 0..16 {
                if !out.validity.get(x, y) {
                    assert_eq!(out.image.pixel(x, y), &[0.0, 0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn consistency_zero_for_identical_views() {
        let c = cam(12, 12, 20.0, RigidTransform::identity());
        let frame = plane_frame(12, 12, 1.5);
        let res = consistency_residual(&frame.rgb, &frame.rgb, &frame.depth, &c, &c).unwrap();
        assert_eq!(res.mean, 0.0);
    }

    #[test]
    fn consistency_disjoint_frusta_is_empty_overlap() {
        let left = cam(12, 12, 20.0, RigidTransform::identity());
        let right = cam(
            12,
            12,
            20.0,
            RigidTransform::new(
                RigidTransform::rotation_about(&Vector3::new(0.0, 1.0, 0.0), std::f64::consts::PI),
                Vector3::zeros(),
            ),
        );
        let frame = plane_frame(12, 12, 1.5);
        assert!(matches!(
            consistency_residual(&frame.rgb, &frame.rgb, &frame.depth, &left, &right),
            Err(SvsError::EmptyOverlap)
        ));
    }

    fn synthetic_iuv(w: usize, h: usize, part: f64) -> ImageBuf {
        let mut iuv = ImageBuf::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                iuv.set(x, y, 0, part);
                iuv.set(x, y, 1, (x as f64 + 0.5) / w as f64);
                iuv.set(x, y, 2, (y as f64 + 0.5) / h as f64);
            }
        }
        iuv
    }

    fn smooth_image(w: usize, h: usize) -> ImageBuf {
        let mut img = ImageBuf::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / (w - 1) as f64;
                let v = y as f64 / (h - 1) as f64;
                img.set(x, y, 0, 0.2 + 0.6 * u);
                img.set(x, y, 1, 0.8 - 0.5 * v);
                img.set(x, y, 2, 0.3 + 0.3 * u * v);
            }
        }
        img
    }

    #[test]
    fn iuv_roundtrip_reproduces_source() {
        let img = smooth_image(48, 48);
        let iuv = synthetic_iuv(48, 48, 3.0);
        let out = iuv_warp(&img, &iuv, &iuv).unwrap();
        assert_eq!(out.validity.count(), 48 * 48);
        let mut mse = 0.0;
        for i in 0..img.data().len() {
            let d = out.image.data()[i] - img.data()[i];
            mse += d * d;
        }
        mse /= img.data().len() as f64;
        let psnr = -10.0 * mse.log10();
        assert!(psnr > 35.0, "roundtrip psnr {psnr}");
    }

    #[test]
    fn iuv_part_missing_from_source_is_invalid() {
        let img = smooth_image(16, 16);
        let src_iuv = synthetic_iuv(16, 16, 3.0);
        let mut dst_iuv = synthetic_iuv(16, 16, 3.0);
        dst_iuv.set(5, 5, 0, 7.0); // part 7 never appears in src
        dst_iuv.set(6, 5, 0, 0.0); // background
        let out = iuv_warp(&img, &src_iuv, &dst_iuv).unwrap();
        assert!(!out.validity.get(5, 5));
        assert!(!out.validity.get(6, 5));
        assert!(out.validity.get(8, 8));
    }

    #[test]
    fn composite_identity_and_zero() {
        let img = smooth_image(8, 8);
        let ones = ImageBuf::filled(8, 8, &[1.0]);
        let zeros = ImageBuf::filled(8, 8, &[0.0]);
        let same = composite(&img, &ones, &ones).unwrap();
        assert_eq!(same, img);
        let black = composite(&img, &ones, &zeros).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composite_binary_mask_zeroes_outside() {
        let img = smooth_image(8, 8);
        let mut mask = ImageBuf::filled(8, 8, &[1.0]);
        mask.set(2, 3, 0, 0.0);
        let ones = ImageBuf::filled(8, 8, &[1.0]);
        let out = composite(&img, &mask, &ones).unwrap();
        assert_eq!(out.pixel(2, 3), &[0.0, 0.0, 0.0]);
        assert_eq!(out.pixel(4, 4), img.pixel(4, 4));
    }

    #[test]
    fn composite_rejects_out_of_range() {
        let img = smooth_image(4, 4);
        let mut bad = ImageBuf::filled(4, 4, &[1.0]);
        bad.set(0, 0, 0, 1.5);
        assert!(matches!(
            composite(&img, &bad, &ImageBuf::filled(4, 4, &[1.0])),
            Err(SvsError::OutOfRange { .. })
        ));
    }

    #[test]
    fn fuse_confidence_extremes() {
        let ip = smooth_image(8, 8);
        let warped = WarpedImage {
            image: ImageBuf::filled(8, 8, &[0.9, 0.9, 0.9]),
            validity: Mask::new(8, 8, true),
        };
        let ones = ImageBuf::filled(8, 8, &[1.0]);
        let zeros = ImageBuf::filled(8, 8, &[0.0]);
        let keep = fuse(&ip, &ones, &warped).unwrap();
        assert_eq!(keep, ip);
        // with zero confidence the composited image is zero, so fusion
        // returns the warped image at valid pixels
        let black = ImageBuf::new(8, 8, 3);
        let take = fuse(&black, &zeros, &warped).unwrap();
        for v in take.data() {
            assert!((v - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_half_confidence_blends() {
        // pre-composite image 0.8 at confidence 0.5 -> composited 0.4
        let composited = ImageBuf::filled(4, 4, &[0.4, 0.4, 0.4]);
        let half = ImageBuf::filled(4, 4, &[0.5]);
        let warped = WarpedImage {
            image: ImageBuf::filled(4, 4, &[0.8, 0.8, 0.8]),
            validity: Mask::new(4, 4, true),
        };
        let out = fuse(&composited, &half, &warped).unwrap();
        for v in out.data() {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_never_darkens_valid_pixels() {
        let ip = smooth_image(8, 8);
        let warped = WarpedImage {
            image: ImageBuf::filled(8, 8, &[0.25, 0.25, 0.25]),
            validity: Mask::new(8, 8, true),
        };
        let conf = ImageBuf::filled(8, 8, &[0.7]);
        let out = fuse(&ip, &conf, &warped).unwrap();
        for i in 0..out.data().len() {
            assert!(out.data()[i] >= ip.data()[i] - 1e-12);
        }
    }
}
