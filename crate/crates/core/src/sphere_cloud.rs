//! Sphere cloud construction from RGB-D frames and sparse depth sampling.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SvsError};
use crate::geometry::Camera;
use crate::image_buf::{ImageBuf, Mask};

/// One RGB-D observation: color, depth (0 encodes invalid), and the derived
/// validity mask, plus optional IUV correspondences and a foreground mask.
#[derive(Debug, Clone)]
pub struct RgbdFrame {
    pub rgb: ImageBuf,
    /// H x W x 1, meters; 0 = no measurement.
    pub depth: ImageBuf,
    pub valid_mask: Mask,
    /// H x W x 3: part index in channel 0 (0 = background), then U, V in [0,1].
    pub iuv: Option<ImageBuf>,
    pub fg_mask: Option<Mask>,
}

impl RgbdFrame {
    /// Builds a frame from color and depth, deriving the validity mask from
    /// strictly positive depth.
    pub fn new(rgb: ImageBuf, depth: ImageBuf) -> Result<Self> {
        if rgb.width() != depth.width() || rgb.height() != depth.height() || depth.channels() != 1 {
            return Err(SvsError::shape(
                format!("{}x{}x1 depth", rgb.width(), rgb.height()),
                depth.shape_string(),
            ));
        }
        let valid = depth.data().iter().map(|&z| z > 0.0).collect();
        let valid_mask = Mask::from_vec(depth.width(), depth.height(), valid);
        Ok(Self {
            rgb,
            depth,
            valid_mask,
            iuv: None,
            fg_mask: None,
        })
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Zeroes out depth wherever `keep` is false and rebuilds the validity mask.
    pub fn with_depth_subset(&self, keep: &Mask) -> Result<Self> {
        if keep.width() != self.width() || keep.height() != self.height() {
            return Err(SvsError::shape(
                format!("{}x{} mask", self.width(), self.height()),
                format!("{}x{}", keep.width(), keep.height()),
            ));
        }
        let mut out = self.clone();
        for y in 0..self.height() {
            for x in 0..self.width() {
                if !keep.get(x, y) {
                    out.depth.set(x, y, 0, 0.0);
                    out.valid_mask.set(x, y, false);
                }
            }
        }
        Ok(out)
    }

    /// Median of the valid depth values, if any.
    pub fn median_depth(&self) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .depth
            .data()
            .iter()
            .copied()
            .filter(|&z| z > 0.0)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(vals[vals.len() / 2])
    }
}

/// Sigmoid bounds for sphere radii in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for RadiusBounds {
    fn default() -> Self {
        Self {
            min: 1e-4,
            max: 0.05,
        }
    }
}

impl RadiusBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(0.0 < min && min < max) {
            return Err(SvsError::InvalidRadius {
                reason: format!("need 0 < min < max, got [{min}, {max}]"),
            });
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn radius_from_param(&self, param: f64) -> f64 {
        self.min + (self.max - self.min) * sigmoid(param)
    }

    /// Derivative of [`RadiusBounds::radius_from_param`] w.r.t. the parameter.
    #[inline]
    pub fn radius_derivative(&self, param: f64) -> f64 {
        let s = sigmoid(param);
        (self.max - self.min) * s * (1.0 - s)
    }

    pub fn param_from_radius(&self, radius: f64) -> Result<f64> {
        if !(self.min < radius && radius < self.max) {
            return Err(SvsError::InvalidRadius {
                reason: format!(
                    "radius {radius} outside open bounds ({}, {})",
                    self.min, self.max
                ),
            });
        }
        let p = (radius - self.min) / (self.max - self.min);
        Ok((p / (1.0 - p)).ln())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sphere set: world positions, per-sphere feature vectors, and radii stored
/// as unconstrained pre-sigmoid parameters.
#[derive(Debug, Clone)]
pub struct SphereCloud {
    positions: Vec<Vector3<f64>>,
    features: Vec<f64>,
    feature_dim: usize,
    radius_params: Vec<f64>,
    bounds: RadiusBounds,
    source_pixels: Vec<(u32, u32)>,
}

impl SphereCloud {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        features: Vec<f64>,
        feature_dim: usize,
        radius_params: Vec<f64>,
        bounds: RadiusBounds,
        source_pixels: Vec<(u32, u32)>,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(SvsError::EmptyCloud);
        }
        if features.len() != n * feature_dim || radius_params.len() != n || source_pixels.len() != n
        {
            return Err(SvsError::shape(
                format!("{n} spheres"),
                format!(
                    "{} features / {} radius params / {} source pixels",
                    features.len(),
                    radius_params.len(),
                    source_pixels.len()
                ),
            ));
        }
        Ok(Self {
            positions,
            features,
            feature_dim,
            radius_params,
            bounds,
            source_pixels,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    #[inline]
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    #[inline]
    pub fn radius_params(&self) -> &[f64] {
        &self.radius_params
    }

    #[inline]
    pub fn bounds(&self) -> RadiusBounds {
        self.bounds
    }

    #[inline]
    pub fn radius(&self, i: usize) -> f64 {
        self.bounds.radius_from_param(self.radius_params[i])
    }

    pub fn radii(&self) -> Vec<f64> {
        self.radius_params
            .iter()
            .map(|&p| self.bounds.radius_from_param(p))
            .collect()
    }

    #[inline]
    pub fn source_pixels(&self) -> &[(u32, u32)] {
        &self.source_pixels
    }

    pub fn positions_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.positions
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn radius_params_mut(&mut self) -> &mut [f64] {
        &mut self.radius_params
    }
}

/// Where per-sphere feature vectors come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    /// Use the frame's RGB values (d = 3).
    Rgb,
    /// Sample a caller-supplied feature image of matching resolution.
    External(&'a ImageBuf),
}

/// Builds one sphere per valid depth pixel.
///
/// Positions are the unprojected pixel centers in world space; features are
/// taken from the frame RGB or an external feature image; every radius
/// parameter is set so the sigmoid-bounded radius equals `init_radius`.
pub fn cloud_from_rgbd(
    frame: &RgbdFrame,
    cam: &Camera,
    init_radius: f64,
    bounds: RadiusBounds,
    source: FeatureSource,
) -> Result<SphereCloud> {
    if frame.width() != cam.width || frame.height() != cam.height {
        return Err(SvsError::shape(
            format!("{}x{} camera", cam.width, cam.height),
            format!("{}x{} frame", frame.width(), frame.height()),
        ));
    }
    let feature_image = match source {
        FeatureSource::Rgb => &frame.rgb,
        FeatureSource::External(img) => {
            if img.width() != frame.width() || img.height() != frame.height() {
                return Err(SvsError::shape(
                    format!("{}x{} features", frame.width(), frame.height()),
                    img.shape_string(),
                ));
            }
            img
        }
    };
    let param = bounds.param_from_radius(init_radius)?;
    let d = feature_image.channels();
    let cam_to_world = cam.pose.inverse();

    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut source_pixels = Vec::new();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let z = frame.depth.get(x, y, 0);
            if z <= 0.0 {
                continue;
            }
            let p_cam = cam.unproject_pixel(x as f64 + 0.5, y as f64 + 0.5, z)?;
            positions.push(cam_to_world.apply(&p_cam));
            features.extend_from_slice(feature_image.pixel(x, y));
            source_pixels.push((x as u32, y as u32));
        }
    }
    if positions.is_empty() {
        return Err(SvsError::EmptyCloud);
    }
    let n = positions.len();
    SphereCloud::new(positions, features, d, vec![param; n], bounds, source_pixels)
}

/// Keeps exactly `round(fraction * count_valid)` of the valid depth pixels,
/// selected uniformly without replacement. Deterministic for a given seed.
pub fn sparse_sample(depth: &ImageBuf, fraction: f64, seed: u64) -> Result<Mask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SvsError::InvalidFraction { fraction });
    }
    let (w, h) = (depth.width(), depth.height());
    let mut valid_indices: Vec<u32> = Vec::new();
    for (i, &z) in depth.data().iter().enumerate() {
        if z > 0.0 {
            valid_indices.push(i as u32);
        }
    }
    if valid_indices.is_empty() {
        return Err(SvsError::EmptyMask);
    }
    let keep = (fraction * valid_indices.len() as f64).round() as usize;
    let keep = keep.clamp(1, valid_indices.len());

    // Partial Fisher-Yates: the first `keep` slots end up a uniform sample.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..keep.min(valid_indices.len() - 1) {
        let j = rng.random_range(i..valid_indices.len());
        valid_indices.swap(i, j);
    }

    let mut data = vec![false; w * h];
    for &i in &valid_indices[..keep] {
        data[i as usize] = true;
    }
    Ok(Mask::from_vec(w, h, data))
}
