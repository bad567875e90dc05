//! Soft sphere splatting: tiled forward rendering, a hard z-buffer oracle,
//! and the analytic backward pass (positions, radii, features).
//!
//! # Blending model
//!
//! Each sphere projects to a screen-space disc of radius `rho = r * fx / z`.
//! Its coverage at a pixel `q` is `sigmoid(s * (rho - ||q - u||))`, damped by
//! a quintic window so coverage reaches exactly zero at the hard disc edge
//! (the plain sigmoid applies unmodified where `s * (rho - dist) >= 4`).
//! Covering spheres are blended with a depth softmax: with normalized depth
//! `d = clamp((z_far - z) / (z_far - z_near), 0, 1)` and temperature `gamma`,
//! the unnormalized weight is `omega = alpha * exp(d / gamma)`, and a virtual
//! background participant contributes `epsilon + exp(0 / gamma)`. Weights are
//! normalized to a partition of unity, so `gamma -> 0` recovers hard
//! z-buffering over the covering discs.
//!
//! Compact coverage support keeps the whole image function C^2 in every
//! sphere parameter, which is what makes central finite differences agree
//! with the analytic backward pass; it also bounds each sphere's influence
//! for tile binning.

use nalgebra::Vector3;

use crate::error::{Result, SvsError};
use crate::geometry::Camera;
use crate::image_buf::ImageBuf;
use crate::parallel::map_indexed;
use crate::sphere_cloud::SphereCloud;

/// Width of the edge window in sigmoid units: coverage follows the plain
/// sigmoid for `xi >= EDGE_TAPER_UNITS` and is damped to 0 at `xi = 0`.
pub const EDGE_TAPER_UNITS: f64 = 4.0;

/// Softening of the center distance in pixels: `dist = sqrt(dx^2 + dy^2 +
/// DIST_EPS^2)`. Removes the cone point of the Euclidean distance at the
/// sphere center, which otherwise has unbounded curvature right where
/// finite-difference probes are least accurate.
pub const DIST_EPS: f64 = 1e-2;

/// Knobs of the soft rasterizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    /// Depth softmax temperature; smaller is closer to a hard z-buffer.
    pub gamma: f64,
    /// Edge softness in px^-1; larger means a narrower coverage ramp.
    pub sharpness: f64,
    /// Feature vector blended in behind all spheres.
    pub background_feature: Vec<f64>,
    /// Additive epsilon on the background weight.
    pub background_weight_epsilon: f64,
    /// Tile edge in pixels; must be a power of two.
    pub tile_size: usize,
    /// At most this many covering spheres blend per pixel (nearest by z).
    pub max_spheres_per_pixel: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            sharpness: 1.0,
            background_feature: vec![0.0; 3],
            background_weight_epsilon: 1e-8,
            tile_size: 16,
            max_spheres_per_pixel: 32,
        }
    }
}

impl RenderSettings {
    /// Default settings with a given feature dimension (zero background).
    pub fn for_dim(d: usize) -> Self {
        Self {
            background_feature: vec![0.0; d],
            ..Self::default()
        }
    }

    /// Hard-edged, depth-dominant settings for faithful reconstruction.
    pub fn crisp(d: usize) -> Self {
        Self {
            gamma: 1e-3,
            sharpness: 8.0,
            background_feature: vec![0.0; d],
            ..Self::default()
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let fail = |reason: String| Err(SvsError::InvalidSettings { reason });
        if !(self.gamma > 0.0) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.sharpness > 0.0) {
            return fail(format!("sharpness must be positive, got {}", self.sharpness));
        }
        if !(self.background_weight_epsilon >= 0.0) {
            return fail("background epsilon must be non-negative".into());
        }
        if self.tile_size == 0 || !self.tile_size.is_power_of_two() {
            return fail(format!(
                "tile_size must be a positive power of two, got {}",
                self.tile_size
            ));
        }
        if self.max_spheres_per_pixel == 0 {
            return fail("max_spheres_per_pixel must be at least 1".into());
        }
        if self.background_feature.len() != feature_dim {
            return Err(SvsError::shape(
                format!("background feature of dim {feature_dim}"),
                format!("dim {}", self.background_feature.len()),
            ));
        }
        Ok(())
    }
}

/// Forward rendering result.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// H x W x d blended features.
    pub features: ImageBuf,
    /// H x W x 1 total foreground blend weight in [0, 1].
    pub alpha: ImageBuf,
    /// H x W x 1 blend-averaged depth in meters (0 where alpha is 0).
    pub depth: ImageBuf,
    /// H x W sphere index with the largest blend weight; -1 for background.
    pub winner: Vec<i32>,
    /// H x W x 1 gap between the largest and second-largest blend weight
    /// (background included); 1 where the decision is uncontested. Hard
    /// renders report 1 everywhere.
    pub top_two_margin: ImageBuf,
}

impl RenderOutput {
    #[inline]
    pub fn winner_at(&self, x: usize, y: usize) -> i32 {
        self.winner[y * self.features.width() + x]
    }
}

/// Gradients of a scalar loss w.r.t. all cloud parameters.
#[derive(Debug, Clone)]
pub struct CloudGrads {
    pub d_positions: Vec<Vector3<f64>>,
    pub d_radius_params: Vec<f64>,
    /// N x d, matching the cloud's feature layout.
    pub d_features: Vec<f64>,
}

impl CloudGrads {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            d_positions: vec![Vector3::zeros(); n],
            d_radius_params: vec![0.0; n],
            d_features: vec![0.0; n * d],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_positions
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
            && self.d_radius_params.iter().all(|v| v.is_finite())
            && self.d_features.iter().all(|v| v.is_finite())
    }

    /// L2 norm over every component.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for p in &self.d_positions {
            acc += p.norm_squared();
        }
        for v in &self.d_radius_params {
            acc += v * v;
        }
        for v in &self.d_features {
            acc += v * v;
        }
        acc.sqrt()
    }
}

/// Quintic smoothstep and its derivative on [0, 1].
#[inline]
fn smoothstep5(t: f64) -> (f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        t3 * (10.0 - 15.0 * t + 6.0 * t2),
        30.0 * t2 * (1.0 - t) * (1.0 - t),
    )
}

/// Coverage profile and its derivative in `xi = sharpness * (rho - dist)`.
#[inline]
fn coverage(xi: f64) -> (f64, f64) {
    if xi <= 0.0 {
        return (0.0, 0.0);
    }
    let s = crate::sphere_cloud::sigmoid(xi);
    let ds = s * (1.0 - s);
    if xi >= EDGE_TAPER_UNITS {
        return (s, ds);
    }
    let (w, dw) = smoothstep5(xi / EDGE_TAPER_UNITS);
    (s * w, ds * w + s * dw / EDGE_TAPER_UNITS)
}

#[derive(Debug, Clone, Copy)]
struct Projected {
    u: f64,
    v: f64,
    z: f64,
    /// Normalized depth in [0, 1]; 1 at the near plane.
    dnorm: f64,
    rho: f64,
    /// Index into the cloud.
    idx: u32,
}

struct Prepared {
    spheres: Vec<Projected>,
    bins: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
    tile_size: usize,
}

fn prepare(cloud: &SphereCloud, cam: &Camera, tile_size: usize) -> Prepared {
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(tile_size);
    let tiles_y = h.div_ceil(tile_size);
    let depth_span = cam.z_far - cam.z_near;

    let mut spheres = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let p_cam = cam.world_to_camera(&cloud.positions()[i]);
        // Near-plane clipped spheres are dropped whole.
        if p_cam.z < cam.z_near {
            continue;
        }
        let u = cam.fx * p_cam.x / p_cam.z + cam.cx;
        let v = cam.fy * p_cam.y / p_cam.z + cam.cy;
        let rho = cloud.radius(i) * cam.fx / p_cam.z;
        let dnorm = ((cam.z_far - p_cam.z) / depth_span).clamp(0.0, 1.0);
        spheres.push(Projected {
            u,
            v,
            z: p_cam.z,
            dnorm,
            rho,
            idx: i as u32,
        });
    }

    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (pi, s) in spheres.iter().enumerate() {
        // Conservative pixel bbox of the support disc.
        let x_min = (s.u - s.rho - 1.0).floor();
        let x_max = (s.u + s.rho).ceil();
        let y_min = (s.v - s.rho - 1.0).floor();
        let y_max = (s.v + s.rho).ceil();
        if x_max < 0.0 || y_max < 0.0 || x_min >= w as f64 || y_min >= h as f64 {
            continue;
        }
        let tx0 = (x_min.max(0.0) as usize) / tile_size;
        let tx1 = ((x_max.min(w as f64 - 1.0)) as usize) / tile_size;
        let ty0 = (y_min.max(0.0) as usize) / tile_size;
        let ty1 = ((y_max.min(h as f64 - 1.0)) as usize) / tile_size;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(pi as u32);
            }
        }
    }

    Prepared {
        spheres,
        bins,
        tiles_x,
        tiles_y,
        tile_size,
    }
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    /// Index into `Prepared::spheres`.
    sphere: u32,
    dist: f64,
    alpha: f64,
    dalpha_dxi: f64,
    z: f64,
    dnorm: f64,
    /// Blend weight, filled by `blend`.
    w: f64,
    /// exp(d/gamma - m) / D-tilde, the stable form of (unscaled) E_i / D.
    e_over_d: f64,
}

/// Per-pixel blend state shared by the forward and backward passes.
struct PixelBlend {
    w_bg: f64,
    /// Sum of sphere blend weights.
    alpha: f64,
    depth: f64,
    winner: i32,
    /// Gap between the largest and second-largest blend weight.
    margin: f64,
}

/// Collects covering candidates for one pixel (nearest `max_k` by depth,
/// ties broken by sphere order) and computes blend weights in place.
fn gather_and_blend(
    prep: &Prepared,
    bin: &[u32],
    px: f64,
    py: f64,
    settings: &RenderSettings,
    cands: &mut Vec<Cand>,
) -> PixelBlend {
    cands.clear();
    for &pi in bin {
        let s = &prep.spheres[pi as usize];
        let dx = px - s.u;
        let dy = py - s.v;
        let dist2 = dx * dx + dy * dy + DIST_EPS * DIST_EPS;
        if dist2 >= s.rho * s.rho {
            continue;
        }
        let dist = dist2.sqrt();
        let xi = settings.sharpness * (s.rho - dist);
        let (alpha, dalpha_dxi) = coverage(xi);
        cands.push(Cand {
            sphere: pi,
            dist,
            alpha,
            dalpha_dxi,
            z: s.z,
            dnorm: s.dnorm,
            w: 0.0,
            e_over_d: 0.0,
        });
    }
    // The blend is a symmetric sum, so candidate order never affects the
    // math; ordering is only needed to pick the K nearest when over the cap.
    let k = settings.max_spheres_per_pixel;
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, |a, b| {
            a.z.partial_cmp(&b.z)
                .unwrap()
                .then_with(|| a.sphere.cmp(&b.sphere))
        });
        cands.truncate(k);
    }

    if cands.is_empty() {
        return PixelBlend {
            w_bg: 1.0,
            alpha: 0.0,
            depth: 0.0,
            winner: -1,
            margin: 1.0,
        };
    }

    // Shifted softmax: scale all exponentials by exp(-m) so nothing overflows.
    let inv_gamma = 1.0 / settings.gamma;
    let mut m = 0.0f64;
    for c in cands.iter() {
        m = m.max(c.dnorm * inv_gamma);
    }
    let bg_scaled = (1.0 + settings.background_weight_epsilon) * (-m).exp();
    let mut denom = bg_scaled;
    for c in cands.iter_mut() {
        c.e_over_d = (c.dnorm * inv_gamma - m).exp();
        denom += c.alpha * c.e_over_d;
    }
    let mut alpha_sum = 0.0;
    let mut depth_sum = 0.0;
    let mut best_w = bg_scaled;
    let mut second_w = f64::NEG_INFINITY;
    let mut winner = -1i32;
    for c in cands.iter_mut() {
        let omega_scaled = c.alpha * c.e_over_d;
        c.w = omega_scaled / denom;
        c.e_over_d /= denom;
        alpha_sum += c.w;
        depth_sum += c.w * c.z;
        if omega_scaled > best_w {
            second_w = best_w;
            best_w = omega_scaled;
            winner = prep.spheres[c.sphere as usize].idx as i32;
        } else if omega_scaled > second_w {
            second_w = omega_scaled;
        }
    }
    let margin = if second_w.is_finite() {
        (best_w - second_w) / denom
    } else {
        1.0
    };
    PixelBlend {
        w_bg: bg_scaled / denom,
        alpha: alpha_sum,
        depth: if alpha_sum > 0.0 { depth_sum / alpha_sum } else { 0.0 },
        winner,
        margin,
    }
}

/// Splats the cloud into the target camera.
///
/// A cloud entirely behind the camera renders as pure background.
pub fn render(cloud: &SphereCloud, cam: &Camera, settings: &RenderSettings) -> Result<RenderOutput> {
    if cloud.is_empty() {
        return Err(SvsError::EmptyCloud);
    }
    cam.validate()?;
    settings.validate(cloud.feature_dim())?;

    let (w, h, d) = (cam.width, cam.height, cloud.feature_dim());
    let prep = prepare(cloud, cam, settings.tile_size);

    struct Row {
        features: Vec<f64>,
        alpha: Vec<f64>,
        depth: Vec<f64>,
        winner: Vec<i32>,
        margin: Vec<f64>,
    }

    let rows = map_indexed(h, |y| {
        let mut row = Row {
            features: vec![0.0; w * d],
            alpha: vec![0.0; w],
            depth: vec![0.0; w],
            winner: vec![-1i32; w],
            margin: vec![1.0; w],
        };
        let mut cands: Vec<Cand> = Vec::with_capacity(64);
        let py = y as f64 + 0.5;
        let tile_row = (y / prep.tile_size) * prep.tiles_x;
        for x in 0..w {
            let bin = &prep.bins[tile_row + x / prep.tile_size];
            let out = &mut row.features[x * d..(x + 1) * d];
            if bin.is_empty() {
                out.copy_from_slice(&settings.background_feature);
                continue;
            }
            let px = x as f64 + 0.5;
            let blend = gather_and_blend(&prep, bin, px, py, settings, &mut cands);
            for (c, bgv) in out.iter_mut().zip(&settings.background_feature) {
                *c = blend.w_bg * bgv;
            }
            for cand in &cands {
                let f = cloud.feature(prep.spheres[cand.sphere as usize].idx as usize);
                for (c, fv) in out.iter_mut().zip(f) {
                    *c += cand.w * fv;
                }
            }
            row.alpha[x] = blend.alpha;
            row.depth[x] = blend.depth;
            row.winner[x] = blend.winner;
            row.margin[x] = blend.margin;
        }
        row
    });

    let mut features = Vec::with_capacity(w * h * d);
    let mut alpha = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut winner = Vec::with_capacity(w * h);
    let mut margin = Vec::with_capacity(w * h);
    for row in rows {
        features.extend_from_slice(&row.features);
        alpha.extend_from_slice(&row.alpha);
        depth.extend_from_slice(&row.depth);
        winner.extend_from_slice(&row.winner);
        margin.extend_from_slice(&row.margin);
    }
    Ok(RenderOutput {
        features: ImageBuf::from_vec(w, h, d, features),
        alpha: ImageBuf::from_vec(w, h, 1, alpha),
        depth: ImageBuf::from_vec(w, h, 1, depth),
        winner,
        top_two_margin: ImageBuf::from_vec(w, h, 1, margin),
    })
}

/// Hard, non-differentiable oracle: each pixel takes the nearest sphere whose
/// hard disc covers it (ties by sphere order); alpha is binary.
pub fn zbuffer_render(cloud: &SphereCloud, cam: &Camera) -> Result<RenderOutput> {
    if cloud.is_empty() {
        return Err(SvsError::EmptyCloud);
    }
    cam.validate()?;
    let (w, h, d) = (cam.width, cam.height, cloud.feature_dim());
    let tile_size = 16;
    let prep = prepare(cloud, cam, tile_size);

    struct Row {
        features: Vec<f64>,
        alpha: Vec<f64>,
        depth: Vec<f64>,
        winner: Vec<i32>,
    }

    let rows = map_indexed(h, |y| {
        let mut row = Row {
            features: vec![0.0; w * d],
            alpha: vec![0.0; w],
            depth: vec![0.0; w],
            winner: vec![-1i32; w],
        };
        let py = y as f64 + 0.5;
        let tile_row = (y / tile_size) * prep.tiles_x;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let mut best: Option<&Projected> = None;
            for &pi in &prep.bins[tile_row + x / tile_size] {
                let s = &prep.spheres[pi as usize];
                let dx = px - s.u;
                let dy = py - s.v;
                // same softened disc as the blended renderer
                if dx * dx + dy * dy + DIST_EPS * DIST_EPS > s.rho * s.rho {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => s.z < b.z || (s.z == b.z && s.idx < b.idx),
                };
                if better {
                    best = Some(s);
                }
            }
            if let Some(s) = best {
                row.features[x * d..(x + 1) * d]
                    .copy_from_slice(cloud.feature(s.idx as usize));
                row.alpha[x] = 1.0;
                row.depth[x] = s.z;
                row.winner[x] = s.idx as i32;
            }
        }
        row
    });

    let mut features = Vec::with_capacity(w * h * d);
    let mut alpha = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut winner = Vec::with_capacity(w * h);
    for row in rows {
        features.extend_from_slice(&row.features);
        alpha.extend_from_slice(&row.alpha);
        depth.extend_from_slice(&row.depth);
        winner.extend_from_slice(&row.winner);
    }
    Ok(RenderOutput {
        features: ImageBuf::from_vec(w, h, d, features),
        alpha: ImageBuf::from_vec(w, h, 1, alpha),
        depth: ImageBuf::from_vec(w, h, 1, depth),
        winner,
        top_two_margin: ImageBuf::filled(w, h, &[1.0]),
    })
}

/// Vector-Jacobian product of [`render`] at `cloud`.
///
/// `upstream_features` is dL/d(features image); `upstream_alpha`, when given,
/// is dL/d(alpha image). The sigmoid radius reparameterization is chained
/// into `d_radius_params`.
pub fn render_backward(
    cloud: &SphereCloud,
    cam: &Camera,
    settings: &RenderSettings,
    upstream_features: &ImageBuf,
    upstream_alpha: Option<&ImageBuf>,
) -> Result<CloudGrads> {
    if cloud.is_empty() {
        return Err(SvsError::EmptyCloud);
    }
    cam.validate()?;
    settings.validate(cloud.feature_dim())?;
    let (w, h, d) = (cam.width, cam.height, cloud.feature_dim());
    if upstream_features.width() != w
        || upstream_features.height() != h
        || upstream_features.channels() != d
    {
        return Err(SvsError::shape(
            format!("{w}x{h}x{d} upstream"),
            upstream_features.shape_string(),
        ));
    }
    if let Some(ua) = upstream_alpha {
        if ua.width() != w || ua.height() != h || ua.channels() != 1 {
            return Err(SvsError::shape(
                format!("{w}x{h}x1 upstream alpha"),
                ua.shape_string(),
            ));
        }
    }

    let prep = prepare(cloud, cam, settings.tile_size);
    let depth_span = cam.z_far - cam.z_near;
    let inv_gamma = 1.0 / settings.gamma;

    // Per-tile accumulators: [du, dv, dz, dr] and a feature block per binned
    // sphere. Tiles are processed independently and reduced in tile order, so
    // the result is bit-stable for any thread count.
    struct TileGrads {
        tile: usize,
        geom: Vec<[f64; 4]>,
        feat: Vec<f64>,
    }

    let n_tiles = prep.tiles_x * prep.tiles_y;
    let tile_grads: Vec<TileGrads> = map_indexed(n_tiles, |tile| {
        let bin = &prep.bins[tile];
        let mut grads = TileGrads {
            tile,
            geom: vec![[0.0; 4]; bin.len()],
            feat: vec![0.0; bin.len() * d],
        };
        if bin.is_empty() {
            return grads;
        }
        // local slot of each bin entry, keyed by index into prep.spheres
        let tx = tile % prep.tiles_x;
        let ty = tile / prep.tiles_x;
        let x0 = tx * prep.tile_size;
        let y0 = ty * prep.tile_size;
        let x1 = (x0 + prep.tile_size).min(w);
        let y1 = (y0 + prep.tile_size).min(h);
        let mut cands: Vec<Cand> = Vec::with_capacity(64);
        let mut slot_of = std::collections::HashMap::with_capacity(bin.len());
        for (slot, &pi) in bin.iter().enumerate() {
            slot_of.insert(pi, slot);
        }
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let blend = gather_and_blend(&prep, bin, px, py, settings, &mut cands);
                if cands.is_empty() {
                    continue;
                }
                let g_feat = upstream_features.pixel(x, y);
                let g_alpha = upstream_alpha.map_or(0.0, |ua| ua.get(x, y, 0));

                // Blended feature at this pixel, needed for d/d omega.
                let mut blended = settings.background_feature.clone();
                for b in blended.iter_mut() {
                    *b *= blend.w_bg;
                }
                for c in cands.iter() {
                    let f = cloud.feature(prep.spheres[c.sphere as usize].idx as usize);
                    for (bv, fv) in blended.iter_mut().zip(f) {
                        *bv += c.w * fv;
                    }
                }

                for c in cands.iter() {
                    let sphere = &prep.spheres[c.sphere as usize];
                    let slot = slot_of[&c.sphere];
                    let f = cloud.feature(sphere.idx as usize);

                    // dL/d f_i = w_i * gF
                    let fg = &mut grads.feat[slot * d..(slot + 1) * d];
                    for ((fgv, gf), _) in fg.iter_mut().zip(g_feat).zip(f) {
                        *fgv += c.w * gf;
                    }

                    // G-tilde = gF . (f_i - F) + gA * w_bg
                    let mut gt = g_alpha * blend.w_bg;
                    for (gf, (fv, bv)) in g_feat.iter().zip(f.iter().zip(&blended)) {
                        gt += gf * (fv - bv);
                    }
                    if gt == 0.0 {
                        continue;
                    }

                    // dL/d alpha_i and dL/d dnorm_i
                    let dl_dalpha = gt * c.e_over_d;
                    let dl_ddnorm = gt * c.w * inv_gamma;

                    // alpha = coverage(xi), xi = s * (rho - dist)
                    let dl_dxi = dl_dalpha * c.dalpha_dxi;
                    let dl_drho = dl_dxi * settings.sharpness;
                    let dl_ddist = -dl_dxi * settings.sharpness;

                    let g = &mut grads.geom[slot];
                    if c.dist > 1e-12 {
                        let inv_dist = 1.0 / c.dist;
                        g[0] += dl_ddist * (sphere.u - px) * inv_dist;
                        g[1] += dl_ddist * (sphere.v - py) * inv_dist;
                    }
                    // rho = r * fx / z
                    g[3] += dl_drho * cam.fx / sphere.z;
                    let mut dl_dz = -dl_drho * cloud.radius(sphere.idx as usize) * cam.fx
                        / (sphere.z * sphere.z);
                    // dnorm = clamp((z_far - z) / span, 0, 1)
                    if sphere.dnorm > 0.0 && sphere.dnorm < 1.0 {
                        dl_dz -= dl_ddnorm / depth_span;
                    }
                    g[2] += dl_dz;
                }
            }
        }
        grads
    });

    // Deterministic reduction in tile order.
    let n = cloud.len();
    let mut acc_geom = vec![[0.0f64; 4]; n];
    let mut d_features = vec![0.0f64; n * d];
    for tg in &tile_grads {
        let bin = &prep.bins[tg.tile];
        for (slot, &pi) in bin.iter().enumerate() {
            let idx = prep.spheres[pi as usize].idx as usize;
            for k in 0..4 {
                acc_geom[idx][k] += tg.geom[slot][k];
            }
            let src = &tg.feat[slot * d..(slot + 1) * d];
            let dst = &mut d_features[idx * d..(idx + 1) * d];
            for (dv, sv) in dst.iter_mut().zip(src) {
                *dv += sv;
            }
        }
    }

    // Chain pixel-space and depth gradients back to world positions and
    // pre-sigmoid radius parameters.
    let mut d_positions = vec![Vector3::zeros(); n];
    let mut d_radius_params = vec![0.0f64; n];
    let rot_t = cam.pose.rotation.transpose();
    for s in &prep.spheres {
        let idx = s.idx as usize;
        let [du, dv, dz_extra, dr] = acc_geom[idx];
        if du == 0.0 && dv == 0.0 && dz_extra == 0.0 && dr == 0.0 {
            continue;
        }
        let p_cam = cam.world_to_camera(&cloud.positions()[idx]);
        let inv_z = 1.0 / p_cam.z;
        let dx_cam = du * cam.fx * inv_z;
        let dy_cam = dv * cam.fy * inv_z;
        let dz_cam = -du * cam.fx * p_cam.x * inv_z * inv_z
            - dv * cam.fy * p_cam.y * inv_z * inv_z
            + dz_extra;
        d_positions[idx] = rot_t * Vector3::new(dx_cam, dy_cam, dz_cam);
        d_radius_params[idx] = dr * cloud.bounds().radius_derivative(cloud.radius_params()[idx]);
    }

    Ok(CloudGrads {
        d_positions,
        d_radius_params,
        d_features,
    })
}
