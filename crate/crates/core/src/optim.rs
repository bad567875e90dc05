//! Gradient-descent fitting of sphere cloud parameters against target views.

use std::time::Instant;

use crate::error::{Result, SvsError};
use crate::geometry::Camera;
use crate::image_buf::{ImageBuf, Mask};
use crate::losses::{l1_loss_with_grad, mask_bce_with_grad, TermWeights};
use crate::rasterizer::{render, render_backward, CloudGrads, RenderSettings};
use crate::sphere_cloud::SphereCloud;
use crate::warping::{inverse_warp, inverse_warp_transpose};

/// Which parameter groups the fit touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizeFlags {
    pub radii: bool,
    pub features: bool,
    pub positions: bool,
}

impl OptimizeFlags {
    pub fn radii_only() -> Self {
        Self {
            radii: true,
            features: false,
            positions: false,
        }
    }

    pub fn any(&self) -> bool {
        self.radii || self.features || self.positions
    }
}

/// Optimizer choice; Adam is the default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One supervision view.
#[derive(Debug, Clone)]
pub struct FitTarget {
    pub camera: Camera,
    pub image: ImageBuf,
    pub fg_mask: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimize: OptimizeFlags,
    pub targets: Vec<FitTarget>,
    /// Indices of two targets treated as a stereo pair for the consistency
    /// term (gradients flow into both rendered images; geometry is detached).
    pub stereo_pair: Option<(usize, usize)>,
    pub weights: TermWeights,
    pub optimizer: Optimizer,
    pub render: RenderSettings,
    /// Progress callback cadence used by [`fit_with_callback`].
    pub log_every: usize,
}

impl FitConfig {
    pub fn new(targets: Vec<FitTarget>, render: RenderSettings) -> Self {
        Self {
            steps: 100,
            learning_rate: 0.05,
            optimize: OptimizeFlags::radii_only(),
            targets,
            stereo_pair: None,
            weights: TermWeights::default(),
            optimizer: Optimizer::default(),
            render,
            log_every: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(SvsError::InvalidSettings { reason });
        if self.steps < 1 {
            return fail("steps must be at least 1".into());
        }
        if !self.optimize.any() {
            return fail("at least one parameter group must be optimized".into());
        }
        if self.targets.is_empty() {
            return fail("at least one target view is required".into());
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return fail(format!("bad learning rate {}", self.learning_rate));
        }
        if let Some((a, b)) = self.stereo_pair {
            if a == b || a >= self.targets.len() || b >= self.targets.len() {
                return fail(format!("bad stereo pair ({a}, {b})"));
            }
        }
        Ok(())
    }
}

/// Per-step record.
#[derive(Debug, Clone, Copy)]
pub struct FitStep {
    pub total: f64,
    pub l1: f64,
    pub mask_bce: f64,
    pub consistency: f64,
    pub grad_norm: f64,
    pub millis: f64,
}

/// Loss and timing trace, one entry per step.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub steps: Vec<FitStep>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grads[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Runs the fit and returns the optimized cloud and the step trace. The input
/// cloud is untouched.
pub fn fit(cloud: &SphereCloud, config: &FitConfig) -> Result<(SphereCloud, FitTrace)> {
    fit_with_callback(cloud, config, |_, _| {})
}

/// [`fit`] with a progress callback invoked every `config.log_every` steps.
pub fn fit_with_callback(
    cloud: &SphereCloud,
    config: &FitConfig,
    mut progress: impl FnMut(usize, &FitStep),
) -> Result<(SphereCloud, FitTrace)> {
    config.validate()?;
    let mut cloud = cloud.clone();
    let n = cloud.len();
    let d = cloud.feature_dim();
    let n_targets = config.targets.len() as f64;

    let mut adam_radii = AdamState::new(n);
    let mut adam_features = AdamState::new(n * d);
    let mut adam_positions = AdamState::new(3 * n);

    let mut trace = FitTrace::default();
    for step in 0..config.steps {
        let t0 = Instant::now();

        // Forward renders, loss terms, and per-target upstream gradients.
        let mut renders = Vec::with_capacity(config.targets.len());
        for target in &config.targets {
            renders.push(render(&cloud, &target.camera, &config.render)?);
        }
        let mut l1_sum = 0.0;
        let mut bce_sum = 0.0;
        let mut bce_count = 0usize;
        let mut upstream_f = Vec::with_capacity(config.targets.len());
        let mut upstream_a: Vec<Option<ImageBuf>> = Vec::with_capacity(config.targets.len());
        for (target, out) in config.targets.iter().zip(&renders) {
            let (l1, mut g_f) = l1_loss_with_grad(&out.features, &target.image, None)?;
            l1_sum += l1;
            let scale_f = config.weights.image / n_targets;
            for v in g_f.data_mut() {
                *v *= scale_f;
            }
            upstream_f.push(g_f);
            match &target.fg_mask {
                Some(mask) => {
                    let (bce, mut g_a) = mask_bce_with_grad(&out.alpha, mask)?;
                    bce_sum += bce;
                    bce_count += 1;
                    let scale_a = config.weights.mask / n_targets;
                    for v in g_a.data_mut() {
                        *v *= scale_a;
                    }
                    upstream_a.push(Some(g_a));
                }
                None => upstream_a.push(None),
            }
        }
        let l1_mean = l1_sum / n_targets;
        let bce_mean = if bce_count > 0 {
            bce_sum / bce_count as f64
        } else {
            0.0
        };

        // Stereo consistency between two rendered views, differentiated with
        // respect to both feature images (depth treated as fixed).
        let mut consistency = 0.0;
        if let Some((li, ri)) = config.stereo_pair {
            let (cons, g_left, g_right) = stereo_consistency_grads(
                &renders[li].features,
                &renders[ri].features,
                &renders[li].depth,
                &config.targets[li].camera,
                &config.targets[ri].camera,
            )?;
            consistency = cons;
            let w = config.weights.consistency;
            for (dst, src) in upstream_f[li].data_mut().iter_mut().zip(g_left.data()) {
                *dst += w * src;
            }
            for (dst, src) in upstream_f[ri].data_mut().iter_mut().zip(g_right.data()) {
                *dst += w * src;
            }
        }

        let total = config.weights.image * l1_mean
            + config.weights.mask * bce_mean
            + config.weights.consistency * consistency;

        // Backward through the rasterizer, one target at a time.
        let mut grads = CloudGrads::zeros(n, d);
        for (i, target) in config.targets.iter().enumerate() {
            let g = render_backward(
                &cloud,
                &target.camera,
                &config.render,
                &upstream_f[i],
                upstream_a[i].as_ref(),
            )?;
            for (acc, v) in grads.d_positions.iter_mut().zip(&g.d_positions) {
                *acc += v;
            }
            for (acc, v) in grads.d_radius_params.iter_mut().zip(&g.d_radius_params) {
                *acc += v;
            }
            for (acc, v) in grads.d_features.iter_mut().zip(&g.d_features) {
                *acc += v;
            }
        }

        let mut grad_norm_sq = 0.0;
        if config.optimize.radii {
            grad_norm_sq += grads.d_radius_params.iter().map(|g| g * g).sum::<f64>();
        }
        if config.optimize.features {
            grad_norm_sq += grads.d_features.iter().map(|g| g * g).sum::<f64>();
        }
        if config.optimize.positions {
            grad_norm_sq += grads.d_positions.iter().map(|g| g.norm_squared()).sum::<f64>();
        }
        let grad_norm = grad_norm_sq.sqrt();

        let record = FitStep {
            total,
            l1: l1_mean,
            mask_bce: bce_mean,
            consistency,
            grad_norm,
            millis: t0.elapsed().as_secs_f64() * 1e3,
        };
        trace.steps.push(record);
        if config.log_every > 0 && step % config.log_every == 0 {
            progress(step, &record);
        }

        if !total.is_finite() || !grads.is_finite() {
            return Err(SvsError::NumericalDivergence { step, trace });
        }

        // Parameter update.
        match config.optimizer {
            Optimizer::Sgd => {
                let lr = config.learning_rate;
                if config.optimize.radii {
                    for (p, g) in cloud
                        .radius_params_mut()
                        .iter_mut()
                        .zip(&grads.d_radius_params)
                    {
                        *p -= lr * g;
                    }
                }
                if config.optimize.features {
                    for (p, g) in cloud.features_mut().iter_mut().zip(&grads.d_features) {
                        *p -= lr * g;
                    }
                }
                if config.optimize.positions {
                    for (p, g) in cloud.positions_mut().iter_mut().zip(&grads.d_positions) {
                        *p -= lr * g;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let lr = config.learning_rate;
                if config.optimize.radii {
                    adam_radii.step(
                        cloud.radius_params_mut(),
                        &grads.d_radius_params,
                        lr,
                        beta1,
                        beta2,
                        epsilon,
                    );
                }
                if config.optimize.features {
                    adam_features.step(
                        cloud.features_mut(),
                        &grads.d_features,
                        lr,
                        beta1,
                        beta2,
                        epsilon,
                    );
                }
                if config.optimize.positions {
                    let mut flat = Vec::with_capacity(3 * n);
                    for p in cloud.positions().iter() {
                        flat.extend_from_slice(&[p.x, p.y, p.z]);
                    }
                    let mut gflat = Vec::with_capacity(3 * n);
                    for g in &grads.d_positions {
                        gflat.extend_from_slice(&[g.x, g.y, g.z]);
                    }
                    adam_positions.step(&mut flat, &gflat, lr, beta1, beta2, epsilon);
                    for (i, p) in cloud.positions_mut().iter_mut().enumerate() {
                        p.x = flat[3 * i];
                        p.y = flat[3 * i + 1];
                        p.z = flat[3 * i + 2];
                    }
                }
            }
        }
    }
    Ok((cloud, trace))
}

/// Consistency loss between two rendered views plus gradients w.r.t. both
/// feature images. Pixels without depth in the left render are skipped.
fn stereo_consistency_grads(
    left: &ImageBuf,
    right: &ImageBuf,
    left_depth: &ImageBuf,
    left_cam: &Camera,
    right_cam: &Camera,
) -> Result<(f64, ImageBuf, ImageBuf)> {
    let warped = inverse_warp(right, left_depth, left_cam, right_cam)?;
    let c = left.channels();
    let mut count = 0usize;
    for y in 0..left.height() {
        for x in 0..left.width() {
            if warped.validity.get(x, y) {
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(SvsError::EmptyOverlap);
    }
    let norm = (count * c) as f64;
    let mut sum = 0.0;
    let mut g_left = ImageBuf::new(left.width(), left.height(), c);
    let mut g_warped = ImageBuf::new(left.width(), left.height(), c);
    for y in 0..left.height() {
        for x in 0..left.width() {
            if !warped.validity.get(x, y) {
                continue;
            }
            let l = left.pixel(x, y);
            let w = warped.image.pixel(x, y);
            let gl = g_left.pixel_mut(x, y);
            for ch in 0..c {
                let diff = l[ch] - w[ch];
                sum += diff.abs();
                let s = diff.signum() * (diff != 0.0) as u8 as f64 / norm;
                gl[ch] = s;
            }
            let gw = g_warped.pixel_mut(x, y);
            let gl = g_left.pixel(x, y);
            for ch in 0..c {
                gw[ch] = -gl[ch];
            }
        }
    }
    let g_right = inverse_warp_transpose(&g_warped, left_depth, left_cam, right_cam)?;
    Ok((sum / norm, g_left, g_right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::sphere_cloud::{cloud_from_rgbd, FeatureSource, RadiusBounds, RgbdFrame};

    fn cam(w: usize, h: usize, fx: f64) -> Camera {
        Camera::new(
            fx,
            fx,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            0.1,
            10.0,
            RigidTransform::identity(),
        )
        .unwrap()
    }

    fn checkerboard_frame(w: usize, h: usize) -> RgbdFrame {
        let mut rgb = ImageBuf::new(w, h, 3);
        let mut depth = ImageBuf::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 4) % 2 == 0 { 0.9 } else { 0.2 };
                rgb.set(x, y, 0, v);
                rgb.set(x, y, 1, 1.0 - v);
                rgb.set(x, y, 2, 0.5);
                depth.set(x, y, 0, 2.0);
            }
        }
        RgbdFrame::new(rgb, depth).unwrap()
    }

    /// Fitting needs the soft blending regime: at tiny gamma the background
    /// weight underflows and pixel colors saturate to the nearest sphere, so
    /// radius gradients vanish on a plateau.
    fn soft_settings() -> RenderSettings {
        RenderSettings {
            gamma: 0.3,
            sharpness: 2.0,
            ..RenderSettings::for_dim(3)
        }
    }

    fn setup(w: usize) -> (SphereCloud, FitConfig) {
        // focal length such that the pixel footprint at z = 2 is ~4 mm
        let c = cam(w, w, 20.0 * w as f64);
        let frame = checkerboard_frame(w, w);
        let cloud = cloud_from_rgbd(
            &frame,
            &c,
            0.005,
            RadiusBounds::default(),
            FeatureSource::Rgb,
        )
        .unwrap();
        let out = render(&cloud, &c, &soft_settings()).unwrap();
        let config = FitConfig::new(
            vec![FitTarget {
                camera: c,
                image: out.features.clone(),
                fg_mask: None,
            }],
            soft_settings(),
        );
        (cloud, config)
    }

    #[test]
    fn zero_learning_rate_returns_identical_cloud() {
        let (cloud, mut config) = setup(16);
        config.learning_rate = 0.0;
        config.steps = 3;
        let (out, trace) = fit(&cloud, &config).unwrap();
        assert_eq!(trace.steps.len(), 3);
        assert_eq!(out.radius_params(), cloud.radius_params());
        assert_eq!(out.features(), cloud.features());
        assert_eq!(out.positions(), cloud.positions());
    }

    #[test]
    fn perfect_cloud_has_negligible_gradient() {
        let (cloud, mut config) = setup(16);
        config.steps = 1;
        let (_, trace) = fit(&cloud, &config).unwrap();
        assert!(trace.steps[0].total < 1e-12);
        assert!(trace.steps[0].grad_norm < 1e-8);
    }

    #[test]
    fn loss_decreases_on_mismatched_radii() {
        let (cloud, mut config) = setup(24);
        // perturb radii so the render no longer matches the target
        let mut bad = cloud.clone();
        for p in bad.radius_params_mut() {
            *p -= 2.0;
        }
        config.steps = 30;
        config.learning_rate = 0.1;
        let (_, trace) = fit(&bad, &config).unwrap();
        let first = trace.steps.first().unwrap().total;
        let last = trace.steps.last().unwrap().total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn sgd_small_lr_is_non_increasing_early() {
        let (cloud, mut config) = setup(16);
        let mut bad = cloud.clone();
        for p in bad.radius_params_mut() {
            *p -= 1.0;
        }
        config.optimizer = Optimizer::Sgd;
        config.learning_rate = 1e-3;
        config.steps = 10;
        let (_, trace) = fit(&bad, &config).unwrap();
        for pair in trace.steps.windows(2) {
            assert!(
                pair[1].total <= pair[0].total + 1e-9,
                "non-monotone: {} -> {}",
                pair[0].total,
                pair[1].total
            );
        }
    }

    #[test]
    fn determinism_same_inputs_same_trace() {
        let (cloud, mut config) = setup(16);
        let mut bad = cloud.clone();
        for p in bad.radius_params_mut() {
            *p -= 1.5;
        }
        config.steps = 5;
        let (out_a, trace_a) = fit(&bad, &config).unwrap();
        let (out_b, trace_b) = fit(&bad, &config).unwrap();
        assert_eq!(out_a.radius_params(), out_b.radius_params());
        for (a, b) in trace_a.steps.iter().zip(&trace_b.steps) {
            assert_eq!(a.total, b.total);
            assert_eq!(a.grad_norm, b.grad_norm);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (cloud, mut config) = setup(16);
        config.steps = 0;
        assert!(fit(&cloud, &config).is_err());
        let (_, mut config) = setup(16);
        config.optimize = OptimizeFlags {
            radii: false,
            features: false,
            positions: false,
        };
        assert!(fit(&cloud, &config).is_err());
        let (_, mut config) = setup(16);
        config.stereo_pair = Some((0, 0));
        assert!(fit(&cloud, &config).is_err());
    }
}
