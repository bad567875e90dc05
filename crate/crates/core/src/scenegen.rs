//! Procedural synthetic scenes with an analytic ray tracer.
//!
//! Produces exact ground truth (RGB, dense depth, foreground masks, IUV
//! correspondences) for textured planes, spheres, and capsule body proxies,
//! plus the target-camera sampling protocol and ready-made occlusion test
//! fixtures.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvsError};
use crate::geometry::{Camera, RigidTransform};
use crate::image_buf::{ImageBuf, Mask};
use crate::parallel::map_indexed;
use crate::sphere_cloud::RgbdFrame;

/// World up direction (the world is y-down, matching the camera convention).
pub const UP: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

/// Target camera sampling volume relative to the subject: lateral offset,
/// horizontal distance in front, height above the ground plane, and the roll
/// range. The subject centroid is assumed `CENTROID_HEIGHT` above ground.
pub const LATERAL_RANGE: (f64, f64) = (-1.8, 1.8);
pub const DISTANCE_RANGE: (f64, f64) = (1.8, 2.7);
pub const HEIGHT_RANGE: (f64, f64) = (0.1, 2.7);
pub const ROLL_RANGE_DEG: (f64, f64) = (-45.0, 45.0);
pub const CENTROID_HEIGHT: f64 = 1.4;

mod pose_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct PoseRepr {
        rotation: [f64; 9],
        translation: [f64; 3],
    }

    pub fn serialize<S: Serializer>(pose: &RigidTransform, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &pose.rotation;
        PoseRepr {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
        .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<RigidTransform, D::Error> {
        let repr = PoseRepr::deserialize(de)?;
        let r = repr.rotation;
        Ok(RigidTransform::new(
            Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
            Vector3::new(repr.translation[0], repr.translation[1], repr.translation[2]),
        ))
    }
}

/// Analytic primitive shapes in their local frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rectangle in the local z = 0 plane.
    Plane { half_width: f64, half_height: f64 },
    /// Sphere at the local origin.
    Sphere { radius: f64 },
    /// Capsule along the local y axis: cylinder of `half_height` plus caps.
    Capsule { half_height: f64, radius: f64 },
}

/// Albedo as a function of the surface (U, V).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid {
        color: [f64; 3],
    },
    Checker {
        color_a: [f64; 3],
        color_b: [f64; 3],
        cells: u32,
    },
    /// Bilinear blend of four corner colors.
    CornerGradient {
        c00: [f64; 3],
        c10: [f64; 3],
        c01: [f64; 3],
        c11: [f64; 3],
    },
    /// Inline image sampled bilinearly in (U, V).
    Image {
        width: usize,
        height: usize,
        pixels: Vec<f64>,
    },
}

impl Texture {
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let u = u.clamp(0.0, 1.0);
        let v = v.clamp(0.0, 1.0);
        match self {
            Texture::Solid { color } => *color,
            Texture::Checker {
                color_a,
                color_b,
                cells,
            } => {
                let cu = (u * *cells as f64).min(*cells as f64 - 1e-9).floor() as u32;
                let cv = (v * *cells as f64).min(*cells as f64 - 1e-9).floor() as u32;
                if (cu + cv) % 2 == 0 {
                    *color_a
                } else {
                    *color_b
                }
            }
            Texture::CornerGradient { c00, c10, c01, c11 } => {
                let mut out = [0.0; 3];
                for ch in 0..3 {
                    let top = c00[ch] * (1.0 - u) + c10[ch] * u;
                    let bot = c01[ch] * (1.0 - u) + c11[ch] * u;
                    out[ch] = top * (1.0 - v) + bot * v;
                }
                out
            }
            Texture::Image {
                width,
                height,
                pixels,
            } => {
                let img = ImageBuf::from_vec(*width, *height, 3, pixels.clone());
                let mut out = [0.0; 3];
                let mut buf = [0.0; 3];
                img.sample_bilinear(
                    (u * (*width as f64 - 1.0) + 0.5).clamp(0.5, *width as f64 - 0.5),
                    (v * (*height as f64 - 1.0) + 0.5).clamp(0.5, *height as f64 - 0.5),
                    &mut buf,
                );
                out.copy_from_slice(&buf);
                out
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Local-to-world placement.
    #[serde(with = "pose_serde")]
    pub pose: RigidTransform,
    pub texture: Texture,
    /// IUV part identifier in 1..=24, unique per primitive.
    pub part_id: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(SvsError::InvalidScene {
                reason: "scene has no primitives".into(),
            });
        }
        let mut seen = [false; 25];
        for p in &self.primitives {
            if p.part_id == 0 || p.part_id > 24 {
                return Err(SvsError::InvalidScene {
                    reason: format!("part id {} outside 1..=24", p.part_id),
                });
            }
            if seen[p.part_id as usize] {
                return Err(SvsError::InvalidScene {
                    reason: format!("duplicate part id {}", p.part_id),
                });
            }
            seen[p.part_id as usize] = true;
            if !p.pose.is_rotation() {
                return Err(SvsError::InvalidScene {
                    reason: "primitive pose rotation invalid".into(),
                });
            }
        }
        Ok(())
    }
}

/// A ray-primitive intersection.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    /// Camera-space depth of the hit (ray parameter of a z-normalized ray).
    pub z: f64,
    pub part_id: u8,
    pub u: f64,
    pub v: f64,
    pub primitive: usize,
}

fn smallest_positive(a: f64, b: f64, eps: f64) -> Option<f64> {
    let lo = a.min(b);
    let hi = a.max(b);
    if lo > eps {
        Some(lo)
    } else if hi > eps {
        Some(hi)
    } else {
        None
    }
}

/// Quadratic intersection helper; returns the two roots when real.
fn solve_quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a.abs() < 1e-300 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable form
    let q = -0.5 * (b + b.signum() * sq);
    let (r0, r1) = if b == 0.0 {
        ((-0.5 * sq) / a, (0.5 * sq) / a)
    } else {
        (q / a, if q.abs() > 1e-300 { c / q } else { q / a })
    };
    Some((r0, r1))
}

impl Shape {
    /// Intersects a local-frame ray `o + s d`, returning (s, u, v).
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Plane {
                half_width,
                half_height,
            } => {
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let s = -o.z / d.z;
                if s <= EPS {
                    return None;
                }
                let p = o + d * s;
                if p.x.abs() > half_width || p.y.abs() > half_height {
                    return None;
                }
                Some((
                    s,
                    (p.x / half_width + 1.0) / 2.0,
                    (p.y / half_height + 1.0) / 2.0,
                ))
            }
            Shape::Sphere { radius } => {
                let (r0, r1) = solve_quadratic(
                    d.dot(d),
                    2.0 * o.dot(d),
                    o.dot(o) - radius * radius,
                )?;
                let s = smallest_positive(r0, r1, EPS)?;
                let p = o + d * s;
                Some((s, sphere_u(&p), (-p.y / radius).clamp(-1.0, 1.0).acos() / std::f64::consts::PI))
            }
            Shape::Capsule {
                half_height,
                radius,
            } => {
                let mut best: Option<(f64, f64, f64)> = None;
                let mut consider = |cand: Option<(f64, f64, f64)>| {
                    if let Some(c) = cand {
                        if best.is_none() || c.0 < best.unwrap().0 {
                            best = Some(c);
                        }
                    }
                };
                // cylinder side
                if let Some((r0, r1)) = solve_quadratic(
                    d.x * d.x + d.z * d.z,
                    2.0 * (o.x * d.x + o.z * d.z),
                    o.x * o.x + o.z * o.z - radius * radius,
                ) {
                    for s in [r0.min(r1), r0.max(r1)] {
                        if s > EPS {
                            let p = o + d * s;
                            if p.y.abs() <= half_height {
                                let v = 0.1 + 0.8 * (p.y + half_height) / (2.0 * half_height);
                                consider(Some((s, sphere_u(&p), v)));
                                break;
                            }
                        }
                    }
                }
                // caps: spheres at y = -hh (V in [0, 0.1]) and y = +hh ([0.9, 1])
                for (cy, top) in [(-half_height, true), (half_height, false)] {
                    let oc = Vector3::new(o.x, o.y - cy, o.z);
                    if let Some((r0, r1)) = solve_quadratic(
                        d.dot(d),
                        2.0 * oc.dot(d),
                        oc.dot(&oc) - radius * radius,
                    ) {
                        for s in [r0.min(r1), r0.max(r1)] {
                            if s > EPS {
                                let p = o + d * s;
                                let q = Vector3::new(p.x, p.y - cy, p.z);
                                let valid = if top { q.y <= 0.0 } else { q.y >= 0.0 };
                                if valid {
                                    let ang = ((if top { -q.y } else { q.y }) / radius)
                                        .clamp(-1.0, 1.0)
                                        .acos();
                                    let frac = ang / std::f64::consts::FRAC_PI_2;
                                    let v = if top {
                                        0.1 * frac
                                    } else {
                                        1.0 - 0.1 * frac
                                    };
                                    consider(Some((s, sphere_u(&p), v)));
                                    break;
                                }
                            }
                        }
                    }
                }
                best
            }
        }
    }
}

/// Azimuth about the local y axis mapped to [0, 1). The wrap seam sits on
/// the +z side, away from cameras in the canonical front-hemisphere layout.
fn sphere_u(p: &Vector3<f64>) -> f64 {
    let u = p.x.atan2(-p.z) / (2.0 * std::f64::consts::PI) + 0.5;
    u.clamp(0.0, 1.0 - 1e-12)
}

/// Casts the ray through continuous pixel coordinates and returns the nearest
/// hit, if any. Depth is exact camera-space z.
pub fn trace_ray(scene: &SceneSpec, cam: &Camera, px: f64, py: f64) -> Option<Hit> {
    // Direction with unit camera-space z: the ray parameter equals depth.
    let dir_cam = Vector3::new((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
    let rot_t = cam.pose.rotation.transpose();
    let origin_w = cam.center();
    let dir_w = rot_t * dir_cam;

    let mut best: Option<Hit> = None;
    for (idx, prim) in scene.primitives.iter().enumerate() {
        let to_local = prim.pose.inverse();
        let o = to_local.apply(&origin_w);
        let d = to_local.rotation * dir_w;
        if let Some((s, u, v)) = prim.shape.intersect(&o, &d) {
            if best.is_none() || s < best.unwrap().z {
                best = Some(Hit {
                    z: s,
                    part_id: prim.part_id,
                    u,
                    v,
                    primitive: idx,
                });
            }
        }
    }
    best
}

/// Renders the scene from `cam` with exact geometry: dense depth, RGB,
/// foreground mask, and IUV correspondences (part 0 = background).
pub fn raytrace(scene: &SceneSpec, cam: &Camera) -> Result<RgbdFrame> {
    scene.validate()?;
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    let rows = map_indexed(h, |y| {
        let mut rgb = vec![0.0; w * 3];
        let mut depth = vec![0.0; w];
        let mut iuv = vec![0.0; w * 3];
        let mut fg = vec![false; w];
        for x in 0..w {
            match trace_ray(scene, cam, x as f64 + 0.5, y as f64 + 0.5) {
                Some(hit) => {
                    let color = scene.primitives[hit.primitive].texture.sample(hit.u, hit.v);
                    rgb[x * 3..x * 3 + 3].copy_from_slice(&color);
                    depth[x] = hit.z;
                    iuv[x * 3] = hit.part_id as f64;
                    iuv[x * 3 + 1] = hit.u;
                    iuv[x * 3 + 2] = hit.v;
                    fg[x] = true;
                }
                None => {
                    rgb[x * 3..x * 3 + 3].copy_from_slice(&scene.background);
                }
            }
        }
        (rgb, depth, iuv, fg)
    });

    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut iuv = Vec::with_capacity(w * h * 3);
    let mut fg = Vec::with_capacity(w * h);
    for (r, d, i, f) in rows {
        rgb.extend_from_slice(&r);
        depth.extend_from_slice(&d);
        iuv.extend_from_slice(&i);
        fg.extend_from_slice(&f);
    }
    let mut frame = RgbdFrame::new(
        ImageBuf::from_vec(w, h, 3, rgb),
        ImageBuf::from_vec(w, h, 1, depth),
    )?;
    frame.iuv = Some(ImageBuf::from_vec(w, h, 3, iuv));
    frame.fg_mask = Some(Mask::from_vec(w, h, fg));
    Ok(frame)
}

/// Position parameters of a camera relative to a subject centroid.
#[derive(Debug, Clone, Copy)]
pub struct ViewpointParams {
    pub lateral: f64,
    pub distance: f64,
    pub height: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl ViewpointParams {
    pub fn within_bounds(&self) -> bool {
        let tol = 1e-9;
        self.lateral >= LATERAL_RANGE.0 - tol
            && self.lateral <= LATERAL_RANGE.1 + tol
            && self.distance >= DISTANCE_RANGE.0 - tol
            && self.distance <= DISTANCE_RANGE.1 + tol
            && self.height >= HEIGHT_RANGE.0 - tol
            && self.height <= HEIGHT_RANGE.1 + tol
            && self.pitch_deg.abs() <= 45.0 + tol
            && self.roll_deg.abs() <= 45.0 + tol
    }
}

/// Horizontal frame (front, right) of `base` as seen from the centroid.
fn sampling_frame(base: &Camera, centroid: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut front = centroid - base.center();
    front.y = 0.0;
    let front = if front.norm() < 1e-9 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        front.normalize()
    };
    let right = front.cross(&UP).normalize();
    (front, right)
}

/// Uniformly samples a target camera inside the viewpoint volume, oriented at
/// the scene centroid with a uniformly sampled roll. Deterministic in `seed`.
pub fn sample_target_camera(base: &Camera, centroid: &Vector3<f64>, seed: u64) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lateral = rng.random_range(LATERAL_RANGE.0..=LATERAL_RANGE.1);
    let distance = rng.random_range(DISTANCE_RANGE.0..=DISTANCE_RANGE.1);
    let height = rng.random_range(HEIGHT_RANGE.0..=HEIGHT_RANGE.1);
    let roll_deg = rng.random_range(ROLL_RANGE_DEG.0..=ROLL_RANGE_DEG.1);
    place_camera(base, centroid, lateral, distance, height, roll_deg)
}

/// Deterministic camera placement used by the sampler and the fixture suite.
pub fn place_camera(
    base: &Camera,
    centroid: &Vector3<f64>,
    lateral: f64,
    distance: f64,
    height: f64,
    roll_deg: f64,
) -> Camera {
    let (front, right) = sampling_frame(base, centroid);
    let eye = centroid - front * distance + right * lateral + UP * (height - CENTROID_HEIGHT);
    let mut pose = Camera::look_at_pose(&eye, centroid, &UP).expect("valid placement");
    if roll_deg != 0.0 {
        let roll = RigidTransform::new(
            RigidTransform::rotation_about(&Vector3::new(0.0, 0.0, 1.0), roll_deg.to_radians()),
            Vector3::zeros(),
        );
        pose = roll.compose(&pose);
    }
    let mut cam = base.clone();
    cam.pose = pose;
    cam
}

/// Recovers the placement parameters of `cam` relative to the sampling frame
/// of `base`, for range audits.
pub fn viewpoint_params(cam: &Camera, base: &Camera, centroid: &Vector3<f64>) -> ViewpointParams {
    let (front, right) = sampling_frame(base, centroid);
    let rel = cam.center() - centroid;
    let lateral = rel.dot(&right);
    let distance = -rel.dot(&front);
    let height = rel.dot(&UP) + CENTROID_HEIGHT;

    let fwd = cam.forward();
    let pitch = fwd.dot(&UP).asin();
    let x_axis = cam.pose.rotation.transpose() * Vector3::new(1.0, 0.0, 0.0);
    // horizon-aligned right axis for a roll-free camera with the same forward
    let r_h = fwd.cross(&UP);
    let roll = if r_h.norm() < 1e-9 {
        0.0
    } else {
        let r_h = r_h.normalize();
        let cross = r_h.cross(&x_axis);
        cross.dot(&fwd).atan2(r_h.dot(&x_axis))
    };
    ViewpointParams {
        lateral,
        distance,
        height,
        pitch_deg: -pitch.to_degrees(),
        roll_deg: roll.to_degrees(),
    }
}

/// A complete test scene: subject primitives, an occluder between the input
/// camera and the subject, plus input/target/occlusion-free cameras.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub scene: SceneSpec,
    pub input_camera: Camera,
    pub target_cameras: Vec<Camera>,
    pub occlusion_free_camera: Camera,
    pub centroid: Vector3<f64>,
    pub subject_parts: Vec<u8>,
    pub occluder_part: u8,
}

/// Intrinsics shared by all fixture cameras.
pub fn fixture_camera_base(width: usize, height: usize) -> Camera {
    let f = 1.33 * width as f64;
    Camera::new(
        f,
        f,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
        0.1,
        10.0,
        RigidTransform::identity(),
    )
    .expect("valid base camera")
}

/// Builds `count` deterministic fixtures at the given resolution. Every scene
/// contains a capsule-plus-head subject with smooth textures and a checkered
/// occluder sphere placed on the line from the input camera to the subject.
pub fn make_fixture_suite(count: usize, seed: u64, width: usize, height: usize) -> Vec<Fixture> {
    (0..count)
        .map(|i| make_fixture(seed, i as u64, width, height))
        .collect()
}

fn make_fixture(seed: u64, index: u64, width: usize, height: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    let centroid = Vector3::new(0.0, -0.1, 0.0);
    let base = fixture_camera_base(width, height);

    fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
        [
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
        ]
    }
    let torso_tex = Texture::CornerGradient {
        c00: color(&mut rng, 0.25, 0.95),
        c10: color(&mut rng, 0.25, 0.95),
        c01: color(&mut rng, 0.25, 0.95),
        c11: color(&mut rng, 0.25, 0.95),
    };
    let head_tex = Texture::CornerGradient {
        c00: color(&mut rng, 0.3, 0.9),
        c10: color(&mut rng, 0.3, 0.9),
        c01: color(&mut rng, 0.3, 0.9),
        c11: color(&mut rng, 0.3, 0.9),
    };
    let background = [
        rng.random_range(0.02..0.12),
        rng.random_range(0.02..0.12),
        rng.random_range(0.02..0.12),
    ];

    let torso_radius = rng.random_range(0.24..0.28);
    let torso = Primitive {
        shape: Shape::Capsule {
            half_height: 0.40,
            radius: torso_radius,
        },
        pose: RigidTransform::identity(),
        texture: torso_tex,
        part_id: 1,
    };
    let head = Primitive {
        shape: Shape::Sphere {
            radius: rng.random_range(0.15..0.18),
        },
        pose: RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, -0.78, 0.0)),
        texture: head_tex,
        part_id: 2,
    };

    // Input camera: slightly low, nearly frontal.
    let input_camera = place_camera(
        &base,
        &centroid,
        rng.random_range(-0.2..0.2),
        rng.random_range(1.95..2.2),
        rng.random_range(1.05..1.25),
        0.0,
    );

    // Occluder on the line of sight from the input camera to a point on the
    // torso, at ~72% of the distance so its own depth stays moderate.
    let aim = Vector3::new(
        rng.random_range(-0.06..0.06),
        rng.random_range(-0.15..0.15),
        0.0,
    );
    let t = rng.random_range(0.70..0.74);
    let occ_center = input_camera.center() * (1.0 - t) + aim * t;
    let occluder = Primitive {
        shape: Shape::Sphere {
            radius: rng.random_range(0.09..0.12),
        },
        pose: RigidTransform::new(Matrix3::identity(), occ_center),
        texture: Texture::CornerGradient {
            c00: color(&mut rng, 0.55, 0.95),
            c10: color(&mut rng, 0.05, 0.4),
            c01: color(&mut rng, 0.05, 0.4),
            c11: color(&mut rng, 0.55, 0.95),
        },
        part_id: 20,
    };

    let scene = SceneSpec {
        primitives: vec![torso, head, occluder],
        background,
        seed: seed ^ index,
    };

    // Targets: moderate viewpoints drawn from the full sampler by rejection
    // on lateral offset and roll, so the occluded region stays visible.
    let mut target_cameras = Vec::new();
    let mut probe = 0u64;
    while target_cameras.len() < 2 && probe < 256 {
        let cand = sample_target_camera(
            &input_camera,
            &centroid,
            seed.wrapping_mul(1_000_003).wrapping_add(index * 512 + probe),
        );
        let params = viewpoint_params(&cand, &input_camera, &centroid);
        if params.lateral.abs() <= 1.1 && params.roll_deg.abs() <= 25.0 && params.height >= 0.6 {
            target_cameras.push(cand);
        }
        probe += 1;
    }

    // Far enough to the side that the occluder's image falls off the subject.
    let occlusion_free_camera = place_camera(&base, &centroid, 1.8, 1.85, 1.5, 0.0);

    Fixture {
        scene,
        input_camera,
        target_cameras,
        occlusion_free_camera,
        centroid,
        subject_parts: vec![1, 2],
        occluder_part: 20,
    }
}

impl Fixture {
    /// Scene with the occluder removed (for no-occlusion baselines).
    pub fn scene_without_occluder(&self) -> SceneSpec {
        let mut scene = self.scene.clone();
        scene
            .primitives
            .retain(|p| p.part_id != self.occluder_part);
        scene
    }

    /// Mask over `target_cam` pixels that see the subject but whose surface
    /// point is hidden by the occluder in `view_cam`.
    pub fn occluded_subject_mask(&self, view_cam: &Camera, target_cam: &Camera) -> Mask {
        let mut mask = Mask::new(target_cam.width, target_cam.height, false);
        for y in 0..target_cam.height {
            for x in 0..target_cam.width {
                let Some(hit) = trace_ray(&self.scene, target_cam, x as f64 + 0.5, y as f64 + 0.5)
                else {
                    continue;
                };
                if !self.subject_parts.contains(&hit.part_id) {
                    continue;
                }
                let dir = Vector3::new(
                    (x as f64 + 0.5 - target_cam.cx) / target_cam.fx,
                    (y as f64 + 0.5 - target_cam.cy) / target_cam.fy,
                    1.0,
                );
                let p_world =
                    target_cam.pose.inverse().apply(&(dir * hit.z));
                let p_view = view_cam.world_to_camera(&p_world);
                if p_view.z <= 0.0 {
                    continue;
                }
                let Ok((u, v, z)) = view_cam.project(&p_view) else {
                    continue;
                };
                if u < 0.0 || v < 0.0 || u >= view_cam.width as f64 || v >= view_cam.height as f64 {
                    continue;
                }
                if let Some(front) = trace_ray(&self.scene, view_cam, u, v) {
                    if front.part_id == self.occluder_part && front.z < z - 1e-6 {
                        mask.set(x, y, true);
                    }
                }
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_sphere_scene() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 1.0 },
                pose: RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 2.0)),
                texture: Texture::Solid {
                    color: [0.8, 0.2, 0.1],
                },
                part_id: 1,
            }],
            background: [0.0, 0.0, 0.0],
            seed: 0,
        }
    }

    fn front_cam(w: usize, h: usize) -> Camera {
        Camera::new(
            w as f64,
            w as f64,
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

    #[test]
    fn on_axis_depth_is_two_minus_radius() {
        let scene = single_sphere_scene();
        let cam = front_cam(64, 64);
        // the exact on-axis ray passes through the principal point
        let hit = trace_ray(&scene, &cam, cam.cx, cam.cy).unwrap();
        assert!((hit.z - 1.0).abs() < 1e-12, "on-axis depth {}", hit.z);

        let frame = raytrace(&scene, &cam).unwrap();
        let z = frame.depth.get(32, 32, 0);
        assert!((z - 1.0).abs() < 1e-3, "center pixel depth {z}");
        assert!(frame.fg_mask.as_ref().unwrap().get(32, 32));
        assert_eq!(frame.rgb.pixel(32, 32), &[0.8, 0.2, 0.1]);
    }

    #[test]
    fn empty_scene_is_rejected_and_misses_work() {
        let scene = SceneSpec {
            primitives: vec![],
            background: [0.0; 3],
            seed: 0,
        };
        assert!(raytrace(&scene, &front_cam(4, 4)).is_err());

        let scene = single_sphere_scene();
        let frame = raytrace(&scene, &front_cam(64, 64)).unwrap();
        assert_eq!(frame.depth.get(0, 0, 0), 0.0);
        assert!(!frame.fg_mask.as_ref().unwrap().get(0, 0));
        assert_eq!(frame.iuv.as_ref().unwrap().get(0, 0, 0), 0.0);
    }

    #[test]
    fn cross_view_depth_consistency() {
        let scene = single_sphere_scene();
        let cam_a = front_cam(48, 48);
        let mut cam_b = front_cam(48, 48);
        cam_b.pose = Camera::look_at_pose(
            &Vector3::new(0.8, -0.3, 0.2),
            &Vector3::new(0.0, 0.0, 2.0),
            &UP,
        )
        .unwrap();
        let frame_a = raytrace(&scene, &cam_a).unwrap();
        let mut checked = 0;
        for y in (0..48).step_by(3) {
            for x in (0..48).step_by(3) {
                let z = frame_a.depth.get(x, y, 0);
                if z <= 0.0 {
                    continue;
                }
                let p_world = cam_a
                    .pose
                    .inverse()
                    .apply(&cam_a.unproject_pixel(x as f64 + 0.5, y as f64 + 0.5, z).unwrap());
                let p_b = cam_b.world_to_camera(&p_world);
                if p_b.z <= 0.0 {
                    continue;
                }
                let (u, v, zb) = cam_b.project(&p_b).unwrap();
                if u < 0.0 || v < 0.0 || u >= 48.0 || v >= 48.0 {
                    continue;
                }
                if let Some(hit) = trace_ray(&scene, &cam_b, u, v) {
                    // mutually visible when camera B's first hit is the point
                    if (hit.z - zb).abs() < 1e-3 {
                        assert!((hit.z - zb).abs() < 1e-6, "depth err {}", (hit.z - zb).abs());
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 30, "only {checked} mutually visible samples");
    }

    #[test]
    fn iuv_values_are_bijective_per_part() {
        let fixture = &make_fixture_suite(1, 7, 96, 96)[0];
        let frame = raytrace(&fixture.scene, &fixture.input_camera).unwrap();
        let iuv = frame.iuv.as_ref().unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut dups = 0usize;
        let mut total = 0usize;
        for y in 0..96 {
            for x in 0..96 {
                let p = iuv.pixel(x, y);
                if p[0] == 0.0 {
                    continue;
                }
                total += 1;
                let key = (
                    p[0] as u32,
                    (p[1] * 65535.0).round() as u32,
                    (p[2] * 65535.0).round() as u32,
                );
                if !seen.insert(key) {
                    dups += 1;
                }
            }
        }
        assert!(total > 500);
        assert!(
            (dups as f64) < 0.005 * total as f64,
            "{dups} duplicate IUV keys of {total}"
        );
    }

    #[test]
    fn sampled_cameras_are_deterministic_and_in_range() {
        let base = fixture_camera_base(64, 64);
        let centroid = Vector3::new(0.0, -0.1, 0.0);
        let a = sample_target_camera(&base, &centroid, 123);
        let b = sample_target_camera(&base, &centroid, 123);
        assert_eq!(a.pose.rotation, b.pose.rotation);
        assert_eq!(a.pose.translation, b.pose.translation);

        for seed in 0..10_000 {
            let cam = sample_target_camera(&base, &centroid, seed);
            let params = viewpoint_params(&cam, &base, &centroid);
            assert!(
                params.within_bounds(),
                "seed {seed} out of bounds: {params:?}"
            );
        }
    }

    #[test]
    fn base_camera_is_inside_sampling_volume() {
        let fixture = &make_fixture_suite(1, 3, 64, 64)[0];
        let params = viewpoint_params(
            &fixture.input_camera,
            &fixture.input_camera,
            &fixture.centroid,
        );
        assert!(params.within_bounds(), "{params:?}");
    }

    #[test]
    fn fixture_suite_is_deterministic_and_occluders_block() {
        let a = make_fixture_suite(3, 11, 96, 96);
        let b = make_fixture_suite(3, 11, 96, 96);
        assert_eq!(a.len(), 3);
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(
                serde_json::to_string(&fa.scene).unwrap(),
                serde_json::to_string(&fb.scene).unwrap()
            );
            assert_eq!(fa.target_cameras.len(), 2);
        }
        assert!(make_fixture_suite(0, 11, 64, 64).is_empty());

        for fixture in &a {
            // subject pixels visible without the occluder
            let clean = raytrace(&fixture.scene_without_occluder(), &fixture.input_camera).unwrap();
            let with = raytrace(&fixture.scene, &fixture.input_camera).unwrap();
            let mut subject = 0usize;
            let mut blocked = 0usize;
            let iuv_clean = clean.iuv.as_ref().unwrap();
            let iuv_with = with.iuv.as_ref().unwrap();
            for i in 0..96 * 96 {
                let part_clean = iuv_clean.data()[i * 3] as u8;
                if fixture.subject_parts.contains(&part_clean) {
                    subject += 1;
                    if iuv_with.data()[i * 3] as u8 == fixture.occluder_part {
                        blocked += 1;
                    }
                }
            }
            let frac = blocked as f64 / subject as f64;
            assert!(
                frac >= 0.05,
                "occluder blocks only {:.1}% of subject",
                frac * 100.0
            );

            // and never blocks the subject in the occlusion-free view
            let of_clean = raytrace(
                &fixture.scene_without_occluder(),
                &fixture.occlusion_free_camera,
            )
            .unwrap();
            let of_with = raytrace(&fixture.scene, &fixture.occlusion_free_camera).unwrap();
            let iuv_a = of_clean.iuv.as_ref().unwrap();
            let iuv_b = of_with.iuv.as_ref().unwrap();
            for i in 0..96 * 96 {
                let part_clean = iuv_a.data()[i * 3] as u8;
                if fixture.subject_parts.contains(&part_clean) {
                    assert_eq!(
                        iuv_b.data()[i * 3], iuv_a.data()[i * 3],
                        "occluder visible in occlusion-free view"
                    );
                }
            }
        }
    }

    #[test]
    fn scene_spec_json_roundtrip() {
        let fixture = &make_fixture_suite(1, 5, 64, 64)[0];
        let json = serde_json::to_string_pretty(&fixture.scene).unwrap();
        let parsed: SceneSpec = serde_json::from_str(&json).unwrap();
        parsed.validate().unwrap();
        assert_eq!(parsed.primitives.len(), fixture.scene.primitives.len());
        let f1 = raytrace(&fixture.scene, &fixture.input_camera).unwrap();
        let f2 = raytrace(&parsed, &fixture.input_camera).unwrap();
        assert_eq!(f1.rgb, f2.rgb);
        assert_eq!(f1.depth, f2.depth);
    }

    #[test]
    fn duplicate_part_ids_rejected() {
        let mut scene = single_sphere_scene();
        scene.primitives.push(scene.primitives[0].clone());
        assert!(scene.validate().is_err());
    }
}
