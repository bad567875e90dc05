//! `svs bench`: forward/backward rendering speed.

use std::time::Instant;

use clap::Args as ClapArgs;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use svs_core::geometry::{Camera, RigidTransform};
use svs_core::image_buf::ImageBuf;
use svs_core::rasterizer::{render, render_backward, RenderSettings};
use svs_core::sphere_cloud::{RadiusBounds, SphereCloud};

use crate::common::{parse_size, CliError, CliResult};

#[derive(ClapArgs)]
pub struct Args {
    /// Image size as WxH.
    #[arg(long, default_value = "512x512")]
    size: String,

    /// Number of spheres.
    #[arg(long, default_value_t = 100_000)]
    spheres: usize,

    /// Threads for this measurement (default: logical cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Frames to average over (after one warmup).
    #[arg(long, default_value_t = 5)]
    frames: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct BenchReport {
    width: usize,
    height: usize,
    spheres: usize,
    threads: usize,
    frames: usize,
    ms_per_frame_forward: f64,
    ms_backward: f64,
    fps: f64,
}

/// Random frustum-filling cloud used by the benchmark.
pub fn synthetic_cloud(n: usize, seed: u64) -> Result<SphereCloud, CliError> {
    if n == 0 {
        return Err(CliError::usage("--spheres must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = RadiusBounds::default();
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * 3);
    let mut params = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n);
    for i in 0..n {
        positions.push(Vector3::new(
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
            rng.random_range(1.2..3.5),
        ));
        for _ in 0..3 {
            features.push(rng.random_range(0.0..1.0));
        }
        params.push(
            bounds
                .param_from_radius(rng.random_range(0.008..0.03))
                .expect("radius within bounds"),
        );
        pixels.push((i as u32, 0));
    }
    Ok(SphereCloud::new(positions, features, 3, params, bounds, pixels).expect("non-empty"))
}

pub fn bench_camera(width: usize, height: usize) -> Camera {
    Camera::new(
        0.9 * width as f64,
        0.9 * width as f64,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
        0.1,
        10.0,
        RigidTransform::identity(),
    )
    .expect("valid camera")
}

fn measure(work: impl Fn(), frames: usize) -> f64 {
    work(); // warmup
    let start = Instant::now();
    for _ in 0..frames {
        work();
    }
    start.elapsed().as_secs_f64() * 1e3 / frames as f64
}

pub fn run(args: Args) -> CliResult {
    let (w, h) = parse_size(&args.size)?;
    if args.frames == 0 {
        return Err(CliError::usage("--frames must be at least 1"));
    }
    let cloud = synthetic_cloud(args.spheres, args.seed)?;
    let cam = bench_camera(w, h);
    let settings = RenderSettings::for_dim(3);
    let upstream = ImageBuf::filled(w, h, &[0.5, -0.25, 0.125]);

    let forward = || {
        render(&cloud, &cam, &settings).expect("render");
    };
    let backward = || {
        render_backward(&cloud, &cam, &settings, &upstream, None).expect("backward");
    };

    #[cfg(feature = "parallel")]
    let (ms_forward, ms_backward, threads) = {
        let threads = args.threads.unwrap_or_else(rayon::current_num_threads);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
        (
            pool.install(|| measure(forward, args.frames)),
            pool.install(|| measure(backward, args.frames)),
            threads,
        )
    };
    #[cfg(not(feature = "parallel"))]
    let (ms_forward, ms_backward, threads) = (
        measure(forward, args.frames),
        measure(backward, args.frames),
        1usize,
    );

    let report = BenchReport {
        width: w,
        height: h,
        spheres: args.spheres,
        threads,
        frames: args.frames,
        ms_per_frame_forward: ms_forward,
        ms_backward,
        fps: 1000.0 / ms_forward,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
