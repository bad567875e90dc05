//! CLI behavior: exit codes, schemas, and per-subcommand contracts.

use std::path::Path;
use std::process::Command;

fn svs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svs"))
}

fn make_fixture(dir: &Path) {
    let out = svs()
        .args([
            "dataset-gen",
            "--out",
            dir.to_str().unwrap(),
            "--count",
            "1",
            "--seed",
            "2",
            "--size",
            "96x96",
        ])
        .output()
        .expect("dataset-gen");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_camera_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let out = svs()
        .args([
            "render",
            "--input",
            tmp.path().join("fixture_000/input").to_str().unwrap(),
            "--camera",
            tmp.path().join("no_such_camera.json").to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no_such_camera.json"), "stderr: {stderr}");
}

#[test]
fn bad_sparsity_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let fixture = tmp.path().join("fixture_000");
    let out = svs()
        .args([
            "render",
            "--input",
            fixture.join("input").to_str().unwrap(),
            "--camera",
            fixture.join("input/camera.json").to_str().unwrap(),
            "--sparsity",
            "0.0",
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_zero_spheres_exits_2() {
    let out = svs().args(["bench", "--spheres", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identity_render_hits_40db() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let fixture = tmp.path().join("fixture_000");
    let out_dir = tmp.path().join("out");
    let out = svs()
        .args([
            "render",
            "--input",
            fixture.join("input").to_str().unwrap(),
            "--camera",
            fixture.join("input/camera.json").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--gt",
            fixture.join("input").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert!(
        metrics["psnr"].as_f64().unwrap() >= 40.0,
        "identity round-trip psnr {}",
        metrics["psnr"]
    );
    for key in ["psnr", "ssim", "coverage", "l1", "mask_bce", "consistency"] {
        assert!(metrics.get(key).is_some(), "metrics.json missing {key}");
    }
    for artifact in ["novel_view.png", "alpha.pfm", "depth.pfm", "winner.pfm", "features.pfm"] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn pipeline_without_iuv_warns_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let fixture = tmp.path().join("fixture_000");
    // strip the IUV maps to force the render-only path
    std::fs::remove_file(fixture.join("occlusion_free/iuv.png")).unwrap();
    let out = svs()
        .args([
            "pipeline",
            "--input",
            fixture.join("input").to_str().unwrap(),
            "--occlusion-free",
            fixture.join("occlusion_free").to_str().unwrap(),
            "--camera",
            fixture.join("target_00/camera.json").to_str().unwrap(),
            "--out",
            tmp.path().join("pipe").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("render-only"), "expected warning, got: {stderr}");
    assert!(tmp.path().join("pipe/novel_view.png").exists());
    assert!(!tmp.path().join("pipe/warped.png").exists());
}

#[test]
fn sweep_emits_four_ordered_rows() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let csv_path = tmp.path().join("sweep.csv");
    let out = svs()
        .args([
            "sparsity-sweep",
            "--fixture",
            tmp.path().join("fixture_000").to_str().unwrap(),
            "--out",
            csv_path.to_str().unwrap(),
            "--steps",
            "5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "header + 4 rows, got: {text}");
    assert_eq!(lines[0], "sparsity,psnr,ssim,coverage,l1");
    let fractions: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(fractions, vec![0.05, 0.10, 0.25, 1.0]);
}

#[test]
fn fit_radii_writes_trace_and_renders() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let fixture = tmp.path().join("fixture_000");
    let manifest = tmp.path().join("targets.json");
    std::fs::write(
        &manifest,
        format!("{{\"targets\": [\"{}\"]}}", fixture.join("target_00").display()),
    )
    .unwrap();
    let out_dir = tmp.path().join("fit");
    let trace = out_dir.join("trace.csv");
    std::fs::create_dir_all(&out_dir).unwrap();
    let out = svs()
        .args([
            "fit-radii",
            "--input",
            fixture.join("input").to_str().unwrap(),
            "--targets",
            manifest.to_str().unwrap(),
            "--steps",
            "6",
            "--sparsity",
            "0.2",
            "--trace",
            trace.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,total,l1,bce,cons,grad_norm,ms");
    assert_eq!(lines.len(), 7, "header + 6 steps");
    assert!(out_dir.join("radii.pfm").exists());
    assert!(out_dir.join("fitted_target_00.png").exists());
}

#[test]
fn evaluate_reports_schema() {
    let tmp = tempfile::tempdir().unwrap();
    make_fixture(tmp.path());
    let fixture = tmp.path().join("fixture_000");
    let out = svs()
        .args([
            "evaluate",
            "--pred",
            fixture.join("target_00/rgb.png").to_str().unwrap(),
            "--gt",
            fixture.join("target_00/rgb.png").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["psnr"].as_f64().unwrap(), 99.0);
    assert_eq!(json["ssim"].as_f64().unwrap(), 1.0);
    assert_eq!(json["consistency"].as_f64().unwrap(), 0.0);
}
