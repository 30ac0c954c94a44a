//! End-to-end tests of the `misar` binary: format contracts, exit codes,
//! determinism, and the scan -> calibrate -> simulate -> image -> metrics
//! chain.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn misar() -> Command {
    Command::new(env!("CARGO_BIN_EXE_misar"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("misar_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("test.cfg");
    let base = "experiment.seed = 11\n\
                collection.n_bursts = 2\n\
                grid.origin = -0.03 -0.03 -0.03\n\
                grid.spacing = 0.01 0.01 0.01\n\
                grid.dims = 7 7 7\n\
                imaging.upsample = 4\n";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn simulate_writes_valid_cube_header() {
    let dir = work_dir("simulate");
    let cfg = write_config(&dir, "");
    let out = dir.join("run");
    run_ok(misar().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let bytes = std::fs::read(out.join("cube.bin")).unwrap();
    assert_eq!(&bytes[0..4], b"MISR");
    assert_eq!(bytes[4], 0x01);
    // Header is fixed at 128 bytes; payload is 8 bytes per sample.
    assert_eq!(bytes.len(), 128 + 2 * 128 * 201 * 8);
}

#[test]
fn image_deterministic_reruns_are_identical() {
    let dir = work_dir("deterministic");
    let cfg = write_config(&dir, "");
    let out = dir.join("run");
    run_ok(misar().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(
        misar()
            .args(["image", "--deterministic", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out),
    );
    let first = std::fs::read(out.join("image.bin")).unwrap();
    run_ok(
        misar()
            .args(["image", "--deterministic", "--workers", "2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out),
    );
    let second = std::fs::read(out.join("image.bin")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn corrupt_version_and_truncation_exit_4() {
    let dir = work_dir("corrupt");
    let cfg = write_config(&dir, "");
    let out = dir.join("run");
    run_ok(misar().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let cube = out.join("cube.bin");
    let mut bytes = std::fs::read(&cube).unwrap();

    // Unsupported version byte.
    bytes[4] = 0x02;
    std::fs::write(&cube, &bytes).unwrap();
    let status = misar()
        .args(["image", "--config"])
        .arg(&cfg)
        .arg("--cube")
        .arg(&cube)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&status.stderr).contains("version"));

    // Truncated payload.
    bytes[4] = 0x01;
    bytes.truncate(bytes.len() - 9);
    std::fs::write(&cube, &bytes).unwrap();
    let status = misar()
        .args(["image", "--config"])
        .arg(&cfg)
        .arg("--cube")
        .arg(&cube)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
}

#[test]
fn usage_and_config_error_codes() {
    let status = misar().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    let dir = work_dir("badcfg");
    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "this is not a key value line\n").unwrap();
    let status = misar()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("x"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn full_chain_scan_calibrate_image_metrics() {
    let dir = work_dir("chain");
    let cfg = write_config(&dir, "errors.enabled = true\n");
    let out = dir.join("run");
    run_ok(misar().args(["scan", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(misar().args(["calibrate", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(misar().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(
        misar()
            .args(["image", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .arg("--calib")
            .arg(out.join("calib.txt")),
    );
    let metrics = run_ok(
        misar()
            .args(["metrics", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .arg("--image")
            .arg(out.join("image.bin")),
    );
    let text = String::from_utf8_lossy(&metrics.stdout);
    assert!(text.contains("psl_db"), "metrics output: {text}");
    // Calibrated point target refocuses at the origin within half a voxel.
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let peak_x: f64 = report
        .lines()
        .find(|l| l.starts_with("peak_x_m:"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(peak_x.abs() < 0.005, "peak_x {peak_x}");
}

#[test]
fn bench_emits_throughput_csv() {
    let dir = work_dir("bench");
    let cfg = write_config(&dir, "collection.n_bursts = 1\n");
    let out = dir.join("bench");
    run_ok(
        misar()
            .args(["bench", "--workers", "1,2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out),
    );
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("workers,seconds,voxel_channels_per_second"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for (row, workers) in rows.iter().zip(["1", "2"]) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], workers);
        assert!(fields[1].parse::<f64>().unwrap() > 0.0);
        assert!(fields[2].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn pipeline_produces_artifact_directory() {
    let dir = work_dir("pipeline");
    let cfg = write_config(&dir, "errors.enabled = true\n");
    let out = dir.join("exp");
    run_ok(misar().args(["pipeline", "--config"]).arg(&cfg).arg("--out").arg(&out));
    for name in [
        "geometry.txt",
        "truth_errors.txt",
        "observations.csv",
        "calib.txt",
        "scene.csv",
        "cube.bin",
        "track.csv",
        "image.bin",
        "image.txt",
        "report.txt",
        "report.csv",
        "timing.txt",
    ] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
    assert!(out.join("slices").join("slices.txt").exists());
}
