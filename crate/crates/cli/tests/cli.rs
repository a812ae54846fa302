use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use fbsdiff_core::bridge::{serve_echo, BRIDGE_ADDR_ENV};
use fbsdiff_core::pipeline::gaussian_noise;
use fbsdiff_core::{idct2d, save_tensor, LatentFeature, Schedule, Shape, Spectrum};
use serde_json::Value;
use tempfile::TempDir;

fn fbsdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbsdiff"))
        .args(args)
        .env_remove(BRIDGE_ADDR_ENV)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_source(dir: &Path, shape: Shape, seed: u64) -> PathBuf {
    let path = dir.join(format!("source-{seed}.fbt"));
    save_tensor(&gaussian_noise(shape, seed), &path).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_fbsdiffpp_run_makes_150_calls() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(2, 8, 8).unwrap(), 1);
    let out = tmp.path().join("out");
    let res = fbsdiff(&[
        "run", "--input", s(&input), "--out-dir", s(&out), "--variant", "fbsdiffpp", "--mode", "low",
        "--pt-lp", "60", "--steps", "50", "--lambda", "0.5", "--omega", "7.5", "--denoiser", "analytic",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["calls"]["total"], 150);
    assert_eq!(m["calls"]["null_text"], 100);
    assert_eq!(m["calls"]["target_text"], 50);
    assert_eq!(m["expected_calls"], m["calls"]);
    assert_eq!(m["pipeline"], "fbsdiffpp");
    assert_eq!(m["switch_step"], 25);
    assert_eq!(m["settings"]["pt_lp"], 60.0);
    assert_eq!(m["settings"]["seed"], 0);
    assert_eq!(m["trace"].as_array().unwrap().len(), 50);
    assert!(out.join("output.fbt").exists());
}

#[test]
fn fbsdiff_run_counts_inversion_calls() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 8, 8).unwrap(), 2);
    let out = tmp.path().join("out");
    let res = fbsdiff(&[
        "run", "--input", s(&input), "--out-dir", s(&out), "--variant", "fbsdiff", "--mode", "mid",
        "--steps", "10", "--inversion-steps", "40",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["calls"]["total"], 70);
    assert_eq!(m["settings"]["th_mp"], serde_json::json!([5.0, 80.0]));
}

#[test]
fn missing_input_exits_2_without_output() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let res = fbsdiff(&["run", "--input", s(&tmp.path().join("absent.fbt")), "--out-dir", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(!out.exists());
}

#[test]
fn corrupt_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("bad.fbt");
    fs::write(&input, b"not a tensor").unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&fbsdiff(&["run", "--input", s(&input), "--out-dir", s(&out)])), 2);
    assert!(!out.exists());
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(2, 10, 12).unwrap(), 3);
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let res = fbsdiff(&["run", "--input", s(&input), "--out-dir", s(&out), "--seed", seed, "--steps", "20"]);
        assert_eq!(code(&res), 0);
        fs::read(out.join("output.fbt")).unwrap()
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn replay_reproduces_the_output() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 12, 12).unwrap(), 4);
    let first = tmp.path().join("first");
    let res = fbsdiff(&[
        "run", "--input", s(&input), "--out-dir", s(&first), "--mode", "high", "--pt-hp", "12",
        "--seed", "5", "--steps", "16", "--lambda", "0.25", "--substitution", "once",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let second = tmp.path().join("second");
    let res = fbsdiff(&["run", "--replay", s(&first.join("manifest.json")), "--out-dir", s(&second)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read(first.join("output.fbt")).unwrap(), fs::read(second.join("output.fbt")).unwrap());
    let (a, b) = (manifest(&first), manifest(&second));
    assert_eq!(a["settings"], b["settings"]);
    assert_eq!(a["trace"], b["trace"]);
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 8, 8).unwrap(), 5);
    let config = tmp.path().join("run.toml");
    fs::write(&config, "steps = 12\nomega = 3.0\nmode = \"mid\"\npt_mp = [10.0, 40.0]\n").unwrap();
    let out = tmp.path().join("out");
    let res = fbsdiff(&["run", "--input", s(&input), "--out-dir", s(&out), "--config", s(&config), "--steps", "8"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["settings"]["steps"], 8);
    assert_eq!(m["settings"]["omega"], 3.0);
    assert_eq!(m["settings"]["mode"], "mid");
    assert_eq!(m["settings"]["pt_mp"], serde_json::json!([10.0, 40.0]));
    assert_eq!(m["calls"]["total"], 24);
}

#[test]
fn config_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 8, 8).unwrap(), 6);
    let out = tmp.path().join("out");
    let bad_toml = tmp.path().join("bad.toml");
    fs::write(&bad_toml, "stepz = 3\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--input", s(&input), "--out-dir", s(&out), "--lambda", "1.5"],
        vec!["run", "--input", s(&input), "--out-dir", s(&out), "--variant", "nope"],
        vec!["run", "--input", s(&input), "--out-dir", s(&out), "--pt-mp", "60,10", "--mode", "mid"],
        vec!["run", "--input", s(&input), "--out-dir", s(&out), "--config", s(&bad_toml)],
        vec!["run", "--out-dir", s(&out)],
        vec!["run", "--input", s(&input), "--out-dir", s(&out), "--denoiser", "bridge"],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(code(&fbsdiff(&args)), 1, "{args:?}");
    }
    assert!(!out.exists());
    assert_eq!(code(&fbsdiff(&["--help"])), 0);
}

#[test]
fn unreachable_bridge_exits_3() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 8, 8).unwrap(), 7);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = tmp.path().join("out");
    let res = Command::new(env!("CARGO_BIN_EXE_fbsdiff"))
        .args(["run", "--input", s(&input), "--out-dir", s(&out), "--denoiser", "bridge", "--retries", "1"])
        .env(BRIDGE_ADDR_ENV, format!("127.0.0.1:{port}"))
        .output()
        .unwrap();
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

#[test]
fn bridge_run_over_tcp() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 8, 8).unwrap(), 8);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let table = Schedule::default_with_steps(10).unwrap().alpha_bar_table().to_vec();
        serve_echo(stream, &table)
    });
    let out = tmp.path().join("out");
    let res = Command::new(env!("CARGO_BIN_EXE_fbsdiff"))
        .args(["run", "--input", s(&input), "--out-dir", s(&out), "--denoiser", "bridge", "--steps", "10"])
        .env(BRIDGE_ADDR_ENV, format!("tcp:{addr}"))
        .output()
        .unwrap();
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["calls"]["total"], 30);
    assert_eq!(m["settings"]["denoiser"], "bridge");
    assert_eq!(m["settings"]["n_train"], 1000);
    server.join().unwrap().unwrap();
}

#[test]
fn localized_and_style_runs() {
    let tmp = TempDir::new().unwrap();
    let shape = Shape::new(1, 8, 8).unwrap();
    let input = write_source(tmp.path(), shape, 9);
    let mask = tmp.path().join("mask.fbt");
    let m = LatentFeature::from_fn(Shape::new(1, 16, 16).unwrap(), |_, i, _| if i < 8 { 1.0 } else { 0.0 }).unwrap();
    save_tensor(&m, &mask).unwrap();
    let loc = tmp.path().join("loc");
    let res = fbsdiff(&["run", "--input", s(&input), "--out-dir", s(&loc), "--mask", s(&mask), "--steps", "10"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(manifest(&loc)["pipeline"], "localized");

    let style = tmp.path().join("style");
    let res = fbsdiff(&["run", "--input", s(&input), "--out-dir", s(&style), "--stp-seed", "3", "--steps", "10"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&style);
    assert_eq!(m["pipeline"], "style-specific");
    assert!(m["stp_params"].is_object());
    assert_eq!(m["settings"]["stp_kernel"], "bilinear");

    let res = fbsdiff(&["run", "--input", s(&input), "--out-dir", s(&style), "--stp-seed", "3", "--mode", "high"]);
    assert_eq!(code(&res), 1);
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("threshold,low_corr,high_corr"));
    lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn low_sweep_correlation_is_nondecreasing() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 64, 64).unwrap(), 10);
    let csv = tmp.path().join("sweep.csv");
    let runs = tmp.path().join("runs");
    let res = fbsdiff(&[
        "sweep", "--input", s(&input), "--mode", "low", "--thresholds", "10,30,60,90", "--jobs", "4",
        "--out", s(&csv), "--runs-dir", s(&runs),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&fs::read_to_string(&csv).unwrap());
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [10.0, 30.0, 60.0, 90.0]);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]), "{rows:?}");
    for (i, row) in rows.iter().enumerate() {
        let m = manifest(&runs.join(format!("run-{i:03}")));
        assert_eq!(m["settings"]["pt_lp"], row[0]);
    }
}

#[test]
fn sweep_row_count_and_empty_list() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 16, 16).unwrap(), 11);
    let res = fbsdiff(&["sweep", "--input", s(&input), "--mode", "high", "--thresholds", "5", "--steps", "10"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(csv_rows(&String::from_utf8(res.stdout).unwrap()).len(), 1);

    assert_eq!(code(&fbsdiff(&["sweep", "--input", s(&input), "--thresholds"])), 1);
    assert_eq!(code(&fbsdiff(&["sweep", "--input", s(&input)])), 1);
    assert_eq!(code(&fbsdiff(&["sweep", "--input", s(&input), "--thresholds", "5", "--mode", "mid"])), 1);
}

#[test]
fn sweep_output_is_independent_of_jobs() {
    let tmp = TempDir::new().unwrap();
    let input = write_source(tmp.path(), Shape::new(1, 16, 16).unwrap(), 12);
    let go = |jobs: &str| {
        let res = fbsdiff(&[
            "sweep", "--input", s(&input), "--thresholds", "20,80,50", "--steps", "10", "--jobs", jobs,
        ]);
        assert_eq!(code(&res), 0);
        res.stdout
    };
    assert_eq!(go("1"), go("3"));
}

fn band_report(path: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["band-report", "--input", s(path)];
    args.extend_from_slice(extra);
    let res = fbsdiff(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    serde_json::from_slice(&res.stdout).unwrap()
}

fn fraction(v: &Value, band: &str) -> f64 {
    v["fractions"][band].as_f64().unwrap()
}

#[test]
fn band_report_fractions() {
    let tmp = TempDir::new().unwrap();
    let constant = tmp.path().join("constant.fbt");
    save_tensor(&LatentFeature::filled(Shape::new(2, 9, 7).unwrap(), 1.5), &constant).unwrap();
    let v = band_report(&constant, &[]);
    assert!((fraction(&v, "low") - 1.0).abs() < 1e-12);

    let noise = write_source(tmp.path(), Shape::new(1, 64, 64).unwrap(), 13);
    for extra in [&[][..], &["--variant", "fbsdiff"][..], &["--mode", "low"][..]] {
        let v = band_report(&noise, extra);
        let sum = fraction(&v, "low") + fraction(&v, "mid") + fraction(&v, "high");
        assert!((sum - 1.0).abs() <= 1e-10, "{extra:?}: {sum}");
    }

    // A single top-frequency DCT basis vector.
    let shape = Shape::new(1, 64, 64).unwrap();
    let spectrum = LatentFeature::from_fn(shape, |_, u, v| if u == 63 && v == 63 { 1.0 } else { 0.0 }).unwrap();
    let top = tmp.path().join("top.fbt");
    save_tensor(&idct2d(&Spectrum::from_feature(spectrum)), &top).unwrap();
    for extra in [&[][..], &["--variant", "fbsdiff"][..]] {
        let v = band_report(&top, extra);
        assert!((fraction(&v, "high") - 1.0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn band_report_missing_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&fbsdiff(&["band-report", "--input", s(&tmp.path().join("x.fbt"))])), 2);
}
