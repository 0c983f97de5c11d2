use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use landscape_lab::airy_model::{DrivingPaths, Estimator, Prelimit};
use landscape_lab::io::{parse_profile_csv, parse_sheet_csv, RunManifest};
use landscape_lab::kpz_engine::{evolve_direct, make_initial, EvolveOptions, InitialData, WedgePoint};
use landscape_lab::rng::{label_id, RngStream};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("landscape-lab-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landscape-lab")).args(args).env_remove("LANDSCAPE_LAB_SEED").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SHEET: &[&str] = &["sim", "airy-sheet", "--n", "50", "--dt", "1e-3", "--x-window", "-0.5,0.5", "--y-window", "-0.5,0.5", "--stride", "8"];

#[test]
fn sheet_run_writes_csv_and_manifest_reproducibly() {
    let dir = scratch("sheet");
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    for out in [&a, &b] {
        let args: Vec<&str> = SHEET.iter().copied().chain(["--seed", "7", "--out", s(out)]).collect();
        let o = lab(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let sheet = parse_sheet_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert!(sheet.nx() > 2 && sheet.ny() > 2);

    let m = RunManifest::read(&RunManifest::path_for(&a)).unwrap();
    assert_eq!(m.global_seed, 7);
    assert_eq!(m.outputs, vec![a.clone()]);
    assert!(m.end_time >= m.start_time);
    assert_eq!(m.config_hash.len(), 64);

    // Re-running the manifest's command line reproduces the output.
    let c = dir.join("c.csv");
    let mut argv: Vec<String> = m.command_line[1..].to_vec();
    *argv.last_mut().unwrap() = s(&c).to_string();
    let o = lab(&argv.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success());
    assert_eq!(std::fs::read(&c).unwrap(), bytes);

    // Seed from the environment when the flag is absent.
    let d = dir.join("d.csv");
    let args: Vec<&str> = SHEET.iter().copied().chain(["--out", s(&d)]).collect();
    let o = Command::new(env!("CARGO_BIN_EXE_landscape-lab")).args(&args).env("LANDSCAPE_LAB_SEED", "7").output().unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&d).unwrap(), bytes);
}

#[test]
fn exit_codes() {
    assert_eq!(lab(&["sim", "airy-sheet"]).status.code(), Some(2));
    assert_eq!(lab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lab(&["sim", "melon", "--n", "3", "--out", "x.csv", "-n", "4"]).status.code(), Some(2));

    let dir = scratch("codes");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"type":"narrow_wedges","points":[]}"#).unwrap();
    let o = lab(&["kpz", "evolve", "--init", s(&bad), "--out", s(&dir.join("h.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(lab(&["test", "list", "--suite", "nope"]).status.code(), Some(1));

    let report = dir.join("report.json");
    let o = lab(&["test", "run", "--select", "melon_lpp_identity,metric_composition", "--seed", "42", "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(RunManifest::path_for(&report).exists());

    let list = String::from_utf8(lab(&["test", "list"]).stdout).unwrap();
    assert_eq!(list.lines().count(), 14);
}

#[test]
fn two_wedge_profile_is_the_max_of_sheet_slices() {
    let dir = scratch("wedges");
    let init = dir.join("wedges.json");
    std::fs::write(&init, r#"{"type":"narrow_wedges","points":[{"x":0,"h":0},{"x":1,"h":0}]}"#).unwrap();
    let out = dir.join("h.csv");
    let (n, dt) = (50, 1e-3);
    let o = lab(&["kpz", "evolve", "--init", s(&init), "--t", "1", "--y-window", "0,1", "--n", "50", "--dt", "1e-3", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h = parse_profile_csv(&std::fs::read_to_string(&out).unwrap(), "y", "h").unwrap();

    // Same driving paths as the binary: seed 7, stream "kpz-evolve", raw span
    // from 0 to the right end of the window or of the support.
    let p = Prelimit::new(n);
    let hi = p.raw_end(1.0).max(p.raw_start(1.0));
    let d = DrivingPaths::sample(n, 0.0, hi + 8.0 * dt, dt, &mut RngStream::new(7, label_id("kpz-evolve")).rng()).unwrap();
    let slice = |x: f64| {
        let w = make_initial(InitialData::NarrowWedges { points: vec![WedgePoint { x, h: 0.0 }] }).unwrap();
        evolve_direct(&w, &d, (0.0, 1.0), 1.0, 4, Estimator::Grid, &EvolveOptions::default()).unwrap()
    };
    let (s0, s1) = (slice(0.0), slice(1.0));
    assert_eq!(h.grid.n_points, s0.values.len());
    for i in 0..h.values.len() {
        assert_eq!(h.values[i], s0.values[i].max(s1.values[i]), "y = {}", h.grid.time(i));
    }
}
