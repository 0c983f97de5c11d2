//! The CSV and JSON files the plotting scripts read: headers, ordering and
//! exact round trips on real samples.

use landscape_lab::airy_model::{sample_airy_ensemble, sample_airy_sheet, EnsembleOptions, SheetOptions};
use landscape_lab::io::{self, ensemble_csv, parse_ensemble_csv, parse_profile_csv, parse_sheet_csv, profile_csv, sheet_csv, RunManifest};
use landscape_lab::kpz_engine::{self, InitialData};
use landscape_lab::path_sampler::{sample_bm, Grid};
use landscape_lab::rng::RngStream;
use landscape_lab::stats_harness::{run_suite, Selection, TestReport};

#[test]
fn ensemble_csv_round_trips_a_sample() {
    let opts = EnsembleOptions { lines: 3, stride: 8, ..Default::default() };
    let a = sample_airy_ensemble(50, 0.5, 1e-3, &opts, &mut RngStream::new(1, 0).rng()).unwrap();
    let text = ensemble_csv(&a.ensemble);
    assert!(text.starts_with("t,line_1,line_2,line_3\n"));
    assert!(!text.contains('\r'));
    let back = parse_ensemble_csv(&text).unwrap();
    assert_eq!(back.lines, a.ensemble.lines);
    assert_eq!(ensemble_csv(&back), text);
}

#[test]
fn sheet_csv_is_long_form_x_major() {
    let opts = SheetOptions { stride: 8, ..Default::default() };
    let s = sample_airy_sheet(50, (-0.5, 0.5), (0.0, 0.5), 1e-3, &opts, &mut RngStream::new(2, 0).rng()).unwrap();
    let text = sheet_csv(&s);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "x,y,S");
    assert_eq!(rows.len(), 1 + s.nx() * s.ny());
    // Second row shares x with the first and advances y.
    let r1: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    let r2: Vec<f64> = rows[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(r1[0], r2[0]);
    assert!(r2[1] > r1[1]);
    let back = parse_sheet_csv(&text).unwrap();
    assert_eq!(back.values, s.values);
    assert_eq!(sheet_csv(&back), text);
}

#[test]
fn profile_csv_round_trips_and_checks_its_header() {
    let g = Grid::new(-1.0, 0.01, 201).unwrap();
    let h = sample_bm(g, 2.0, 0.3, &mut RngStream::new(3, 0).rng()).unwrap();
    let text = profile_csv(&h, "y", "h");
    assert!(text.starts_with("y,h\n"));
    assert_eq!(parse_profile_csv(&text, "y", "h").unwrap(), h);
    assert!(parse_profile_csv(&text.replacen("y,h", "x,h", 1), "y", "h").is_err());
}

#[test]
fn malformed_tables_are_rejected() {
    assert!(parse_ensemble_csv("").is_err());
    assert!(parse_ensemble_csv("t,line_2\n0,1\n1,2\n").is_err());
    assert!(parse_ensemble_csv("t,line_1\n0,1\n1\n").is_err());
    assert!(parse_ensemble_csv("t,line_1\n0,1\n1,nan-ish\n").is_err());
    // Uneven grid column.
    assert!(parse_profile_csv("y,h\n0,1\n0.1,1\n0.3,1\n", "y", "h").is_err());
    // Rows out of x-major order.
    assert!(parse_sheet_csv("x,y,S\n0,0,1\n1,0,1\n0,1,1\n1,1,1\n").is_err());
    assert!(parse_sheet_csv("x,y,S\n0,0,1\n0,1,1\n1,0,1\n").is_err());
}

#[test]
fn initial_data_json_variants_parse() {
    let specs = [
        r#"{"type":"narrow_wedges","points":[{"x":0,"h":0}]}"#,
        r#"{"type":"flat","level":0,"support":[0,1]}"#,
        r#"{"type":"sampled","grid":{"x0":0,"dx":0.5,"n":3},"values":[0,1,0],"mask":[true,true,true]}"#,
        r#"{"type":"parametric","name":"tent","params":{"height":1,"slope":2,"center":0},"growth_bound":{"a":1,"b":0,"c":0}}"#,
    ];
    for s in specs {
        let h0 = InitialData::from_json(s).unwrap_or_else(|e| panic!("{s}: {e}"));
        assert_eq!(InitialData::from_json(&h0.to_json()).unwrap(), h0);
    }
    assert!(InitialData::from_json(r#"{"type":"sampled","grid":{"x0":0,"dx":0.5,"n":3},"values":[0,1],"mask":[true,true]}"#).is_err());
    assert!(InitialData::from_json(r#"{"type":"spiky"}"#).is_err());
    let flat = InitialData::from_json(specs[1]).unwrap();
    assert_eq!(kpz_engine::make_initial(flat.clone()).unwrap(), flat);
}

#[test]
fn report_json_round_trips() {
    let reports = run_suite(&landscape_lab::acceptance::registry(), &Selection::Names(vec!["melon_lpp_identity".into()]), 42);
    let text = serde_json::to_string_pretty(&reports).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let first = &v[0];
    for key in ["name", "tags", "statistic", "threshold", "pass", "checks", "sample_sizes", "seed", "notes", "runtime_s"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let back: Vec<TestReport> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, reports);
}

#[test]
fn manifest_round_trips_next_to_its_output() {
    let dir = std::env::temp_dir().join(format!("landscape-lab-artifacts-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("h.csv");
    let m = RunManifest {
        command_line: vec!["landscape-lab".into(), "kpz".into(), "evolve".into()],
        config_hash: io::config_hash(&serde_json::json!({"t": 1.0})).unwrap(),
        global_seed: 7,
        artifact_version: io::ARTIFACT_VERSION.into(),
        start_time: 1.0,
        end_time: 2.5,
        outputs: vec![out.clone()],
    };
    let path = RunManifest::path_for(&out);
    assert_eq!(path.file_name().unwrap(), "h.csv.manifest.json");
    m.write(&path).unwrap();
    assert_eq!(RunManifest::read(&path).unwrap(), m);
    assert!(std::fs::read_to_string(&path).unwrap().ends_with("}\n"));
}
