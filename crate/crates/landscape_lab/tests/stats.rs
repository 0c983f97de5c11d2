use landscape_lab::acceptance::registry;
use landscape_lab::rng::RngStream;
use landscape_lab::stats_harness::{
    gue_lmax, ks_two_sample, run_suite, wilson_ci, Check, Comparison, Registry, Sample, Selection, TestReport,
};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest eigenvalue of a dense 2x2 GUE matrix, straight from the quadratic.
fn dense_2x2_lmax(rng: &mut impl Rng) -> f64 {
    let a: f64 = rng.sample(StandardNormal);
    let d: f64 = rng.sample(StandardNormal);
    let re: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
    let im: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
    0.5 * (a + d) + (0.25 * (a - d).powi(2) + re * re + im * im).sqrt()
}

#[test]
fn tridiagonal_gue_matches_dense_at_n2() {
    let fast = gue_lmax(2, 20_000, RngStream::new(3, 1)).unwrap();
    let stream = RngStream::new(3, 2);
    let dense: Vec<f64> = (0..20_000).map(|i| dense_2x2_lmax(&mut stream.trial(i))).collect();
    let (d, p) = ks_two_sample(&fast, &Sample::new("dense", dense).unwrap()).unwrap();
    assert!(p > 0.01, "KS {d}, p {p}");
}

#[test]
fn ks_rejects_at_its_nominal_rate() {
    // Two halves of one normal stream; at level 0.05 the rejection rate
    // over many repetitions must sit near 5%.
    let reps = 200;
    let stream = RngStream::new(11, 0);
    let rejections = (0..reps)
        .filter(|&i| {
            let mut rng = stream.trial(i);
            let xs: Vec<f64> = (0..400).map(|_| rng.sample(StandardNormal)).collect();
            let a = Sample::new("a", xs[..200].to_vec()).unwrap();
            let b = Sample::new("b", xs[200..].to_vec()).unwrap();
            ks_two_sample(&a, &b).unwrap().1 < 0.05
        })
        .count();
    let (lo, hi) = wilson_ci(rejections, reps as usize, 0.99).unwrap();
    // The asymptotic p-value is conservative at this size, so the rate
    // may fall below 5% but never far above it.
    assert!(lo <= 0.05 && hi >= 0.01, "{rejections} of {reps}, CI ({lo}, {hi})");
}

#[test]
fn wilson_interval_examples() {
    let (lo, hi) = wilson_ci(0, 100, 0.95).unwrap();
    assert_eq!(lo, 0.0);
    assert!((hi - 0.037).abs() < 1e-3);
    let (lo, hi) = wilson_ci(100, 100, 0.95).unwrap();
    assert!((lo - 0.963).abs() < 1e-3);
    assert!(hi > 1.0 - 1e-12);
    assert!(wilson_ci(1, 0, 0.95).is_err());
    assert!(wilson_ci(5, 3, 0.95).is_err());
}

fn coin(stream: RngStream) -> landscape_lab::Result<TestReport> {
    let mut rng = stream.rng();
    let heads = (0..1000).filter(|_| rng.random::<bool>()).count();
    Ok(TestReport::from_checks(vec![Check::new("heads", heads as f64, Comparison::Above, 400.0)], vec![1000], vec![]))
}

fn always_fails(_: RngStream) -> landscape_lab::Result<TestReport> {
    Err(landscape_lab::LabError::InvalidParameter("no".into()))
}

fn toy() -> Registry {
    let mut r = Registry::default();
    r.register("coin", &["cheap"], coin);
    r.register("broken", &["cheap", "bad"], always_fails);
    r
}

#[test]
fn same_seed_gives_identical_reports() {
    let a = run_suite(&toy(), &Selection::All, 7);
    let b = run_suite(&toy(), &Selection::All, 7);
    assert_eq!(a, b);
    let c = run_suite(&toy(), &Selection::All, 8);
    assert_ne!(a[0].statistic, c[0].statistic);

    let sel = Selection::Names(vec!["melon_lpp_identity".into()]);
    assert_eq!(run_suite(&registry(), &sel, 42), run_suite(&registry(), &sel, 42));
}

#[test]
fn errors_become_failing_reports() {
    let r = run_suite(&toy(), &Selection::Tags(vec!["bad".into()]), 1);
    assert_eq!(r.len(), 1);
    assert!(!r[0].pass);
    assert!(r[0].notes[0].starts_with("error:"));
    assert!(r[0].summary_line().starts_with("FAIL broken"));
}

#[test]
fn selection_by_tag_and_name() {
    let reg = registry();
    assert_eq!(reg.tests.len(), 14);
    let quad: Vec<&str> = reg.select(&Selection::Tags(vec!["quadrangle".into()])).iter().map(|t| t.name).collect();
    assert_eq!(quad, ["quadrangle_inequality", "quadrangle_equality", "additive_comparison"]);
    assert!(reg.select(&Selection::Tags(vec![])).is_empty());
    assert!(reg.select(&Selection::Names(vec!["nope".into()])).is_empty());
    assert!(run_suite(&reg, &Selection::Names(vec![]), 42).is_empty());
}
