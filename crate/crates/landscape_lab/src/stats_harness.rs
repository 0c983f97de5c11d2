//! Samples, Kolmogorov-Smirnov tests, Wilson intervals, the tridiagonal GUE
//! edge oracle and a seeded test registry.

use std::time::Instant;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{LabError, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub values: Vec<f64>,
    pub label: String,
    pub seed: Option<RngStream>,
}

impl Sample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter(format!("sample `{label}` has non-finite entries")));
        }
        Ok(Self { values, label, seed: None })
    }

    pub fn with_seed(mut self, seed: RngStream) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (self.values.len() as f64 - 1.0)
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let s = self.sorted();
        let i = ((s.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
        s[i]
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

fn nonempty(s: &Sample) -> Result<()> {
    if s.is_empty() {
        return Err(LabError::EmptySample(s.label.clone()));
    }
    Ok(())
}

/// Two-sample statistic `sup |F_a - F_b|` and its asymptotic p-value.
pub fn ks_two_sample(a: &Sample, b: &Sample) -> Result<(f64, f64)> {
    nonempty(a)?;
    nonempty(b)?;
    let (x, y) = (a.sorted(), b.sorted());
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok((d, ks_p(d, n * m / (n + m))))
}

/// One-sample statistic against a continuous CDF.
pub fn ks_one_sample(a: &Sample, cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    nonempty(a)?;
    let x = a.sorted();
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok((d, ks_p(d, n)))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(LabError::EmptySample("no trials".into()));
    }
    if successes > trials || !(level > 0.0 && level < 1.0) {
        return Err(LabError::InvalidParameter(format!("{successes} of {trials} at level {level}")));
    }
    let z = std::f64::consts::SQRT_2 * erfc_inv(1.0 - level);
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal matrix.
fn sturm_count(diag: &[f64], off2: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        q = diag[i] - x - if i == 0 { 0.0 } else { off2[i - 1] / q };
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by bisection.
pub fn tridiagonal_lmax(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    let off2: Vec<f64> = off.iter().map(|b| b * b).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, &off2, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One draw of the largest GUE eigenvalue, normalised so that diagonal
/// entries are standard normal and `E|H_ij|^2 = 1`; then
/// `lmax ~ 2 sqrt n + n^{-1/6} TW`.
pub fn gue_lmax_draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> f64 {
    let diag: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let off: Vec<f64> = (1..n)
        .map(|i| {
            let chi2 = ChiSquared::new(2.0 * (n - i) as f64).expect("positive dof");
            (chi2.sample(rng) / 2.0).sqrt()
        })
        .collect();
    if n == 1 {
        return diag[0];
    }
    tridiagonal_lmax(&diag, &off)
}

pub fn gue_lmax(n: usize, trials: usize, stream: RngStream) -> Result<Sample> {
    if n < 1 {
        return Err(LabError::InvalidParameter("GUE size must be at least 1".into()));
    }
    let values = (0..trials as u64).into_par_iter().map(|i| gue_lmax_draw(n, &mut stream.trial(i))).collect();
    Ok(Sample::new(format!("gue_lmax_{n}"), values)?.with_seed(stream))
}

/// `n^{1/6} (lmax - 2 sqrt n)`.
pub fn edge_rescale(n: usize, lmax: f64) -> f64 {
    let nf = n as f64;
    nf.powf(1.0 / 6.0) * (lmax - 2.0 * nf.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    Below,
    AtMost,
    Above,
    AtLeast,
}

impl Comparison {
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Comparison::Below => statistic < threshold,
            Comparison::AtMost => statistic <= threshold,
            Comparison::Above => statistic > threshold,
            Comparison::AtLeast => statistic >= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::Below => "<",
            Comparison::AtMost => "<=",
            Comparison::Above => ">",
            Comparison::AtLeast => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub statistic: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(label: impl Into<String>, statistic: f64, comparison: Comparison, threshold: f64) -> Self {
        let pass = comparison.holds(statistic, threshold);
        Self { label: label.into(), statistic, comparison, threshold, pass }
    }

    /// A check that records a value without gating the report.
    pub fn info(label: impl Into<String>, value: f64) -> Self {
        Self { label: label.into(), statistic: value, comparison: Comparison::AtLeast, threshold: f64::NEG_INFINITY, pass: true }
    }

    pub fn describe(&self) -> String {
        if self.threshold == f64::NEG_INFINITY {
            format!("{}={:.4}", self.label, self.statistic)
        } else {
            format!("{}={:.4e} {} {}", self.label, self.statistic, self.comparison.symbol(), self.threshold)
        }
    }
}

/// Outcome of one registered test. `statistic` and `threshold` mirror the
/// first check; `pass` holds when every check passes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub tags: Vec<String>,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub sample_sizes: Vec<usize>,
    pub seed: RngStream,
    pub notes: Vec<String>,
    pub runtime_s: f64,
}

impl PartialEq for TestReport {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.tags == o.tags
            && self.statistic.to_bits() == o.statistic.to_bits()
            && self.threshold.to_bits() == o.threshold.to_bits()
            && self.pass == o.pass
            && self.checks == o.checks
            && self.sample_sizes == o.sample_sizes
            && self.seed == o.seed
            && self.notes == o.notes
    }
}

impl TestReport {
    pub fn from_checks(checks: Vec<Check>, sample_sizes: Vec<usize>, notes: Vec<String>) -> Self {
        let (statistic, threshold) = checks.first().map_or((f64::NAN, f64::NAN), |c| (c.statistic, c.threshold));
        let pass = checks.iter().all(|c| c.pass);
        Self {
            name: String::new(),
            tags: vec![],
            statistic,
            threshold,
            pass,
            checks,
            sample_sizes,
            seed: RngStream::new(0, 0),
            notes,
            runtime_s: 0.0,
        }
    }

    /// Report for a test that could not run.
    pub fn errored(err: &LabError) -> Self {
        let mut r = Self::from_checks(vec![], vec![], vec![format!("error: {err}")]);
        r.pass = false;
        r
    }

    pub fn summary_line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let detail: Vec<String> = if self.checks.is_empty() {
            self.notes.clone()
        } else {
            self.checks.iter().map(Check::describe).collect()
        };
        format!("{status} {} [{:.1}s] {}", self.name, self.runtime_s, detail.join("; "))
    }
}

pub type TestFn = fn(RngStream) -> Result<TestReport>;

#[derive(Clone)]
pub struct RegisteredTest {
    pub name: &'static str,
    pub tags: &'static [&'static str],
    pub run: TestFn,
}

#[derive(Clone, Default)]
pub struct Registry {
    pub tests: Vec<RegisteredTest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    All,
    Tags(Vec<String>),
    Names(Vec<String>),
}

impl Registry {
    pub fn register(&mut self, name: &'static str, tags: &'static [&'static str], run: TestFn) {
        self.tests.push(RegisteredTest { name, tags, run });
    }

    pub fn select(&self, sel: &Selection) -> Vec<&RegisteredTest> {
        self.tests
            .iter()
            .filter(|t| match sel {
                Selection::All => true,
                Selection::Tags(tags) => tags.iter().any(|g| t.tags.contains(&g.as_str())),
                Selection::Names(names) => names.iter().any(|n| n == t.name),
            })
            .collect()
    }
}

/// Runs the selected tests, each with the stream `seed -> name`, and
/// returns the reports in registration order.
pub fn run_suite(registry: &Registry, sel: &Selection, seed: u64) -> Vec<TestReport> {
    run_suite_with(registry, sel, seed, |_| {})
}

/// As [`run_suite`], calling `on_done` as each report completes.
pub fn run_suite_with(registry: &Registry, sel: &Selection, seed: u64, on_done: impl Fn(&TestReport) + Sync) -> Vec<TestReport> {
    let root = RngStream::new(seed, 0);
    registry
        .select(sel)
        .into_iter()
        .map(|t| {
            let stream = root.named(t.name);
            let start = Instant::now();
            let mut report = (t.run)(stream).unwrap_or_else(|e| TestReport::errored(&e));
            report.name = t.name.to_string();
            report.tags = t.tags.iter().map(|s| s.to_string()).collect();
            report.seed = stream;
            report.runtime_s = start.elapsed().as_secs_f64();
            on_done(&report);
            report
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_closed_forms() {
        let (lo, hi) = wilson_ci(0, 100, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.0370).abs() < 1e-3, "{hi}");
        let (lo, hi) = wilson_ci(50, 100, 0.95).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
        assert_eq!(wilson_ci(100, 100, 0.95).unwrap().1, 1.0);
        assert!(wilson_ci(0, 0, 0.95).is_err());
    }

    #[test]
    fn ks_identical_and_shifted() {
        let s = RngStream::new(3, 3);
        let mut r = s.rng();
        let a: Vec<f64> = (0..1000).map(|_| r.sample(StandardNormal)).collect();
        let sa = Sample::new("a", a.clone()).unwrap();
        let (d, p) = ks_two_sample(&sa, &sa).unwrap();
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let sb = Sample::new("b", a.iter().map(|v| v + 3.0).collect()).unwrap();
        assert!(ks_two_sample(&sa, &sb).unwrap().1 < 1e-6);
        assert!(ks_one_sample(&sa, std_normal_cdf).unwrap().1 > 0.001);
        assert!(matches!(ks_two_sample(&sa, &Sample::new("e", vec![]).unwrap()), Err(LabError::EmptySample(_))));
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn tridiagonal_matches_dense_2x2() {
        let (a, d, b) = (0.3, -1.2, 0.7);
        let want = (a + d) / 2.0 + (((a - d) / 2.0f64).powi(2) + b * b).sqrt();
        assert!((tridiagonal_lmax(&[a, d], &[b]) - want).abs() < 1e-12);
    }

    #[test]
    fn selection() {
        fn ok(_: RngStream) -> Result<TestReport> {
            Ok(TestReport::from_checks(vec![Check::new("x", 0.0, Comparison::AtMost, 1.0)], vec![1], vec![]))
        }
        let mut reg = Registry::default();
        reg.register("a", &["quadrangle"], ok);
        reg.register("b", &["melon"], ok);
        assert_eq!(run_suite(&reg, &Selection::Tags(vec!["quadrangle".into()]), 1).len(), 1);
        assert!(run_suite(&reg, &Selection::Names(vec![]), 1).is_empty());
        assert_eq!(run_suite(&reg, &Selection::All, 9), run_suite(&reg, &Selection::All, 9));
    }
}
