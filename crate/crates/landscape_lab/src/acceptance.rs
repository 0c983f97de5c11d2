//! The acceptance suite: one registered test per criterion. Every test is
//! a pure function of its stream, so `run_suite` reports are reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::airy_model::{
    self, airy_ensemble_from_driving, airy_top_at, sheet_column, sheet_from_driving, DrivingPaths, Estimator, Prelimit, Scaling,
    SemiInfiniteAnchor, SheetSample,
};
use crate::capacity::{self, Ambient, CapacityOptions, CompactSetSpec, EnergyKind, GridMeasure, HittingProcess, IntervalSet};
use crate::error::Result;
use crate::kpz_engine::{self, EvolveOptions, InitialData, SampledGrid};
use crate::lpp_core::{self, LineEnsembleGrid};
use crate::path_sampler::{sample_bm, Grid, GridFunction};
use crate::rng::RngStream;
use crate::stats_harness::{
    edge_rescale, gue_lmax, ks_one_sample, ks_two_sample, std_normal_cdf, wilson_ci, Check, Comparison, Registry, Sample, TestReport,
};

/// All acceptance criteria in order.
pub fn registry() -> Registry {
    let mut r = Registry::default();
    r.register("melon_lpp_identity", &["exact", "lpp"], melon_lpp_identity);
    r.register("metric_composition", &["exact", "lpp"], metric_composition);
    r.register("edge_law", &["statistical", "airy"], edge_law);
    r.register("stationarity", &["statistical", "airy"], stationarity);
    r.register("quadrangle_inequality", &["exact", "sheet", "quadrangle"], quadrangle_inequality);
    r.register("quadrangle_equality", &["statistical", "sheet", "quadrangle"], quadrangle_equality);
    r.register("record_times", &["statistical", "kpz"], record_times);
    r.register("boundary_gap", &["statistical", "airy"], boundary_gap);
    r.register("geodesic_jump_times", &["statistical", "airy"], geodesic_jump_times);
    r.register("coalescence", &["statistical", "kpz"], coalescence);
    r.register("local_brownianity", &["statistical", "kpz"], local_brownianity);
    r.register("additive_comparison", &["statistical", "sheet", "quadrangle"], additive_comparison);
    r.register("capacity_numerics", &["exact", "capacity"], capacity_numerics);
    r.register("semigroup", &["statistical", "sheet"], semigroup);
    r
}

fn trials<T: Send>(stream: &RngStream, n: usize, f: impl Fn(&mut ChaCha8Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n as u64).into_par_iter().map(|i| f(&mut stream.trial(i))).collect()
}

fn ci_checks(label: &str, hits: usize, n: usize) -> Result<(Check, Check, Check)> {
    let (lo, hi) = wilson_ci(hits, n, 0.95)?;
    Ok((
        Check::info(format!("{label}_freq"), hits as f64 / n as f64),
        Check::new(format!("{label}_ci_lo"), lo, Comparison::Above, 0.0),
        Check::new(format!("{label}_ci_hi"), hi, Comparison::Below, 1.0),
    ))
}

fn random_ensemble(rng: &mut ChaCha8Rng, lines: usize, points: usize, dt: f64) -> Result<LineEnsembleGrid> {
    let grid = Grid::new(0.0, dt, points)?;
    let fs = (0..lines)
        .map(|_| {
            let start: f64 = rng.sample(StandardNormal);
            sample_bm(grid, 1.0, start, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    LineEnsembleGrid::from_functions(fs)
}

fn melon_lpp_identity(stream: RngStream) -> Result<TestReport> {
    let errs = trials(&stream, 1000, |rng| {
        let ens = random_ensemble(rng, 5, 200, 0.01)?;
        let top = lpp_core::melon(&ens).lines[0].clone();
        let x0 = ens.grid.t0;
        let mut best = vec![f64::NEG_INFINITY; 200];
        for i in 1..=5 {
            let prof = lpp_core::lpp_profile(&ens, (x0, i), 1)?;
            let start = ens.lines[i - 1][0];
            for (b, v) in best.iter_mut().zip(&prof.values) {
                *b = b.max(start + v);
            }
        }
        Ok(top.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    })?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok(TestReport::from_checks(vec![Check::new("max_abs_error", worst, Comparison::AtMost, 1e-9)], vec![1000], vec![]))
}

fn metric_composition(stream: RngStream) -> Result<TestReport> {
    let errs = trials(&stream, 1000, |rng| {
        let ens = random_ensemble(rng, 4, 100, 0.01)?;
        let (x, y) = (ens.grid.t0, ens.grid.end());
        let total = lpp_core::lpp(&ens, (x, 4), (y, 1))?;
        let from: Vec<GridFunction> = (1..=4).map(|k| lpp_core::lpp_profile(&ens, (x, 4), k)).collect::<Result<_>>()?;
        let to: Vec<GridFunction> = (1..=4).map(|k| lpp_core::lpp_profile_to(&ens, k, (y, 1))).collect::<Result<_>>()?;
        let mut worst_eq = 0.0f64;
        let mut worst_ineq = 0.0f64;
        for z in 0..ens.grid.n_points {
            let mut best = f64::NEG_INFINITY;
            for k in 0..4 {
                let v = from[k].values[z] + to[k].values[z];
                worst_ineq = worst_ineq.max(v - total);
                best = best.max(v);
            }
            worst_eq = worst_eq.max((best - total).abs());
        }
        Ok((worst_eq, worst_ineq))
    })?;
    let eq = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let ineq = errs.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(TestReport::from_checks(
        vec![
            Check::new("max_over_levels_error", eq, Comparison::AtMost, 1e-9),
            Check::new("single_level_excess", ineq, Comparison::AtMost, 1e-9),
        ],
        vec![1000],
        vec![],
    ))
}

fn edge_law(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 1e-4, 10_000);
    let tops = trials(&stream.named("melon"), m, |rng| {
        let d = DrivingPaths::sample(n, 0.0, 1.0, dt, rng)?;
        Ok(airy_top_at(&d, &[0.0], Scaling::Linear, Estimator::Richardson)?[0].1)
    })?;
    let gue = gue_lmax(n, m, stream.named("gue"))?;
    let oracle = Sample::new("gue", gue.values.iter().map(|&l| edge_rescale(n, l)).collect())?;
    let top = Sample::new("airy_top", tops)?;
    let (d, p) = ks_two_sample(&top, &oracle)?;
    Ok(TestReport::from_checks(
        vec![
            Check::new("ks_distance", d, Comparison::Below, 0.05),
            Check::info("ks_p", p),
            Check::info("mean_airy_top", top.mean()),
            Check::info("mean_oracle", oracle.mean()),
        ],
        vec![m, m],
        vec![format!("n={n}, dt={dt}, Richardson estimate")],
    ))
}

fn stationarity(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 2e-4, 5000);
    let ys = [-0.5, 0.0, 0.5];
    let p = Prelimit::new(n);
    let mut exp_samples = Vec::new();
    let mut lin_samples = Vec::new();
    for (j, &y) in ys.iter().enumerate() {
        let t_max = (2.0 * y / p.n13).exp().max(p.raw_end(y)) + 8.0 * dt;
        let vals = trials(&stream.child(j as u64), m, |rng| {
            let d = DrivingPaths::sample(n, 0.0, t_max, dt, rng)?;
            let e = airy_top_at(&d, &[y], Scaling::Exponential, Estimator::Richardson)?[0];
            let l = airy_top_at(&d, &[y], Scaling::Linear, Estimator::Richardson)?[0];
            Ok((e.1 + e.0 * e.0, l.1 + l.0 * l.0))
        })?;
        exp_samples.push(Sample::new(format!("y={y}"), vals.iter().map(|v| v.0).collect())?);
        lin_samples.push(Sample::new(format!("y={y}"), vals.iter().map(|v| v.1).collect())?);
    }
    let mut checks = Vec::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let (_, pv) = ks_two_sample(&exp_samples[a], &exp_samples[b])?;
        checks.push(Check::new(format!("ks_p_{}_vs_{}", ys[a], ys[b]), pv, Comparison::Above, 0.01));
    }
    for (a, b) in [(0, 1), (1, 2)] {
        let (d, _) = ks_two_sample(&lin_samples[a], &lin_samples[b])?;
        checks.push(Check::info(format!("linear_scaling_ks_{}_vs_{}", ys[a], ys[b]), d));
    }
    Ok(TestReport::from_checks(checks, vec![m; 3], vec!["exponential time change, Richardson estimate; linear-scaling distances are diagnostics".into()]))
}

fn quadrangle_inequality(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 1e-3, 1000);
    let win = (-1.0, 1.0);
    let (lo, hi) = airy_model::sheet_raw_window(n, win, win);
    let mins = trials(&stream, m, |rng| {
        let d = DrivingPaths::sample(n, lo, hi, dt, rng)?;
        let s = sheet_from_driving(&d, win, win, 43, Estimator::Grid)?;
        Ok(min_rectangle(&s))
    })?;
    let worst = mins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TestReport::from_checks(
        vec![Check::new("min_rectangle_mass", worst, Comparison::AtLeast, -1e-9)],
        vec![m],
        vec!["every rectangle of each 21x21 sheet grid".into()],
    ))
}

/// Smallest `S(x,y) + S(x',y') - S(x,y') - S(x',y)` over all grid `x < x'`, `y < y'`.
fn min_rectangle(s: &SheetSample) -> f64 {
    let mut worst = f64::INFINITY;
    for a in 0..s.nx() {
        for b in a + 1..s.nx() {
            for c in 0..s.ny() {
                for e in c + 1..s.ny() {
                    worst = worst.min(s.get(a, c) + s.get(b, e) - s.get(a, e) - s.get(b, c));
                }
            }
        }
    }
    worst
}

fn unit_square_sheets(stream: &RngStream, m: usize) -> Result<Vec<SheetSample>> {
    let (n, dt) = (100, 1e-3);
    let win = (0.0, 1.0);
    let (lo, hi) = airy_model::sheet_raw_window(n, win, win);
    trials(stream, m, |rng| {
        let d = DrivingPaths::sample(n, lo, hi, dt, rng)?;
        sheet_from_driving(&d, win, win, 4, Estimator::Grid)
    })
}

fn quadrangle_equality(stream: RngStream) -> Result<TestReport> {
    let m = 2000;
    let ms = [0.25, 0.5, 1.0];
    let counts = trials(&stream, m, |rng| {
        let (n, dt) = (100, 1e-3);
        let (lo, hi) = airy_model::sheet_raw_window(n, (0.0, 1.0), (0.0, 1.0));
        let d = DrivingPaths::sample(n, lo, hi, dt, rng)?;
        let s = sheet_from_driving(&d, (0.0, 1.0), (0.0, 1.0), 4, Estimator::Grid)?;
        let base = (s.x_grid.t0, s.y_grid.t0);
        ms.iter().map(|&mm| Ok(kpz_engine::delta_m(&s, base, mm)? <= 1e-6)).collect::<Result<Vec<bool>>>()
    })?;
    let freq: Vec<usize> = (0..3).map(|j| counts.iter().filter(|c| c[j]).count()).collect();
    let (f, lo, hi) = ci_checks("p_equal_m0.25", freq[0], m)?;
    let mut checks = vec![lo, hi, f];
    for j in 1..3 {
        checks.push(Check::info(format!("p_equal_m{}", ms[j]), freq[j] as f64 / m as f64));
        checks.push(Check::new(format!("increase_m{}_over_m{}", ms[j], ms[j - 1]), freq[j] as f64 - freq[j - 1] as f64, Comparison::AtMost, 0.0));
    }
    Ok(TestReport::from_checks(checks, vec![m], vec!["n=100, dt=1e-3, base at (0,0)".into()]))
}

fn record_times(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 1e-3, 2000);
    let p = Prelimit::new(n);
    let flat = InitialData::flat(0.0, None);
    let hits = trials(&stream.named("flat"), m, |rng| {
        // Grid values sit several units low, so truncation needs radius 12.
        let d = DrivingPaths::sample(n, p.raw_start(-12.5), p.raw_start(12.5), dt, rng)?;
        let h = kpz_engine::evolve_direct(&flat, &d, (0.0, 2.0), 1.0, 4, Estimator::Grid, &EvolveOptions::default())?;
        Ok(kpz_engine::record_times(&h, 0.0)?.hits(1.0, 2.0))
    })?;
    let flat_hits = hits.iter().filter(|&&h| h).count();
    let bm_m = 10_000;
    let bm = trials(&stream.named("brownian"), bm_m, |rng| {
        let h = sample_bm(Grid::new(0.0, 1e-4, 20_001)?, 2.0, 0.0, rng)?;
        Ok(kpz_engine::record_times(&h, 0.0)?.hits(1.0, 2.0))
    })?;
    let bm_freq = bm.iter().filter(|&&h| h).count() as f64 / bm_m as f64;
    let (f, lo, hi) = ci_checks("flat_records_in_1_2", flat_hits, m)?;
    Ok(TestReport::from_checks(
        vec![lo, hi, f, Check::new("brownian_error", (bm_freq - 0.5).abs(), Comparison::AtMost, 0.02), Check::info("brownian_freq", bm_freq)],
        vec![m, bm_m],
        vec!["records from a=0 on [1,2]; Brownian control has exact value 1/2".into()],
    ))
}

fn boundary_gap(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m, k) = (100, 5e-4, 1000, 4);
    let grid = SampledGrid { x0: 0.5, dx: 0.01, n: 101 };
    let values: Vec<f64> = (0..grid.n).map(|i| -(0.5 - i as f64 * grid.dx).powi(2)).collect();
    let h0 = kpz_engine::make_initial(InitialData::Sampled { grid, values, mask: vec![true; grid.n] })?;
    let gaps = trials(&stream, m, |rng| {
        let d = DrivingPaths::sample(n, 0.0, 1.0, dt, rng)?;
        let airy = airy_ensemble_from_driving(&d, (-2.05, 0.0), k, 4, Estimator::Grid)?;
        let col = sheet_column(&d, (0.5, 1.5), 0.0, 4, Estimator::Grid)?;
        let g = airy_model::boundary_data(&airy, &col, &h0, k, 2)?;
        Ok(g.values[0] - g.values[1])
    })?;
    let strict = gaps.iter().filter(|&&g| g > 0.0).count();
    let (lo, _) = wilson_ci(strict, m, 0.95)?;
    Ok(TestReport::from_checks(
        vec![Check::new("freq_g1_gt_g2", strict as f64 / m as f64, Comparison::AtLeast, 0.99), Check::info("ci_lo", lo)],
        vec![m],
        vec![format!("h0 = -(x-1)^2 on [0.5,1.5], anchor level {k}")],
    ))
}

fn arcsine_cdf(u: f64) -> f64 {
    (2.0 / std::f64::consts::PI) * u.clamp(0.0, 1.0).sqrt().asin()
}

fn geodesic_jump_times(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 5e-4, 10_000);
    let anchor_x = 1.0;
    let y0 = -2.05;
    let k = SemiInfiniteAnchor::largest_feasible_k(anchor_x, y0, 20).expect("window admits an anchor");
    let anchor = SemiInfiniteAnchor::new(anchor_x, k)?;
    let eps = trials(&stream.named("ensemble"), m, |rng| {
        let d = DrivingPaths::sample(n, 0.0, 1.0, dt, rng)?;
        let airy = airy_ensemble_from_driving(&d, (y0, 0.0), k, 4, Estimator::Grid)?;
        airy_model::geodesic_jump_time(&airy.ensemble, &anchor, (0.0, 1), 1)
    })?;
    let near = eps.iter().filter(|e| e.abs() < 0.01).count() as f64 / m as f64;
    let x = -1.0;
    let len = -x / 2.0;
    let ctrl = trials(&stream.named("two_line"), m, |rng| {
        let ens = random_two_line(rng, x / 2.0, len / 2000.0, 2001)?;
        let path = lpp_core::rightmost_geodesic(&ens, (ens.grid.t0, 2), (ens.grid.end(), 1))?;
        Ok((path.jump_times[0] - x / 2.0) / len)
    })?;
    let (ks, _) = ks_one_sample(&Sample::new("argmax", ctrl)?, arcsine_cdf)?;
    let median = Sample::new("eps", eps)?.quantile(0.5);
    Ok(TestReport::from_checks(
        vec![
            Check::new("frac_abs_eps_below_0.01", near, Comparison::Below, 0.05),
            Check::new("arcsine_ks", ks, Comparison::Below, 0.05),
            Check::info("median_eps", median),
        ],
        vec![m, m],
        vec![format!("anchor x={anchor_x}, level {k}, target (0,1); control on [{}, 0]", x / 2.0)],
    ))
}

fn random_two_line(rng: &mut ChaCha8Rng, t0: f64, dt: f64, points: usize) -> Result<LineEnsembleGrid> {
    let grid = Grid::new(t0, dt, points)?;
    LineEnsembleGrid::from_functions(vec![sample_bm(grid, 1.0, 0.0, rng)?, sample_bm(grid, 1.0, 0.0, rng)?])
}

fn coalescence(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 2e-4, 1000);
    let p = Prelimit::new(n);
    let flat = kpz_engine::make_initial(InitialData::flat(0.0, Some([0.0, 1.0])))?;
    let wedges = kpz_engine::make_initial(InitialData::wedges(&[0.0, 1.0]))?;
    let found = trials(&stream, m, |rng| {
        let d = DrivingPaths::sample(n, 0.0, p.raw_end(2.0) + 8.0 * dt, dt, rng)?;
        let opts = EvolveOptions::default();
        let h1 = kpz_engine::evolve_direct(&flat, &d, (0.0, 2.0), 1.0, 4, Estimator::Grid, &opts)?;
        let h2 = kpz_engine::evolve_direct(&wedges, &d, (0.0, 2.0), 1.0, 4, Estimator::Grid, &opts)?;
        let (i1, i2) = (kpz_engine::reanchor(&h1, 0.0)?, kpz_engine::reanchor(&h2, 0.0)?);
        Ok((
            kpz_engine::agreement_until(&i1, &i2, 0.0, 1e-6)?.is_some(),
            kpz_engine::coalescence_tau(&i1, &i2, 0.0, 1e-6)?.is_some(),
        ))
    })?;
    let hits = found.iter().filter(|f| f.0).count();
    let suffix = found.iter().filter(|f| f.1).count();
    let (lo, hi) = wilson_ci(hits, m, 0.95)?;
    Ok(TestReport::from_checks(
        vec![
            Check::new("freq_tau_detected", hits as f64 / m as f64, Comparison::Above, 0.5),
            Check::info("ci_lo", lo),
            Check::info("ci_hi", hi),
            Check::info("freq_agreement_through_y_end", suffix as f64 / m as f64),
        ],
        vec![m],
        vec!["flat on [0,1] vs wedges at {0,1}, shared paths, increments from y=0 on [0,2]".into()],
    ))
}

fn local_brownianity(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 5e-4, 10_000);
    let p = Prelimit::new(n);
    let step = dt * p.n13 / 2.0;
    let k = (0.01 / step).round() as usize;
    let delta = k as f64 * step;
    let y_inc = p.y_of_raw(((p.raw_end(0.5) / dt) / k as f64).round() * k as f64 * dt);
    // Flat on a window wide enough that the argmax never reaches its edges.
    let flat = kpz_engine::make_initial(InitialData::flat(0.0, Some([-3.5, 4.5])))?;
    let wedges = kpz_engine::make_initial(InitialData::wedges(&[0.0, 1.0]))?;
    let out = trials(&stream, m, |rng| {
        let d = DrivingPaths::sample(n, p.raw_start(-3.5), p.raw_end(4.5) + 8.0 * dt, dt, rng)?;
        let opts = EvolveOptions::default();
        let inc = |h0: &InitialData| -> Result<f64> {
            let h = kpz_engine::evolve_direct(h0, &d, (y_inc - step / 4.0, y_inc + delta + step / 4.0), 1.0, k, Estimator::Grid, &opts)?;
            Ok((h.values[1] - h.values[0]) / (2.0 * delta).sqrt())
        };
        Ok((inc(&flat)?, inc(&wedges)?))
    })?;
    // Support event for increments from the left end: sup |h(y) - h(0) - y/4| < 1/2 on [0,1].
    let (ramp_t, ramp_dt): (f64, f64) = (1.0 / 64.0, 1e-3);
    let ramp_flat = kpz_engine::make_initial(InitialData::flat(0.0, Some([-0.3, 1.2])))?;
    let ramp = |y: f64| 0.25 * y;
    let s2 = ramp_t.cbrt().powi(2);
    let hits = trials(&stream.named("ramp"), m, |rng| {
        let d = DrivingPaths::sample(n, p.raw_start(-0.3 / s2), p.raw_end(1.2 / s2) + 8.0 * ramp_dt, ramp_dt, rng)?;
        let hr = kpz_engine::evolve_direct(&ramp_flat, &d, (0.0, 1.0), ramp_t, 8, Estimator::Grid, &EvolveOptions::default())?;
        let h0 = hr.values[0];
        Ok(hr.grid.times().iter().zip(&hr.values).all(|(y, v)| (v - h0 - ramp(*y)).abs() < 0.5))
    })?;
    let (ks_flat, _) = ks_one_sample(&Sample::new("flat", out.iter().map(|o| o.0).collect())?, std_normal_cdf)?;
    let (ks_wedge, _) = ks_one_sample(&Sample::new("wedges", out.iter().map(|o| o.1).collect())?, std_normal_cdf)?;
    let hits = hits.iter().filter(|h| **h).count();
    let (f, lo, _) = ci_checks("ramp_event", hits, m)?;
    Ok(TestReport::from_checks(
        vec![Check::new("ks_flat", ks_flat, Comparison::Below, 0.05), Check::new("ks_two_wedge", ks_wedge, Comparison::Below, 0.05), lo, f],
        vec![m, m],
        vec![
            format!("increments at y={y_inc:.5}, delta={delta:.5} (0.01 snapped to the grid); flat data on [-3.5, 4.5]"),
            format!("ramp event: flat data on [-0.3, 1.2] at t={ramp_t}, sup over [0,1] of |h(y) - h(0) - y/4| < 0.5"),
        ],
    ))
}

fn additive_comparison(stream: RngStream) -> Result<TestReport> {
    let m_add = 1000;
    let grid = Grid::new(0.0, 0.01, 101)?;
    let add = trials(&stream.named("additive"), m_add, |rng| {
        let b = sample_bm(grid, 2.0, 0.0, rng)?;
        let c = sample_bm(grid, 2.0, 0.0, rng)?;
        let s = SheetSample::new(grid, grid, b.values.iter().flat_map(|x| c.values.iter().map(move |y| x + y)).collect(), 1.0)?;
        kpz_engine::delta_m(&s, (0.0, 0.0), 1.0)
    })?;
    let worst = add.iter().copied().fold(0.0, f64::max);
    let m_sheet = 200;
    let sheets = unit_square_sheets(&stream.named("sheet"), m_sheet)?;
    let mut above = 0;
    for s in &sheets {
        if kpz_engine::delta_m(s, (s.x_grid.t0, s.y_grid.t0), 1.0)? > 1e-3 {
            above += 1;
        }
    }
    let (f, lo, _) = ci_checks("sheet_delta_above_1e-3", above, m_sheet)?;
    Ok(TestReport::from_checks(
        vec![Check::new("additive_max_delta", worst, Comparison::AtMost, 1e-9), lo, f],
        vec![m_add, m_sheet],
        vec!["M = 1 on the unit square".into()],
    ))
}

fn capacity_numerics(stream: RngStream) -> Result<TestReport> {
    let target = 8.0 / 3.0;
    let h = 1.0 / 400.0;
    let seg_t = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 1.0, 0.0, 0.0]]);
    let seg_x = CompactSetSpec::boxes(Ambient::Plane, vec![[0.0, 1.0, 0.0, 0.0]]);
    let e_th = capacity::thermal_energy(&GridMeasure::uniform(seg_t.discretise(h)?, h)?, 0.0)?;
    let e_br = capacity::bessel_riesz_energy(&GridMeasure::uniform(seg_x.discretise(h)?, h)?)?;
    let cap = capacity::capacity(&seg_t, EnergyKind::Thermal { gamma: 0.0 }, 1.0 / 200.0, &CapacityOptions::default())?;
    let scales = [0.1, 0.05, 0.02, 0.01];
    let space = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 0.0, 0.0, 1.0]]);
    let dim_t = capacity::parabolic_dim(&seg_t, &scales)?;
    let dim_x = capacity::parabolic_dim(&space, &scales)?;
    // Hitting versus dimension: a time segment at level 0 against three single times.
    let big = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[1.0, 2.0, 0.0, 0.0]]);
    let small = CompactSetSpec::points(Ambient::TimeSpace, vec![[1.2, 0.0], [1.5, 0.0], [1.8, 0.0]]);
    let dim_big = capacity::parabolic_dim(&big, &scales)?;
    let dim_small = capacity::parabolic_dim(&small, &scales)?;
    let bm = HittingProcess::Brownian { rate: 1.0, start: 0.0, bridge_correction: true };
    let zero = IntervalSet::point(0.0);
    let hit_big = capacity::hitting_mc(&IntervalSet::new(vec![[1.0, 2.0]]), &zero, &bm, 10_000, 1e-3, stream.named("big"))?;
    let times = IntervalSet::new(vec![[1.2, 1.2], [1.5, 1.5], [1.8, 1.8]]);
    let hit_small = capacity::hitting_mc(&times, &zero, &bm, 10_000, 1e-3, stream.named("small"))?;
    Ok(TestReport::from_checks(
        vec![
            Check::new("thermal_uniform_rel_error", (e_th / target - 1.0).abs(), Comparison::Below, 0.01),
            Check::new("bessel_riesz_uniform_rel_error", (e_br / target - 1.0).abs(), Comparison::Below, 0.01),
            Check::new("fw_gap_over_energy", cap.duality_gap / cap.energy, Comparison::Below, 1e-4),
            Check::new("segment_capacity_rel_error", (cap.capacity / 0.375 - 1.0).abs(), Comparison::AtMost, 0.05),
            Check::new("dim_time_segment_error", (dim_t - 2.0).abs(), Comparison::AtMost, 0.1),
            Check::new("dim_space_segment_error", (dim_x - 1.0).abs(), Comparison::AtMost, 0.1),
            Check::new("dim_hit_set", dim_big, Comparison::Above, 1.2),
            Check::new("hit_ci_lo_dim_above_1.2", hit_big.ci.0, Comparison::Above, 0.0),
            Check::new("dim_miss_set", dim_small, Comparison::Below, 0.8),
            Check::new("hit_ci_lo_dim_below_0.8", hit_small.ci.0, Comparison::Below, 0.01),
            Check::info("hit_freq_dim_above_1.2", hit_big.frequency),
            Check::info("hit_freq_dim_below_0.8", hit_small.frequency),
        ],
        vec![10_000, 10_000],
        vec![format!("capacity {:.4}, {} iterations", cap.capacity, cap.iterations)],
    ))
}

fn semigroup(stream: RngStream) -> Result<TestReport> {
    let (n, dt, m) = (100, 2e-4, 1000);
    let p = Prelimit::new(n);
    let s = 2f64.powf(-1.0 / 3.0);
    let z_max = 2.0;
    let out = trials(&stream, m, |rng| {
        let d1 = DrivingPaths::sample(n, 0.0, p.raw_end(z_max) + 8.0 * dt, dt, rng)?;
        let d2 = DrivingPaths::sample(n, p.raw_start(-z_max) - 8.0 * dt, 1.0, dt, rng)?;
        let d3 = DrivingPaths::sample(n, 0.0, 1.0, dt, rng)?;
        let composed = kpz_engine::compose_at_origin(&d1, &d2, s, z_max, Estimator::Richardson)?;
        let direct = airy_top_at(&d3, &[0.0], Scaling::Linear, Estimator::Richardson)?[0].1;
        Ok((composed, direct))
    })?;
    let a = Sample::new("composed", out.iter().map(|o| o.0).collect())?;
    let b = Sample::new("direct", out.iter().map(|o| o.1).collect())?;
    let (d, pv) = ks_two_sample(&a, &b)?;
    Ok(TestReport::from_checks(
        vec![
            Check::new("ks_distance", d, Comparison::Below, 0.07),
            Check::info("ks_p", pv),
            Check::info("mean_composed", a.mean()),
            Check::info("mean_direct", b.mean()),
        ],
        vec![m, m],
        vec![format!("two scale-2^(-1/3) sheets composed at (0,0), intermediate |z| <= {z_max}")],
    ))
}
