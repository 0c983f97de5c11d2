use landscape_lab::airy_model::{self, airy_ensemble_from_driving, sheet_column, DrivingPaths, Estimator, Prelimit};
use landscape_lab::kpz_engine::{evolve_direct, make_initial, EvolveOptions, InitialData, SampledGrid};
use landscape_lab::lpp_core::{reflect_with_boundary, BoundaryData, LineEnsembleGrid};
use landscape_lab::path_sampler::{resample_nonintersecting, sample_bm, Grid, GridFunction, ResampleMethod, ResampleOptions};
use landscape_lab::rng::RngStream;
use landscape_lab::stats_harness::{ks_one_sample, ks_two_sample, std_normal_cdf, Sample};

fn line(grid: Grid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    grid.times().into_iter().map(f).collect()
}

#[test]
fn lone_line_resamples_as_a_bridge() {
    // With nothing above or below, the kernel is the plain bridge: the
    // midpoint of a rate-2 bridge over [0, 1] from 0 to 1 is N(1/2, 1/2).
    let grid = Grid::new(0.0, 0.05, 21).unwrap();
    let ens = LineEnsembleGrid::new(grid, vec![line(grid, |t| t)]).unwrap();
    let stream = RngStream::new(17, 0);
    let mid: Vec<f64> = (0..4000)
        .map(|i| {
            let (out, diag) = resample_nonintersecting(&ens, 0..1, (0.0, 1.0), None, &ResampleOptions::default(), &mut stream.trial(i)).unwrap();
            assert_eq!(diag.method, ResampleMethod::Rejection);
            assert_eq!(out.lines[0][0], 0.0);
            assert_eq!(out.lines[0][20], 1.0);
            (out.lines[0][10] - 0.5) / 0.5f64.sqrt()
        })
        .collect();
    let (d, p) = ks_one_sample(&Sample::new("mid", mid).unwrap(), std_normal_cdf).unwrap();
    assert!(p > 0.01, "KS {d}, p {p}");
}

fn three_lines(grid: Grid) -> LineEnsembleGrid {
    LineEnsembleGrid::new(grid, vec![line(grid, |t| 3.0 + t), line(grid, |t| 1.5 + 0.5 * t), line(grid, |_| 0.2)]).unwrap()
}

#[test]
fn resampled_block_is_strictly_ordered() {
    let grid = Grid::new(0.0, 0.02, 51).unwrap();
    let ens = three_lines(grid);
    let floor = GridFunction::from_fn(grid, |t| -0.5 + 0.3 * (6.0 * t).sin()).unwrap();
    let stream = RngStream::new(5, 0);
    for force_mcmc in [false, true] {
        let opts = ResampleOptions { force_mcmc, ..Default::default() };
        for i in 0..50 {
            let (out, _) = resample_nonintersecting(&ens, 0..3, (0.2, 0.8), Some(&floor), &opts, &mut stream.trial(i)).unwrap();
            for j in 0..grid.n_points {
                assert!(out.lines[0][j] > out.lines[1][j] && out.lines[1][j] > out.lines[2][j] && out.lines[2][j] > floor.values[j]);
            }
            // Outside the window nothing moves.
            for r in 0..3 {
                assert_eq!(out.lines[r][..10], ens.lines[r][..10]);
                assert_eq!(out.lines[r][41..], ens.lines[r][41..]);
            }
        }
    }
}

#[test]
fn exchange_chain_is_monotone_in_the_floor() {
    let grid = Grid::new(0.0, 0.02, 51).unwrap();
    let ens = three_lines(grid);
    let low = GridFunction::from_fn(grid, |t| -1.0 + 0.2 * (9.0 * t).cos()).unwrap();
    let high = GridFunction::from_fn(grid, |t| low.values[grid.nearest_index(t)] + 0.8 * t * (1.0 - t)).unwrap();
    let opts = ResampleOptions { force_mcmc: true, mcmc_sweeps: 200, ..Default::default() };
    let stream = RngStream::new(23, 0);
    for i in 0..20 {
        let (a, da) = resample_nonintersecting(&ens, 0..3, (0.0, 1.0), Some(&low), &opts, &mut stream.trial(i)).unwrap();
        let (b, _) = resample_nonintersecting(&ens, 0..3, (0.0, 1.0), Some(&high), &opts, &mut stream.trial(i)).unwrap();
        assert_eq!(da.method, ResampleMethod::Mcmc);
        for r in 0..3 {
            for j in 0..grid.n_points {
                assert!(a.lines[r][j] <= b.lines[r][j], "trial {i}, row {r}, point {j}");
            }
        }
    }
}

#[test]
fn infeasible_endpoints_are_rejected() {
    let grid = Grid::new(0.0, 0.1, 11).unwrap();
    let ens = LineEnsembleGrid::new(grid, vec![line(grid, |_| 0.0), line(grid, |_| 1.0)]).unwrap();
    let r = resample_nonintersecting(&ens, 0..2, (0.0, 1.0), None, &ResampleOptions::default(), &mut RngStream::new(1, 0).rng());
    assert!(r.is_err());
}

#[test]
fn bm_increments_are_stationary() {
    let grid = Grid::new(0.0, 0.01, 401).unwrap();
    let stream = RngStream::new(29, 0);
    let (mut early, mut late) = (Vec::new(), Vec::new());
    for i in 0..10_000 {
        let b = sample_bm(grid, 2.0, 0.0, &mut stream.trial(i)).unwrap();
        early.push(b.values[100] - b.values[0]);
        late.push(b.values[400] - b.values[300]);
    }
    let (_, p) = ks_two_sample(&Sample::new("early", early).unwrap(), &Sample::new("late", late).unwrap()).unwrap();
    assert!(p > 0.01, "p {p}");
}

#[test]
fn kpz_increments_follow_the_top_line_near_the_boundary() {
    // h0 supported right of 0: just right of y = 0 the profile moves with
    // A_1 plus G_1, i.e. the single-boundary reflection. The agreement
    // interval can be short when G_1 - G_2 is small, so the y-step is fine.
    let (n, dt, k) = (100, 1e-4, 4);
    let p = Prelimit::new(n);
    let grid = SampledGrid { x0: 0.5, dx: 0.01, n: 101 };
    let values: Vec<f64> = (0..grid.n).map(|i| -(0.5 - i as f64 * grid.dx).powi(2)).collect();
    let h0 = make_initial(InitialData::Sampled { grid, values, mask: vec![true; grid.n] }).unwrap();
    let stream = RngStream::new(31, 0);
    let trials = 200;
    let mut positive = 0;
    for i in 0..trials {
        let d = DrivingPaths::sample(n, 0.0, p.raw_end(1.0) + 8.0 * dt, dt, &mut stream.trial(i)).unwrap();
        let airy = airy_ensemble_from_driving(&d, (-2.05, 1.0), k, 1, Estimator::Grid).unwrap();
        let col = sheet_column(&d, (0.5, 1.5), 0.0, 4, Estimator::Grid).unwrap();
        let g = airy_model::boundary_data(&airy, &col, &h0, k, 1).unwrap();
        let eg = airy.ensemble.grid;
        let i0 = eg.nearest_index(0.0);
        let right = airy.ensemble.slice(i0, eg.n_points - 1).unwrap();
        let single = reflect_with_boundary(&BoundaryData::new(vec![g.values[0]]).unwrap(), &right, 1).unwrap();
        let y0 = right.grid.t0;
        let h = evolve_direct(&h0, &d, (y0, right.grid.end()), 1.0, 1, Estimator::Grid, &EvolveOptions::default()).unwrap();
        assert_eq!(h.grid.n_points, right.grid.n_points);
        assert!((h.grid.t0 - y0).abs() < 1e-9 && (h.grid.dt - right.grid.dt).abs() < 1e-12);
        let first_gap = (1..h.values.len())
            .find(|&j| ((h.values[j] - h.values[0]) - (single.values[j] - single.values[0])).abs() > 1e-9)
            .unwrap_or(h.values.len());
        positive += (first_gap > 1) as usize;
    }
    assert!(positive as f64 >= 0.95 * trials as f64, "{positive} of {trials}");
}
