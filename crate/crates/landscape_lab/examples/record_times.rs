//! Record times of a unit-time KPZ profile from flat data, against the
//! arcsine answer 1/2 for Brownian motion with (a, b, c) = (0, 1, 2).

use landscape_lab::airy_model::{DrivingPaths, Estimator, Prelimit};
use landscape_lab::kpz_engine::{evolve_direct, make_initial, record_times, EvolveOptions, InitialData};
use landscape_lab::path_sampler::{sample_bm, Grid};
use landscape_lab::rng::RngStream;
use landscape_lab::stats_harness::wilson_ci;

fn main() -> landscape_lab::Result<()> {
    let (n, dt, trials) = (100, 1e-3, 200);
    let p = Prelimit::new(n);
    let stream = RngStream::new(5, 0);
    let h0 = make_initial(InitialData::flat(0.0, Some([-6.0, 8.0])))?;
    let mut hits = 0;
    for i in 0..trials {
        let mut rng = stream.trial(i);
        let d = DrivingPaths::sample(n, p.raw_start(-6.5), p.raw_end(2.5), dt, &mut rng)?;
        let h = evolve_direct(&h0, &d, (0.0, 2.0), 1.0, 4, Estimator::Grid, &EvolveOptions::default())?;
        hits += record_times(&h, 0.0)?.hits(1.0, 2.0) as usize;
    }
    let (lo, hi) = wilson_ci(hits, trials as usize, 0.95)?;
    println!("kpz: records in [1,2] in {hits}/{trials}, 95% CI [{lo:.3}, {hi:.3}]");

    let grid = Grid::new(0.0, 1e-3, 2001)?;
    let bm = stream.named("bm");
    let bm_hits = (0..2000).filter(|&i| {
        let b = sample_bm(grid, 2.0, 0.0, &mut bm.trial(i)).expect("valid grid");
        record_times(&b, 0.0).expect("0 on grid").hits(1.0, 2.0)
    });
    println!("brownian control: {:.3} (exact 0.5)", bm_hits.count() as f64 / 2000.0);
    Ok(())
}
