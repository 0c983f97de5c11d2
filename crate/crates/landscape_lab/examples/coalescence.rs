//! Increments of two coupled KPZ profiles (flat on [0, 1] and two wedges)
//! agree from some point on.

use landscape_lab::airy_model::{DrivingPaths, Estimator, Prelimit};
use landscape_lab::kpz_engine::{agreement_until, evolve_direct, make_initial, reanchor, EvolveOptions, InitialData};
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let (n, dt) = (100, 1e-3);
    let p = Prelimit::new(n);
    let flat = make_initial(InitialData::flat(0.0, Some([0.0, 1.0])))?;
    let wedges = make_initial(InitialData::wedges(&[0.0, 1.0]))?;
    let stream = RngStream::new(9, 0);
    for i in 0..8 {
        let d = DrivingPaths::sample(n, 0.0, p.raw_end(2.0) + 8.0 * dt, dt, &mut stream.trial(i))?;
        let opts = EvolveOptions::default();
        let h1 = evolve_direct(&flat, &d, (0.0, 2.0), 1.0, 4, Estimator::Grid, &opts)?;
        let h2 = evolve_direct(&wedges, &d, (0.0, 2.0), 1.0, 4, Estimator::Grid, &opts)?;
        let tau = agreement_until(&reanchor(&h1, 0.0)?, &reanchor(&h2, 0.0)?, 0.0, 1e-6)?;
        match tau {
            Some(t) => println!("trial {i}: increments agree on [{t:.3}, 2]"),
            None => println!("trial {i}: no agreement on [0, 2]"),
        }
    }
    Ok(())
}
