//! KPZ fixed point from several initial conditions on one set of driving
//! paths, so the outputs are coupled through the same sheet.

use landscape_lab::airy_model::{DrivingPaths, Estimator, Prelimit};
use landscape_lab::kpz_engine::{evolve_direct, make_initial, EvolveOptions, InitialData};
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let (n, dt, t) = (100, 1e-3, 1.0);
    let p = Prelimit::new(n);
    let mut rng = RngStream::new(11, 0).rng();
    let d = DrivingPaths::sample(n, p.raw_start(-3.0), p.raw_end(3.0) + 8.0 * dt, dt, &mut rng)?;
    let opts = EvolveOptions::default();

    let data = [
        ("narrow wedge at 0", make_initial(InitialData::narrow_wedge(0.0))?),
        ("wedges at -1, 1", make_initial(InitialData::wedges(&[-1.0, 1.0]))?),
        ("flat on [-2, 2]", make_initial(InitialData::flat(0.0, Some([-2.0, 2.0])))?),
    ];
    for (name, h0) in &data {
        let h = evolve_direct(h0, &d, (-1.0, 1.0), t, 40, Estimator::Grid, &opts)?;
        let vals: Vec<String> = h.values.iter().step_by((h.values.len() / 6).max(1)).map(|v| format!("{v:>7.2}")).collect();
        println!("{name:<18} {}", vals.join(" "));
    }
    Ok(())
}
