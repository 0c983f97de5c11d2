//! Monte Carlo hitting probabilities: does the graph of a process meet E x F?

use landscape_lab::capacity::{hitting_mc, HittingProcess, IntervalSet};
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let stream = RngStream::new(4, 0);
    let bm = HittingProcess::Brownian { rate: 2.0, start: 0.0, bridge_correction: true };
    let zero = IntervalSet::point(0.0);

    let r = hitting_mc(&IntervalSet::new(vec![[1.0, 2.0]]), &zero, &bm, 4000, 1e-3, stream.named("segment"))?;
    println!("E=[1,2], F={{0}}: {:.3} CI [{:.3}, {:.3}] (exact 0.5)", r.frequency, r.ci.0, r.ci.1);

    let times = IntervalSet::new(vec![[1.0, 1.0], [1.5, 1.5], [2.0, 2.0]]);
    let r = hitting_mc(&times, &zero, &bm, 4000, 1e-3, stream.named("points"))?;
    println!("E={{1, 1.5, 2}}, F={{0}}: {:.4} CI [{:.4}, {:.4}] (exact 0)", r.frequency, r.ci.0, r.ci.1);
    Ok(())
}
