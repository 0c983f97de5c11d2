//! Melon of independent Brownian motions and the last passage identity:
//! the top melon line at time t equals f[(0, k) -> (t, 1)].

use landscape_lab::lpp_core::{lpp, melon, LineEnsembleGrid};
use landscape_lab::path_sampler::{sample_bm, Grid};
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let k = 5;
    let grid = Grid::new(0.0, 0.005, 201)?;
    let mut rng = RngStream::new(7, 0).rng();
    let lines = (0..k).map(|_| sample_bm(grid, 1.0, 0.0, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    let ens = LineEnsembleGrid::from_functions(lines)?;
    let m = melon(&ens);

    // All lines start at 0, so only positive times are strictly ordered.
    println!("ordered on (0, 1]: {}", m.slice(1, grid.n_points - 1)?.is_strictly_ordered());
    let mut worst = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        let i = grid.index_of(t)?;
        let direct = lpp(&ens, (0.0, k), (t, 1))?;
        worst = worst.max((direct - m.lines[0][i]).abs());
        println!("t={t:<5} melon top {:>9.5}   lpp {:>9.5}", m.lines[0][i], direct);
    }
    println!("max discrepancy {worst:.2e}");
    Ok(())
}
