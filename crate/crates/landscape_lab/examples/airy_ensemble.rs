//! Prelimit Airy line ensemble from a melon of n Brownian motions, written
//! as `t,line_1,...` CSV.

use landscape_lab::airy_model::{sample_airy_ensemble, stationary_view, EnsembleOptions};
use landscape_lab::io::ensemble_csv;
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let opts = EnsembleOptions { lines: 4, stride: 8, ..Default::default() };
    let mut rng = RngStream::new(1, 0).rng();
    let a = sample_airy_ensemble(100, 2.0, 1e-3, &opts, &mut rng)?;
    let st = stationary_view(&a);

    let g = st.ensemble.grid;
    println!("n={} lines={} points={} window=[{:.3}, {:.3}]", a.n, a.ensemble.n_lines(), g.n_points, a.window.0, a.window.1);
    for i in (0..g.n_points).step_by(g.n_points / 8) {
        let row: Vec<String> = st.ensemble.lines.iter().map(|l| format!("{:>8.3}", l[i])).collect();
        println!("y={:>6.3} {}", g.time(i), row.join(" "));
    }
    let csv = ensemble_csv(&a.ensemble);
    println!("csv: {} bytes, header {:?}", csv.len(), csv.lines().next().unwrap_or(""));
    Ok(())
}
