//! An Airy sheet sample on [-1, 1]^2 and its symmetries in law: the
//! diagonal S(x, x) should look like an Airy process at every x.

use landscape_lab::airy_model::{sample_airy_sheet, SheetOptions};
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let opts = SheetOptions { stride: 20, ..Default::default() };
    let mut rng = RngStream::new(3, 0).rng();
    let s = sample_airy_sheet(100, (-1.0, 1.0), (-1.0, 1.0), 1e-3, &opts, &mut rng)?;
    println!("sheet {}x{}", s.nx(), s.ny());
    let xs = s.x_grid.times();
    let ys = s.y_grid.times();
    for ix in (0..s.nx()).step_by((s.nx() / 5).max(1)) {
        let row: Vec<String> = (0..s.ny()).step_by((s.ny() / 5).max(1)).map(|iy| format!("{:>7.2}", s.get(ix, iy))).collect();
        println!("x={:>6.3} {}", xs[ix], row.join(" "));
    }
    // S(x, y) + (x - y)^2 is stationary; grid values carry a constant
    // negative offset of a few units at this dt.
    let stat = |ix: usize, iy: usize| s.get(ix, iy) + (xs[ix] - ys[iy]).powi(2);
    println!("corner values + parabola: {:.3} {:.3}", stat(0, s.ny() - 1), stat(s.nx() - 1, 0));
    Ok(())
}
