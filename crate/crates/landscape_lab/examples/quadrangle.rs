//! Quadrangle functional of an Airy sheet: F(x, y) is a 2D distribution
//! function (monotone and non-negative), and Delta^M is strictly positive
//! with positive probability.

use landscape_lab::airy_model::{sample_airy_sheet, SheetOptions};
use landscape_lab::kpz_engine::{delta_m, quadrangle_cdf};
use landscape_lab::rng::RngStream;

fn main() -> landscape_lab::Result<()> {
    let opts = SheetOptions { stride: 4, ..Default::default() };
    let stream = RngStream::new(2, 0);
    for i in 0..5 {
        let s = sample_airy_sheet(100, (0.0, 1.0), (0.0, 1.0), 1e-3, &opts, &mut stream.trial(i))?;
        let f = quadrangle_cdf(&s, 0.0, 0.0)?;
        let dm: Vec<String> = [0.25, 0.5, 1.0].iter().map(|&m| delta_m(&s, (0.0, 0.0), m).map(|v| format!("{v:.4}"))).collect::<Result<_, _>>()?;
        println!("sheet {i}: min F {:.2e}, monotone {}, Delta^M for M=1/4,1/2,1: {}", f.min_value(), f.is_monotone(1e-9), dm.join(" "));
    }
    Ok(())
}
