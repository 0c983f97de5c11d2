//! Thermal and Bessel-Riesz capacities of compact sets and the parabolic
//! dimension of time-space sets.

use landscape_lab::capacity::{capacity, parabolic_dim, Ambient, CapacityOptions, CompactSetSpec, EnergyKind};

fn main() -> landscape_lab::Result<()> {
    let opts = CapacityOptions::default();
    let segment = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 1.0, 0.0, 0.0]]);
    let square = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 1.0, 0.0, 1.0]]);
    for (name, set) in [("time segment", &segment), ("unit square", &square)] {
        let dim = parabolic_dim(set, &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0])?;
        println!("{name:<13} parabolic dim {dim:.3}");
        // A fixed space point carries infinite energy once gamma > 0.
        for gamma in [0.0, 0.5] {
            let r = capacity(set, EnergyKind::Thermal { gamma }, 1.0 / 16.0, &opts)?;
            println!("  thermal(gamma={gamma}) capacity {:.4} (gap {:.1e}, {} iterations)", r.capacity, r.duality_gap, r.iterations);
        }
    }
    let plane = CompactSetSpec::boxes(Ambient::Plane, vec![[0.0, 1.0, 0.0, 0.0]]);
    let r = capacity(&plane, EnergyKind::BesselRiesz, 1.0 / 64.0, &opts)?;
    println!("plane segment Bessel-Riesz capacity {:.4}", r.capacity);
    Ok(())
}
