//! Thermal and Bessel-Riesz energies and capacities of discretised compact
//! sets, parabolic box-counting dimension, hitting frequencies and the
//! geometry of sheet images.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airy_model::{DrivingPaths, Estimator, Prelimit, SheetSample};
use crate::error::{LabError, Result};
use crate::kpz_engine::{evolve_direct, EvolveOptions, InitialData};
use crate::rng::RngStream;
use crate::stats_harness::wilson_ci;

/// Energies above this are reported as infinite.
pub const ENERGY_INFINITY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ambient {
    /// Points are `(t, x)`.
    #[default]
    TimeSpace,
    /// Points are `(x, y)`.
    Plane,
}

/// Union of closed axis-aligned boxes `[a0, a1] x [b0, b1]` and points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSetSpec {
    #[serde(default)]
    pub ambient: Ambient,
    #[serde(default)]
    pub boxes: Vec<[f64; 4]>,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
}

impl CompactSetSpec {
    pub fn boxes(ambient: Ambient, boxes: Vec<[f64; 4]>) -> Self {
        Self { ambient, boxes, points: vec![] }
    }

    pub fn points(ambient: Ambient, points: Vec<[f64; 2]>) -> Self {
        Self { ambient, boxes: vec![], points }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() && self.points.is_empty() {
            return Err(LabError::InvalidParameter("compact set is empty".into()));
        }
        for b in &self.boxes {
            if b.iter().any(|v| !v.is_finite()) || b[0] > b[1] || b[2] > b[3] {
                return Err(LabError::InvalidParameter(format!("bad box {b:?}")));
            }
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("points must be finite".into()));
        }
        Ok(())
    }

    /// Extent of the first coordinate.
    pub fn first_extent(&self) -> (f64, f64) {
        let it = self.boxes.iter().flat_map(|b| [b[0], b[1]]).chain(self.points.iter().map(|p| p[0]));
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)))
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let tol = 1e-12;
        self.boxes.iter().any(|b| p[0] >= b[0] - tol && p[0] <= b[1] + tol && p[1] >= b[2] - tol && p[1] <= b[3] + tol)
            || self.points.iter().any(|q| (q[0] - p[0]).abs() <= tol && (q[1] - p[1]).abs() <= tol)
    }

    /// Cells of width `h`: boxes are split along each non-degenerate side
    /// and points become zero-width cells.
    pub fn discretise(&self, h: f64) -> Result<Vec<Cell>> {
        self.validate()?;
        if !(h > 0.0) {
            return Err(LabError::InvalidParameter(format!("resolution must be positive, got {h}")));
        }
        let split = |a: f64, b: f64| -> Vec<(f64, f64)> {
            if b - a <= 0.0 {
                return vec![(a, 0.0)];
            }
            let k = ((b - a) / h).round().max(1.0) as usize;
            let w = (b - a) / k as f64;
            (0..k).map(|i| (a + (i as f64 + 0.5) * w, w)).collect()
        };
        let mut cells = Vec::new();
        for b in &self.boxes {
            for (c0, w0) in split(b[0], b[1]) {
                for (c1, w1) in split(b[2], b[3]) {
                    cells.push(Cell { center: [c0, c1], extent: [w0, w1] });
                }
            }
        }
        cells.extend(self.points.iter().map(|p| Cell { center: *p, extent: [0.0, 0.0] }));
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub center: [f64; 2],
    pub extent: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub cells: Vec<Cell>,
    pub weights: Vec<f64>,
    pub h: f64,
}

impl GridMeasure {
    pub fn new(cells: Vec<Cell>, weights: Vec<f64>, h: f64) -> Result<Self> {
        if cells.len() != weights.len() || cells.is_empty() {
            return Err(LabError::InvalidParameter("need one weight per cell".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(LabError::InvalidParameter("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() >= 1e-12 {
            return Err(LabError::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { cells, weights, h })
    }

    pub fn uniform(cells: Vec<Cell>, h: f64) -> Result<Self> {
        let m = cells.len();
        let mut weights = vec![1.0 / m as f64; m];
        let total: f64 = weights.iter().sum();
        weights[0] += 1.0 - total;
        Self::new(cells, weights, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyKind {
    Thermal { gamma: f64 },
    BesselRiesz,
}

impl EnergyKind {
    fn check(&self) -> Result<()> {
        if let EnergyKind::Thermal { gamma } = self {
            if !(*gamma >= 0.0) {
                return Err(LabError::InvalidParameter(format!("gamma must be non-negative, got {gamma}")));
            }
        }
        Ok(())
    }

    fn kernel(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        match *self {
            EnergyKind::Thermal { gamma } => {
                let dt = (p[0] - q[0]).abs();
                let dx = (p[1] - q[1]).abs();
                if dt == 0.0 {
                    return if dx == 0.0 { f64::INFINITY } else { 0.0 };
                }
                let g = if gamma == 0.0 { 1.0 } else { dx.powf(-gamma) };
                (-dx * dx / (4.0 * dt)).exp() / dt.sqrt() * g
            }
            EnergyKind::BesselRiesz => {
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    d.powf(-0.5)
                }
            }
        }
    }

    /// Average of the kernel over pairs of independent uniform points in one cell.
    fn self_energy(&self, c: &Cell) -> f64 {
        let [w0, w1] = c.extent;
        match *self {
            EnergyKind::BesselRiesz => match (w0 > 0.0, w1 > 0.0) {
                (false, false) => f64::INFINITY,
                (true, false) => SEGMENT_CONSTANT * w0.powf(-0.5),
                (false, true) => SEGMENT_CONSTANT * w1.powf(-0.5),
                (true, true) => square_riesz_average(w0, w1),
            },
            EnergyKind::Thermal { gamma } => match (w0 > 0.0, w1 > 0.0) {
                (false, _) => {
                    // Single time slice: the kernel vanishes off the diagonal.
                    if w1 > 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
                (true, false) => {
                    if gamma == 0.0 {
                        SEGMENT_CONSTANT * w0.powf(-0.5)
                    } else {
                        f64::INFINITY
                    }
                }
                (true, true) => thermal_box_average(w0, w1, gamma),
            },
        }
    }
}

/// `E|U - V|^{-1/2}` for `U, V` uniform on `[0, 1]`.
const SEGMENT_CONSTANT: f64 = 8.0 / 3.0;

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Integral of `f` over `[a, b]` by Gauss-Legendre with `n` nodes.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let (m, r) = ((a + b) / 2.0, (b - a) / 2.0);
    x.iter().zip(&w).map(|(xi, wi)| wi * f(m + r * xi)).sum::<f64>() * r
}

/// `E|U - V|^{-1/2}` for `U, V` uniform on a `w0 x w1` rectangle. The
/// difference has density `(w0 - |a|)(w1 - |b|)/(w0 w1)^2`; polar
/// coordinates with `r = rho^2` make the integrand smooth.
fn square_riesz_average(w0: f64, w1: f64) -> f64 {
    let half = |w0: f64, w1: f64| {
        let theta_max = (w1 / w0).atan();
        integrate(
            |th: f64| {
                let r_max = w0 / th.cos();
                integrate(
                    |rho: f64| {
                        let r = rho * rho;
                        (w0 - r * th.cos()) * (w1 - r * th.sin()) * r.sqrt() * 2.0 * rho
                    },
                    0.0,
                    r_max.sqrt(),
                    48,
                )
            },
            0.0,
            theta_max,
            48,
        )
    };
    4.0 * (half(w0, w1) + half(w1, w0)) / (w0 * w0 * w1 * w1)
}

/// `int_0^w1 exp(-xi^2 / 4 tau) xi^-gamma (w1 - xi) dxi`, with `xi = v^p`,
/// `p = 1/(1 - gamma)`, removing the singularity at 0.
fn thermal_space_tent(tau: f64, w1: f64, gamma: f64) -> f64 {
    let p = 1.0 / (1.0 - gamma);
    integrate(
        |v: f64| {
            let xi = v.powf(p);
            let jac = p * v.powf(p - 1.0);
            let g = if gamma == 0.0 { 1.0 } else { xi.powf(-gamma) };
            (-xi * xi / (4.0 * tau)).exp() * g * (w1 - xi) * jac
        },
        0.0,
        w1.powf(1.0 / p),
        64,
    )
}

/// Cell average of the thermal kernel over a `w0 (time) x w1 (space)` box.
fn thermal_box_average(w0: f64, w1: f64, gamma: f64) -> f64 {
    if gamma >= 1.0 {
        return f64::INFINITY;
    }
    let outer = integrate(|u: f64| 2.0 * (w0 - u * u) * thermal_space_tent(u * u, w1, gamma), 0.0, w0.sqrt(), 64);
    4.0 * outer / (w0 * w0 * w1 * w1)
}

/// Exact average of `|s - t|^{-1/2}` over two collinear cells of width `w`
/// whose centres are `d` apart, from the second antiderivative `(4/3)|z|^{3/2}`.
fn segment_pair_average(d: f64, w: f64) -> f64 {
    let k2 = |z: f64| z.abs().powf(1.5);
    4.0 / 3.0 * (k2(d + w) - 2.0 * k2(d) + k2(d - w)) / (w * w)
}

/// `int_{-w}^{w} exp(-(xi + d)^2 / 4T) (w - |xi|) dxi` in closed form.
fn gaussian_tent(d: f64, w: f64, t: f64) -> f64 {
    let rt = t.sqrt();
    let phi = |z: f64| (std::f64::consts::PI * t).sqrt() * statrs::function::erf::erf(z / (2.0 * rt));
    let g = |z: f64| -2.0 * t * (-z * z / (4.0 * t)).exp();
    let left = (w - d) * (phi(d) - phi(d - w)) + (g(d) - g(d - w));
    let right = (w + d) * (phi(d + w) - phi(d)) - (g(d + w) - g(d));
    left + right
}

/// Average of the `gamma = 0` thermal kernel over two `w0 x w1` cells with
/// centre offsets `(d0, d1)`. The time integral is split where the time
/// difference vanishes and at the tent kink, and each piece is
/// substituted `tau = end + u^2` towards its singular end.
fn thermal_pair_average(d0: f64, d1: f64, w0: f64, w1: f64) -> f64 {
    let f = |tau: f64| {
        let t = (d0 + tau).abs();
        if t == 0.0 {
            return 0.0;
        }
        gaussian_tent(d1, w1, t) / t.sqrt() * (w0 - tau.abs())
    };
    let mut cuts = vec![-w0, 0.0, w0, -d0];
    cuts.retain(|c| *c >= -w0 && *c <= w0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for c in cuts.windows(2) {
        let (a, b) = (c[0], c[1]);
        if b - a <= 0.0 {
            continue;
        }
        let sing = -d0;
        total += if (a - sing).abs() < 1e-15 {
            integrate(|u| 2.0 * u * f(a + u * u), 0.0, (b - a).sqrt(), 48)
        } else if (b - sing).abs() < 1e-15 {
            integrate(|u| 2.0 * u * f(b - u * u), 0.0, (b - a).sqrt(), 48)
        } else {
            integrate(f, a, b, 48)
        };
    }
    total / (w0 * w0 * w1 * w1)
}

/// Off-diagonal entry; near-diagonal pairs of equal cells use exact cell
/// averages where the kernel is too singular for the midpoint rule.
fn pair_value(kind: &EnergyKind, a: &Cell, b: &Cell) -> f64 {
    let same = a.extent == b.extent;
    let [w0, w1] = a.extent;
    let d0 = b.center[0] - a.center[0];
    let d1 = b.center[1] - a.center[1];
    match *kind {
        EnergyKind::Thermal { gamma: 0.0 } if same && w0 > 0.0 && w1 == 0.0 && d1 == 0.0 && d0.abs() <= 3.5 * w0 => {
            segment_pair_average(d0, w0)
        }
        EnergyKind::Thermal { gamma: 0.0 } if same && w0 > 0.0 && w1 > 0.0 && d0.abs() <= 2.5 * w0 => {
            thermal_pair_average(d0, d1, w0, w1)
        }
        // Same space column with gamma > 0: the centre value is infinite, so
        // average the space factor over both cells at the centre time gap.
        EnergyKind::Thermal { gamma } if gamma > 0.0 && same && w1 > 0.0 && d1 == 0.0 && d0 != 0.0 => {
            if gamma >= 1.0 {
                return f64::INFINITY;
            }
            let t = d0.abs();
            2.0 * thermal_space_tent(t, w1, gamma) / (w1 * w1 * t.sqrt())
        }
        EnergyKind::BesselRiesz if same && (w0 > 0.0) != (w1 > 0.0) => {
            let (w, along, across) = if w0 > 0.0 { (w0, d0, d1) } else { (w1, d1, d0) };
            if across == 0.0 && along.abs() <= 3.5 * w {
                segment_pair_average(along, w)
            } else {
                kind.kernel(a.center, b.center)
            }
        }
        _ => kind.kernel(a.center, b.center),
    }
}

fn kernel_matrix(cells: &[Cell], kind: &EnergyKind) -> Vec<Vec<f64>> {
    cells
        .par_iter()
        .enumerate()
        .map(|(i, ci)| cells.iter().enumerate().map(|(j, cj)| if i == j { kind.self_energy(ci) } else { pair_value(kind, ci, cj) }).collect())
        .collect()
}

fn quadratic_form(k: &[Vec<f64>], w: &[f64]) -> f64 {
    k.par_iter()
        .zip(w.par_iter())
        .filter(|(_, wi)| **wi > 0.0)
        .map(|(row, wi)| wi * row.iter().zip(w).filter(|(_, wj)| **wj > 0.0).map(|(kij, wj)| kij * wj).sum::<f64>())
        .sum()
}

fn energy_of(mu: &GridMeasure, kind: &EnergyKind) -> Result<f64> {
    kind.check()?;
    let k = kernel_matrix(&mu.cells, kind);
    let e = quadratic_form(&k, &mu.weights);
    Ok(if e > ENERGY_INFINITY || e.is_nan() { f64::INFINITY } else { e })
}

/// Sum of `w_i w_j K(p_i, p_j)` with the kernel
/// `exp(-|x-y|^2 / 4|t-s|) / (|t-s|^{1/2} |x-y|^gamma)` off the diagonal
/// and the cell average on it.
pub fn thermal_energy(mu: &GridMeasure, gamma: f64) -> Result<f64> {
    energy_of(mu, &EnergyKind::Thermal { gamma })
}

/// Sum of `w_i w_j |p_i - p_j|^{-1/2}` with the cell average on the diagonal.
pub fn bessel_riesz_energy(mu: &GridMeasure) -> Result<f64> {
    energy_of(mu, &EnergyKind::BesselRiesz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityOptions {
    /// Per-time-slice mass cap is `kappa * h / diam_time`.
    pub kappa: f64,
    pub max_iter: usize,
    /// Stop once the duality gap is below `rel_gap * energy`.
    pub rel_gap: f64,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self { kappa: 4.0, max_iter: 200_000, rel_gap: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub capacity: f64,
    pub energy: f64,
    pub uniform_energy: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub slice_cap: Option<f64>,
    pub measure: Option<GridMeasure>,
}

impl CapacityResult {
    fn zero(reason_energy: f64, slice_cap: Option<f64>) -> Self {
        Self { capacity: 0.0, energy: reason_energy, uniform_energy: reason_energy, duality_gap: 0.0, iterations: 0, slice_cap, measure: None }
    }
}

/// Groups cells into time slices by their time coordinate.
fn time_slices(cells: &[Cell]) -> Vec<usize> {
    let mut keys: Vec<f64> = cells.iter().map(|c| c.center[0]).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    cells.iter().map(|c| keys.partition_point(|k| *k < c.center[0] - 1e-12)).collect()
}

/// Vertex of `{w >= 0, sum w = 1, slice mass <= cap}` minimising `<g, w>`:
/// fill slices in order of their cheapest cell, each up to the cap.
fn lmo(g: &[f64], slice: &[usize], n_slices: usize, cap: f64) -> Vec<(usize, f64)> {
    let mut best = vec![usize::MAX; n_slices];
    for (i, &s) in slice.iter().enumerate() {
        if best[s] == usize::MAX || g[i] < g[best[s]] {
            best[s] = i;
        }
    }
    let mut order: Vec<usize> = best.into_iter().filter(|i| *i != usize::MAX).collect();
    order.sort_by(|a, b| g[*a].total_cmp(&g[*b]));
    let mut left = 1.0;
    let mut out = Vec::new();
    for i in order {
        let m = cap.min(left);
        out.push((i, m));
        left -= m;
        if left <= 1e-15 {
            break;
        }
    }
    out
}

/// `1 / min energy` over probability measures on the `h`-discretisation,
/// minimised by Frank-Wolfe with exact line search. Thermal capacities cap
/// the mass of each time slice at `kappa h / diam_time`; a set with one
/// time slice therefore has capacity 0.
pub fn capacity(set: &CompactSetSpec, kind: EnergyKind, h: f64, opts: &CapacityOptions) -> Result<CapacityResult> {
    kind.check()?;
    let all = set.discretise(h)?;
    let kmat_all = kernel_matrix(&all, &kind);
    let keep: Vec<usize> = (0..all.len()).filter(|&i| kmat_all[i][i].is_finite()).collect();
    let thermal = matches!(kind, EnergyKind::Thermal { .. });
    let cap = if thermal {
        let (t0, t1) = set.first_extent();
        let diam = t1 - t0;
        if diam <= 0.0 {
            return Ok(CapacityResult::zero(f64::INFINITY, Some(0.0)));
        }
        Some((opts.kappa * h / diam).min(1.0))
    } else {
        None
    };
    if keep.is_empty() {
        return Ok(CapacityResult::zero(f64::INFINITY, cap));
    }
    let cells: Vec<Cell> = keep.iter().map(|&i| all[i]).collect();
    let k: Vec<Vec<f64>> = keep.iter().map(|&i| keep.iter().map(|&j| kmat_all[i][j]).collect()).collect();
    let m = cells.len();
    let (slice, n_slices) = if thermal {
        let s = time_slices(&cells);
        let n = s.iter().max().map_or(0, |v| v + 1);
        (s, n)
    } else {
        ((0..m).collect(), m)
    };
    let cap_v = cap.unwrap_or(1.0);
    if (n_slices as f64) * cap_v < 1.0 - 1e-12 {
        return Ok(CapacityResult::zero(f64::INFINITY, cap));
    }
    // Start: equal mass per slice, spread evenly inside each slice.
    let mut per_slice = vec![0usize; n_slices];
    slice.iter().for_each(|s| per_slice[*s] += 1);
    let mut w: Vec<f64> = slice.iter().map(|s| 1.0 / (n_slices as f64 * per_slice[*s] as f64)).collect();
    let uniform = GridMeasure::uniform(cells.clone(), h)?;
    let uniform_energy = quadratic_form(&k, &uniform.weights);
    let mut kw: Vec<f64> = k.par_iter().map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let mut energy: f64 = w.iter().zip(&kw).map(|(a, b)| a * b).sum();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let g: Vec<f64> = kw.iter().map(|v| 2.0 * v).collect();
        let s = lmo(&g, &slice, n_slices, cap_v);
        let gs: f64 = s.iter().map(|(i, m)| g[*i] * m).sum();
        let gw: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
        gap = gw - gs;
        if gap <= opts.rel_gap * energy {
            break;
        }
        let ks: Vec<f64> = k.par_iter().map(|row| s.iter().map(|(j, mj)| row[*j] * mj).sum()).collect();
        let sks: f64 = s.iter().map(|(i, mi)| mi * ks[*i]).sum();
        let wks: f64 = w.iter().zip(&ks).map(|(a, b)| a * b).sum();
        let dkd = sks - 2.0 * wks + energy;
        let step = if dkd > 0.0 { (gap / (2.0 * dkd)).clamp(0.0, 1.0) } else { 1.0 };
        w.iter_mut().for_each(|v| *v *= 1.0 - step);
        for (i, mi) in &s {
            w[*i] += step * mi;
        }
        kw.iter_mut().zip(&ks).for_each(|(a, b)| *a = (1.0 - step) * *a + step * b);
        energy = w.iter().zip(&kw).map(|(a, b)| a * b).sum();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let measure = GridMeasure::new(cells, w, h)?;
    let capacity = if energy > ENERGY_INFINITY { 0.0 } else { 1.0 / energy };
    Ok(CapacityResult { capacity, energy, uniform_energy, duality_gap: gap, iterations, slice_cap: cap, measure: Some(measure) })
}

/// Slope of `log N(delta)` against `log(1/delta)`, where `N` counts boxes of
/// time side `delta^2` and space side `delta` meeting the set (plain
/// `delta`-squares for planar sets).
pub fn parabolic_dim(set: &CompactSetSpec, scales: &[f64]) -> Result<f64> {
    set.validate()?;
    if scales.len() < 3 {
        return Err(LabError::DegenerateFit(format!("need at least 3 scales, got {}", scales.len())));
    }
    let mut pts = Vec::with_capacity(scales.len());
    for &d in scales {
        if !(d > 0.0) {
            return Err(LabError::InvalidParameter(format!("scale must be positive, got {d}")));
        }
        let side0 = if set.ambient == Ambient::TimeSpace { d * d } else { d };
        pts.push(((1.0 / d).ln(), (box_count(set, side0, d) as f64).ln()));
    }
    least_squares_slope(&pts)
}

fn box_count(set: &CompactSetSpec, s0: f64, s1: f64) -> usize {
    let idx = |v: f64, s: f64| (v / s + 1e-9).floor() as i64;
    let mut cells: HashSet<(i64, i64)> = HashSet::new();
    for b in &set.boxes {
        for i in idx(b[0], s0)..=idx(b[1], s0) {
            for j in idx(b[2], s1)..=idx(b[3], s1) {
                cells.insert((i, j));
            }
        }
    }
    for p in &set.points {
        cells.insert((idx(p[0], s0), idx(p[1], s1)));
    }
    cells.len()
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Result<f64> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-12 {
        return Err(LabError::DegenerateFit("scales do not vary".into()));
    }
    Ok(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Finite union of closed intervals (points are degenerate intervals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IntervalSet {
    pub intervals: Vec<[f64; 2]>,
}

impl IntervalSet {
    pub fn new(intervals: Vec<[f64; 2]>) -> Self {
        Self { intervals }
    }

    pub fn point(x: f64) -> Self {
        Self { intervals: vec![[x, x]] }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.intervals.iter().any(|[a, b]| v >= *a && v <= *b)
    }

    pub fn max(&self) -> Option<f64> {
        self.intervals.iter().map(|i| i[1]).reduce(f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum HittingProcess {
    /// Brownian motion of the given rate started at `start` at time 0.
    /// With `bridge_correction`, a crossing between grid points is also
    /// counted with the Brownian-bridge probability `exp(-2ab / (rate dt))`.
    Brownian { rate: f64, start: f64, bridge_correction: bool },
    /// Unit-time KPZ profile `y -> h(y)` from prelimit driving paths.
    Kpz { h0: InitialData, n: usize, estimator: Estimator },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingResult {
    pub hits: usize,
    pub trials: usize,
    pub frequency: f64,
    pub ci: (f64, f64),
}

/// Whether the segment from `(t_i, v0)` to `(t_i+1, v1)` meets `F`.
fn segment_hits<R: Rng + ?Sized>(f: &IntervalSet, v0: f64, v1: f64, bridge_var: Option<f64>, rng: &mut R) -> bool {
    let (lo, hi) = (v0.min(v1), v0.max(v1));
    for &[a, b] in &f.intervals {
        if hi >= a && lo <= b {
            return true;
        }
        if let Some(var) = bridge_var {
            let c = if lo > b { b } else { a };
            let p = (-2.0 * (v0 - c) * (v1 - c) / var).exp();
            if rng.random::<f64>() < p {
                return true;
            }
        }
    }
    false
}

fn path_hits<R: Rng + ?Sized>(e: &IntervalSet, f: &IntervalSet, t0: f64, dt: f64, path: &[f64], bridge_var: Option<f64>, rng: &mut R) -> bool {
    let time = |i: usize| t0 + i as f64 * dt;
    for &[a, b] in &e.intervals {
        let ia = ((a - t0) / dt).round() as usize;
        let ib = ((b - t0) / dt).round() as usize;
        if ia == ib {
            if f.contains(path[ia]) {
                return true;
            }
            continue;
        }
        for i in ia..ib {
            debug_assert!(time(i) >= a - dt);
            if segment_hits(f, path[i], path[i + 1], bridge_var, rng) {
                return true;
            }
        }
    }
    false
}

/// Fraction of trials whose graph `{(t, X_t)}` meets `E x F`, with a 95%
/// Wilson interval. Times in `E` are snapped to the simulation grid.
pub fn hitting_mc(e: &IntervalSet, f: &IntervalSet, process: &HittingProcess, trials: usize, dt: f64, stream: RngStream) -> Result<HittingResult> {
    let t_end = e.max().ok_or_else(|| LabError::InvalidParameter("time set is empty".into()))?;
    if trials == 0 {
        return Err(LabError::InvalidParameter("need at least one trial".into()));
    }
    let hit: Vec<bool> = match process {
        HittingProcess::Brownian { rate, start, bridge_correction } => {
            if e.intervals.iter().any(|i| i[0] < 0.0) {
                return Err(LabError::WindowTooSmall("time set starts before 0".into()));
            }
            let steps = (t_end / dt).round() as usize;
            let sd = (rate * dt).sqrt();
            let var = bridge_correction.then_some(rate * dt);
            (0..trials as u64)
                .into_par_iter()
                .map(|i| {
                    if f.is_empty() {
                        return false;
                    }
                    let mut rng = stream.trial(i);
                    let mut path = Vec::with_capacity(steps + 1);
                    path.push(*start);
                    for k in 0..steps {
                        let z: f64 = rng.sample(StandardNormal);
                        path.push(path[k] + sd * z);
                    }
                    path_hits(e, f, 0.0, dt, &path, var, &mut rng)
                })
                .collect()
        }
        HittingProcess::Kpz { h0, n, estimator } => {
            let t_start = e.intervals.iter().map(|i| i[0]).fold(f64::INFINITY, f64::min);
            let p = Prelimit::new(*n);
            let hull = h0.hull().ok_or(LabError::EmptySupport)?;
            if !h0.has_bounded_support() {
                return Err(LabError::WindowTooSmall("hitting for KPZ needs bounded initial support".into()));
            }
            let stride = if *estimator == Estimator::Richardson { 4 } else { 1 };
            let res: Result<Vec<bool>> = (0..trials as u64)
                .into_par_iter()
                .map(|i| {
                    if f.is_empty() {
                        return Ok(false);
                    }
                    let mut rng = stream.trial(i);
                    let d = DrivingPaths::sample(*n, p.raw_start(hull.0).min(0.0), p.raw_end(t_end), dt, &mut rng)?;
                    let h = evolve_direct(h0, &d, (t_start, t_end), 1.0, stride, *estimator, &EvolveOptions::default())?;
                    let e_local = IntervalSet::new(e.intervals.iter().map(|[a, b]| [a.max(h.grid.t0), b.min(h.grid.end())]).collect());
                    Ok(path_hits(&e_local, f, h.grid.t0, h.grid.dt, &h.values, None, &mut rng))
                })
                .collect();
            res?
        }
    };
    let hits = hit.iter().filter(|h| **h).count();
    Ok(HittingResult { hits, trials, frequency: hits as f64 / trials as f64, ci: wilson_ci(hits, trials, 0.95)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub box_dim: f64,
    pub lebesgue_estimate: f64,
}

/// Box-counting dimension and covered length of `S(E)` over the sheet grid
/// points in `E`. The resolution is the largest value jump between
/// neighbouring grid points of `E`; gaps up to that size count as covered.
pub fn image_geometry(sheet: &SheetSample, e: &CompactSetSpec) -> Result<ImageGeometry> {
    e.validate()?;
    let (nx, ny) = (sheet.nx(), sheet.ny());
    let mut inside = vec![false; nx * ny];
    let mut vals = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            let p = [sheet.x_grid.time(ix), sheet.y_grid.time(iy)];
            if e.contains(p) {
                inside[ix * ny + iy] = true;
                vals.push(sheet.get(ix, iy));
            }
        }
    }
    if vals.is_empty() {
        return Err(LabError::Domain("set contains no sheet grid point".into()));
    }
    let mut res = 0.0f64;
    for ix in 0..nx {
        for iy in 0..ny {
            if !inside[ix * ny + iy] {
                continue;
            }
            if ix + 1 < nx && inside[(ix + 1) * ny + iy] {
                res = res.max((sheet.get(ix + 1, iy) - sheet.get(ix, iy)).abs());
            }
            if iy + 1 < ny && inside[ix * ny + iy + 1] {
                res = res.max((sheet.get(ix, iy + 1) - sheet.get(ix, iy)).abs());
            }
        }
    }
    vals.sort_by(f64::total_cmp);
    let range = vals[vals.len() - 1] - vals[0];
    if range == 0.0 {
        return Ok(ImageGeometry { box_dim: 0.0, lebesgue_estimate: 0.0 });
    }
    let lebesgue_estimate: f64 = vals.windows(2).map(|w| w[1] - w[0]).filter(|g| *g <= res).sum();
    let (lo, hi) = if res > 0.0 && res < range / 8.0 {
        (res, range / 4.0)
    } else {
        let min_gap = vals.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).fold(f64::INFINITY, f64::min);
        (min_gap / 16.0, min_gap / 2.0)
    };
    let pts: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let eps = lo * (hi / lo).powf(k as f64 / 5.0);
            let mut count = 0usize;
            let mut last = i64::MIN;
            for v in &vals {
                let b = ((v - vals[0]) / eps).floor() as i64;
                if b != last {
                    count += 1;
                    last = b;
                }
            }
            ((1.0 / eps).ln(), (count as f64).ln())
        })
        .collect();
    Ok(ImageGeometry { box_dim: least_squares_slope(&pts)?, lebesgue_estimate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment_time() -> CompactSetSpec {
        CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 1.0, 0.0, 0.0]])
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let v = integrate(|x| x.powi(7) - 3.0 * x * x, -1.0, 2.0, 8);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn uniform_segment_energy() {
        let cells = segment_time().discretise(1.0 / 400.0).unwrap();
        let mu = GridMeasure::uniform(cells, 1.0 / 400.0).unwrap();
        let e = thermal_energy(&mu, 0.0).unwrap();
        assert!((e / (8.0 / 3.0) - 1.0).abs() < 0.01, "{e}");
    }

    #[test]
    fn atoms_are_infinite() {
        let set = CompactSetSpec::points(Ambient::Plane, vec![[0.0, 0.0], [1.0, 0.0]]);
        let mu = GridMeasure::uniform(set.discretise(0.1).unwrap(), 0.1).unwrap();
        assert_eq!(bessel_riesz_energy(&mu).unwrap(), f64::INFINITY);
        assert_eq!(thermal_energy(&mu, 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn negative_gamma_rejected() {
        let mu = GridMeasure::uniform(segment_time().discretise(0.1).unwrap(), 0.1).unwrap();
        assert!(thermal_energy(&mu, -0.5).is_err());
    }

    #[test]
    fn single_point_capacity_is_zero() {
        let set = CompactSetSpec::points(Ambient::TimeSpace, vec![[0.3, 0.1]]);
        let r = capacity(&set, EnergyKind::Thermal { gamma: 0.0 }, 0.01, &CapacityOptions::default()).unwrap();
        assert_eq!(r.capacity, 0.0);
        let r = capacity(&set, EnergyKind::BesselRiesz, 0.01, &CapacityOptions::default()).unwrap();
        assert_eq!(r.capacity, 0.0);
    }

    #[test]
    fn dimension_of_segments() {
        let scales = [0.1, 0.05, 0.02, 0.01];
        assert!((parabolic_dim(&segment_time(), &scales).unwrap() - 2.0).abs() < 0.1);
        let space = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 0.0, 0.0, 1.0]]);
        assert!((parabolic_dim(&space, &scales).unwrap() - 1.0).abs() < 0.1);
        let pt = CompactSetSpec::points(Ambient::TimeSpace, vec![[0.5, 0.5]]);
        assert!(parabolic_dim(&pt, &scales).unwrap().abs() < 0.05);
        assert!(matches!(parabolic_dim(&pt, &[0.1, 0.1, 0.1]), Err(LabError::DegenerateFit(_))));
    }

    #[test]
    fn empty_target_never_hit() {
        let e = IntervalSet::new(vec![[1.0, 2.0]]);
        let p = HittingProcess::Brownian { rate: 1.0, start: 0.0, bridge_correction: true };
        let r = hitting_mc(&e, &IntervalSet::default(), &p, 50, 1e-2, RngStream::new(1, 1)).unwrap();
        assert_eq!(r.hits, 0);
        let wide = IntervalSet::new(vec![[-1e3, 1e3]]);
        assert_eq!(hitting_mc(&e, &wide, &p, 50, 1e-2, RngStream::new(1, 1)).unwrap().hits, 50);
    }

    #[test]
    fn same_column_thermal_entry_is_space_average() {
        let (w, t, gamma) = (0.1, 0.05, 0.5);
        let a = Cell { center: [0.0, 0.0], extent: [w, w] };
        let b = Cell { center: [t, 0.0], extent: [w, w] };
        let got = pair_value(&EnergyKind::Thermal { gamma }, &a, &b);
        // Oracle: the difference of two uniform points on [0, w] has density
        // (w - |xi|) / w^2; xi = u^2 makes the integrand smooth for Simpson.
        let m = 20_000;
        let hu = w.sqrt() / m as f64;
        let f = |u: f64| {
            let xi = u * u;
            (-xi * xi / (4.0 * t)).exp() * u.powf(1.0 - 2.0 * gamma) * 2.0 * (w - xi)
        };
        let mut sum = f(0.0) + f(w.sqrt());
        for i in 1..m {
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * hu);
        }
        let sum = sum * hu / 3.0 * 2.0 / (w * w);
        let want = sum / t.sqrt();
        assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn square_has_finite_thermal_capacity() {
        let sq = CompactSetSpec::boxes(Ambient::TimeSpace, vec![[0.0, 1.0, 0.0, 1.0]]);
        let r = capacity(&sq, EnergyKind::Thermal { gamma: 0.5 }, 0.125, &CapacityOptions::default()).unwrap();
        assert!(r.capacity.is_finite() && r.capacity > 0.0, "{r:?}");
    }
}
