//! Prelimit Airy line ensemble and Airy sheet built from `n` rate-one
//! Brownian motions by melon edge scaling.
//!
//! Raw time `r` and Airy coordinates are related by `r = 2x n^{-1/3}` for
//! sheet start points and `r = 1 + 2y n^{-1/3}` for end points, and
//!
//! ```text
//! A_i(y)  = n^{1/6} (melon_i(1 + 2y n^{-1/3}) - 2 sqrt n) - 2y n^{1/3}
//! S(x, y) = n^{1/6} (L[(2x n^{-1/3}, n) -> (1 + 2y n^{-1/3}, 1)] - 2 sqrt n) - 2(y - x) n^{1/3}
//! ```
//!
//! The driving paths are two-sided and vanish at raw time 0, so the melon
//! from time 0 and the sheet row `x = 0` are built from the same data.

use rand::Rng;
use rayon::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::kpz_engine::InitialData;
use crate::lpp_core::{self, BoundaryData, LineEnsembleGrid};
use crate::path_sampler::{Grid, GridFunction};

/// How grid values are turned into estimates of the continuum object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Estimator {
    /// Exact last passage values of the sampled grid environment.
    #[default]
    Grid,
    /// `2 v(dt) - v(4 dt)` on the same paths, cancelling the `sqrt(dt)`
    /// discretisation bias of grid last passage values.
    Richardson,
}

/// Time change between raw melon time and the ensemble coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scaling {
    /// `r = 1 + 2y n^{-1/3}`.
    #[default]
    Linear,
    /// `r = exp(2y n^{-1/3})` with the melon divided by `sqrt r`; the
    /// one-point law of `A_1(y) + y^2` is then exactly that of `A_1(0)`.
    Exponential,
}

/// Scaling constants of the prelimit with `n` lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prelimit {
    pub n: usize,
    pub n13: f64,
    pub n16: f64,
    pub sqrt_n: f64,
}

impl Prelimit {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        Self { n, n13: nf.cbrt(), n16: nf.powf(1.0 / 6.0), sqrt_n: nf.sqrt() }
    }

    pub fn raw_start(&self, x: f64) -> f64 {
        2.0 * x / self.n13
    }

    pub fn raw_end(&self, y: f64) -> f64 {
        1.0 + 2.0 * y / self.n13
    }

    pub fn x_of_raw(&self, r: f64) -> f64 {
        r * self.n13 / 2.0
    }

    pub fn y_of_raw(&self, r: f64) -> f64 {
        (r - 1.0) * self.n13 / 2.0
    }

    /// Airy-sheet value from a raw last passage value.
    pub fn sheet_value(&self, raw_lpp: f64, x: f64, y: f64) -> f64 {
        self.n16 * (raw_lpp - 2.0 * self.sqrt_n) - 2.0 * (y - x) * self.n13
    }
}

/// `n` independent rate-one Brownian motions on a raw grid that contains
/// time 0, where every path vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPaths {
    pub prelimit: Prelimit,
    pub paths: LineEnsembleGrid,
    /// Grid index of raw time 0; a multiple of 4.
    pub zero: usize,
}

impl DrivingPaths {
    /// Forward increments of every path are drawn before any backward ones,
    /// so paths on `[0, t_max]` do not depend on `t_min`.
    pub fn sample<R: Rng + ?Sized>(n: usize, t_min: f64, t_max: f64, dt: f64, rng: &mut R) -> Result<Self> {
        if n < 1 {
            return Err(LabError::InvalidParameter("need at least one driving path".into()));
        }
        if !(dt > 0.0) || t_min > 0.0 || !(t_max > 0.0) {
            return Err(LabError::InvalidParameter(format!("bad raw window [{t_min}, {t_max}] or dt {dt}")));
        }
        let zero = round_up4((-t_min / dt - 1e-9).ceil().max(0.0) as usize);
        let fwd = round_up4((t_max / dt - 1e-9).ceil() as usize);
        let n_points = zero + fwd + 1;
        let grid = Grid::new(-(zero as f64) * dt, dt, n_points)?;
        let sd = dt.sqrt();
        let mut lines = vec![vec![0.0; n_points]; n];
        for line in lines.iter_mut() {
            for i in zero + 1..n_points {
                let z: f64 = rng.sample(StandardNormal);
                line[i] = line[i - 1] + sd * z;
            }
        }
        for line in lines.iter_mut() {
            for i in (0..zero).rev() {
                let z: f64 = rng.sample(StandardNormal);
                line[i] = line[i + 1] + sd * z;
            }
        }
        Ok(Self { prelimit: Prelimit::new(n), paths: LineEnsembleGrid { grid, lines }, zero })
    }

    pub fn grid(&self) -> Grid {
        self.paths.grid
    }

    pub fn raw_time(&self, i: usize) -> f64 {
        (i as f64 - self.zero as f64) * self.paths.grid.dt
    }

    pub fn last_index(&self) -> usize {
        self.paths.grid.n_points - 1
    }

    /// Same paths observed every `stride` steps.
    pub fn coarsened(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.zero % stride != 0 {
            return Err(LabError::InvalidParameter(format!("stride {stride} does not divide the zero index")));
        }
        Ok(Self { prelimit: self.prelimit, paths: self.paths.subsample(0, stride)?, zero: self.zero / stride })
    }

    /// Raw indices (congruent to 0 mod `stride` relative to time 0) whose
    /// raw times lie in `[r0, r1]`.
    fn raw_range(&self, r0: f64, r1: f64, stride: usize) -> Result<(usize, usize)> {
        let dt = self.paths.grid.dt;
        let z = self.zero as i64;
        let s = stride as i64;
        let lo = ((r0 / dt - 1e-9).ceil() as i64).div_euclid(1);
        let hi = (r1 / dt + 1e-9).floor() as i64;
        let lo = lo + (s - lo.rem_euclid(s)) % s;
        let hi = hi - hi.rem_euclid(s);
        let (lo, hi) = (lo + z, hi + z);
        if lo < 0 || hi > self.last_index() as i64 || hi <= lo {
            return Err(LabError::Domain(format!(
                "raw window [{r0:.6}, {r1:.6}] not inside the sampled horizon [{:.6}, {:.6}] with two points at stride {stride}",
                self.raw_time(0),
                self.raw_time(self.last_index())
            )));
        }
        Ok((lo as usize, hi as usize))
    }

    /// Sheet start axis covering the Airy window `[x0, x1]`.
    pub fn x_axis(&self, window: (f64, f64), stride: usize) -> Result<Axis> {
        let p = self.prelimit;
        let (lo, hi) = self.raw_range(p.raw_start(window.0), p.raw_start(window.1), stride)?;
        let raw: Vec<usize> = (lo..=hi).step_by(stride).collect();
        let grid = Grid::new(p.x_of_raw(self.raw_time(lo)), stride as f64 * self.paths.grid.dt * p.n13 / 2.0, raw.len())?;
        Ok(Axis { grid, raw })
    }

    /// Sheet end axis covering the Airy window `[y0, y1]`.
    pub fn y_axis(&self, window: (f64, f64), stride: usize) -> Result<Axis> {
        let p = self.prelimit;
        let (lo, hi) = self.raw_range(p.raw_end(window.0), p.raw_end(window.1), stride)?;
        let raw: Vec<usize> = (lo..=hi).step_by(stride).collect();
        let grid = Grid::new(p.y_of_raw(self.raw_time(lo)), stride as f64 * self.paths.grid.dt * p.n13 / 2.0, raw.len())?;
        Ok(Axis { grid, raw })
    }

    /// Raw last passage values from `(raw_start, n)` to `(t, 1)` for every
    /// grid `t >= raw_start`; index 0 of the result is `raw_start`.
    pub fn row_raw(&self, start: usize) -> Vec<f64> {
        let n = self.prelimit.n;
        let mut c = vec![f64::NEG_INFINITY; self.paths.grid.n_points - start];
        c[0] = 0.0;
        lpp_core::dp_forward(&self.paths.lines, start, &mut c, n - 1, 0);
        c
    }

    /// Raw last passage values from `(s, n)` to `(end, 1)` for every grid `s <= end`.
    pub fn column_raw(&self, end: usize) -> Vec<f64> {
        lpp_core::dp_backward(&self.paths.lines, end, self.prelimit.n - 1, 0)
    }

    /// Raw values `max_s (init(s) + L[(s, n) -> (t, 1)])` for all grid `t >= lo`,
    /// where `init` is indexed from `lo` and may contain `-inf`.
    pub fn evolve_raw(&self, lo: usize, init: &[f64]) -> Vec<f64> {
        let mut c = vec![f64::NEG_INFINITY; self.paths.grid.n_points - lo];
        c[..init.len()].copy_from_slice(init);
        lpp_core::dp_forward(&self.paths.lines, lo, &mut c, self.prelimit.n - 1, 0);
        c
    }
}

fn round_up4(i: usize) -> usize {
    i.div_ceil(4) * 4
}

/// A uniform Airy-unit grid together with the raw indices it samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub grid: Grid,
    pub raw: Vec<usize>,
}

impl Axis {
    fn coarse(&self, stride: usize) -> Vec<usize> {
        self.raw.iter().map(|r| r / stride).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiryEnsembleApprox {
    pub n: usize,
    pub ensemble: LineEnsembleGrid,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetSample {
    pub x_grid: Grid,
    pub y_grid: Grid,
    /// Row-major: `values[ix * ny + iy]`.
    pub values: Vec<f64>,
    pub scale: f64,
}

impl SheetSample {
    pub fn new(x_grid: Grid, y_grid: Grid, values: Vec<f64>, scale: f64) -> Result<Self> {
        if values.len() != x_grid.n_points * y_grid.n_points {
            return Err(LabError::InvalidParameter("sheet value count does not match grids".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("sheet values must be finite".into()));
        }
        if !(scale > 0.0) {
            return Err(LabError::InvalidParameter("sheet scale must be positive".into()));
        }
        Ok(Self { x_grid, y_grid, values, scale })
    }

    pub fn from_fn(x_grid: Grid, y_grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(x_grid.n_points * y_grid.n_points);
        for x in x_grid.times() {
            for y in y_grid.times() {
                values.push(f(x, y));
            }
        }
        Self::new(x_grid, y_grid, values, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.x_grid.n_points
    }

    pub fn ny(&self) -> usize {
        self.y_grid.n_points
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.y_grid.n_points + iy]
    }

    pub fn value(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.get(self.x_grid.index_of(x)?, self.y_grid.index_of(y)?))
    }

    pub fn row(&self, ix: usize) -> &[f64] {
        let ny = self.y_grid.n_points;
        &self.values[ix * ny..(ix + 1) * ny]
    }

    pub fn column(&self, iy: usize) -> Vec<f64> {
        (0..self.nx()).map(|ix| self.get(ix, iy)).collect()
    }

    /// The sheet of scale `s` built from this one: `(x, y) -> s S(x/s^2, y/s^2)`.
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(LabError::InvalidParameter("scale must be positive".into()));
        }
        let s2 = s * s;
        let x_grid = Grid::new(self.x_grid.t0 * s2, self.x_grid.dt * s2, self.x_grid.n_points)?;
        let y_grid = Grid::new(self.y_grid.t0 * s2, self.y_grid.dt * s2, self.y_grid.n_points)?;
        Ok(Self { x_grid, y_grid, values: self.values.iter().map(|v| v * s).collect(), scale: self.scale * s })
    }
}

fn check_richardson(est: Estimator, stride: usize) -> Result<()> {
    if est == Estimator::Richardson && stride % 4 != 0 {
        return Err(LabError::InvalidParameter(format!("Richardson estimates need a stride divisible by 4, got {stride}")));
    }
    Ok(())
}

fn raw_sheet(d: &DrivingPaths, xs: &[usize], ys: &[usize]) -> Result<Vec<f64>> {
    if let (Some(&xi), Some(&yi)) = (xs.last(), ys.first()) {
        if yi < xi {
            return Err(LabError::Domain(format!(
                "sheet end time {:.6} precedes start time {:.6}",
                d.raw_time(yi),
                d.raw_time(xi)
            )));
        }
    }
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&xi| {
            let row = d.row_raw(xi);
            ys.iter().map(|&yi| row[yi - xi]).collect()
        })
        .collect();
    Ok(rows.concat())
}

/// Prelimit sheet on Airy windows; `stride` is the raw-grid step between
/// neighbouring sheet grid points.
pub fn sheet_from_driving(d: &DrivingPaths, x_window: (f64, f64), y_window: (f64, f64), stride: usize, est: Estimator) -> Result<SheetSample> {
    check_richardson(est, stride)?;
    let xa = d.x_axis(x_window, stride)?;
    let ya = d.y_axis(y_window, stride)?;
    let p = d.prelimit;
    let fine = raw_sheet(d, &xa.raw, &ya.raw)?;
    let coarse = match est {
        Estimator::Grid => None,
        Estimator::Richardson => Some(raw_sheet(&d.coarsened(4)?, &xa.coarse(4), &ya.coarse(4))?),
    };
    let mut values = Vec::with_capacity(fine.len());
    for (ix, x) in xa.grid.times().into_iter().enumerate() {
        for (iy, y) in ya.grid.times().into_iter().enumerate() {
            let k = ix * ya.raw.len() + iy;
            let raw = match &coarse {
                None => fine[k],
                Some(c) => 2.0 * fine[k] - c[k],
            };
            values.push(p.sheet_value(raw, x, y));
        }
    }
    SheetSample::new(xa.grid, ya.grid, values, 1.0)
}

/// `x -> S(x, y)` on the Airy window for one end point `y`, from a single
/// backward sweep.
pub fn sheet_column(d: &DrivingPaths, x_window: (f64, f64), y: f64, stride: usize, est: Estimator) -> Result<GridFunction> {
    check_richardson(est, stride)?;
    let xa = d.x_axis(x_window, stride)?;
    let p = d.prelimit;
    let step = if est == Estimator::Richardson { 4 } else { 1 };
    let k = (p.raw_end(y) / d.paths.grid.dt / step as f64).round() as i64 * step as i64 + d.zero as i64;
    if k < 0 || k as usize > d.last_index() {
        return Err(LabError::Domain(format!("y={y} maps outside the sampled horizon")));
    }
    let end = k as usize;
    let y = p.y_of_raw(d.raw_time(end));
    if xa.raw.last().is_some_and(|&x| x > end) {
        return Err(LabError::Domain(format!("x window reaches past the end point y={y}")));
    }
    let fine = d.column_raw(end);
    let coarse = match est {
        Estimator::Grid => None,
        Estimator::Richardson => Some(d.coarsened(4)?.column_raw(end / 4)),
    };
    let values = xa
        .raw
        .iter()
        .zip(xa.grid.times())
        .map(|(&r, x)| {
            let raw = match &coarse {
                None => fine[r],
                Some(c) => 2.0 * fine[r] - c[r / 4],
            };
            p.sheet_value(raw, x, y)
        })
        .collect();
    GridFunction::new(xa.grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheetOptions {
    pub stride: usize,
    pub estimator: Estimator,
}

impl Default for SheetOptions {
    fn default() -> Self {
        Self { stride: 40, estimator: Estimator::Grid }
    }
}

/// Raw window needed for a sheet on the given Airy windows.
pub fn sheet_raw_window(n: usize, x_window: (f64, f64), y_window: (f64, f64)) -> (f64, f64) {
    let p = Prelimit::new(n);
    (p.raw_start(x_window.0).min(0.0), p.raw_end(y_window.1))
}

pub fn sample_airy_sheet<R: Rng + ?Sized>(
    n: usize,
    x_window: (f64, f64),
    y_window: (f64, f64),
    dt: f64,
    opts: &SheetOptions,
    rng: &mut R,
) -> Result<SheetSample> {
    if n < 2 {
        return Err(LabError::InvalidParameter("need n >= 2".into()));
    }
    let (t_min, t_max) = sheet_raw_window(n, x_window, y_window);
    let d = DrivingPaths::sample(n, t_min, t_max, dt, rng)?;
    sheet_from_driving(&d, x_window, y_window, opts.stride, opts.estimator)
}

fn top_values(d: &DrivingPaths, idx: &[usize], scaling: Scaling) -> Vec<(f64, f64)> {
    let p = d.prelimit;
    let row = d.row_raw(d.zero);
    idx.iter()
        .map(|&i| {
            let r = d.raw_time(i);
            let l = row[i - d.zero];
            match scaling {
                Scaling::Linear => {
                    let y = p.y_of_raw(r);
                    (y, p.n16 * (l - 2.0 * p.sqrt_n) - 2.0 * y * p.n13)
                }
                Scaling::Exponential => {
                    let y = r.ln() * p.n13 / 2.0;
                    (y, p.n16 * (l / r.sqrt() - 2.0 * p.sqrt_n) - y * y)
                }
            }
        })
        .collect()
}

/// Top line `A_1` at the raw grid times nearest to the requested `ys`.
/// Returns `(y_actual, A_1(y_actual))` pairs.
pub fn airy_top_at(d: &DrivingPaths, ys: &[f64], scaling: Scaling, est: Estimator) -> Result<Vec<(f64, f64)>> {
    let p = d.prelimit;
    let dt = d.paths.grid.dt;
    let step = if est == Estimator::Richardson { 4 } else { 1 };
    let mut idx = Vec::with_capacity(ys.len());
    for &y in ys {
        let r = match scaling {
            Scaling::Linear => p.raw_end(y),
            Scaling::Exponential => (2.0 * y / p.n13).exp(),
        };
        let k = ((r / dt) / step as f64).round() as i64 * step as i64;
        if k <= 0 || k as usize + d.zero > d.last_index() {
            return Err(LabError::Domain(format!("y={y} maps outside the sampled horizon")));
        }
        idx.push(k as usize + d.zero);
    }
    let fine = top_values(d, &idx, scaling);
    Ok(match est {
        Estimator::Grid => fine,
        Estimator::Richardson => {
            let c = d.coarsened(4)?;
            let cidx: Vec<usize> = idx.iter().map(|i| i / 4).collect();
            let coarse = top_values(&c, &cidx, scaling);
            fine.iter().zip(coarse).map(|(f, c)| (f.0, 2.0 * f.1 - c.1)).collect()
        }
    })
}

fn ensemble_raw(d: &DrivingPaths, lines: usize, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let from_zero = d.paths.slice(d.zero, d.last_index())?;
    let m = lpp_core::melon_top(&from_zero, lines);
    Ok(m.lines.iter().map(|l| idx.iter().map(|&i| l[i - d.zero]).collect()).collect())
}

/// Prelimit Airy line ensemble (linear scaling) on the Airy window.
pub fn airy_ensemble_from_driving(d: &DrivingPaths, window: (f64, f64), lines: usize, stride: usize, est: Estimator) -> Result<AiryEnsembleApprox> {
    check_richardson(est, stride)?;
    let p = d.prelimit;
    if p.raw_end(window.0) <= 0.0 {
        return Err(LabError::Domain(format!("window start {} maps before raw time 0", window.0)));
    }
    let ya = d.y_axis(window, stride)?;
    let fine = ensemble_raw(d, lines, &ya.raw)?;
    let raw = match est {
        Estimator::Grid => fine,
        Estimator::Richardson => {
            let coarse = ensemble_raw(&d.coarsened(4)?, lines, &ya.coarse(4))?;
            fine.iter().zip(&coarse).map(|(f, c)| f.iter().zip(c).map(|(a, b)| 2.0 * a - b).collect()).collect()
        }
    };
    let ys = ya.grid.times();
    let lines: Vec<Vec<f64>> = raw
        .into_iter()
        .map(|l| l.iter().zip(&ys).map(|(v, y)| p.n16 * (v - 2.0 * p.sqrt_n) - 2.0 * y * p.n13).collect())
        .collect();
    Ok(AiryEnsembleApprox {
        n: p.n,
        ensemble: LineEnsembleGrid::new(ya.grid, lines)?,
        window: (ya.grid.t0, ya.grid.end()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub lines: usize,
    pub stride: usize,
    pub estimator: Estimator,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { lines: 10, stride: 4, estimator: Estimator::Grid }
    }
}

/// Prelimit ensemble on `[-y_max, y_max]` from a fresh melon of `n` paths.
pub fn sample_airy_ensemble<R: Rng + ?Sized>(n: usize, y_max: f64, dt: f64, opts: &EnsembleOptions, rng: &mut R) -> Result<AiryEnsembleApprox> {
    if n < 2 {
        return Err(LabError::InvalidParameter("need n >= 2".into()));
    }
    let p = Prelimit::new(n);
    if p.raw_end(-y_max) < 0.05 {
        return Err(LabError::Domain(format!("window [-{y_max}, {y_max}] exceeds the melon horizon at n={n}")));
    }
    let d = DrivingPaths::sample(n, 0.0, p.raw_end(y_max), dt, rng)?;
    airy_ensemble_from_driving(&d, (-y_max, y_max), opts.lines.min(n), opts.stride, opts.estimator)
}

/// Adds `y^2` to every line. Applying it twice adds `2y^2`.
pub fn stationary_view(a: &AiryEnsembleApprox) -> AiryEnsembleApprox {
    let ys = a.ensemble.grid.times();
    let lines = a.ensemble.lines.iter().map(|l| l.iter().zip(&ys).map(|(v, y)| v + y * y).collect()).collect();
    AiryEnsembleApprox { n: a.n, ensemble: LineEnsembleGrid { grid: a.ensemble.grid, lines }, window: a.window }
}

/// The anchor `x_k = (-sqrt(k / 2x), k)` of the semi-infinite geodesic from `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiInfiniteAnchor {
    pub x: f64,
    pub k: usize,
}

impl SemiInfiniteAnchor {
    pub fn new(x: f64, k: usize) -> Result<Self> {
        if !(x > 0.0) || k < 1 {
            return Err(LabError::InvalidParameter(format!("anchor needs x > 0 and k >= 1, got x={x}, k={k}")));
        }
        Ok(Self { x, k })
    }

    pub fn time(&self) -> f64 {
        -(self.k as f64 / (2.0 * self.x)).sqrt()
    }

    /// Largest `k <= cap` whose anchor time is not before `start`.
    pub fn largest_feasible_k(x: f64, start: f64, cap: usize) -> Option<usize> {
        let k = (2.0 * x * start * start + 1e-12).floor() as usize;
        let k = k.min(cap);
        (k >= 1).then_some(k)
    }

    fn grid_index(&self, grid: &Grid) -> Result<usize> {
        let t = self.time();
        if t < grid.t0 - 1e-12 {
            return Err(LabError::Domain(format!("anchor time {t:.4} before the grid start {:.4}", grid.t0)));
        }
        Ok(grid.nearest_index(t))
    }
}

/// Last passage values in `ens` from the anchor (snapped to the grid) to
/// `(grid time t, 1)`, as a profile over grid indices from the anchor on.
fn anchor_profile(ens: &LineEnsembleGrid, anchor: &SemiInfiniteAnchor, level: usize) -> Result<(usize, Vec<f64>)> {
    if anchor.k > ens.n_lines() {
        return Err(LabError::Domain(format!("anchor level {} exceeds {} lines", anchor.k, ens.n_lines())));
    }
    let a = anchor.grid_index(&ens.grid)?;
    let mut c = vec![f64::NEG_INFINITY; ens.grid.n_points - a];
    c[0] = 0.0;
    lpp_core::dp_forward(&ens.lines, a, &mut c, anchor.k - 1, level - 1);
    Ok((a, c))
}

fn reversed(ens: &LineEnsembleGrid) -> Result<LineEnsembleGrid> {
    let g = ens.grid;
    let grid = Grid::new(-g.end(), g.dt, g.n_points)?;
    let lines = ens.lines.iter().map(|l| l.iter().rev().copied().collect()).collect();
    Ok(LineEnsembleGrid { grid, lines })
}

/// `|(S(x,z) - S(x,y)) - (A[x_k -> (z,1)] - A[x_k -> (y,1)])|`; negative `x`
/// uses the time-reversed ensemble.
pub fn coupling_residual(sheet: &SheetSample, airy: &AiryEnsembleApprox, x: f64, y: f64, z: f64, k: usize) -> Result<f64> {
    if x == 0.0 {
        return Err(LabError::Domain("the coupling is stated for x != 0".into()));
    }
    let ds = sheet.value(x, z)? - sheet.value(x, y)?;
    let (ens, ax, ty, tz) = if x > 0.0 {
        (airy.ensemble.clone(), x, y, z)
    } else {
        (reversed(&airy.ensemble)?, -x, -y, -z)
    };
    let anchor = SemiInfiniteAnchor::new(ax, k)?;
    let (a, prof) = anchor_profile(&ens, &anchor, 1)?;
    let iy = ens.grid.index_of(ty)?;
    let iz = ens.grid.index_of(tz)?;
    if iy < a || iz < a {
        return Err(LabError::Domain("targets precede the anchor".into()));
    }
    Ok((ds - (prof[iz - a] - prof[iy - a])).abs())
}

/// Boundary data `G_l = max_x (h0(x) + A[x_k -> (0,l)] - A[x_k -> (0,1)] + S(x,0))`
/// for `l = 1..=levels`, with the anchor level `k`. `s_col` holds `S(x, 0)`
/// on an x-grid; the maximum runs over its points in the support of `h0`,
/// all of which must be positive.
pub fn boundary_data(airy: &AiryEnsembleApprox, s_col: &GridFunction, h0: &InitialData, k: usize, levels: usize) -> Result<BoundaryData> {
    if levels < 1 || levels > k {
        return Err(LabError::Domain(format!("levels must lie in 1..={k}")));
    }
    let ens = &airy.ensemble;
    let i0 = ens.grid.index_of(0.0)?;
    let mut g = vec![f64::NEG_INFINITY; levels];
    let mut any = false;
    for (x, s) in s_col.grid.times().into_iter().zip(&s_col.values) {
        let Some(h) = h0.eval(x) else { continue };
        if x <= 0.0 {
            return Err(LabError::Domain(format!("support point {x} is not positive")));
        }
        any = true;
        let anchor = SemiInfiniteAnchor::new(x, k)?;
        let a = anchor.grid_index(&ens.grid)?;
        if a >= i0 {
            return Err(LabError::Domain("anchor not before time 0".into()));
        }
        let mut c = vec![f64::NEG_INFINITY; i0 - a + 1];
        c[0] = 0.0;
        let mut at_zero = vec![f64::NEG_INFINITY; k];
        for lvl in (0..k).rev() {
            lpp_core::sweep(&mut c, &ens.lines[lvl][a..=i0]);
            at_zero[lvl] = c[i0 - a];
        }
        let base = h + s - at_zero[0];
        for (l, gl) in g.iter_mut().enumerate() {
            *gl = gl.max(base + at_zero[l]);
        }
    }
    if !any {
        return Err(LabError::EmptySupport);
    }
    BoundaryData::new(g)
}

/// Time at which the rightmost geodesic from the anchor (snapped to the
/// grid) to `target` first reaches `level`.
pub fn geodesic_jump_time(ens: &LineEnsembleGrid, anchor: &SemiInfiniteAnchor, target: (f64, usize), level: usize) -> Result<f64> {
    let (t, m) = target;
    if anchor.k > ens.n_lines() || level < m || level >= anchor.k {
        return Err(LabError::Domain(format!("need {m} <= level < {} <= {}", anchor.k, ens.n_lines())));
    }
    let a = anchor.grid_index(&ens.grid)?;
    let ti = ens.grid.index_of(t)?;
    if ti < a {
        return Err(LabError::Domain("target precedes the anchor".into()));
    }
    let jumps = lpp_core::geodesic_indices(&ens.lines, a, ti, anchor.k - 1, m - 1);
    Ok(ens.grid.time(jumps[anchor.k - level - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn driving_paths_vanish_at_zero_and_ignore_backward_extent() {
        let s = RngStream::new(3, 1);
        let a = DrivingPaths::sample(4, 0.0, 1.0, 0.01, &mut s.rng()).unwrap();
        let b = DrivingPaths::sample(4, -0.5, 1.0, 0.01, &mut s.rng()).unwrap();
        assert_eq!(a.zero, 0);
        assert_eq!(b.zero % 4, 0);
        for l in 0..4 {
            assert_eq!(b.paths.lines[l][b.zero], 0.0);
            assert_eq!(&a.paths.lines[l][..], &b.paths.lines[l][b.zero..]);
        }
    }

    #[test]
    fn sheet_row_zero_is_the_ensemble_top_line() {
        let s = RngStream::new(5, 2);
        let n = 20;
        let (lo, hi) = sheet_raw_window(n, (-0.5, 0.5), (-0.6, 0.6));
        let d = DrivingPaths::sample(n, lo, hi, 1e-3, &mut s.rng()).unwrap();
        let sheet = sheet_from_driving(&d, (-0.5, 0.5), (-0.6, 0.6), 4, Estimator::Grid).unwrap();
        let a = airy_ensemble_from_driving(&d, (-0.6, 0.6), 3, 4, Estimator::Grid).unwrap();
        assert_eq!(a.ensemble.grid, sheet.y_grid);
        let ix0 = sheet.x_grid.index_of(0.0).unwrap();
        for iy in 0..sheet.ny() {
            assert!((sheet.get(ix0, iy) - a.ensemble.lines[0][iy]).abs() < 1e-9);
        }
        assert!(a.ensemble.is_strictly_ordered());
    }

    #[test]
    fn stationary_view_adds_parabola() {
        let s = RngStream::new(1, 1);
        let a = sample_airy_ensemble(10, 0.5, 1e-3, &EnsembleOptions { lines: 2, stride: 4, estimator: Estimator::Grid }, &mut s.rng()).unwrap();
        let v1 = stationary_view(&a);
        let v2 = stationary_view(&v1);
        let i0 = a.ensemble.grid.index_of(0.0).unwrap();
        assert_eq!(v1.ensemble.lines[0][i0], a.ensemble.lines[0][i0]);
        for (i, y) in a.ensemble.grid.times().into_iter().enumerate() {
            let d1 = v1.ensemble.lines[0][i] - a.ensemble.lines[0][i];
            let d2 = v2.ensemble.lines[0][i] - a.ensemble.lines[0][i];
            assert!((d1 - y * y).abs() < 1e-12 && (d2 - 2.0 * y * y).abs() < 1e-12);
        }
    }

    #[test]
    fn window_beyond_horizon_is_rejected() {
        let s = RngStream::new(1, 1);
        let r = sample_airy_ensemble(8, 5.0, 1e-3, &EnsembleOptions::default(), &mut s.rng());
        assert!(matches!(r, Err(LabError::Domain(_))));
    }

    #[test]
    fn rescaled_sheet_matches_definition() {
        let g = Grid::new(-1.0, 0.5, 5).unwrap();
        let sh = SheetSample::from_fn(g, g, |x, y| x * 3.0 - y).unwrap();
        let s = 0.5;
        let r = sh.rescaled(s).unwrap();
        for x in r.x_grid.times() {
            for y in r.y_grid.times() {
                let want = s * sh.value(x / (s * s), y / (s * s)).unwrap();
                assert!((r.value(x, y).unwrap() - want).abs() < 1e-12);
            }
        }
        assert_eq!(r.scale, 0.5);
    }

    #[test]
    fn feasible_anchor_level() {
        assert_eq!(SemiInfiniteAnchor::largest_feasible_k(1.0, -2.0, 20), Some(8));
        assert_eq!(SemiInfiniteAnchor::largest_feasible_k(1.0, -2.0, 5), Some(5));
        assert_eq!(SemiInfiniteAnchor::largest_feasible_k(0.1, -1.0, 20), None);
        let a = SemiInfiniteAnchor::new(1.0, 8).unwrap();
        assert!((a.time() + 2.0).abs() < 1e-12);
    }
}
