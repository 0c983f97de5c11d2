//! Brownian motions and bridges on uniform grids, bridge decomposition, and
//! resampling of non-intersecting bridge tuples above a floor.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{LabError, Result};
use crate::lpp_core::LineEnsembleGrid;

/// Paths in this crate are rate two unless a caller says otherwise.
pub const DEFAULT_RATE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t0: f64,
    pub dt: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(t0: f64, dt: f64, n_points: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(LabError::InvalidParameter(format!("grid step must be positive, got {dt}")));
        }
        if n_points < 2 {
            return Err(LabError::InvalidParameter(format!("grid needs at least 2 points, got {n_points}")));
        }
        Ok(Self { t0, dt, n_points })
    }

    /// Grid `t0, t0+dt, ...` covering `[t0, t1]` (the last point is the
    /// largest grid time not exceeding `t1` up to round-off).
    pub fn spanning(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        let steps = ((t1 - t0) / dt + 1e-9).floor();
        if !(steps >= 1.0) {
            return Err(LabError::InvalidParameter(format!("interval [{t0}, {t1}] shorter than one step {dt}")));
        }
        Self::new(t0, dt, steps as usize + 1)
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_points - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.time(i)).collect()
    }

    /// Index of a grid-aligned time.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.dt;
        let i = x.round();
        let misaligned = (x - i).abs() > 1e-6 || i < 0.0 || i as usize >= self.n_points;
        if misaligned || !t.is_finite() {
            return Err(LabError::Alignment { time: t, t0: self.t0, dt: self.dt });
        }
        Ok(i as usize)
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let x = ((t - self.t0) / self.dt).round();
        x.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - 1e-9 * self.dt && t <= self.end() + 1e-9 * self.dt
    }

    /// Every `stride`-th point starting at index `offset`.
    pub fn subsample(&self, offset: usize, stride: usize) -> Result<Self> {
        if stride == 0 || offset >= self.n_points {
            return Err(LabError::InvalidParameter("bad subsample".into()));
        }
        let n = (self.n_points - 1 - offset) / stride + 1;
        Self::new(self.time(offset), self.dt * stride as f64, n)
    }

    /// Sub-grid on indices `[a, b]`.
    pub fn slice(&self, a: usize, b: usize) -> Result<Self> {
        if b <= a || b >= self.n_points {
            return Err(LabError::InvalidParameter(format!("bad slice [{a}, {b}]")));
        }
        Self::new(self.time(a), self.dt, b - a + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(LabError::InvalidParameter(format!(
                "expected {} values, got {}",
                grid.n_points,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("grid function values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.times().into_iter().map(f).collect();
        Self::new(grid, values)
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.grid.index_of(t)?])
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(LabError::InvalidParameter(format!("rate must be positive, got {rate}")));
    }
    Ok(())
}

/// Brownian motion of the given rate started at `start` at the first grid time.
pub fn sample_bm<R: Rng + ?Sized>(grid: Grid, rate: f64, start: f64, rng: &mut R) -> Result<GridFunction> {
    check_rate(rate)?;
    let grid = Grid::new(grid.t0, grid.dt, grid.n_points)?;
    let sd = (rate * grid.dt).sqrt();
    let mut values = Vec::with_capacity(grid.n_points);
    let mut x = start;
    values.push(x);
    for _ in 1..grid.n_points {
        let z: f64 = rng.sample(StandardNormal);
        x += sd * z;
        values.push(x);
    }
    Ok(GridFunction { grid, values })
}

/// Two-sided Brownian motion taking the value `value` at the grid time `pin`.
pub fn sample_bm_pinned<R: Rng + ?Sized>(grid: Grid, rate: f64, pin: f64, value: f64, rng: &mut R) -> Result<GridFunction> {
    check_rate(rate)?;
    let p = grid.index_of(pin)?;
    let sd = (rate * grid.dt).sqrt();
    let mut values = vec![0.0; grid.n_points];
    values[p] = value;
    for i in p + 1..grid.n_points {
        let z: f64 = rng.sample(StandardNormal);
        values[i] = values[i - 1] + sd * z;
    }
    for i in (0..p).rev() {
        let z: f64 = rng.sample(StandardNormal);
        values[i] = values[i + 1] + sd * z;
    }
    Ok(GridFunction { grid, values })
}

/// Brownian bridge from `a_val` to `b_val` by sequential Gaussian conditioning.
pub fn sample_bridge<R: Rng + ?Sized>(grid: Grid, rate: f64, a_val: f64, b_val: f64, rng: &mut R) -> Result<GridFunction> {
    check_rate(rate)?;
    let grid = Grid::new(grid.t0, grid.dt, grid.n_points)?;
    let mut values = vec![0.0; grid.n_points];
    fill_bridge(&mut values, grid.dt, rate, a_val, b_val, rng);
    Ok(GridFunction { grid, values })
}

fn fill_bridge<R: Rng + ?Sized>(out: &mut [f64], dt: f64, rate: f64, a: f64, b: f64, rng: &mut R) {
    let n = out.len();
    out[0] = a;
    let mut x = a;
    for i in 0..n - 2 {
        let remaining = (n - 1 - i) as f64;
        let mean = x + (b - x) / remaining;
        let var = rate * dt * (remaining - 1.0) / remaining;
        let z: f64 = rng.sample(StandardNormal);
        x = mean + var.sqrt() * z;
        out[i + 1] = x;
    }
    out[n - 1] = b;
}

/// Split a path at grid-aligned breakpoints into chord interpolants and the
/// residual local bridges, one pair per segment.
pub fn decompose_bridge(bridge: &GridFunction, breakpoints: &[f64]) -> Result<Vec<(GridFunction, GridFunction)>> {
    let grid = bridge.grid;
    let last = grid.n_points - 1;
    let mut idx = vec![0usize];
    for &b in breakpoints {
        let i = grid.index_of(b)?;
        if i == 0 || i >= last {
            return Err(LabError::InvalidParameter(format!("breakpoint {b} is not interior")));
        }
        if i <= *idx.last().unwrap() {
            return Err(LabError::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        idx.push(i);
    }
    idx.push(last);
    let mut out = Vec::with_capacity(idx.len() - 1);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sub = grid.slice(a, b)?;
        let (va, vb) = (bridge.values[a], bridge.values[b]);
        let len = (b - a) as f64;
        let mut chord = Vec::with_capacity(b - a + 1);
        let mut local = Vec::with_capacity(b - a + 1);
        for i in a..=b {
            let c = if i == b { vb } else { va + (vb - va) * (i - a) as f64 / len };
            chord.push(c);
            local.push(bridge.values[i] - c);
        }
        out.push((GridFunction { grid: sub, values: chord }, GridFunction { grid: sub, values: local }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleOptions {
    pub rate: f64,
    pub rejection_budget: usize,
    pub mcmc_sweeps: usize,
    /// Skip rejection and run the exchange chain directly.
    pub force_mcmc: bool,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self { rate: DEFAULT_RATE, rejection_budget: 10_000, mcmc_sweeps: 1_000, force_mcmc: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResampleMethod {
    Rejection,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleDiagnostics {
    pub method: ResampleMethod,
    pub rejection_attempts: usize,
    pub mcmc_sweeps: usize,
    /// Mean absolute single-site move of the last sweep (0 for rejection).
    pub mcmc_last_sweep_move: f64,
}

/// Resample `rows` (0-based, 0 = top line) on `window` as Brownian bridges
/// with the original endpoint values, conditioned to stay strictly ordered,
/// below the line above the block and above the floor. Without an explicit
/// floor the line below the block (if any) serves as the floor.
pub fn resample_nonintersecting<R: Rng + ?Sized>(
    ensemble: &LineEnsembleGrid,
    rows: Range<usize>,
    window: (f64, f64),
    floor: Option<&GridFunction>,
    opts: &ResampleOptions,
    rng: &mut R,
) -> Result<(LineEnsembleGrid, ResampleDiagnostics)> {
    check_rate(opts.rate)?;
    let grid = ensemble.grid;
    let k = ensemble.lines.len();
    if rows.start >= rows.end || rows.end > k {
        return Err(LabError::Domain(format!("row range {rows:?} outside 0..{k}")));
    }
    let ia = grid.index_of(window.0)?;
    let ib = grid.index_of(window.1)?;
    if ib < ia + 2 {
        return Err(LabError::Domain("window must contain an interior grid point".into()));
    }
    if let Some(f) = floor {
        if f.grid != grid {
            return Err(LabError::GridMismatch("floor grid differs from ensemble grid".into()));
        }
    }
    let bounds = Bounds::new(&rows, floor);
    for &i in &[ia, ib] {
        for r in rows.clone() {
            let v = ensemble.lines[r][i];
            if !(v < bounds.upper(r, i, &ensemble.lines)) || !(v > bounds.lower(r, i, &ensemble.lines)) {
                return Err(LabError::Infeasible(format!("endpoint data of row {r} not strictly ordered at t={}", grid.time(i))));
            }
        }
    }

    let mut out = ensemble.clone();
    let m = ib - ia + 1;
    if !opts.force_mcmc {
        let mut buf = vec![vec![0.0; m]; rows.len()];
        for attempt in 1..=opts.rejection_budget {
            for (j, r) in rows.clone().enumerate() {
                fill_bridge(&mut buf[j], grid.dt, opts.rate, ensemble.lines[r][ia], ensemble.lines[r][ib], rng);
            }
            if block_is_valid(&buf, &rows, ia, &bounds, &ensemble.lines) {
                for (j, r) in rows.clone().enumerate() {
                    out.lines[r][ia..=ib].copy_from_slice(&buf[j]);
                }
                let diag = ResampleDiagnostics {
                    method: ResampleMethod::Rejection,
                    rejection_attempts: attempt,
                    mcmc_sweeps: 0,
                    mcmc_last_sweep_move: 0.0,
                };
                return Ok((out, diag));
            }
        }
    }

    // Exchange chain: heat-bath single-site updates with truncated Gaussian
    // conditionals drawn by inverse CDF, so shared uniforms give a monotone
    // coupling in the floor and the endpoint data.
    initialise_feasible(&mut out, &rows, ia, ib, &bounds)?;
    let var = opts.rate * grid.dt / 2.0;
    let sd = var.sqrt();
    let mut last_move = 0.0;
    for _ in 0..opts.mcmc_sweeps {
        let mut moved = 0.0;
        for r in rows.clone() {
            for i in ia + 1..ib {
                let mean = 0.5 * (out.lines[r][i - 1] + out.lines[r][i + 1]);
                let lo = bounds.lower(r, i, &out.lines);
                let hi = bounds.upper(r, i, &out.lines);
                let u: f64 = rng.random();
                let x = truncated_normal_quantile(mean, sd, lo, hi, u);
                moved += (x - out.lines[r][i]).abs();
                out.lines[r][i] = x;
            }
        }
        last_move = moved / ((ib - ia - 1) * rows.len()) as f64;
    }
    let diag = ResampleDiagnostics {
        method: ResampleMethod::Mcmc,
        rejection_attempts: if opts.force_mcmc { 0 } else { opts.rejection_budget },
        mcmc_sweeps: opts.mcmc_sweeps,
        mcmc_last_sweep_move: last_move,
    };
    Ok((out, diag))
}

struct Bounds<'a> {
    last: usize,
    floor: Option<&'a [f64]>,
}

impl<'a> Bounds<'a> {
    fn new(rows: &Range<usize>, floor: Option<&'a GridFunction>) -> Self {
        Self { last: rows.end - 1, floor: floor.map(|f| f.values.as_slice()) }
    }

    fn upper(&self, r: usize, i: usize, lines: &[Vec<f64>]) -> f64 {
        if r == 0 {
            f64::INFINITY
        } else {
            lines[r - 1][i]
        }
    }

    fn lower(&self, r: usize, i: usize, lines: &[Vec<f64>]) -> f64 {
        if r < self.last {
            return lines[r + 1][i];
        }
        match self.floor {
            Some(f) => f[i],
            None if r + 1 < lines.len() => lines[r + 1][i],
            None => f64::NEG_INFINITY,
        }
    }
}

fn block_is_valid(buf: &[Vec<f64>], rows: &Range<usize>, ia: usize, bounds: &Bounds, lines: &[Vec<f64>]) -> bool {
    let m = buf[0].len();
    for (j, r) in rows.clone().enumerate() {
        for p in 1..m - 1 {
            let i = ia + p;
            let v = buf[j][p];
            let hi = if j == 0 { bounds.upper(r, i, lines) } else { buf[j - 1][p] };
            let lo = if r == bounds.last {
                bounds.lower(r, i, lines)
            } else {
                buf[j + 1][p]
            };
            if !(v < hi && v > lo) {
                return false;
            }
        }
    }
    true
}

fn initialise_feasible(out: &mut LineEnsembleGrid, rows: &Range<usize>, ia: usize, ib: usize, bounds: &Bounds) -> Result<()> {
    for r in rows.clone().rev() {
        for i in ia + 1..ib {
            let lo = bounds.lower(r, i, &out.lines);
            let hi = bounds.upper(r, i, &out.lines);
            let eps = 1e-9 * (1.0 + lo.abs());
            let mut v = out.lines[r][i].max(lo + eps);
            if v >= hi {
                v = if hi.is_finite() { 0.5 * (lo + hi) } else { lo + 1.0 };
            }
            if !(v > lo && v < hi) {
                return Err(LabError::Infeasible(format!("no room for row {r} at t={}", out.grid.time(i))));
            }
            out.lines[r][i] = v;
        }
    }
    Ok(())
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Quantile `u` of N(mean, sd²) truncated to the open interval (lo, hi).
pub fn truncated_normal_quantile(mean: f64, sd: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = if a >= 0.0 {
        let (pa, pb) = (std_normal_sf(a), std_normal_sf(b));
        -std_normal_quantile(pa - u * (pa - pb))
    } else {
        let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
        std_normal_quantile(pa + u * (pb - pa))
    };
    let mut x = mean + sd * z;
    if !x.is_finite() || x <= lo || x >= hi {
        // Mass too thin to resolve in double precision: fall back inside.
        x = if hi.is_finite() && lo.is_finite() {
            lo + (hi - lo) * u.clamp(1e-6, 1.0 - 1e-6)
        } else if lo.is_finite() {
            lo + sd * 1e-6
        } else {
            hi - sd * 1e-6
        };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn bm_starts_at_start_and_is_deterministic() {
        let g = Grid::new(0.0, 0.5, 2).unwrap();
        let p = sample_bm(g, 2.0, 3.25, &mut RngStream::new(5, 5).rng()).unwrap();
        assert_eq!(p.values[0], 3.25);
        let g = Grid::new(0.0, 1e-3, 1001).unwrap();
        let a = sample_bm(g, 2.0, 0.0, &mut RngStream::new(1, 7).rng()).unwrap();
        let b = sample_bm(g, 2.0, 0.0, &mut RngStream::new(1, 7).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bm_rejects_bad_rate() {
        let g = Grid::new(0.0, 0.1, 3).unwrap();
        assert!(sample_bm(g, 0.0, 0.0, &mut RngStream::new(0, 0).rng()).is_err());
        assert!(Grid::new(0.0, 0.0, 3).is_err());
        assert!(Grid::new(0.0, 0.1, 1).is_err());
    }

    #[test]
    fn quadratic_variation_matches_rate() {
        let g = Grid::new(0.0, 1e-4, 10_001).unwrap();
        let p = sample_bm(g, 2.0, 0.0, &mut RngStream::new(3, 1).rng()).unwrap();
        let qv: f64 = p.values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        assert!((qv - 2.0).abs() < 0.1, "qv = {qv}");
    }

    #[test]
    fn pinned_bm_hits_pin() {
        let g = Grid::new(-1.0, 0.25, 9).unwrap();
        let p = sample_bm_pinned(g, 1.0, 0.0, 0.0, &mut RngStream::new(2, 2).rng()).unwrap();
        assert_eq!(p.values[4], 0.0);
    }

    #[test]
    fn bridge_endpoints_exact() {
        let g = Grid::new(0.0, 0.01, 101).unwrap();
        let b = sample_bridge(g, 2.0, 1.0, 3.0, &mut RngStream::new(9, 9).rng()).unwrap();
        assert_eq!(b.values[0], 1.0);
        assert_eq!(b.values[100], 3.0);
    }

    #[test]
    fn bridge_midpoint_moments() {
        let g = Grid::new(0.0, 0.01, 101).unwrap();
        let s = RngStream::new(11, 0);
        let trials = 10_000;
        let mids: Vec<f64> = (0..trials)
            .map(|t| sample_bridge(g, 2.0, 0.0, 0.0, &mut s.trial(t)).unwrap().values[50])
            .collect();
        let mean = mids.iter().sum::<f64>() / trials as f64;
        let var = mids.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (0.5f64 / trials as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
        // rate 2 on [0,1]: 2 * (1/2)(1/2) / 1 = 1/2
        assert!((var - 0.5).abs() < 0.03, "var {var}");
    }

    #[test]
    fn decomposition_identity_and_degenerate_cases() {
        let g = Grid::new(0.0, 0.01, 101).unwrap();
        let b = sample_bridge(g, 2.0, 0.5, -1.0, &mut RngStream::new(4, 4).rng()).unwrap();
        let parts = decompose_bridge(&b, &[]).unwrap();
        assert_eq!(parts.len(), 1);
        let (c, l) = &parts[0];
        for i in 0..101 {
            let chord = 0.5 + (-1.5) * i as f64 / 100.0;
            assert!((c.values[i] - chord).abs() < 1e-12);
            assert!((l.values[i] - (b.values[i] - chord)).abs() < 1e-12);
        }
        let parts = decompose_bridge(&b, &[0.2, 0.5, 0.77]).unwrap();
        assert_eq!(parts.len(), 4);
        for (c, l) in &parts {
            assert_eq!(l.values[0], 0.0);
            assert_eq!(*l.values.last().unwrap(), 0.0);
            for (i, (cv, lv)) in c.values.iter().zip(&l.values).enumerate() {
                let j = g.index_of(c.grid.time(i)).unwrap();
                assert!((cv + lv - b.values[j]).abs() < 1e-12);
            }
        }
        let every: Vec<f64> = (1..100).map(|i| g.time(i)).collect();
        for (_, l) in decompose_bridge(&b, &every).unwrap() {
            assert!(l.values.iter().all(|v| *v == 0.0));
        }
        assert!(matches!(decompose_bridge(&b, &[0.205]), Err(LabError::Alignment { .. })));
    }

    #[test]
    fn truncated_quantile_is_monotone_and_inside() {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..100 {
            let u = k as f64 / 100.0;
            let x = truncated_normal_quantile(0.0, 1.0, -0.5, 2.0, u);
            assert!(x > -0.5 && x < 2.0 && x >= prev);
            prev = x;
        }
        let lo = truncated_normal_quantile(0.0, 1.0, 0.1, 3.0, 0.3);
        let hi = truncated_normal_quantile(0.0, 1.0, 0.2, 3.0, 0.3);
        assert!(hi >= lo);
        let far = truncated_normal_quantile(0.0, 1.0, 40.0, f64::INFINITY, 0.5);
        assert!(far > 40.0);
    }
}
