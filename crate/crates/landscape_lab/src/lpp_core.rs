//! Semi-discrete last passage percolation on grid line ensembles.
//!
//! Levels are 1-based with level 1 the top line, as in the usual
//! `f[(x, k) -> (y, m)]` notation with `m <= k`. Paths start low (level `k`)
//! and jump upwards one level at a time, so a path from `(x, k)` to `(y, m)`
//! has `k - m` jump times.
//!
//! All dynamic programs below are repeated applications of one sweep: given
//! a profile `c` on the level below, the profile on level `f` is
//! `f(t) + max_{s <= t} (c(s) - f(s))`. Jump times range over grid times only,
//! which is exact for the piecewise-linear interpolants of the stored data.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::path_sampler::{Grid, GridFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineEnsembleGrid {
    pub grid: Grid,
    /// `lines[0]` is level 1.
    pub lines: Vec<Vec<f64>>,
}

impl LineEnsembleGrid {
    pub fn new(grid: Grid, lines: Vec<Vec<f64>>) -> Result<Self> {
        if lines.is_empty() {
            return Err(LabError::InvalidParameter("ensemble needs at least one line".into()));
        }
        for (i, l) in lines.iter().enumerate() {
            if l.len() != grid.n_points {
                return Err(LabError::GridMismatch(format!("line {} has {} values, grid has {}", i + 1, l.len(), grid.n_points)));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(LabError::InvalidParameter(format!("line {} has non-finite values", i + 1)));
            }
        }
        Ok(Self { grid, lines })
    }

    pub fn from_functions(lines: Vec<GridFunction>) -> Result<Self> {
        let grid = lines.first().ok_or_else(|| LabError::InvalidParameter("ensemble needs at least one line".into()))?.grid;
        if lines.iter().any(|l| l.grid != grid) {
            return Err(LabError::GridMismatch("ensemble lines must share one grid".into()));
        }
        Self::new(grid, lines.into_iter().map(|l| l.values).collect())
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Level `level` (1-based) as a grid function.
    pub fn line(&self, level: usize) -> GridFunction {
        GridFunction { grid: self.grid, values: self.lines[level - 1].clone() }
    }

    /// Lines restricted to grid indices `[a, b]`.
    pub fn slice(&self, a: usize, b: usize) -> Result<Self> {
        let grid = self.grid.slice(a, b)?;
        Ok(Self { grid, lines: self.lines.iter().map(|l| l[a..=b].to_vec()).collect() })
    }

    /// Every `stride`-th grid point starting at `offset`.
    pub fn subsample(&self, offset: usize, stride: usize) -> Result<Self> {
        let grid = self.grid.subsample(offset, stride)?;
        let lines = self.lines.iter().map(|l| l[offset..].iter().step_by(stride).copied().collect()).collect();
        Ok(Self { grid, lines })
    }

    /// Strict ordering `line_1 > line_2 > ...` at every grid point.
    pub fn is_strictly_ordered(&self) -> bool {
        self.lines.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a > b))
    }
}

/// A non-increasing level function given by its jump times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    pub start_level: usize,
    pub end_level: usize,
    /// `jump_times[j]` is when the path leaves level `start_level - j`.
    pub jump_times: Vec<f64>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    /// `values[0]` is `G_1`.
    pub values: Vec<f64>,
}

impl BoundaryData {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("boundary data must be finite and nonempty".into()));
        }
        Ok(Self { values })
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] > w[1])
    }
}

#[inline]
pub(crate) fn sweep(c: &mut [f64], f: &[f64]) {
    let mut m = f64::NEG_INFINITY;
    for (ci, &fi) in c.iter_mut().zip(f) {
        let d = *ci - fi;
        if d > m {
            m = d;
        }
        *ci = fi + m;
    }
}

/// Time-reversed sweep: `c(s) <- max_{u >= s} (f(u) + c(u)) - f(s)`.
#[inline]
pub(crate) fn sweep_back(c: &mut [f64], f: &[f64]) {
    let mut m = f64::NEG_INFINITY;
    for (ci, &fi) in c.iter_mut().zip(f).rev() {
        let d = fi + *ci;
        if d > m {
            m = d;
        }
        *ci = m - fi;
    }
}

/// Profile on level `to` of the best paths started from `init` placed on
/// level `from` (0-based indices into `lines`, `to <= from`), restricted to
/// grid indices `lo..lines[0].len()`. `init` has that length and may hold
/// `-inf` where paths cannot start.
pub(crate) fn dp_forward(lines: &[Vec<f64>], lo: usize, init: &mut [f64], from: usize, to: usize) {
    for lvl in (to..=from).rev() {
        sweep(init, &lines[lvl][lo..lo + init.len()]);
    }
}

/// Values `f[(s, k) -> (y, m)]` for all grid `s <= y`, by backward sweeps.
pub(crate) fn dp_backward(lines: &[Vec<f64>], y_idx: usize, from: usize, to: usize) -> Vec<f64> {
    let mut c = vec![f64::NEG_INFINITY; y_idx + 1];
    c[y_idx] = 0.0;
    for lvl in to..=from {
        sweep_back(&mut c, &lines[lvl][..=y_idx]);
    }
    c
}

fn check_levels(ens: &LineEnsembleGrid, k: usize, m: usize) -> Result<()> {
    if m < 1 || m > k || k > ens.n_lines() {
        return Err(LabError::Domain(format!("need 1 <= m <= k <= {}, got k={k}, m={m}", ens.n_lines())));
    }
    Ok(())
}

fn check_times(ens: &LineEnsembleGrid, x: f64, y: f64) -> Result<(usize, usize)> {
    if x > y {
        return Err(LabError::Domain(format!("x={x} > y={y}")));
    }
    Ok((ens.grid.index_of(x)?, ens.grid.index_of(y)?))
}

/// Length of a jump path: the telescoping sum of line increments.
pub fn path_length(ens: &LineEnsembleGrid, path: &JumpPath) -> Result<f64> {
    check_levels(ens, path.start_level, path.end_level)?;
    let (xi, yi) = check_times(ens, path.x, path.y)?;
    if path.jump_times.len() != path.start_level - path.end_level {
        return Err(LabError::Domain(format!(
            "path from level {} to {} needs {} jumps, got {}",
            path.start_level,
            path.end_level,
            path.start_level - path.end_level,
            path.jump_times.len()
        )));
    }
    let mut idx = Vec::with_capacity(path.jump_times.len() + 2);
    idx.push(xi);
    for &t in &path.jump_times {
        idx.push(ens.grid.index_of(t)?);
    }
    idx.push(yi);
    if idx.windows(2).any(|w| w[1] < w[0]) {
        return Err(LabError::Domain("jump times must be non-decreasing inside [x, y]".into()));
    }
    let mut total = 0.0;
    for (j, w) in idx.windows(2).enumerate() {
        let f = &ens.lines[path.start_level - 1 - j];
        total += f[w[1]] - f[w[0]];
    }
    Ok(total)
}

/// Last passage value `f[(x, k) -> (y, m)]`.
pub fn lpp(ens: &LineEnsembleGrid, from: (f64, usize), to: (f64, usize)) -> Result<f64> {
    let (x, k) = from;
    let (y, m) = to;
    check_levels(ens, k, m)?;
    let (xi, yi) = check_times(ens, x, y)?;
    let mut c = vec![f64::NEG_INFINITY; yi - xi + 1];
    c[0] = 0.0;
    dp_forward(&ens.lines[..], xi, &mut c, k - 1, m - 1);
    Ok(c[yi - xi])
}

/// `t -> f[(x, k) -> (t, m)]` for grid `t >= x`.
pub fn lpp_profile(ens: &LineEnsembleGrid, from: (f64, usize), to_level: usize) -> Result<GridFunction> {
    let (x, k) = from;
    check_levels(ens, k, to_level)?;
    let xi = ens.grid.index_of(x)?;
    let n = ens.grid.n_points;
    if xi + 1 >= n {
        return Err(LabError::Domain("start point is the last grid time".into()));
    }
    let mut c = vec![f64::NEG_INFINITY; n - xi];
    c[0] = 0.0;
    dp_forward(&ens.lines[..], xi, &mut c, k - 1, to_level - 1);
    Ok(GridFunction { grid: ens.grid.slice(xi, n - 1)?, values: c })
}

/// `s -> f[(s, k) -> (y, m)]` for grid `s <= y`.
pub fn lpp_profile_to(ens: &LineEnsembleGrid, from_level: usize, to: (f64, usize)) -> Result<GridFunction> {
    let (y, m) = to;
    check_levels(ens, from_level, m)?;
    let yi = ens.grid.index_of(y)?;
    if yi == 0 {
        return Err(LabError::Domain("end point is the first grid time".into()));
    }
    let values = dp_backward(&ens.lines, yi, from_level - 1, m - 1);
    Ok(GridFunction { grid: ens.grid.slice(0, yi)?, values })
}

/// Rightmost geodesic between `(x, k)` and `(y, m)`.
pub fn rightmost_geodesic(ens: &LineEnsembleGrid, from: (f64, usize), to: (f64, usize)) -> Result<JumpPath> {
    let (x, k) = from;
    let (y, m) = to;
    check_levels(ens, k, m)?;
    let (xi, yi) = check_times(ens, x, y)?;
    let jumps = geodesic_indices(&ens.lines, xi, yi, k - 1, m - 1);
    Ok(JumpPath {
        start_level: k,
        end_level: m,
        jump_times: jumps.into_iter().map(|i| ens.grid.time(i)).collect(),
        x: ens.grid.time(xi),
        y: ens.grid.time(yi),
    })
}

/// Grid indices of the rightmost geodesic's jumps, in time order. Levels are
/// 0-based line indices with `to <= from`.
pub(crate) fn geodesic_indices(lines: &[Vec<f64>], xi: usize, yi: usize, from: usize, to: usize) -> Vec<usize> {
    let len = yi - xi + 1;
    // profiles[j] is the profile on line index `to + j`.
    let mut profiles: Vec<Vec<f64>> = Vec::with_capacity(from - to + 1);
    let mut c = vec![f64::NEG_INFINITY; len];
    c[0] = 0.0;
    for lvl in (to..=from).rev() {
        sweep(&mut c, &lines[lvl][xi..=yi]);
        profiles.push(c.clone());
    }
    profiles.reverse();
    let mut jumps = Vec::with_capacity(from - to);
    let mut e = len - 1;
    for lvl in to..from {
        let below = &profiles[lvl + 1 - to];
        let f = &lines[lvl][xi..=yi];
        let mut best = f64::NEG_INFINITY;
        for s in 0..=e {
            let v = below[s] - f[s];
            if v > best {
                best = v;
            }
        }
        let mut s = e;
        loop {
            if below[s] - f[s] >= best {
                break;
            }
            s -= 1;
        }
        jumps.push(xi + s);
        e = s;
    }
    jumps.reverse();
    jumps
}

/// Pitman transform `(Wf1, Wf2)` with the gap taken from the grid start.
pub fn pitman(f1: &GridFunction, f2: &GridFunction) -> Result<(GridFunction, GridFunction)> {
    if f1.grid != f2.grid {
        return Err(LabError::GridMismatch("pitman inputs must share a grid".into()));
    }
    let mut a = f1.values.clone();
    let mut b = f2.values.clone();
    pitman_in_place(&mut a, &mut b);
    Ok((GridFunction { grid: f1.grid, values: a }, GridFunction { grid: f1.grid, values: b }))
}

#[inline]
pub(crate) fn pitman_in_place(f1: &mut [f64], f2: &mut [f64]) {
    let mut g = 0.0f64;
    for (a, b) in f1.iter_mut().zip(f2.iter_mut()) {
        let d = *b - *a;
        if d > g {
            g = d;
        }
        *a += g;
        *b -= g;
    }
}

/// Melon of an ensemble: insert lines from the bottom, reflecting each new
/// line down through the current melon.
pub fn melon(ens: &LineEnsembleGrid) -> LineEnsembleGrid {
    melon_top(ens, ens.n_lines())
}

/// Top `keep` lines of the melon. The top `keep` output lines only depend on
/// the top `keep` lines at every insertion stage, so lower lines are dropped
/// as they fall out.
pub fn melon_top(ens: &LineEnsembleGrid, keep: usize) -> LineEnsembleGrid {
    let keep = keep.clamp(1, ens.n_lines());
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(keep + 1);
    for line in ens.lines.iter().rev() {
        let mut carry = line.clone();
        for m in out.iter_mut() {
            pitman_in_place(&mut carry, m);
            std::mem::swap(&mut carry, m);
        }
        if out.len() < keep {
            out.push(carry);
        }
    }
    LineEnsembleGrid { grid: ens.grid, lines: out }
}

/// `s -> max_{m <= l <= len(G)} (G_l + f[(0, l) -> (s, m)])` with `0` the grid start.
pub fn reflect_with_boundary(boundary: &BoundaryData, ens: &LineEnsembleGrid, target_level: usize) -> Result<GridFunction> {
    let deepest = boundary.values.len();
    if deepest > ens.n_lines() {
        return Err(LabError::Domain(format!("boundary has {deepest} entries, ensemble {} lines", ens.n_lines())));
    }
    if target_level < 1 || target_level > deepest {
        return Err(LabError::Domain(format!("target level {target_level} outside 1..={deepest}")));
    }
    let mut c = vec![f64::NEG_INFINITY; ens.grid.n_points];
    for lvl in (target_level - 1..deepest).rev() {
        c[0] = c[0].max(boundary.values[lvl]);
        sweep(&mut c, &ens.lines[lvl]);
    }
    Ok(GridFunction { grid: ens.grid, values: c })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_pair(n: usize) -> LineEnsembleGrid {
        let g = Grid::new(0.0, 1.0 / (n - 1) as f64, n).unwrap();
        let f1: Vec<f64> = g.times().iter().map(|t| *t).collect();
        let f2: Vec<f64> = g.times().iter().map(|t| 2.0 * t).collect();
        LineEnsembleGrid::new(g, vec![f1, f2]).unwrap()
    }

    #[test]
    fn zero_environment() {
        let g = Grid::new(0.0, 0.1, 11).unwrap();
        let e = LineEnsembleGrid::new(g, vec![vec![0.0; 11]; 3]).unwrap();
        assert_eq!(lpp(&e, (0.0, 2), (1.0, 1)).unwrap(), 0.0);
        let p = rightmost_geodesic(&e, (0.2, 3), (0.7, 1)).unwrap();
        assert_eq!(p.jump_times, vec![p.y, p.y]);
        assert_eq!(g.index_of(p.y).unwrap(), 7);
        assert_eq!(path_length(&e, &p).unwrap(), 0.0);
    }

    #[test]
    fn linear_lines_length_and_lpp() {
        let e = linear_pair(11);
        for i in 0..11 {
            let s = i as f64 / 10.0;
            let p = JumpPath { start_level: 2, end_level: 1, jump_times: vec![e.grid.time(i)], x: 0.0, y: 1.0 };
            assert!((path_length(&e, &p).unwrap() - (1.0 + s)).abs() < 1e-12);
        }
        assert!((lpp(&e, (0.0, 2), (1.0, 1)).unwrap() - 2.0).abs() < 1e-12);
        let g = rightmost_geodesic(&e, (0.0, 2), (1.0, 1)).unwrap();
        assert_eq!(g.jump_times, vec![1.0]);
        assert!((lpp(&e, (0.3, 1), (0.8, 1)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let e = linear_pair(11);
        assert!(matches!(lpp(&e, (0.5, 2), (0.2, 1)), Err(LabError::Domain(_))));
        assert!(matches!(lpp(&e, (0.0, 1), (1.0, 2)), Err(LabError::Domain(_))));
        assert!(matches!(lpp(&e, (0.05, 2), (1.0, 1)), Err(LabError::Alignment { .. })));
    }

    #[test]
    fn pitman_examples() {
        let g = Grid::new(0.0, 0.1, 11).unwrap();
        let zero = GridFunction::from_fn(g, |_| 0.0).unwrap();
        let c = GridFunction::from_fn(g, |_| 1.5).unwrap();
        let (w1, w2) = pitman(&zero, &c).unwrap();
        assert!(w1.values.iter().all(|v| *v == 1.5) && w2.values.iter().all(|v| *v == 0.0));
        let lin = GridFunction::from_fn(g, |t| t).unwrap();
        let (w1, w2) = pitman(&zero, &lin).unwrap();
        for i in 0..11 {
            assert!((w1.values[i] - g.time(i)).abs() < 1e-15);
            assert!(w2.values[i].abs() < 1e-15);
        }
        let f1 = GridFunction::from_fn(g, |t| -t).unwrap();
        let f2 = GridFunction::from_fn(g, |t| -1.0 - 2.0 * t).unwrap();
        assert_eq!(pitman(&f1, &f2).unwrap(), (f1, f2));
    }

    #[test]
    fn melon_of_single_line_is_identity() {
        let g = Grid::new(0.0, 0.1, 5).unwrap();
        let e = LineEnsembleGrid::new(g, vec![vec![0.3, -1.0, 2.0, 0.0, 1.0]]).unwrap();
        assert_eq!(melon(&e), e);
    }

    #[test]
    fn reflect_single_boundary() {
        let e = linear_pair(11);
        let b = BoundaryData::new(vec![0.0]).unwrap();
        let r = reflect_with_boundary(&b, &e, 1).unwrap();
        for i in 0..11 {
            assert!((r.values[i] - e.lines[0][i]).abs() < 1e-15);
        }
        let long = BoundaryData::new(vec![0.0, -1.0, -2.0]).unwrap();
        assert!(reflect_with_boundary(&long, &e, 1).is_err());
    }

    #[test]
    fn backward_profile_matches_pointwise_lpp() {
        let e = linear_pair(11);
        let p = lpp_profile_to(&e, 2, (0.9, 1)).unwrap();
        for i in 0..p.values.len() {
            let s = e.grid.time(i);
            assert!((p.values[i] - lpp(&e, (s, 2), (0.9, 1)).unwrap()).abs() < 1e-12);
        }
    }
}
