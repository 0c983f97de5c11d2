//! KPZ fixed point from max-plus initial data through the variational
//! formula `h_t(y) = max_x (h0(x) + S_s(x, y))`, `s = t^{1/3}`, plus the
//! derived objects built on sheets: composition, record times, quadrangle
//! measures and coalescence times.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airy_model::{DrivingPaths, Estimator, SheetSample};
use crate::error::{LabError, Result};
use crate::path_sampler::{Grid, GridFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgePoint {
    pub x: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledGrid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

/// Certificate `h0(x) <= a + b|x| + c x^2` for all `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GrowthBound {
    pub fn at(&self, x: f64) -> f64 {
        self.a + self.b * x.abs() + self.c * x * x
    }
}

/// Initial data, finite on its max-plus support and `-inf` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialData {
    NarrowWedges {
        points: Vec<WedgePoint>,
    },
    /// Constant `level` on `support`, or on the whole line when absent.
    Flat {
        level: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<[f64; 2]>,
    },
    /// Values on a uniform grid, linearly interpolated inside runs of
    /// consecutive unmasked points.
    Sampled {
        grid: SampledGrid,
        values: Vec<f64>,
        mask: Vec<bool>,
    },
    /// A named closed form: `quadratic` (`c0 + c1 x + c2 x^2`) or
    /// `tent` (`height - slope |x - center|`).
    Parametric {
        name: String,
        params: BTreeMap<String, f64>,
        growth_bound: GrowthBound,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<[f64; 2]>,
    },
}

/// Outcome of the sub-parabolic growth check at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitaryCheck {
    pub pass: bool,
    pub reason: String,
    /// `(x, (U(x) - x^2/t) / |x|)` along `x = +-2^j` for the growth bound `U`.
    pub witness: Vec<(f64, f64)>,
}

fn param(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| LabError::InvalidParameter(format!("parametric data is missing parameter `{key}`")))
}

fn in_support(support: &Option<[f64; 2]>, x: f64) -> bool {
    support.is_none_or(|[a, b]| x >= a && x <= b)
}

fn intersect(support: Option<[f64; 2]>, a: f64, b: f64) -> Option<[f64; 2]> {
    match support {
        None => Some([a, b]),
        Some([l, r]) => Some([l.max(a), r.min(b)]),
    }
}

impl InitialData {
    pub fn narrow_wedge(x: f64) -> Self {
        InitialData::NarrowWedges { points: vec![WedgePoint { x, h: 0.0 }] }
    }

    pub fn wedges(xs: &[f64]) -> Self {
        InitialData::NarrowWedges { points: xs.iter().map(|&x| WedgePoint { x, h: 0.0 }).collect() }
    }

    pub fn flat(level: f64, support: Option<[f64; 2]>) -> Self {
        InitialData::Flat { level, support }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        make_initial(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("initial data serialises")
    }

    fn parametric_value(name: &str, params: &BTreeMap<String, f64>, x: f64) -> Result<f64> {
        match name {
            "quadratic" => Ok(param(params, "c0")? + param(params, "c1")? * x + param(params, "c2")? * x * x),
            "tent" => Ok(param(params, "height")? - param(params, "slope")? * (x - param(params, "center")?).abs()),
            other => Err(LabError::InvalidParameter(format!("unknown parametric initial data `{other}`"))),
        }
    }

    /// `h0(x)`, with `None` standing for `-inf`.
    pub fn eval(&self, x: f64) -> Option<f64> {
        match self {
            InitialData::NarrowWedges { points } => {
                let tol = 1e-9 * (1.0 + x.abs());
                points.iter().filter(|p| (p.x - x).abs() <= tol).map(|p| p.h).reduce(f64::max)
            }
            InitialData::Flat { level, support } => in_support(support, x).then_some(*level),
            InitialData::Sampled { grid, values, mask } => {
                let u = (x - grid.x0) / grid.dx;
                let i = u.round();
                if (u - i).abs() <= 1e-9 && i >= 0.0 && (i as usize) < grid.n {
                    let i = i as usize;
                    return mask[i].then_some(values[i]);
                }
                let lo = u.floor();
                if lo < 0.0 || lo as usize + 1 >= grid.n {
                    return None;
                }
                let lo = lo as usize;
                if !(mask[lo] && mask[lo + 1]) {
                    return None;
                }
                let w = u - lo as f64;
                Some(values[lo] * (1.0 - w) + values[lo + 1] * w)
            }
            InitialData::Parametric { name, params, support, .. } => {
                if !in_support(support, x) {
                    return None;
                }
                Self::parametric_value(name, params, x).ok()
            }
        }
    }

    /// Max-plus support as a sorted list of closed intervals (points are
    /// degenerate intervals).
    pub fn support(&self) -> Vec<(f64, f64)> {
        match self {
            InitialData::NarrowWedges { points } => points.iter().map(|p| (p.x, p.x)).collect(),
            InitialData::Flat { support, .. } | InitialData::Parametric { support, .. } => match support {
                None => vec![(f64::NEG_INFINITY, f64::INFINITY)],
                Some([a, b]) if a <= b => vec![(*a, *b)],
                Some(_) => vec![],
            },
            InitialData::Sampled { grid, mask, .. } => {
                let mut out = Vec::new();
                let mut i = 0;
                while i < grid.n {
                    if mask[i] {
                        let start = i;
                        while i + 1 < grid.n && mask[i + 1] {
                            i += 1;
                        }
                        out.push((grid.x0 + start as f64 * grid.dx, grid.x0 + i as f64 * grid.dx));
                    }
                    i += 1;
                }
                out
            }
        }
    }

    /// Convex hull of the support.
    pub fn hull(&self) -> Option<(f64, f64)> {
        let s = self.support();
        Some((s.first()?.0, s.last()?.1))
    }

    pub fn has_bounded_support(&self) -> bool {
        self.hull().is_some_and(|(a, b)| a.is_finite() && b.is_finite())
    }

    /// An upper bound of the form `a + b|x| + c x^2`.
    pub fn upper_bound(&self) -> GrowthBound {
        let a = match self {
            InitialData::NarrowWedges { points } => points.iter().map(|p| p.h).fold(f64::NEG_INFINITY, f64::max),
            InitialData::Flat { level, .. } => *level,
            InitialData::Sampled { values, mask, .. } => {
                values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max)
            }
            InitialData::Parametric { growth_bound, .. } => return *growth_bound,
        };
        GrowthBound { a, b: 0.0, c: 0.0 }
    }

    /// `delta_I h0`: the same function with support cut down to `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        if !(a <= b) {
            return Err(LabError::InvalidParameter(format!("empty interval [{a}, {b}]")));
        }
        let out = match self {
            InitialData::NarrowWedges { points } => InitialData::NarrowWedges {
                points: points.iter().copied().filter(|p| p.x >= a && p.x <= b).collect(),
            },
            InitialData::Flat { level, support } => InitialData::Flat { level: *level, support: intersect(*support, a, b) },
            InitialData::Sampled { grid, values, mask } => {
                let mask = mask
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let x = grid.x0 + i as f64 * grid.dx;
                        *m && x >= a - 1e-12 && x <= b + 1e-12
                    })
                    .collect();
                InitialData::Sampled { grid: *grid, values: values.clone(), mask }
            }
            InitialData::Parametric { name, params, growth_bound, support } => InitialData::Parametric {
                name: name.clone(),
                params: params.clone(),
                growth_bound: *growth_bound,
                support: intersect(*support, a, b),
            },
        };
        make_initial(out)
    }

    /// `h0 + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            InitialData::NarrowWedges { points } => points.iter_mut().for_each(|p| p.h += c),
            InitialData::Flat { level, .. } => *level += c,
            InitialData::Sampled { values, .. } => values.iter_mut().for_each(|v| *v += c),
            InitialData::Parametric { name, params, growth_bound, .. } => {
                let key = if name == "quadratic" { "c0" } else { "height" };
                *params.get_mut(key).expect("validated parameter") += c;
                growth_bound.a += c;
            }
        }
        out
    }
}

/// Validates and canonicalises initial data: wedges are sorted with
/// duplicate locations merged by max, and the support must be non-empty.
pub fn make_initial(data: InitialData) -> Result<InitialData> {
    let data = match data {
        InitialData::NarrowWedges { mut points } => {
            if points.iter().any(|p| !p.x.is_finite() || !p.h.is_finite()) {
                return Err(LabError::InvalidParameter("wedge locations and heights must be finite".into()));
            }
            points.sort_by(|p, q| p.x.total_cmp(&q.x));
            let mut merged: Vec<WedgePoint> = Vec::with_capacity(points.len());
            for p in points {
                match merged.last_mut() {
                    Some(q) if q.x == p.x => q.h = q.h.max(p.h),
                    _ => merged.push(p),
                }
            }
            InitialData::NarrowWedges { points: merged }
        }
        InitialData::Flat { level, support } => {
            if !level.is_finite() {
                return Err(LabError::InvalidParameter("flat level must be finite".into()));
            }
            InitialData::Flat { level, support }
        }
        InitialData::Sampled { grid, values, mask } => {
            if !(grid.dx > 0.0) || grid.n == 0 || values.len() != grid.n || mask.len() != grid.n {
                return Err(LabError::InvalidParameter("sampled data needs dx > 0 and n values and mask entries".into()));
            }
            if values.iter().zip(&mask).any(|(v, m)| *m && !v.is_finite()) {
                return Err(LabError::InvalidParameter("sampled values must be finite on the support".into()));
            }
            InitialData::Sampled { grid, values, mask }
        }
        InitialData::Parametric { name, params, growth_bound, support } => {
            InitialData::parametric_value(&name, &params, 0.0)?;
            let lo = support.map_or(-1e3, |s| s[0].max(-1e3));
            let hi = support.map_or(1e3, |s| s[1].min(1e3));
            for j in 0..=2000 {
                let x = lo + (hi - lo) * j as f64 / 2000.0;
                let v = InitialData::parametric_value(&name, &params, x)?;
                if v > growth_bound.at(x) + 1e-9 * (1.0 + v.abs()) {
                    return Err(LabError::InvalidParameter(format!("growth bound violated at x={x}")));
                }
            }
            InitialData::Parametric { name, params, growth_bound, support }
        }
    };
    if data.support().is_empty() {
        return Err(LabError::EmptySupport);
    }
    Ok(data)
}

/// `h0` is `t`-finitary when `(h0(x) - x^2/t)/|x| -> -inf`. Bounded support
/// passes outright; otherwise the growth bound `a + b|x| + c x^2` decides,
/// and it passes exactly when `c < 1/t`.
pub fn validate_finitary(h0: &InitialData, t: f64) -> FinitaryCheck {
    if !(t > 0.0) {
        return FinitaryCheck { pass: false, reason: format!("time must be positive, got {t}"), witness: vec![] };
    }
    if h0.has_bounded_support() {
        return FinitaryCheck { pass: true, reason: "bounded support".into(), witness: vec![] };
    }
    let u = h0.upper_bound();
    let (lo, hi) = h0.hull().expect("validated support");
    let witness = (1..=16)
        .flat_map(|j| {
            let x = 2f64.powi(j);
            [-x, x]
        })
        .filter(|x| *x >= lo && *x <= hi)
        .map(|x| (x, (u.at(x) - x * x / t) / x.abs()))
        .collect();
    let pass = u.c < 1.0 / t;
    let reason = if pass {
        format!("quadratic coefficient {} below 1/t = {}", u.c, 1.0 / t)
    } else {
        format!("quadratic coefficient {} not below 1/t = {}", u.c, 1.0 / t)
    };
    FinitaryCheck { pass, reason, witness }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Allowance for sheet fluctuations above `-(x-y)^2/t` when deciding
    /// that a tail of the support cannot hold the maximiser.
    pub slack: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { slack: 10.0 }
    }
}

/// Runs `best(R)` (the maximum over support points with `|x| <= R`) for
/// doubling `R` until the parabola bound rules out the rest of the support.
fn truncated_max(h0: &InitialData, t: f64, ys: &[f64], slack: f64, mut best: impl FnMut(f64) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let (lo, hi) = h0.hull().ok_or(LabError::EmptySupport)?;
    let u = h0.upper_bound();
    let ymax = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let k = 2.0 / t - 2.0 * u.c;
    let r_mono = (u.b.abs() + 2.0 * ymax / t) / k;
    let mut r = ymax + 1.0;
    loop {
        let b = best(r)?;
        if lo >= -r && hi <= r {
            return Ok(b);
        }
        if r >= r_mono {
            let tail = |x: f64, y: f64| u.at(x) - (x - y) * (x - y) / t + slack;
            let ok = ys.iter().zip(&b).all(|(&y, &v)| (hi <= r || tail(r, y) < v) && (lo >= -r || tail(-r, y) < v));
            if ok {
                return Ok(b);
            }
        }
        r *= 2.0;
    }
}

fn check_finitary(h0: &InitialData, t: f64) -> Result<()> {
    let check = validate_finitary(h0, t);
    if !check.pass {
        return Err(LabError::NotFinitary(check.reason));
    }
    Ok(())
}

fn window_error(r: f64, lo: f64, hi: f64) -> LabError {
    LabError::WindowTooSmall(format!("support within radius {r} is not covered by [{lo}, {hi}]"))
}

/// `h_t(y) = max_x (h0(x) + s S(x/s^2, y/s^2))` over the x-grid of the
/// rescaled unit-time sheet, with `s = t^{1/3}`.
pub fn evolve(h0: &InitialData, sheet: &SheetSample, t: f64) -> Result<GridFunction> {
    evolve_with(h0, sheet, t, &EvolveOptions::default())
}

pub fn evolve_with(h0: &InitialData, sheet: &SheetSample, t: f64, opts: &EvolveOptions) -> Result<GridFunction> {
    check_finitary(h0, t)?;
    let sh = sheet.rescaled(t.cbrt())?;
    let xg = sh.x_grid;
    let ys = sh.y_grid.times();
    if let InitialData::NarrowWedges { points } = h0 {
        for p in points {
            if xg.contains(p.x) {
                xg.index_of(p.x)?;
            }
        }
    }
    let values = truncated_max(h0, t, &ys, opts.slack, |r| {
        let (lo, hi) = h0.hull().expect("validated support");
        if lo.max(-r) < xg.t0 - 1e-9 * xg.dt || hi.min(r) > xg.end() + 1e-9 * xg.dt {
            return Err(window_error(r, xg.t0, xg.end()));
        }
        let mut best = vec![f64::NEG_INFINITY; ys.len()];
        for (ix, x) in xg.times().into_iter().enumerate() {
            if x.abs() > r + 1e-12 {
                continue;
            }
            if let Some(h) = h0.eval(x) {
                for (b, s) in best.iter_mut().zip(sh.row(ix)) {
                    *b = b.max(h + s);
                }
            }
        }
        if best.iter().any(|b| !b.is_finite()) {
            return Err(LabError::WindowTooSmall("no support point on the sheet grid".into()));
        }
        Ok(best)
    })?;
    GridFunction::new(sh.y_grid, values)
}

/// `evolve` computed straight from driving paths by one dynamic programme
/// seeded with the initial data, without building the sheet. Narrow wedges
/// move to the nearest raw grid time. Agrees with
/// `evolve` on the sheet from the same paths whenever that sheet's x-grid
/// is the full raw grid.
pub fn evolve_direct(
    h0: &InitialData,
    d: &DrivingPaths,
    y_window: (f64, f64),
    t: f64,
    stride: usize,
    est: Estimator,
    opts: &EvolveOptions,
) -> Result<GridFunction> {
    check_finitary(h0, t)?;
    let s = t.cbrt();
    let s2 = s * s;
    let ya = d.y_axis((y_window.0 / s2, y_window.1 / s2), stride)?;
    let ys: Vec<f64> = ya.grid.times().iter().map(|y| y * s2).collect();
    let y_last = ys[ys.len() - 1];
    let raw = |d: &DrivingPaths, yidx: &[usize], r: f64| -> Result<Vec<f64>> {
        let p = d.prelimit;
        let last = d.last_index();
        let mut init = Vec::new();
        let mut lo = None;
        let (hl, hh) = h0.hull().expect("validated support");
        // Support beyond the last output point cannot reach any output.
        let (need_lo, need_hi) = (hl.max(-r), hh.min(r).min(y_last));
        let (have_lo, have_hi) = (p.x_of_raw(d.raw_time(0)) * s2, p.x_of_raw(d.raw_time(last)) * s2);
        if need_lo < have_lo - 1e-9 || need_hi > have_hi + 1e-9 {
            return Err(window_error(r, have_lo, have_hi));
        }
        // Wedges sit at continuum points, so each one moves to its nearest raw time.
        let mut snapped = std::collections::BTreeMap::new();
        if let InitialData::NarrowWedges { points } = h0 {
            let t0 = d.raw_time(0);
            let dt = d.raw_time(1) - t0;
            for w in points.iter().filter(|w| w.x.abs() <= r + 1e-12) {
                let raw_x = 2.0 * w.x / s2 / p.n13;
                let i = ((raw_x - t0) / dt).round();
                if i < 0.0 || i as usize > last {
                    return Err(window_error(r, have_lo, have_hi));
                }
                let e = snapped.entry(i as usize).or_insert(f64::NEG_INFINITY);
                *e = f64::max(*e, w.h);
            }
        }
        for i in 0..=last {
            let xp = p.x_of_raw(d.raw_time(i));
            let x = xp * s2;
            let v = match h0 {
                InitialData::NarrowWedges { .. } => snapped.get(&i).copied(),
                _ if x.abs() <= r + 1e-12 => h0.eval(x),
                _ => None,
            };
            match v {
                Some(h) => {
                    lo.get_or_insert(i);
                    init.push(d.raw_time(i) * p.sqrt_n + h / s / p.n16);
                }
                None if lo.is_some() => init.push(f64::NEG_INFINITY),
                None => {}
            }
        }
        let lo = lo.ok_or_else(|| LabError::WindowTooSmall("no support point on the raw grid".into()))?;
        let c = d.evolve_raw(lo, &init);
        yidx.iter()
            .map(|&yi| {
                if yi < lo {
                    return Err(LabError::Domain("output time precedes the support".into()));
                }
                Ok(c[yi - lo])
            })
            .collect()
    };
    let values = truncated_max(h0, t, &ys, opts.slack, |r| {
        let fine = raw(d, &ya.raw, r)?;
        let combined = match est {
            Estimator::Grid => fine,
            Estimator::Richardson => {
                let cd = d.coarsened(4)?;
                let cidx: Vec<usize> = ya.raw.iter().map(|i| i / 4).collect();
                let coarse = raw(&cd, &cidx, r)?;
                fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect()
            }
        };
        let p = d.prelimit;
        Ok(combined
            .iter()
            .zip(ya.grid.times())
            .map(|(c, yp)| s * (p.n16 * (c - 2.0 * p.sqrt_n) - 2.0 * yp * p.n13))
            .collect())
    })?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LabError::WindowTooSmall("an output point is unreachable from the support".into()));
    }
    let grid = Grid::new(ya.grid.t0 * s2, ya.grid.dt * s2, ya.grid.n_points)?;
    GridFunction::new(grid, values)
}

fn same_grid(a: &Grid, b: &Grid) -> bool {
    a.n_points == b.n_points && (a.dt - b.dt).abs() <= 1e-12 * a.dt && (a.t0 - b.t0).abs() <= 1e-9 * a.dt
}

/// `out(x, y) = max_z (S1(x, z) + S2(z, y))`; the result has scale
/// `(s1^3 + s2^3)^{1/3}`.
pub fn compose(sheet1: &SheetSample, sheet2: &SheetSample) -> Result<SheetSample> {
    if !same_grid(&sheet1.y_grid, &sheet2.x_grid) {
        return Err(LabError::GridMismatch(format!(
            "intermediate grids differ: {:?} vs {:?}",
            sheet1.y_grid, sheet2.x_grid
        )));
    }
    let nz = sheet1.ny();
    let ny = sheet2.ny();
    let rows: Vec<Vec<f64>> = (0..sheet1.nx())
        .into_par_iter()
        .map(|ix| {
            let r1 = sheet1.row(ix);
            let mut out = vec![f64::NEG_INFINITY; ny];
            for (iz, a) in r1.iter().enumerate().take(nz) {
                for (o, b) in out.iter_mut().zip(sheet2.row(iz)) {
                    *o = o.max(a + b);
                }
            }
            out
        })
        .collect();
    let scale = (sheet1.scale.powi(3) + sheet2.scale.powi(3)).cbrt();
    SheetSample::new(sheet1.x_grid, sheet2.y_grid, rows.concat(), scale)
}

/// Raw end index of unit time in `d`, required to sit on the coarse grid
/// when `est` needs one.
fn unit_time_steps(d: &DrivingPaths, est: Estimator) -> Result<i64> {
    let dt = d.paths.grid.dt;
    let m = (1.0 / dt).round();
    if (m * dt - 1.0).abs() > 1e-9 || (est == Estimator::Richardson && m as i64 % 4 != 0) {
        return Err(LabError::InvalidParameter(format!("1/dt must be an integer (divisible by 4 for Richardson), dt={dt}")));
    }
    Ok(m as i64)
}

fn composed_raw(d1: &DrivingPaths, d2: &DrivingPaths, m: i64, z_steps: i64) -> Result<f64> {
    let row = d1.row_raw(d1.zero);
    let end2 = d2.zero as i64 + m;
    if end2 > d2.last_index() as i64 {
        return Err(LabError::WindowTooSmall("second sheet does not reach unit time".into()));
    }
    let col = d2.column_raw(end2 as usize);
    let mut best = f64::NEG_INFINITY;
    for k in -z_steps..=z_steps {
        let (i1, i2) = (m + k, d2.zero as i64 + k);
        if i1 <= 0 || i1 as usize >= row.len() || i2 < 0 {
            return Err(LabError::WindowTooSmall(format!("intermediate point {k} outside the sampled paths")));
        }
        best = best.max(row[i1 as usize] + col[i2 as usize]);
    }
    Ok(best)
}

/// `max_z (s S1(0, z/s^2) + s S2(z/s^2, 0))` for two independent unit
/// prelimit sheets: `S1` from `d1` (paths from raw time 0), `S2` from `d2`
/// (paths reaching raw time 1), with `|z/s^2| <= z_max`. Both drivings need
/// the same `n` and `dt`. The result is a sample of the scale
/// `2^{1/3} s` sheet at `(0, 0)`.
pub fn compose_at_origin(d1: &DrivingPaths, d2: &DrivingPaths, s: f64, z_max: f64, est: Estimator) -> Result<f64> {
    let p = d1.prelimit;
    if p.n != d2.prelimit.n || d1.paths.grid.dt != d2.paths.grid.dt {
        return Err(LabError::GridMismatch("driving paths differ in n or dt".into()));
    }
    if !(s > 0.0) || !(z_max >= 0.0) {
        return Err(LabError::InvalidParameter(format!("need s > 0 and z_max >= 0, got s={s}, z_max={z_max}")));
    }
    let m = unit_time_steps(d1, est)?;
    let dt = d1.paths.grid.dt;
    let step = if est == Estimator::Richardson { 4 } else { 1 };
    let z_steps = ((p.raw_start(z_max) / dt) as i64 / step) * step;
    let fine = composed_raw(d1, d2, m, z_steps)?;
    let raw = match est {
        Estimator::Grid => fine,
        Estimator::Richardson => 2.0 * fine - composed_raw(&d1.coarsened(4)?, &d2.coarsened(4)?, m / 4, z_steps / 4)?,
    };
    Ok(s * p.n16 * (raw - 4.0 * p.sqrt_n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub times: Vec<f64>,
    pub a: f64,
}

impl RecordSet {
    /// Whether some record time lies in `[b, c]`.
    pub fn hits(&self, b: f64, c: f64) -> bool {
        self.times.iter().any(|t| *t >= b && *t <= c)
    }
}

/// Grid times `y >= a` where `h(y) >= max_{a <= s <= y} h(s) - tol`.
pub fn record_times_tol(h: &GridFunction, a: f64, tol: f64) -> Result<RecordSet> {
    let ia = h.grid.index_of(a)?;
    let mut running = f64::NEG_INFINITY;
    let mut times = Vec::new();
    for i in ia..h.grid.n_points {
        let v = h.values[i];
        running = running.max(v);
        if v >= running - tol {
            times.push(h.grid.time(i));
        }
    }
    Ok(RecordSet { times, a: h.grid.time(ia) })
}

pub fn record_times(h: &GridFunction, a: f64) -> Result<RecordSet> {
    record_times_tol(h, a, 0.0)
}

/// `F(x, y) = S(x,y) - S(x,y0) - S(x0,y) + S(x0,y0)` on the grid quadrant
/// `x >= x0, y >= y0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrangleCDF {
    pub base: (f64, f64),
    pub x_grid: Grid,
    pub y_grid: Grid,
    /// Row-major: `values[ix * ny + iy]`.
    pub values: Vec<f64>,
}

impl QuadrangleCDF {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.y_grid.n_points + iy]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Non-decreasing in each argument up to `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        let (nx, ny) = (self.x_grid.n_points, self.y_grid.n_points);
        (0..nx).all(|i| (0..ny).all(|j| (i == 0 || self.get(i, j) >= self.get(i - 1, j) - tol) && (j == 0 || self.get(i, j) >= self.get(i, j - 1) - tol)))
    }
}

fn quadrangle_block(sheet: &SheetSample, ix0: usize, iy0: usize, ix1: usize, iy1: usize) -> Vec<f64> {
    let base = sheet.get(ix0, iy0);
    let mut out = Vec::with_capacity((ix1 - ix0 + 1) * (iy1 - iy0 + 1));
    for ix in ix0..=ix1 {
        let left = sheet.get(ix, iy0);
        for iy in iy0..=iy1 {
            out.push(sheet.get(ix, iy) - left - sheet.get(ix0, iy) + base);
        }
    }
    out
}

pub fn quadrangle_cdf(sheet: &SheetSample, x0: f64, y0: f64) -> Result<QuadrangleCDF> {
    let ix0 = sheet.x_grid.index_of(x0).map_err(|_| LabError::Domain(format!("x0={x0} is not a sheet grid point")))?;
    let iy0 = sheet.y_grid.index_of(y0).map_err(|_| LabError::Domain(format!("y0={y0} is not a sheet grid point")))?;
    let (ix1, iy1) = (sheet.nx() - 1, sheet.ny() - 1);
    if ix0 == ix1 || iy0 == iy1 {
        return Err(LabError::Domain("base point on the far edge of the sheet".into()));
    }
    Ok(QuadrangleCDF {
        base: (sheet.x_grid.time(ix0), sheet.y_grid.time(iy0)),
        x_grid: sheet.x_grid.slice(ix0, ix1)?,
        y_grid: sheet.y_grid.slice(iy0, iy1)?,
        values: quadrangle_block(sheet, ix0, iy0, ix1, iy1),
    })
}

/// `Delta^M` at base `(x0, y0)`: the largest `F(x, y)` over the box
/// `[x0, x0+M] x [y0, y0+M]` (grid points up to round-off).
pub fn delta_m(sheet: &SheetSample, base: (f64, f64), m: f64) -> Result<f64> {
    let (x0, y0) = base;
    let ix0 = sheet.x_grid.index_of(x0).map_err(|_| LabError::Domain(format!("x0={x0} is not a sheet grid point")))?;
    let iy0 = sheet.y_grid.index_of(y0).map_err(|_| LabError::Domain(format!("y0={y0} is not a sheet grid point")))?;
    if !(m >= 0.0) {
        return Err(LabError::Domain(format!("box size must be non-negative, got {m}")));
    }
    let ix1 = ix0 + (m / sheet.x_grid.dt + 1e-9).floor() as usize;
    let iy1 = iy0 + (m / sheet.y_grid.dt + 1e-9).floor() as usize;
    if ix1 >= sheet.nx() || iy1 >= sheet.ny() {
        return Err(LabError::Domain(format!("box of size {m} at ({x0}, {y0}) leaves the sheet")));
    }
    Ok(quadrangle_block(sheet, ix0, iy0, ix1, iy1).into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `f - f(y)`.
pub fn reanchor(f: &GridFunction, y: f64) -> Result<GridFunction> {
    let b = f.values[f.grid.index_of(y)?];
    GridFunction::new(f.grid, f.values.iter().map(|v| v - b).collect())
}

fn abs_diff(inc1: &GridFunction, inc2: &GridFunction, y: f64) -> Result<(usize, Vec<f64>)> {
    if !same_grid(&inc1.grid, &inc2.grid) {
        return Err(LabError::GridMismatch("increments live on different grids".into()));
    }
    let iy = inc1.grid.index_of(y)?;
    Ok((iy, inc1.values.iter().zip(&inc2.values).map(|(a, b)| (a - b).abs()).collect()))
}

/// Smallest grid time `tau > y` with `|inc1 - inc2| <= tol` on `[tau, end]`.
/// Both increments are expected to vanish at `y` (see [`reanchor`]).
pub fn coalescence_tau(inc1: &GridFunction, inc2: &GridFunction, y: f64, tol: f64) -> Result<Option<f64>> {
    let (iy, diff) = abs_diff(inc1, inc2, y)?;
    let n = diff.len();
    let mut first = n;
    while first > iy + 1 && diff[first - 1] <= tol {
        first -= 1;
    }
    Ok((first < n).then(|| inc1.grid.time(first)))
}

/// Largest grid time `tau > y` with `|inc1 - inc2| <= tol` on `[y, tau]`.
pub fn agreement_until(inc1: &GridFunction, inc2: &GridFunction, y: f64, tol: f64) -> Result<Option<f64>> {
    let (iy, diff) = abs_diff(inc1, inc2, y)?;
    let mut last = iy;
    while last + 1 < diff.len() && diff[last + 1] <= tol {
        last += 1;
    }
    Ok((last > iy).then(|| inc1.grid.time(last)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t0: f64, dt: f64, n: usize) -> Grid {
        Grid::new(t0, dt, n).unwrap()
    }

    #[test]
    fn restriction_of_flat() {
        let h = InitialData::flat(0.0, None).restrict(0.0, 1.0).unwrap();
        assert_eq!(h, InitialData::flat(0.0, Some([0.0, 1.0])));
        assert_eq!(h.support(), vec![(0.0, 1.0)]);
    }

    #[test]
    fn wedges_support_and_json() {
        let h = InitialData::from_json(r#"{"type":"narrow_wedges","points":[{"x":1,"h":0},{"x":0,"h":0}]}"#).unwrap();
        assert_eq!(h.support(), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(InitialData::from_json(&h.to_json()).unwrap(), h);
    }

    #[test]
    fn all_masked_is_empty() {
        let s = InitialData::Sampled { grid: SampledGrid { x0: 0.0, dx: 0.1, n: 3 }, values: vec![0.0; 3], mask: vec![false; 3] };
        assert_eq!(make_initial(s), Err(LabError::EmptySupport));
    }

    #[test]
    fn sampled_interpolates_inside_runs() {
        let s = InitialData::Sampled {
            grid: SampledGrid { x0: 0.0, dx: 1.0, n: 4 },
            values: vec![0.0, 2.0, 5.0, 1.0],
            mask: vec![true, true, false, true],
        };
        assert_eq!(s.eval(0.5), Some(1.0));
        assert_eq!(s.eval(1.5), None);
        assert_eq!(s.eval(3.0), Some(1.0));
        assert_eq!(s.support(), vec![(0.0, 1.0), (3.0, 3.0)]);
    }

    fn quadratic(c2: f64) -> InitialData {
        let params = BTreeMap::from([("c0".to_string(), 0.0), ("c1".to_string(), 0.0), ("c2".to_string(), c2)]);
        make_initial(InitialData::Parametric {
            name: "quadratic".into(),
            params,
            growth_bound: GrowthBound { a: 0.0, b: 0.0, c: c2 },
            support: None,
        })
        .unwrap()
    }

    #[test]
    fn finitary_checks() {
        assert!(validate_finitary(&InitialData::wedges(&[0.0, 1.0]), 0.3).pass);
        let t = 2.0;
        let c = validate_finitary(&quadratic(1.0 / t), t);
        assert!(!c.pass);
        assert!(c.witness.iter().all(|(_, r)| r.abs() < 1e-12));
        let h = quadratic(1.0 / (2.0 * t));
        assert!(validate_finitary(&h, 1.9 * t).pass);
        assert!(!validate_finitary(&h, 2.0 * t).pass);
        let w = validate_finitary(&h, t).witness;
        assert!(w.windows(2).filter(|p| p[0].0 > 0.0 && p[1].0 > p[0].0).all(|p| p[1].1 < p[0].1));
    }

    #[test]
    fn growth_bound_is_checked() {
        let params = BTreeMap::from([("c0".to_string(), 0.0), ("c1".to_string(), 0.0), ("c2".to_string(), 1.0)]);
        let bad = InitialData::Parametric { name: "quadratic".into(), params, growth_bound: GrowthBound { a: 0.0, b: 0.0, c: 0.5 }, support: None };
        assert!(matches!(make_initial(bad), Err(LabError::InvalidParameter(_))));
    }

    fn toy_sheet() -> SheetSample {
        let g = grid(-2.0, 0.25, 17);
        SheetSample::from_fn(g, g, |x, y| -(x - y) * (x - y) + (3.0 * x).sin() * (2.0 * y).cos() * 0.1).unwrap()
    }

    #[test]
    fn wedge_evolution_reads_sheet_rows() {
        let s = toy_sheet();
        let h = evolve(&InitialData::narrow_wedge(0.0), &s, 1.0).unwrap();
        let ix = s.x_grid.index_of(0.0).unwrap();
        assert_eq!(h.values, s.row(ix));
        let two = evolve(&InitialData::wedges(&[0.0, 1.0]), &s, 1.0).unwrap();
        let i1 = s.x_grid.index_of(1.0).unwrap();
        for iy in 0..s.ny() {
            assert_eq!(two.values[iy], s.get(ix, iy).max(s.get(i1, iy)));
        }
    }

    #[test]
    fn flat_on_line_needs_wide_window() {
        let s = toy_sheet();
        let r = evolve(&InitialData::flat(0.0, None), &s, 1.0);
        assert!(matches!(r, Err(LabError::WindowTooSmall(_))));
    }

    #[test]
    fn non_finitary_rejected() {
        let s = toy_sheet();
        assert!(matches!(evolve(&quadratic(1.0), &s, 1.0), Err(LabError::NotFinitary(_))));
    }

    #[test]
    fn compose_parabolas() {
        let g = grid(-2.0, 0.01, 401);
        let p = SheetSample::from_fn(g, g, |x, y| -(x - y) * (x - y)).unwrap();
        let c = compose(&p, &p).unwrap();
        for ix in (0..401).step_by(37) {
            for iy in (0..401).step_by(41) {
                let (x, y) = (g.time(ix), g.time(iy));
                let want = -(x - y) * (x - y) / 2.0;
                assert!((c.get(ix, iy) - want).abs() <= 0.01 * 0.01, "{x} {y}");
            }
        }
    }

    #[test]
    fn compose_grid_mismatch() {
        let a = SheetSample::from_fn(grid(0.0, 0.1, 5), grid(0.0, 0.1, 5), |_, _| 0.0).unwrap();
        let b = SheetSample::from_fn(grid(0.0, 0.1, 6), grid(0.0, 0.1, 5), |_, _| 0.0).unwrap();
        assert!(matches!(compose(&a, &b), Err(LabError::GridMismatch(_))));
    }

    #[test]
    fn records() {
        let g = grid(0.0, 0.25, 9);
        let v = GridFunction::from_fn(g, |y| (y - 1.0).abs()).unwrap();
        assert_eq!(record_times(&v, 0.0).unwrap().times, vec![0.0, 2.0]);
        let inc = GridFunction::from_fn(g, |y| y).unwrap();
        assert_eq!(record_times(&inc, 0.0).unwrap().times, g.times());
        let dec = GridFunction::from_fn(g, |y| -y).unwrap();
        assert_eq!(record_times(&dec, 0.5).unwrap().times, vec![0.5]);
    }

    #[test]
    fn quadrangle_of_product() {
        let g = grid(0.0, 0.125, 17);
        let s = SheetSample::from_fn(g, g, |x, y| x * y).unwrap();
        assert!((delta_m(&s, (0.5, 0.5), 1.0).unwrap() - 1.0).abs() < 1e-12);
        let q = quadrangle_cdf(&s, 0.5, 0.25).unwrap();
        assert!(q.is_monotone(1e-12));
        assert_eq!(q.get(0, 3), 0.0);
        assert!(delta_m(&s, (0.5, 0.5), 2.0).is_err());
    }

    #[test]
    fn coalescence_definitions() {
        let g = grid(0.0, 0.1, 21);
        let f = GridFunction::from_fn(g, |y| y.sin()).unwrap();
        assert_eq!(coalescence_tau(&f, &f, 0.0, 1e-6).unwrap(), Some(g.time(1)));
        let ramp = GridFunction::from_fn(g, |y| y.sin() + (1.2 - y).max(0.0)).unwrap();
        let tau = coalescence_tau(&f, &ramp, 0.0, 1e-6).unwrap().unwrap();
        assert!((tau - 1.2).abs() < 1e-9);
        assert_eq!(agreement_until(&f, &ramp, 0.0, 1e-6).unwrap(), None);
        let late = GridFunction::from_fn(g, |y| y.sin() + (y - 0.5).max(0.0)).unwrap();
        assert!((agreement_until(&f, &late, 0.0, 1e-6).unwrap().unwrap() - 0.5).abs() < 1e-9);
    }
}
