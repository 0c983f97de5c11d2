//! CSV and JSON artifacts: ensembles (`t,line_1,...,line_k`), sheets in
//! long form (`x,y,S`), profiles (`y,h`), run manifests and reports.
//!
//! Floats are written with 17 significant digits and `\n` line endings so
//! identical runs produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airy_model::SheetSample;
use crate::error::{LabError, Result};
use crate::lpp_core::LineEnsembleGrid;
use crate::path_sampler::{Grid, GridFunction};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn ensemble_csv(ens: &LineEnsembleGrid) -> String {
    let mut out = String::from("t");
    for k in 1..=ens.n_lines() {
        out.push_str(&format!(",line_{k}"));
    }
    out.push('\n');
    for (i, t) in ens.grid.times().into_iter().enumerate() {
        out.push_str(&fmt_f64(t));
        for l in &ens.lines {
            out.push(',');
            out.push_str(&fmt_f64(l[i]));
        }
        out.push('\n');
    }
    out
}

pub fn sheet_csv(sheet: &SheetSample) -> String {
    let mut out = String::from("x,y,S\n");
    for (ix, x) in sheet.x_grid.times().into_iter().enumerate() {
        for (iy, y) in sheet.y_grid.times().into_iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", fmt_f64(x), fmt_f64(y), fmt_f64(sheet.get(ix, iy))));
        }
    }
    out
}

/// Profile CSV with the given two column names, e.g. `y,h`.
pub fn profile_csv(f: &GridFunction, x_name: &str, v_name: &str) -> String {
    let mut out = format!("{x_name},{v_name}\n");
    for (t, v) in f.grid.times().into_iter().zip(&f.values) {
        out.push_str(&format!("{},{}\n", fmt_f64(t), fmt_f64(*v)));
    }
    out
}

fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| LabError::Parse("missing header".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| LabError::Parse(format!("row {}: {e}", k + 2)))?;
        if row.len() != header.len() {
            return Err(LabError::Parse(format!("row {} has {} fields, header has {}", k + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn grid_from_column(col: &[f64]) -> Result<Grid> {
    if col.len() < 2 {
        return Err(LabError::Parse("need at least two grid points".into()));
    }
    let dt = (col[col.len() - 1] - col[0]) / (col.len() - 1) as f64;
    let g = Grid::new(col[0], dt, col.len())?;
    for (i, v) in col.iter().enumerate() {
        if (g.time(i) - v).abs() > 1e-9 * dt.max(1.0) {
            return Err(LabError::Parse(format!("grid column is not uniform at row {}", i + 2)));
        }
    }
    Ok(g)
}

fn expect_header(header: &[String], want: &[&str]) -> Result<()> {
    if header.len() != want.len() || header.iter().zip(want).any(|(h, w)| h != w) {
        return Err(LabError::Parse(format!("expected header {}, got {}", want.join(","), header.join(","))));
    }
    Ok(())
}

pub fn parse_ensemble_csv(text: &str) -> Result<LineEnsembleGrid> {
    let (header, rows) = parse_table(text)?;
    let want: Vec<String> = std::iter::once("t".to_string()).chain((1..header.len()).map(|k| format!("line_{k}"))).collect();
    if header.len() < 2 || header != want {
        return Err(LabError::Parse(format!("expected header t,line_1,...; got {}", header.join(","))));
    }
    let grid = grid_from_column(&rows.iter().map(|r| r[0]).collect::<Vec<_>>())?;
    let lines = (1..header.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    LineEnsembleGrid::new(grid, lines)
}

pub fn parse_sheet_csv(text: &str) -> Result<SheetSample> {
    let (header, rows) = parse_table(text)?;
    expect_header(&header, &["x", "y", "S"])?;
    let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    xs.dedup();
    let ny = rows.len() / xs.len().max(1);
    if xs.len() * ny != rows.len() {
        return Err(LabError::Parse("sheet rows do not form a full grid".into()));
    }
    let ys: Vec<f64> = rows[..ny].iter().map(|r| r[1]).collect();
    let x_grid = grid_from_column(&xs)?;
    let y_grid = grid_from_column(&ys)?;
    for (k, r) in rows.iter().enumerate() {
        if r[0] != xs[k / ny] || r[1] != ys[k % ny] {
            return Err(LabError::Parse(format!("sheet row {} out of x-major order", k + 2)));
        }
    }
    SheetSample::new(x_grid, y_grid, rows.iter().map(|r| r[2]).collect(), 1.0)
}

pub fn parse_profile_csv(text: &str, x_name: &str, v_name: &str) -> Result<GridFunction> {
    let (header, rows) = parse_table(text)?;
    expect_header(&header, &[x_name, v_name])?;
    let grid = grid_from_column(&rows.iter().map(|r| r[0]).collect::<Vec<_>>())?;
    GridFunction::new(grid, rows.iter().map(|r| r[1]).collect())
}

/// Hex SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let v = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&v)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config_hash: String,
    pub global_seed: u64,
    pub artifact_version: String,
    /// Seconds since the Unix epoch.
    pub start_time: f64,
    pub end_time: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    /// Manifest path for an output file: `<out>.manifest.json`.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_round_trip() {
        let g = Grid::new(-0.5, 0.25, 5).unwrap();
        let e = LineEnsembleGrid::new(g, vec![vec![1.0, 2.0, 3.0, 4.0, 5.5], vec![0.0, 0.1, 0.2, 0.3, 1.0 / 3.0]]).unwrap();
        let text = ensemble_csv(&e);
        assert!(text.starts_with("t,line_1,line_2\n"));
        let back = parse_ensemble_csv(&text).unwrap();
        assert_eq!(back.lines, e.lines);
        assert_eq!(ensemble_csv(&back), text);
    }

    #[test]
    fn sheet_round_trip() {
        let g = Grid::new(0.0, 0.5, 3).unwrap();
        let s = SheetSample::from_fn(g, g, |x, y| x - 2.0 * y + 0.1).unwrap();
        let text = sheet_csv(&s);
        assert!(text.starts_with("x,y,S\n"));
        assert_eq!(parse_sheet_csv(&text).unwrap().values, s.values);
    }

    #[test]
    fn profile_header_checked() {
        let g = Grid::new(0.0, 0.5, 3).unwrap();
        let f = GridFunction::from_fn(g, |y| y * y).unwrap();
        let text = profile_csv(&f, "y", "h");
        assert_eq!(parse_profile_csv(&text, "y", "h").unwrap(), f);
        assert!(parse_profile_csv(&text, "t", "h").is_err());
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&serde_json::json!({"n": 100, "dt": 2e-4})).unwrap();
        assert_eq!(a, config_hash(&serde_json::json!({"dt": 2e-4, "n": 100})).unwrap());
        assert_eq!(a.len(), 64);
    }
}
