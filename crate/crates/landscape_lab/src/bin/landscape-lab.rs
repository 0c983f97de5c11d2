use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use landscape_lab::acceptance::registry;
use landscape_lab::airy_model::{self, EnsembleOptions, Estimator, SheetOptions};
use landscape_lab::capacity::{self, CapacityOptions, CompactSetSpec, EnergyKind, GridMeasure, HittingProcess, IntervalSet};
use landscape_lab::io::{self, RunManifest};
use landscape_lab::kpz_engine::{self, EvolveOptions, InitialData};
use landscape_lab::lpp_core::{self, LineEnsembleGrid};
use landscape_lab::path_sampler::{sample_bm, Grid};
use landscape_lab::rng::{label_id, RngStream};
use landscape_lab::stats_harness::{run_suite_with, Selection};
use landscape_lab::{LabError, Result};

const SEED_ENV: &str = "LANDSCAPE_LAB_SEED";

#[derive(Parser, Serialize)]
#[command(name = "landscape-lab", version, about = "Seeded simulations of the Airy sheet, KPZ fixed point and related capacities")]
struct Cli {
    /// Worker threads; defaults to all cores. Never changes results.
    #[arg(long, global = true)]
    #[serde(skip)]
    threads: Option<usize>,
    /// Global seed; LANDSCAPE_LAB_SEED is used when the flag is absent.
    #[arg(long, global = true)]
    #[serde(skip)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Melons, prelimit Airy line ensembles and sheets.
    #[command(subcommand)]
    Sim(Sim),
    /// KPZ fixed point evolution and derived objects.
    #[command(subcommand)]
    Kpz(Kpz),
    /// Energies, capacities, dimensions and hitting frequencies.
    #[command(subcommand)]
    Cap(Cap),
    /// The acceptance suite.
    #[command(subcommand)]
    Test(TestCmd),
}

#[derive(Subcommand, Serialize)]
enum Sim {
    /// Melon of `n` independent Brownian motions started at 0.
    Melon {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        /// Number of top lines written; all by default.
        #[arg(long)]
        lines: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    AiryEnsemble {
        #[command(flatten)]
        pre: PrelimitArgs,
        #[arg(long, default_value_t = 1.0)]
        y_max: f64,
        #[arg(long, default_value_t = 10)]
        lines: usize,
        #[arg(long, default_value_t = 4)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    AirySheet {
        #[command(flatten)]
        pre: PrelimitArgs,
        #[arg(long, value_parser = parse_pair, default_value = "-1,1", allow_hyphen_values = true)]
        x_window: (f64, f64),
        #[arg(long, value_parser = parse_pair, default_value = "-1,1", allow_hyphen_values = true)]
        y_window: (f64, f64),
        #[arg(long, default_value_t = 40)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Serialize, Clone, Copy)]
struct PrelimitArgs {
    /// Number of driving Brownian motions.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Raw time step.
    #[arg(long, default_value_t = 2e-4)]
    dt: f64,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Grid)]
    estimator: EstimatorArg,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum EstimatorArg {
    Grid,
    Richardson,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Grid => Estimator::Grid,
            EstimatorArg::Richardson => Estimator::Richardson,
        }
    }
}

#[derive(Args, Serialize, Clone)]
struct EvolveArgs {
    #[command(flatten)]
    pre: PrelimitArgs,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, value_parser = parse_pair, default_value = "-1,1", allow_hyphen_values = true)]
    y_window: (f64, f64),
    #[arg(long, default_value_t = 4)]
    stride: usize,
}

#[derive(Subcommand, Serialize)]
enum Kpz {
    /// Height profile `y,h` from initial data in JSON.
    Evolve {
        #[arg(long)]
        init: PathBuf,
        #[command(flatten)]
        ev: EvolveArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record times of the evolved profile from `a`, and whether one lies in `[b, c]`.
    Records {
        #[arg(long)]
        init: PathBuf,
        #[command(flatten)]
        ev: EvolveArgs,
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        #[arg(long, allow_hyphen_values = true)]
        c: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two evolutions on shared paths and the times their increments agree.
    Coalesce {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        init2: PathBuf,
        #[command(flatten)]
        ev: EvolveArgs,
        /// Reference point of the increments; the window start by default.
        #[arg(long, allow_hyphen_values = true)]
        y: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
        /// Optional `y,h` CSVs of the two profiles.
        #[arg(long)]
        profile_out: Option<PathBuf>,
        #[arg(long)]
        profile2_out: Option<PathBuf>,
    },
    /// Quadrangle measure of a sampled sheet and its rectangle functional.
    Quadrangle {
        #[command(flatten)]
        pre: PrelimitArgs,
        #[arg(long, value_parser = parse_pair, default_value = "0,1", allow_hyphen_values = true)]
        window: (f64, f64),
        #[arg(long, default_value_t = 4)]
        stride: usize,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        /// Long-form `x,y,F` CSV of the cumulative measure from the window corner.
        #[arg(long)]
        cdf_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum KernelArg {
    Thermal,
    BesselRiesz,
}

#[derive(Args, Serialize, Clone)]
struct EnergyArgs {
    /// Compact set as JSON: `{"ambient":"time_space","boxes":[[t0,t1,x0,x1]],"points":[[t,x]]}`.
    #[arg(long)]
    set: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelArg::Thermal)]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Cell width of the discretisation.
    #[arg(long, default_value_t = 0.01)]
    h: f64,
}

impl EnergyArgs {
    fn kind(&self) -> EnergyKind {
        match self.kernel {
            KernelArg::Thermal => EnergyKind::Thermal { gamma: self.gamma },
            KernelArg::BesselRiesz => EnergyKind::BesselRiesz,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum ProcessArg {
    Brownian,
    Kpz,
}

#[derive(Subcommand, Serialize)]
enum Cap {
    /// Energy of the uniform measure on the discretised set.
    Energy {
        #[command(flatten)]
        en: EnergyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    Capacity {
        #[command(flatten)]
        en: EnergyArgs,
        /// Per-time-slice mass cap factor.
        #[arg(long, default_value_t = 4.0)]
        kappa: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parabolic box-counting dimension.
    Dim {
        #[arg(long)]
        set: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.02,0.01")]
        scales: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo frequency of the graph meeting `E x F`.
    Hitting {
        /// Time set as `a:b` intervals or single points, comma separated.
        #[arg(long, value_parser = parse_intervals, allow_hyphen_values = true)]
        e: IntervalSet,
        /// Space set in the same format; empty by default.
        #[arg(long, value_parser = parse_intervals, allow_hyphen_values = true, default_value = "")]
        f: IntervalSet,
        #[arg(long, value_enum, default_value_t = ProcessArg::Brownian)]
        process: ProcessArg,
        /// Initial data for the KPZ process.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size of the image of a planar set under a sampled sheet.
    Image {
        #[arg(long)]
        set: PathBuf,
        #[command(flatten)]
        pre: PrelimitArgs,
        #[arg(long, value_parser = parse_pair, default_value = "0,1", allow_hyphen_values = true)]
        window: (f64, f64),
        #[arg(long, default_value_t = 4)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Serialize)]
enum TestCmd {
    Run {
        #[arg(long, default_value = "acceptance")]
        suite: String,
        /// Test names or tags; everything by default.
        #[arg(long, value_delimiter = ',')]
        select: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    List {
        #[arg(long, default_value = "acceptance")]
        suite: String,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected a,b, got {s}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a > b {
        return Err(format!("window {a},{b} is reversed"));
    }
    Ok((a, b))
}

fn parse_intervals(s: &str) -> std::result::Result<IntervalSet, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = part.split_once(':').unwrap_or((part, part));
        let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
        let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
        if a > b {
            return Err(format!("interval {a}:{b} is reversed"));
        }
        out.push([a, b]);
    }
    Ok(IntervalSet::new(out))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn read_initial(path: &Path) -> Result<InitialData> {
    kpz_engine::make_initial(InitialData::from_json(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

/// Outputs written by a command, in order.
type Outputs = Vec<PathBuf>;

enum Outcome {
    Done(Outputs),
    TestsFailed(Outputs),
}

fn run(cli: &Cli, seed: u64) -> Result<Outcome> {
    let stream = |name: &str| RngStream::new(seed, label_id(name));
    let done = |paths: Vec<&PathBuf>| Ok(Outcome::Done(paths.into_iter().cloned().collect()));
    match &cli.command {
        Command::Sim(Sim::Melon { n, dt, t_max, lines, out }) => {
            let grid = Grid::spanning(0.0, *t_max, *dt)?;
            let mut rng = stream("sim-melon").rng();
            let fs = (0..*n).map(|_| sample_bm(grid, 1.0, 0.0, &mut rng)).collect::<Result<Vec<_>>>()?;
            let ens = LineEnsembleGrid::from_functions(fs)?;
            let m = lpp_core::melon_top(&ens, lines.unwrap_or(*n).min(*n));
            io::write_atomic(out, io::ensemble_csv(&m).as_bytes())?;
            done(vec![out])
        }
        Command::Sim(Sim::AiryEnsemble { pre, y_max, lines, stride, out }) => {
            let opts = EnsembleOptions { lines: *lines, stride: *stride, estimator: pre.estimator.into() };
            let a = airy_model::sample_airy_ensemble(pre.n, *y_max, pre.dt, &opts, &mut stream("sim-airy-ensemble").rng())?;
            io::write_atomic(out, io::ensemble_csv(&a.ensemble).as_bytes())?;
            done(vec![out])
        }
        Command::Sim(Sim::AirySheet { pre, x_window, y_window, stride, out }) => {
            let opts = SheetOptions { stride: *stride, estimator: pre.estimator.into() };
            let s = airy_model::sample_airy_sheet(pre.n, *x_window, *y_window, pre.dt, &opts, &mut stream("sim-airy-sheet").rng())?;
            io::write_atomic(out, io::sheet_csv(&s).as_bytes())?;
            done(vec![out])
        }
        Command::Kpz(Kpz::Evolve { init, ev, out }) => {
            let h0 = read_initial(init)?;
            let h = evolve(&h0, ev, &stream("kpz-evolve"))?;
            io::write_atomic(out, io::profile_csv(&h, "y", "h").as_bytes())?;
            done(vec![out])
        }
        Command::Kpz(Kpz::Records { init, ev, a, b, c, out }) => {
            let h0 = read_initial(init)?;
            let h = evolve(&h0, ev, &stream("kpz-records"))?;
            let r = kpz_engine::record_times(&h, *a)?;
            write_json(out, &json!({ "a": a, "b": b, "c": c, "hits": r.hits(*b, *c), "record_times": r.times }))?;
            done(vec![out])
        }
        Command::Kpz(Kpz::Coalesce { init, init2, ev, y, tol, out, profile_out, profile2_out }) => {
            let (h01, h02) = (read_initial(init)?, read_initial(init2)?);
            let d = driving_for(&[&h01, &h02], ev, &stream("kpz-coalesce"))?;
            let opts = EvolveOptions::default();
            let est = ev.pre.estimator.into();
            let h1 = kpz_engine::evolve_direct(&h01, &d, ev.y_window, ev.t, ev.stride, est, &opts)?;
            let h2 = kpz_engine::evolve_direct(&h02, &d, ev.y_window, ev.t, ev.stride, est, &opts)?;
            let y = y.unwrap_or(h1.grid.t0);
            let (i1, i2) = (kpz_engine::reanchor(&h1, y)?, kpz_engine::reanchor(&h2, y)?);
            let agree = kpz_engine::agreement_until(&i1, &i2, y, *tol)?;
            let suffix = kpz_engine::coalescence_tau(&i1, &i2, y, *tol)?;
            write_json(out, &json!({ "y": y, "tol": tol, "agreement_until": agree, "coalescence_tau": suffix }))?;
            let mut outs = vec![out];
            for (p, h) in [(profile_out, &h1), (profile2_out, &h2)] {
                if let Some(p) = p {
                    io::write_atomic(p, io::profile_csv(h, "y", "h").as_bytes())?;
                    outs.push(p);
                }
            }
            done(outs)
        }
        Command::Kpz(Kpz::Quadrangle { pre, window, stride, m, cdf_out, out }) => {
            let opts = SheetOptions { stride: *stride, estimator: pre.estimator.into() };
            let s = airy_model::sample_airy_sheet(pre.n, *window, *window, pre.dt, &opts, &mut stream("kpz-quadrangle").rng())?;
            let base = (s.x_grid.t0, s.y_grid.t0);
            let q = kpz_engine::quadrangle_cdf(&s, base.0, base.1)?;
            let dm = kpz_engine::delta_m(&s, base, *m)?;
            write_json(out, &json!({ "base": [base.0, base.1], "m": m, "delta_m": dm, "min_cdf": q.min_value(), "monotone": q.is_monotone(1e-9) }))?;
            let mut outs = vec![out];
            if let Some(p) = cdf_out {
                let cdf = airy_model::SheetSample::new(q.x_grid, q.y_grid, q.values.clone(), 1.0)?;
                io::write_atomic(p, io::sheet_csv(&cdf).replacen("x,y,S", "x,y,F", 1).as_bytes())?;
                outs.push(p);
            }
            done(outs)
        }
        Command::Cap(Cap::Energy { en, out }) => {
            let set: CompactSetSpec = read_json(&en.set)?;
            let mu = GridMeasure::uniform(set.discretise(en.h)?, en.h)?;
            let e = match en.kind() {
                EnergyKind::Thermal { gamma } => capacity::thermal_energy(&mu, gamma)?,
                EnergyKind::BesselRiesz => capacity::bessel_riesz_energy(&mu)?,
            };
            write_json(out, &json!({ "kind": en.kind(), "h": en.h, "cells": mu.cells.len(), "uniform_energy": e }))?;
            done(vec![out])
        }
        Command::Cap(Cap::Capacity { en, kappa, out }) => {
            let set: CompactSetSpec = read_json(&en.set)?;
            let opts = CapacityOptions { kappa: *kappa, ..CapacityOptions::default() };
            let mut r = capacity::capacity(&set, en.kind(), en.h, &opts)?;
            r.measure = None;
            write_json(out, &r)?;
            done(vec![out])
        }
        Command::Cap(Cap::Dim { set, scales, out }) => {
            let s: CompactSetSpec = read_json(set)?;
            let d = capacity::parabolic_dim(&s, scales)?;
            write_json(out, &json!({ "scales": scales, "parabolic_dim": d }))?;
            done(vec![out])
        }
        Command::Cap(Cap::Hitting { e, f, process, init, rate, start, n, dt, trials, out }) => {
            let p = match process {
                ProcessArg::Brownian => HittingProcess::Brownian { rate: *rate, start: *start, bridge_correction: true },
                ProcessArg::Kpz => {
                    let path = init.as_ref().ok_or_else(|| LabError::InvalidParameter("--init is required for the kpz process".into()))?;
                    HittingProcess::Kpz { h0: read_initial(path)?, n: *n, estimator: Estimator::Grid }
                }
            };
            let r = capacity::hitting_mc(e, f, &p, *trials, *dt, stream("cap-hitting"))?;
            write_json(out, &r)?;
            done(vec![out])
        }
        Command::Cap(Cap::Image { set, pre, window, stride, out }) => {
            let e: CompactSetSpec = read_json(set)?;
            let opts = SheetOptions { stride: *stride, estimator: pre.estimator.into() };
            let s = airy_model::sample_airy_sheet(pre.n, *window, *window, pre.dt, &opts, &mut stream("cap-image").rng())?;
            write_json(out, &capacity::image_geometry(&s, &e)?)?;
            done(vec![out])
        }
        Command::Test(TestCmd::List { suite }) => {
            check_suite(suite)?;
            for t in &registry().tests {
                println!("{}\t{}", t.name, t.tags.join(","));
            }
            Ok(Outcome::Done(vec![]))
        }
        Command::Test(TestCmd::Run { suite, select, report }) => {
            check_suite(suite)?;
            let reg = registry();
            let sel = if select.is_empty() {
                Selection::All
            } else if select.iter().all(|s| reg.tests.iter().any(|t| t.name == s)) {
                Selection::Names(select.clone())
            } else {
                Selection::Tags(select.clone())
            };
            let reports = run_suite_with(&reg, &sel, seed, |r| println!("{}", r.summary_line()));
            let outs: Outputs = report.iter().cloned().collect();
            if let Some(p) = report {
                write_json(p, &reports)?;
            }
            if reports.iter().all(|r| r.pass) {
                Ok(Outcome::Done(outs))
            } else {
                Ok(Outcome::TestsFailed(outs))
            }
        }
    }
}

fn check_suite(suite: &str) -> Result<()> {
    if suite != "acceptance" {
        return Err(LabError::InvalidParameter(format!("unknown suite {suite}; only 'acceptance' exists")));
    }
    Ok(())
}

/// Driving paths covering the output window and every support point of the
/// data that can matter; unbounded support is cut `6 sqrt(t)` beyond the window.
fn driving_for(h0s: &[&InitialData], ev: &EvolveArgs, stream: &RngStream) -> Result<airy_model::DrivingPaths> {
    let p = airy_model::Prelimit::new(ev.pre.n);
    let s2 = ev.t.cbrt().powi(2);
    let margin = 6.0 * ev.t.sqrt();
    let (mut lo, mut hi) = (0.0f64, p.raw_end(ev.y_window.1 / s2));
    for h0 in h0s {
        let hull = h0.hull().ok_or(LabError::EmptySupport)?;
        lo = lo.min(p.raw_start(hull.0.max(ev.y_window.0 - margin) / s2));
        hi = hi.max(p.raw_start(hull.1.min(ev.y_window.1 + margin) / s2));
    }
    airy_model::DrivingPaths::sample(ev.pre.n, lo, hi + 8.0 * ev.pre.dt, ev.pre.dt, &mut stream.rng())
}

fn evolve(h0: &InitialData, ev: &EvolveArgs, stream: &RngStream) -> Result<landscape_lab::path_sampler::GridFunction> {
    let d = driving_for(&[h0], ev, stream)?;
    kpz_engine::evolve_direct(h0, &d, ev.y_window, ev.t, ev.stride, ev.pre.estimator.into(), &EvolveOptions::default())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = cli.seed.or_else(|| std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok())).unwrap_or(0);
    let start = io::unix_now();
    let (outputs, code) = match run(&cli, seed) {
        Ok(Outcome::Done(o)) => (o, 0),
        Ok(Outcome::TestsFailed(o)) => (o, 3),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let manifest = io::config_hash(&cli).map(|config_hash| RunManifest {
        command_line: argv.clone(),
        config_hash,
        global_seed: seed,
        artifact_version: io::ARTIFACT_VERSION.to_string(),
        start_time: start,
        end_time: io::unix_now(),
        outputs: outputs.clone(),
    });
    let written = manifest.and_then(|m| outputs.iter().try_for_each(|o| m.write(&RunManifest::path_for(o))));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
