//! Pipeline stages behind the command-line front end. Each stage reads the
//! run config plus the files written by earlier stages and writes plain
//! text outputs into the output directory.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::basis::{build_dictionary, BasisError, CoefficientTimeline};
use crate::config::{ConfigError, RunConfig};
use crate::dynamics::State4;
use crate::hamiltonian::Pcr3bpTracking;
use crate::hj::{residual_report, time_march};
use crate::mpc::{
    closed_loop_run, mpc_simulate, nav_error_sweep, spearman, write_sweep_csv, MpcOptions, MpcRun, SweepCell,
    TrackingProblem,
};
use crate::nominal::{solve_nominal, NominalError, NominalTrajectory};
use crate::points::{generate_points, scale_to_domain, test_points};
use crate::scenario::{case_perturbation, Case};
use crate::tracking::{open_loop_propagate, PropagationOptions, RecoveryOptions};

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Schema(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub const NOMINAL_FILE: &str = "nominal.txt";
pub const COEFFICIENTS_FILE: &str = "coefficients.txt";

/// Where a tracking run starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackStart {
    Case(Case),
    /// Explicit `(x km, y km, vx m/s, vy m/s)` perturbation.
    Explicit([f64; 4]),
}

impl TrackStart {
    fn label(&self) -> String {
        match self {
            TrackStart::Case(c) => c.to_string(),
            TrackStart::Explicit(_) => "explicit".into(),
        }
    }
}

/// Parses `"dx_km,dy_km,dvx_m_per_s,dvy_m_per_s"`.
pub fn parse_explicit(s: &str) -> Result<[f64; 4], CliError> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == 4 && v.iter().all(|x| x.is_finite()) => Ok([v[0], v[1], v[2], v[3]]),
        _ => Err(CliError::Schema(format!(
            "--dx0 expects four comma-separated numbers (km, km, m/s, m/s), got `{s}`"
        ))),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<PathBuf, CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, format!("{e} (run the earlier stage first)")))
}

pub fn cmd_nominal(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let (x0, xf) = cfg.boundary_states();
    let w = cfg.weights()?;
    let (nom, rep) =
        solve_nominal(&x0, &xf, cfg.tf(), &cfg.bvp(), &cfg.system, &w).map_err(|e| CliError::Solver(e.to_string()))?;
    let mut files = vec![write_file(&out.join(NOMINAL_FILE), |w| nom.write_to(w))?];
    let mut s = String::new();
    writeln!(s, "method {:?}", rep.method).unwrap();
    writeln!(s, "iterations {}", rep.iterations).unwrap();
    writeln!(s, "terminal_residual {:e}", rep.residual).unwrap();
    writeln!(s, "cost {:e}", rep.cost).unwrap();
    writeln!(s, "costate0 {:e} {:e} {:e} {:e}", rep.costate0[0], rep.costate0[1], rep.costate0[2], rep.costate0[3]).unwrap();
    writeln!(s, "tf {:e}", nom.tf).unwrap();
    writeln!(s, "nodes {}", nom.len()).unwrap();
    files.push(write_file(&out.join("nominal_summary.txt"), |w| w.write_all(s.as_bytes()))?);
    Ok(files)
}

/// Reads the nominal and checks it was produced for this config.
pub fn load_nominal(cfg: &RunConfig, out: &Path) -> Result<NominalTrajectory, CliError> {
    let path = out.join(NOMINAL_FILE);
    let nom = NominalTrajectory::read_from(open(&path)?).map_err(|e| match e {
        NominalError::Io(_) | NominalError::Format { .. } => io_err(&path, e),
        other => CliError::Solver(other.to_string()),
    })?;
    let (x0, xf) = cfg.boundary_states();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
    let same = close(nom.tf, cfg.tf())
        && close(nom.mu, cfg.system.mu)
        && nom.x0.iter().zip(x0.iter()).all(|(a, b)| close(*a, *b))
        && nom.xf.iter().zip(xf.iter()).all(|(a, b)| close(*a, *b));
    if !same {
        return Err(CliError::Schema(format!(
            "{} was produced for a different transfer; rerun `nominal`",
            path.display()
        )));
    }
    Ok(nom)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let nom = load_nominal(cfg, out)?;
    let mut req = cfg.point_request()?;
    if let Some(s) = seed {
        req.seed = s;
    }
    let ps = generate_points(&req).map_err(|e| CliError::Schema(e.to_string()))?;
    let bx = cfg.domain_box();
    let train = scale_to_domain(&ps, &bx);
    let test = test_points(&bx, cfg.points.test_count, cfg.points.test_seed, &train);
    let half = cfg.half_widths();
    let dict = build_dictionary(8, cfg.basis.degree)
        .and_then(|d| d.with_half_widths(&half))
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let model = Pcr3bpTracking::new(&nom, cfg.weights()?, cfg.system);
    let solver = cfg.solver_config();
    let gf = time_march(&model, &dict, &train, &ps.weights, &test, &ps.scheme.to_string(), &solver)
        .map_err(|e| CliError::Solver(e.to_string()))?;

    let mut files = vec![
        write_file(&out.join("train_points.txt"), |w| ps.write_to(w))?,
        write_file(&out.join(COEFFICIENTS_FILE), |w| gf.timeline.write_to(w))?,
    ];
    let report = residual_report(&gf);
    files.push(write_file(&out.join("residuals.csv"), |w| report.write_csv(w))?);
    files.push(write_file(&out.join("density.csv"), |w| report.write_density_csv(w))?);

    let within = gf.steps.iter().filter(|r| r.train_weighted <= solver.epsilon * (1.0 + 1e-9)).count();
    let mut s = String::new();
    writeln!(s, "scheme {}", ps.scheme).unwrap();
    writeln!(s, "train_points {}", train.len()).unwrap();
    writeln!(s, "test_points {}", test.len()).unwrap();
    writeln!(s, "degree {}", dict.degree()).unwrap();
    writeln!(s, "basis_size {}", dict.len()).unwrap();
    writeln!(s, "mode {:?}", solver.mode).unwrap();
    writeln!(s, "marching {:?}", solver.marching).unwrap();
    writeln!(s, "steps {}", gf.steps.len()).unwrap();
    writeln!(s, "steps_within_epsilon {within}").unwrap();
    if let Some(last) = gf.steps.last() {
        writeln!(s, "final_train_median {:e}", last.train_median).unwrap();
        writeln!(s, "final_test_median {:e}", last.test_median).unwrap();
        writeln!(s, "final_nnz {}", last.nnz).unwrap();
    }
    match &gf.error {
        None => writeln!(s, "status complete").unwrap(),
        Some(e) => writeln!(s, "status failed: {e}").unwrap(),
    }
    files.push(write_file(&out.join("train_summary.txt"), |w| w.write_all(s.as_bytes()))?);
    match gf.error {
        None => Ok(files),
        Some(e) => Err(CliError::Solver(format!(
            "march stopped early ({e}); partial timeline written to {}",
            out.join(COEFFICIENTS_FILE).display()
        ))),
    }
}

/// Reads the coefficient timeline and checks it covers the horizon.
pub fn load_timeline(cfg: &RunConfig, out: &Path) -> Result<CoefficientTimeline, CliError> {
    let path = out.join(COEFFICIENTS_FILE);
    let tl = CoefficientTimeline::read_from(open(&path)?).map_err(|e| match e {
        BasisError::Io(_) | BasisError::Format { .. } => io_err(&path, e),
        other => CliError::Schema(other.to_string()),
    })?;
    if let Some(msg) = &tl.failure {
        return Err(CliError::Solver(format!("{} holds a partial march: {msg}", path.display())));
    }
    let tf = *tl.times.last().unwrap();
    if tl.dict.n_vars() != 8 || (tf - cfg.tf()).abs() > 1e-9 * (1.0 + tf) {
        return Err(CliError::Schema(format!(
            "{} does not match this config; rerun `train`",
            path.display()
        )));
    }
    Ok(tl)
}

fn recovery_options(cfg: &RunConfig) -> RecoveryOptions {
    let h = cfg.half_widths();
    RecoveryOptions {
        tol: cfg.tracking.recovery_tol,
        cond_limit: cfg.tracking.cond_limit,
        lam0_half: Some([h[4], h[5], h[6], h[7]]),
        ..RecoveryOptions::default()
    }
}

fn propagation_options(cfg: &RunConfig) -> PropagationOptions {
    let h = cfg.half_widths();
    PropagationOptions {
        dx_half: Some([h[0], h[1], h[2], h[3]]),
        ..PropagationOptions::default()
    }
}

fn start_state(cfg: &RunConfig, start: TrackStart) -> State4 {
    let p = &cfg.system;
    match start {
        TrackStart::Case(c) => case_perturbation(c, p, cfg.tracking.velocity_seed),
        TrackStart::Explicit(v) => State4::new(p.km_to_lu(v[0]), p.km_to_lu(v[1]), p.mps_to_vu(v[2]), p.mps_to_vu(v[3])),
    }
}

/// Terminal deviation norm without feedback, under the reference control.
pub fn open_loop_norm(model: &Pcr3bpTracking<'_>, dx0: &State4) -> Result<f64, CliError> {
    let opts = PropagationOptions::default();
    let dev = open_loop_propagate(model, dx0, &[model.nominal.t0(), model.nominal.tf], &opts)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(dev[1].norm())
}

pub fn cmd_track(
    cfg: &RunConfig,
    out: &Path,
    start: Option<TrackStart>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let nom = load_nominal(cfg, out)?;
    let tl = load_timeline(cfg, out)?;
    let model = Pcr3bpTracking::new(&nom, cfg.weights()?, cfg.system);
    let starts: Vec<TrackStart> = match start {
        Some(s) => vec![s],
        None => cfg.cases()?.into_iter().map(TrackStart::Case).collect(),
    };
    let nav = cfg.navigation().map(|mut n| {
        if let Some(s) = seed {
            n.seed = s;
        }
        n
    });
    let opts = MpcOptions {
        continue_on_failure: cfg.tracking.continue_on_failure,
        samples_per_interval: cfg.tracking.samples_per_interval,
    };
    let mut files = Vec::new();
    let mut summary = String::from("case,dx_km,dy_km,dvx_m_per_s,dvy_m_per_s,epochs,failed_epochs,terminal_pos_km,terminal_norm,open_loop_norm,ratio\n");
    for s in starts {
        let dx0 = start_state(cfg, s);
        let tp = TrackingProblem {
            model: &model,
            timeline: &tl,
            dx0,
            dxf: cfg.target(),
            params: cfg.system,
            recovery: recovery_options(cfg),
            propagation: propagation_options(cfg),
        };
        let run: MpcRun = match &nav {
            Some(n) => mpc_simulate(&tp, n, &opts),
            None => closed_loop_run(&tp, 4 * cfg.tracking.samples_per_interval.max(50)),
        }
        .map_err(|e| CliError::Solver(format!("case {}: {e}", s.label())))?;
        let label = s.label();
        files.push(write_file(&out.join(format!("track_{label}.csv")), |w| run.write_csv(w))?);
        files.push(write_file(&out.join(format!("track_{label}_trajectory.csv")), |w| {
            run.write_trajectory_csv(w)
        })?);
        let ol = open_loop_norm(&model, &dx0)?;
        let p = &cfg.system;
        writeln!(
            summary,
            "{label},{:e},{:e},{:e},{:e},{},{},{:e},{:e},{:e},{:e}",
            p.lu_to_km(dx0[0]),
            p.lu_to_km(dx0[1]),
            p.vu_to_mps(dx0[2]),
            p.vu_to_mps(dx0[3]),
            run.epochs.len(),
            run.epochs.iter().filter(|e| e.failure.is_some()).count(),
            run.terminal_pos_km,
            run.terminal_norm,
            ol,
            run.terminal_norm / ol
        )
        .unwrap();
    }
    files.push(write_file(&out.join("track_summary.csv"), |w| w.write_all(summary.as_bytes()))?);
    Ok(files)
}

/// Rank correlations of mean error with the bound at each interval, and
/// with the interval at each bound.
pub fn sweep_trends(cells: &[SweepCell]) -> (Vec<(f64, Option<f64>)>, Vec<(f64, Option<f64>)>) {
    let mut intervals: Vec<f64> = cells.iter().map(|c| c.interval_days).collect();
    intervals.sort_by(f64::total_cmp);
    intervals.dedup();
    let mut bounds: Vec<f64> = cells.iter().map(|c| c.pos_err_km).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    let corr = |sel: &dyn Fn(&SweepCell) -> bool, key: &dyn Fn(&SweepCell) -> f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = cells
            .iter()
            .filter(|c| sel(c))
            .filter_map(|c| c.mean_err_km.map(|m| (key(c), m)))
            .unzip();
        spearman(&x, &y)
    };
    let by_interval = intervals
        .iter()
        .map(|&d| (d, corr(&|c| c.interval_days == d, &|c| c.pos_err_km)))
        .collect();
    let by_bound = bounds
        .iter()
        .map(|&r| (r, corr(&|c| c.pos_err_km == r, &|c| c.interval_days)))
        .collect();
    (by_interval, by_bound)
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    out: &Path,
    start: Option<TrackStart>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let (grid, mut base) = cfg.sweep()?;
    if let Some(s) = seed {
        base.seed = s;
    }
    let nom = load_nominal(cfg, out)?;
    let tl = load_timeline(cfg, out)?;
    let model = Pcr3bpTracking::new(&nom, cfg.weights()?, cfg.system);
    let start = match start {
        Some(s) => s,
        None => TrackStart::Case(*cfg.cases()?.first().ok_or_else(|| CliError::Schema("tracking.cases is empty".into()))?),
    };
    let tp = TrackingProblem {
        model: &model,
        timeline: &tl,
        dx0: start_state(cfg, start),
        dxf: cfg.target(),
        params: cfg.system,
        recovery: recovery_options(cfg),
        propagation: propagation_options(cfg),
    };
    let opts = MpcOptions {
        continue_on_failure: cfg.tracking.continue_on_failure,
        samples_per_interval: 1,
    };
    let cells = nav_error_sweep(&tp, &base, &grid, &opts).map_err(|e| CliError::Solver(e.to_string()))?;
    let mut files = vec![write_file(&out.join("sweep.csv"), |w| write_sweep_csv(&cells, w))?];
    let (by_interval, by_bound) = sweep_trends(&cells);
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_else(|| "undefined".into());
    let mut s = format!("case {}\nseeds_per_cell {}\n", start.label(), grid.seeds);
    for (d, r) in by_interval {
        writeln!(s, "spearman_vs_position interval_days={d:e} {}", fmt(r)).unwrap();
    }
    for (b, r) in by_bound {
        writeln!(s, "spearman_vs_interval pos_err_km={b:e} {}", fmt(r)).unwrap();
    }
    files.push(write_file(&out.join("sweep_summary.txt"), |w| w.write_all(s.as_bytes()))?);
    Ok(files)
}
