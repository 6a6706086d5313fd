//! Measurement-driven receding-horizon tracking with injected navigation
//! errors, and the error/interval sweep built on it.

use std::io::Write;

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::CoefficientTimeline;
use crate::dynamics::{Control2, Costate4, State4};
use crate::hamiltonian::AbsoluteModel;
use crate::integrator::integrate;
use crate::tracking::{
    closed_loop_propagate, joint_rhs, recover_initial_costate, resolve_at_time, PropagationOptions, RecoveryOptions,
    TrackingError,
};
use crate::units::SystemParams;

/// A tracking task: steer `dx0` at `t0` to `dxf` at `tf` about `model`'s
/// reference using the generating function in `timeline`.
pub struct TrackingProblem<'a, M: AbsoluteModel + ?Sized> {
    pub model: &'a M,
    pub timeline: &'a CoefficientTimeline,
    pub dx0: State4,
    pub dxf: State4,
    pub params: SystemParams,
    pub recovery: RecoveryOptions,
    pub propagation: PropagationOptions,
}

impl<M: AbsoluteModel + ?Sized> TrackingProblem<'_, M> {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if let Some(h) = &self.propagation.dx_half {
            for (name, v) in [("dx0", &self.dx0), ("dxf", &self.dxf)] {
                if v.iter().zip(h).any(|(v, h)| v.abs() > *h * (1.0 + 1e-12)) {
                    return Err(TrackingError::Config(format!("{name} lies outside the trained state box")));
                }
            }
        }
        let tf = *self.timeline.times.last().unwrap();
        if (tf - self.model.tf()).abs() > 1e-9 * (1.0 + tf.abs()) {
            return Err(TrackingError::Config(format!(
                "timeline ends at {tf}, model horizon ends at {}",
                self.model.tf()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NavDistribution {
    Uniform,
    /// Standard normal truncated at two sigma, scaled so the bound sits at
    /// the truncation point.
    TruncatedGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavigationModel {
    /// Per-axis position error bound in km.
    pub position_km: f64,
    /// Per-axis velocity error bound in m/s.
    pub velocity_mps: f64,
    /// Measurement interval in normalized time.
    pub interval: f64,
    pub distribution: NavDistribution,
    pub seed: u64,
}

impl NavigationModel {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.position_km >= 0.0 && self.velocity_mps >= 0.0) || !self.position_km.is_finite() || !self.velocity_mps.is_finite() {
            return Err(TrackingError::Config("navigation error bounds must be finite and non-negative".into()));
        }
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return Err(TrackingError::Config("measurement interval must be positive".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.distribution {
            NavDistribution::Uniform => rng.random_range(-1.0..=1.0),
            NavDistribution::TruncatedGaussian => loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break 0.5 * z;
                }
            },
        }
    }

    /// Error vector for the next epoch in normalized units.
    fn sample(&self, rng: &mut ChaCha8Rng, p: &SystemParams) -> State4 {
        let r = p.km_to_lu(self.position_km);
        let v = p.mps_to_vu(self.velocity_mps);
        let d: [f64; 4] = std::array::from_fn(|_| self.draw(rng));
        State4::new(r * d[0], r * d[1], v * d[2], v * d[3])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOptions {
    /// Keep flying the previous plan when a re-solve fails instead of
    /// aborting the run.
    pub continue_on_failure: bool,
    /// Truth samples logged per measurement interval.
    pub samples_per_interval: usize,
}

impl Default for MpcOptions {
    fn default() -> Self {
        Self {
            continue_on_failure: true,
            samples_per_interval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub t: f64,
    /// True deviation from the reference.
    pub truth: State4,
    pub measured: State4,
    /// Recovered initial costate, absent when the solve failed.
    pub dl0: Option<Costate4>,
    /// Costate the controller flies from this epoch.
    pub dl: Costate4,
    /// Applied control `u_ref + δu` at the epoch.
    pub control: Control2,
    pub extrapolated: bool,
    pub failure: Option<String>,
}

impl EpochRecord {
    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.extrapolated {
            f.push("extrapolated".to_string());
        }
        if let Some(msg) = &self.failure {
            f.push(format!("recovery_failed: {}", msg.replace([',', '\n'], ";")));
        }
        if f.is_empty() {
            "ok".into()
        } else {
            f.join("|")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcRun {
    pub epochs: Vec<EpochRecord>,
    pub times: Vec<f64>,
    /// True absolute states at `times`.
    pub truth: Vec<State4>,
    /// True deviations at `times`.
    pub truth_dev: Vec<State4>,
    /// Applied controls at `times`.
    pub controls: Vec<Control2>,
    pub terminal_dx: State4,
    pub terminal_pos_km: f64,
    pub terminal_norm: f64,
}

fn fmt4(v: &Vector4<f64>) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

impl MpcRun {
    fn finish(&mut self, p: &SystemParams) {
        let dx = *self.truth_dev.last().unwrap();
        self.terminal_dx = dx;
        self.terminal_pos_km = p.lu_to_km(dx.fixed_rows::<2>(0).norm());
        self.terminal_norm = dx.norm();
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "epoch,t,x_true,y_true,vx_true,vy_true,x_meas,y_meas,vx_meas,vy_meas,dl0_x,dl0_y,dl0_vx,dl0_vy,ux,uy,flags"
        )?;
        for e in &self.epochs {
            let dl0 = e
                .dl0
                .map(|v| fmt4(&v))
                .unwrap_or_else(|| ",,,".to_string());
            writeln!(
                out,
                "{},{:e},{},{},{},{:e},{:e},{}",
                e.epoch,
                e.t,
                fmt4(&e.truth),
                fmt4(&e.measured),
                dl0,
                e.control.x,
                e.control.y,
                e.flags()
            )?;
        }
        Ok(())
    }

    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,y,vx,vy,dx,dy,dvx,dvy,ux,uy")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{:e},{},{},{:e},{:e}",
                self.times[i],
                fmt4(&self.truth[i]),
                fmt4(&self.truth_dev[i]),
                self.controls[i].x,
                self.controls[i].y
            )?;
        }
        Ok(())
    }
}

/// Single recovery at `t0` from the exact perturbation, then an
/// uninterrupted closed-loop flight.
pub fn closed_loop_run<M: AbsoluteModel + ?Sized>(tp: &TrackingProblem<'_, M>, samples: usize) -> Result<MpcRun, TrackingError> {
    tp.validate()?;
    let (t0, tf) = (tp.model.t0(), tp.model.tf());
    let rec = recover_initial_costate(&tp.dx0, &tp.dxf, tp.timeline, &tp.recovery)?;
    let n = samples.max(1);
    let times: Vec<f64> = (0..=n).map(|i| if i == n { tf } else { t0 + (tf - t0) * i as f64 / n as f64 }).collect();
    let cl = closed_loop_propagate(tp.model, &tp.dx0, &rec.dl0, &times, &tp.propagation)?;
    let mut truth_dev = Vec::with_capacity(times.len());
    for (&t, x) in times.iter().zip(&cl.x) {
        truth_dev.push(x - tp.model.reference(t)?.0);
    }
    let mut run = MpcRun {
        epochs: vec![EpochRecord {
            epoch: 0,
            t: t0,
            truth: tp.dx0,
            measured: tp.dx0,
            dl0: Some(rec.dl0),
            dl: rec.dl0,
            control: cl.u[0],
            extrapolated: rec.extrapolated,
            failure: None,
        }],
        times,
        truth: cl.x,
        truth_dev,
        controls: cl.u,
        terminal_dx: State4::zeros(),
        terminal_pos_km: 0.0,
        terminal_norm: 0.0,
    };
    run.finish(&tp.params);
    Ok(run)
}

/// Measurement epochs `t0 + j·interval` strictly before `tf`.
pub fn epoch_times(t0: f64, tf: f64, interval: f64) -> Vec<f64> {
    let span = tf - t0;
    let n = ((span / interval) - 1e-9).ceil().max(1.0) as usize;
    (0..n).map(|j| t0 + j as f64 * interval).collect()
}

/// Receding-horizon run: at each epoch the controller re-solves from a
/// noisy measurement and flies its own canonical-system prediction until
/// the next epoch while the truth evolves under the resulting control.
pub fn mpc_simulate<M: AbsoluteModel + ?Sized>(
    tp: &TrackingProblem<'_, M>,
    nav: &NavigationModel,
    opts: &MpcOptions,
) -> Result<MpcRun, TrackingError> {
    tp.validate()?;
    nav.validate()?;
    let (t0, tf) = (tp.model.t0(), tp.model.tf());
    let epochs = epoch_times(t0, tf, nav.interval);
    let mut rng = ChaCha8Rng::seed_from_u64(nav.seed);
    let integ = tp.propagation.integrator();
    let samples = opts.samples_per_interval.max(1);

    let (xr0, ur0) = tp.model.reference(t0)?;
    let mut x = xr0 + tp.dx0;
    // controller prediction at the end of the previous segment
    let mut plan: Option<(State4, Costate4)> = None;
    let mut run = MpcRun {
        epochs: Vec::with_capacity(epochs.len()),
        times: vec![t0],
        truth: vec![x],
        truth_dev: vec![tp.dx0],
        controls: vec![ur0],
        terminal_dx: State4::zeros(),
        terminal_pos_km: 0.0,
        terminal_norm: 0.0,
    };

    for (j, &tj) in epochs.iter().enumerate() {
        let t_next = epochs.get(j + 1).copied().unwrap_or(tf);
        let (xr, ur) = tp.model.reference(tj)?;
        let truth = x - xr;
        let measured = truth + nav.sample(&mut rng, &tp.params);
        let solved = if j == 0 {
            recover_initial_costate(&measured, &tp.dxf, tp.timeline, &tp.recovery)
        } else {
            resolve_at_time(&measured, tj, &tp.dxf, tp.timeline, &tp.recovery)
        };
        let (dxh, dlh, record) = match solved {
            Ok(r) => (
                measured,
                r.dl,
                EpochRecord {
                    epoch: j,
                    t: tj,
                    truth,
                    measured,
                    dl0: Some(r.dl0),
                    dl: r.dl,
                    control: ur + tp.model.control_deviation(&r.dl),
                    extrapolated: r.extrapolated,
                    failure: None,
                },
            ),
            Err(e) => match (&plan, opts.continue_on_failure) {
                (Some((dxp, dlp)), true) => (
                    *dxp,
                    *dlp,
                    EpochRecord {
                        epoch: j,
                        t: tj,
                        truth,
                        measured,
                        dl0: None,
                        dl: *dlp,
                        control: ur + tp.model.control_deviation(dlp),
                        extrapolated: false,
                        failure: Some(e.to_string()),
                    },
                ),
                _ => {
                    return Err(TrackingError::Epoch {
                        epoch: j,
                        t: tj,
                        source: Box::new(e),
                    })
                }
            },
        };
        run.epochs.push(record);

        let grid: Vec<f64> = (1..=samples)
            .map(|i| if i == samples { t_next } else { tj + (t_next - tj) * i as f64 / samples as f64 })
            .collect();
        let mut y0 = Vec::with_capacity(12);
        y0.extend_from_slice(dxh.as_slice());
        y0.extend_from_slice(dlh.as_slice());
        y0.extend_from_slice(x.as_slice());
        let (ys, _) = integrate(|t, y, o| joint_rhs(tp.model, &tp.propagation, t, y, o), tj, &y0, &grid, &integ)?;
        for (&t, y) in grid.iter().zip(&ys) {
            let xs = State4::from_column_slice(&y[8..12]);
            let dl = Costate4::from_column_slice(&y[4..8]);
            let (xr, ur) = tp.model.reference(t)?;
            run.times.push(t);
            run.truth.push(xs);
            run.truth_dev.push(xs - xr);
            run.controls.push(ur + tp.model.control_deviation(&dl));
        }
        let yl = ys.last().unwrap();
        x = State4::from_column_slice(&yl[8..12]);
        plan = Some((State4::from_column_slice(&yl[0..4]), Costate4::from_column_slice(&yl[4..8])));
    }
    run.finish(&tp.params);
    Ok(run)
}

/// Position-error bounds and measurement intervals to cross.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub position_km: Vec<f64>,
    /// Measurement intervals in normalized time.
    pub intervals: Vec<f64>,
    pub seeds: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.position_km.is_empty() || self.intervals.is_empty() || self.seeds == 0 {
            return Err(TrackingError::Config(
                "sweep grid needs at least one position bound, one interval and one seed".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(TrackingError::Config("sweep worker count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub pos_err_km: f64,
    pub interval: f64,
    pub interval_days: f64,
    /// Seeds that produced a terminal error.
    pub seed_count: usize,
    pub mean_err_km: Option<f64>,
    pub max_err_km: Option<f64>,
    /// `(seed, reason)` for runs that failed.
    pub failures: Vec<(u64, String)>,
}

/// Runs every `(bound, interval, seed)` combination. Seeds are
/// `base.seed + s` for each cell, so cells share common random numbers.
pub fn nav_error_sweep<M: AbsoluteModel + ?Sized>(
    tp: &TrackingProblem<'_, M>,
    base: &NavigationModel,
    grid: &SweepGrid,
    opts: &MpcOptions,
) -> Result<Vec<SweepCell>, TrackingError> {
    grid.validate()?;
    tp.validate()?;
    let mut jobs = Vec::new();
    for &r in &grid.position_km {
        for &dt in &grid.intervals {
            let nav = NavigationModel {
                position_km: r,
                interval: dt,
                ..base.clone()
            };
            nav.validate()?;
            for s in 0..grid.seeds as u64 {
                jobs.push(NavigationModel {
                    seed: base.seed.wrapping_add(s),
                    ..nav.clone()
                });
            }
        }
    }
    let run_all = || -> Vec<Result<f64, String>> {
        jobs.par_iter()
            .map(|nav| mpc_simulate(tp, nav, opts).map(|r| r.terminal_pos_km).map_err(|e| e.to_string()))
            .collect()
    };
    let results = match grid.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| TrackingError::Config(e.to_string()))?
            .install(run_all),
        None => run_all(),
    };
    let mut cells = Vec::new();
    let mut it = jobs.iter().zip(results);
    for &r in &grid.position_km {
        for &dt in &grid.intervals {
            let mut errs = Vec::new();
            let mut failures = Vec::new();
            for (nav, res) in it.by_ref().take(grid.seeds) {
                match res {
                    Ok(e) => errs.push(e),
                    Err(msg) => failures.push((nav.seed, msg)),
                }
            }
            let (mean, max) = if errs.is_empty() {
                (None, None)
            } else {
                (
                    Some(errs.iter().sum::<f64>() / errs.len() as f64),
                    Some(errs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                )
            };
            cells.push(SweepCell {
                pos_err_km: r,
                interval: dt,
                interval_days: tp.params.tu_to_days(dt),
                seed_count: errs.len(),
                mean_err_km: mean,
                max_err_km: max,
                failures,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pos_err_km,interval_days,seed_count,mean_err_km,max_err_km,failed_seeds,failure")?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
    for c in cells {
        let reason = c
            .failures
            .first()
            .map(|(s, m)| format!("seed {s}: {}", m.replace([',', '\n'], ";")))
            .unwrap_or_default();
        writeln!(
            out,
            "{:e},{:e},{},{},{},{},{}",
            c.pos_err_km,
            c.interval_days,
            c.seed_count,
            opt(c.mean_err_km),
            opt(c.max_err_km),
            c.failures.len(),
            reason
        )?;
    }
    Ok(())
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` for fewer than two pairs or a constant
/// input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
