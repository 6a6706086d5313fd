//! Minimum-energy nominal transfer as an indirect two-point boundary value
//! problem, solved by shooting on the initial costate.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2, Vector4};
use thiserror::Error;

use crate::dynamics::{
    drift, drift_jacobian, potential_third, uniform_grid, Control2, CostWeights,
    Costate4, DynamicsError, State4,
};
use crate::integrator::{self, Dop853Options};
use crate::units::SystemParams;

type Vector8 = SVector<f64, 8>;
type Matrix8 = SMatrix<f64, 8, 8>;

#[derive(Debug, Error)]
pub enum NominalError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("shooting did not converge after {iterations} iterations (best residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid BVP configuration: {0}")]
    BadConfig(String),
    #[error("time {t} outside nominal span [{t0}, {tf}]")]
    OutOfRange { t: f64, t0: f64, tf: f64 },
    #[error("malformed nominal file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpConfig {
    /// Terminal state residual accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_costate: Option<Costate4>,
    pub integrator_tol: f64,
    /// Segments used by the multiple-shooting fallback.
    pub segments: usize,
    pub nodes: usize,
}

impl Default for BvpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 50,
            initial_costate: None,
            integrator_tol: 1e-12,
            segments: 4,
            nodes: 2001,
        }
    }
}

impl BvpConfig {
    pub fn validate(&self) -> Result<(), NominalError> {
        if !(self.tol > 0.0) || !(self.integrator_tol > 0.0) {
            return Err(NominalError::BadConfig("tolerances must be positive".into()));
        }
        if self.max_iter == 0 || self.segments == 0 || self.nodes < 2 {
            return Err(NominalError::BadConfig(
                "max_iter and segments must be positive, nodes at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShootingMethod {
    Single,
    Multiple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpReport {
    pub iterations: usize,
    pub residual: f64,
    pub cost: f64,
    pub method: ShootingMethod,
    pub costate0: Costate4,
}

/// Derivative of the Pontryagin system `z = (x, λ)` under `u* = −R⁻¹Bᵀλ`.
pub fn augmented_rhs(
    z: &Vector8,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<Vector8, DynamicsError> {
    let x: State4 = z.fixed_rows::<4>(0).into();
    let lam: Costate4 = z.fixed_rows::<4>(4).into();
    let u = w.optimal_control(&lam);
    let mut xd = drift(&x, p)?;
    xd[2] += u.x;
    xd[3] += u.y;
    let a = drift_jacobian(&x, p)?;
    let ld = -(a.transpose() * lam);
    let mut out = Vector8::zeros();
    out.fixed_rows_mut::<4>(0).copy_from(&xd);
    out.fixed_rows_mut::<4>(4).copy_from(&ld);
    Ok(out)
}

/// Jacobian of [`augmented_rhs`] with respect to `z`.
pub fn augmented_jacobian(
    z: &Vector8,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<Matrix8, DynamicsError> {
    let x: State4 = z.fixed_rows::<4>(0).into();
    let a = drift_jacobian(&x, p)?;
    let t = potential_third(&Vector2::new(x[0], x[1]), p)?;
    let g = w.control_gramian();
    let mut j = Matrix8::zeros();
    j.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
    j.fixed_view_mut::<4, 4>(0, 4).copy_from(&(-g));
    j.fixed_view_mut::<4, 4>(4, 4).copy_from(&(-a.transpose()));
    // λ̇ rows 0,1 are −(Ω_ij λ_{v,j}); their position derivatives need Ω_ijk
    for i in 0..2 {
        for k in 0..2 {
            let mut s = 0.0;
            for jj in 0..2 {
                s += t[i][jj][k] * z[6 + jj];
            }
            j[(4 + i, k)] = -s;
        }
    }
    Ok(j)
}

/// Value of the nominal Hamiltonian `½uᵀRu + λᵀf(x, u*)`, constant along
/// extremals of the autonomous problem.
pub fn nominal_hamiltonian(
    z: &Vector8,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<f64, DynamicsError> {
    let x: State4 = z.fixed_rows::<4>(0).into();
    let lam: Costate4 = z.fixed_rows::<4>(4).into();
    let u = w.optimal_control(&lam);
    let mut f = drift(&x, p)?;
    f[2] += u.x;
    f[3] += u.y;
    Ok(0.5 * (u.transpose() * w.r * u)[0] + lam.dot(&f))
}

fn stack(x: &State4, lam: &Costate4) -> Vector8 {
    let mut z = Vector8::zeros();
    z.fixed_rows_mut::<4>(0).copy_from(x);
    z.fixed_rows_mut::<4>(4).copy_from(lam);
    z
}

/// Propagates `z` from `t0` to `t1`, optionally with its 8×8 sensitivity.
fn flow(
    z0: &Vector8,
    t0: f64,
    t1: f64,
    with_stm: bool,
    p: &SystemParams,
    w: &CostWeights,
    tol: f64,
) -> Result<(Vector8, Option<Matrix8>), DynamicsError> {
    let opts = Dop853Options::with_tol(tol);
    let n = if with_stm { 72 } else { 8 };
    let mut y0 = vec![0.0; n];
    y0[..8].copy_from_slice(z0.as_slice());
    if with_stm {
        for i in 0..8 {
            y0[8 + i * 8 + i] = 1.0;
        }
    }
    let (ys, _) = integrator::integrate(
        |_t, y: &[f64], dy: &mut [f64]| {
            let z = Vector8::from_column_slice(&y[..8]);
            let d = augmented_rhs(&z, p, w)?;
            dy[..8].copy_from_slice(d.as_slice());
            if with_stm {
                let jac = augmented_jacobian(&z, p, w)?;
                let phi = Matrix8::from_column_slice(&y[8..]);
                let dphi = jac * phi;
                dy[8..].copy_from_slice(dphi.as_slice());
            }
            Ok::<(), DynamicsError>(())
        },
        t0,
        &y0,
        &[t1],
        &opts,
    )?;
    let y = &ys[0];
    let z = Vector8::from_column_slice(&y[..8]);
    let stm = with_stm.then(|| Matrix8::from_column_slice(&y[8..]));
    Ok((z, stm))
}

/// Costate guess from the affine linearization of the Pontryagin system
/// about `x0`, solved in closed form with a matrix exponential.
pub fn linearized_costate_guess(
    x0: &State4,
    xf: &State4,
    tf: f64,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<Costate4, NominalError> {
    let a = drift_jacobian(x0, p)?;
    let f0 = drift(x0, p)?;
    let g = w.control_gramian();
    let mut m = SMatrix::<f64, 9, 9>::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
    m.fixed_view_mut::<4, 4>(0, 4).copy_from(&(-g));
    m.fixed_view_mut::<4, 4>(4, 4).copy_from(&(-a.transpose()));
    m.fixed_view_mut::<4, 1>(0, 8).copy_from(&(f0 - a * x0));
    let e = (m * tf).exp();
    let exx = e.fixed_view::<4, 4>(0, 0);
    let exl = e.fixed_view::<4, 4>(0, 4);
    let ex1 = e.fixed_view::<4, 1>(0, 8);
    let rhs = xf - exx * x0 - ex1;
    exl.into_owned()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| NominalError::BadConfig("linearized costate map is singular".into()))
}

fn single_shooting(
    x0: &State4,
    xf: &State4,
    tf: f64,
    guess: Costate4,
    cfg: &BvpConfig,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<(Costate4, usize, f64), NominalError> {
    let tol = cfg.integrator_tol;
    let residual_of = |lam0: &Costate4| -> Option<(Vector4<f64>, Matrix8)> {
        let (z, stm) = flow(&stack(x0, lam0), 0.0, tf, true, p, w, tol).ok()?;
        let r: Vector4<f64> = z.fixed_rows::<4>(0) - xf;
        r.iter().all(|v| v.is_finite()).then(|| (r, stm.unwrap()))
    };
    let mut lam = guess;
    let (mut r, mut stm) = residual_of(&lam).ok_or(NominalError::NotConverged {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let mut best = r.norm();
    for it in 0..cfg.max_iter {
        if r.norm() <= cfg.tol {
            return Ok((lam, it, r.norm()));
        }
        let jac = stm.fixed_view::<4, 4>(0, 4).into_owned();
        let step = jac.lu().solve(&(-r)).ok_or(NominalError::NotConverged {
            iterations: it,
            residual: best,
        })?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = lam + step * alpha;
            if let Some((rt, st)) = residual_of(&trial) {
                if rt.norm() < r.norm() {
                    accepted = Some((trial, rt, st));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((l, rt, st)) = accepted else {
            return Err(NominalError::NotConverged {
                iterations: it,
                residual: best,
            });
        };
        lam = l;
        r = rt;
        stm = st;
        best = best.min(r.norm());
    }
    if r.norm() <= cfg.tol {
        return Ok((lam, cfg.max_iter, r.norm()));
    }
    Err(NominalError::NotConverged {
        iterations: cfg.max_iter,
        residual: best,
    })
}

fn multiple_shooting(
    x0: &State4,
    xf: &State4,
    tf: f64,
    guess: Costate4,
    cfg: &BvpConfig,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<(Costate4, usize, f64), NominalError> {
    let ms = cfg.segments.max(2);
    let tol = cfg.integrator_tol;
    let nodes: Vec<f64> = uniform_grid(0.0, tf, ms + 1);
    let nu = 4 + 8 * (ms - 1);
    // unknowns: λ0, then z_j at interior nodes; states start on the chord
    let mut v = DVector::zeros(nu);
    v.rows_mut(0, 4).copy_from(&guess);
    for j in 1..ms {
        let s = j as f64 / ms as f64;
        let xj = x0 + (xf - x0) * s;
        v.rows_mut(4 + 8 * (j - 1), 4).copy_from(&xj);
        v.rows_mut(8 + 8 * (j - 1), 4).copy_from(&guess);
    }
    let start = |v: &DVector<f64>, j: usize| -> Vector8 {
        if j == 0 {
            let lam: Costate4 = v.fixed_rows::<4>(0).into();
            stack(x0, &lam)
        } else {
            v.fixed_rows::<8>(4 + 8 * (j - 1)).into()
        }
    };
    let eval = |v: &DVector<f64>| -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut r = DVector::zeros(nu);
        let mut jac = DMatrix::zeros(nu, nu);
        for j in 0..ms {
            let (z1, stm) = flow(&start(v, j), nodes[j], nodes[j + 1], true, p, w, tol).ok()?;
            let stm = stm.unwrap();
            let row = 8 * j;
            let (col, cols) = if j == 0 { (0, 4) } else { (4 + 8 * (j - 1), 8) };
            let sens = if j == 0 {
                stm.fixed_view::<8, 4>(0, 4).into_owned().resize(8, 4, 0.0)
            } else {
                DMatrix::from_column_slice(8, 8, stm.as_slice())
            };
            if j + 1 < ms {
                let next = start(v, j + 1);
                r.rows_mut(row, 8).copy_from(&(z1 - next));
                jac.view_mut((row, col), (8, cols)).copy_from(&sens);
                for i in 0..8 {
                    jac[(row + i, 4 + 8 * j + i)] = -1.0;
                }
            } else {
                let d: Vector4<f64> = z1.fixed_rows::<4>(0) - xf;
                r.rows_mut(row, 4).copy_from(&d);
                jac.view_mut((row, col), (4, cols))
                    .copy_from(&sens.view((0, 0), (4, cols)));
            }
        }
        r.iter().all(|x| x.is_finite()).then_some((r, jac))
    };
    let (mut r, mut jac) = eval(&v).ok_or(NominalError::NotConverged {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let mut best = r.norm();
    for it in 0..cfg.max_iter {
        if r.norm() <= cfg.tol {
            return Ok((v.fixed_rows::<4>(0).into(), it, r.norm()));
        }
        let step = jac.clone().lu().solve(&(-&r)).ok_or(NominalError::NotConverged {
            iterations: it,
            residual: best,
        })?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &v + &step * alpha;
            if let Some((rt, jt)) = eval(&trial) {
                if rt.norm() < r.norm() {
                    accepted = Some((trial, rt, jt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((vt, rt, jt)) = accepted else {
            break;
        };
        v = vt;
        r = rt;
        jac = jt;
        best = best.min(r.norm());
    }
    if r.norm() <= cfg.tol {
        return Ok((v.fixed_rows::<4>(0).into(), cfg.max_iter, r.norm()));
    }
    Err(NominalError::NotConverged {
        iterations: cfg.max_iter,
        residual: best,
    })
}

/// Dense nominal state, costate and control histories.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<State4>,
    pub costates: Vec<Costate4>,
    pub controls: Vec<Control2>,
    pub x0: State4,
    pub xf: State4,
    pub tf: f64,
    pub mu: f64,
    derivatives: Vec<Vector8>,
}

/// Solves the fixed-endpoint minimum-energy transfer from `x0` to `xf` in
/// time `tf`. Single shooting is tried first; if it fails, multiple
/// shooting produces a costate that single shooting then polishes.
pub fn solve_nominal(
    x0: &State4,
    xf: &State4,
    tf: f64,
    cfg: &BvpConfig,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<(NominalTrajectory, BvpReport), NominalError> {
    cfg.validate()?;
    if !(tf > 0.0) || !tf.is_finite() {
        return Err(NominalError::BadConfig(format!("tf must be positive, got {tf}")));
    }
    let guess = match cfg.initial_costate {
        Some(l) => l,
        None => linearized_costate_guess(x0, xf, tf, p, w)?,
    };
    let (lam0, iterations, residual, method) =
        match single_shooting(x0, xf, tf, guess, cfg, p, w) {
            Ok((l, it, r)) => (l, it, r, ShootingMethod::Single),
            Err(NominalError::NotConverged { .. }) => {
                let (lm, it_ms, _) = multiple_shooting(x0, xf, tf, guess, cfg, p, w)?;
                let (l, it, r) = single_shooting(x0, xf, tf, lm, cfg, p, w)?;
                (l, it_ms + it, r, ShootingMethod::Multiple)
            }
            Err(e) => return Err(e),
        };
    let traj = densify(x0, xf, tf, &lam0, cfg, p, w)?;
    let cost = traj.control_energy(w);
    Ok((
        traj,
        BvpReport {
            iterations,
            residual,
            cost,
            method,
            costate0: lam0,
        },
    ))
}

fn densify(
    x0: &State4,
    xf: &State4,
    tf: f64,
    lam0: &Costate4,
    cfg: &BvpConfig,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<NominalTrajectory, NominalError> {
    let times = uniform_grid(0.0, tf, cfg.nodes);
    let opts = Dop853Options::with_tol(cfg.integrator_tol);
    let z0 = stack(x0, lam0);
    let (ys, _) = integrator::integrate(
        |_t, y: &[f64], dy: &mut [f64]| {
            let d = augmented_rhs(&Vector8::from_column_slice(y), p, w)?;
            dy.copy_from_slice(d.as_slice());
            Ok::<(), DynamicsError>(())
        },
        0.0,
        z0.as_slice(),
        &times,
        &opts,
    )
    .map_err(DynamicsError::from)?;
    let mut states = Vec::with_capacity(ys.len());
    let mut costates = Vec::with_capacity(ys.len());
    let mut controls = Vec::with_capacity(ys.len());
    for y in &ys {
        let z = Vector8::from_column_slice(y);
        let lam: Costate4 = z.fixed_rows::<4>(4).into();
        states.push(z.fixed_rows::<4>(0).into());
        controls.push(w.optimal_control(&lam));
        costates.push(lam);
    }
    NominalTrajectory::from_parts(times, states, costates, controls, *x0, *xf, p.mu)
}

impl NominalTrajectory {
    /// Builds a trajectory from node data, computing the node derivatives
    /// used for Hermite interpolation from the stored controls.
    pub fn from_parts(
        times: Vec<f64>,
        states: Vec<State4>,
        costates: Vec<Costate4>,
        controls: Vec<Control2>,
        x0: State4,
        xf: State4,
        mu: f64,
    ) -> Result<Self, NominalError> {
        let n = times.len();
        if n < 2 || states.len() != n || costates.len() != n || controls.len() != n {
            return Err(NominalError::BadConfig("inconsistent node arrays".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NominalError::BadConfig("times must increase strictly".into()));
        }
        let p = SystemParams {
            mu,
            ..SystemParams::default()
        };
        let mut derivatives = Vec::with_capacity(n);
        for i in 0..n {
            let mut xd = drift(&states[i], &p)?;
            xd[2] += controls[i].x;
            xd[3] += controls[i].y;
            let a = drift_jacobian(&states[i], &p)?;
            let ld = -(a.transpose() * costates[i]);
            derivatives.push(stack(&xd, &ld));
        }
        let tf = times[n - 1];
        Ok(Self {
            times,
            states,
            costates,
            controls,
            x0,
            xf,
            tf,
            mu,
            derivatives,
        })
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `½∫uᵀRu dt` by composite Simpson (trapezoid on a trailing odd interval).
    pub fn control_energy(&self, w: &CostWeights) -> f64 {
        let e: Vec<f64> = self
            .controls
            .iter()
            .map(|u| 0.5 * (u.transpose() * w.r * u)[0])
            .collect();
        let mut s = 0.0;
        let n = e.len();
        let mut i = 0;
        while i + 2 < n {
            let h = self.times[i + 2] - self.times[i];
            s += h / 6.0 * (e[i] + 4.0 * e[i + 1] + e[i + 2]);
            i += 2;
        }
        if i + 1 < n {
            s += 0.5 * (self.times[i + 1] - self.times[i]) * (e[i] + e[i + 1]);
        }
        s
    }

    /// Interpolated `(x_N, u_N, λ_N)` at `t`; exact at nodes.
    pub fn sample(&self, t: f64, w: &CostWeights) -> Result<(State4, Control2, Costate4), NominalError> {
        let (z, _) = self.sample_z(t)?;
        match z {
            Sample::Node(i) => Ok((self.states[i], self.controls[i], self.costates[i])),
            Sample::Interp(z) => {
                let lam: Costate4 = z.fixed_rows::<4>(4).into();
                Ok((z.fixed_rows::<4>(0).into(), w.optimal_control(&lam), lam))
            }
        }
    }

    /// Interpolated nominal state only.
    pub fn state_at(&self, t: f64) -> Result<State4, NominalError> {
        match self.sample_z(t)?.0 {
            Sample::Node(i) => Ok(self.states[i]),
            Sample::Interp(z) => Ok(z.fixed_rows::<4>(0).into()),
        }
    }

    fn sample_z(&self, t: f64) -> Result<(Sample, usize), NominalError> {
        let t0 = self.times[0];
        let tf = self.tf;
        if !(t >= t0 && t <= tf) {
            return Err(NominalError::OutOfRange { t, t0, tf });
        }
        let k = self.times.partition_point(|&ti| ti <= t);
        let i = k.saturating_sub(1).min(self.times.len() - 2);
        if self.times[i] == t {
            return Ok((Sample::Node(i), i));
        }
        if self.times[i + 1] == t {
            return Ok((Sample::Node(i + 1), i + 1));
        }
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let za = stack(&self.states[i], &self.costates[i]);
        let zb = stack(&self.states[i + 1], &self.costates[i + 1]);
        let z = za * h00 + self.derivatives[i] * (h10 * h) + zb * h01 + self.derivatives[i + 1] * (h11 * h);
        Ok((Sample::Interp(z), i))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# nominal tf={:e} mu={:e} nodes={}", self.tf, self.mu, self.len())?;
        writeln!(out, "# x0 {}", join(self.x0.as_slice()))?;
        writeln!(out, "# xf {}", join(self.xf.as_slice()))?;
        writeln!(out, "t x y vx vy lx ly lvx lvy ux uy")?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i]];
            row.extend_from_slice(self.states[i].as_slice());
            row.extend_from_slice(self.costates[i].as_slice());
            row.extend_from_slice(self.controls[i].as_slice());
            writeln!(out, "{}", join(&row))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, NominalError> {
        let mut lines = input.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), NominalError> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(NominalError::Format {
                    line: 0,
                    msg: format!("missing {what}"),
                }),
            }
        };
        let (ln, header) = next("header")?;
        let fmt = |line: usize, msg: &str| NominalError::Format {
            line,
            msg: msg.to_string(),
        };
        let rest = header
            .strip_prefix("# nominal ")
            .ok_or_else(|| fmt(ln, "expected `# nominal` header"))?;
        let mut tf = None;
        let mut mu = None;
        let mut nodes = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| fmt(ln, "bad header field"))?;
            match k {
                "tf" => tf = v.parse::<f64>().ok(),
                "mu" => mu = v.parse::<f64>().ok(),
                "nodes" => nodes = v.parse::<usize>().ok(),
                _ => return Err(fmt(ln, &format!("unknown header field `{k}`"))),
            }
        }
        let (tf, mu, nodes) = match (tf, mu, nodes) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(fmt(ln, "header needs tf, mu and nodes")),
        };
        let mut boundary = |tag: &str| -> Result<State4, NominalError> {
            let (ln, l) = next(tag)?;
            let body = l
                .strip_prefix(&format!("# {tag} "))
                .ok_or_else(|| fmt(ln, &format!("expected `# {tag}` line")))?;
            let v = parse_row(body, 4).map_err(|m| fmt(ln, &m))?;
            Ok(Vector4::from_column_slice(&v))
        };
        let x0 = boundary("x0")?;
        let xf = boundary("xf")?;
        let (ln, cols) = next("column names")?;
        if cols.split_whitespace().count() != 11 {
            return Err(fmt(ln, "expected 11 column names"));
        }
        let mut times = Vec::with_capacity(nodes);
        let mut states = Vec::with_capacity(nodes);
        let mut costates = Vec::with_capacity(nodes);
        let mut controls = Vec::with_capacity(nodes);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_row(&line, 11).map_err(|m| fmt(i + 1, &m))?;
            times.push(v[0]);
            states.push(Vector4::new(v[1], v[2], v[3], v[4]));
            costates.push(Vector4::new(v[5], v[6], v[7], v[8]));
            controls.push(Vector2::new(v[9], v[10]));
        }
        if times.len() != nodes {
            return Err(fmt(0, &format!("header says {nodes} nodes, found {}", times.len())));
        }
        let traj = Self::from_parts(times, states, costates, controls, x0, xf, mu)?;
        if traj.tf != tf {
            return Err(fmt(0, "header tf does not match last node"));
        }
        Ok(traj)
    }
}

enum Sample {
    Node(usize),
    Interp(Vector8),
}

pub(crate) fn join(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:e}").unwrap();
    }
    s
}

pub(crate) fn parse_row(line: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let v = v.map_err(|e| e.to_string())?;
    if v.len() != n {
        return Err(format!("expected {n} values, found {}", v.len()));
    }
    Ok(v)
}

/// Dense trajectory of an arbitrary initial costate, used for independent
/// re-propagation checks.
pub fn propagate_extremal(
    x0: &State4,
    lam0: &Costate4,
    t_out: &[f64],
    tol: f64,
    p: &SystemParams,
    w: &CostWeights,
) -> Result<Vec<(State4, Costate4)>, NominalError> {
    let opts = Dop853Options::with_tol(tol);
    let (ys, _) = integrator::integrate(
        |_t, y: &[f64], dy: &mut [f64]| {
            let d = augmented_rhs(&Vector8::from_column_slice(y), p, w)?;
            dy.copy_from_slice(d.as_slice());
            Ok::<(), DynamicsError>(())
        },
        0.0,
        stack(x0, lam0).as_slice(),
        t_out,
        &opts,
    )
    .map_err(DynamicsError::from)?;
    Ok(ys
        .iter()
        .map(|y| {
            let z = Vector8::from_column_slice(y);
            (z.fixed_rows::<4>(0).into(), z.fixed_rows::<4>(4).into())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::propagate;

    pub(crate) fn table_pair() -> (State4, State4, f64) {
        let p = SystemParams::default();
        (
            Vector4::new(0.810796, -0.158270, -0.129473, 0.319169),
            Vector4::new(1.175974, -0.134272, -0.153277, -0.295254),
            p.days_to_tu(5.0),
        )
    }

    #[test]
    fn zero_costate_reduces_to_free_dynamics() {
        let p = SystemParams::default();
        let w = CostWeights::default();
        let x = Vector4::new(0.81, -0.15, -0.12, 0.31);
        let d = augmented_rhs(&stack(&x, &Vector4::zeros()), &p, &w).unwrap();
        let f = drift(&x, &p).unwrap();
        assert_eq!(d.fixed_rows::<4>(0).into_owned(), f);
        assert_eq!(d.fixed_rows::<4>(4).into_owned(), Vector4::zeros());
    }

    #[test]
    fn augmented_jacobian_matches_differences() {
        let p = SystemParams::default();
        let w = CostWeights::new(nalgebra::Matrix4::identity(), nalgebra::Matrix2::new(2.0, 0.3, 0.3, 1.0)).unwrap();
        let z = Vector8::from_column_slice(&[0.83, -0.1, 0.05, 0.2, 0.4, -0.3, 0.7, 0.1]);
        let j = augmented_jacobian(&z, &p, &w).unwrap();
        let h = 1e-6;
        for c in 0..8 {
            let mut zp = z;
            let mut zm = z;
            zp[c] += h;
            zm[c] -= h;
            let col = (augmented_rhs(&zp, &p, &w).unwrap() - augmented_rhs(&zm, &p, &w).unwrap()) / (2.0 * h);
            for r in 0..8 {
                assert!((col[r] - j[(r, c)]).abs() < 1e-6 * j[(r, c)].abs().max(1.0), "({r},{c})");
            }
        }
    }

    #[test]
    fn table_transfer_converges() {
        let p = SystemParams::default();
        let w = CostWeights::default();
        let (x0, xf, tf) = table_pair();
        let (traj, rep) = solve_nominal(&x0, &xf, tf, &BvpConfig::default(), &p, &w).unwrap();
        assert!(rep.residual < 1e-9, "{rep:?}");
        assert_eq!(traj.states[0], x0);
        assert!((traj.states.last().unwrap() - xf).norm() < 1e-9);
        // Pontryagin consistency at every node
        for (u, l) in traj.controls.iter().zip(&traj.costates) {
            assert_eq!(*u, w.optimal_control(l));
        }
        // Hamiltonian constancy
        let h0 = nominal_hamiltonian(&stack(&traj.states[0], &traj.costates[0]), &p, &w).unwrap();
        for i in (0..traj.len()).step_by(50) {
            let h = nominal_hamiltonian(&stack(&traj.states[i], &traj.costates[i]), &p, &w).unwrap();
            assert!((h - h0).abs() < 1e-9, "{}", (h - h0).abs());
        }
        assert!(rep.cost > 0.0);
    }

    #[test]
    fn free_propagation_needs_no_control() {
        let p = SystemParams::default();
        let w = CostWeights::default();
        let (x0, _, tf) = table_pair();
        let free = propagate(&x0, |_| Vector2::zeros(), 0.0, tf, &[], 1e-13, &p).unwrap();
        let xf = *free.last_state().unwrap();
        let (traj, rep) = solve_nominal(&x0, &xf, tf, &BvpConfig::default(), &p, &w).unwrap();
        assert!(rep.costate0.norm() < 1e-8, "{:?}", rep.costate0);
        assert!(traj.control_energy(&w) < 1e-16);
    }

    #[test]
    fn doubling_r_scales_costate_only() {
        let p = SystemParams::default();
        let w1 = CostWeights::default();
        let w2 = CostWeights {
            r: nalgebra::Matrix2::identity() * 2.0,
            ..CostWeights::default()
        };
        let (x0, xf, tf) = table_pair();
        let cfg = BvpConfig::default();
        let (a, ra) = solve_nominal(&x0, &xf, tf, &cfg, &p, &w1).unwrap();
        let (b, rb) = solve_nominal(&x0, &xf, tf, &cfg, &p, &w2).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert!((sa - sb).norm() < 1e-9);
        }
        assert!((rb.costate0 - ra.costate0 * 2.0).norm() < 1e-8 * ra.costate0.norm());
    }

    #[test]
    fn interpolation_exact_at_nodes_and_accurate_between() {
        let p = SystemParams::default();
        let w = CostWeights::default();
        let (x0, xf, tf) = table_pair();
        let (traj, rep) = solve_nominal(&x0, &xf, tf, &BvpConfig::default(), &p, &w).unwrap();
        let (s0, u0, l0) = traj.sample(0.0, &w).unwrap();
        assert_eq!((s0, u0, l0), (traj.states[0], traj.controls[0], traj.costates[0]));
        let n = traj.len() - 1;
        let (sf, uf, lf) = traj.sample(tf, &w).unwrap();
        assert_eq!((sf, uf, lf), (traj.states[n], traj.controls[n], traj.costates[n]));
        let tm = 0.5 * (traj.times[700] + traj.times[701]);
        let direct = propagate_extremal(&x0, &rep.costate0, &[tm], 1e-13, &p, &w).unwrap();
        let (sm, _, lm) = traj.sample(tm, &w).unwrap();
        assert!((sm - direct[0].0).norm() < 1e-8);
        assert!((lm - direct[0].1).norm() < 1e-8);
        assert!(traj.sample(tf * 1.01, &w).is_err());
        assert!(traj.sample(-1e-9, &w).is_err());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let p = SystemParams::default();
        let w = CostWeights::default();
        let (x0, xf, tf) = table_pair();
        let cfg = BvpConfig {
            nodes: 51,
            ..BvpConfig::default()
        };
        let (traj, _) = solve_nominal(&x0, &xf, tf, &cfg, &p, &w).unwrap();
        let mut buf = Vec::new();
        traj.write_to(&mut buf).unwrap();
        let back = NominalTrajectory::read_from(&buf[..]).unwrap();
        assert_eq!(back, traj);
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn malformed_file_rejected() {
        let err = NominalTrajectory::read_from(&b"# nominal tf=1 mu=0.01\n"[..]).unwrap_err();
        assert!(matches!(err, NominalError::Format { .. }));
    }

    #[test]
    fn multiple_shooting_agrees_with_single() {
        let p = SystemParams::default();
        let w = CostWeights::default();
        let (x0, xf, tf) = table_pair();
        let cfg = BvpConfig::default();
        let guess = linearized_costate_guess(&x0, &xf, tf, &p, &w).unwrap();
        let (ls, _, _) = single_shooting(&x0, &xf, tf, guess, &cfg, &p, &w).unwrap();
        let (lm, _, r) = multiple_shooting(&x0, &xf, tf, guess, &cfg, &p, &w).unwrap();
        assert!(r < 1e-9);
        assert!((ls - lm).norm() < 1e-7 * ls.norm());
    }
}
