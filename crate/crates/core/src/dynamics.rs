//! Planar circular restricted three-body dynamics in the rotating frame.
//!
//! State ordering is `[x, y, vx, vy]`; control is an additive acceleration
//! `[ux, uy]` entering the velocity rows.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use thiserror::Error;

use crate::integrator::{self, Dop853Options, IntegrationError};
use crate::units::SystemParams;

pub type State4 = Vector4<f64>;
pub type Costate4 = Vector4<f64>;
pub type Control2 = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("singularity: distance to primary {primary} is {r:e} (floor {floor:e})")]
    Singularity { primary: u8, r: f64, floor: f64 },
    #[error("invalid time span: t0 = {t0}, tf = {tf}")]
    BadSpan { t0: f64, tf: f64 },
    #[error("invalid cost weights: {0}")]
    BadWeights(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("time {t} outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
}

impl<E: std::error::Error + Into<DynamicsError> + 'static> From<IntegrationError<E>>
    for DynamicsError
{
    fn from(e: IntegrationError<E>) -> Self {
        match e {
            IntegrationError::Rhs(inner) => inner.into(),
            other => DynamicsError::Integration(other.to_string()),
        }
    }
}

/// Control-input matrix mapping `[ux, uy]` into the velocity rows.
pub fn control_matrix() -> nalgebra::Matrix4x2<f64> {
    nalgebra::Matrix4x2::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
}

struct Primaries {
    // (offset dx, dy, r, mass) for each primary
    terms: [(f64, f64, f64, f64); 2],
}

fn primaries(q: &Vector2<f64>, p: &SystemParams) -> Result<Primaries, DynamicsError> {
    let mu = p.mu;
    let d1 = (q.x + mu, q.y);
    let d2 = (q.x - 1.0 + mu, q.y);
    let r1 = d1.0.hypot(d1.1);
    let r2 = d2.0.hypot(d2.1);
    if !(r1 >= p.r_floor) {
        return Err(DynamicsError::Singularity {
            primary: 1,
            r: r1,
            floor: p.r_floor,
        });
    }
    if !(r2 >= p.r_floor) {
        return Err(DynamicsError::Singularity {
            primary: 2,
            r: r2,
            floor: p.r_floor,
        });
    }
    Ok(Primaries {
        terms: [(d1.0, d1.1, r1, 1.0 - mu), (d2.0, d2.1, r2, mu)],
    })
}

/// Pseudo-potential `½(x²+y²) + (1−μ)/r1 + μ/r2`.
pub fn pseudo_potential(q: &Vector2<f64>, p: &SystemParams) -> Result<f64, DynamicsError> {
    let pr = primaries(q, p)?;
    let mut v = 0.5 * (q.x * q.x + q.y * q.y);
    for (_, _, r, m) in pr.terms {
        v += m / r;
    }
    Ok(v)
}

pub fn potential_gradient(q: &Vector2<f64>, p: &SystemParams) -> Result<Vector2<f64>, DynamicsError> {
    let pr = primaries(q, p)?;
    let mut g = Vector2::new(q.x, q.y);
    for (dx, dy, r, m) in pr.terms {
        let r3 = r * r * r;
        g.x -= m * dx / r3;
        g.y -= m * dy / r3;
    }
    Ok(g)
}

pub fn potential_hessian(q: &Vector2<f64>, p: &SystemParams) -> Result<Matrix2<f64>, DynamicsError> {
    let pr = primaries(q, p)?;
    let mut h = Matrix2::identity();
    for (dx, dy, r, m) in pr.terms {
        let r2 = r * r;
        let r3 = r2 * r;
        let r5 = r3 * r2;
        let d = [dx, dy];
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[(i, j)] += m * (3.0 * d[i] * d[j] / r5 - delta / r3);
            }
        }
    }
    Ok(h)
}

/// Third partials `∂³Ω/∂q_i∂q_j∂q_k`, indexed `[i][j][k]`.
pub fn potential_third(q: &Vector2<f64>, p: &SystemParams) -> Result<[[[f64; 2]; 2]; 2], DynamicsError> {
    let pr = primaries(q, p)?;
    let mut t = [[[0.0; 2]; 2]; 2];
    for (dx, dy, r, m) in pr.terms {
        let r2 = r * r;
        let r5 = r2 * r2 * r;
        let r7 = r5 * r2;
        let d = [dx, dy];
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    t[i][j][k] += m
                        * (-15.0 * d[i] * d[j] * d[k] / r7
                            + 3.0 * (delta(i, j) * d[k] + delta(i, k) * d[j] + delta(j, k) * d[i]) / r5);
                }
            }
        }
    }
    Ok(t)
}

/// Uncontrolled vector field.
pub fn drift(s: &State4, p: &SystemParams) -> Result<State4, DynamicsError> {
    let g = potential_gradient(&Vector2::new(s[0], s[1]), p)?;
    Ok(Vector4::new(s[2], s[3], 2.0 * s[3] + g.x, -2.0 * s[2] + g.y))
}

/// Full controlled vector field `f(x, u)`.
pub fn pcr3bp_rhs(s: &State4, u: &Control2, p: &SystemParams) -> Result<State4, DynamicsError> {
    let mut d = drift(s, p)?;
    d[2] += u.x;
    d[3] += u.y;
    Ok(d)
}

/// Jacobian of the drift with respect to the state.
pub fn drift_jacobian(s: &State4, p: &SystemParams) -> Result<Matrix4<f64>, DynamicsError> {
    let h = potential_hessian(&Vector2::new(s[0], s[1]), p)?;
    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        h[(0, 0)], h[(0, 1)], 0.0, 2.0,
        h[(1, 0)], h[(1, 1)], -2.0, 0.0,
    );
    Ok(a)
}

/// Jacobi integral `2Ω − v²`.
pub fn jacobi_constant(s: &State4, p: &SystemParams) -> Result<f64, DynamicsError> {
    let omega = pseudo_potential(&Vector2::new(s[0], s[1]), p)?;
    Ok(2.0 * omega - (s[2] * s[2] + s[3] * s[3]))
}

/// The five libration points, collinear ones located by Newton iteration.
pub fn lagrange_points(p: &SystemParams) -> [Vector2<f64>; 5] {
    let mu = p.mu;
    let fx = |x: f64| {
        let r1 = (x + mu).abs();
        let r2 = (x - 1.0 + mu).abs();
        x - (1.0 - mu) * (x + mu) / r1.powi(3) - mu * (x - 1.0 + mu) / r2.powi(3)
    };
    let newton = |mut x: f64| {
        for _ in 0..100 {
            let h = 1e-7;
            let d = (fx(x + h) - fx(x - h)) / (2.0 * h);
            let step = fx(x) / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        x
    };
    let gamma = (mu / 3.0).cbrt();
    let l1 = newton(1.0 - mu - gamma);
    let l2 = newton(1.0 - mu + gamma);
    let l3 = newton(-1.0 - 5.0 * mu / 12.0);
    let h = 3f64.sqrt() / 2.0;
    [
        Vector2::new(l1, 0.0),
        Vector2::new(l2, 0.0),
        Vector2::new(l3, 0.0),
        Vector2::new(0.5 - mu, h),
        Vector2::new(0.5 - mu, -h),
    ]
}

/// Quadratic tracking weights `Q` (state) and `R` (control).
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q: Matrix4::identity(),
            r: Matrix2::identity(),
        }
    }
}

impl CostWeights {
    pub fn new(q: Matrix4<f64>, r: Matrix2<f64>) -> Result<Self, DynamicsError> {
        let w = Self { q, r };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let sym_tol = 1e-12;
        if (self.q - self.q.transpose()).amax() > sym_tol * self.q.amax().max(1.0) {
            return Err(DynamicsError::BadWeights("Q is not symmetric".into()));
        }
        if (self.r - self.r.transpose()).amax() > sym_tol * self.r.amax().max(1.0) {
            return Err(DynamicsError::BadWeights("R is not symmetric".into()));
        }
        let qe = self.q.symmetric_eigenvalues();
        if qe.min() < -1e-12 * self.q.amax().max(1.0) {
            return Err(DynamicsError::BadWeights("Q is not positive semidefinite".into()));
        }
        if self.r.cholesky().is_none() {
            return Err(DynamicsError::BadWeights("R is not positive definite".into()));
        }
        Ok(())
    }

    pub fn r_inv(&self) -> Matrix2<f64> {
        self.r.try_inverse().expect("validated R is invertible")
    }

    /// `B R⁻¹ Bᵀ`, the costate-to-state coupling of the minimized Hamiltonian.
    pub fn control_gramian(&self) -> Matrix4<f64> {
        let b = control_matrix();
        b * self.r_inv() * b.transpose()
    }

    /// Optimal control for a given costate: `−R⁻¹ Bᵀ λ`.
    pub fn optimal_control(&self, lam: &Costate4) -> Control2 {
        let bt: Matrix2x4<f64> = control_matrix().transpose();
        -(self.r_inv() * (bt * lam))
    }
}

/// Time-gridded state history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State4>,
    pub controls: Option<Vec<Control2>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&State4> {
        self.states.last()
    }
}

/// Propagates the controlled dynamics and samples the state on `grid`
/// (which must start at `t0` and increase to `tf`). When `grid` is empty a
/// two-point grid `{t0, tf}` is used.
pub fn propagate<C>(
    s0: &State4,
    control: C,
    t0: f64,
    tf: f64,
    grid: &[f64],
    tol: f64,
    p: &SystemParams,
) -> Result<Trajectory, DynamicsError>
where
    C: Fn(f64) -> Control2,
{
    if !(tol > 0.0) || !(t0.is_finite() && tf.is_finite()) || tf == t0 {
        return Err(DynamicsError::BadSpan { t0, tf });
    }
    let times: Vec<f64> = if grid.is_empty() {
        vec![t0, tf]
    } else {
        grid.to_vec()
    };
    let opts = Dop853Options::with_tol(tol);
    let (ys, _) = integrator::integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            let s = Vector4::new(y[0], y[1], y[2], y[3]);
            let d = pcr3bp_rhs(&s, &control(t), p)?;
            dy.copy_from_slice(d.as_slice());
            Ok::<(), DynamicsError>(())
        },
        t0,
        s0.as_slice(),
        &times,
        &opts,
    )?;
    let controls = times.iter().map(|&t| control(t)).collect();
    Ok(Trajectory {
        times,
        states: ys.iter().map(|y| Vector4::from_column_slice(y)).collect(),
        controls: Some(controls),
    })
}

/// Uniform grid of `n` nodes on `[t0, tf]` with exact endpoints.
pub fn uniform_grid(t0: f64, tf: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let dt = (tf - t0) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { tf } else { t0 + dt * i as f64 })
        .collect()
}
