//! Costate recovery from a marched generating function and closed-loop
//! propagation of perturbed trajectories.
//!
//! With `F2(δx, δλ0, t)` known, `∂F2/∂δλ0 = δx0` and `∂F2/∂δx = δλ(t)`.
//! Fixing `δx(tf) = δxf` turns the first relation into four equations for
//! `δλ0`; the second then gives the costate at any intermediate time.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::basis::CoefficientTimeline;
use crate::dynamics::{Control2, Costate4, State4};
use crate::hamiltonian::{AbsoluteModel, ModelError};
use crate::integrator::{integrate, Dop853Options, IntegrationError};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("degenerate costate map at t = {t}: the Jacobian in δλ0 vanishes")]
    Degenerate { t: f64 },
    #[error("costate map Jacobian condition {cond:e} exceeds {limit:e} at t = {t}")]
    IllConditioned { t: f64, cond: f64, limit: f64 },
    #[error("costate recovery stalled after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("time {t} is outside the coefficient timeline [{t0}, {tf}]")]
    OutOfHorizon { t: f64, t0: f64, tf: f64 },
    #[error("perturbation left {factor}x the domain box at t = {t}")]
    Escape { t: f64, factor: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("invalid tracking input: {0}")]
    Config(String),
    #[error("measurement epoch {epoch} at t = {t}: {source}")]
    Epoch {
        epoch: usize,
        t: f64,
        source: Box<TrackingError>,
    },
}

impl From<IntegrationError<TrackingError>> for TrackingError {
    fn from(e: IntegrationError<TrackingError>) -> Self {
        match e {
            IntegrationError::Rhs(inner) => inner,
            other => TrackingError::Integration(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOptions {
    /// Target `‖g(δλ0)‖₂` in normalized state units.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest accepted condition number of the Jacobian.
    pub cond_limit: f64,
    /// Half-widths of the trained `δλ0` box; solutions outside it are
    /// flagged as extrapolated.
    pub lam0_half: Option<[f64; 4]>,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            cond_limit: 1e12,
            lam0_half: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub dl0: Costate4,
    /// Costate at the solve time (equal to `dl0` at `t0`).
    pub dl: Costate4,
    pub iterations: usize,
    pub residual: f64,
    pub cond: f64,
    pub extrapolated: bool,
}

/// First and second partials of `F2` at one time.
struct Partials {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn partials(tl: &CoefficientTimeline, c: &DVector<f64>, dx: &State4, dl0: &Costate4) -> Partials {
    let z: Vec<f64> = dx.iter().chain(dl0.iter()).copied().collect();
    Partials {
        grad: tl.dict.grad_dot(&z, c),
        hess: tl.dict.hessian_dot(&z, c),
    }
}

impl Partials {
    fn d_lam(&self) -> Vector4<f64> {
        Vector4::from_iterator(self.grad.rows(4, 4).iter().copied())
    }

    fn d_x(&self) -> Vector4<f64> {
        Vector4::from_iterator(self.grad.rows(0, 4).iter().copied())
    }

    fn lam_lam(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.hess[(4 + i, 4 + j)])
    }

    fn lam_x(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.hess[(4 + i, j)])
    }
}

fn coefficients(tl: &CoefficientTimeline, t: f64) -> Result<DVector<f64>, TrackingError> {
    if tl.dict.n_vars() != 8 {
        return Err(TrackingError::Config("timeline must be over 8 variables".into()));
    }
    tl.coefficients_at(t).ok_or(TrackingError::OutOfHorizon {
        t,
        t0: tl.times[0],
        tf: *tl.times.last().unwrap(),
    })
}

/// Condition number of `j`, rejecting vanishing or near-singular maps.
fn conditioning(j: &Matrix4<f64>, t: f64, limit: f64) -> Result<f64, TrackingError> {
    let sv = j.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(TrackingError::Degenerate { t });
    }
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= limit) {
        return Err(TrackingError::IllConditioned { t, cond, limit });
    }
    Ok(cond)
}

/// Damped Newton iteration for `g(δλ0) = 0` from `guess`.
fn newton<F>(mut eval: F, guess: Costate4, t: f64, opts: &RecoveryOptions) -> Result<(Costate4, usize, f64, f64), TrackingError>
where
    F: FnMut(&Costate4) -> (Vector4<f64>, Matrix4<f64>),
{
    let mut x = guess;
    let (mut g, mut j) = eval(&x);
    let mut cond = conditioning(&j, t, opts.cond_limit)?;
    for it in 0..=opts.max_iter {
        let res = g.norm();
        if res < opts.tol {
            return Ok((x, it, res, cond));
        }
        if it == opts.max_iter {
            break;
        }
        let step = j.lu().solve(&(-g)).ok_or(TrackingError::Degenerate { t })?;
        let mut s = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let xn = x + step * s;
            let (gn, jn) = eval(&xn);
            if gn.norm() < res {
                x = xn;
                g = gn;
                j = jn;
                improved = true;
                break;
            }
            s *= 0.5;
        }
        if !improved {
            return Err(TrackingError::NotConverged {
                iterations: it,
                residual: res,
            });
        }
        cond = conditioning(&j, t, opts.cond_limit)?;
    }
    Err(TrackingError::NotConverged {
        iterations: opts.max_iter,
        residual: g.norm(),
    })
}

fn extrapolated(dl0: &Costate4, opts: &RecoveryOptions) -> bool {
    opts.lam0_half
        .map(|h| dl0.iter().zip(h.iter()).any(|(v, h)| v.abs() > *h))
        .unwrap_or(false)
}

/// Solves `∂F2(δxf, δλ0, tf)/∂δλ0 = δx0` for `δλ0`.
pub fn recover_initial_costate(
    dx0: &State4,
    dxf: &State4,
    tl: &CoefficientTimeline,
    opts: &RecoveryOptions,
) -> Result<Recovery, TrackingError> {
    let tf = *tl.times.last().unwrap();
    let cf = coefficients(tl, tf)?;
    // quadratic truncation about the origin gives the starting point
    let p0 = partials(tl, &cf, &State4::zeros(), &Costate4::zeros());
    let j0 = p0.lam_lam();
    conditioning(&j0, tf, opts.cond_limit)?;
    let rhs = dx0 - p0.d_lam() - p0.lam_x() * dxf;
    let guess = j0.lu().solve(&rhs).ok_or(TrackingError::Degenerate { t: tf })?;
    let (dl0, iterations, residual, cond) = newton(
        |l| {
            let p = partials(tl, &cf, dxf, l);
            (p.d_lam() - dx0, p.lam_lam())
        },
        guess,
        tf,
        opts,
    )?;
    Ok(Recovery {
        dl0,
        dl: dl0,
        iterations,
        residual,
        cond,
        extrapolated: extrapolated(&dl0, opts),
    })
}

/// Re-solves from a state `dx_k` measured at `t_k`: finds `δλ0` with
/// `∂F2(δx_k, δλ0, t_k)/∂δλ0 = ∂F2(δxf, δλ0, tf)/∂δλ0` and returns the
/// costate `∂F2(δx_k, δλ0, t_k)/∂δx`.
pub fn resolve_at_time(
    dx_k: &State4,
    t_k: f64,
    dxf: &State4,
    tl: &CoefficientTimeline,
    opts: &RecoveryOptions,
) -> Result<Recovery, TrackingError> {
    let tf = *tl.times.last().unwrap();
    let ck = coefficients(tl, t_k)?;
    let cf = coefficients(tl, tf)?;
    let zero = Costate4::zeros();
    let pk0 = partials(tl, &ck, &State4::zeros(), &zero);
    let pf0 = partials(tl, &cf, &State4::zeros(), &zero);
    let j0 = pk0.lam_lam() - pf0.lam_lam();
    conditioning(&j0, t_k, opts.cond_limit)?;
    let rhs = pf0.d_lam() + pf0.lam_x() * dxf - pk0.d_lam() - pk0.lam_x() * dx_k;
    let guess = j0.lu().solve(&rhs).ok_or(TrackingError::Degenerate { t: t_k })?;
    let (dl0, iterations, residual, cond) = newton(
        |l| {
            let pk = partials(tl, &ck, dx_k, l);
            let pf = partials(tl, &cf, dxf, l);
            (pk.d_lam() - pf.d_lam(), pk.lam_lam() - pf.lam_lam())
        },
        guess,
        t_k,
        opts,
    )?;
    let dl = partials(tl, &ck, dx_k, &dl0).d_x();
    Ok(Recovery {
        dl0,
        dl,
        iterations,
        residual,
        cond,
        extrapolated: extrapolated(&dl0, opts),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOptions {
    pub tol: f64,
    /// State half-widths of the trained box; leaving `escape_factor` times
    /// this box aborts the propagation.
    pub dx_half: Option<[f64; 4]>,
    pub escape_factor: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            dx_half: None,
            escape_factor: 10.0,
        }
    }
}

impl PropagationOptions {
    pub(crate) fn integrator(&self) -> Dop853Options {
        Dop853Options {
            rtol: self.tol,
            atol: self.tol * 1e-3,
            ..Dop853Options::default()
        }
    }

    pub(crate) fn check_escape(&self, dx: &[f64], t: f64) -> Result<(), TrackingError> {
        if let Some(h) = &self.dx_half {
            if dx.iter().zip(h).any(|(v, h)| v.abs() > self.escape_factor * h) {
                return Err(TrackingError::Escape {
                    t,
                    factor: self.escape_factor,
                });
            }
        }
        Ok(())
    }
}

/// Samples of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub times: Vec<f64>,
    /// Deviations from the canonical system.
    pub dx: Vec<State4>,
    pub dl: Vec<Costate4>,
    /// Absolute states integrated directly in the full dynamics.
    pub x: Vec<State4>,
    /// Applied control `u_ref + δu`.
    pub u: Vec<Control2>,
    /// Largest `|x − (x_ref + δx)|` over the samples.
    pub crosscheck: f64,
}

impl ClosedLoop {
    pub fn terminal_deviation(&self) -> State4 {
        *self.dx.last().unwrap()
    }
}

fn v4(s: &[f64]) -> Vector4<f64> {
    Vector4::new(s[0], s[1], s[2], s[3])
}

/// Joint right-hand side of the controller's canonical system and the
/// absolute truth driven by the controller's costate.
pub(crate) fn joint_rhs<M: AbsoluteModel + ?Sized>(
    model: &M,
    opts: &PropagationOptions,
    t: f64,
    y: &[f64],
    out: &mut [f64],
) -> Result<(), TrackingError> {
    let dx = v4(&y[0..4]);
    let dl = v4(&y[4..8]);
    let x = v4(&y[8..12]);
    opts.check_escape(&y[0..4], t)?;
    let (xr, _) = model.reference(t)?;
    opts.check_escape((x - xr).as_slice(), t)?;
    let (dxd, dld) = model.canonical_rhs(&dx, &dl, t)?;
    let du = model.control_deviation(&dl);
    let xd = model.absolute_rhs(&x, &du, t)?;
    out[0..4].copy_from_slice(dxd.as_slice());
    out[4..8].copy_from_slice(dld.as_slice());
    out[8..12].copy_from_slice(xd.as_slice());
    Ok(())
}

/// Integrates the canonical system from `(δx0, δλ0)` at `times[0]`,
/// applying `u = u_ref − R⁻¹Bᵀδλ`, and cross-checks against a direct
/// full-dynamics propagation of the absolute state.
pub fn closed_loop_propagate<M: AbsoluteModel + ?Sized>(
    model: &M,
    dx0: &State4,
    dl0: &Costate4,
    times: &[f64],
    opts: &PropagationOptions,
) -> Result<ClosedLoop, TrackingError> {
    let Some(&ts) = times.first() else {
        return Err(TrackingError::Config("empty output grid".into()));
    };
    let (xr0, _) = model.reference(ts)?;
    let mut y0 = Vec::with_capacity(12);
    y0.extend_from_slice(dx0.as_slice());
    y0.extend_from_slice(dl0.as_slice());
    y0.extend_from_slice((xr0 + dx0).as_slice());
    let (ys, _) = integrate(|t, y, o| joint_rhs(model, opts, t, y, o), ts, &y0, times, &opts.integrator())?;
    let mut run = ClosedLoop {
        times: times.to_vec(),
        dx: Vec::with_capacity(ys.len()),
        dl: Vec::with_capacity(ys.len()),
        x: Vec::with_capacity(ys.len()),
        u: Vec::with_capacity(ys.len()),
        crosscheck: 0.0,
    };
    for (&t, y) in times.iter().zip(&ys) {
        let dx = v4(&y[0..4]);
        let dl = v4(&y[4..8]);
        let x = v4(&y[8..12]);
        let (xr, ur) = model.reference(t)?;
        run.crosscheck = run.crosscheck.max((x - (xr + dx)).amax());
        run.u.push(ur + model.control_deviation(&dl));
        run.dx.push(dx);
        run.dl.push(dl);
        run.x.push(x);
    }
    Ok(run)
}

/// Deviation history when only the reference control is applied.
pub fn open_loop_propagate<M: AbsoluteModel + ?Sized>(
    model: &M,
    dx0: &State4,
    times: &[f64],
    opts: &PropagationOptions,
) -> Result<Vec<State4>, TrackingError> {
    let Some(&ts) = times.first() else {
        return Err(TrackingError::Config("empty output grid".into()));
    };
    let (xr0, _) = model.reference(ts)?;
    let zero = Control2::zeros();
    let f = |t: f64, y: &[f64], o: &mut [f64]| -> Result<(), TrackingError> {
        let xd = model.absolute_rhs(&v4(y), &zero, t)?;
        o.copy_from_slice(xd.as_slice());
        Ok(())
    };
    let (ys, _) = integrate(f, ts, (xr0 + dx0).as_slice(), times, &opts.integrator())?;
    times
        .iter()
        .zip(&ys)
        .map(|(&t, y)| Ok(v4(y) - model.reference(t)?.0))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::basis::build_dictionary;
    use crate::dynamics::uniform_grid;
    use crate::hamiltonian::{DoubleIntegrator, TrackingModel};
    use crate::hj::{quadratic_coefficients, time_march, Marching, SolverConfig, SolverMode};
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Transition matrix of the linear canonical system over `t`.
    pub(crate) fn lti_stm(t: f64) -> DMatrix<f64> {
        let model = DoubleIntegrator::new(1.0);
        let a = DoubleIntegrator::a();
        let g = model.g();
        let mut z = DMatrix::zeros(8, 8);
        z.view_mut((0, 0), (4, 4)).copy_from(&a);
        z.view_mut((0, 4), (4, 4)).copy_from(&(-g));
        z.view_mut((4, 0), (4, 4)).copy_from(&(-Matrix4::<f64>::identity()));
        z.view_mut((4, 4), (4, 4)).copy_from(&(-a.transpose()));
        (z * t).exp()
    }

    /// `δλ(t_s)` steering `dx_s` at `t_s` to `dxf` at `tf`.
    pub(crate) fn lti_bvp_costate(dx_s: &State4, dxf: &State4, span: f64) -> Costate4 {
        let phi = lti_stm(span);
        let pxx = Matrix4::from_fn(|i, j| phi[(i, j)]);
        let pxl = Matrix4::from_fn(|i, j| phi[(i, 4 + j)]);
        pxl.try_inverse().unwrap() * (dxf - pxx * dx_s)
    }

    pub(crate) fn lti_timeline(tf: f64) -> CoefficientTimeline {
        let dict = build_dictionary(8, 2).unwrap();
        let model = DoubleIntegrator::new(tf);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec<f64>> = (0..90).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let cfg = SolverConfig {
            dt: Some(1e-3),
            mode: SolverMode::L2,
            marching: Marching::Rk4,
            ..SolverConfig::default()
        };
        let gf = time_march(&model, &dict, &pts, &vec![1.0; 90], &[], "mc", &cfg).unwrap();
        assert!(gf.is_complete());
        gf.timeline
    }

    #[test]
    fn zero_perturbation_gives_zero_costate() {
        let tl = lti_timeline(1.0);
        let r = recover_initial_costate(&State4::zeros(), &State4::zeros(), &tl, &RecoveryOptions::default()).unwrap();
        assert!(r.dl0.amax() < 1e-14);
        let r = resolve_at_time(&State4::zeros(), 0.4, &State4::zeros(), &tl, &RecoveryOptions::default()).unwrap();
        assert!(r.dl0.amax() < 1e-12 && r.dl.amax() < 1e-12, "{:e} {:e}", r.dl0.amax(), r.dl.amax());
    }

    #[test]
    fn identity_map_is_degenerate() {
        let dict = build_dictionary(8, 2).unwrap();
        let tl = CoefficientTimeline::new(dict.clone(), 0.0, dict.identity_coefficients().unwrap());
        let err = recover_initial_costate(&State4::zeros(), &State4::zeros(), &tl, &RecoveryOptions::default()).unwrap_err();
        assert!(matches!(err, TrackingError::Degenerate { .. }), "{err}");
    }

    #[test]
    fn lti_initial_costate_matches_closed_form() {
        let tl = lti_timeline(1.0);
        let dx0 = State4::new(0.3, -0.2, 0.1, 0.05);
        let dxf = State4::new(-0.1, 0.05, 0.0, 0.02);
        let r = recover_initial_costate(&dx0, &dxf, &tl, &RecoveryOptions::default()).unwrap();
        let oracle = lti_bvp_costate(&dx0, &dxf, 1.0);
        assert!((r.dl0 - oracle).amax() < 1e-6, "{:?} vs {:?}", r.dl0, oracle);
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn lti_midcourse_resolve_matches_remaining_horizon() {
        let tl = lti_timeline(1.0);
        let dxk = State4::new(0.2, 0.1, -0.3, 0.1);
        let dxf = State4::new(0.05, 0.0, 0.0, -0.05);
        let r = resolve_at_time(&dxk, 0.5, &dxf, &tl, &RecoveryOptions::default()).unwrap();
        let oracle = lti_bvp_costate(&dxk, &dxf, 0.5);
        assert!((r.dl - oracle).amax() < 1e-6, "{:?} vs {:?}", r.dl, oracle);
    }

    #[test]
    fn near_terminal_resolve_is_rejected() {
        let tl = lti_timeline(1.0);
        let err = resolve_at_time(&State4::new(0.1, 0.0, 0.0, 0.0), 1.0, &State4::zeros(), &tl, &RecoveryOptions::default())
            .unwrap_err();
        assert!(matches!(err, TrackingError::Degenerate { .. } | TrackingError::IllConditioned { .. }), "{err}");
    }

    /// Exact quadratic generating-function coefficients of the linear
    /// system over `t`.
    pub(crate) fn lti_analytic_coefficients(dict: &crate::basis::BasisDictionary, t: f64) -> DVector<f64> {
        let phi = lti_stm(t);
        let pxx = DMatrix::from_fn(4, 4, |i, j| phi[(i, j)]);
        let pxl = DMatrix::from_fn(4, 4, |i, j| phi[(i, 4 + j)]);
        let plx = DMatrix::from_fn(4, 4, |i, j| phi[(4 + i, j)]);
        let inv = pxx.clone().try_inverse().unwrap();
        let mut k = DMatrix::zeros(8, 8);
        k.view_mut((0, 0), (4, 4)).copy_from(&(&plx * &inv));
        k.view_mut((0, 4), (4, 4)).copy_from(&inv.transpose());
        k.view_mut((4, 0), (4, 4)).copy_from(&inv);
        k.view_mut((4, 4), (4, 4)).copy_from(&(-(&inv * &pxl)));
        quadratic_coefficients(dict, &k).unwrap()
    }

    #[test]
    fn quadratic_recovery_is_exact_for_an_analytic_map() {
        let dict = build_dictionary(8, 2).unwrap();
        let mut tl = CoefficientTimeline::new(dict.clone(), 0.0, dict.identity_coefficients().unwrap());
        tl.push(0.8, lti_analytic_coefficients(&dict, 0.8));
        let dx0 = State4::new(0.1, 0.2, -0.1, 0.0);
        let r = recover_initial_costate(&dx0, &State4::zeros(), &tl, &RecoveryOptions::default()).unwrap();
        let oracle = lti_bvp_costate(&dx0, &State4::zeros(), 0.8);
        assert!((r.dl0 - oracle).amax() < 1e-12);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn zero_perturbation_stays_on_reference() {
        let model = DoubleIntegrator::new(1.0);
        let grid = uniform_grid(0.0, 1.0, 11);
        let run = closed_loop_propagate(&model, &State4::zeros(), &Costate4::zeros(), &grid, &PropagationOptions::default()).unwrap();
        assert!(run.dx.iter().all(|d| d.amax() == 0.0));
        assert!(run.u.iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn lti_closed_loop_reaches_target() {
        let tl = lti_timeline(1.0);
        let model = DoubleIntegrator::new(1.0);
        let dx0 = State4::new(0.3, -0.2, 0.1, 0.05);
        let r = recover_initial_costate(&dx0, &State4::zeros(), &tl, &RecoveryOptions::default()).unwrap();
        let grid = uniform_grid(0.0, 1.0, 21);
        let run = closed_loop_propagate(&model, &dx0, &r.dl0, &grid, &PropagationOptions::default()).unwrap();
        assert!(run.terminal_deviation().amax() < 1e-6);
        assert!(run.crosscheck < 1e-12);
        // resolving on the trajectory reproduces the propagated costate
        let k = 10;
        let rk = resolve_at_time(&run.dx[k], grid[k], &State4::zeros(), &tl, &RecoveryOptions::default()).unwrap();
        assert!((rk.dl - run.dl[k]).amax() < 1e-6);
        let open = open_loop_propagate(&model, &dx0, &grid, &PropagationOptions::default()).unwrap();
        assert!(open.last().unwrap().norm() > 0.1);
        let _ = model.tf();
    }

    #[test]
    fn escape_is_reported() {
        let model = DoubleIntegrator::new(1.0);
        let opts = PropagationOptions {
            dx_half: Some([0.01; 4]),
            ..PropagationOptions::default()
        };
        let grid = uniform_grid(0.0, 1.0, 3);
        let err = closed_loop_propagate(&model, &State4::new(0.0, 0.0, 1.0, 0.0), &Costate4::zeros(), &grid, &opts).unwrap_err();
        assert!(matches!(err, TrackingError::Escape { .. }), "{err}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn analytic_map_recovery_matches_closed_form(
            tf in 0.2f64..2.0,
            v in proptest::array::uniform8(-0.5f64..0.5),
        ) {
            let dict = build_dictionary(8, 2).unwrap();
            let mut tl = CoefficientTimeline::new(dict.clone(), 0.0, dict.identity_coefficients().unwrap());
            tl.push(tf, lti_analytic_coefficients(&dict, tf));
            let dx0 = State4::new(v[0], v[1], v[2], v[3]);
            let dxf = State4::new(v[4], v[5], v[6], v[7]);
            let r = recover_initial_costate(&dx0, &dxf, &tl, &RecoveryOptions::default()).unwrap();
            let oracle = lti_bvp_costate(&dx0, &dxf, tf);
            proptest::prop_assert!((r.dl0 - oracle).amax() < 1e-9 * (1.0 + oracle.amax()));
        }
    }
}
