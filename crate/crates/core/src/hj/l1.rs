//! Iteratively reweighted ℓ1 minimization under a weighted ℓ2 residual
//! bound,
//!
//! ```text
//! min ‖K x‖₁  s.t.  ‖W(Ax − b)‖₂ ≤ ε,   K ← diag(1 / (|x| + η)),
//! ```
//!
//! with each inner problem solved by a primal log-barrier method.
//!
//! The barrier works in the singular coordinates of `WA = UΣVᵀ`. Writing
//! `x = x_ls + ε' (V_r Σ_r⁻¹ y_r + V_0 y_0)` with `ε'² = ε² − ‖W(Ax_ls − b)‖²`
//! turns the residual bound into the unit ball `‖y_r‖ ≤ 1`, which can be
//! evaluated without cancellation however small `ε'` is.

use nalgebra::{DMatrix, DVector};

use super::l2::LeastSquares;
use super::HjError;

#[derive(Debug, Clone, PartialEq)]
pub struct L1Options {
    pub epsilon: f64,
    pub eta: f64,
    pub delta_s: f64,
    pub max_reweight: usize,
    /// Duality gap, relative to the objective, at which a barrier solve stops.
    pub gap_tol: f64,
    pub max_newton: usize,
    pub barrier_growth: f64,
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            eta: 1e-7,
            delta_s: 1e-8,
            max_reweight: 10,
            gap_tol: 1e-9,
            max_newton: 60,
            barrier_growth: 10.0,
        }
    }
}

/// Fixed weighted design `WA` with its singular factors.
#[derive(Debug, Clone)]
pub struct WeightedDesign {
    pub wa: DMatrix<f64>,
    pub ls: LeastSquares,
    /// `[V_r Σ_r⁻¹ | V_0]`, range directions first.
    t: DMatrix<f64>,
    rank: usize,
}

const RCOND: f64 = 1e-13;

impl WeightedDesign {
    pub fn new(wa: DMatrix<f64>) -> Result<Self, HjError> {
        if wa.iter().any(|v| !v.is_finite()) {
            return Err(HjError::NonFinite("least-squares matrix".into()));
        }
        let (n, m) = wa.shape();
        if m == 0 {
            return Ok(Self {
                ls: LeastSquares::from_pinv(DMatrix::zeros(0, n), 0),
                wa,
                t: DMatrix::zeros(0, 0),
                rank: 0,
            });
        }
        // pad short matrices so that V comes out square
        let padded = if n < m {
            let mut p = DMatrix::zeros(m, m);
            p.view_mut((0, 0), (n, m)).copy_from(&wa);
            p
        } else {
            wa.clone()
        };
        let svd = padded.svd(true, true);
        let u = svd.u.as_ref().expect("left factor requested");
        let vt = svd.v_t.as_ref().expect("right factor requested");
        let sig = &svd.singular_values;
        let cut = RCOND * sig.max();
        let mut range = Vec::new();
        let mut null = Vec::new();
        for i in 0..sig.len() {
            if sig[i] > cut && sig[i] > 0.0 {
                range.push(i);
            } else {
                null.push(i);
            }
        }
        let rank = range.len();
        let mut pinv = DMatrix::zeros(m, n);
        let mut t = DMatrix::zeros(m, m);
        for (c, &i) in range.iter().enumerate() {
            let vi = vt.row(i).transpose();
            pinv.ger(1.0 / sig[i], &vi, &u.column(i).rows(0, n), 1.0);
            t.set_column(c, &(&vi / sig[i]));
        }
        for (c, &i) in null.iter().enumerate() {
            t.set_column(rank + c, &vt.row(i).transpose());
        }
        Ok(Self {
            wa,
            ls: LeastSquares::from_pinv(pinv, rank),
            t,
            rank,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Outcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// True when the reweighting gap fell below `delta_s` before the cap.
    pub converged: bool,
    /// Final `‖W(Ax − b)‖₂`.
    pub residual: f64,
}

/// Runs the reweighting loop from diagonal weights `k0` for the weighted
/// right-hand side `wb`.
pub fn solve_weighted_l1(
    design: &WeightedDesign,
    wb: &DVector<f64>,
    k0: &DVector<f64>,
    opts: &L1Options,
) -> Result<L1Outcome, HjError> {
    let m = design.wa.ncols();
    if k0.len() != m || wb.len() != design.wa.nrows() {
        return Err(HjError::Config("l1 problem dimensions disagree".into()));
    }
    if !(opts.epsilon > 0.0 && opts.eta > 0.0 && opts.delta_s > 0.0) {
        return Err(HjError::Config("epsilon, eta and delta_s must be positive".into()));
    }
    if k0.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(HjError::Config("l1 weights must be positive".into()));
    }
    if wb.iter().any(|v| !v.is_finite()) {
        return Err(HjError::NonFinite("l1 right-hand side".into()));
    }
    let wbn = wb.norm();
    if wbn <= opts.epsilon {
        return Ok(L1Outcome {
            x: DVector::zeros(m),
            iterations: 0,
            converged: true,
            residual: wbn,
        });
    }
    let x_ls = design.ls.solve(wb)?;
    let floor = (&design.wa * &x_ls - wb).norm();
    if !(floor < opts.epsilon) {
        return Err(HjError::Infeasible {
            floor,
            epsilon: opts.epsilon,
        });
    }
    let e_eff = ((opts.epsilon - floor) * (opts.epsilon + floor)).sqrt();
    let x0 = &x_ls / e_eff;

    let mut k = k0.clone();
    let mut prev: Option<DVector<f64>> = None;
    let mut x = x_ls.clone();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_reweight.max(1) {
        iterations = it;
        x = barrier(design, &x0, &k, opts)? * e_eff;
        if let Some(p) = &prev {
            if (&x - p).norm() < opts.delta_s {
                converged = true;
                break;
            }
        }
        k = x.map(|v| 1.0 / (v.abs() + opts.eta));
        prev = Some(x.clone());
    }
    let x = sparsify(design, wb, x, opts.epsilon);
    let x = enforce_feasible(design, wb, &x_ls, x, opts.epsilon);
    let residual = (&design.wa * &x - wb).norm();
    Ok(L1Outcome {
        x,
        iterations,
        converged,
        residual,
    })
}

/// Zeroes entries at barrier-noise level when the bound still holds.
fn sparsify(design: &WeightedDesign, wb: &DVector<f64>, x: DVector<f64>, eps: f64) -> DVector<f64> {
    let xmax = x.amax();
    let mut snapped = x.clone();
    for v in snapped.iter_mut() {
        if v.abs() <= 1e-10 * xmax {
            *v = 0.0;
        }
    }
    if snapped != x && (&design.wa * &snapped - wb).norm() <= eps {
        snapped
    } else {
        x
    }
}

/// Pulls `x` toward the least-squares point until rounding no longer pushes
/// the residual above `eps`.
fn enforce_feasible(
    design: &WeightedDesign,
    wb: &DVector<f64>,
    x_ls: &DVector<f64>,
    x: DVector<f64>,
    eps: f64,
) -> DVector<f64> {
    let res = |v: &DVector<f64>| (&design.wa * v - wb).norm();
    if res(&x) <= eps {
        return x;
    }
    let d = &x - x_ls;
    let mut shrink = 1e-14;
    while shrink < 1.0 {
        let cand = x_ls + &d * (1.0 - shrink);
        if res(&cand) <= eps {
            return cand;
        }
        shrink *= 4.0;
    }
    x_ls.clone()
}

/// Log-barrier solve of `min Σ k_j u_j` over `|x_j| ≤ u_j`, `‖y_r‖ ≤ 1`,
/// with `x = x0 + T y`, started from the ball centre. Returns `x`.
fn barrier(design: &WeightedDesign, x0: &DVector<f64>, k: &DVector<f64>, opts: &L1Options) -> Result<DVector<f64>, HjError> {
    let t = &design.t;
    let r = design.rank;
    let n = x0.len();
    let mut x = x0.clone();
    let mut y = DVector::<f64>::zeros(n);
    let xmax = x.amax();
    let mut u = x.map(|v| 0.95 * v.abs() + 0.1 * xmax.max(f64::MIN_POSITIVE));
    let n_ineq = (2 * n + 1) as f64;
    let obj0: f64 = k.dot(&u);
    let mut tau = n_ineq / obj0;
    let alpha = 0.01;
    let beta = 0.5;

    loop {
        for _ in 0..opts.max_newton {
            let fu1 = &x - &u;
            let fu2 = -&x - &u;
            let yr2 = y.rows(0, r).norm_squared();
            let fe = 0.5 * (yr2 - 1.0);
            if !(fe < 0.0) || fu1.iter().chain(fu2.iter()).any(|&v| !(v < 0.0)) {
                return Err(HjError::InnerSolver("barrier iterate left the feasible set".into()));
            }
            let gx = DVector::from_fn(n, |i, _| -1.0 / fu1[i] + 1.0 / fu2[i]);
            let gu = DVector::from_fn(n, |i, _| tau * k[i] + 1.0 / fu1[i] + 1.0 / fu2[i]);
            let sig11 = DVector::from_fn(n, |i, _| 1.0 / (fu1[i] * fu1[i]) + 1.0 / (fu2[i] * fu2[i]));
            let sig12 = DVector::from_fn(n, |i, _| -1.0 / (fu1[i] * fu1[i]) + 1.0 / (fu2[i] * fu2[i]));
            let mut gy = t.tr_mul(&gx);
            for i in 0..r {
                gy[i] -= y[i] / fe;
            }
            // Schur complement in y after eliminating u
            let mut st = t.clone();
            for i in 0..n {
                let d = (sig11[i] - sig12[i] * sig12[i] / sig11[i]).max(0.0).sqrt();
                st.row_mut(i).scale_mut(d);
            }
            let mut h = st.tr_mul(&st);
            for i in 0..r {
                h[(i, i)] -= 1.0 / fe;
                for j in 0..r {
                    h[(i, j)] += y[i] * y[j] / (fe * fe);
                }
            }
            let ratio = DVector::from_fn(n, |i, _| sig12[i] * gu[i] / sig11[i]);
            let rhs = t.tr_mul(&ratio) - &gy;
            let dy = match h.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => h
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| HjError::InnerSolver("singular barrier Newton system".into()))?,
            };
            let dx = t * &dy;
            let du = DVector::from_fn(n, |i, _| -(gu[i] + sig12[i] * dx[i]) / sig11[i]);
            let slope = gy.dot(&dy) + gu.dot(&du);
            if !(slope < 0.0) || -slope / 2.0 < 1e-6 {
                break;
            }
            // largest step keeping every constraint strict
            let mut smax: f64 = 1.0;
            for i in 0..n {
                let d1 = dx[i] - du[i];
                if d1 > 0.0 {
                    smax = smax.min(-fu1[i] / d1);
                }
                let d2 = -dx[i] - du[i];
                if d2 > 0.0 {
                    smax = smax.min(-fu2[i] / d2);
                }
            }
            let dyr = dy.rows(0, r);
            let yr = y.rows(0, r);
            let aq = dyr.norm_squared();
            let bq = yr.dot(&dyr);
            if aq > 0.0 {
                // ‖y + s dy‖² = 1
                let disc = (bq * bq - aq * (yr2 - 1.0)).max(0.0);
                smax = smax.min((-bq + disc.sqrt()) / aq);
            }
            let mut step = 0.99 * smax;
            let mut accepted = false;
            for _ in 0..60 {
                let mut dphi = tau * step * k.dot(&du);
                let mut ok = true;
                for i in 0..n {
                    let a1 = step * (dx[i] - du[i]) / fu1[i];
                    let a2 = step * (-dx[i] - du[i]) / fu2[i];
                    if !(a1 > -1.0 && a2 > -1.0) {
                        ok = false;
                        break;
                    }
                    dphi -= a1.ln_1p() + a2.ln_1p();
                }
                let ae = (step * bq + 0.5 * step * step * aq) / fe;
                if ok && ae > -1.0 {
                    dphi -= ae.ln_1p();
                    if dphi <= alpha * step * slope {
                        x += &dx * step;
                        y += &dy * step;
                        u += &du * step;
                        accepted = true;
                        break;
                    }
                }
                step *= beta;
            }
            if !accepted {
                break;
            }
        }
        let obj: f64 = k.iter().zip(x.iter()).map(|(kj, xj)| kj * xj.abs()).sum();
        if n_ineq / tau <= opts.gap_tol * obj.max(f64::MIN_POSITIVE) {
            break;
        }
        tau *= opts.barrier_growth;
        if !tau.is_finite() {
            return Err(HjError::InnerSolver("barrier parameter overflow".into()));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rhs_returns_zero() {
        let d = WeightedDesign::new(DMatrix::identity(5, 5)).unwrap();
        let out = solve_weighted_l1(&d, &DVector::zeros(5), &DVector::from_element(5, 1.0), &L1Options::default()).unwrap();
        assert_eq!(out.x, DVector::zeros(5));
    }

    #[test]
    fn single_entry_shrinkage() {
        let n = 6;
        let d = WeightedDesign::new(DMatrix::identity(n, n)).unwrap();
        let mut b = DVector::zeros(n);
        b[2] = 1e-3;
        let eps = 1e-5;
        let opts = L1Options {
            epsilon: eps,
            ..L1Options::default()
        };
        let out = solve_weighted_l1(&d, &b, &DVector::from_element(n, 1.0), &opts).unwrap();
        assert_eq!(out.x.iter().filter(|&&v| v != 0.0).count(), 1);
        assert!((out.x[2] - (1e-3 - eps)).abs() < 1e-9 * 1e-3, "{}", out.x[2]);
        assert!(out.residual <= eps);
    }

    #[test]
    fn synthetic_sparse_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (rows, cols) = (60, 200);
        let mut a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        for j in 0..cols {
            let nrm = a.column(j).norm();
            a.column_mut(j).scale_mut(1.0 / nrm);
        }
        let mut truth = DVector::zeros(cols);
        let support = [7usize, 31, 88, 120, 177];
        for &j in &support {
            truth[j] = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let b = &a * &truth;
        let d = WeightedDesign::new(a).unwrap();
        let opts = L1Options {
            epsilon: 1e-8,
            ..L1Options::default()
        };
        let out = solve_weighted_l1(&d, &b, &DVector::from_element(cols, 1.0), &opts).unwrap();
        let got: Vec<usize> = (0..cols).filter(|&j| out.x[j].abs() > 1e-10).collect();
        assert_eq!(got, support.to_vec());
        assert!((&out.x - &truth).amax() < 1e-6);
        assert!(out.residual <= 1e-8);
    }

    #[test]
    fn infeasible_bound_reported() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let d = WeightedDesign::new(a).unwrap();
        let b = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let err = solve_weighted_l1(&d, &b, &DVector::from_element(1, 1.0), &L1Options::default()).unwrap_err();
        assert!(matches!(err, HjError::Infeasible { .. }));
    }

    #[test]
    fn overdetermined_step_respects_bound_and_is_sparser() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (rows, cols) = (120, 30);
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let mut truth = DVector::zeros(cols);
        truth[3] = 1.0;
        truth[11] = -0.5;
        let noise = DVector::from_fn(rows, |_, _| rng.random_range(-1e-6..1e-6));
        let b = &a * &truth + noise;
        let d = WeightedDesign::new(a).unwrap();
        let eps = 1e-4;
        let opts = L1Options {
            epsilon: eps,
            ..L1Options::default()
        };
        let out = solve_weighted_l1(&d, &b, &DVector::from_element(cols, 1.0), &opts).unwrap();
        assert!(out.residual <= eps);
        let l2 = d.ls.solve(&b).unwrap();
        let nnz = |v: &DVector<f64>| v.iter().filter(|x| x.abs() > 1e-10).count();
        assert!(nnz(&out.x) <= nnz(&l2));
        assert_eq!(nnz(&out.x), 2);
    }
}
