//! Time marching of generating-function coefficients.
//!
//! At each step the Hamilton-Jacobi equation `∂F2/∂t + H(δx, ∂F2/∂δx, t) = 0`
//! is collocated on a fixed point set. With `F2 = Φ(ζ)ᵀc` this gives the
//! linear system `A δc = b`, `A_i = Φ(ζ_i)ᵀ`, `b_i = −H_i dt`, solved either
//! by weighted least squares or by reweighted ℓ1 minimization.

pub mod l1;
pub mod l2;

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector4};
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{BasisDictionary, BasisError, Block, CoefficientTimeline};
use crate::hamiltonian::{ModelError, TrackingModel};

pub use l1::{solve_weighted_l1, L1Options, L1Outcome, WeightedDesign};
pub use l2::{solve_l2, LeastSquares};

#[derive(Debug, Error)]
pub enum HjError {
    #[error("hamiltonian evaluation failed at point {point}: {source}")]
    Model {
        point: usize,
        #[source]
        source: ModelError,
    },
    #[error("residual bound {epsilon:e} is below the least-squares floor {floor:e}")]
    Infeasible { floor: f64, epsilon: f64 },
    #[error("step {step} at t = {t}: {source}")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: Box<HjError>,
    },
    #[error("inner l1 solver: {0}")]
    InnerSolver(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Normalization of the diagonal residual weights `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Collocation weights divided by their sum.
    UnitTrace,
    /// Collocation weights rescaled to average one (trace `N`).
    #[default]
    MeanOne,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    L2,
    #[default]
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Marching {
    /// One collocated solve per step with the Hamiltonian at `(c_k, t_k)`.
    #[default]
    Euler,
    /// Classical four-stage update; stages use the least-squares projector and
    /// the final increment is solved in the configured mode.
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step size; `None` selects `(tf − t0)/500`.
    pub dt: Option<f64>,
    pub epsilon: f64,
    pub eta: f64,
    pub delta_s: f64,
    pub max_reweight: usize,
    /// Accepted for interface completeness; unused by the reweighting loop.
    pub alpha: f64,
    pub weight_mode: WeightMode,
    pub mode: SolverMode,
    pub marching: Marching,
    /// Maximum number of times a step may be halved when its least-squares
    /// floor exceeds `epsilon` (ℓ1 mode only).
    pub max_halvings: u32,
    /// Hold the constant and first-degree coefficients at zero. The
    /// perturbation Hamiltonian vanishes to second order at the origin, so
    /// these terms are absent from the exact generating function; a fit that
    /// leaves them free picks them up by aliasing and moves the fixed point.
    pub anchor_origin: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: None,
            epsilon: 1e-7,
            eta: 1e-7,
            delta_s: 1e-8,
            max_reweight: 10,
            alpha: 0.0,
            weight_mode: WeightMode::default(),
            mode: SolverMode::default(),
            marching: Marching::default(),
            max_halvings: 4,
            anchor_origin: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), HjError> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(HjError::Config(format!("dt must be positive, got {dt}")));
            }
        }
        for (name, v) in [("epsilon", self.epsilon), ("eta", self.eta), ("delta_s", self.delta_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HjError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_reweight == 0 {
            return Err(HjError::Config("max_reweight must be at least 1".into()));
        }
        Ok(())
    }

    fn l1_options(&self) -> L1Options {
        L1Options {
            epsilon: self.epsilon,
            eta: self.eta,
            delta_s: self.delta_s,
            max_reweight: self.max_reweight,
            ..L1Options::default()
        }
    }
}

/// Diagonal `W` from raw collocation weights.
pub fn residual_weights(raw: &[f64], mode: WeightMode) -> Result<DVector<f64>, HjError> {
    let n = raw.len();
    if raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) && mode != WeightMode::Identity {
        return Err(HjError::Config("collocation weights must be positive".into()));
    }
    let sum: f64 = raw.iter().sum();
    Ok(match mode {
        WeightMode::Identity => DVector::from_element(n, 1.0),
        WeightMode::UnitTrace => DVector::from_iterator(n, raw.iter().map(|w| w / sum)),
        WeightMode::MeanOne => DVector::from_iterator(n, raw.iter().map(|w| w * n as f64 / sum)),
    })
}

/// Basis evaluations at a point set: `A` (values) and the stacked state
/// gradients `D`, so that `δλ_i = D[4i..4i+4, :] c`.
#[derive(Debug, Clone)]
pub struct PointBlock {
    pub points: Vec<Vec<f64>>,
    pub a: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl PointBlock {
    pub fn new(dict: &BasisDictionary, points: &[Vec<f64>]) -> Result<Self, HjError> {
        let m = dict.len();
        let half = dict.n_vars() / 2;
        for p in points {
            if p.len() != dict.n_vars() {
                return Err(HjError::Config(format!(
                    "point of dimension {} for a {}-variable dictionary",
                    p.len(),
                    dict.n_vars()
                )));
            }
        }
        let rows: Vec<(DVector<f64>, DMatrix<f64>)> = points
            .par_iter()
            .map(|z| (dict.eval_basis(z), dict.eval_grad(z, Block::State)))
            .collect();
        let n = points.len();
        let mut a = DMatrix::zeros(n, m);
        let mut d = DMatrix::zeros(half * n, m);
        for (i, (phi, g)) in rows.iter().enumerate() {
            a.row_mut(i).tr_copy_from(phi);
            for k in 0..half {
                d.row_mut(half * i + k).tr_copy_from(&g.column(k));
            }
        }
        Ok(Self {
            points: points.to_vec(),
            a,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `H(δx_i, δλ_i, t)` for every point, with `δλ` from the coefficients `c`.
    pub fn hamiltonians<M: TrackingModel + ?Sized>(
        &self,
        model: &M,
        c: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>, HjError> {
        let lam = &self.d * c;
        let vals: Vec<Result<f64, HjError>> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let z = &self.points[i];
                let dx = Vector4::new(z[0], z[1], z[2], z[3]);
                let dl = Vector4::new(lam[4 * i], lam[4 * i + 1], lam[4 * i + 2], lam[4 * i + 3]);
                let h = model
                    .hamiltonian(&dx, &dl, t)
                    .map_err(|source| HjError::Model { point: i, source })?;
                if h.is_finite() {
                    Ok(h)
                } else {
                    Err(HjError::NonFinite(format!("hamiltonian at point {i}")))
                }
            })
            .collect();
        let mut out = DVector::zeros(self.len());
        for (i, v) in vals.into_iter().enumerate() {
            out[i] = v?;
        }
        Ok(out)
    }
}

/// Everything about the collocation that stays fixed during the march.
#[derive(Debug, Clone)]
pub struct Collocation {
    pub train: PointBlock,
    pub test: PointBlock,
    pub w: DVector<f64>,
    /// Weighted design over the free columns only.
    pub design: WeightedDesign,
    /// Dictionary columns solved for; the rest stay fixed.
    pub active: Vec<usize>,
    degrees: Vec<u32>,
}

impl Collocation {
    pub fn new(
        dict: &BasisDictionary,
        train: &[Vec<f64>],
        raw_weights: &[f64],
        test: &[Vec<f64>],
        mode: WeightMode,
        anchor_origin: bool,
    ) -> Result<Self, HjError> {
        if dict.n_vars() != 8 {
            return Err(HjError::Config("dictionary must cover (δx, δλ0) in 8 variables".into()));
        }
        if train.is_empty() {
            return Err(HjError::Config("no training points".into()));
        }
        if raw_weights.len() != train.len() {
            return Err(HjError::Config("one weight per training point required".into()));
        }
        let train = PointBlock::new(dict, train)?;
        let test = PointBlock::new(dict, test)?;
        let w = residual_weights(raw_weights, mode)?;
        let degrees = dict.degrees();
        let active: Vec<usize> = (0..dict.len()).filter(|&j| !anchor_origin || degrees[j] >= 2).collect();
        let wa = DMatrix::from_fn(train.len(), active.len(), |i, j| w[i] * train.a[(i, active[j])]);
        let design = WeightedDesign::new(wa)?;
        Ok(Self {
            train,
            test,
            w,
            design,
            active,
            degrees,
        })
    }

    /// Initial reweighting diagonal `1 + deg(Φ_j)` over the free columns.
    pub fn initial_l1_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.active.len(), self.active.iter().map(|&j| 1.0 + self.degrees[j] as f64))
    }

    /// Full-length coefficient vector from a solution over the free columns.
    pub fn expand(&self, free: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.degrees.len());
        for (v, &j) in free.iter().zip(&self.active) {
            out[j] = *v;
        }
        out
    }

    /// Assembles `A δc = b` for the step `[t, t + dt]` from coefficients `c`.
    pub fn assemble<'a, M: TrackingModel + ?Sized>(
        &'a self,
        model: &M,
        c: &DVector<f64>,
        t: f64,
        dt: f64,
        k: usize,
    ) -> Result<StepSystem<'a>, HjError> {
        let h = self.train.hamiltonians(model, c, t)?;
        Ok(StepSystem {
            a: &self.train.a,
            b: h * (-dt),
            w: &self.w,
            k,
        })
    }

    fn project_rate(&self, h: &DVector<f64>) -> Result<DVector<f64>, HjError> {
        Ok(self.expand(&self.design.ls.solve(&(-h).component_mul(&self.w))?))
    }

    fn nnz_by_order(&self, dc: &DVector<f64>, max_degree: u32) -> Vec<usize> {
        let mut out = vec![0; max_degree as usize + 1];
        for (v, &d) in dc.iter().zip(&self.degrees) {
            if v.abs() > NNZ_THRESHOLD {
                out[d as usize] += 1;
            }
        }
        out
    }
}

/// Coefficients smaller than this count as zero in density statistics.
pub const NNZ_THRESHOLD: f64 = 1e-10;

/// One collocated step: `A` has row `i` equal to `Φ(ζ_i)ᵀ`, `b_i = −H_i dt`.
#[derive(Debug, Clone)]
pub struct StepSystem<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: DVector<f64>,
    pub w: &'a DVector<f64>,
    pub k: usize,
}

impl StepSystem<'_> {
    pub fn weighted_b(&self) -> DVector<f64> {
        self.b.component_mul(self.w)
    }
}

/// Per-step statistics of the collocation residual `r = A δc − b`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Time at the end of the step.
    pub t: f64,
    pub dt: f64,
    pub train_median: f64,
    pub train_max: f64,
    /// `‖W r‖₂` over the training points.
    pub train_weighted: f64,
    pub test_median: f64,
    pub test_max: f64,
    pub nnz: usize,
    pub nnz_l2: usize,
    pub nnz_by_order: Vec<usize>,
    pub reweight_iterations: usize,
    pub reweight_converged: bool,
    /// Number of halvings that produced this sub-step.
    pub halvings: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub scheme: String,
    pub n_train: usize,
    pub n_test: usize,
    pub degree: u32,
    pub m: usize,
    pub config: SolverConfig,
}

#[derive(Debug)]
pub struct GfSolution {
    pub timeline: CoefficientTimeline,
    pub steps: Vec<StepRecord>,
    pub provenance: Provenance,
    /// Step failure that stopped the march, if any.
    pub error: Option<HjError>,
}

impl GfSolution {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn abs_stats(r: &DVector<f64>) -> (f64, f64) {
    let mut a: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let max = a.iter().cloned().fold(0.0, f64::max);
    (median(&mut a), max)
}

struct Increment {
    dc: DVector<f64>,
    b_train: DVector<f64>,
    b_test: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// Computes one increment over `[t, t + dt]` without committing it.
fn increment<M: TrackingModel + ?Sized>(
    model: &M,
    col: &Collocation,
    c: &DVector<f64>,
    t: f64,
    dt: f64,
    k: usize,
    cfg: &SolverConfig,
) -> Result<Increment, HjError> {
    let (b_train, b_test) = match cfg.marching {
        Marching::Euler => {
            let sys = col.assemble(model, c, t, dt, k)?;
            let bt = col.test.hamiltonians(model, c, t)? * (-dt);
            (sys.b, bt)
        }
        Marching::Rk4 => {
            let h1 = col.train.hamiltonians(model, c, t)?;
            let k1 = col.project_rate(&h1)?;
            let c2 = c + &k1 * (0.5 * dt);
            let h2 = col.train.hamiltonians(model, &c2, t + 0.5 * dt)?;
            let k2 = col.project_rate(&h2)?;
            let c3 = c + &k2 * (0.5 * dt);
            let h3 = col.train.hamiltonians(model, &c3, t + 0.5 * dt)?;
            let k3 = col.project_rate(&h3)?;
            let c4 = c + &k3 * dt;
            let h4 = col.train.hamiltonians(model, &c4, t + dt)?;
            let hbar = (h1 + (h2 + h3) * 2.0 + h4) / 6.0;
            let g1 = col.test.hamiltonians(model, c, t)?;
            let g2 = col.test.hamiltonians(model, &c2, t + 0.5 * dt)?;
            let g3 = col.test.hamiltonians(model, &c3, t + 0.5 * dt)?;
            let g4 = col.test.hamiltonians(model, &c4, t + dt)?;
            let gbar = (g1 + (g2 + g3) * 2.0 + g4) / 6.0;
            (hbar * (-dt), gbar * (-dt))
        }
    };
    let wb = b_train.component_mul(&col.w);
    match cfg.mode {
        SolverMode::L2 => Ok(Increment {
            dc: col.expand(&col.design.ls.solve(&wb)?),
            b_train,
            b_test,
            iterations: 0,
            converged: true,
        }),
        SolverMode::L1 => {
            let out = solve_weighted_l1(&col.design, &wb, &col.initial_l1_weights(), &cfg.l1_options())?;
            Ok(Increment {
                dc: col.expand(&out.x),
                b_train,
                b_test,
                iterations: out.iterations,
                converged: out.converged,
            })
        }
    }
}

/// Marches `c` from the identity at `model.t0()` to `model.tf()`.
///
/// `train` and `test` hold physical `ζ = (δx, δλ0)` points. Configuration
/// errors are returned as `Err`; a failing step stops the march and is
/// reported in [`GfSolution::error`] alongside the valid prefix.
pub fn time_march<M: TrackingModel + ?Sized>(
    model: &M,
    dict: &BasisDictionary,
    train: &[Vec<f64>],
    raw_weights: &[f64],
    test: &[Vec<f64>],
    scheme: &str,
    cfg: &SolverConfig,
) -> Result<GfSolution, HjError> {
    cfg.validate()?;
    let col = Collocation::new(dict, train, raw_weights, test, cfg.weight_mode, cfg.anchor_origin)?;
    march_with(model, dict, &col, scheme, cfg)
}

/// [`time_march`] over a prebuilt [`Collocation`].
pub fn march_with<M: TrackingModel + ?Sized>(
    model: &M,
    dict: &BasisDictionary,
    col: &Collocation,
    scheme: &str,
    cfg: &SolverConfig,
) -> Result<GfSolution, HjError> {
    cfg.validate()?;
    let (t0, tf) = (model.t0(), model.tf());
    if !(tf >= t0) {
        return Err(HjError::Config(format!("horizon [{t0}, {tf}] is reversed")));
    }
    let c0 = dict.identity_coefficients()?;
    let mut timeline = CoefficientTimeline::new(dict.clone(), t0, c0);
    let provenance = Provenance {
        scheme: scheme.to_string(),
        n_train: col.train.len(),
        n_test: col.test.len(),
        degree: dict.degree(),
        m: dict.len(),
        config: cfg.clone(),
    };
    let mut steps = Vec::new();
    let span = tf - t0;
    let n_steps = if span == 0.0 {
        0
    } else {
        let dt = cfg.dt.unwrap_or(span / 500.0);
        ((span / dt) - 1e-9).ceil().max(1.0) as usize
    };
    let mut error = None;
    'outer: for k in 0..n_steps {
        let ta = t0 + span * k as f64 / n_steps as f64;
        let tb = if k + 1 == n_steps {
            tf
        } else {
            t0 + span * (k + 1) as f64 / n_steps as f64
        };
        // sub-steps of [ta, tb] at 2^-level resolution; retried finer on an
        // infeasible residual bound
        let mut level = 0u32;
        loop {
            let pieces = 1usize << level;
            let c_start = timeline.last().1.clone();
            let saved = timeline.len();
            let mut pending = Vec::new();
            let mut c = c_start;
            let mut failed = None;
            for p in 0..pieces {
                let sa = ta + (tb - ta) * p as f64 / pieces as f64;
                let sb = if p + 1 == pieces {
                    tb
                } else {
                    ta + (tb - ta) * (p + 1) as f64 / pieces as f64
                };
                match increment(model, col, &c, sa, sb - sa, k, cfg) {
                    Ok(inc) => {
                        let r_train = &col.train.a * &inc.dc - &inc.b_train;
                        let r_test = &col.test.a * &inc.dc - &inc.b_test;
                        let (train_median, train_max) = abs_stats(&r_train);
                        let (test_median, test_max) = abs_stats(&r_test);
                        let nnz_by_order = col.nnz_by_order(&inc.dc, dict.degree());
                        let l2 = col.design.ls.solve(&inc.b_train.component_mul(&col.w))?;
                        let rec = StepRecord {
                            step: k,
                            t: sb,
                            dt: sb - sa,
                            train_median,
                            train_max,
                            train_weighted: r_train.component_mul(&col.w).norm(),
                            test_median,
                            test_max,
                            nnz: nnz_by_order.iter().sum(),
                            nnz_l2: l2.iter().filter(|v| v.abs() > NNZ_THRESHOLD).count(),
                            nnz_by_order,
                            reweight_iterations: inc.iterations,
                            reweight_converged: inc.converged,
                            halvings: level,
                        };
                        c += &inc.dc;
                        if c.iter().any(|v| !v.is_finite()) {
                            failed = Some(HjError::NonFinite("marched coefficients".into()));
                            break;
                        }
                        pending.push((sb, c.clone(), rec));
                    }
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            match failed {
                None => {
                    for (t, c, rec) in pending {
                        timeline.push(t, c);
                        steps.push(rec);
                    }
                    break;
                }
                Some(HjError::Infeasible { .. }) if level < cfg.max_halvings => {
                    debug_assert_eq!(timeline.len(), saved);
                    level += 1;
                }
                Some(e) => {
                    let t = ta;
                    timeline.failure = Some(format!("step {k} at t = {t}: {e}"));
                    error = Some(HjError::Step {
                        step: k,
                        t,
                        source: Box::new(e),
                    });
                    break 'outer;
                }
            }
        }
    }
    Ok(GfSolution {
        timeline,
        steps,
        provenance,
        error,
    })
}

/// Row per marched (sub-)step of the residual and density summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub max_degree: u32,
    pub rows: Vec<StepRecord>,
}

pub fn residual_report(gf: &GfSolution) -> ResidualReport {
    ResidualReport {
        max_degree: gf.provenance.degree,
        rows: gf.steps.clone(),
    }
}

impl ResidualReport {
    /// `step,time,train_median,train_max,train_weighted,test_median,test_max,nnz,nnz_l2,nnz_o0..`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "step,time,train_median,train_max,train_weighted,test_median,test_max,nnz,nnz_l2")?;
        for d in 0..=self.max_degree {
            write!(out, ",nnz_o{d}")?;
        }
        writeln!(out, ",reweight_iterations,reweight_converged,halvings")?;
        for r in &self.rows {
            write!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.step, r.t, r.train_median, r.train_max, r.train_weighted, r.test_median, r.test_max, r.nnz, r.nnz_l2
            )?;
            for n in &r.nnz_by_order {
                write!(out, ",{n}")?;
            }
            writeln!(out, ",{},{},{}", r.reweight_iterations, r.reweight_converged, r.halvings)?;
        }
        Ok(())
    }

    /// Long-format density table `step,time,order,nnz`.
    pub fn write_density_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,time,order,nnz")?;
        for r in &self.rows {
            for (d, n) in r.nnz_by_order.iter().enumerate() {
                writeln!(out, "{},{:e},{d},{n}", r.step, r.t)?;
            }
        }
        Ok(())
    }
}

/// Dictionary coefficients of the quadratic form `½ ζᵀKζ`.
pub fn quadratic_coefficients(dict: &BasisDictionary, k: &DMatrix<f64>) -> Result<DVector<f64>, HjError> {
    let n = dict.n_vars();
    if k.shape() != (n, n) || dict.degree() < 2 {
        return Err(HjError::Config("quadratic form does not fit the dictionary".into()));
    }
    let h = dict.scale();
    let mut c = DVector::zeros(dict.len());
    for i in 0..n {
        for j in i..n {
            let mut alpha = vec![0u8; n];
            alpha[i] += 1;
            alpha[j] += 1;
            let idx = dict.index_of(&alpha).expect("quadratic monomial present");
            c[idx] = if i == j {
                0.5 * k[(i, i)] * h[i] * h[i]
            } else {
                0.5 * (k[(i, j)] + k[(j, i)]) * h[i] * h[j]
            };
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_dictionary;
    use crate::hamiltonian::DoubleIntegrator;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lhs_like(n: usize, half: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| half.iter().map(|h| h * rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// `[[S, M], [Mᵀ, N]]` of the linear problem from `exp(Z t)`.
    fn lti_quadratic(a: &Matrix4<f64>, q: &Matrix4<f64>, g: &Matrix4<f64>, t: f64) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(8, 8);
        z.view_mut((0, 0), (4, 4)).copy_from(a);
        z.view_mut((0, 4), (4, 4)).copy_from(&(-g));
        z.view_mut((4, 0), (4, 4)).copy_from(&(-q));
        z.view_mut((4, 4), (4, 4)).copy_from(&(-a.transpose()));
        let phi = (z * t).exp();
        let pxx = phi.view((0, 0), (4, 4)).into_owned();
        let pxl = phi.view((0, 4), (4, 4)).into_owned();
        let plx = phi.view((4, 0), (4, 4)).into_owned();
        let pxx_inv = pxx.try_inverse().unwrap();
        let s = &plx * &pxx_inv;
        let m = pxx_inv.transpose();
        let nn = -(&pxx_inv * pxl);
        let mut k = DMatrix::zeros(8, 8);
        k.view_mut((0, 0), (4, 4)).copy_from(&s);
        k.view_mut((0, 4), (4, 4)).copy_from(&m);
        k.view_mut((4, 0), (4, 4)).copy_from(&m.transpose());
        k.view_mut((4, 4), (4, 4)).copy_from(&nn);
        k
    }

    #[test]
    fn zero_horizon_keeps_identity() {
        let dict = build_dictionary(8, 2).unwrap();
        let model = DoubleIntegrator::new(0.0);
        let pts = lhs_like(60, &[1.0; 8], 1);
        let gf = time_march(&model, &dict, &pts, &vec![1.0; 60], &[], "mc", &SolverConfig::default()).unwrap();
        assert_eq!(gf.timeline.len(), 1);
        assert!(gf.steps.is_empty());
        assert_eq!(gf.timeline.coeffs[0], dict.identity_coefficients().unwrap());
        let rep = residual_report(&gf);
        assert!(rep.rows.is_empty());
    }

    #[test]
    fn identity_rhs_at_zero_state_deviation() {
        let dict = build_dictionary(8, 2).unwrap();
        let model = DoubleIntegrator::new(1.0);
        let mut pts = lhs_like(5, &[1.0; 8], 2);
        for p in pts.iter_mut() {
            p[..4].fill(0.0);
        }
        pts.push(vec![0.0; 8]);
        let col = Collocation::new(&dict, &pts, &vec![1.0; pts.len()], &[], WeightMode::Identity, false).unwrap();
        let c0 = dict.identity_coefficients().unwrap();
        let dt = 0.01;
        let sys = col.assemble(&model, &c0, 0.0, dt, 0).unwrap();
        assert_eq!(sys.a.shape(), (pts.len(), dict.len()));
        for (i, p) in pts.iter().enumerate() {
            let expect = 0.5 * (p[6] * p[6] + p[7] * p[7]) * dt;
            assert!((sys.b[i] - expect).abs() < 1e-15, "{} vs {}", sys.b[i], expect);
        }
        assert_eq!(sys.b[pts.len() - 1], 0.0);
    }

    #[test]
    fn weight_modes() {
        let raw = [1.0, 3.0];
        assert_eq!(residual_weights(&raw, WeightMode::UnitTrace).unwrap().as_slice(), &[0.25, 0.75]);
        assert_eq!(residual_weights(&raw, WeightMode::MeanOne).unwrap().as_slice(), &[0.5, 1.5]);
        assert_eq!(residual_weights(&raw, WeightMode::Identity).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(residual_weights(&[1.0, -1.0], WeightMode::MeanOne).is_err());
    }

    #[test]
    fn quadratic_coefficients_reproduce_form() {
        let dict = build_dictionary(8, 3).unwrap().with_half_widths(&[0.3, 0.5, 2.0, 1.0, 0.1, 0.2, 0.7, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let k = &b + b.transpose();
        let c = quadratic_coefficients(&dict, &k).unwrap();
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-0.1..0.1)).collect();
        let zv = DVector::from_column_slice(&z);
        let direct = 0.5 * zv.dot(&(&k * &zv));
        assert!((dict.value(&z, &c) - direct).abs() < 1e-14);
    }

    #[test]
    fn lti_march_matches_transition_matrix() {
        let dict = build_dictionary(8, 2).unwrap();
        let model = DoubleIntegrator::new(1.0);
        let pts = lhs_like(120, &[1.0; 8], 3);
        let test = lhs_like(20, &[1.0; 8], 4);
        let cfg = SolverConfig {
            dt: Some(1e-3),
            mode: SolverMode::L2,
            marching: Marching::Rk4,
            ..SolverConfig::default()
        };
        let gf = time_march(&model, &dict, &pts, &vec![1.0; 120], &test, "mc", &cfg).unwrap();
        assert!(gf.is_complete());
        assert_eq!(gf.steps.len(), 1000);
        assert_eq!(gf.timeline.len(), gf.steps.len() + 1);
        let k = lti_quadratic(&DoubleIntegrator::a(), &Matrix4::identity(), &model.g(), 1.0);
        let oracle = quadratic_coefficients(&dict, &k).unwrap();
        let err = (gf.timeline.last().1 - oracle).amax();
        assert!(err < 1e-6, "max coefficient error {err:e}");
    }

    #[test]
    fn euler_march_is_first_order_on_lti() {
        let dict = build_dictionary(8, 2).unwrap();
        let model = DoubleIntegrator::new(0.5);
        let pts = lhs_like(80, &[1.0; 8], 6);
        let k = lti_quadratic(&DoubleIntegrator::a(), &Matrix4::identity(), &model.g(), 0.5);
        let oracle = quadratic_coefficients(&dict, &k).unwrap();
        let err = |dt: f64| {
            let cfg = SolverConfig {
                dt: Some(dt),
                mode: SolverMode::L2,
                ..SolverConfig::default()
            };
            let gf = time_march(&model, &dict, &pts, &vec![1.0; 80], &[], "mc", &cfg).unwrap();
            (gf.timeline.last().1 - &oracle).amax()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn report_csv_shapes() {
        let dict = build_dictionary(8, 2).unwrap();
        let model = DoubleIntegrator::new(0.05);
        let pts = lhs_like(60, &[0.01; 8], 7);
        let test = lhs_like(10, &[0.01; 8], 8);
        let cfg = SolverConfig {
            dt: Some(0.01),
            epsilon: 1e-9,
            ..SolverConfig::default()
        };
        let gf = time_march(&model, &dict, &pts, &vec![1.0; 60], &test, "mc", &cfg).unwrap();
        assert!(gf.is_complete(), "{:?}", gf.error);
        for r in &gf.steps {
            assert!(r.train_weighted <= cfg.epsilon * (1.0 + 1e-12));
            assert_eq!(r.nnz_by_order.iter().sum::<usize>(), r.nnz);
        }
        let rep = residual_report(&gf);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), gf.steps.len() + 1);
        let mut dens = Vec::new();
        rep.write_density_csv(&mut dens).unwrap();
        assert_eq!(String::from_utf8(dens).unwrap().lines().count(), 1 + 3 * gf.steps.len());
    }

    #[test]
    fn pcr3bp_reduced_run_meets_step_contract() {
        use crate::dynamics::CostWeights;
        use crate::hamiltonian::Pcr3bpTracking;
        use crate::nominal::{solve_nominal, BvpConfig};
        use crate::points::{generate_points, scale_to_domain, test_points, DomainBox, PointRequest, Scheme};
        use crate::scenario;
        use crate::units::SystemParams;

        let p = SystemParams::default();
        let w = CostWeights::default();
        let (x0, xf) = scenario::boundary_states();
        let tf = p.days_to_tu(scenario::TF_DAYS);
        let (nominal, _) = solve_nominal(&x0, &xf, tf, &BvpConfig::default(), &p, &w).unwrap();
        let half = scenario::domain_half_widths(&p);
        let bx = DomainBox::symmetric(&half).unwrap();
        let dict = build_dictionary(8, 2).unwrap().with_half_widths(&half).unwrap();
        let mut req = PointRequest::new(8, Scheme::Lhs);
        req.target_n = Some(300);
        req.seed = 11;
        let ps = generate_points(&req).unwrap();
        let train = scale_to_domain(&ps, &bx);
        let test = test_points(&bx, 100, 12, &train);
        let model = Pcr3bpTracking::new(&nominal, w, p);
        let cfg = SolverConfig {
            dt: Some(tf / 200.0),
            ..SolverConfig::default()
        };
        let gf = time_march(&model, &dict, &train, &ps.weights, &test, "lhs", &cfg).unwrap();
        assert!(gf.is_complete(), "{:?}", gf.error);
        assert_eq!(*gf.timeline.times.last().unwrap(), tf);
        assert_eq!(gf.timeline.len(), gf.steps.len() + 1);
        for r in &gf.steps {
            assert!(r.train_weighted <= cfg.epsilon, "step {}: {:e}", r.step, r.train_weighted);
            assert!(r.nnz <= r.nnz_l2, "step {}: {} > {}", r.step, r.nnz, r.nnz_l2);
        }
        // marching actually moved away from the identity
        let c0 = dict.identity_coefficients().unwrap();
        assert!((gf.timeline.last().1 - c0).amax() > 0.0);

        let low: Vec<usize> = (0..dict.len()).filter(|&j| dict.degrees()[j] < 2).collect();
        assert_eq!(low.len(), 9);
        assert!(low.iter().all(|&j| gf.timeline.last().1[j] == 0.0));
        let free = SolverConfig {
            mode: SolverMode::L2,
            anchor_origin: false,
            ..cfg
        };
        let gf = time_march(&model, &dict, &train, &ps.weights, &test, "lhs", &free).unwrap();
        let drift = low.iter().map(|&j| gf.timeline.last().1[j].abs()).fold(0.0, f64::max);
        assert!(drift > 0.0, "unanchored fit kept the low-order terms at zero");
    }
}
