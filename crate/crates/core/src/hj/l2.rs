//! Weighted least squares through a truncated SVD pseudo-inverse.

use nalgebra::{DMatrix, DVector};

use super::HjError;

/// Minimum-norm least-squares operator for a fixed weighted matrix `WA`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pinv: DMatrix<f64>,
    rank: usize,
}

impl LeastSquares {
    /// Factorizes `wa`; singular values below `rcond · σ_max` are dropped.
    pub fn new(wa: &DMatrix<f64>, rcond: f64) -> Result<Self, HjError> {
        if wa.iter().any(|v| !v.is_finite()) {
            return Err(HjError::NonFinite("least-squares matrix".into()));
        }
        let (n, m) = wa.shape();
        if n == 0 || m == 0 {
            return Ok(Self {
                pinv: DMatrix::zeros(m, n),
                rank: 0,
            });
        }
        let svd = wa.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let cut = rcond * smax;
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let k = svd.singular_values.len();
        let mut pinv = DMatrix::zeros(m, n);
        let mut rank = 0;
        for i in 0..k {
            let s = svd.singular_values[i];
            if s > cut && s > 0.0 {
                rank += 1;
                let vi = vt.row(i).transpose();
                pinv.ger(1.0 / s, &vi, &u.column(i), 1.0);
            }
        }
        Ok(Self { pinv, rank })
    }

    pub(crate) fn from_pinv(pinv: DMatrix<f64>, rank: usize) -> Self {
        Self { pinv, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `argmin ‖WAx − Wb‖₂` of minimum norm, given the weighted right-hand side.
    pub fn solve(&self, wb: &DVector<f64>) -> Result<DVector<f64>, HjError> {
        if wb.iter().any(|v| !v.is_finite()) {
            return Err(HjError::NonFinite("least-squares right-hand side".into()));
        }
        Ok(&self.pinv * wb)
    }
}

/// One-shot weighted solve of `min ‖W(Ax − b)‖₂` with diagonal `w`.
pub fn solve_l2(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>, HjError> {
    let wa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| w[i] * a[(i, j)]);
    let wb = b.component_mul(w);
    LeastSquares::new(&wa, 1e-13)?.solve(&wb)
}
