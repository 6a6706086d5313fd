//! Control-eliminated tracking Hamiltonians for perturbations about a
//! reference trajectory.

use nalgebra::{Matrix4, Vector2, Vector4};
use thiserror::Error;

use crate::dynamics::{control_matrix, drift, drift_jacobian, pcr3bp_rhs, CostWeights, DynamicsError};
use crate::nominal::{NominalError, NominalTrajectory};
use crate::units::SystemParams;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nominal(#[from] NominalError),
}

/// A perturbation model `H(δx, δλ, t)` with the optimal control deviation
/// already substituted.
pub trait TrackingModel: Sync {
    fn t0(&self) -> f64;
    fn tf(&self) -> f64;

    fn hamiltonian(&self, dx: &Vector4<f64>, dl: &Vector4<f64>, t: f64) -> Result<f64, ModelError>;

    /// Uncontrolled-plus-control deviation dynamics `δẋ` for a given control deviation.
    fn deviation_rhs(&self, dx: &Vector4<f64>, du: &Vector2<f64>, t: f64) -> Result<Vector4<f64>, ModelError>;

    /// Canonical equations `(δẋ, δλ̇) = (∂H/∂δλ, −∂H/∂δx)`.
    fn canonical_rhs(
        &self,
        dx: &Vector4<f64>,
        dl: &Vector4<f64>,
        t: f64,
    ) -> Result<(Vector4<f64>, Vector4<f64>), ModelError>;

    fn weights(&self) -> &CostWeights;

    /// `δu* = −R⁻¹Bᵀδλ`.
    fn control_deviation(&self, dl: &Vector4<f64>) -> Vector2<f64> {
        self.weights().optimal_control(dl)
    }
}

/// A tracking model whose reference can also be integrated in absolute
/// coordinates.
pub trait AbsoluteModel: TrackingModel {
    /// Reference state and control at `t`.
    fn reference(&self, t: f64) -> Result<(Vector4<f64>, Vector2<f64>), ModelError>;

    /// Full dynamics `ẋ` at absolute state `x` under `u_ref(t) + du`.
    fn absolute_rhs(&self, x: &Vector4<f64>, du: &Vector2<f64>, t: f64) -> Result<Vector4<f64>, ModelError>;
}

/// Perturbation model about a PCR3BP nominal using the full nonlinear drift
/// difference.
#[derive(Debug, Clone)]
pub struct Pcr3bpTracking<'a> {
    pub nominal: &'a NominalTrajectory,
    pub weights: CostWeights,
    pub params: SystemParams,
    g: Matrix4<f64>,
}

impl<'a> Pcr3bpTracking<'a> {
    pub fn new(nominal: &'a NominalTrajectory, weights: CostWeights, params: SystemParams) -> Self {
        let g = weights.control_gramian();
        Self {
            nominal,
            weights,
            params,
            g,
        }
    }
}

/// `½δxᵀQδx + δλᵀ(f(x_N+δx) − f(x_N)) − ½δλᵀBR⁻¹Bᵀδλ` at time `t`.
pub fn tracking_hamiltonian(
    dx: &Vector4<f64>,
    dl: &Vector4<f64>,
    t: f64,
    nominal: &NominalTrajectory,
    w: &CostWeights,
    p: &SystemParams,
) -> Result<f64, ModelError> {
    Pcr3bpTracking::new(nominal, w.clone(), *p).hamiltonian(dx, dl, t)
}

impl TrackingModel for Pcr3bpTracking<'_> {
    fn t0(&self) -> f64 {
        self.nominal.t0()
    }

    fn tf(&self) -> f64 {
        self.nominal.tf
    }

    fn hamiltonian(&self, dx: &Vector4<f64>, dl: &Vector4<f64>, t: f64) -> Result<f64, ModelError> {
        let xn = self.nominal.state_at(t)?;
        let df = drift(&(xn + dx), &self.params)? - drift(&xn, &self.params)?;
        Ok(0.5 * dx.dot(&(self.weights.q * dx)) + dl.dot(&df) - 0.5 * dl.dot(&(self.g * dl)))
    }

    fn deviation_rhs(&self, dx: &Vector4<f64>, du: &Vector2<f64>, t: f64) -> Result<Vector4<f64>, ModelError> {
        let xn = self.nominal.state_at(t)?;
        let mut d = drift(&(xn + dx), &self.params)? - drift(&xn, &self.params)?;
        d[2] += du.x;
        d[3] += du.y;
        Ok(d)
    }

    fn canonical_rhs(
        &self,
        dx: &Vector4<f64>,
        dl: &Vector4<f64>,
        t: f64,
    ) -> Result<(Vector4<f64>, Vector4<f64>), ModelError> {
        let xn = self.nominal.state_at(t)?;
        let x = xn + dx;
        let dxd = drift(&x, &self.params)? - drift(&xn, &self.params)? - self.g * dl;
        let a = drift_jacobian(&x, &self.params)?;
        let dld = -(self.weights.q * dx) - a.transpose() * dl;
        Ok((dxd, dld))
    }

    fn weights(&self) -> &CostWeights {
        &self.weights
    }
}

impl AbsoluteModel for Pcr3bpTracking<'_> {
    fn reference(&self, t: f64) -> Result<(Vector4<f64>, Vector2<f64>), ModelError> {
        let (x, u, _) = self.nominal.sample(t, &self.weights)?;
        Ok((x, u))
    }

    fn absolute_rhs(&self, x: &Vector4<f64>, du: &Vector2<f64>, t: f64) -> Result<Vector4<f64>, ModelError> {
        let (_, u, _) = self.nominal.sample(t, &self.weights)?;
        Ok(pcr3bp_rhs(x, &(u + du), &self.params)?)
    }
}

/// Planar double integrator `ẍ = u`, a linear time-invariant stand-in whose
/// generating function is known in closed form.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    pub weights: CostWeights,
    pub tf: f64,
}

impl DoubleIntegrator {
    pub fn new(tf: f64) -> Self {
        Self {
            weights: CostWeights::default(),
            tf,
        }
    }

    pub fn a() -> Matrix4<f64> {
        let mut a = Matrix4::zeros();
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a
    }

    pub fn g(&self) -> Matrix4<f64> {
        self.weights.control_gramian()
    }
}

impl TrackingModel for DoubleIntegrator {
    fn t0(&self) -> f64 {
        0.0
    }

    fn tf(&self) -> f64 {
        self.tf
    }

    fn hamiltonian(&self, dx: &Vector4<f64>, dl: &Vector4<f64>, _t: f64) -> Result<f64, ModelError> {
        let q = &self.weights.q;
        Ok(0.5 * dx.dot(&(q * dx)) + dl.dot(&(Self::a() * dx)) - 0.5 * dl.dot(&(self.g() * dl)))
    }

    fn deviation_rhs(&self, dx: &Vector4<f64>, du: &Vector2<f64>, _t: f64) -> Result<Vector4<f64>, ModelError> {
        Ok(Self::a() * dx + control_matrix() * du)
    }

    fn canonical_rhs(
        &self,
        dx: &Vector4<f64>,
        dl: &Vector4<f64>,
        _t: f64,
    ) -> Result<(Vector4<f64>, Vector4<f64>), ModelError> {
        let a = Self::a();
        Ok((a * dx - self.g() * dl, -(self.weights.q * dx) - a.transpose() * dl))
    }

    fn weights(&self) -> &CostWeights {
        &self.weights
    }
}

impl AbsoluteModel for DoubleIntegrator {
    fn reference(&self, _t: f64) -> Result<(Vector4<f64>, Vector2<f64>), ModelError> {
        Ok((Vector4::zeros(), Vector2::zeros()))
    }

    fn absolute_rhs(&self, x: &Vector4<f64>, du: &Vector2<f64>, t: f64) -> Result<Vector4<f64>, ModelError> {
        self.deviation_rhs(x, du, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal::{solve_nominal, BvpConfig};

    fn short_nominal() -> NominalTrajectory {
        let p = SystemParams::default();
        let x0 = Vector4::new(0.810796, -0.158270, -0.129473, 0.319169);
        let xf = Vector4::new(1.175974, -0.134272, -0.153277, -0.295254);
        let cfg = BvpConfig {
            nodes: 201,
            ..BvpConfig::default()
        };
        solve_nominal(&x0, &xf, p.days_to_tu(5.0), &cfg, &p, &CostWeights::default())
            .unwrap()
            .0
    }

    #[test]
    fn on_nominal_and_costate_free_values() {
        let nom = short_nominal();
        let p = SystemParams::default();
        let w = CostWeights::default();
        let z = Vector4::zeros();
        assert_eq!(tracking_hamiltonian(&z, &z, 0.3, &nom, &w, &p).unwrap(), 0.0);
        let dx = Vector4::new(1e-4, -2e-4, 3e-3, 1e-3);
        let h = tracking_hamiltonian(&dx, &z, 0.3, &nom, &w, &p).unwrap();
        assert_eq!(h, 0.5 * dx.dot(&dx));
    }

    fn check_canonical(model: &dyn TrackingModel, dx: Vector4<f64>, dl: Vector4<f64>, t: f64) {
        let (xd, ld) = model.canonical_rhs(&dx, &dl, t).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut lp = dl;
            let mut lm = dl;
            lp[i] += h;
            lm[i] -= h;
            let fd = (model.hamiltonian(&dx, &lp, t).unwrap() - model.hamiltonian(&dx, &lm, t).unwrap()) / (2.0 * h);
            assert!((fd - xd[i]).abs() <= 1e-6 * xd[i].abs().max(1e-3), "dH/dl{i}: {fd} vs {}", xd[i]);
            let mut xp = dx;
            let mut xm = dx;
            xp[i] += h;
            xm[i] -= h;
            let fd = (model.hamiltonian(&xp, &dl, t).unwrap() - model.hamiltonian(&xm, &dl, t).unwrap()) / (2.0 * h);
            assert!((fd + ld[i]).abs() <= 1e-6 * ld[i].abs().max(1e-3), "dH/dx{i}: {fd} vs {}", -ld[i]);
        }
    }

    #[test]
    fn canonical_equations_match_differences() {
        let nom = short_nominal();
        let model = Pcr3bpTracking::new(&nom, CostWeights::default(), SystemParams::default());
        check_canonical(
            &model,
            Vector4::new(2e-3, -1e-3, 4e-3, 2e-3),
            Vector4::new(0.02, -0.03, 0.005, 0.004),
            0.47,
        );
        let di = DoubleIntegrator::new(1.0);
        check_canonical(&di, Vector4::new(0.3, -0.2, 0.1, 0.5), Vector4::new(-0.4, 0.1, 0.2, 0.3), 0.2);
    }

    #[test]
    fn canonical_state_rate_matches_deviation_rhs() {
        let nom = short_nominal();
        let model = Pcr3bpTracking::new(&nom, CostWeights::default(), SystemParams::default());
        let dx = Vector4::new(1e-4, 2e-4, -1e-3, 5e-4);
        let dl = Vector4::new(0.01, 0.02, -0.003, 0.001);
        let (xd, _) = model.canonical_rhs(&dx, &dl, 0.8).unwrap();
        let d = model.deviation_rhs(&dx, &model.control_deviation(&dl), 0.8).unwrap();
        assert!((xd - d).norm() < 1e-15);
    }

    #[test]
    fn outside_nominal_span_errors() {
        let nom = short_nominal();
        let model = Pcr3bpTracking::new(&nom, CostWeights::default(), SystemParams::default());
        let z = Vector4::zeros();
        assert!(model.hamiltonian(&z, &z, nom.tf + 0.1).is_err());
    }
}
