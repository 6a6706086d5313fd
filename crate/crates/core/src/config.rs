//! Run configuration read from TOML. Physical quantities carry their unit
//! in the key name; everything is converted to normalized units on load.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{CostWeights, State4};
use crate::hj::{Marching, SolverConfig, SolverMode, WeightMode};
use crate::mpc::{NavDistribution, NavigationModel, SweepGrid};
use crate::nominal::BvpConfig;
use crate::points::{DomainBox, PointRequest, Scheme};
use crate::scenario::Case;
use crate::units::SystemParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("invalid config value `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub system: SystemParams,
    pub transfer: TransferSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub nominal: NominalSection,
    pub domain: DomainSection,
    pub basis: BasisSection,
    pub points: PointsSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub tracking: TrackingSection,
    pub navigation: Option<NavigationSection>,
    pub sweep: Option<SweepSection>,
}

/// Boundary states in normalized units and the horizon in days.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub x0: [f64; 4],
    pub xf: [f64; 4],
    pub tf_days: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 2],
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            q_diag: [1.0; 4],
            r_diag: [1.0; 2],
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NominalSection {
    pub tol: f64,
    pub max_iter: usize,
    pub integrator_tol: f64,
    pub segments: usize,
    pub nodes: usize,
}

impl Default for NominalSection {
    fn default() -> Self {
        let d = BvpConfig::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            integrator_tol: d.integrator_tol,
            segments: d.segments,
            nodes: d.nodes,
        }
    }
}

/// Half-widths of the perturbation box.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub position_km: f64,
    pub velocity_m_per_s: f64,
    /// Initial costate half-widths, normalized.
    pub costate: [f64; 4],
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub degree: u32,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PointsSection {
    pub scheme: String,
    /// Point count for random schemes.
    pub count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
}

fn default_test_count() -> usize {
    100
}

fn default_test_seed() -> u64 {
    1_000_003
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Number of marching steps; absent selects the solver default.
    pub steps: Option<usize>,
    pub epsilon: f64,
    pub eta: f64,
    pub delta_s: f64,
    pub max_reweight: usize,
    pub alpha: f64,
    pub weight_mode: WeightMode,
    pub mode: SolverMode,
    pub marching: Marching,
    pub max_halvings: u32,
    pub anchor_origin: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            steps: None,
            epsilon: d.epsilon,
            eta: d.eta,
            delta_s: d.delta_s,
            max_reweight: d.max_reweight,
            alpha: d.alpha,
            weight_mode: d.weight_mode,
            mode: d.mode,
            marching: d.marching,
            max_halvings: d.max_halvings,
            anchor_origin: d.anchor_origin,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    pub cases: Vec<String>,
    /// Seed for the random initial velocity perturbation.
    pub velocity_seed: u64,
    pub target_position_km: [f64; 2],
    pub target_velocity_m_per_s: [f64; 2],
    pub continue_on_failure: bool,
    pub samples_per_interval: usize,
    pub recovery_tol: f64,
    pub cond_limit: f64,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            cases: Case::ALL.iter().map(|c| c.to_string()).collect(),
            velocity_seed: 0,
            target_position_km: [0.0; 2],
            target_velocity_m_per_s: [0.0; 2],
            continue_on_failure: true,
            samples_per_interval: 4,
            recovery_tol: 1e-10,
            cond_limit: 1e12,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NavigationSection {
    pub position_km: f64,
    pub velocity_m_per_s: f64,
    pub interval_days: f64,
    #[serde(default = "default_distribution")]
    pub distribution: NavDistribution,
    #[serde(default)]
    pub seed: u64,
}

fn default_distribution() -> NavDistribution {
    NavDistribution::Uniform
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub position_km: Vec<f64>,
    pub interval_days: Vec<f64>,
    pub seeds: usize,
    #[serde(default = "default_velocity_error")]
    pub velocity_m_per_s: f64,
    #[serde(default)]
    pub base_seed: u64,
    pub workers: Option<usize>,
}

fn default_velocity_error() -> f64 {
    2.0
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Schema(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate().map_err(|e| invalid("system", e.to_string()))?;
        positive("transfer.tf_days", self.transfer.tf_days)?;
        self.weights()?;
        self.bvp().validate().map_err(|e| invalid("nominal", e.to_string()))?;
        positive("domain.position_km", self.domain.position_km)?;
        positive("domain.velocity_m_per_s", self.domain.velocity_m_per_s)?;
        for &c in &self.domain.costate {
            positive("domain.costate", c)?;
        }
        if self.basis.degree < 2 {
            return Err(invalid(
                "basis.degree",
                format!("identity initialization needs degree >= 2, got {}", self.basis.degree),
            ));
        }
        let scheme = self.scheme()?;
        if scheme.order().is_none() && self.points.count.is_none() {
            return Err(invalid("points.count", format!("required for scheme {scheme}")));
        }
        if self.solver.steps == Some(0) {
            return Err(invalid("solver.steps", "must be positive"));
        }
        self.solver_config().validate().map_err(|e| invalid("solver", e.to_string()))?;
        self.cases()?;
        if self.tracking.samples_per_interval == 0 {
            return Err(invalid("tracking.samples_per_interval", "must be positive"));
        }
        positive("tracking.recovery_tol", self.tracking.recovery_tol)?;
        positive("tracking.cond_limit", self.tracking.cond_limit)?;
        if let Some(n) = &self.navigation {
            non_negative("navigation.position_km", n.position_km)?;
            non_negative("navigation.velocity_m_per_s", n.velocity_m_per_s)?;
            positive("navigation.interval_days", n.interval_days)?;
        }
        if let Some(s) = &self.sweep {
            if s.position_km.is_empty() {
                return Err(invalid("sweep.position_km", "grid is empty"));
            }
            if s.interval_days.is_empty() {
                return Err(invalid("sweep.interval_days", "grid is empty"));
            }
            if s.seeds == 0 {
                return Err(invalid("sweep.seeds", "must be positive"));
            }
            for &v in &s.position_km {
                non_negative("sweep.position_km", v)?;
            }
            for &v in &s.interval_days {
                positive("sweep.interval_days", v)?;
            }
            non_negative("sweep.velocity_m_per_s", s.velocity_m_per_s)?;
            if s.workers == Some(0) {
                return Err(invalid("sweep.workers", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn boundary_states(&self) -> (State4, State4) {
        (
            State4::from_column_slice(&self.transfer.x0),
            State4::from_column_slice(&self.transfer.xf),
        )
    }

    pub fn tf(&self) -> f64 {
        self.system.days_to_tu(self.transfer.tf_days)
    }

    pub fn weights(&self) -> Result<CostWeights, ConfigError> {
        let q = Matrix4::from_diagonal(&Vector4::from_column_slice(&self.cost.q_diag));
        let r = Matrix2::from_diagonal(&Vector2::from_column_slice(&self.cost.r_diag));
        CostWeights::new(q, r).map_err(|e| invalid("cost", e.to_string()))
    }

    pub fn bvp(&self) -> BvpConfig {
        let n = &self.nominal;
        BvpConfig {
            tol: n.tol,
            max_iter: n.max_iter,
            initial_costate: None,
            integrator_tol: n.integrator_tol,
            segments: n.segments,
            nodes: n.nodes,
        }
    }

    /// Normalized half-widths of `(δx, δλ0)`.
    pub fn half_widths(&self) -> [f64; 8] {
        let p = &self.system;
        let r = p.km_to_lu(self.domain.position_km);
        let v = p.mps_to_vu(self.domain.velocity_m_per_s);
        let l = self.domain.costate;
        [r, r, v, v, l[0], l[1], l[2], l[3]]
    }

    pub fn domain_box(&self) -> DomainBox {
        DomainBox::symmetric(&self.half_widths()).expect("validated half-widths")
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        self.points
            .scheme
            .parse()
            .map_err(|e: crate::points::PointsError| invalid("points.scheme", e.to_string()))
    }

    pub fn point_request(&self) -> Result<PointRequest, ConfigError> {
        let mut req = PointRequest::new(8, self.scheme()?);
        req.target_n = self.points.count;
        req.seed = self.points.seed;
        Ok(req)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: s.steps.map(|n| self.tf() / n as f64),
            epsilon: s.epsilon,
            eta: s.eta,
            delta_s: s.delta_s,
            max_reweight: s.max_reweight,
            alpha: s.alpha,
            weight_mode: s.weight_mode,
            mode: s.mode,
            marching: s.marching,
            max_halvings: s.max_halvings,
            anchor_origin: s.anchor_origin,
        }
    }

    pub fn cases(&self) -> Result<Vec<Case>, ConfigError> {
        self.tracking
            .cases
            .iter()
            .map(|c| c.parse().map_err(|e: String| invalid("tracking.cases", e)))
            .collect()
    }

    pub fn target(&self) -> State4 {
        let p = &self.system;
        let t = &self.tracking;
        State4::new(
            p.km_to_lu(t.target_position_km[0]),
            p.km_to_lu(t.target_position_km[1]),
            p.mps_to_vu(t.target_velocity_m_per_s[0]),
            p.mps_to_vu(t.target_velocity_m_per_s[1]),
        )
    }

    pub fn navigation(&self) -> Option<NavigationModel> {
        self.navigation.as_ref().map(|n| NavigationModel {
            position_km: n.position_km,
            velocity_mps: n.velocity_m_per_s,
            interval: self.system.days_to_tu(n.interval_days),
            distribution: n.distribution,
            seed: n.seed,
        })
    }

    /// Sweep grid and the navigation template its cells are built from.
    pub fn sweep(&self) -> Result<(SweepGrid, NavigationModel), ConfigError> {
        let s = self.sweep.as_ref().ok_or_else(|| ConfigError::Schema("missing section `sweep`".into()))?;
        let grid = SweepGrid {
            position_km: s.position_km.clone(),
            intervals: s.interval_days.iter().map(|&d| self.system.days_to_tu(d)).collect(),
            seeds: s.seeds,
            threads: s.workers,
        };
        let distribution = self.navigation.as_ref().map(|n| n.distribution).unwrap_or(NavDistribution::Uniform);
        let base = NavigationModel {
            position_km: 0.0,
            velocity_mps: s.velocity_m_per_s,
            interval: grid.intervals[0],
            distribution,
            seed: s.base_seed,
        };
        Ok((grid, base))
    }
}
