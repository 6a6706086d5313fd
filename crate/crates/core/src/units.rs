//! Normalized Earth-Moon rotating-frame units.
//!
//! Lengths are in units of the primaries' separation, times in units of
//! the inverse mean motion. Conversions only need the two scale constants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth-Moon mean distance in km.
pub const EARTH_MOON_LU_KM: f64 = 384_400.0;
/// Earth-Moon time unit (inverse mean motion) in seconds.
pub const EARTH_MOON_TU_S: f64 = 375_190.0;
/// Mass ratio used for the L1-to-L2 transfer scenario.
pub const EARTH_MOON_MU: f64 = 0.0122;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum UnitsError {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),
    #[error("unknown quantity kind `{0}`")]
    UnknownKind(String),
}

/// Mass ratio and unit scales of a circular restricted three-body system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub mu: f64,
    pub lu_km: f64,
    pub tu_s: f64,
    /// Distances to a primary below this value are treated as collisions.
    #[serde(default = "default_r_floor")]
    pub r_floor: f64,
}

fn default_r_floor() -> f64 {
    1e-12
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            mu: EARTH_MOON_MU,
            lu_km: EARTH_MOON_LU_KM,
            tu_s: EARTH_MOON_TU_S,
            r_floor: default_r_floor(),
        }
    }
}

impl SystemParams {
    pub fn new(mu: f64, lu_km: f64, tu_s: f64) -> Result<Self, UnitsError> {
        let p = Self {
            mu,
            lu_km,
            tu_s,
            r_floor: default_r_floor(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), UnitsError> {
        if !(self.mu > 0.0 && self.mu < 0.5) {
            return Err(UnitsError::InvalidParams(format!(
                "mu must lie in (0, 0.5), got {}",
                self.mu
            )));
        }
        if !(self.lu_km > 0.0 && self.lu_km.is_finite()) {
            return Err(UnitsError::InvalidParams("lu_km must be positive".into()));
        }
        if !(self.tu_s > 0.0 && self.tu_s.is_finite()) {
            return Err(UnitsError::InvalidParams("tu_s must be positive".into()));
        }
        if !(self.r_floor > 0.0) {
            return Err(UnitsError::InvalidParams("r_floor must be positive".into()));
        }
        Ok(())
    }

    /// Velocity unit in m/s.
    pub fn vu_m_per_s(&self) -> f64 {
        1000.0 * self.lu_km / self.tu_s
    }

    pub fn km_to_lu(&self, km: f64) -> f64 {
        convert_units(self, km, QuantityKind::Length, Direction::ToNormalized)
    }

    pub fn mps_to_vu(&self, mps: f64) -> f64 {
        convert_units(self, mps, QuantityKind::Velocity, Direction::ToNormalized)
    }

    pub fn days_to_tu(&self, days: f64) -> f64 {
        convert_units(self, days, QuantityKind::Time, Direction::ToNormalized)
    }

    pub fn lu_to_km(&self, lu: f64) -> f64 {
        convert_units(self, lu, QuantityKind::Length, Direction::ToPhysical)
    }

    pub fn vu_to_mps(&self, vu: f64) -> f64 {
        convert_units(self, vu, QuantityKind::Velocity, Direction::ToPhysical)
    }

    pub fn tu_to_days(&self, tu: f64) -> f64 {
        convert_units(self, tu, QuantityKind::Time, Direction::ToPhysical)
    }
}

/// Physical dimension of a converted value: km, m/s or days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantityKind {
    Length,
    Velocity,
    Time,
}

impl std::str::FromStr for QuantityKind {
    type Err = UnitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "length" | "km" => Ok(Self::Length),
            "velocity" | "m_per_s" => Ok(Self::Velocity),
            "time" | "days" => Ok(Self::Time),
            other => Err(UnitsError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToNormalized,
    ToPhysical,
}

/// Converts between physical units (km, m/s, days) and normalized units.
pub fn convert_units(p: &SystemParams, value: f64, kind: QuantityKind, direction: Direction) -> f64 {
    let scale = match kind {
        QuantityKind::Length => p.lu_km,
        QuantityKind::Velocity => p.vu_m_per_s(),
        QuantityKind::Time => p.tu_s / SECONDS_PER_DAY,
    };
    match direction {
        Direction::ToNormalized => value / scale,
        Direction::ToPhysical => value * scale,
    }
}
