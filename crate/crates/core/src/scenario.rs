//! Reference Earth-Moon transfer scenario and its tracking test cases.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::State4;
use crate::units::SystemParams;

/// Departure state in normalized units.
pub const X0: [f64; 4] = [0.810796, -0.158270, -0.129473, 0.319169];
/// Arrival state in normalized units.
pub const XF: [f64; 4] = [1.175974, -0.134272, -0.153277, -0.295254];
pub const TF_DAYS: f64 = 5.0;

/// Perturbation-domain half-widths: position (km), velocity (m/s), initial
/// costate (normalized).
pub const POSITION_HALF_KM: f64 = 100.0;
pub const VELOCITY_HALF_MPS: f64 = 2.0;
pub const COSTATE_HALF: [f64; 4] = [0.02, 0.03, 0.005, 0.005];

pub fn boundary_states() -> (State4, State4) {
    (State4::from_column_slice(&X0), State4::from_column_slice(&XF))
}

/// Normalized half-widths of the `(δx, δλ0)` box.
pub fn domain_half_widths(p: &SystemParams) -> [f64; 8] {
    let r = p.km_to_lu(POSITION_HALF_KM);
    let v = p.mps_to_vu(VELOCITY_HALF_MPS);
    let l = COSTATE_HALF;
    [r, r, v, v, l[0], l[1], l[2], l[3]]
}

/// Initial position offsets of the four tracking cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
pub enum Case {
    I,
    II,
    III,
    IV,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::I, Case::II, Case::III, Case::IV];

    /// `(δx, δy)` in km.
    pub fn position_km(self) -> [f64; 2] {
        let d = POSITION_HALF_KM;
        match self {
            Case::I => [d, d],
            Case::II => [d, -d],
            Case::III => [-d, d],
            Case::IV => [-d, -d],
        }
    }
}

/// Initial perturbation of `case` in normalized units, with each velocity
/// component drawn uniformly within the velocity half-width.
pub fn case_perturbation(case: Case, p: &SystemParams, seed: u64) -> State4 {
    let [x, y] = case.position_km();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = || p.mps_to_vu(rng.random_range(-VELOCITY_HALF_MPS..=VELOCITY_HALF_MPS));
    State4::new(p.km_to_lu(x), p.km_to_lu(y), v(), v())
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
            Case::IV => "IV",
        })
    }
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            "IV" | "4" => Ok(Case::IV),
            other => Err(format!("unknown case '{other}' (expected I, II, III or IV)")),
        }
    }
}
