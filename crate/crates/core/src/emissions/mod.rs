//! Per-trip greenhouse-gas accounting.
//!
//! A trip's emissions are its distance times the emission factor for its
//! vehicle class at its average speed. The vehicle total is split across the
//! people on board (car and ride-hail) or charged per seat (buses), and the
//! per-person grams are converted into tokens at the configured CO2e price.
//!
//! All real-valued arithmetic is generic over [`Scalar`](crate::num::Scalar);
//! rounding happens once, at the final token conversion.

mod factors;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use factors::{
    g_per_km_to_g_per_mile, g_per_mile_to_g_per_km, EmissionFactorTable, FactorRow, FactorUnit,
    KM_PER_MILE,
};
pub use pipeline::{
    average_speed, passenger_shares, per_user_emissions, tokens_for_emissions, trip_cost,
    trip_emissions, BusChargingPolicy, PricePolicy, TripCost,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Car,
    RideHail,
    Bus,
    SchoolBus,
    Walk,
    Bicycle,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Car,
        Mode::RideHail,
        Mode::Bus,
        Mode::SchoolBus,
        Mode::Walk,
        Mode::Bicycle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Car => "car",
            Mode::RideHail => "ride_hail",
            Mode::Bus => "bus",
            Mode::SchoolBus => "school_bus",
            Mode::Walk => "walk",
            Mode::Bicycle => "bicycle",
        }
    }

    pub fn is_motorized(self) -> bool {
        !matches!(self, Mode::Walk | Mode::Bicycle)
    }

    pub fn is_bus(self) -> bool {
        matches!(self, Mode::Bus | Mode::SchoolBus)
    }

    /// Position in [`Mode::ALL`].
    pub fn index(self) -> usize {
        Mode::ALL.iter().position(|&m| m == self).expect("mode in ALL")
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// One person-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub trip_id: String,
    pub user_id: String,
    pub mode: Mode,
    /// Seconds since midnight.
    pub start_s: u32,
    pub end_s: u32,
    pub distance_m: f64,
    /// People on board; only meaningful for car and ride-hail.
    pub passengers: u32,
    pub vehicle_class: Option<String>,
    pub origin_ok: bool,
    pub destination_ok: bool,
}

impl TripRecord {
    pub fn duration_s(&self) -> i64 {
        i64::from(self.end_s) - i64::from(self.start_s)
    }

    /// Both ends inside the system boundary.
    pub fn within_boundary(&self) -> bool {
        self.origin_ok && self.destination_ok
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmissionError {
    #[error("trip {0}: duration must be positive")]
    ZeroDuration(String),
    #[error("trip {0}: negative distance")]
    NegativeDistance(String),
    #[error("no emission factor for class {class:?} at {speed_kmh:.3} km/h")]
    MissingFactor { class: String, speed_kmh: f64 },
    #[error("trip {0}: car trips need at least one passenger")]
    ZeroPassengers(String),
    #[error("negative emission total")]
    NegativeEmissions,
    #[error("invalid factor table: {0}")]
    InvalidTable(String),
    #[error("factor table line {line}: {message}")]
    TableParse { line: u64, message: String },
}
