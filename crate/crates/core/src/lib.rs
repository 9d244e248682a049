//! Emission-trading ledger for urban mobility: per-trip emission pricing,
//! a permissioned token ledger, a leader-based BFT round simulator, a
//! daily-cap market, and reporting over the resulting ledger.

pub mod amount;
pub mod analytics;
pub mod consensus;
pub mod crypto;
pub mod emissions;
pub mod identity;
pub mod ledger;
pub mod market;
pub mod num;
pub mod simulator;

/// Emission types at the `f64` precision used throughout the simulator.
pub type EmissionFactors = emissions::EmissionFactorTable<f64>;
pub type Pricing = emissions::PricePolicy<f64>;
pub type BusCharging = emissions::BusChargingPolicy<f64>;
pub type Cost = emissions::TripCost<f64>;
