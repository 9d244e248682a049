//! Full-day trip replay.
//!
//! Persons and trips come from survey-style CSVs or the synthetic generator.
//! A run allocates the day's cap in a genesis block, then walks the trips in
//! order of completion on a simulated clock: each finished trip is priced,
//! settled through the market and committed by a consensus round. Bus runs
//! settle their empty seats with the operator when their last rider alights.
//!
//! Completions in the same second share a round, so a purchase stamped one
//! millisecond before its payment never lands behind an earlier block.

mod artifacts;
mod config;
mod metrics;
mod population;
mod run;
mod synth;

pub use artifacts::{
    read_manifest, write_artifacts, write_partial_ledger, RunManifest, LEDGER_FILE, MANIFEST_FILE,
    PARTIAL_LEDGER_FILE, PERSONS_FILE, TRIPS_FILE,
};
pub use config::{CapSource, PopulationSource, SimulationConfig};
pub use metrics::{collect_metrics, LatencyStats, MetricsReport};
pub use population::{
    format_clock, load_population, parse_clock, read_population, write_persons_csv, write_rejects_csv,
    write_trips_csv, AgeBand, Employment, Gender, Occupation, Population, PopulationError, Reject,
    StudentStatus, SurveyPerson, PERSONS_HEADER, TRIPS_HEADER,
};
pub use run::{
    bus_run_id, per_minute, run, run_population, CommitRecord, SimulationError, SimulationFailure,
    SimulationResult, UserWallet,
};
pub use synth::{generate_synthetic, AgeProfile, ModeProfile, SyntheticProfile};
