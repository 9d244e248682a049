use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::collect_metrics;
use super::population::{write_persons_csv, write_rejects_csv, write_trips_csv};
use super::run::SimulationResult;
use crate::consensus::write_trace_csv;
use crate::ledger::{write_ndjson, write_wallet_csv, Ledger, LedgerPolicy};

pub const LEDGER_FILE: &str = "ledger.ndjson";
pub const PARTIAL_LEDGER_FILE: &str = "ledger.partial.ndjson";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PERSONS_FILE: &str = "persons.csv";
pub const TRIPS_FILE: &str = "trips.csv";

/// Provenance of a simulation output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_hash: String,
    pub ledger_head: String,
    pub generated_at: String,
    pub users: usize,
    pub blocks: usize,
    pub transactions: usize,
    pub compute_ms: u128,
    /// Validators, issuer and retirement account the chain was built under.
    pub policy: LedgerPolicy,
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the ledger export, wallet snapshots, metrics, consensus trace, the
/// replayed inputs and a manifest. Everything except the manifest is a pure
/// function of the run.
pub fn write_artifacts(result: &SimulationResult, dir: &Path, generated_at: &str) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut done = |name: &str| written.push(dir.join(name));

    let blocks = result.ledger.blocks().iter().map(|b| b.as_ref());
    write_ndjson(blocks, create(dir, LEDGER_FILE)?)?;
    done(LEDGER_FILE);

    write_wallet_csv(&result.ledger, create(dir, "accounts.csv")?).map_err(csv_io)?;
    done("accounts.csv");

    {
        let mut w = csv::Writer::from_writer(create(dir, "wallets.csv")?);
        w.write_record([
            "user_id",
            "address",
            "grant",
            "balance",
            "age_band",
            "gender",
            "employment",
            "occupation",
            "student_status",
            "has_licence",
            "household_size",
            "household_cars",
        ])
        .map_err(csv_io)?;
        for u in &result.wallets {
            let p = &u.person;
            w.write_record([
                p.user_id.as_str(),
                u.address.as_str(),
                &u.grant.to_string(),
                &u.balance.to_string(),
                p.age_band.as_str(),
                p.gender.as_str(),
                p.employment.as_str(),
                p.occupation.as_str(),
                p.student_status.as_str(),
                if p.has_licence { "true" } else { "false" },
                &p.household_size.to_string(),
                &p.household_cars.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
    }
    done("wallets.csv");

    let metrics = collect_metrics(result);
    serde_json::to_writer_pretty(create(dir, "metrics.json")?, &metrics)?;
    done("metrics.json");

    {
        let mut w = csv::Writer::from_writer(create(dir, "tx_per_minute.csv")?);
        w.write_record(["minute", "transactions"]).map_err(csv_io)?;
        for (m, c) in result.tx_per_minute.iter().enumerate() {
            w.write_record([m.to_string(), c.to_string()]).map_err(csv_io)?;
        }
        w.flush()?;
    }
    done("tx_per_minute.csv");

    write_trace_csv(&result.rounds, create(dir, "trace.csv")?).map_err(csv_io)?;
    done("trace.csv");

    write_persons_csv(&result.population.persons, create(dir, PERSONS_FILE)?).map_err(csv_io)?;
    done(PERSONS_FILE);
    write_trips_csv(&result.population.trips, create(dir, TRIPS_FILE)?).map_err(csv_io)?;
    done(TRIPS_FILE);
    if !result.population.rejects.is_empty() {
        write_rejects_csv(&result.population.rejects, create(dir, "rejects.csv")?).map_err(csv_io)?;
        done("rejects.csv");
    }

    let manifest = RunManifest {
        seed: result.config.seed,
        config_hash: result.config_hash.to_hex(),
        ledger_head: result.ledger.head_hash().to_hex(),
        generated_at: generated_at.to_string(),
        users: result.population.persons.len(),
        blocks: result.ledger.len(),
        transactions: result.ledger.tx_count(),
        compute_ms: result.compute_time.as_millis(),
        policy: result.ledger.policy().clone(),
    };
    serde_json::to_writer_pretty(create(dir, MANIFEST_FILE)?, &manifest)?;
    done(MANIFEST_FILE);
    Ok(written)
}

/// Exports whatever a failed run committed.
pub fn write_partial_ledger(ledger: &Ledger, dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(PARTIAL_LEDGER_FILE);
    write_ndjson(ledger.blocks().iter().map(|b| b.as_ref()), BufWriter::new(File::create(&path)?))?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> io::Result<RunManifest> {
    let s = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&s).map_err(io::Error::other)
}
