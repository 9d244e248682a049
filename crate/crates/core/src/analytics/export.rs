use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, LeftoverReport, ReportSet, TripReport};
use crate::emissions::Mode;
use crate::ledger::Ledger;

pub const REPORT_MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub seed: u64,
    pub config_hash: String,
    /// Head of the ledger the reports were computed from.
    pub ledger_head: String,
    pub generated_at: String,
    /// File names, filled in by [`export_reports`].
    #[serde(default)]
    pub reports: Vec<String>,
}

/// Two decimals, ties toward +∞. Products carrying binary noise below 1e-6
/// of a centi are treated as exact.
pub fn half_up_centi(x: f64) -> String {
    let scaled = (x * 100.0 * 1e6).round() / 1e6;
    let c = (scaled + 0.5).floor() as i64;
    let sign = if c < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", c.unsigned_abs() / 100, c.unsigned_abs() % 100)
}

fn csv_io(e: csv::Error) -> AnalyticsError {
    AnalyticsError::IoFailure(io::Error::other(e))
}

type Rows = Vec<[String; 3]>;

fn leftover_rows(r: &LeftoverReport) -> Rows {
    let mut out = Vec::new();
    for row in &r.rows {
        let mut push = |metric: &str, value: String| out.push([row.group.clone(), metric.to_string(), value]);
        push("n_users", row.n_users.to_string());
        push("mean_net_tokens", half_up_centi(row.mean_net));
        push("mean_trips", half_up_centi(row.mean_trips));
        push("mean_distance_m", half_up_centi(row.mean_distance_m));
        for (m, s) in Mode::ALL.iter().zip(row.mode_shares) {
            push(&format!("pct_{}", m.as_str()), half_up_centi(s * 100.0));
        }
    }
    out
}

fn trip_rows(r: &TripReport) -> Rows {
    let mut out = Vec::new();
    for row in &r.rows {
        out.push([row.label.clone(), "trips".into(), row.trips.to_string()]);
        out.push([row.label.clone(), "tokens".into(), row.tokens.to_string()]);
        let value = match r.breakdown {
            super::Breakdown::ByDistanceBin => half_up_centi(row.value * 100.0),
            _ => half_up_centi(row.value),
        };
        let name = match r.breakdown {
            super::Breakdown::ByDistanceBin => "pct_tokens",
            b => b.value_name(),
        };
        out.push([row.label.clone(), name.into(), value]);
    }
    out
}

fn write_long(path: &Path, rows: &Rows) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["group", "metric", "value"]).map_err(csv_io)?;
    for r in rows {
        w.write_record(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one long-format CSV per report and a manifest. Output bytes depend
/// only on the reports and the manifest fields.
pub fn export_reports(reports: &ReportSet, manifest: &ReportManifest, dir: &Path) -> Result<Vec<PathBuf>, AnalyticsError> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(reports.len());
    let mut written = Vec::with_capacity(reports.len() + 1);
    for r in &reports.leftovers {
        let name = format!("leftovers_by_{}.csv", r.dimension);
        write_long(&dir.join(&name), &leftover_rows(r))?;
        written.push(dir.join(&name));
        names.push(name);
    }
    for r in &reports.trips {
        let name = format!("trips_{}.csv", r.breakdown);
        write_long(&dir.join(&name), &trip_rows(r))?;
        written.push(dir.join(&name));
        names.push(name);
    }
    let manifest = ReportManifest {
        reports: names,
        ..manifest.clone()
    };
    let path = dir.join(REPORT_MANIFEST_FILE);
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &manifest).map_err(io::Error::other)?;
    written.push(path);
    Ok(written)
}

pub fn read_report_manifest(dir: &Path) -> Result<ReportManifest, AnalyticsError> {
    let s = fs::read_to_string(dir.join(REPORT_MANIFEST_FILE))?;
    Ok(serde_json::from_str(&s).map_err(io::Error::other)?)
}

/// Fails unless `ledger` hashes to the head recorded in a manifest.
pub fn check_provenance(recorded_head: &str, ledger: &Ledger) -> Result<(), AnalyticsError> {
    let found = ledger.head_hash().to_hex();
    if found.eq_ignore_ascii_case(recorded_head) {
        Ok(())
    } else {
        Err(AnalyticsError::Provenance {
            expected: recorded_head.to_string(),
            found,
        })
    }
}
