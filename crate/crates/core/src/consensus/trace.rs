use std::io::Write;

use serde::Serialize;

use super::network::US_PER_MS;
use super::RoundReport;

/// One row of the consensus trace export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: u64,
    pub proposer: usize,
    /// Hex digest of the committed block; empty when nothing committed.
    pub block_hash: String,
    pub votes: usize,
    pub outcome: String,
    /// Empty when nothing committed.
    pub latency_ms: Option<f64>,
}

impl From<&RoundReport> for TraceRow {
    fn from(r: &RoundReport) -> Self {
        Self {
            round: r.decision.round,
            proposer: r.leader(),
            block_hash: r
                .decision
                .outcome
                .committed()
                .map(|h| h.to_hex())
                .unwrap_or_default(),
            votes: r.decision.votes_counted,
            outcome: r.decision.outcome.as_str().to_string(),
            latency_ms: r.latency_us().map(|us| us as f64 / US_PER_MS),
        }
    }
}

/// Writes `round,proposer,block_hash,votes,outcome,latency_ms`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["round", "proposer", "block_hash", "votes", "outcome", "latency_ms"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
