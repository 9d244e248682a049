//! Ledger interchange formats.
//!
//! Blocks are exported as newline-delimited JSON, one block per line, with a
//! fixed field order and lowercase-hex digests. Wallet snapshots are CSV
//! `address,balance` with two-decimal balances, sorted by address.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::block::Block;
use super::{Ledger, LedgerError, LedgerPolicy};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("ledger file contains no blocks")]
    Empty,
    #[error("cannot infer validators and issuer from the genesis block")]
    NoGenesisPolicy,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_ndjson<'a, W: Write>(
    blocks: impl IntoIterator<Item = &'a Block>,
    mut out: W,
) -> std::io::Result<()> {
    for b in blocks {
        serde_json::to_writer(&mut out, b)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses an NDJSON export without checking any ledger rule.
pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<Block>, ImportError> {
    let mut blocks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let block: Block = serde_json::from_str(&line).map_err(|e| ImportError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        blocks.push(block);
    }
    Ok(blocks)
}

/// Parses an export and re-folds it into a ledger. With no explicit policy,
/// one is inferred from the genesis block.
pub fn import_ndjson<R: BufRead>(
    input: R,
    policy: Option<LedgerPolicy>,
) -> Result<Ledger, ImportError> {
    let blocks = read_ndjson(input)?;
    if blocks.is_empty() {
        return Err(ImportError::Empty);
    }
    let policy = match policy {
        Some(p) => p,
        None => LedgerPolicy::infer_from_chain(&blocks).ok_or(ImportError::NoGenesisPolicy)?,
    };
    Ok(Ledger::from_blocks(policy, blocks)?)
}

pub fn write_wallet_csv<W: Write>(ledger: &Ledger, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["address", "balance"])?;
    for (addr, bal) in ledger.wallets() {
        w.write_record([addr.as_str(), &bal.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
