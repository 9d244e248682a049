//! Full-chain audit.
//!
//! Unlike [`Ledger::commit`](super::Ledger::commit), which stops at the first
//! problem, the audit walks every block and reports every violation it finds.
//! Links are checked against the hash each block would have if its
//! predecessors were rebuilt honestly, so one mutated block breaks every link
//! after it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::block::Block;
use super::tx::TxKind;
use super::validate::{self, validate_stateless, ValidationError};
use super::{Ledger, LedgerPolicy};
use crate::amount::TokenAmount;
use crate::crypto::Digest;
use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    HeightMismatch { expected: u64, found: u64 },
    BlockHashMismatch { stored: Digest, recomputed: Digest },
    BrokenLink { expected: Digest, found: Digest },
    EmptyBlock,
    InvalidTransaction { position: usize, error: String },
    DuplicateTransaction { position: usize, tx_id: Digest },
    UnknownValidator { validator: Address },
    InvalidSignature { validator: Address },
    DuplicateSignature { validator: Address },
    QuorumMissing { have: usize, need: usize },
    NegativeBalance { address: Address, balance: TokenAmount },
    StateMismatch {
        address: Address,
        folded: TokenAmount,
        recorded: TokenAmount,
    },
    ConservationViolated { minted: TokenAmount, held: TokenAmount },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Block height, or `None` for findings about the derived state.
    pub height: Option<u64>,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.height {
            Some(h) => write!(f, "height {h}: ")?,
            None => write!(f, "state: ")?,
        }
        match &self.kind {
            ViolationKind::HeightMismatch { expected, found } => {
                write!(f, "height field {found}, expected {expected}")
            }
            ViolationKind::BlockHashMismatch { stored, recomputed } => {
                write!(f, "block hash mismatch (stored {stored}, recomputed {recomputed})")
            }
            ViolationKind::BrokenLink { expected, found } => {
                write!(f, "broken link (prev_hash {found}, expected {expected})")
            }
            ViolationKind::EmptyBlock => write!(f, "empty block"),
            ViolationKind::InvalidTransaction { position, error } => {
                write!(f, "transaction {position} invalid: {error}")
            }
            ViolationKind::DuplicateTransaction { position, tx_id } => {
                write!(f, "transaction {position} replays {tx_id}")
            }
            ViolationKind::UnknownValidator { validator } => {
                write!(f, "signature from non-validator {validator}")
            }
            ViolationKind::InvalidSignature { validator } => {
                write!(f, "invalid signature from {validator}")
            }
            ViolationKind::DuplicateSignature { validator } => {
                write!(f, "duplicate signature from {validator}")
            }
            ViolationKind::QuorumMissing { have, need } => {
                write!(f, "{have} valid signatures, quorum is {need}")
            }
            ViolationKind::NegativeBalance { address, balance } => {
                write!(f, "{address} balance {balance} is negative")
            }
            ViolationKind::StateMismatch {
                address,
                folded,
                recorded,
            } => write!(f, "{address} recorded {recorded}, chain folds to {folded}"),
            ViolationKind::ConservationViolated { minted, held } => {
                write!(f, "minted {minted} but wallets hold {held}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub blocks_checked: usize,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn heights(&self) -> BTreeSet<u64> {
        self.violations.iter().filter_map(|v| v.height).collect()
    }

    fn push(&mut self, height: Option<u64>, kind: ViolationKind) {
        self.violations.push(Violation { height, kind });
    }
}

/// Audits a committed ledger, including its recorded wallet snapshot.
pub fn verify_chain(ledger: &Ledger) -> VerificationReport {
    verify_blocks(
        ledger.policy(),
        ledger.blocks().iter().map(|b| b.as_ref()),
        Some(ledger.wallets()),
    )
}

/// Audits a sequence of blocks against `policy`. When `recorded` is given, the
/// folded wallet state must match it exactly.
pub fn verify_blocks<'a>(
    policy: &LedgerPolicy,
    blocks: impl IntoIterator<Item = &'a Block>,
    recorded: Option<&BTreeMap<Address, TokenAmount>>,
) -> VerificationReport {
    let mut report = VerificationReport::default();
    let mut wallets: BTreeMap<Address, i64> = BTreeMap::new();
    let mut seen: HashSet<Digest> = HashSet::new();
    let mut minted: i64 = 0;
    let mut anchored_prev = Digest::ZERO;
    let need = policy.quorum();

    for (index, block) in blocks.into_iter().enumerate() {
        let h = Some(index as u64);
        report.blocks_checked += 1;
        if block.height != index as u64 {
            report.push(
                h,
                ViolationKind::HeightMismatch {
                    expected: index as u64,
                    found: block.height,
                },
            );
        }
        let recomputed = block.compute_hash();
        if recomputed != block.block_hash {
            report.push(
                h,
                ViolationKind::BlockHashMismatch {
                    stored: block.block_hash,
                    recomputed,
                },
            );
        }
        if block.prev_hash != anchored_prev {
            report.push(
                h,
                ViolationKind::BrokenLink {
                    expected: anchored_prev,
                    found: block.prev_hash,
                },
            );
        }
        anchored_prev = block.hash_with_prev(&anchored_prev);
        if block.txs.is_empty() {
            report.push(h, ViolationKind::EmptyBlock);
        }

        let mut signers = BTreeSet::new();
        for sig in &block.signatures {
            if !policy.validators().contains(&sig.validator) {
                report.push(
                    h,
                    ViolationKind::UnknownValidator {
                        validator: sig.validator.clone(),
                    },
                );
            } else if !sig.is_valid_for(&block.block_hash) {
                report.push(
                    h,
                    ViolationKind::InvalidSignature {
                        validator: sig.validator.clone(),
                    },
                );
            } else if !signers.insert(&sig.validator) {
                report.push(
                    h,
                    ViolationKind::DuplicateSignature {
                        validator: sig.validator.clone(),
                    },
                );
            }
        }
        if signers.len() < need || need == 0 {
            report.push(
                h,
                ViolationKind::QuorumMissing {
                    have: signers.len(),
                    need,
                },
            );
        }

        for (position, tx) in block.txs.iter().enumerate() {
            if let Err(e) = validate_stateless(tx) {
                report.push(
                    h,
                    ViolationKind::InvalidTransaction {
                        position,
                        error: e.to_string(),
                    },
                );
            }
            if !seen.insert(tx.tx_id) {
                report.push(
                    h,
                    ViolationKind::DuplicateTransaction {
                        position,
                        tx_id: tx.tx_id,
                    },
                );
            }
            let stateful = if tx.kind == TxKind::Allocation {
                (tx.sender != policy.issuer)
                    .then(|| ValidationError::UnauthorizedMint(tx.sender.clone()))
            } else if policy.retirement.as_ref() == Some(&tx.sender) {
                Some(ValidationError::RetiredTokens)
            } else {
                None
            };
            if let Some(e) = stateful {
                report.push(
                    h,
                    ViolationKind::InvalidTransaction {
                        position,
                        error: e.to_string(),
                    },
                );
            }
            if tx.kind == TxKind::Allocation {
                minted += tx.amount.centi();
            }
            for (addr, d) in validate::deltas(tx) {
                if let Some(addr) = addr {
                    let bal = wallets.entry(addr.clone()).or_insert(0);
                    *bal += d;
                    if *bal < 0 {
                        report.push(
                            h,
                            ViolationKind::NegativeBalance {
                                address: addr.clone(),
                                balance: TokenAmount::from_centi(*bal),
                            },
                        );
                    }
                }
            }
        }
    }

    let held: i64 = wallets.values().sum();
    if held != minted {
        report.push(
            None,
            ViolationKind::ConservationViolated {
                minted: TokenAmount::from_centi(minted),
                held: TokenAmount::from_centi(held),
            },
        );
    }

    if let Some(recorded) = recorded {
        let addresses: BTreeSet<&Address> = wallets.keys().chain(recorded.keys()).collect();
        for addr in addresses {
            let folded = TokenAmount::from_centi(wallets.get(addr).copied().unwrap_or(0));
            let rec = recorded.get(addr).copied().unwrap_or(TokenAmount::ZERO);
            if folded != rec {
                report.push(
                    None,
                    ViolationKind::StateMismatch {
                        address: addr.clone(),
                        folded,
                        recorded: rec,
                    },
                );
            }
        }
    }
    report
}
