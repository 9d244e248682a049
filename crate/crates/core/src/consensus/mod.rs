//! Vote-based BFT block selection over a simulated network.
//!
//! One round decides one block. Proposers build candidates from the pending
//! pool, every active node votes for the lowest-hash valid candidate it has
//! seen, and a node commits a block once it holds the block and a quorum of
//! ⌈2n/3⌉ distinct votes for it. Only the first vote of each voter counts.
//! Two quorums always share an honest voter when at most ⌊(n−1)/3⌋ nodes are
//! faulty, so honest nodes never commit different blocks at the same height.
//!
//! The network is a single-threaded discrete-event queue; a run is fully
//! determined by its seed, configuration and input pool.

pub mod model_check;
mod network;
mod node;
mod round;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Attestation, AttestationScheme, Digest, KeyedDigest};
use crate::identity::Address;
use crate::ledger::{quorum_size, vote_message, Block, BlockSignature, BuildError, LedgerError};

pub use network::{
    round_rng, simulate_network, Behavior, ByzantineSpec, DelayModel, Envelope, FaultScenario,
    NetworkModel, Payload, SimTime,
};
pub use node::Node;
pub use round::{run_round, RoundReport};
pub use trace::{write_trace_csv, TraceRow};

/// ⌊(n−1)/3⌋, the number of faulty validators the protocol tolerates.
pub const fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub n_active: usize,
    pub quorum: usize,
    pub max_faulty: usize,
    /// Number of nodes proposing a candidate in each round.
    pub proposal_window: usize,
    pub rng_seed: u64,
}

impl ConsensusConfig {
    pub fn new(n_active: usize, rng_seed: u64) -> Self {
        Self {
            n_active,
            quorum: quorum_size(n_active),
            max_faulty: max_faulty(n_active),
            proposal_window: 1,
            rng_seed,
        }
    }

    pub fn with_proposal_window(mut self, window: usize) -> Self {
        self.proposal_window = window;
        self
    }

    pub fn validate(&self) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::InvalidConfig(m));
        if self.n_active == 0 {
            return bad("n_active must be at least 1".into());
        }
        if self.quorum != quorum_size(self.n_active) {
            return bad(format!("quorum must be ⌈2n/3⌉ = {}", quorum_size(self.n_active)));
        }
        if self.max_faulty != max_faulty(self.n_active) {
            return bad(format!("max_faulty must be ⌊(n−1)/3⌋ = {}", max_faulty(self.n_active)));
        }
        if self.proposal_window == 0 || self.proposal_window > self.n_active {
            return bad("proposal_window must be in 1..=n_active".into());
        }
        Ok(())
    }

    /// Node indices proposing in `round`, leader first.
    pub fn proposers(&self, round: u64) -> Vec<usize> {
        let n = self.n_active as u64;
        (0..self.proposal_window as u64)
            .map(|k| ((round + k) % n) as usize)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vote {
    pub voter: Address,
    pub round: u64,
    pub block_hash: Digest,
    pub attestation: Attestation,
}

impl Vote {
    pub fn cast(voter: &Address, round: u64, block_hash: Digest) -> Self {
        Self {
            voter: voter.clone(),
            round,
            block_hash,
            attestation: KeyedDigest.attest(voter, &vote_message(&block_hash)),
        }
    }

    pub fn is_authentic(&self) -> bool {
        KeyedDigest.verify(&self.voter, &vote_message(&self.block_hash), &self.attestation)
    }

    pub fn to_signature(&self) -> BlockSignature {
        BlockSignature {
            validator: self.voter.clone(),
            attestation: self.attestation.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "block_hash", rename_all = "snake_case")]
pub enum Outcome {
    Committed(Digest),
    NoQuorum,
    RoundTimeout,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Committed(_) => "committed",
            Outcome::NoQuorum => "no_quorum",
            Outcome::RoundTimeout => "round_timeout",
        }
    }

    pub fn committed(&self) -> Option<Digest> {
        match self {
            Outcome::Committed(h) => Some(*h),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub round: u64,
    pub outcome: Outcome,
    /// Votes behind the committed hash, or the largest tally when nothing committed.
    pub votes_counted: usize,
    /// Voters seen voting for two different hashes.
    pub equivocators: Vec<Address>,
}

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("invalid consensus configuration: {0}")]
    InvalidConfig(String),
    #[error("{byzantine} byzantine nodes exceed the tolerated {max_faulty}; pass the unsafe-faults flag to run anyway")]
    UnsafeFaults { byzantine: usize, max_faulty: usize },
    #[error("no candidate blocks")]
    NoCandidates,
    #[error("candidate at height {found}, expected {expected}")]
    HeightMismatch { expected: u64, found: u64 },
    #[error("candidates extend different parents")]
    ConflictingParents,
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Picks the candidate every honest node votes for: the lowest block hash.
/// Arrival order is irrelevant.
pub fn order_proposals<'a>(
    candidates: &'a [Block],
    _round: u64,
    _config: &ConsensusConfig,
) -> Result<&'a Block, ConsensusError> {
    let first = candidates.first().ok_or(ConsensusError::NoCandidates)?;
    for c in candidates {
        if c.height != first.height {
            return Err(ConsensusError::HeightMismatch {
                expected: first.height,
                found: c.height,
            });
        }
        if c.prev_hash != first.prev_hash {
            return Err(ConsensusError::ConflictingParents);
        }
    }
    Ok(candidates
        .iter()
        .min_by_key(|b| b.block_hash)
        .expect("non-empty"))
}

/// Tallies one round's votes, counting only the first authentic vote of each
/// roster member.
pub fn cast_and_tally(votes: &[Vote], roster: &[Address], config: &ConsensusConfig) -> Decision {
    let round = votes.first().map(|v| v.round).unwrap_or(0);
    let mut first: BTreeMap<&Address, Digest> = BTreeMap::new();
    let mut equivocators = BTreeSet::new();
    for v in votes {
        if v.round != round || !roster.contains(&v.voter) || !v.is_authentic() {
            continue;
        }
        match first.get(&v.voter) {
            Some(h) if *h != v.block_hash => {
                equivocators.insert(v.voter.clone());
            }
            Some(_) => {}
            None => {
                first.insert(&v.voter, v.block_hash);
            }
        }
    }
    let mut tally: BTreeMap<Digest, usize> = BTreeMap::new();
    for h in first.values() {
        *tally.entry(*h).or_default() += 1;
    }
    let best = tally.iter().max_by_key(|(h, c)| (**c, std::cmp::Reverse(**h)));
    let (outcome, votes_counted) = match best {
        Some((h, &c)) if c >= config.quorum => (Outcome::Committed(*h), c),
        Some((_, &c)) => (Outcome::NoQuorum, c),
        None => (Outcome::NoQuorum, 0),
    };
    Decision {
        round,
        outcome,
        votes_counted,
        equivocators: equivocators.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests;
