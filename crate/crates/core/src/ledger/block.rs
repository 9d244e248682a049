use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tx::TokenTransaction;
use super::validate::{Overlay, StateView, ValidationError};
use crate::crypto::{Attestation, AttestationScheme, Digest, Encoder, KeyedDigest};
use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockSignature {
    pub validator: Address,
    pub attestation: Attestation,
}

impl BlockSignature {
    pub fn sign(validator: &Address, block_hash: &Digest) -> Self {
        Self {
            validator: validator.clone(),
            attestation: KeyedDigest.attest(validator, &vote_message(block_hash)),
        }
    }

    pub fn is_valid_for(&self, block_hash: &Digest) -> bool {
        KeyedDigest.verify(&self.validator, &vote_message(block_hash), &self.attestation)
    }
}

/// Bytes a validator attests to when voting for `block_hash`.
pub fn vote_message(block_hash: &Digest) -> Vec<u8> {
    Encoder::new("ets.vote.v1").digest(block_hash).finish().to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub creator: Address,
    pub txs: Vec<TokenTransaction>,
    pub block_hash: Digest,
    pub signatures: Vec<BlockSignature>,
}

impl Block {
    pub fn compute_hash(&self) -> Digest {
        self.hash_with_prev(&self.prev_hash)
    }

    /// The hash this block would have if it were linked to `prev`.
    pub fn hash_with_prev(&self, prev: &Digest) -> Digest {
        let mut e = Encoder::new("ets.block.v1");
        e.u64(self.height)
            .digest(prev)
            .str(self.creator.as_str())
            .u64(self.txs.len() as u64);
        for tx in &self.txs {
            tx.encode_into(&mut e);
        }
        e.hash()
    }

    /// Distinct validators from `roster` with a valid signature.
    pub fn valid_signers<'a>(&'a self, roster: &[Address]) -> BTreeSet<&'a Address> {
        self.signatures
            .iter()
            .filter(|s| roster.contains(&s.validator) && s.is_valid_for(&self.block_hash))
            .map(|s| &s.validator)
            .collect()
    }

    /// Adds a signature from each of `validators`, keeping the set sorted.
    pub fn sign_with<'a>(&mut self, validators: impl IntoIterator<Item = &'a Address>) {
        for v in validators {
            if !self.signatures.iter().any(|s| &s.validator == v) {
                self.signatures.push(BlockSignature::sign(v, &self.block_hash));
            }
        }
        self.signatures.sort();
    }
}

/// Canonical in-block order: timestamp, then tx_id.
pub fn canonical_order(a: &TokenTransaction, b: &TokenTransaction) -> Ordering {
    a.timestamp_ms
        .cmp(&b.timestamp_ms)
        .then_with(|| a.tx_id.cmp(&b.tx_id))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("transaction pool is empty")]
    EmptyPool,
    #[error("transaction {tx_id} rejected during sequential validation: {source}")]
    InvalidTransaction {
        tx_id: Digest,
        #[source]
        source: ValidationError,
    },
}

/// Builds an unsigned proposal on top of `head` (`None` for genesis).
///
/// Transactions are put in canonical order and validated sequentially against
/// `state`, so a transaction may spend what an earlier one in the same block
/// delivered.
pub fn build_block<S: StateView + ?Sized>(
    pool: &[TokenTransaction],
    creator: &Address,
    head: Option<&Block>,
    state: &S,
) -> Result<Block, BuildError> {
    if pool.is_empty() {
        return Err(BuildError::EmptyPool);
    }
    let mut txs = pool.to_vec();
    txs.sort_by(canonical_order);
    let mut overlay = Overlay::new(state);
    for tx in &txs {
        overlay
            .push(tx)
            .map_err(|source| BuildError::InvalidTransaction {
                tx_id: tx.tx_id,
                source,
            })?;
    }
    let (height, prev_hash) = match head {
        Some(h) => (h.height + 1, h.block_hash),
        None => (0, Digest::ZERO),
    };
    let mut block = Block {
        height,
        prev_hash,
        creator: creator.clone(),
        txs,
        block_hash: Digest::ZERO,
        signatures: Vec::new(),
    };
    block.block_hash = block.compute_hash();
    Ok(block)
}

/// Checks that `block` is exactly what an honest proposer would build from
/// its own transactions on top of `head`.
pub fn check_proposal<S: StateView + ?Sized>(
    block: &Block,
    head: Option<&Block>,
    state: &S,
) -> Result<(), BuildError> {
    let rebuilt = build_block(&block.txs, &block.creator, head, state)?;
    if rebuilt.block_hash != block.block_hash || rebuilt.txs != block.txs {
        return Err(BuildError::InvalidTransaction {
            tx_id: block.block_hash,
            source: ValidationError::HashMismatch {
                stored: block.block_hash,
                recomputed: rebuilt.block_hash,
            },
        });
    }
    Ok(())
}
