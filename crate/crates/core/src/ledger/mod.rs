//! Append-only hash-chained token ledger.
//!
//! A [`Ledger`] is a chain of quorum-signed [`Block`]s plus the wallet state
//! obtained by folding every transaction from genesis. Committed ledgers are
//! values: [`Ledger::apply_block`] returns a new ledger and leaves the old one
//! untouched, while [`Ledger::commit`] is the in-place variant used on the
//! single consensus commit path.
//!
//! Allocation transactions mint: they credit the receiver without debiting the
//! issuer. Every other kind moves tokens between wallets, so after every block
//! the sum of all wallet balances equals the total minted.

mod block;
mod export;
mod tx;
mod validate;
mod verify;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{
    build_block, canonical_order, check_proposal, vote_message, Block, BlockSignature, BuildError,
};
pub use export::{
    import_ndjson, read_ndjson, write_ndjson, write_wallet_csv, ImportError,
};
pub use tx::{Memo, TokenTransaction, TxKind};
pub use validate::{
    validate_full, validate_stateful, validate_stateless, Overlay, StateView, ValidationError,
    ValidationResult,
};
pub use verify::{verify_blocks, verify_chain, VerificationReport, Violation, ViolationKind};

use crate::amount::TokenAmount;
use crate::crypto::Digest;
use crate::identity::{Address, Registry};

/// ⌈2n/3⌉, the number of signatures a block needs among `n` validators.
pub const fn quorum_size(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

/// Static rules of a ledger: who mints, where spent tokens are retired and
/// which validators sign blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerPolicy {
    pub issuer: Address,
    pub retirement: Option<Address>,
    validators: Vec<Address>,
}

impl LedgerPolicy {
    pub fn new(issuer: Address, retirement: Option<Address>, validators: Vec<Address>) -> Self {
        let mut validators = validators;
        validators.sort();
        validators.dedup();
        Self {
            issuer,
            retirement,
            validators,
        }
    }

    pub fn validators(&self) -> &[Address] {
        &self.validators
    }

    pub fn quorum(&self) -> usize {
        quorum_size(self.validators.len())
    }

    /// Recovers a policy from an exported chain: validators are every address
    /// that signed some block, since a quorum certificate need not name the
    /// whole set. A validator that never signed stays unknown. The issuer is the sender of the first genesis allocation and
    /// the retirement account is the receiver of the first trip payment.
    pub fn infer_from_chain(blocks: &[Block]) -> Option<Self> {
        let genesis = blocks.first()?;
        let issuer = genesis
            .txs
            .iter()
            .find(|t| t.kind == TxKind::Allocation)
            .map(|t| t.sender.clone())?;
        let retirement = blocks
            .iter()
            .flat_map(|b| &b.txs)
            .find(|t| t.kind == TxKind::TripPayment)
            .map(|t| t.receiver.clone());
        let validators = blocks.iter().flat_map(|b| &b.signatures).map(|s| s.validator.clone()).collect();
        Some(Self::new(issuer, retirement, validators))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("block height {found} does not extend the chain (expected {expected})")]
    HeightMismatch { expected: u64, found: u64 },
    #[error("block {height} prev_hash {found} does not match head {expected}")]
    BrokenChainLink {
        height: u64,
        expected: Digest,
        found: Digest,
    },
    #[error("block {height} hash does not recompute")]
    BlockHashMismatch { height: u64 },
    #[error("block {height} has no transactions")]
    EmptyBlock { height: u64 },
    #[error("block {height} has {have} valid validator signatures, needs {need}")]
    QuorumMissing { height: u64, have: usize, need: usize },
    #[error("block {height} transaction {position} invalid: {source}")]
    InvalidTransaction {
        height: u64,
        position: usize,
        #[source]
        source: ValidationError,
    },
    #[error("applying block {height} would leave {address:?} with a negative balance")]
    NegativeBalanceWouldResult { height: u64, address: Address },
    #[error("conservation broken after block {height}: minted {minted}, held {held}")]
    ConservationViolated {
        height: u64,
        minted: TokenAmount,
        held: TokenAmount,
    },
    #[error("address {0:?} is not registered")]
    UnknownAddress(Address),
}

#[derive(Debug, Clone)]
pub struct Ledger {
    policy: Arc<LedgerPolicy>,
    chain: Vec<Arc<Block>>,
    wallets: BTreeMap<Address, TokenAmount>,
    tx_index: HashMap<Digest, (u64, usize)>,
    minted: TokenAmount,
}

impl Ledger {
    pub fn new(policy: LedgerPolicy) -> Self {
        Self {
            policy: Arc::new(policy),
            chain: Vec::new(),
            wallets: BTreeMap::new(),
            tx_index: HashMap::new(),
            minted: TokenAmount::ZERO,
        }
    }

    /// Folds `blocks` from genesis, enforcing every commit rule.
    pub fn from_blocks(
        policy: LedgerPolicy,
        blocks: impl IntoIterator<Item = Block>,
    ) -> Result<Self, LedgerError> {
        let mut ledger = Self::new(policy);
        for b in blocks {
            ledger.commit(b)?;
        }
        Ok(ledger)
    }

    /// Assembles a ledger without checking anything. Only for inspection
    /// tooling and tamper experiments; run [`verify_chain`] on the result.
    pub fn from_parts_unchecked(
        policy: LedgerPolicy,
        chain: Vec<Block>,
        wallets: BTreeMap<Address, TokenAmount>,
    ) -> Self {
        let mut tx_index = HashMap::new();
        let mut minted = TokenAmount::ZERO;
        for b in &chain {
            for (i, tx) in b.txs.iter().enumerate() {
                tx_index.entry(tx.tx_id).or_insert((b.height, i));
                if tx.kind == TxKind::Allocation {
                    minted += tx.amount;
                }
            }
        }
        Self {
            policy: Arc::new(policy),
            chain: chain.into_iter().map(Arc::new).collect(),
            wallets,
            tx_index,
            minted,
        }
    }

    pub fn policy(&self) -> &LedgerPolicy {
        &self.policy
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.chain
    }

    pub fn head(&self) -> Option<&Block> {
        self.chain.last().map(|b| b.as_ref())
    }

    /// Hash of the head block, or all zeros for an empty chain.
    pub fn head_hash(&self) -> Digest {
        self.head().map(|b| b.block_hash).unwrap_or(Digest::ZERO)
    }

    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    pub fn wallets(&self) -> &BTreeMap<Address, TokenAmount> {
        &self.wallets
    }

    pub fn minted(&self) -> TokenAmount {
        self.minted
    }

    pub fn tx_count(&self) -> usize {
        self.tx_index.len()
    }

    pub fn locate(&self, tx_id: &Digest) -> Option<(u64, usize)> {
        self.tx_index.get(tx_id).copied()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &TokenTransaction> {
        self.chain.iter().flat_map(|b| b.txs.iter())
    }

    /// Pure fold step: returns the ledger extended by `block`.
    pub fn apply_block(&self, block: Block) -> Result<Ledger, LedgerError> {
        let mut next = self.clone();
        next.commit(block)?;
        Ok(next)
    }

    /// Appends a quorum-signed block, applying its wallet deltas atomically.
    pub fn commit(&mut self, block: Block) -> Result<(), LedgerError> {
        let height = block.height;
        let expected_height = self.chain.len() as u64;
        if height != expected_height {
            return Err(LedgerError::HeightMismatch {
                expected: expected_height,
                found: height,
            });
        }
        let expected_prev = self.head_hash();
        if block.prev_hash != expected_prev {
            return Err(LedgerError::BrokenChainLink {
                height,
                expected: expected_prev,
                found: block.prev_hash,
            });
        }
        if block.txs.is_empty() {
            return Err(LedgerError::EmptyBlock { height });
        }
        if block.compute_hash() != block.block_hash {
            return Err(LedgerError::BlockHashMismatch { height });
        }
        let have = block.valid_signers(self.policy.validators()).len();
        let need = self.policy.quorum();
        if have < need || need == 0 {
            return Err(LedgerError::QuorumMissing { height, have, need });
        }

        let mut deltas: BTreeMap<Address, i64> = BTreeMap::new();
        let mut minted = TokenAmount::ZERO;
        {
            let mut overlay = Overlay::new(&*self);
            for (position, tx) in block.txs.iter().enumerate() {
                overlay
                    .push(tx)
                    .map_err(|source| LedgerError::InvalidTransaction {
                        height,
                        position,
                        source,
                    })?;
                if tx.kind == TxKind::Allocation {
                    minted += tx.amount;
                }
                for (addr, d) in validate::deltas(tx) {
                    if let Some(addr) = addr {
                        *deltas.entry(addr.clone()).or_insert(0) += d;
                    }
                }
            }
        }
        for (addr, d) in &deltas {
            if (self.balance_of(addr).centi() + d) < 0 {
                return Err(LedgerError::NegativeBalanceWouldResult {
                    height,
                    address: addr.clone(),
                });
            }
        }

        for (addr, d) in deltas {
            *self.wallets.entry(addr).or_insert(TokenAmount::ZERO) += TokenAmount::from_centi(d);
        }
        for (i, tx) in block.txs.iter().enumerate() {
            self.tx_index.insert(tx.tx_id, (height, i));
        }
        self.minted += minted;
        self.chain.push(Arc::new(block));

        let held: TokenAmount = self.wallets.values().sum();
        if held != self.minted {
            return Err(LedgerError::ConservationViolated {
                height,
                minted: self.minted,
                held,
            });
        }
        Ok(())
    }

    /// Re-folds the whole chain into a fresh wallet map.
    pub fn refold(&self) -> Result<BTreeMap<Address, TokenAmount>, LedgerError> {
        let blocks = self.chain.iter().map(|b| (**b).clone());
        Ok(Ledger::from_blocks((*self.policy).clone(), blocks)?.wallets)
    }
}

impl StateView for Ledger {
    fn balance_of(&self, address: &Address) -> TokenAmount {
        self.wallets.get(address).copied().unwrap_or(TokenAmount::ZERO)
    }

    fn is_committed(&self, tx_id: &Digest) -> bool {
        self.tx_index.contains_key(tx_id)
    }

    fn policy(&self) -> &LedgerPolicy {
        &self.policy
    }
}

/// Every committed transaction sent or received by `owner`, in chain order.
pub fn query_history(
    ledger: &Ledger,
    registry: &Registry,
    owner: &Address,
) -> Result<Vec<TokenTransaction>, LedgerError> {
    if !registry.contains(owner) {
        return Err(LedgerError::UnknownAddress(owner.clone()));
    }
    Ok(ledger
        .transactions()
        .filter(|t| t.touches(owner))
        .cloned()
        .collect())
}
