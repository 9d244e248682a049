//! Transaction validation.
//!
//! Stateless checks look at the transaction alone. Stateful checks read a
//! [`StateView`]; [`Overlay`] lets a sequence of pending transactions be
//! validated in order, each one seeing the effects of the ones before it.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::tx::{TokenTransaction, TxKind};
use super::LedgerPolicy;
use crate::amount::TokenAmount;
use crate::crypto::Digest;
use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("amount {0} is not strictly positive")]
    MalformedAmount(TokenAmount),
    #[error("address {0:?} is not a well-formed ledger address")]
    UnknownAddress(Address),
    #[error("sender and receiver are the same address")]
    SelfTransfer,
    #[error("trip payment without a trip reference")]
    MissingTripReference,
    #[error("signature does not verify for the sender")]
    BadSignature,
    #[error("tx_id {stored} does not match recomputed {recomputed}")]
    HashMismatch { stored: Digest, recomputed: Digest },
    #[error("insufficient tokens: balance {balance}, requested {requested}")]
    InsufficientTokens {
        balance: TokenAmount,
        requested: TokenAmount,
    },
    #[error("transaction {0} already committed")]
    DuplicateTransaction(Digest),
    #[error("allocation sent by {0:?}, which is not the issuer")]
    UnauthorizedMint(Address),
    #[error("retired tokens cannot be spent")]
    RetiredTokens,
}

pub type ValidationResult = Result<(), ValidationError>;

/// Read access to committed (or projected) ledger state.
pub trait StateView {
    fn balance_of(&self, address: &Address) -> TokenAmount;
    fn is_committed(&self, tx_id: &Digest) -> bool;
    fn policy(&self) -> &LedgerPolicy;
}

/// Well-formedness checks. Reads nothing but `tx`.
pub fn validate_stateless(tx: &TokenTransaction) -> ValidationResult {
    if !tx.amount.is_positive() {
        return Err(ValidationError::MalformedAmount(tx.amount));
    }
    for addr in [&tx.sender, &tx.receiver] {
        if !addr.is_well_formed() {
            return Err(ValidationError::UnknownAddress(addr.clone()));
        }
    }
    if tx.sender == tx.receiver {
        return Err(ValidationError::SelfTransfer);
    }
    if tx.kind == TxKind::TripPayment && tx.memo().trip.is_none() {
        return Err(ValidationError::MissingTripReference);
    }
    let recomputed = tx.compute_id();
    if recomputed != tx.tx_id {
        return Err(ValidationError::HashMismatch {
            stored: tx.tx_id,
            recomputed,
        });
    }
    if !tx.signature_is_valid() {
        return Err(ValidationError::BadSignature);
    }
    Ok(())
}

/// Balance and replay checks against `state`. Assumes `tx` passed
/// [`validate_stateless`].
pub fn validate_stateful<S: StateView + ?Sized>(tx: &TokenTransaction, state: &S) -> ValidationResult {
    if state.is_committed(&tx.tx_id) {
        return Err(ValidationError::DuplicateTransaction(tx.tx_id));
    }
    let policy = state.policy();
    if tx.kind == TxKind::Allocation {
        if tx.sender != policy.issuer {
            return Err(ValidationError::UnauthorizedMint(tx.sender.clone()));
        }
        return Ok(());
    }
    if policy.retirement.as_ref() == Some(&tx.sender) {
        return Err(ValidationError::RetiredTokens);
    }
    let balance = state.balance_of(&tx.sender);
    if balance < tx.amount {
        return Err(ValidationError::InsufficientTokens {
            balance,
            requested: tx.amount,
        });
    }
    Ok(())
}

/// Both checks, stateless first.
pub fn validate_full<S: StateView + ?Sized>(tx: &TokenTransaction, state: &S) -> ValidationResult {
    validate_stateless(tx)?;
    validate_stateful(tx, state)
}

/// Signed balance changes a transaction causes.
pub(crate) fn deltas(tx: &TokenTransaction) -> [(Option<&Address>, i64); 2] {
    let debit = (tx.kind != TxKind::Allocation).then_some(&tx.sender);
    [(debit, -tx.amount.centi()), (Some(&tx.receiver), tx.amount.centi())]
}

/// Pending transactions layered over a base state.
#[derive(Debug)]
pub struct Overlay<'a, S: StateView + ?Sized> {
    base: &'a S,
    deltas: HashMap<Address, i64>,
    seen: HashSet<Digest>,
    applied: Vec<Digest>,
}

impl<'a, S: StateView + ?Sized> Overlay<'a, S> {
    pub fn new(base: &'a S) -> Self {
        Self {
            base,
            deltas: HashMap::new(),
            seen: HashSet::new(),
            applied: Vec::new(),
        }
    }

    /// Validates `tx` against the projected state and, on success, applies it.
    pub fn push(&mut self, tx: &TokenTransaction) -> ValidationResult {
        validate_full(tx, self)?;
        self.apply_unchecked(tx);
        Ok(())
    }

    pub fn apply_unchecked(&mut self, tx: &TokenTransaction) {
        for (addr, d) in deltas(tx) {
            if let Some(addr) = addr {
                *self.deltas.entry(addr.clone()).or_insert(0) += d;
            }
        }
        self.seen.insert(tx.tx_id);
        self.applied.push(tx.tx_id);
    }

    pub fn delta_of(&self, address: &Address) -> TokenAmount {
        TokenAmount::from_centi(self.deltas.get(address).copied().unwrap_or(0))
    }

    pub fn len(&self) -> usize {
        self.applied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applied.is_empty()
    }
}

impl<S: StateView + ?Sized> StateView for Overlay<'_, S> {
    fn balance_of(&self, address: &Address) -> TokenAmount {
        self.base.balance_of(address) + self.delta_of(address)
    }

    fn is_committed(&self, tx_id: &Digest) -> bool {
        self.seen.contains(tx_id) || self.base.is_committed(tx_id)
    }

    fn policy(&self) -> &LedgerPolicy {
        self.base.policy()
    }
}
