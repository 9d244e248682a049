use std::fmt;

use serde::{Deserialize, Serialize};

use crate::amount::TokenAmount;
use crate::crypto::{Attestation, AttestationScheme, Digest, Encoder, KeyedDigest};
use crate::identity::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    /// Minting by the issuer; credits the receiver without debiting the sender.
    Allocation,
    TripPayment,
    Purchase,
    Sale,
    OperatorSettlement,
}

impl TxKind {
    pub const ALL: [TxKind; 5] = [
        TxKind::Allocation,
        TxKind::TripPayment,
        TxKind::Purchase,
        TxKind::Sale,
        TxKind::OperatorSettlement,
    ];

    fn code(self) -> u8 {
        match self {
            TxKind::Allocation => 1,
            TxKind::TripPayment => 2,
            TxKind::Purchase => 3,
            TxKind::Sale => 4,
            TxKind::OperatorSettlement => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::Allocation => "allocation",
            TxKind::TripPayment => "trip_payment",
            TxKind::Purchase => "purchase",
            TxKind::Sale => "sale",
            TxKind::OperatorSettlement => "operator_settlement",
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A signed token transfer.
///
/// `tx_id` is the digest of every other field, signature included; the
/// signature is the sender's attestation over the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTransaction {
    pub tx_id: Digest,
    /// Simulated milliseconds since the start of the day.
    pub timestamp_ms: u64,
    pub sender: Address,
    pub receiver: Address,
    pub amount: TokenAmount,
    pub kind: TxKind,
    pub description: Option<String>,
    pub signature: Attestation,
}

impl TokenTransaction {
    /// Builds a transaction signed by `sender`.
    pub fn signed(
        timestamp_ms: u64,
        sender: Address,
        receiver: Address,
        amount: TokenAmount,
        kind: TxKind,
        description: Option<String>,
    ) -> Self {
        let mut tx = Self {
            tx_id: Digest::ZERO,
            timestamp_ms,
            sender,
            receiver,
            amount,
            kind,
            description,
            signature: Attestation::default(),
        };
        tx.signature = KeyedDigest.attest(&tx.sender, &tx.payload_bytes());
        tx.tx_id = tx.compute_id();
        tx
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new("ets.tx.payload.v1");
        e.u64(self.timestamp_ms)
            .str(self.sender.as_str())
            .str(self.receiver.as_str())
            .i64(self.amount.centi())
            .u8(self.kind.code())
            .opt_str(self.description.as_deref());
        e.finish().to_vec()
    }

    pub fn compute_id(&self) -> Digest {
        let mut e = Encoder::new("ets.tx.id.v1");
        e.bytes(&self.payload_bytes()).digest(&self.signature.digest());
        e.hash()
    }

    pub(crate) fn encode_into(&self, e: &mut Encoder) {
        e.digest(&self.tx_id)
            .bytes(&self.payload_bytes())
            .digest(&self.signature.digest());
    }

    pub fn signature_is_valid(&self) -> bool {
        KeyedDigest.verify(&self.sender, &self.payload_bytes(), &self.signature)
    }

    pub fn memo(&self) -> Memo<'_> {
        Memo::parse(self.description.as_deref().unwrap_or(""))
    }

    pub fn touches(&self, address: &Address) -> bool {
        &self.sender == address || &self.receiver == address
    }
}

/// Structured view of a transaction description: `trip=<id>;vehicle=<node id>`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Memo<'a> {
    pub trip: Option<&'a str>,
    pub vehicle: Option<&'a str>,
    pub run: Option<&'a str>,
}

impl<'a> Memo<'a> {
    pub fn parse(s: &'a str) -> Self {
        let mut m = Memo::default();
        for part in s.split(';') {
            match part.split_once('=') {
                Some(("trip", v)) if !v.is_empty() => m.trip = Some(v),
                Some(("vehicle", v)) if !v.is_empty() => m.vehicle = Some(v),
                Some(("run", v)) if !v.is_empty() => m.run = Some(v),
                _ => {}
            }
        }
        m
    }

    pub fn render(&self) -> Option<String> {
        let parts: Vec<String> = [("trip", self.trip), ("vehicle", self.vehicle), ("run", self.run)]
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v}")))
            .collect();
        (!parts.is_empty()).then(|| parts.join(";"))
    }
}
