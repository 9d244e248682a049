//! Digests, canonical encoding and attestations.
//!
//! The digest is SHA-256 throughout. Attestations are keyed digests: the key
//! for an address is derived from the address itself, so any party can check
//! an attestation. This stands in for asymmetric signatures; what the ledger
//! relies on is that attestations bind a signer to a message and that quorums
//! are counted over distinct signers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::identity::Address;

/// Name of the digest algorithm, recorded in run metadata.
pub const HASH_ALGORITHM: &str = "sha256";

pub const DIGEST_LEN: usize = 32;

/// 256-bit digest, hex-lowercase on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid digest {0:?}")]
pub struct ParseDigestError(pub String);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn of(data: &[u8]) -> Self {
        let out = Sha256::digest(data);
        let mut bytes = [0u8; DIGEST_LEN];
        bytes.copy_from_slice(&out);
        Self(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Returns a copy with one bit flipped.
    pub fn with_bit_flipped(mut self, bit: usize) -> Self {
        let bit = bit % (DIGEST_LEN * 8);
        self.0[bit / 8] ^= 1 << (bit % 8);
        self
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != DIGEST_LEN * 2 || s.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(ParseDigestError(s.to_string()));
        }
        let mut bytes = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut bytes).map_err(|_| ParseDigestError(s.to_string()))?;
        Ok(Self(bytes))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Length-prefixed canonical byte encoding used for every hashed structure.
#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(domain: &str) -> Self {
        let mut e = Self { buf: Vec::with_capacity(256) };
        e.str(domain);
        e
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn opt_str(&mut self, v: Option<&str>) -> &mut Self {
        match v {
            Some(s) => self.u8(1).str(s),
            None => self.u8(0),
        }
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn finish(&self) -> &[u8] {
        &self.buf
    }

    pub fn hash(&self) -> Digest {
        Digest::of(&self.buf)
    }
}

/// A signer's proof over a message.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attestation(Digest);

impl Attestation {
    pub fn digest(&self) -> Digest {
        self.0
    }

    pub fn from_digest(d: Digest) -> Self {
        Self(d)
    }
}

impl fmt::Debug for Attestation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Attestation({}..)", &self.0.to_hex()[..12])
    }
}

impl fmt::Display for Attestation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Produces and checks attestations.
pub trait AttestationScheme {
    fn attest(&self, signer: &Address, message: &[u8]) -> Attestation;

    fn verify(&self, signer: &Address, message: &[u8], attestation: &Attestation) -> bool {
        self.attest(signer, message) == *attestation
    }
}

/// Keyed-digest attestations, the desk-scale scheme used by the ledger.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyedDigest;

impl KeyedDigest {
    fn key(signer: &Address) -> Digest {
        Encoder::new("ets.key.v1").str(signer.as_str()).hash()
    }
}

impl AttestationScheme for KeyedDigest {
    fn attest(&self, signer: &Address, message: &[u8]) -> Attestation {
        let mut e = Encoder::new("ets.attest.v1");
        e.digest(&Self::key(signer)).bytes(message);
        Attestation(e.hash())
    }
}
