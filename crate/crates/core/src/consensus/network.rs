use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{max_faulty, ConsensusError, Vote};
use crate::ledger::Block;

/// Simulated time in microseconds.
pub type SimTime = u64;

pub const US_PER_MS: f64 = 1000.0;

/// Per-link one-way latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DelaySpec", into = "DelaySpec")]
pub enum DelayModel {
    Fixed { ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
}

/// JSON form: a number for a fixed delay, `[lo, hi]` for a uniform one.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DelaySpec {
    Fixed(f64),
    Uniform([f64; 2]),
}

impl TryFrom<DelaySpec> for DelayModel {
    type Error = String;

    fn try_from(s: DelaySpec) -> Result<Self, Self::Error> {
        let m = match s {
            DelaySpec::Fixed(ms) => DelayModel::Fixed { ms },
            DelaySpec::Uniform([lo_ms, hi_ms]) => DelayModel::Uniform { lo_ms, hi_ms },
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<DelayModel> for DelaySpec {
    fn from(m: DelayModel) -> Self {
        match m {
            DelayModel::Fixed { ms } => DelaySpec::Fixed(ms),
            DelayModel::Uniform { lo_ms, hi_ms } => DelaySpec::Uniform([lo_ms, hi_ms]),
        }
    }
}

fn ms_to_us(ms: f64) -> SimTime {
    (ms * US_PER_MS).round() as SimTime
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform {
            lo_ms: 5.0,
            hi_ms: 30.0,
        }
    }
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            DelayModel::Fixed { ms } => ms.is_finite() && ms >= 0.0,
            DelayModel::Uniform { lo_ms, hi_ms } => {
                lo_ms.is_finite() && hi_ms.is_finite() && 0.0 <= lo_ms && lo_ms <= hi_ms
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid delay model {self:?}"))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimTime {
        match *self {
            DelayModel::Fixed { ms } => ms_to_us(ms),
            DelayModel::Uniform { lo_ms, hi_ms } => {
                rng.random_range(ms_to_us(lo_ms)..=ms_to_us(hi_ms))
            }
        }
    }

    pub fn max_us(&self) -> SimTime {
        match *self {
            DelayModel::Fixed { ms } => ms_to_us(ms),
            DelayModel::Uniform { hi_ms, .. } => ms_to_us(hi_ms),
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            DelayModel::Fixed { ms } => ms,
            DelayModel::Uniform { lo_ms, hi_ms } => (lo_ms + hi_ms) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Sends nothing.
    Silent,
    /// Proposes conflicting blocks to different peers and votes for two hashes.
    Equivocate,
    /// Follows the protocol but every message arrives after the round deadline.
    Delay,
}

impl Behavior {
    pub const ALL: [Behavior; 3] = [Behavior::Silent, Behavior::Equivocate, Behavior::Delay];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Silent => "silent",
            Behavior::Equivocate => "equivocate",
            Behavior::Delay => "delay",
        }
    }
}

impl std::str::FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown behavior {s:?} (expected silent, equivocate or delay)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzantineSpec {
    pub node: usize,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub delay: DelayModel,
    pub drop_probability: f64,
    #[serde(default)]
    pub byzantine: Vec<ByzantineSpec>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            delay: DelayModel::default(),
            drop_probability: 0.0,
            byzantine: Vec::new(),
        }
    }
}

impl NetworkModel {
    pub fn reliable(delay: DelayModel) -> Self {
        Self {
            delay,
            ..Self::default()
        }
    }

    /// Checks the model for `n_active` nodes. More than ⌊(n−1)/3⌋ byzantine
    /// nodes is accepted only with `allow_unsafe`.
    pub fn validate(&self, n_active: usize, allow_unsafe: bool) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::InvalidConfig(m));
        self.delay.validate().map_err(ConsensusError::InvalidConfig)?;
        if !(0.0..1.0).contains(&self.drop_probability) {
            return bad(format!("drop_probability {} not in [0, 1)", self.drop_probability));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.byzantine {
            if b.node >= n_active {
                return bad(format!("byzantine node {} out of range 0..{n_active}", b.node));
            }
            if !seen.insert(b.node) {
                return bad(format!("byzantine node {} listed twice", b.node));
            }
        }
        let f = max_faulty(n_active);
        if self.byzantine.len() > f && !allow_unsafe {
            return Err(ConsensusError::UnsafeFaults {
                byzantine: self.byzantine.len(),
                max_faulty: f,
            });
        }
        Ok(())
    }

    pub fn behavior_of(&self, node: usize) -> Option<Behavior> {
        self.byzantine
            .iter()
            .find(|b| b.node == node)
            .map(|b| b.behavior)
    }

    /// Twice the largest configured link delay: one hop for the proposal and
    /// one for the votes.
    pub fn round_timeout_us(&self) -> SimTime {
        2 * self.delay.max_us()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Proposal(Arc<Block>),
    Vote(Vote),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub sent_at: SimTime,
    pub payload: Payload,
}

/// Deterministic per-round generator.
pub fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

/// Delivery time for each message, or `None` if it is dropped. Messages a node
/// sends to itself arrive instantly and are never dropped. Senders with
/// [`Behavior::Delay`] have every message pushed past the round deadline.
pub fn simulate_network<R: Rng + ?Sized>(
    messages: &[Envelope],
    network: &NetworkModel,
    rng: &mut R,
) -> Vec<Option<SimTime>> {
    messages
        .iter()
        .map(|m| {
            if m.from == m.to {
                return Some(m.sent_at);
            }
            if network.drop_probability > 0.0 && rng.random_bool(network.drop_probability) {
                return None;
            }
            let mut delay = network.delay.sample(rng);
            if network.behavior_of(m.from) == Some(Behavior::Delay) {
                delay += network.round_timeout_us() + 1;
            }
            Some(m.sent_at + delay)
        })
        .collect()
}

/// Fault-injection scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub n_active: usize,
    pub delays_ms: DelayModel,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub byzantine: Vec<ByzantineSpec>,
    pub seed: u64,
}

impl FaultScenario {
    pub fn network(&self) -> NetworkModel {
        NetworkModel {
            delay: self.delays_ms,
            drop_probability: self.drop_probability,
            byzantine: self.byzantine.clone(),
        }
    }
}
