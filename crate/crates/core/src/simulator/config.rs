use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amount::TokenAmount;
use crate::consensus::{ConsensusConfig, NetworkModel};
use crate::crypto::Digest;
use crate::emissions::{BusChargingPolicy, PricePolicy};
use crate::market::CapPolicy;

/// Where the day's population comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    Files { persons: PathBuf, trips: PathBuf },
    /// `profile` is a JSON profile path; `None` uses the bundled default.
    Synthetic {
        n_users: usize,
        #[serde(default)]
        profile: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapSource {
    /// Sum of every in-boundary trip's token cost, split equally.
    Computed,
    Explicit(CapPolicy),
    /// The same grant for every user.
    PerUser(TokenAmount),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_active_nodes: usize,
    pub proposal_window: usize,
    pub network: NetworkModel,
    /// Accept more byzantine nodes than the protocol tolerates.
    pub allow_unsafe_faults: bool,
    pub price: PricePolicy<f64>,
    pub bus: BusChargingPolicy<f64>,
    pub cap: CapSource,
    pub population: PopulationSource,
    /// Per-km emission factor CSV; `None` uses the bundled synthetic table.
    pub emission_factors: Option<PathBuf>,
    pub out: PathBuf,
    /// Completions within one window share a consensus round. 0 batches
    /// only completions in the same second.
    pub batch_window_s: u32,
    /// Rounds a transaction may take part in before it is dropped.
    pub max_attempts: u32,
    pub freeze_resale: bool,
    /// Sell every remaining balance back to the pool at the end of the day.
    pub end_of_day_sale: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_active_nodes: 4,
            proposal_window: 1,
            network: NetworkModel::default(),
            allow_unsafe_faults: false,
            price: PricePolicy::default(),
            bus: BusChargingPolicy::default(),
            cap: CapSource::Computed,
            population: PopulationSource::Synthetic {
                n_users: 3186,
                profile: None,
            },
            emission_factors: None,
            out: PathBuf::from("out"),
            batch_window_s: 0,
            max_attempts: 5,
            freeze_resale: false,
            end_of_day_sale: false,
        }
    }
}

impl SimulationConfig {
    pub fn from_json(s: &str) -> Result<Self, String> {
        serde_json::from_str(s).map_err(|e| e.to_string())
    }

    pub fn consensus(&self) -> ConsensusConfig {
        ConsensusConfig::new(self.n_active_nodes, self.seed).with_proposal_window(self.proposal_window)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.consensus().validate().map_err(|e| e.to_string())?;
        self.network
            .validate(self.n_active_nodes, self.allow_unsafe_faults)
            .map_err(|e| e.to_string())?;
        self.price.validate()?;
        if !(self.bus.seats_per_bus > 0.0) {
            return Err("seats_per_bus must be positive".into());
        }
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1".into());
        }
        Ok(())
    }

    /// Resolves relative input paths against `base`, usually the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.population {
            PopulationSource::Files { persons, trips } => {
                fix(persons);
                fix(trips);
            }
            PopulationSource::Synthetic { profile, .. } => {
                if let Some(p) = profile {
                    fix(p);
                }
            }
        }
        if let Some(p) = &mut self.emission_factors {
            fix(p);
        }
    }

    /// Digest of the canonical JSON form.
    pub fn hash(&self) -> Digest {
        Digest::of(&serde_json::to_vec(self).expect("config serializes"))
    }
}
