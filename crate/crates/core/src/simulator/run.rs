use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::config::{CapSource, PopulationSource, SimulationConfig};
use super::population::{load_population, Population, PopulationError, SurveyPerson};
use super::synth::{generate_synthetic, SyntheticProfile};
use crate::amount::TokenAmount;
use crate::consensus::{run_round, ConsensusConfig, ConsensusError, NetworkModel, SimTime, TraceRow};
use crate::crypto::Digest;
use crate::emissions::{trip_cost, EmissionError, EmissionFactorTable, FactorUnit, TripRecord};
use crate::identity::{Address, NodeRole, Registry, RegistryError};
use crate::ledger::{canonical_order, Ledger, LedgerError, LedgerPolicy, Memo, Overlay, StateView, TokenTransaction, TxKind};
use crate::market::{
    allocate, compute_cap, operator_liability, operator_settlement, sell_surplus, settle_trip, CapPolicy,
    MarketAccount, MarketError,
};

const US_PER_S: SimTime = 1_000_000;
const MS_PER_S: u64 = 1_000;
const DAY_S: u32 = 86_400;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("reconciliation failed at hour {hour}: {message}")]
    Reconciliation { hour: u32, message: String },
}

/// A failed run together with whatever had been committed.
#[derive(Debug)]
pub struct SimulationFailure {
    pub error: SimulationError,
    pub partial: Option<Ledger>,
}

impl<E: Into<SimulationError>> From<E> for SimulationFailure {
    fn from(e: E) -> Self {
        Self {
            error: e.into(),
            partial: None,
        }
    }
}

/// One committed non-genesis transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub tx_id: Digest,
    pub kind: TxKind,
    pub height: u64,
    pub submitted_us: SimTime,
    pub committed_us: SimTime,
}

impl CommitRecord {
    pub fn latency_ms(&self) -> f64 {
        (self.committed_us - self.submitted_us) as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserWallet {
    pub person: SurveyPerson,
    pub address: Address,
    pub grant: TokenAmount,
    pub balance: TokenAmount,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    pub config_hash: Digest,
    pub population: Population,
    pub registry: Registry,
    pub market: MarketAccount,
    pub ledger: Ledger,
    /// Non-genesis commits in chain order.
    pub commits: Vec<CommitRecord>,
    /// Simulated milliseconds from submission to commit, one per commit.
    pub latency_ms: Vec<f64>,
    /// Committed transactions per simulated minute; at least 1,440 entries.
    pub tx_per_minute: Vec<u32>,
    /// Non-genesis transactions handed to consensus.
    pub submitted: usize,
    pub dropped: usize,
    /// Transactions that became invalid after a dependency was dropped.
    pub rejected: usize,
    /// `commits / submitted`; `None` when nothing was submitted.
    pub throughput: Option<f64>,
    pub wallets: Vec<UserWallet>,
    pub rounds: Vec<TraceRow>,
    pub safety_violations: usize,
    /// Wall-clock compute time; never mixed with simulated time.
    pub compute_time: Duration,
}

/// Loads the configured population and replays it.
pub fn run(config: &SimulationConfig) -> Result<SimulationResult, SimulationFailure> {
    config.validate().map_err(SimulationError::Config)?;
    let population = match &config.population {
        PopulationSource::Files { persons, trips } => load_population(persons, trips)?,
        PopulationSource::Synthetic { n_users, profile } => {
            let profile = match profile {
                Some(path) => fs::read_to_string(path)
                    .map_err(|e| e.to_string())
                    .and_then(|s| SyntheticProfile::from_json(&s))
                    .map_err(|e| SimulationError::Config(format!("profile {}: {e}", path.display())))?,
                None => SyntheticProfile::default(),
            };
            if *n_users == 0 {
                return Err(SimulationError::Config("n_users must be at least 1".into()).into());
            }
            generate_synthetic(config.seed, *n_users, &profile)
        }
    };
    let table = match &config.emission_factors {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| SimulationError::Config(format!("{}: {e}", path.display())))?;
            EmissionFactorTable::from_csv(f, FactorUnit::PerKm)?
        }
        None => EmissionFactorTable::synthetic_default(),
    };
    run_population(config, population, &table)
}

/// Bus trips sharing a `vehicle_class` that is not a factor-table class form
/// one run; any other bus trip is a run of its own.
pub fn bus_run_id(trip: &TripRecord, table: &EmissionFactorTable<f64>) -> String {
    match trip.vehicle_class.as_deref() {
        Some(c) if !table.has_class(c) => c.to_string(),
        _ => trip.trip_id.clone(),
    }
}

fn vehicle_node_id(trip: &TripRecord, run: Option<&str>) -> String {
    format!("{}:{}", trip.mode, run.unwrap_or(&trip.trip_id))
}

struct BusRun {
    riders: usize,
    per_seat: TokenAmount,
    end_s: u32,
}

enum Work {
    Trip { idx: usize, cost: TokenAmount },
    Run { id: String, per_seat: TokenAmount, riders: usize },
}

struct Pending {
    tx: TokenTransaction,
    submitted_us: SimTime,
    attempts: u32,
    genesis: bool,
}

/// Independent bookkeeping checked against the ledger every simulated hour.
#[derive(Default)]
struct Book {
    grants: HashMap<Address, TokenAmount>,
    held: HashMap<Address, TokenAmount>,
    retired: TokenAmount,
    reserve: TokenAmount,
}

struct Engine<'a> {
    config: &'a SimulationConfig,
    consensus: ConsensusConfig,
    network: NetworkModel,
    ledger: Ledger,
    market: MarketAccount,
    pending: Vec<Pending>,
    round: u64,
    free_at: SimTime,
    commits: Vec<CommitRecord>,
    rounds: Vec<TraceRow>,
    submitted: usize,
    dropped: usize,
    rejected: usize,
    safety_violations: usize,
    book: Book,
}

impl Engine<'_> {
    fn submit(&mut self, txs: Vec<TokenTransaction>, at_s: u32, genesis: bool) {
        for tx in txs {
            if !genesis {
                self.submitted += 1;
            }
            self.pending.push(Pending {
                tx,
                submitted_us: SimTime::from(at_s) * US_PER_S,
                attempts: 0,
                genesis,
            });
        }
    }

    /// State as it will be once everything pending commits.
    fn projected(&self) -> Overlay<'_, Ledger> {
        let mut ov = Overlay::new(&self.ledger);
        for p in &self.pending {
            ov.apply_unchecked(&p.tx);
        }
        ov
    }

    /// Runs rounds until the pending pool is committed or dropped.
    fn drain(&mut self, now: SimTime) -> Result<(), SimulationError> {
        while !self.pending.is_empty() {
            self.pending.sort_by(|a, b| canonical_order(&a.tx, &b.tx));
            {
                let mut ov = Overlay::new(&self.ledger);
                let before = self.pending.len();
                self.pending.retain(|p| ov.push(&p.tx).is_ok());
                self.rejected += before - self.pending.len();
            }
            if self.pending.is_empty() {
                break;
            }
            let start = now.max(self.free_at);
            let pool: Vec<TokenTransaction> = self.pending.iter().map(|p| p.tx.clone()).collect();
            let report = run_round(&pool, &mut self.ledger, &self.network, &self.consensus, self.round, start)?;
            self.round += 1;
            self.free_at = report.ended_at + 1;
            self.rounds.push(TraceRow::from(&report));
            if report.safety_violation {
                self.safety_violations += 1;
            }
            if let (Some(block), Some(at)) = (&report.block, report.committed_at) {
                let index: HashMap<Digest, usize> =
                    self.pending.iter().enumerate().map(|(i, p)| (p.tx.tx_id, i)).collect();
                let mut done = vec![false; self.pending.len()];
                for tx in &block.txs {
                    let i = index[&tx.tx_id];
                    done[i] = true;
                    let p = &self.pending[i];
                    self.market.observe_committed(tx);
                    self.book.apply(tx, &self.market);
                    if !p.genesis {
                        self.commits.push(CommitRecord {
                            tx_id: tx.tx_id,
                            kind: tx.kind,
                            height: block.height,
                            submitted_us: p.submitted_us,
                            committed_us: at,
                        });
                    }
                }
                let mut k = 0;
                self.pending.retain(|_| {
                    k += 1;
                    !done[k - 1]
                });
            }
            let max = self.config.max_attempts;
            let mut dropped = 0;
            self.pending.retain_mut(|p| {
                p.attempts += 1;
                let keep = p.attempts < max;
                if !keep && !p.genesis {
                    dropped += 1;
                }
                keep
            });
            self.dropped += dropped;
        }
        Ok(())
    }

    fn reconcile(&self, hour: u32) -> Result<(), SimulationError> {
        let fail = |message: String| Err(SimulationError::Reconciliation { hour, message });
        let held: TokenAmount = self.ledger.wallets().values().copied().sum();
        if held != self.ledger.minted() {
            return fail(format!("wallets hold {held}, minted {}", self.ledger.minted()));
        }
        let retired = self.ledger.balance_of(&self.market.retirement);
        if retired != self.book.retired {
            return fail(format!("retirement holds {retired}, payments total {}", self.book.retired));
        }
        let fiat = &self.market.fiat;
        let returned = if self.market.resale_reserve.is_some() {
            TokenAmount::ZERO
        } else {
            fiat.sold
        };
        let pool = self.ledger.balance_of(&self.market.pool);
        let expected_pool = self.book.reserve - fiat.purchased + returned;
        if pool != expected_pool {
            return fail(format!("pool holds {pool}, expected {expected_pool}"));
        }
        for (addr, expected) in &self.book.held {
            let actual = self.ledger.balance_of(addr);
            if actual != *expected {
                return fail(format!("{addr} holds {actual}, book says {expected}"));
            }
        }
        Ok(())
    }
}

impl Book {
    fn apply(&mut self, tx: &TokenTransaction, market: &MarketAccount) {
        let is_market = |a: &Address| {
            a == &market.issuer || a == &market.pool || a == &market.retirement || Some(a) == market.resale_reserve.as_ref()
        };
        match tx.kind {
            TxKind::Allocation if tx.receiver == market.pool => self.reserve += tx.amount,
            TxKind::Allocation => *self.grants.entry(tx.receiver.clone()).or_insert(TokenAmount::ZERO) += tx.amount,
            TxKind::TripPayment | TxKind::OperatorSettlement => self.retired += tx.amount,
            TxKind::Purchase | TxKind::Sale => {}
        }
        if tx.kind != TxKind::Allocation && !is_market(&tx.sender) {
            *self.held.entry(tx.sender.clone()).or_insert(TokenAmount::ZERO) -= tx.amount;
        }
        if !is_market(&tx.receiver) {
            *self.held.entry(tx.receiver.clone()).or_insert(TokenAmount::ZERO) += tx.amount;
        }
    }
}

/// Replays `population` through emissions, market, ledger and consensus.
pub fn run_population(
    config: &SimulationConfig,
    population: Population,
    table: &EmissionFactorTable<f64>,
) -> Result<SimulationResult, SimulationFailure> {
    let started = Instant::now();
    config.validate().map_err(SimulationError::Config)?;

    let mut registry = Registry::new();
    let validators: Vec<Address> = (0..config.n_active_nodes)
        .map(|i| registry.ensure(&format!("validator-{i}"), NodeRole::ActiveValidator))
        .collect::<Result<_, _>>()?;
    let market = MarketAccount::register(&mut registry, config.price, config.freeze_resale)?;
    let users: Vec<Address> = population
        .persons
        .iter()
        .map(|p| registry.ensure(&p.user_id, NodeRole::User))
        .collect::<Result<_, _>>()?;
    let address_of: HashMap<&str, &Address> =
        population.persons.iter().map(|p| p.user_id.as_str()).zip(&users).collect();

    let trips: Vec<&TripRecord> = population.trips.iter().filter(|t| t.within_boundary()).collect();
    let mut costs = Vec::with_capacity(trips.len());
    let mut runs: BTreeMap<String, BusRun> = BTreeMap::new();
    for t in &trips {
        let cost = trip_cost(t, table, &config.bus, &config.price)?.tokens;
        costs.push(cost);
        if t.mode.is_bus() && cost.is_positive() {
            let r = runs.entry(bus_run_id(t, table)).or_insert(BusRun {
                riders: 0,
                per_seat: TokenAmount::ZERO,
                end_s: 0,
            });
            r.riders += 1;
            r.per_seat = r.per_seat.max(cost);
            r.end_s = r.end_s.max(t.end_s);
        }
    }
    let liability: TokenAmount = runs
        .values()
        .map(|r| operator_liability(r.per_seat, r.riders as f64, &config.bus))
        .sum();

    let cap = match &config.cap {
        CapSource::Computed => {
            let owned: Vec<TripRecord> = trips.iter().map(|t| (*t).clone()).collect();
            compute_cap(&owned, table, &config.bus, &config.price)?
        }
        CapSource::Explicit(p) => p.clone(),
        CapSource::PerUser(g) => CapPolicy::equal_split(g.times(users.len() as i64)),
    };

    let policy = LedgerPolicy::new(market.issuer.clone(), Some(market.retirement.clone()), validators);
    let mut engine = Engine {
        config,
        consensus: config.consensus(),
        network: config.network.clone(),
        ledger: Ledger::new(policy),
        market,
        pending: Vec::new(),
        round: 0,
        free_at: 0,
        commits: Vec::new(),
        rounds: Vec::new(),
        submitted: 0,
        dropped: 0,
        rejected: 0,
        safety_violations: 0,
        book: Book::default(),
    };

    let outcome = (|| -> Result<(), SimulationError> {
        if !users.is_empty() {
            let mut genesis = allocate(&users, &cap, &engine.market, 0)?;
            genesis.extend(engine.market.reserve_issuance(cap.cap + liability, 0));
            engine.submit(genesis, 0, true);
            engine.drain(0)?;
        }

        let window = config.batch_window_s.max(1);
        let mut batches: BTreeMap<u32, Vec<(u32, Work)>> = BTreeMap::new();
        for (idx, (t, cost)) in trips.iter().zip(&costs).enumerate() {
            if cost.is_positive() {
                batches.entry(t.end_s / window).or_default().push((t.end_s, Work::Trip { idx, cost: *cost }));
            }
        }
        for (id, r) in &runs {
            batches.entry(r.end_s / window).or_default().push((
                r.end_s,
                Work::Run {
                    id: id.clone(),
                    per_seat: r.per_seat,
                    riders: r.riders,
                },
            ));
        }

        let mut checked_hour = 0;
        let mut last_s = 0;
        for (_, work) in batches {
            let at_s = work.iter().map(|(s, _)| *s).max().expect("batches are non-empty");
            while checked_hour < at_s / 3600 {
                checked_hour += 1;
                engine.reconcile(checked_hour)?;
            }
            let mut txs = Vec::new();
            {
                let mut state = engine.projected();
                for (end_s, w) in &work {
                    let ts = u64::from(*end_s) * MS_PER_S;
                    let new = match w {
                        Work::Trip { idx, cost } => {
                            let t = trips[*idx];
                            let run = t.mode.is_bus().then(|| bus_run_id(t, table));
                            let memo = Memo {
                                trip: Some(&t.trip_id),
                                vehicle: Some(&vehicle_node_id(t, run.as_deref())),
                                run: None,
                            }
                            .render()
                            .expect("memo has fields");
                            settle_trip(address_of[t.user_id.as_str()], *cost, &memo, &state, &engine.market, ts)?
                        }
                        Work::Run { id, per_seat, riders } => operator_settlement(
                            *per_seat,
                            *riders as f64,
                            &config.bus,
                            id,
                            &state,
                            &engine.market,
                            ts,
                        )?,
                    };
                    for tx in &new {
                        state.apply_unchecked(tx);
                    }
                    txs.extend(new);
                }
            }
            engine.submit(txs, at_s, false);
            engine.drain(SimTime::from(at_s) * US_PER_S)?;
            last_s = at_s;
        }

        if config.end_of_day_sale {
            let at_s = last_s.max(DAY_S);
            let mut sales = Vec::new();
            for u in &users {
                let bal = engine.ledger.balance_of(u);
                if bal.is_positive() {
                    sales.push(sell_surplus(u, bal, &engine.ledger, &engine.market, u64::from(at_s) * MS_PER_S)?);
                }
            }
            engine.submit(sales, at_s, false);
            engine.drain(SimTime::from(at_s) * US_PER_S)?;
            last_s = at_s;
        }
        engine.reconcile(last_s.div_ceil(3600).max(checked_hour))
    })();

    if let Err(error) = outcome {
        return Err(SimulationFailure {
            error,
            partial: Some(engine.ledger),
        });
    }

    for (p, u) in population.persons.iter().zip(&users) {
        if let Some(md) = registry.get_mut_metadata(u) {
            md.insert("age_band".into(), p.age_band.to_string());
        }
    }
    for t in &trips {
        if t.mode.is_motorized() {
            let run = t.mode.is_bus().then(|| bus_run_id(t, table));
            let _ = registry.ensure(&vehicle_node_id(t, run.as_deref()), NodeRole::Vehicle);
        }
    }

    let wallets = population
        .persons
        .iter()
        .zip(&users)
        .map(|(p, a)| UserWallet {
            person: p.clone(),
            address: a.clone(),
            grant: engine.book.grants.get(a).copied().unwrap_or(TokenAmount::ZERO),
            balance: engine.ledger.balance_of(a),
        })
        .collect();
    let latency_ms = engine.commits.iter().map(CommitRecord::latency_ms).collect();
    let tx_per_minute = per_minute(&engine.commits);
    let throughput = (engine.submitted > 0).then(|| engine.commits.len() as f64 / engine.submitted as f64);

    Ok(SimulationResult {
        config: config.clone(),
        config_hash: config.hash(),
        population,
        registry,
        market: engine.market,
        ledger: engine.ledger,
        commits: engine.commits,
        latency_ms,
        tx_per_minute,
        submitted: engine.submitted,
        dropped: engine.dropped,
        rejected: engine.rejected,
        throughput,
        wallets,
        rounds: engine.rounds,
        safety_violations: engine.safety_violations,
        compute_time: started.elapsed(),
    })
}

/// Commits per simulated minute, covering at least one full day.
pub fn per_minute(commits: &[CommitRecord]) -> Vec<u32> {
    let minute = |c: &CommitRecord| (c.committed_us / (60 * US_PER_S)) as usize;
    let len = commits.iter().map(minute).max().map_or(0, |m| m + 1).max(DAY_S as usize / 60);
    let mut series = vec![0; len];
    for c in commits {
        series[minute(c)] += 1;
    }
    series
}
