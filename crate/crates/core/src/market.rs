//! Cap-and-trade mechanics on top of the ledger.
//!
//! The market owns four accounts. The issuer mints the day's allocations and
//! the pool's reserve. The pool sells tokens to users whose balance cannot
//! cover a trip and buys back surplus at par. Trip payments go to the
//! retirement account, which can never spend. The operator pays for the empty
//! seats of bus runs when the bus policy says so.
//!
//! Functions here only *create* transactions; balances are read through a
//! [`StateView`], which should include transactions still awaiting commit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::TokenAmount;
use crate::emissions::{trip_cost, BusChargingPolicy, EmissionError, EmissionFactorTable, PricePolicy, TripRecord};
use crate::identity::{Address, NodeRole, Registry, RegistryError};
use crate::ledger::{StateView, TokenTransaction, TxKind};
use crate::num::{round_half_even, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "grants", rename_all = "snake_case")]
pub enum Allocation {
    EqualSplit,
    /// Explicit grant per user address; must sum to the cap.
    Custom(BTreeMap<Address, TokenAmount>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapPolicy {
    pub cap: TokenAmount,
    pub allocation: Allocation,
    /// Fractional cap reduction per period.
    #[serde(default)]
    pub reduction_rate: f64,
}

impl CapPolicy {
    pub fn equal_split(cap: TokenAmount) -> Self {
        Self {
            cap,
            allocation: Allocation::EqualSplit,
            reduction_rate: 0.0,
        }
    }

    /// Cap after `period` reductions, rounded half-to-even to the centi-token.
    pub fn cap_for_period(&self, period: u32) -> TokenAmount {
        if period == 0 || self.reduction_rate == 0.0 {
            return self.cap;
        }
        let factor = (1.0 - self.reduction_rate).powi(period as i32);
        TokenAmount::from_centi(round_half_even(self.cap.centi() as f64 * factor) as i64)
    }

    /// Per-user grant under an equal split, rounded to the centi-token.
    pub fn grant_for(&self, n_users: usize) -> Option<TokenAmount> {
        TokenAmount::mean_rounded(self.cap, n_users)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("cannot allocate to an empty population")]
    EmptyPopulation,
    #[error("market pool holds {available} but {needed} is needed")]
    MarketPoolExhausted { needed: TokenAmount, available: TokenAmount },
    #[error("amount must be positive, got {0}")]
    NonPositiveAmount(TokenAmount),
    #[error("balance {balance} is less than {requested}")]
    InsufficientTokens { balance: TokenAmount, requested: TokenAmount },
    #[error("custom allocation table: {0}")]
    CustomTable(String),
    #[error("negative cap {0}")]
    NegativeCap(TokenAmount),
    #[error(transparent)]
    Emission(#[from] EmissionError),
}

/// Fiat side of market activity, at par. Bookkeeping only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FiatLedger {
    /// Paid by users and the operator for purchased tokens.
    pub purchases_cad: f64,
    /// Paid out to users for sold tokens.
    pub sales_cad: f64,
    pub purchased: TokenAmount,
    pub sold: TokenAmount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketAccount {
    pub issuer: Address,
    pub pool: Address,
    pub retirement: Address,
    pub operator: Address,
    /// Receives sold tokens when resale is frozen, keeping them out of the pool.
    pub resale_reserve: Option<Address>,
    pub price: PricePolicy<f64>,
    pub fiat: FiatLedger,
}

impl MarketAccount {
    pub const ISSUER_ID: &'static str = "market:issuer";
    pub const POOL_ID: &'static str = "market:pool";
    pub const RETIREMENT_ID: &'static str = "market:retirement";
    pub const RESALE_ID: &'static str = "market:resale";
    pub const OPERATOR_ID: &'static str = "operator:transit";

    /// Registers the market's accounts. With `freeze_resale`, sold tokens are
    /// parked in a reserve the pool cannot sell from.
    pub fn register(
        registry: &mut Registry,
        price: PricePolicy<f64>,
        freeze_resale: bool,
    ) -> Result<Self, RegistryError> {
        Ok(Self {
            issuer: registry.ensure(Self::ISSUER_ID, NodeRole::Market)?,
            pool: registry.ensure(Self::POOL_ID, NodeRole::Market)?,
            retirement: registry.ensure(Self::RETIREMENT_ID, NodeRole::Market)?,
            operator: registry.ensure(Self::OPERATOR_ID, NodeRole::Operator)?,
            resale_reserve: if freeze_resale {
                Some(registry.ensure(Self::RESALE_ID, NodeRole::Market)?)
            } else {
                None
            },
            price,
            fiat: FiatLedger::default(),
        })
    }

    pub fn sale_account(&self) -> &Address {
        self.resale_reserve.as_ref().unwrap_or(&self.pool)
    }

    /// Tokens the pool can sell right now.
    pub fn available<S: StateView + ?Sized>(&self, state: &S) -> TokenAmount {
        state.balance_of(&self.pool)
    }

    /// Mints the pool's reserve; goes into the genesis block.
    pub fn reserve_issuance(&self, amount: TokenAmount, timestamp_ms: u64) -> Option<TokenTransaction> {
        amount.is_positive().then(|| {
            TokenTransaction::signed(
                timestamp_ms,
                self.issuer.clone(),
                self.pool.clone(),
                amount,
                TxKind::Allocation,
                Some("reserve".into()),
            )
        })
    }

    /// Updates the fiat books for a committed transaction.
    pub fn observe_committed(&mut self, tx: &TokenTransaction) {
        let cad = tx.amount.to_cad(self.price.tokens_per_cad);
        match tx.kind {
            TxKind::Purchase if tx.sender == self.pool => {
                self.fiat.purchases_cad += cad;
                self.fiat.purchased += tx.amount;
            }
            TxKind::Sale if &tx.receiver == self.sale_account() => {
                self.fiat.sales_cad += cad;
                self.fiat.sold += tx.amount;
            }
            _ => {}
        }
    }

    fn purchase(&self, buyer: &Address, amount: TokenAmount, timestamp_ms: u64, memo: Option<String>) -> TokenTransaction {
        TokenTransaction::signed(timestamp_ms, self.pool.clone(), buyer.clone(), amount, TxKind::Purchase, memo)
    }
}

/// Sums the per-person token cost of every trip. Callers pass only trips
/// inside the system boundary.
pub fn compute_cap<T: Scalar>(
    trips: &[TripRecord],
    table: &EmissionFactorTable<T>,
    bus: &BusChargingPolicy<T>,
    price: &PricePolicy<T>,
) -> Result<CapPolicy, MarketError> {
    let mut cap = TokenAmount::ZERO;
    for t in trips {
        cap += trip_cost(t, table, bus, price)?.tokens;
    }
    Ok(CapPolicy::equal_split(cap))
}

/// One allocation per user, summing to the cap exactly. Under an equal split
/// the remainder centi-tokens go to the first users.
pub fn allocate(
    users: &[Address],
    policy: &CapPolicy,
    market: &MarketAccount,
    timestamp_ms: u64,
) -> Result<Vec<TokenTransaction>, MarketError> {
    if users.is_empty() {
        return Err(MarketError::EmptyPopulation);
    }
    if policy.cap.is_negative() {
        return Err(MarketError::NegativeCap(policy.cap));
    }
    let grants: Vec<TokenAmount> = match &policy.allocation {
        Allocation::EqualSplit => policy.cap.split_even(users.len()),
        Allocation::Custom(table) => {
            let grants = users
                .iter()
                .map(|u| {
                    table
                        .get(u)
                        .copied()
                        .ok_or_else(|| MarketError::CustomTable(format!("no grant for {u}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let sum: TokenAmount = grants.iter().copied().sum();
            if sum != policy.cap || table.len() != users.len() {
                return Err(MarketError::CustomTable(format!(
                    "grants sum to {sum} over {} entries, cap is {} over {} users",
                    table.len(),
                    policy.cap,
                    users.len()
                )));
            }
            grants
        }
    };
    Ok(users
        .iter()
        .zip(grants)
        .filter(|(_, g)| g.is_positive())
        .map(|(u, g)| {
            TokenTransaction::signed(timestamp_ms, market.issuer.clone(), u.clone(), g, TxKind::Allocation, None)
        })
        .collect())
}

/// Pays `cost` for a finished trip. A shortfall is bought from the pool first,
/// stamped one millisecond before the payment so it orders ahead of it.
/// Zero-cost trips produce no transactions.
pub fn settle_trip<S: StateView + ?Sized>(
    user: &Address,
    cost: TokenAmount,
    memo: &str,
    state: &S,
    market: &MarketAccount,
    timestamp_ms: u64,
) -> Result<Vec<TokenTransaction>, MarketError> {
    if cost.is_negative() {
        return Err(MarketError::NonPositiveAmount(cost));
    }
    if !cost.is_positive() {
        return Ok(Vec::new());
    }
    let balance = state.balance_of(user);
    let shortfall = (cost - balance).max(TokenAmount::ZERO);
    let pay_at = timestamp_ms.max(1);
    let mut txs = Vec::with_capacity(2);
    if shortfall.is_positive() {
        let available = market.available(state);
        if available < shortfall {
            return Err(MarketError::MarketPoolExhausted {
                needed: shortfall,
                available,
            });
        }
        txs.push(market.purchase(user, shortfall, pay_at - 1, Some(memo.to_string())));
    }
    txs.push(TokenTransaction::signed(
        pay_at,
        user.clone(),
        market.retirement.clone(),
        cost,
        TxKind::TripPayment,
        Some(memo.to_string()),
    ));
    Ok(txs)
}

/// Sells `amount` back to the market at par.
pub fn sell_surplus<S: StateView + ?Sized>(
    user: &Address,
    amount: TokenAmount,
    state: &S,
    market: &MarketAccount,
    timestamp_ms: u64,
) -> Result<TokenTransaction, MarketError> {
    if !amount.is_positive() {
        return Err(MarketError::NonPositiveAmount(amount));
    }
    let balance = state.balance_of(user);
    if balance < amount {
        return Err(MarketError::InsufficientTokens {
            balance,
            requested: amount,
        });
    }
    Ok(TokenTransaction::signed(
        timestamp_ms,
        user.clone(),
        market.sale_account().clone(),
        amount,
        TxKind::Sale,
        None,
    ))
}

/// Tokens owed by the operator for the empty seats of one bus run:
/// `(seats_per_bus − occupied) × per_seat_cost`, floored at zero.
pub fn operator_liability(per_seat_cost: TokenAmount, occupied_seats: f64, policy: &BusChargingPolicy<f64>) -> TokenAmount {
    if !policy.operator_pays_remainder {
        return TokenAmount::ZERO;
    }
    let empty = (policy.seats_per_bus - occupied_seats).max(0.0);
    TokenAmount::from_centi(round_half_even(empty * per_seat_cost.centi() as f64) as i64)
}

/// Settles one bus run's empty seats. The operator buys any shortfall from the
/// pool first. Returns nothing when the policy is off or no seat is empty.
pub fn operator_settlement<S: StateView + ?Sized>(
    per_seat_cost: TokenAmount,
    occupied_seats: f64,
    policy: &BusChargingPolicy<f64>,
    run: &str,
    state: &S,
    market: &MarketAccount,
    timestamp_ms: u64,
) -> Result<Vec<TokenTransaction>, MarketError> {
    let owed = operator_liability(per_seat_cost, occupied_seats, policy);
    if !owed.is_positive() {
        return Ok(Vec::new());
    }
    let memo = format!("run={run}");
    let balance = state.balance_of(&market.operator);
    let shortfall = (owed - balance).max(TokenAmount::ZERO);
    let pay_at = timestamp_ms.max(1);
    let mut txs = Vec::with_capacity(2);
    if shortfall.is_positive() {
        let available = market.available(state);
        if available < shortfall {
            return Err(MarketError::MarketPoolExhausted {
                needed: shortfall,
                available,
            });
        }
        txs.push(market.purchase(&market.operator, shortfall, pay_at - 1, Some(memo.clone())));
    }
    txs.push(TokenTransaction::signed(
        pay_at,
        market.operator.clone(),
        market.retirement.clone(),
        owed,
        TxKind::OperatorSettlement,
        Some(memo),
    ));
    Ok(txs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::Mode;
    use crate::ledger::{build_block, Ledger, LedgerPolicy, Overlay};
    use proptest::prelude::*;

    fn amt(s: &str) -> TokenAmount {
        s.parse().unwrap()
    }

    struct World {
        market: MarketAccount,
        ledger: Ledger,
        validators: Vec<Address>,
    }

    impl World {
        /// Market with a funded pool and one user per entry of `grants`.
        fn new(pool: &str, grants: &[&str]) -> (Self, Vec<Address>) {
            let mut reg = Registry::new();
            let market = MarketAccount::register(&mut reg, PricePolicy::default(), false).unwrap();
            let validators: Vec<Address> = (0..4)
                .map(|i| reg.ensure(&format!("validator-{i}"), NodeRole::ActiveValidator).unwrap())
                .collect();
            let users: Vec<Address> = (0..grants.len())
                .map(|i| reg.ensure(&format!("U{i}"), NodeRole::User).unwrap())
                .collect();
            let policy = LedgerPolicy::new(market.issuer.clone(), Some(market.retirement.clone()), validators.clone());
            let mut genesis: Vec<TokenTransaction> = market.reserve_issuance(amt(pool), 0).into_iter().collect();
            for (u, g) in users.iter().zip(grants).filter(|(_, g)| amt(g).is_positive()) {
                genesis.push(TokenTransaction::signed(0, market.issuer.clone(), u.clone(), amt(g), TxKind::Allocation, None));
            }
            let mut w = Self {
                market,
                ledger: Ledger::new(policy),
                validators,
            };
            w.commit(&genesis);
            (w, users)
        }

        fn commit(&mut self, txs: &[TokenTransaction]) {
            let mut b = build_block(txs, &self.validators[0], self.ledger.head(), &self.ledger).unwrap();
            b.sign_with(&self.validators);
            for tx in &b.txs {
                self.market.observe_committed(tx);
            }
            self.ledger.commit(b).unwrap();
        }

        fn bal(&self, a: &Address) -> TokenAmount {
            self.ledger.balance_of(a)
        }
    }

    fn trip(user: &str, mode: Mode, distance_m: f64, passengers: u32) -> TripRecord {
        TripRecord {
            trip_id: format!("{user}-t"),
            user_id: user.into(),
            mode,
            start_s: 0,
            end_s: 1800,
            distance_m,
            passengers,
            vehicle_class: None,
            origin_ok: true,
            destination_ok: true,
        }
    }

    #[test]
    fn cap_is_the_sum_of_trip_costs() {
        // flat 100 g/km; 50 km costs 5,000 g = 1,000.00 tokens, 25 km 500.00
        let table = EmissionFactorTable::new(vec![crate::emissions::FactorRow {
            class: "car".into(),
            v_lo_kmh: 0.0,
            v_hi_kmh: 500.0,
            g_per_km: 100.0,
        }])
        .unwrap();
        let trips = [trip("a", Mode::Car, 50_000.0, 10), trip("b", Mode::Car, 25_000.0, 10)];
        let p = compute_cap(&trips, &table, &BusChargingPolicy::default(), &PricePolicy::default()).unwrap();
        assert_eq!(p.cap, amt("150.00"));
        assert_eq!(p.grant_for(2), Some(amt("75.00")));

        let walk = [trip("a", Mode::Walk, 1000.0, 1)];
        let p = compute_cap(&walk, &table, &BusChargingPolicy::default(), &PricePolicy::default()).unwrap();
        assert_eq!(p.cap, TokenAmount::ZERO);
        assert_eq!(p.grant_for(1), Some(TokenAmount::ZERO));
    }

    #[test]
    fn allocation_reconciles_to_the_cap() {
        let mut reg = Registry::new();
        let m = MarketAccount::register(&mut reg, PricePolicy::default(), false).unwrap();
        let users: Vec<Address> = (0..3).map(|i| Address::derive(&format!("u{i}"))).collect();
        let txs = allocate(&users, &CapPolicy::equal_split(amt("100.00")), &m, 0).unwrap();
        let grants: Vec<String> = txs.iter().map(|t| t.amount.to_string()).collect();
        assert_eq!(grants, ["33.34", "33.33", "33.33"]);
        assert!(txs.iter().all(|t| t.kind == TxKind::Allocation && t.sender == m.issuer));

        let one = allocate(&users[..1], &CapPolicy::equal_split(amt("12.34")), &m, 0).unwrap();
        assert_eq!(one[0].amount, amt("12.34"));
        assert_eq!(
            allocate(&[], &CapPolicy::equal_split(amt("1.00")), &m, 0),
            Err(MarketError::EmptyPopulation)
        );
    }

    #[test]
    fn paper_scale_genesis_total() {
        let mut reg = Registry::new();
        let m = MarketAccount::register(&mut reg, PricePolicy::default(), false).unwrap();
        let users: Vec<Address> = (0..3187).map(|i| Address::derive(&format!("u{i}"))).collect();
        let cap = amt("493.79").times(3187);
        assert_eq!(cap, amt("1,573,708.73"));
        let txs = allocate(&users, &CapPolicy::equal_split(cap), &m, 0).unwrap();
        assert_eq!(txs.len(), 3187);
        assert!(txs.iter().all(|t| t.amount == amt("493.79")));
        assert_eq!(txs.iter().map(|t| t.amount).sum::<TokenAmount>(), cap);
    }

    #[test]
    fn custom_allocation_must_cover_everyone_and_sum_to_cap() {
        let mut reg = Registry::new();
        let m = MarketAccount::register(&mut reg, PricePolicy::default(), false).unwrap();
        let users: Vec<Address> = (0..2).map(|i| Address::derive(&format!("u{i}"))).collect();
        let table: BTreeMap<Address, TokenAmount> =
            [(users[0].clone(), amt("70.00")), (users[1].clone(), amt("30.00"))].into();
        let policy = CapPolicy {
            cap: amt("100.00"),
            allocation: Allocation::Custom(table.clone()),
            reduction_rate: 0.0,
        };
        let txs = allocate(&users, &policy, &m, 0).unwrap();
        assert_eq!(txs[0].amount, amt("70.00"));
        let short = CapPolicy { cap: amt("90.00"), ..policy.clone() };
        assert!(matches!(allocate(&users, &short, &m, 0), Err(MarketError::CustomTable(_))));
        assert!(matches!(allocate(&users[..1], &policy, &m, 0), Err(MarketError::CustomTable(_))));
    }

    #[test]
    fn cap_reduction_compounds_per_period() {
        let p = CapPolicy {
            reduction_rate: 0.1,
            ..CapPolicy::equal_split(amt("1000.00"))
        };
        assert_eq!(p.cap_for_period(0), amt("1000.00"));
        assert_eq!(p.cap_for_period(1), amt("900.00"));
        assert_eq!(p.cap_for_period(2), amt("810.00"));
    }

    #[test]
    fn payment_within_balance() {
        let (mut w, users) = World::new("1000.00", &["493.79"]);
        let txs = settle_trip(&users[0], amt("206.00"), "trip=t1", &w.ledger, &w.market, 5000).unwrap();
        assert_eq!(txs.len(), 1);
        assert_eq!(txs[0].kind, TxKind::TripPayment);
        w.commit(&txs);
        assert_eq!(w.bal(&users[0]), amt("287.79"));
        assert_eq!(w.bal(&w.market.retirement.clone()), amt("206.00"));
    }

    #[test]
    fn shortfall_is_bought_before_paying() {
        let (mut w, users) = World::new("1000.00", &["10.00"]);
        let txs = settle_trip(&users[0], amt("55.24"), "trip=t1", &w.ledger, &w.market, 5000).unwrap();
        assert_eq!(txs.len(), 2);
        assert_eq!((txs[0].kind, txs[0].amount), (TxKind::Purchase, amt("45.24")));
        assert_eq!((txs[1].kind, txs[1].amount), (TxKind::TripPayment, amt("55.24")));
        assert!(txs[0].timestamp_ms < txs[1].timestamp_ms);
        w.commit(&txs);
        assert_eq!(w.bal(&users[0]), TokenAmount::ZERO);
        assert_eq!(w.bal(&w.market.pool.clone()), amt("954.76"));
        // net position: grant − cost
        assert_eq!(amt("10.00") - amt("55.24"), amt("-45.24"));
        assert_eq!(w.market.fiat.purchased, amt("45.24"));
        assert!((w.market.fiat.purchases_cad - 0.004524).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_settles_nothing_and_exhausted_pool_errors() {
        let (w, users) = World::new("1.00", &["10.00"]);
        assert!(settle_trip(&users[0], TokenAmount::ZERO, "trip=t", &w.ledger, &w.market, 1).unwrap().is_empty());
        assert_eq!(
            settle_trip(&users[0], amt("20.00"), "trip=t", &w.ledger, &w.market, 1),
            Err(MarketError::MarketPoolExhausted {
                needed: amt("10.00"),
                available: amt("1.00")
            })
        );
    }

    #[test]
    fn surplus_sale_and_repurchase_from_replenished_pool() {
        let (mut w, users) = World::new("10.00", &["379.04", "0.00"]);
        let sale = sell_surplus(&users[0], amt("379.04"), &w.ledger, &w.market, 10).unwrap();
        w.commit(&[sale]);
        assert_eq!(w.bal(&users[0]), TokenAmount::ZERO);
        assert_eq!(w.bal(&w.market.pool.clone()), amt("389.04"));
        assert_eq!(w.market.fiat.sold, amt("379.04"));

        // user 1 needs 300.00 with nothing in the wallet; only the resold tokens cover it
        let txs = settle_trip(&users[1], amt("300.00"), "trip=t2", &w.ledger, &w.market, 20).unwrap();
        w.commit(&txs);
        // pool oracle: 10.00 + 379.04 − 300.00
        assert_eq!(w.bal(&w.market.pool.clone()), amt("89.04"));

        assert_eq!(
            sell_surplus(&users[0], TokenAmount::ZERO, &w.ledger, &w.market, 30),
            Err(MarketError::NonPositiveAmount(TokenAmount::ZERO))
        );
        assert!(matches!(
            sell_surplus(&users[0], amt("0.01"), &w.ledger, &w.market, 30),
            Err(MarketError::InsufficientTokens { .. })
        ));
    }

    #[test]
    fn frozen_resale_keeps_sold_tokens_out_of_the_pool() {
        let mut reg = Registry::new();
        let m = MarketAccount::register(&mut reg, PricePolicy::default(), true).unwrap();
        assert_ne!(m.sale_account(), &m.pool);
        let (w, users) = World::new("0.00", &["5.00"]);
        let s = sell_surplus(&users[0], amt("5.00"), &w.ledger, &m, 1).unwrap();
        assert_eq!(s.receiver, *m.sale_account());
    }

    #[test]
    fn operator_pays_for_empty_seats() {
        let policy = BusChargingPolicy::default();
        assert_eq!(operator_liability(amt("47.00"), 30.0, &policy), amt("965.85"));
        assert_eq!(operator_liability(amt("47.00"), 50.55, &policy), TokenAmount::ZERO);
        assert_eq!(operator_liability(amt("47.00"), 60.0, &policy), TokenAmount::ZERO);
        let off = BusChargingPolicy {
            operator_pays_remainder: false,
            ..policy
        };
        assert_eq!(operator_liability(amt("47.00"), 30.0, &off), TokenAmount::ZERO);

        let (mut w, _) = World::new("2000.00", &[]);
        let txs = operator_settlement(amt("47.00"), 30.0, &policy, "R1", &w.ledger, &w.market, 100).unwrap();
        assert_eq!(txs.len(), 2);
        assert_eq!(txs[1].kind, TxKind::OperatorSettlement);
        assert_eq!(txs[1].amount, amt("965.85"));
        w.commit(&txs);
        assert_eq!(w.bal(&w.market.retirement.clone()), amt("965.85"));
        assert!(operator_settlement(amt("47.00"), 30.0, &off, "R1", &w.ledger, &w.market, 100)
            .unwrap()
            .is_empty());
    }

    proptest! {
        #[test]
        fn allocation_exact_for_any_population(cap in 0i64..10_000_000_000, n in 1usize..10_000) {
            let users: Vec<Address> = (0..n).map(|i| Address::from_raw(format!("{i:040x}"))).collect();
            let m = MarketAccount {
                issuer: Address::derive("i"),
                pool: Address::derive("p"),
                retirement: Address::derive("r"),
                operator: Address::derive("o"),
                resale_reserve: None,
                price: PricePolicy::default(),
                fiat: FiatLedger::default(),
            };
            let cap = TokenAmount::from_centi(cap);
            let txs = allocate(&users, &CapPolicy::equal_split(cap), &m, 0).unwrap();
            prop_assert_eq!(txs.iter().map(|t| t.amount).sum::<TokenAmount>(), cap);
            let grant = CapPolicy::equal_split(cap).grant_for(n).unwrap();
            for t in &txs {
                prop_assert!((t.amount.centi() - grant.centi()).abs() <= 1);
            }
        }

        #[test]
        fn settlement_identity(balance in 0i64..100_000, cost in 0i64..100_000) {
            let (w, users) = World::new("100000.00", &[&TokenAmount::from_centi(balance).to_string()]);
            let before = w.bal(&users[0]);
            let cost = TokenAmount::from_centi(cost);
            let txs = settle_trip(&users[0], cost, "trip=t", &w.ledger, &w.market, 7).unwrap();
            let mut overlay = Overlay::new(&w.ledger);
            for tx in &txs {
                overlay.push(tx).unwrap();
            }
            let after = overlay.balance_of(&users[0]);
            prop_assert_eq!(after, (before - cost).max(TokenAmount::ZERO));
            let purchased: TokenAmount = txs.iter().filter(|t| t.kind == TxKind::Purchase).map(|t| t.amount).sum();
            prop_assert_eq!(purchased, (cost - before).max(TokenAmount::ZERO));
        }
    }
}
