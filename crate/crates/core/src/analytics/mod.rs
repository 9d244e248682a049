//! Token-usage breakdowns of a simulated day.
//!
//! Everything here reads a [`UsageData`]: each user's grant, each trip's
//! charged tokens and the survey attributes. A user's net position is the
//! grant minus the tokens their trips cost; purchases and sales are ignored,
//! so it can go negative while wallets cannot.
//!
//! Means are carried unrounded; rounding to two decimals happens at export.

mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::amount::TokenAmount;
use crate::emissions::{Mode, TripRecord};
use crate::identity::Address;
use crate::ledger::{Ledger, TxKind};
use crate::simulator::{SimulationResult, SurveyPerson};

pub use export::{
    check_provenance, export_reports, half_up_centi, read_report_manifest, ReportManifest, REPORT_MANIFEST_FILE,
};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("unknown breakdown {0:?}")]
    UnknownBreakdown(String),
    #[error("provenance mismatch: manifest records ledger head {expected}, recomputed {found}")]
    Provenance { expected: String, found: String },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

macro_rules! named {
    ($name:ident, $err:ident, [$($variant:ident => $label:literal),+ $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = AnalyticsError;

            fn from_str(s: &str) -> Result<Self, AnalyticsError> {
                match s {
                    $($label => Ok($name::$variant),)+
                    other => Err(AnalyticsError::$err(other.to_string())),
                }
            }
        }
    };
}

named!(Dimension, UnknownDimension, [
    AgeBand => "age_band",
    Gender => "gender",
    Employment => "employment",
    Occupation => "occupation",
    StudentStatus => "student_status",
    Licence => "licence",
    NTrips => "n_trips",
    HouseholdSize => "household_size",
    HouseholdCars => "household_cars",
    CarsPerPersonRatio => "cars_per_person_ratio",
]);

named!(Breakdown, UnknownBreakdown, [
    ByMode => "by_mode",
    ByTravelTimeBin => "by_travel_time_bin",
    ByDistanceBin => "by_distance_bin",
    TripsPerHour => "trips_per_hour",
    TokensPerHour => "tokens_per_hour",
    ModeVarietyPerHour => "mode_variety_per_hour",
]);

impl Breakdown {
    /// Name of the headline value in exports.
    pub fn value_name(self) -> &'static str {
        match self {
            Breakdown::ByMode => "mean_tokens_per_trip",
            Breakdown::ByTravelTimeBin | Breakdown::TokensPerHour => "total_tokens",
            Breakdown::ByDistanceBin => "token_share",
            Breakdown::TripsPerHour => "trip_count",
            Breakdown::ModeVarietyPerHour => "distinct_modes",
        }
    }
}

/// Cars-per-person buckets as `(numerator, denominator, label)`; ratios above
/// one go to `>1:1`.
pub const RATIO_BUCKETS: [(u32, u32, &str); 7] = [
    (0, 1, "0"),
    (1, 6, "1:6"),
    (1, 5, "1:5"),
    (1, 4, "1:4"),
    (1, 3, "1:3"),
    (1, 2, "1:2"),
    (1, 1, "1:1"),
];

/// Index into [`RATIO_BUCKETS`] nearest to `cars / persons`, ties to the
/// smaller bucket; `RATIO_BUCKETS.len()` for ratios above one.
pub fn ratio_bucket(cars: u32, persons: u32) -> usize {
    let persons = u64::from(persons.max(1));
    let cars = u64::from(cars);
    if cars > persons {
        return RATIO_BUCKETS.len();
    }
    // |cars/persons − a/b| compared exactly as |cars·b − a·persons| / (persons·b)
    let mut best = 0;
    for i in 1..RATIO_BUCKETS.len() {
        let dist = |k: usize| {
            let (a, b, _) = RATIO_BUCKETS[k];
            ((cars * u64::from(b)).abs_diff(u64::from(a) * persons), u64::from(b))
        };
        let (d_i, b_i) = dist(i);
        let (d_best, b_best) = dist(best);
        if d_i * b_best < d_best * b_i {
            best = i;
        }
    }
    best
}

pub const TIME_BINS_MIN: [(u32, &str); 5] = [(5, "<5"), (10, "5-10"), (20, "10-20"), (30, "20-30"), (u32::MAX, ">30")];
pub const DISTANCE_BINS_KM: [(f64, &str); 5] = [(1.0, "<1"), (3.0, "1-3"), (5.0, "3-5"), (10.0, "5-10"), (f64::INFINITY, ">10")];

/// Index of the half-open bin `[prev upper, upper)` holding a trip's duration.
pub fn time_bin(duration_s: i64) -> usize {
    TIME_BINS_MIN
        .iter()
        .position(|(upper, _)| *upper == u32::MAX || duration_s < i64::from(*upper) * 60)
        .expect("last bin is open")
}

pub fn distance_bin(distance_m: f64) -> usize {
    DISTANCE_BINS_KM
        .iter()
        .position(|(upper, _)| distance_m < upper * 1000.0)
        .unwrap_or(DISTANCE_BINS_KM.len() - 1)
}

/// Start hour in `0..24`; trips starting after midnight count in hour 23.
pub fn start_hour(trip: &TripRecord) -> usize {
    (trip.start_s / 3600).min(23) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserUsage {
    pub person: SurveyPerson,
    pub grant: TokenAmount,
    /// Indices into [`UsageData::trips`].
    pub trips: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripUsage {
    pub trip: TripRecord,
    /// Tokens charged to the traveller; zero for unsettled trips.
    pub tokens: TokenAmount,
}

/// What the reports are computed from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UsageData {
    pub users: Vec<UserUsage>,
    pub trips: Vec<TripUsage>,
}

impl UsageData {
    /// Joins persons with their grants and trips with their charged tokens.
    /// Trips of unknown users are ignored.
    pub fn new(
        persons: &[SurveyPerson],
        grants: &HashMap<String, TokenAmount>,
        trips: &[TripRecord],
        tokens: &HashMap<String, TokenAmount>,
    ) -> Self {
        let index: HashMap<&str, usize> = persons.iter().enumerate().map(|(i, p)| (p.user_id.as_str(), i)).collect();
        let mut users: Vec<UserUsage> = persons
            .iter()
            .map(|p| UserUsage {
                person: p.clone(),
                grant: grants.get(&p.user_id).copied().unwrap_or(TokenAmount::ZERO),
                trips: Vec::new(),
            })
            .collect();
        let mut out = Vec::with_capacity(trips.len());
        for t in trips {
            let Some(&u) = index.get(t.user_id.as_str()) else {
                continue;
            };
            users[u].trips.push(out.len());
            out.push(TripUsage {
                trip: t.clone(),
                tokens: tokens.get(&t.trip_id).copied().unwrap_or(TokenAmount::ZERO),
            });
        }
        Self { users, trips: out }
    }

    /// Reads grants from allocations and trip charges from trip payments.
    pub fn from_ledger(ledger: &Ledger, persons: &[SurveyPerson], trips: &[TripRecord]) -> Self {
        let by_address: HashMap<Address, &str> =
            persons.iter().map(|p| (Address::derive(&p.user_id), p.user_id.as_str())).collect();
        let mut grants: HashMap<String, TokenAmount> = HashMap::new();
        let mut tokens: HashMap<String, TokenAmount> = HashMap::new();
        for tx in ledger.transactions() {
            match tx.kind {
                TxKind::Allocation => {
                    if let Some(u) = by_address.get(&tx.receiver) {
                        *grants.entry(u.to_string()).or_insert(TokenAmount::ZERO) += tx.amount;
                    }
                }
                TxKind::TripPayment => {
                    if let Some(trip) = tx.memo().trip {
                        *tokens.entry(trip.to_string()).or_insert(TokenAmount::ZERO) += tx.amount;
                    }
                }
                _ => {}
            }
        }
        Self::new(persons, &grants, trips, &tokens)
    }

    pub fn from_result(result: &SimulationResult) -> Self {
        Self::from_ledger(&result.ledger, &result.population.persons, &result.population.trips)
    }

    pub fn net(&self, user: &UserUsage) -> TokenAmount {
        user.grant - user.trips.iter().map(|&i| self.trips[i].tokens).sum::<TokenAmount>()
    }

    fn group_of(&self, user: &UserUsage, dim: Dimension) -> (u64, String) {
        let p = &user.person;
        match dim {
            Dimension::AgeBand => (ordinal(crate::simulator::AgeBand::ALL, p.age_band), p.age_band.to_string()),
            Dimension::Gender => (ordinal(crate::simulator::Gender::ALL, p.gender), p.gender.to_string()),
            Dimension::Employment => (ordinal(crate::simulator::Employment::ALL, p.employment), p.employment.to_string()),
            Dimension::Occupation => (ordinal(crate::simulator::Occupation::ALL, p.occupation), p.occupation.to_string()),
            Dimension::StudentStatus => {
                (ordinal(crate::simulator::StudentStatus::ALL, p.student_status), p.student_status.to_string())
            }
            Dimension::Licence => (u64::from(!p.has_licence), if p.has_licence { "yes" } else { "no" }.to_string()),
            Dimension::NTrips => (user.trips.len() as u64, user.trips.len().to_string()),
            Dimension::HouseholdSize => (u64::from(p.household_size), p.household_size.to_string()),
            Dimension::HouseholdCars => (u64::from(p.household_cars), p.household_cars.to_string()),
            Dimension::CarsPerPersonRatio => {
                let b = ratio_bucket(p.household_cars, p.household_size);
                (b as u64, RATIO_BUCKETS.get(b).map_or(">1:1", |r| r.2).to_string())
            }
        }
    }
}

fn ordinal<T: PartialEq>(all: &[T], v: T) -> u64 {
    all.iter().position(|x| *x == v).unwrap_or(0) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeftoverRow {
    pub group: String,
    pub n_users: usize,
    /// Exact sum of the group's net positions.
    pub net_total: TokenAmount,
    /// Mean net position in tokens, unrounded.
    pub mean_net: f64,
    pub mean_trips: f64,
    /// Mean of each user's total travelled distance.
    pub mean_distance_m: f64,
    /// Share of the group's trips per mode, in [`Mode::ALL`] order; all zero
    /// for a group without trips.
    pub mode_shares: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeftoverReport {
    pub dimension: Dimension,
    pub rows: Vec<LeftoverRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRow {
    pub label: String,
    pub trips: usize,
    pub tokens: TokenAmount,
    /// See [`Breakdown::value_name`].
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripReport {
    pub breakdown: Breakdown,
    pub rows: Vec<TripRow>,
}

pub fn leftovers_by(data: &UsageData, dimension: Dimension) -> LeftoverReport {
    struct Acc {
        label: String,
        n: usize,
        net: TokenAmount,
        trips: usize,
        distance: f64,
        modes: [usize; 6],
    }
    let mut groups: BTreeMap<u64, Acc> = BTreeMap::new();
    for u in &data.users {
        let (key, label) = data.group_of(u, dimension);
        let g = groups.entry(key).or_insert_with(|| Acc {
            label,
            n: 0,
            net: TokenAmount::ZERO,
            trips: 0,
            distance: 0.0,
            modes: [0; 6],
        });
        g.n += 1;
        g.net += data.net(u);
        g.trips += u.trips.len();
        for &i in &u.trips {
            let t = &data.trips[i].trip;
            g.distance += t.distance_m;
            g.modes[t.mode.index()] += 1;
        }
    }
    let rows = groups
        .into_values()
        .map(|g| {
            let n = g.n as f64;
            let mut shares = [0.0; 6];
            if g.trips > 0 {
                for (s, c) in shares.iter_mut().zip(g.modes) {
                    *s = c as f64 / g.trips as f64;
                }
            }
            LeftoverRow {
                group: g.label,
                n_users: g.n,
                net_total: g.net,
                mean_net: g.net.as_f64() / n,
                mean_trips: g.trips as f64 / n,
                mean_distance_m: g.distance / n,
                mode_shares: shares,
            }
        })
        .collect();
    LeftoverReport { dimension, rows }
}

pub fn trip_breakdown(data: &UsageData, breakdown: Breakdown) -> TripReport {
    let labels: Vec<String> = match breakdown {
        Breakdown::ByMode => Mode::ALL.iter().map(|m| m.as_str().to_string()).collect(),
        Breakdown::ByTravelTimeBin => TIME_BINS_MIN.iter().map(|b| b.1.to_string()).collect(),
        Breakdown::ByDistanceBin => DISTANCE_BINS_KM.iter().map(|b| b.1.to_string()).collect(),
        _ => (0..24).map(|h| format!("{h:02}")).collect(),
    };
    let slot = |t: &TripRecord| match breakdown {
        Breakdown::ByMode => t.mode.index(),
        Breakdown::ByTravelTimeBin => time_bin(t.duration_s()),
        Breakdown::ByDistanceBin => distance_bin(t.distance_m),
        _ => start_hour(t),
    };
    let mut trips = vec![0usize; labels.len()];
    let mut tokens = vec![TokenAmount::ZERO; labels.len()];
    let mut modes = vec![BTreeSet::new(); labels.len()];
    for t in &data.trips {
        let k = slot(&t.trip);
        trips[k] += 1;
        tokens[k] += t.tokens;
        modes[k].insert(t.trip.mode.index());
    }
    let total: TokenAmount = tokens.iter().copied().sum();
    let rows = labels
        .into_iter()
        .enumerate()
        .map(|(k, label)| {
            let value = match breakdown {
                Breakdown::ByMode if trips[k] == 0 => 0.0,
                Breakdown::ByMode => tokens[k].as_f64() / trips[k] as f64,
                Breakdown::ByDistanceBin if total.is_positive() => tokens[k].centi() as f64 / total.centi() as f64,
                Breakdown::ByDistanceBin => 0.0,
                Breakdown::ByTravelTimeBin | Breakdown::TokensPerHour => tokens[k].as_f64(),
                Breakdown::TripsPerHour => trips[k] as f64,
                Breakdown::ModeVarietyPerHour => modes[k].len() as f64,
            };
            TripRow {
                label,
                trips: trips[k],
                tokens: tokens[k],
                value,
            }
        })
        .collect();
    TripReport { breakdown, rows }
}

/// The ten leftover reports and six trip reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSet {
    pub leftovers: Vec<LeftoverReport>,
    pub trips: Vec<TripReport>,
}

impl ReportSet {
    pub fn compute(data: &UsageData) -> Self {
        Self {
            leftovers: Dimension::ALL.iter().map(|&d| leftovers_by(data, d)).collect(),
            trips: Breakdown::ALL.iter().map(|&b| trip_breakdown(data, b)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.leftovers.len() + self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
