//! Synthetic travel-survey population.
//!
//! Persons are drawn independently; each gets household attributes, one trip
//! plus a Poisson number of extra trips, and a mode per trip drawn from the
//! shares of their age band. Adults in car-free households rarely drive.
//! Every parameter lives in a [`SyntheticProfile`], loadable from JSON.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::population::{AgeBand, Employment, Gender, Occupation, Population, StudentStatus, SurveyPerson};
use crate::emissions::{Mode, TripRecord};

const DEFAULT_PROFILE: &str = include_str!("../../profiles/synthetic_default.json");

/// Minimum dwell between two trips of the same person, seconds.
const MIN_DWELL_S: u32 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeProfile {
    pub band: AgeBand,
    pub weight: f64,
    /// Relative trip shares; need not sum to 100.
    pub mode_shares: BTreeMap<Mode, f64>,
    pub extra_trips_mean: f64,
    pub car_passengers_mean: f64,
    pub licence_rate: f64,
    pub employment: BTreeMap<Employment, f64>,
    pub student: BTreeMap<StudentStatus, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub distance_median_m: f64,
    /// Log-scale spread of the lognormal distance.
    pub distance_sigma: f64,
    pub speed_kmh: f64,
    pub speed_sd_kmh: f64,
    pub min_speed_kmh: f64,
    pub max_speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub label: String,
    pub gender_weights: BTreeMap<Gender, f64>,
    pub female_extra_trips: f64,
    /// Index 0 is a one-person household.
    pub household_size_weights: Vec<f64>,
    pub car_ownership_rate: f64,
    /// Probability a licence holder in a car-free draw still gets one car.
    pub licensed_keep_car: f64,
    /// Car share multiplier for adults in car-free households.
    pub no_car_car_factor: f64,
    /// 24 relative weights for departure hour.
    pub departure_hour_weights: Vec<f64>,
    pub occupation_weights: BTreeMap<Occupation, f64>,
    pub bus_routes: u32,
    pub school_bus_routes: u32,
    pub age_bands: Vec<AgeProfile>,
    pub modes: BTreeMap<Mode, ModeProfile>,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PROFILE).expect("bundled profile parses")
    }
}

impl SyntheticProfile {
    pub fn from_json(s: &str) -> Result<Self, String> {
        let p: Self = serde_json::from_str(s).map_err(|e| e.to_string())?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        let weights_ok = |w: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = w.collect();
            v.iter().all(|x| x.is_finite() && *x >= 0.0) && v.iter().sum::<f64>() > 0.0
        };
        if !weights_ok(&mut self.gender_weights.values().copied())
            || !weights_ok(&mut self.household_size_weights.iter().copied())
            || !weights_ok(&mut self.occupation_weights.values().copied())
            || !weights_ok(&mut self.age_bands.iter().map(|a| a.weight))
        {
            return Err("weights must be non-negative with a positive sum".into());
        }
        if self.departure_hour_weights.len() != 24 || !weights_ok(&mut self.departure_hour_weights.iter().copied()) {
            return Err("departure_hour_weights needs 24 non-negative entries".into());
        }
        for a in &self.age_bands {
            if !weights_ok(&mut a.mode_shares.values().copied())
                || !weights_ok(&mut a.employment.values().copied())
                || !weights_ok(&mut a.student.values().copied())
            {
                return Err(format!("age band {}: empty or negative weights", a.band));
            }
            if a.extra_trips_mean < 0.0 || a.car_passengers_mean < 1.0 {
                return Err(format!("age band {}: bad trip or passenger mean", a.band));
            }
            for m in a.mode_shares.keys() {
                if !self.modes.contains_key(m) {
                    return Err(format!("mode {m} has shares but no mode profile"));
                }
            }
        }
        for (m, p) in &self.modes {
            let ok = p.distance_median_m > 0.0
                && p.distance_sigma >= 0.0
                && 0.0 < p.min_speed_kmh
                && p.min_speed_kmh <= p.speed_kmh
                && p.speed_kmh <= p.max_speed_kmh
                && p.speed_sd_kmh >= 0.0;
            if !ok {
                return Err(format!("mode {m}: inconsistent distance or speed parameters"));
            }
        }
        if self.bus_routes == 0 || self.school_bus_routes == 0 {
            return Err("route counts must be positive".into());
        }
        Ok(())
    }
}

fn pick<K: Copy, R: Rng>(weights: &BTreeMap<K, f64>, rng: &mut R) -> K {
    let keys: Vec<K> = weights.keys().copied().collect();
    let idx = WeightedIndex::new(weights.values().copied()).expect("validated weights");
    keys[idx.sample(rng)]
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u32
}

/// Deterministic population of `n_users` persons drawn from `profile`.
pub fn generate_synthetic(seed: u64, n_users: usize, profile: &SyntheticProfile) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band_idx = WeightedIndex::new(profile.age_bands.iter().map(|a| a.weight)).expect("validated weights");
    let size_idx = WeightedIndex::new(&profile.household_size_weights).expect("validated weights");
    let hour_idx = WeightedIndex::new(&profile.departure_hour_weights).expect("validated weights");
    let width = n_users.to_string().len().max(5);

    let mut persons = Vec::with_capacity(n_users);
    let mut trips = Vec::new();
    for k in 0..n_users {
        let age = &profile.age_bands[band_idx.sample(&mut rng)];
        let user_id = format!("U{:0width$}", k + 1);
        let gender = pick(&profile.gender_weights, &mut rng);
        let employment = pick(&age.employment, &mut rng);
        let occupation = if employment == Employment::Unemployed {
            Occupation::None
        } else {
            pick(&profile.occupation_weights, &mut rng)
        };
        let student_status = pick(&age.student, &mut rng);
        let has_licence = rng.random_bool(age.licence_rate.clamp(0.0, 1.0));
        let mut household_size = size_idx.sample(&mut rng) as u32 + 1;
        if age.band == AgeBand::Under18 {
            household_size = household_size.max(2);
        }
        let mut household_cars = Binomial::new(u64::from(household_size), profile.car_ownership_rate.clamp(0.0, 1.0))
            .expect("valid binomial")
            .sample(&mut rng) as u32;
        if household_cars == 0 && has_licence && rng.random_bool(profile.licensed_keep_car.clamp(0.0, 1.0)) {
            household_cars = 1;
        }

        let mut shares = age.mode_shares.clone();
        if household_cars == 0 && age.band != AgeBand::Under18 {
            if let Some(w) = shares.get_mut(&Mode::Car) {
                *w *= profile.no_car_car_factor;
            }
        }
        if !shares.values().any(|w| *w > 0.0) {
            shares = age.mode_shares.clone();
        }

        let extra = age.extra_trips_mean + if gender == Gender::Female { profile.female_extra_trips } else { 0.0 };
        let n_trips = 1 + poisson(extra, &mut rng);
        let mut departures: Vec<u32> = (0..n_trips)
            .map(|_| hour_idx.sample(&mut rng) as u32 * 3600 + rng.random_range(0..3600))
            .collect();
        departures.sort_unstable();

        let mut prev_end = 0u32;
        for (j, dep) in departures.into_iter().enumerate() {
            let mode = pick(&shares, &mut rng);
            let mp = &profile.modes[&mode];
            let distance = LogNormal::new(mp.distance_median_m.ln(), mp.distance_sigma)
                .expect("valid lognormal")
                .sample(&mut rng);
            let distance_m = (distance * 1000.0).round() / 1000.0;
            let speed = Normal::new(mp.speed_kmh, mp.speed_sd_kmh)
                .expect("valid normal")
                .sample(&mut rng)
                .clamp(mp.min_speed_kmh, mp.max_speed_kmh);
            let duration = ((distance_m / 1000.0 / speed * 3600.0).round() as u32).max(60);
            let start_s = if j == 0 { dep } else { dep.max(prev_end + MIN_DWELL_S) };
            let end_s = start_s + duration;
            prev_end = end_s;

            let passengers = match mode {
                Mode::Car => {
                    let p = (1 + poisson(age.car_passengers_mean - 1.0, &mut rng)).min(7);
                    if has_licence && age.band != AgeBand::Under18 {
                        p
                    } else {
                        p.max(2)
                    }
                }
                Mode::RideHail => (1 + poisson(0.2, &mut rng)).min(4),
                _ => 1,
            };
            let vehicle_class = match mode {
                Mode::Bus => Some(format!("route{}@{:02}", rng.random_range(0..profile.bus_routes), start_s / 3600)),
                Mode::SchoolBus => Some(format!(
                    "school{}@{:02}",
                    rng.random_range(0..profile.school_bus_routes),
                    start_s / 3600
                )),
                _ => None,
            };
            trips.push(TripRecord {
                trip_id: format!("{user_id}-{}", j + 1),
                user_id: user_id.clone(),
                mode,
                start_s,
                end_s,
                distance_m,
                passengers,
                vehicle_class,
                origin_ok: true,
                destination_ok: true,
            });
        }

        persons.push(SurveyPerson {
            user_id,
            age_band: age.band,
            gender,
            employment,
            occupation,
            student_status,
            has_licence,
            household_size,
            household_cars,
        });
    }
    Population::new(persons, trips).expect("generated trips reference generated persons")
}
