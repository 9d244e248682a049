use serde::{Deserialize, Serialize};

use super::{EmissionError, EmissionFactorTable, Mode, TripRecord};
use crate::amount::{TokenAmount, CENTI_PER_TOKEN};
use crate::num::{round_half_even, Scalar};

const GRAMS_PER_TONNE: f64 = 1e6;

/// CO2e price and token denomination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePolicy<T> {
    pub cad_per_tonne: T,
    pub tokens_per_cad: T,
}

impl<T: Scalar> Default for PricePolicy<T> {
    fn default() -> Self {
        Self {
            cad_per_tonne: T::lit(20.0),
            tokens_per_cad: T::lit(1e4),
        }
    }
}

impl<T: Scalar> PricePolicy<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cad_per_tonne > T::zero()) || !(self.tokens_per_cad > T::zero()) {
            return Err("price and token denomination must be positive".into());
        }
        Ok(())
    }

    pub fn cad_for_grams(&self, grams: T) -> T {
        grams * self.cad_per_tonne / T::lit(GRAMS_PER_TONNE)
    }

    pub fn cad_for_tokens(&self, amount: TokenAmount) -> T {
        T::lit(amount.as_f64()) / self.tokens_per_cad
    }

    /// Centi-tokens per gram-CAD; exactly 1 at the default denomination.
    fn centi_scale(&self) -> T {
        self.tokens_per_cad * T::lit(CENTI_PER_TOKEN as f64) / T::lit(GRAMS_PER_TONNE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusChargingPolicy<T> {
    /// Divisor applied to a bus's total emissions to get the per-rider charge.
    pub seats_per_bus: T,
    /// Whether the operator pays for unoccupied seats.
    pub operator_pays_remainder: bool,
}

impl<T: Scalar> Default for BusChargingPolicy<T> {
    fn default() -> Self {
        Self {
            seats_per_bus: T::lit(50.55),
            operator_pays_remainder: true,
        }
    }
}

/// Emissions attributed to one trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripCost<T> {
    pub vehicle_g: T,
    pub per_user_g: T,
    pub tokens: TokenAmount,
}

/// Average speed in km/h.
pub fn average_speed<T: Scalar>(trip: &TripRecord) -> Result<T, EmissionError> {
    let secs = trip.duration_s();
    if secs <= 0 {
        return Err(EmissionError::ZeroDuration(trip.trip_id.clone()));
    }
    let km = T::lit(trip.distance_m) / T::lit(1000.0);
    let hours = T::lit(secs as f64) / T::lit(3600.0);
    Ok(km / hours)
}

/// Total vehicle emissions in grams. Walking and cycling emit nothing.
///
/// The factor class is the trip's `vehicle_class` when the table knows it,
/// otherwise the mode name.
pub fn trip_emissions<T: Scalar>(
    trip: &TripRecord,
    table: &EmissionFactorTable<T>,
) -> Result<T, EmissionError> {
    if trip.distance_m < 0.0 || trip.distance_m.is_nan() {
        return Err(EmissionError::NegativeDistance(trip.trip_id.clone()));
    }
    if !trip.mode.is_motorized() {
        return Ok(T::zero());
    }
    let speed = average_speed::<T>(trip)?;
    let class = trip
        .vehicle_class
        .as_deref()
        .filter(|c| table.has_class(c))
        .unwrap_or(trip.mode.as_str());
    let factor = table.factor(class, speed)?;
    Ok(factor * T::lit(trip.distance_m) / T::lit(1000.0))
}

/// Grams charged to the traveller: an equal share of the car, or one seat of
/// the bus.
pub fn per_user_emissions<T: Scalar>(
    total_g: T,
    trip: &TripRecord,
    bus: &BusChargingPolicy<T>,
) -> Result<T, EmissionError> {
    if total_g < T::zero() {
        return Err(EmissionError::NegativeEmissions);
    }
    match trip.mode {
        Mode::Car | Mode::RideHail => {
            if trip.passengers == 0 {
                return Err(EmissionError::ZeroPassengers(trip.trip_id.clone()));
            }
            Ok(total_g / T::lit(f64::from(trip.passengers)))
        }
        Mode::Bus | Mode::SchoolBus => Ok(total_g / bus.seats_per_bus),
        Mode::Walk | Mode::Bicycle => Ok(T::zero()),
    }
}

/// Token price of `grams`, rounded half-to-even to the centi-token.
/// Negative inputs price at zero.
pub fn tokens_for_emissions<T: Scalar>(grams: T, price: &PricePolicy<T>) -> TokenAmount {
    if !(grams > T::zero()) {
        return TokenAmount::ZERO;
    }
    let centi = round_half_even(grams * price.cad_per_tonne * price.centi_scale());
    TokenAmount::from_centi(centi.to_i64().expect("token amount fits in i64"))
}

pub fn trip_cost<T: Scalar>(
    trip: &TripRecord,
    table: &EmissionFactorTable<T>,
    bus: &BusChargingPolicy<T>,
    price: &PricePolicy<T>,
) -> Result<TripCost<T>, EmissionError> {
    let vehicle_g = trip_emissions(trip, table)?;
    let per_user_g = per_user_emissions(vehicle_g, trip, bus)?;
    Ok(TripCost {
        vehicle_g,
        per_user_g,
        tokens: tokens_for_emissions(per_user_g, price),
    })
}

/// Splits the token price of a shared vehicle's total across its passengers.
/// Shares differ by at most one centi-token and sum to the priced total.
pub fn passenger_shares<T: Scalar>(
    total_g: T,
    passengers: u32,
    price: &PricePolicy<T>,
) -> Vec<TokenAmount> {
    tokens_for_emissions(total_g, price).split_even(passengers as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::FactorRow;
    use proptest::prelude::*;

    fn trip(mode: Mode, start_s: u32, end_s: u32, distance_m: f64, passengers: u32) -> TripRecord {
        TripRecord {
            trip_id: "t1".into(),
            user_id: "u1".into(),
            mode,
            start_s,
            end_s,
            distance_m,
            passengers,
            vehicle_class: None,
            origin_ok: true,
            destination_ok: true,
        }
    }

    fn flat_table<T: Scalar>(class: &str, g_per_km: f64) -> EmissionFactorTable<T> {
        EmissionFactorTable::new(vec![FactorRow {
            class: class.into(),
            v_lo_kmh: T::zero(),
            v_hi_kmh: T::lit(500.0),
            g_per_km: T::lit(g_per_km),
        }])
        .unwrap()
    }

    #[test]
    fn average_speed_of_a_forty_minute_trip() {
        let t = trip(Mode::Car, 8 * 3600, 8 * 3600 + 40 * 60, 14_248.0, 1);
        let v: f64 = average_speed(&t).unwrap();
        // 14.248 km over 2/3 h
        assert!((v - 14.248 * 1.5).abs() < 1e-9);
        assert_eq!((v * 100.0).round() / 100.0, 21.37);
        let v32: f32 = average_speed(&t).unwrap();
        assert!((f64::from(v32) - v).abs() < 1e-4);
    }

    #[test]
    fn zero_duration_is_rejected() {
        let t = trip(Mode::Car, 100, 100, 5.0, 1);
        assert_eq!(
            average_speed::<f64>(&t),
            Err(EmissionError::ZeroDuration("t1".into()))
        );
    }

    #[test]
    fn bus_total_is_charged_per_seat() {
        let t = trip(Mode::Bus, 0, 600, 1000.0, 0);
        let g: f64 = per_user_emissions(101_100.0, &t, &BusChargingPolicy::default()).unwrap();
        assert!((g - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn car_total_is_split_across_passengers() {
        let t = trip(Mode::Car, 0, 600, 1000.0, 4);
        let g: f64 = per_user_emissions(1000.0, &t, &BusChargingPolicy::default()).unwrap();
        assert_eq!(g, 250.0);
        let solo = trip(Mode::RideHail, 0, 600, 1000.0, 0);
        assert_eq!(
            per_user_emissions(1000.0f64, &solo, &BusChargingPolicy::default()),
            Err(EmissionError::ZeroPassengers("t1".into()))
        );
    }

    #[test]
    fn token_conversion_at_twenty_dollars_per_tonne() {
        let p = PricePolicy::<f64>::default();
        assert_eq!(tokens_for_emissions(2468.95, &p), "493.79".parse().unwrap());
        assert_eq!(tokens_for_emissions(1030.0, &p), TokenAmount::from_tokens(206));
        assert_eq!(tokens_for_emissions(235.0, &p), TokenAmount::from_tokens(47));
        assert_eq!(tokens_for_emissions(1e6, &p), TokenAmount::from_tokens(200_000));
        assert_eq!(tokens_for_emissions(-5.0, &p), TokenAmount::ZERO);
        let p32 = PricePolicy::<f32>::default();
        assert_eq!(tokens_for_emissions(1030.0f32, &p32), TokenAmount::from_tokens(206));
        assert_eq!(tokens_for_emissions(235.0f32, &p32), TokenAmount::from_tokens(47));
    }

    #[test]
    fn centi_token_ties_round_to_even() {
        let p = PricePolicy { cad_per_tonne: 1.0, tokens_per_cad: 1e4 };
        assert_eq!(tokens_for_emissions(0.5, &p).centi(), 0);
        assert_eq!(tokens_for_emissions(1.5, &p).centi(), 2);
        assert_eq!(tokens_for_emissions(2.5, &p).centi(), 2);
    }

    #[test]
    fn walking_and_cycling_are_free() {
        let table = EmissionFactorTable::<f64>::synthetic_default();
        for mode in [Mode::Walk, Mode::Bicycle] {
            let t = trip(mode, 0, 1200, 2000.0, 1);
            let c = trip_cost(&t, &table, &BusChargingPolicy::default(), &PricePolicy::default()).unwrap();
            assert_eq!(c.tokens, TokenAmount::ZERO);
        }
    }

    #[test]
    fn vehicle_class_overrides_mode_only_when_tabulated() {
        let mut rows: Vec<FactorRow<f64>> = flat_table::<f64>("car", 100.0).rows().cloned().collect();
        rows.extend(flat_table::<f64>("suv", 300.0).rows().cloned());
        let table = EmissionFactorTable::new(rows).unwrap();
        let mut t = trip(Mode::Car, 0, 3600, 10_000.0, 1);
        assert_eq!(trip_emissions(&t, &table).unwrap(), 1000.0);
        t.vehicle_class = Some("suv".into());
        assert_eq!(trip_emissions(&t, &table).unwrap(), 3000.0);
        t.vehicle_class = Some("R12".into());
        assert_eq!(trip_emissions(&t, &table).unwrap(), 1000.0);
    }

    #[test]
    fn negative_distance_and_missing_factor() {
        let table = flat_table::<f64>("car", 100.0);
        let t = trip(Mode::Car, 0, 3600, -1.0, 1);
        assert_eq!(
            trip_emissions(&t, &table),
            Err(EmissionError::NegativeDistance("t1".into()))
        );
        let fast = trip(Mode::Car, 0, 60, 100_000.0, 1);
        assert!(matches!(
            trip_emissions(&fast, &table),
            Err(EmissionError::MissingFactor { .. })
        ));
        let bus = trip(Mode::Bus, 0, 3600, 1000.0, 1);
        assert!(matches!(
            trip_emissions(&bus, &table),
            Err(EmissionError::MissingFactor { .. })
        ));
    }

    #[test]
    fn end_to_end_matches_hand_computation() {
        // 12 km in 30 min at 24 km/h is in the 10-25 band, 260 g/km; two occupants
        let table = EmissionFactorTable::<f64>::synthetic_default();
        let t = trip(Mode::Car, 0, 1800, 12_000.0, 2);
        let c = trip_cost(&t, &table, &BusChargingPolicy::default(), &PricePolicy::default()).unwrap();
        assert_eq!(c.vehicle_g, 3120.0);
        assert_eq!(c.per_user_g, 1560.0);
        assert_eq!(c.tokens, TokenAmount::from_tokens(312));
    }

    proptest! {
        #[test]
        fn f32_and_f64_pipelines_agree(
            dist in 100.0f64..60_000.0,
            dur in 120u32..7200,
            pax in 1u32..5,
            mode in prop::sample::select(vec![Mode::Car, Mode::RideHail, Mode::Bus, Mode::SchoolBus]),
        ) {
            let t = trip(mode, 3600, 3600 + dur, dist, pax);
            let t64 = EmissionFactorTable::<f64>::synthetic_default();
            let t32 = EmissionFactorTable::<f32>::synthetic_default();
            let speed: f64 = average_speed(&t).unwrap();
            // skip speeds near a band edge where the two precisions may disagree
            let edges = [10.0, 25.0, 50.0, 80.0, 250.0];
            prop_assume!(edges.iter().all(|e| (speed - e).abs() > 1e-3));
            let c64 = trip_cost(&t, &t64, &BusChargingPolicy::default(), &PricePolicy::default());
            let c32 = trip_cost(&t, &t32, &BusChargingPolicy::default(), &PricePolicy::default());
            match (c64, c32) {
                (Ok(a), Ok(b)) => {
                    let rel = ((a.per_user_g - f64::from(b.per_user_g)) / a.per_user_g).abs();
                    prop_assert!(rel < 1e-5);
                    prop_assert!((a.tokens.centi() - b.tokens.centi()).abs() <= 1 + a.tokens.centi() / 100_000);
                }
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "precisions disagree: {a:?} vs {b:?}"),
            }
        }

        #[test]
        fn passenger_shares_sum_to_vehicle_price(total in 0.0f64..1e7, pax in 1u32..8) {
            let p = PricePolicy::<f64>::default();
            let shares = passenger_shares(total, pax, &p);
            prop_assert_eq!(shares.len(), pax as usize);
            let sum: TokenAmount = shares.iter().copied().sum();
            prop_assert_eq!(sum, tokens_for_emissions(total, &p));
            let max = shares.iter().map(|s| s.centi()).max().unwrap();
            let min = shares.iter().map(|s| s.centi()).min().unwrap();
            prop_assert!(max - min <= 1);
            // each share is within one centi-token of pricing the per-person grams directly
            let direct = tokens_for_emissions(total / f64::from(pax), &p).centi();
            prop_assert!((max - direct).abs() <= 1 && (min - direct).abs() <= 1);
        }

        #[test]
        fn token_conversion_roundtrips_within_half_a_centi(g in 0.0f64..1e8) {
            let p = PricePolicy::<f64>::default();
            let t = tokens_for_emissions(g, &p);
            let cad = p.cad_for_tokens(t);
            let exact = p.cad_for_grams(g);
            prop_assert!((cad - exact).abs() <= 0.5 / 100.0 / p.tokens_per_cad * (1.0 + 1e-9) + 1e-12);
        }
    }
}
