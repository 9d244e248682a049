use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use super::{EmissionError, Mode};
use crate::num::Scalar;

pub const KM_PER_MILE: f64 = 1.609_344;

pub fn g_per_mile_to_g_per_km<T: Scalar>(g_per_mile: T) -> T {
    g_per_mile / T::lit(KM_PER_MILE)
}

pub fn g_per_km_to_g_per_mile<T: Scalar>(g_per_km: T) -> T {
    g_per_km * T::lit(KM_PER_MILE)
}

/// Distance unit of the factor column in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorUnit {
    #[default]
    PerKm,
    PerMile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorRow<T> {
    pub class: String,
    pub v_lo_kmh: T,
    pub v_hi_kmh: T,
    pub g_per_km: T,
}

/// Emission factors by vehicle class and half-open speed band `[lo, hi)`.
///
/// Bands of one class start at 0 km/h and are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionFactorTable<T> {
    classes: BTreeMap<String, Vec<FactorRow<T>>>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    class: String,
    v_lo_kmh: f64,
    v_hi_kmh: f64,
    g_per_km: f64,
}

impl<T: Scalar> EmissionFactorTable<T> {
    pub fn new(rows: Vec<FactorRow<T>>) -> Result<Self, EmissionError> {
        let mut classes: BTreeMap<String, Vec<FactorRow<T>>> = BTreeMap::new();
        for r in rows {
            classes.entry(r.class.clone()).or_default().push(r);
        }
        for (class, bands) in classes.iter_mut() {
            bands.sort_by(|a, b| a.v_lo_kmh.partial_cmp(&b.v_lo_kmh).expect("finite speeds"));
            let bad = |msg: &str| EmissionError::InvalidTable(format!("class {class:?}: {msg}"));
            if bands[0].v_lo_kmh != T::zero() {
                return Err(bad("first band must start at 0 km/h"));
            }
            for w in bands.windows(2) {
                if w[0].v_hi_kmh != w[1].v_lo_kmh {
                    return Err(bad("bands must be contiguous and disjoint"));
                }
            }
            for b in bands.iter() {
                if !(b.v_lo_kmh < b.v_hi_kmh) {
                    return Err(bad("band upper bound must exceed lower bound"));
                }
                if !(b.g_per_km > T::zero()) || !b.g_per_km.is_finite() {
                    return Err(bad("factors must be positive"));
                }
            }
        }
        Ok(Self { classes })
    }

    /// Reads `class,v_lo_kmh,v_hi_kmh,g_per_km`. With [`FactorUnit::PerMile`]
    /// the last column is grams per mile and is converted on ingest.
    pub fn from_csv<R: Read>(input: R, unit: FactorUnit) -> Result<Self, EmissionError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<CsvRow>() {
            let r = rec.map_err(|e| EmissionError::TableParse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let g = T::lit(r.g_per_km);
            rows.push(FactorRow {
                class: r.class,
                v_lo_kmh: T::lit(r.v_lo_kmh),
                v_hi_kmh: T::lit(r.v_hi_kmh),
                g_per_km: match unit {
                    FactorUnit::PerKm => g,
                    FactorUnit::PerMile => g_per_mile_to_g_per_km(g),
                },
            });
        }
        if rows.is_empty() {
            return Err(EmissionError::InvalidTable("no rows".into()));
        }
        Self::new(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,v_lo_kmh,v_hi_kmh,g_per_km\n");
        for r in self.rows() {
            s.push_str(&format!("{},{},{},{}\n", r.class, r.v_lo_kmh, r.v_hi_kmh, r.g_per_km));
        }
        s
    }

    pub fn rows(&self) -> impl Iterator<Item = &FactorRow<T>> {
        self.classes.values().flatten()
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.contains_key(class)
    }

    /// Factor for `class` at `speed_kmh`; a speed equal to a band's upper
    /// bound falls into the next band.
    pub fn factor(&self, class: &str, speed_kmh: T) -> Result<T, EmissionError> {
        let missing = || EmissionError::MissingFactor {
            class: class.to_string(),
            speed_kmh: speed_kmh.to_f64_lossy(),
        };
        self.classes
            .get(class)
            .and_then(|bands| {
                bands
                    .iter()
                    .find(|b| b.v_lo_kmh <= speed_kmh && speed_kmh < b.v_hi_kmh)
            })
            .map(|b| b.g_per_km)
            .ok_or_else(missing)
    }

    /// Synthetic default table with plausible magnitudes. Not derived from any
    /// official fleet inventory; replace it with a real table for real studies.
    pub fn synthetic_default() -> Self {
        const BANDS: [(f64, f64); 5] = [(0.0, 10.0), (10.0, 25.0), (25.0, 50.0), (50.0, 80.0), (80.0, 250.0)];
        let profile: [(Mode, [f64; 5]); 4] = [
            (Mode::Car, [390.0, 260.0, 195.0, 170.0, 190.0]),
            (Mode::RideHail, [390.0, 260.0, 195.0, 170.0, 190.0]),
            (Mode::Bus, [2400.0, 1600.0, 1250.0, 1100.0, 1200.0]),
            (Mode::SchoolBus, [2000.0, 1350.0, 1050.0, 950.0, 1050.0]),
        ];
        let rows = profile
            .iter()
            .flat_map(|(mode, factors)| {
                BANDS.iter().zip(factors).map(move |(&(lo, hi), &g)| FactorRow {
                    class: mode.as_str().to_string(),
                    v_lo_kmh: T::lit(lo),
                    v_hi_kmh: T::lit(hi),
                    g_per_km: T::lit(g),
                })
            })
            .collect();
        Self::new(rows).expect("default table is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_open_band_lookup() {
        let t = EmissionFactorTable::<f64>::synthetic_default();
        assert_eq!(t.factor("car", 0.0).unwrap(), 390.0);
        assert_eq!(t.factor("car", 9.999).unwrap(), 390.0);
        assert_eq!(t.factor("car", 10.0).unwrap(), 260.0);
        assert!(matches!(
            t.factor("car", 250.0),
            Err(EmissionError::MissingFactor { .. })
        ));
        assert!(t.factor("tram", 10.0).is_err());
    }

    #[test]
    fn rejects_gaps_overlaps_and_nonpositive_factors() {
        let row = |lo: f64, hi: f64, g: f64| FactorRow {
            class: "car".into(),
            v_lo_kmh: lo,
            v_hi_kmh: hi,
            g_per_km: g,
        };
        assert!(EmissionFactorTable::new(vec![row(0.0, 10.0, 1.0), row(11.0, 20.0, 1.0)]).is_err());
        assert!(EmissionFactorTable::new(vec![row(0.0, 10.0, 1.0), row(5.0, 20.0, 1.0)]).is_err());
        assert!(EmissionFactorTable::new(vec![row(1.0, 10.0, 1.0)]).is_err());
        assert!(EmissionFactorTable::new(vec![row(0.0, 10.0, 0.0)]).is_err());
        assert!(EmissionFactorTable::new(vec![row(0.0, 10.0, 5.0), row(10.0, 20.0, 4.0)]).is_ok());
    }

    #[test]
    fn csv_ingest_converts_miles() {
        let csv = "class,v_lo_kmh,v_hi_kmh,g_per_km\ncar,0,50,321.8688\ncar,50,200,160.9344\n";
        let t = EmissionFactorTable::<f64>::from_csv(csv.as_bytes(), FactorUnit::PerMile).unwrap();
        assert!((t.factor("car", 20.0).unwrap() - 200.0).abs() < 1e-9);
        assert!((t.factor("car", 60.0).unwrap() - 100.0).abs() < 1e-9);
        let back = EmissionFactorTable::<f64>::from_csv(t.to_csv().as_bytes(), FactorUnit::PerKm).unwrap();
        assert_eq!(back, t);
        assert!(EmissionFactorTable::<f64>::from_csv("class,v_lo_kmh\n".as_bytes(), FactorUnit::PerKm).is_err());
    }

    proptest! {
        #[test]
        fn mile_km_roundtrip(g in 1e-3f64..1e6) {
            let rt = g_per_km_to_g_per_mile(g_per_mile_to_g_per_km(g));
            prop_assert!(((rt - g) / g).abs() < 1e-9);
        }
    }
}
