use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emissions::{Mode, TripRecord};

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
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
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim() {
                    $($label $(| $alias)* => Ok($name::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($name))),
                }
            }
        }
    };
}

label_enum!(AgeBand {
    Under18 => "<18",
    From18To24 => "18-24" | "18–24",
    From25To39 => "25-39" | "25–39",
    From40To59 => "40-59" | "40–59",
    Over60 => "60+",
});

label_enum!(Gender {
    Female => "female" | "F",
    Male => "male" | "M",
});

label_enum!(Employment {
    FullTime => "full_time",
    PartTime => "part_time",
    HomeFullTime => "home_full_time",
    HomePartTime => "home_part_time",
    Unemployed => "unemployed",
});

label_enum!(Occupation {
    OfficeClerical => "office_clerical",
    ProfessionalMgmtTech => "professional_mgmt_tech",
    RetailSalesService => "retail_sales_service",
    ManufacturingConstructionTrades => "manufacturing_construction_trades",
    None => "none",
});

label_enum!(StudentStatus {
    FullTime => "full_time",
    PartTime => "part_time",
    None => "none",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyPerson {
    pub user_id: String,
    pub age_band: AgeBand,
    pub gender: Gender,
    pub employment: Employment,
    pub occupation: Occupation,
    pub student_status: StudentStatus,
    pub has_licence: bool,
    /// At least 1.
    pub household_size: u32,
    pub household_cars: u32,
}

pub const PERSONS_HEADER: [&str; 9] = [
    "user_id",
    "age_band",
    "gender",
    "employment",
    "occupation",
    "student_status",
    "has_licence",
    "household_size",
    "household_cars",
];

pub const TRIPS_HEADER: [&str; 8] = [
    "trip_id",
    "user_id",
    "mode",
    "start_time",
    "end_time",
    "distance_m",
    "passengers",
    "vehicle_class",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PopulationError {
    /// `row` is the 1-based file line; 0 for file-level problems.
    #[error("{file}: row {row}, column {column}: {message}")]
    SchemaError {
        file: String,
        row: u64,
        column: String,
        message: String,
    },
    #[error("trips row {row}: trip {trip_id:?} references unknown user {user_id:?}")]
    DanglingUserRef {
        row: u64,
        trip_id: String,
        user_id: String,
    },
}

/// A row that failed to parse, kept for the rejects report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub file: String,
    pub row: u64,
    pub column: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Population {
    pub persons: Vec<SurveyPerson>,
    /// Sorted by start time, then trip id.
    pub trips: Vec<TripRecord>,
    pub rejects: Vec<Reject>,
}

impl Population {
    /// Checks referential integrity and sorts the trips.
    pub fn new(persons: Vec<SurveyPerson>, mut trips: Vec<TripRecord>) -> Result<Self, PopulationError> {
        let ids: BTreeSet<&str> = persons.iter().map(|p| p.user_id.as_str()).collect();
        for (i, t) in trips.iter().enumerate() {
            if !ids.contains(t.user_id.as_str()) {
                return Err(PopulationError::DanglingUserRef {
                    row: i as u64 + 2,
                    trip_id: t.trip_id.clone(),
                    user_id: t.user_id.clone(),
                });
            }
        }
        sort_trips(&mut trips);
        Ok(Self {
            persons,
            trips,
            rejects: Vec::new(),
        })
    }
}

fn sort_trips(trips: &mut [TripRecord]) {
    trips.sort_by(|a, b| (a.start_s, &a.trip_id).cmp(&(b.start_s, &b.trip_id)));
}

/// Parses `HH:MM[:SS]` (hours may exceed 23 for trips past midnight) or plain seconds.
pub fn parse_clock(s: &str) -> Result<u32, String> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<u32>() {
        return Ok(secs);
    }
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(format!("bad time {s:?}"));
    }
    let num = |p: &str| p.parse::<u32>().map_err(|_| format!("bad time {s:?}"));
    let h = num(parts[0])?;
    let m = num(parts[1])?;
    let sec = if parts.len() == 3 { num(parts[2])? } else { 0 };
    if m > 59 || sec > 59 || h > 47 {
        return Err(format!("time out of range {s:?}"));
    }
    Ok(h * 3600 + m * 60 + sec)
}

pub fn format_clock(secs: u32) -> String {
    format!("{:02}:{:02}:{:02}", secs / 3600, secs / 60 % 60, secs % 60)
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "y" | "yes" => Ok(true),
        "false" | "0" | "n" | "no" => Ok(false),
        other => Err(format!("not a boolean: {other:?}")),
    }
}

struct Rows<'a> {
    file: &'a str,
    rejects: &'a mut Vec<Reject>,
}

impl Rows<'_> {
    fn open<R: Read>(&self, input: R, header: &[&str]) -> Result<csv::Reader<R>, PopulationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let found = rdr.headers().map_err(|e| self.file_error("header", e.to_string()))?;
        if found.iter().ne(header.iter().copied()) {
            return Err(self.file_error("header", format!("expected {}", header.join(","))));
        }
        Ok(rdr)
    }

    fn file_error(&self, column: &str, message: String) -> PopulationError {
        PopulationError::SchemaError {
            file: self.file.to_string(),
            row: 0,
            column: column.to_string(),
            message,
        }
    }

    fn reject(&mut self, row: u64, column: &str, message: String) {
        self.rejects.push(Reject {
            file: self.file.to_string(),
            row,
            column: column.to_string(),
            message,
        });
    }
}

/// Field accessor that reports the failing column.
fn field<T>(
    rec: &csv::StringRecord,
    header: &[&str],
    i: usize,
    parse: impl FnOnce(&str) -> Result<T, String>,
) -> Result<T, (String, String)> {
    parse(rec.get(i).unwrap_or("")).map_err(|m| (header[i].to_string(), m))
}

fn parse_person(rec: &csv::StringRecord) -> Result<SurveyPerson, (String, String)> {
    let h = &PERSONS_HEADER;
    let text = |s: &str| {
        if s.is_empty() {
            Err("empty".to_string())
        } else {
            Ok(s.to_string())
        }
    };
    let int = |s: &str| s.parse::<u32>().map_err(|e| e.to_string());
    let p = SurveyPerson {
        user_id: field(rec, h, 0, text)?,
        age_band: field(rec, h, 1, str::parse)?,
        gender: field(rec, h, 2, str::parse)?,
        employment: field(rec, h, 3, str::parse)?,
        occupation: field(rec, h, 4, str::parse)?,
        student_status: field(rec, h, 5, str::parse)?,
        has_licence: field(rec, h, 6, parse_bool)?,
        household_size: field(rec, h, 7, int)?,
        household_cars: field(rec, h, 8, int)?,
    };
    if p.household_size == 0 {
        return Err((h[7].to_string(), "must be at least 1".into()));
    }
    Ok(p)
}

fn parse_trip(rec: &csv::StringRecord) -> Result<TripRecord, (String, String)> {
    let h = &TRIPS_HEADER;
    let text = |s: &str| {
        if s.is_empty() {
            Err("empty".to_string())
        } else {
            Ok(s.to_string())
        }
    };
    let distance = |s: &str| match s.parse::<f64>() {
        Ok(d) if d.is_finite() && d >= 0.0 => Ok(d),
        Ok(d) => Err(format!("distance {d} must be finite and non-negative")),
        Err(e) => Err(e.to_string()),
    };
    let t = TripRecord {
        trip_id: field(rec, h, 0, text)?,
        user_id: field(rec, h, 1, text)?,
        mode: field(rec, h, 2, str::parse)?,
        start_s: field(rec, h, 3, parse_clock)?,
        end_s: field(rec, h, 4, parse_clock)?,
        distance_m: field(rec, h, 5, distance)?,
        passengers: field(rec, h, 6, |s| s.parse::<u32>().map_err(|e| e.to_string()))?,
        vehicle_class: field(rec, h, 7, |s| Ok((!s.is_empty()).then(|| s.to_string())))?,
        origin_ok: true,
        destination_ok: true,
    };
    if t.end_s <= t.start_s && t.mode.is_motorized() {
        return Err((h[4].to_string(), "must be after start_time".into()));
    }
    if matches!(t.mode, Mode::Car | Mode::RideHail) && t.passengers == 0 {
        return Err((h[6].to_string(), "car trips need at least one passenger".into()));
    }
    Ok(t)
}

/// Reads both CSVs. Rows that fail to parse, duplicate ids included, go to
/// the rejects report; a trip naming an unknown user is an error.
pub fn read_population<P: Read, T: Read>(persons: P, trips: T) -> Result<Population, PopulationError> {
    let mut rejects = Vec::new();

    let mut out_persons = Vec::new();
    let mut ids = BTreeSet::new();
    {
        let mut rows = Rows {
            file: "persons.csv",
            rejects: &mut rejects,
        };
        let mut rdr = rows.open(persons, &PERSONS_HEADER)?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| rows.file_error("record", e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            match parse_person(&rec) {
                Ok(p) if !ids.insert(p.user_id.clone()) => {
                    rows.reject(line, "user_id", format!("duplicate user {:?}", p.user_id))
                }
                Ok(p) => out_persons.push(p),
                Err((col, msg)) => rows.reject(line, &col, msg),
            }
        }
    }

    let mut out_trips = Vec::new();
    let mut trip_ids = BTreeSet::new();
    {
        let mut rows = Rows {
            file: "trips.csv",
            rejects: &mut rejects,
        };
        let mut rdr = rows.open(trips, &TRIPS_HEADER)?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| rows.file_error("record", e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            match parse_trip(&rec) {
                Ok(t) if !ids.contains(&t.user_id) => {
                    return Err(PopulationError::DanglingUserRef {
                        row: line,
                        trip_id: t.trip_id,
                        user_id: t.user_id,
                    })
                }
                Ok(t) if !trip_ids.insert(t.trip_id.clone()) => {
                    rows.reject(line, "trip_id", format!("duplicate trip {:?}", t.trip_id))
                }
                Ok(t) => out_trips.push(t),
                Err((col, msg)) => rows.reject(line, &col, msg),
            }
        }
    }

    sort_trips(&mut out_trips);
    Ok(Population {
        persons: out_persons,
        trips: out_trips,
        rejects,
    })
}

/// Loads `persons.csv` and `trips.csv` from disk.
pub fn load_population(persons_file: &Path, trips_file: &Path) -> Result<Population, PopulationError> {
    let open = |p: &Path, name: &str| {
        File::open(p).map_err(|e| PopulationError::SchemaError {
            file: name.to_string(),
            row: 0,
            column: "file".into(),
            message: format!("{}: {e}", p.display()),
        })
    };
    read_population(open(persons_file, "persons.csv")?, open(trips_file, "trips.csv")?)
}

pub fn write_persons_csv<W: Write>(persons: &[SurveyPerson], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PERSONS_HEADER)?;
    for p in persons {
        w.write_record([
            p.user_id.as_str(),
            p.age_band.as_str(),
            p.gender.as_str(),
            p.employment.as_str(),
            p.occupation.as_str(),
            p.student_status.as_str(),
            if p.has_licence { "true" } else { "false" },
            &p.household_size.to_string(),
            &p.household_cars.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Distances are written with millimetre precision.
pub fn write_trips_csv<W: Write>(trips: &[TripRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIPS_HEADER)?;
    for t in trips {
        w.write_record([
            t.trip_id.as_str(),
            t.user_id.as_str(),
            t.mode.as_str(),
            &format_clock(t.start_s),
            &format_clock(t.end_s),
            &format!("{:.3}", t.distance_m),
            &t.passengers.to_string(),
            t.vehicle_class.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejects_csv<W: Write>(rejects: &[Reject], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["file", "row", "column", "message"])?;
    for r in rejects {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
