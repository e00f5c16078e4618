//! Synthetic data-generating processes with known treatment effects.
//!
//! Cash bids are generated as
//! `futures(d) + base + seasonal(d) + effect(distance to nearest existing plant) + τ·1{new plant exposure} + noise`,
//! so every estimator in the crate has an analytic target.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DataError, FuturesQuote, PricePanel};
use crate::geo::{
    haversine_miles, nearest_plant, Band, BandScheme, DistanceClass, Elevator, GeoError, GeoPoint,
    Plant, PlantStatus, CONTAMINATION_RADIUS_MI,
};
use crate::month::YearMonth;

/// Day of year at which the seasonal term peaks (mid July).
const SEASONAL_PEAK_DOY: f64 = 196.0;
const FUTURES_START: f64 = 1200.0;
const FUTURES_LOG_SD: f64 = 0.01;
const BACK_MONTH_SPREAD: f64 = 6.0;
const FRONT_CONTRACT: &str = "C1";
const BACK_CONTRACT: &str = "C2";
pub const NEW_PLANT_ID: &str = "NEW1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulateError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario has no effect for band {0}")]
    UncoveredBand(Band),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewPlantSpec {
    pub lat: f64,
    pub lon: f64,
    pub start: YearMonth,
    /// Basis shift (cents/bushel) for elevators within 100 mi from the
    /// first day of `start` on.
    pub tau: f64,
    pub capacity_kbu_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub n_plants: usize,
    pub n_elevators: usize,
    pub base_basis: f64,
    pub seasonal_amplitude: f64,
    pub noise_sd: f64,
    /// AR(1) coefficient of the noise in time; 0 gives iid noise.
    pub noise_ar1: f64,
    /// Effect per band, indexed by [`Band::index`]; `None` means the band is
    /// not covered and contributes zero.
    pub effects: [Option<f64>; 5],
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub state: String,
    pub trading_days_only: bool,
    pub missing_prob: f64,
    pub new_plant: Option<NewPlantSpec>,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            seed: 42,
            lat_min: 40.5,
            lat_max: 43.5,
            lon_min: -96.5,
            lon_max: -90.5,
            n_plants: 3,
            n_elevators: 200,
            base_basis: -30.0,
            seasonal_amplitude: 0.0,
            noise_sd: 0.0,
            noise_ar1: 0.0,
            effects: [Some(0.0); 5],
            start_date: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2024, 9, 30).expect("valid date"),
            state: "IA".into(),
            trading_days_only: false,
            missing_prob: 0.0,
            new_plant: None,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: &str| Err(SimulateError::Invalid(m.to_string()));
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return bad("region box is empty");
        }
        GeoPoint::new(self.lat_min, self.lon_min)?;
        GeoPoint::new(self.lat_max, self.lon_max)?;
        if self.n_elevators == 0 {
            return bad("n_elevators must be positive");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be nonnegative");
        }
        if !(self.noise_ar1 > -1.0 && self.noise_ar1 < 1.0) {
            return bad("noise_ar1 must lie in (-1, 1)");
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return bad("missing_prob must lie in [0, 1)");
        }
        if self.end_date < self.start_date {
            return bad("end_date precedes start_date");
        }
        let values: Vec<f64> = self.effects.iter().map(|e| e.unwrap_or(0.0)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return bad("effects must be finite");
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return bad("effects must be nonincreasing in distance");
        }
        if let Some(np) = &self.new_plant {
            GeoPoint::new(np.lat, np.lon)?;
            if !(np.capacity_kbu_day > 0.0) {
                return bad("new_plant_capacity must be positive");
            }
        }
        Ok(())
    }

    /// Effect of lying at `distance_mi` from the nearest existing plant.
    pub fn effect_at(&self, distance_mi: f64) -> f64 {
        match BandScheme::default().classify(distance_mi) {
            DistanceClass::Treated(b) => self.effects[b.index()].unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Parses a flat `key = value` file. Blank lines and `#` comments are
    /// ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, SimulateError> {
        let mut s = Self::default();
        let mut np: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| SimulateError::Parse {
                line: line_no,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            fn num<T: FromStr>(v: &str, key: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
            }
            let r: Result<(), String> = (|| {
                match key {
                    "seed" => s.seed = num(value, key)?,
                    "lat_min" => s.lat_min = num(value, key)?,
                    "lat_max" => s.lat_max = num(value, key)?,
                    "lon_min" => s.lon_min = num(value, key)?,
                    "lon_max" => s.lon_max = num(value, key)?,
                    "n_plants" => s.n_plants = num(value, key)?,
                    "n_elevators" => s.n_elevators = num(value, key)?,
                    "base_basis" => s.base_basis = num(value, key)?,
                    "seasonal_amplitude" => s.seasonal_amplitude = num(value, key)?,
                    "noise_sd" => s.noise_sd = num(value, key)?,
                    "noise_ar1" => s.noise_ar1 = num(value, key)?,
                    "start_date" => s.start_date = num(value, key)?,
                    "end_date" => s.end_date = num(value, key)?,
                    "state" => s.state = value.to_string(),
                    "trading_days_only" => s.trading_days_only = num(value, key)?,
                    "missing_prob" => s.missing_prob = num(value, key)?,
                    k if k.starts_with("effect_") => {
                        let band: Band = k["effect_".len()..]
                            .replace('_', "-")
                            .parse()
                            .map_err(|_| format!("unknown band key {k}"))?;
                        s.effects[band.index()] = if value.eq_ignore_ascii_case("none") {
                            None
                        } else {
                            Some(num(value, key)?)
                        };
                    }
                    k @ ("new_plant_lat" | "new_plant_lon" | "new_plant_start"
                    | "new_plant_tau" | "new_plant_capacity") => {
                        np.insert(k, (line_no, value));
                    }
                    other => return Err(format!("unknown key {other}")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        if !np.is_empty() {
            let get = |k: &str| {
                np.get(k).copied().ok_or_else(|| SimulateError::Parse {
                    line: np.values().map(|v| v.0).min().unwrap_or(0),
                    reason: format!("new plant settings are missing {k}"),
                })
            };
            let parse = |k: &str| -> Result<f64, SimulateError> {
                let (line, v) = get(k)?;
                v.parse().map_err(|_| SimulateError::Parse {
                    line,
                    reason: format!("{k}: cannot parse {v:?}"),
                })
            };
            let (line, start) = get("new_plant_start")?;
            s.new_plant = Some(NewPlantSpec {
                lat: parse("new_plant_lat")?,
                lon: parse("new_plant_lon")?,
                start: start.parse().map_err(|_| SimulateError::Parse {
                    line,
                    reason: format!("new_plant_start: cannot parse {start:?}"),
                })?,
                tau: parse("new_plant_tau")?,
                capacity_kbu_day: np
                    .contains_key("new_plant_capacity")
                    .then(|| parse("new_plant_capacity"))
                    .transpose()?
                    .unwrap_or(100.0),
            });
        }
        s.validate()?;
        Ok(s)
    }

    /// Inverse of [`SyntheticScenario::parse`].
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("lat_min", self.lat_min.to_string());
        kv("lat_max", self.lat_max.to_string());
        kv("lon_min", self.lon_min.to_string());
        kv("lon_max", self.lon_max.to_string());
        kv("n_plants", self.n_plants.to_string());
        kv("n_elevators", self.n_elevators.to_string());
        kv("base_basis", self.base_basis.to_string());
        kv("seasonal_amplitude", self.seasonal_amplitude.to_string());
        kv("noise_sd", self.noise_sd.to_string());
        kv("noise_ar1", self.noise_ar1.to_string());
        for b in Band::ALL {
            let v = self.effects[b.index()].map_or("none".to_string(), |v| v.to_string());
            kv(&format!("effect_{}", b.label().replace('-', "_")), v);
        }
        kv("start_date", self.start_date.to_string());
        kv("end_date", self.end_date.to_string());
        kv("state", self.state.clone());
        kv("trading_days_only", self.trading_days_only.to_string());
        kv("missing_prob", self.missing_prob.to_string());
        if let Some(np) = &self.new_plant {
            kv("new_plant_lat", np.lat.to_string());
            kv("new_plant_lon", np.lon.to_string());
            kv("new_plant_start", np.start.to_string());
            kv("new_plant_tau", np.tau.to_string());
            kv("new_plant_capacity", np.capacity_kbu_day.to_string());
        }
        out
    }

    pub fn calendar(&self) -> Vec<NaiveDate> {
        let mut out = Vec::new();
        let mut d = self.start_date;
        while d <= self.end_date {
            if !self.trading_days_only || !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
            }
            d += Duration::days(1);
        }
        out
    }

    fn seasonal(&self, d: NaiveDate) -> f64 {
        if self.seasonal_amplitude == 0.0 {
            return 0.0;
        }
        let doy = d.ordinal() as f64;
        self.seasonal_amplitude * (2.0 * PI * (doy - SEASONAL_PEAK_DOY) / 365.25).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub plants: Vec<Plant>,
    pub elevators: Vec<Elevator>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const LAYOUT_STREAM: u64 = 0;
const FUTURES_STREAM: u64 = u64::MAX;

/// Places existing plants and elevators uniformly in the region box, plus
/// the new plant if the scenario has one.
pub fn generate_layout(s: &SyntheticScenario) -> Result<Layout, SimulateError> {
    s.validate()?;
    let mut rng = stream(s.seed, LAYOUT_STREAM);
    let point = |rng: &mut ChaCha8Rng| {
        GeoPoint::new(
            rng.random_range(s.lat_min..=s.lat_max),
            rng.random_range(s.lon_min..=s.lon_max),
        )
    };
    let mut plants = Vec::with_capacity(s.n_plants + 1);
    for i in 0..s.n_plants {
        let loc = point(&mut rng)?;
        let capacity = rng.random_range(50.0..150.0_f64).round();
        plants.push(
            Plant::new(
                format!("P{:02}", i + 1),
                loc,
                capacity,
                PlantStatus::Existing,
                None,
            )?
            .with_state(&s.state),
        );
    }
    if let Some(np) = &s.new_plant {
        plants.push(
            Plant::new(
                NEW_PLANT_ID,
                GeoPoint::new(np.lat, np.lon)?,
                np.capacity_kbu_day,
                PlantStatus::New,
                Some(np.start),
            )?
            .with_state(&s.state),
        );
    }
    let width = s.n_elevators.to_string().len().max(4);
    let elevators = (0..s.n_elevators)
        .map(|i| {
            Ok(Elevator::new(
                format!("E{:0width$}", i + 1),
                point(&mut rng)?,
                &s.state,
            ))
        })
        .collect::<Result<_, SimulateError>>()?;
    Ok(Layout { plants, elevators })
}

/// Seeded log random walk for the front contract, rounded to quarter cents.
fn futures_path(s: &SyntheticScenario, calendar: &[NaiveDate]) -> Vec<f64> {
    let mut rng = stream(s.seed, FUTURES_STREAM);
    let mut log_f = FUTURES_START.ln();
    calendar
        .iter()
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            log_f += FUTURES_LOG_SD * z;
            (log_f.exp() * 4.0).round() / 4.0
        })
        .collect()
}

/// Front and back contract quotes per date. Leadership in volume
/// alternates by calendar month, so the active contract changes twelve
/// times a year.
fn futures_quotes(
    calendar: &[NaiveDate],
    front: &[f64],
) -> Result<(Vec<FuturesQuote>, Vec<f64>), DataError> {
    let mut quotes = Vec::with_capacity(2 * calendar.len());
    let mut active = Vec::with_capacity(calendar.len());
    for (&d, &f) in calendar.iter().zip(front) {
        let front_leads = d.month() % 2 == 1;
        let (v1, v2) = if front_leads {
            (5000.0, 3000.0)
        } else {
            (3000.0, 5000.0)
        };
        let back = f + BACK_MONTH_SPREAD;
        quotes.push(FuturesQuote::new(d, FRONT_CONTRACT, f, v1)?);
        quotes.push(FuturesQuote::new(d, BACK_CONTRACT, back, v2)?);
        active.push(if front_leads { f } else { back });
    }
    Ok((quotes, active))
}

/// The noiseless basis component of an elevator on a date.
pub fn expected_basis(
    s: &SyntheticScenario,
    layout: &Layout,
    elevator: &Elevator,
    d: NaiveDate,
) -> f64 {
    let existing = layout
        .plants
        .iter()
        .filter(|p| p.status == PlantStatus::Existing);
    let effect =
        nearest_plant(elevator.location, existing).map_or(0.0, |(_, dist)| s.effect_at(dist));
    s.base_basis + s.seasonal(d) + effect + new_plant_shift(s, elevator, d)
}

fn new_plant_shift(s: &SyntheticScenario, elevator: &Elevator, d: NaiveDate) -> f64 {
    match &s.new_plant {
        Some(np) if d >= np.start.first_day() => {
            let loc = GeoPoint::new(np.lat, np.lon).expect("validated");
            if haversine_miles(loc, elevator.location) < CONTAMINATION_RADIUS_MI {
                np.tau
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Daily cash bids and futures quotes for the scenario.
pub fn generate_basis_panel(
    s: &SyntheticScenario,
    layout: &Layout,
) -> Result<(PricePanel, Vec<FuturesQuote>), SimulateError> {
    s.validate()?;
    let calendar = s.calendar();
    let front = futures_path(s, &calendar);
    let (quotes, active) = futures_quotes(&calendar, &front)?;
    let innovation_sd = s.noise_sd * (1.0 - s.noise_ar1 * s.noise_ar1).sqrt();

    let series: BTreeMap<String, Vec<(NaiveDate, f64)>> = layout
        .elevators
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = stream(s.seed, i as u64 + 1);
            let mut noise = 0.0;
            let mut obs = Vec::with_capacity(calendar.len());
            for (t, (&d, &f)) in calendar.iter().zip(&active).enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                noise = if t == 0 {
                    s.noise_sd * z
                } else {
                    s.noise_ar1 * noise + innovation_sd * z
                };
                let missing = rng.random::<f64>() < s.missing_prob;
                if !missing {
                    obs.push((d, f + expected_basis(s, layout, e, d) + noise));
                }
            }
            (e.id.clone(), obs)
        })
        .collect();
    Ok((PricePanel::new(calendar, series)?, quotes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEntry {
    pub band: Band,
    /// True effect of lying in `band` around an existing plant.
    pub effect: f64,
    /// True ATT of the new plant, if the scenario has one.
    pub new_plant_att: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
}

pub fn oracle_att(s: &SyntheticScenario, band: Band) -> Result<OracleEntry, SimulateError> {
    let effect = s.effects[band.index()].ok_or(SimulateError::UncoveredBand(band))?;
    Ok(OracleEntry {
        band,
        effect,
        new_plant_att: s.new_plant.as_ref().map(|np| np.tau),
    })
}

/// Oracle entries for every band the scenario covers.
pub fn oracle_report(s: &SyntheticScenario) -> OracleReport {
    OracleReport {
        entries: Band::ALL
            .into_iter()
            .filter_map(|b| oracle_att(s, b).ok())
            .collect(),
    }
}
