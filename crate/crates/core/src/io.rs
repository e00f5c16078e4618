//! CSV readers and writers for the pipeline's file formats.
//!
//! Floats are written in shortest round-trip form, so re-reading an emitted
//! file reproduces the in-memory values bit for bit. Every write goes to a
//! temporary sibling first and is renamed into place.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataError, FuturesQuote, PricePanel};
use crate::estimators::{EstimateResult, EventCoefficient};
use crate::geo::{Elevator, GeoError, GeoPoint, Plant, PlantStatus};
use crate::month::YearMonth;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, record {record}: {source}")]
    Geo {
        path: PathBuf,
        record: usize,
        source: GeoError,
    },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
}

impl IoError {
    /// True for malformed or invalid input content, as opposed to
    /// filesystem failures.
    pub fn is_validation(&self) -> bool {
        match self {
            IoError::Io { .. } => false,
            IoError::Csv { source, .. } => !matches!(source.kind(), csv::ErrorKind::Io(_)),
            IoError::Geo { .. } | IoError::Data { .. } => true,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `path` atomically via a temporary sibling and a rename.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), IoError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), IoError>,
{
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    let result = fill(&mut w).and_then(|()| {
        let file = w.into_inner().map_err(|e| io_err(&tmp)(e.into_error()))?;
        file.sync_all().map_err(io_err(&tmp))
    });
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for r in rows {
            wtr.serialize(r).map_err(csv_err(path))?;
        }
        wtr.flush().map_err(io_err(path))
    })
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    rdr.deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
struct PlantRecord {
    id: String,
    lat: f64,
    lon: f64,
    capacity_kbu_day: f64,
    status: PlantStatus,
    start_month: Option<YearMonth>,
    #[serde(default)]
    state: Option<String>,
}

pub fn read_plants(path: &Path) -> Result<Vec<Plant>, IoError> {
    read_csv::<PlantRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let geo = |source| IoError::Geo {
                path: path.to_path_buf(),
                record: i + 1,
                source,
            };
            let loc = GeoPoint::new(r.lat, r.lon).map_err(geo)?;
            let mut p =
                Plant::new(r.id, loc, r.capacity_kbu_day, r.status, r.start_month).map_err(geo)?;
            p.state = r.state.filter(|s| !s.is_empty());
            Ok(p)
        })
        .collect()
}

pub fn write_plants(path: &Path, plants: &[Plant]) -> Result<(), IoError> {
    let rows: Vec<PlantRecord> = plants
        .iter()
        .map(|p| PlantRecord {
            id: p.id.clone(),
            lat: p.location.lat(),
            lon: p.location.lon(),
            capacity_kbu_day: p.capacity_kbu_day,
            status: p.status,
            start_month: p.start_month,
            state: p.state.clone(),
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct ElevatorRecord {
    id: String,
    lat: f64,
    lon: f64,
    state: String,
}

pub fn read_elevators(path: &Path) -> Result<Vec<Elevator>, IoError> {
    read_csv::<ElevatorRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let loc = GeoPoint::new(r.lat, r.lon).map_err(|source| IoError::Geo {
                path: path.to_path_buf(),
                record: i + 1,
                source,
            })?;
            Ok(Elevator::new(r.id, loc, r.state))
        })
        .collect()
}

pub fn write_elevators(path: &Path, elevators: &[Elevator]) -> Result<(), IoError> {
    let rows: Vec<ElevatorRecord> = elevators
        .iter()
        .map(|e| ElevatorRecord {
            id: e.id.clone(),
            lat: e.location.lat(),
            lon: e.location.lon(),
            state: e.state.clone(),
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct CashRecord {
    date: NaiveDate,
    elevator_id: String,
    cash_cents: f64,
}

/// Reads daily cash bids. The calendar is the set of dates in the file.
pub fn read_cash(path: &Path) -> Result<PricePanel, IoError> {
    let rows = read_csv::<CashRecord>(path)?;
    PricePanel::from_observations(
        rows.into_iter()
            .map(|r| (r.date, r.elevator_id, r.cash_cents)),
    )
    .map_err(|source| IoError::Data {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes cash bids in date-major order.
pub fn write_cash(path: &Path, panel: &PricePanel) -> Result<(), IoError> {
    let mut rows: Vec<CashRecord> = panel
        .series()
        .iter()
        .flat_map(|(id, obs)| {
            obs.iter().map(move |&(date, cash_cents)| CashRecord {
                date,
                elevator_id: id.clone(),
                cash_cents,
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.date, &a.elevator_id).cmp(&(b.date, &b.elevator_id)));
    write_csv(path, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct FuturesRecord {
    date: NaiveDate,
    contract_id: String,
    settlement_cents: f64,
    volume: f64,
}

pub fn read_futures(path: &Path) -> Result<Vec<FuturesQuote>, IoError> {
    read_csv::<FuturesRecord>(path)?
        .into_iter()
        .map(|r| {
            FuturesQuote::new(r.date, r.contract_id, r.settlement_cents, r.volume).map_err(
                |source| IoError::Data {
                    path: path.to_path_buf(),
                    source,
                },
            )
        })
        .collect()
}

pub fn write_futures(path: &Path, quotes: &[FuturesQuote]) -> Result<(), IoError> {
    let rows: Vec<FuturesRecord> = quotes
        .iter()
        .map(|q| FuturesRecord {
            date: q.date,
            contract_id: q.contract_id.clone(),
            settlement_cents: q.settlement,
            volume: q.volume,
        })
        .collect();
    write_csv(path, &rows)
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub label: String,
    pub coefficient: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

impl ResultRecord {
    pub fn new(label: impl Into<String>, r: &EstimateResult) -> Self {
        Self {
            label: label.into(),
            coefficient: r.coefficient,
            se: r.se,
            t: r.t_stat,
            p: r.p_value,
            ci_lo: r.ci95.0,
            ci_hi: r.ci95.1,
            n: r.n_obs,
        }
    }
}

/// Results row with the event-study month and significance flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub label: String,
    pub coefficient: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub month: YearMonth,
    pub significant_5pct: bool,
}

impl EventRecord {
    pub fn new(label: impl Into<String>, c: &EventCoefficient) -> Self {
        let r = ResultRecord::new(label, &c.estimate);
        Self {
            label: r.label,
            coefficient: r.coefficient,
            se: r.se,
            t: r.t,
            p: r.p,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            n: r.n,
            month: c.month,
            significant_5pct: c.significant_5pct,
        }
    }
}
