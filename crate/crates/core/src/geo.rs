//! Great-circle distances and distance-band assignment of elevators around
//! crush plants.
//!
//! Bands are half-open mileage intervals `[lo, hi)`. Every elevator is
//! anchored to its nearest eligible plant (ties broken by plant id) and then
//! classified as treated in one of five bands, as a distant control, or as
//! excluded.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::month::YearMonth;

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MI: f64 = 3958.8;

/// Radius around a new plant inside which elevators are considered exposed.
pub const CONTAMINATION_RADIUS_MI: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("no anchor plants left after filtering")]
    EmptyAnchorSet,
    #[error("no valid control for new plant {plant_id}: no existing plant in state {state}")]
    NoValidControl { plant_id: String, state: String },
    #[error("plant {0} has no state; cannot build same-state controls")]
    MissingState(String),
    #[error("invalid plant {id}: {reason}")]
    InvalidPlant { id: String, reason: String },
    #[error("invalid band scheme: {0}")]
    InvalidBands(String),
    #[error("unknown band `{0}`")]
    UnknownBand(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in statute miles (haversine formula).
pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MI * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantStatus {
    Existing,
    New,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub id: String,
    pub location: GeoPoint,
    pub capacity_kbu_day: f64,
    pub status: PlantStatus,
    pub start_month: Option<YearMonth>,
    /// Two-letter region code. Optional in the plants file; see
    /// [`infer_plant_states`].
    pub state: Option<String>,
}

impl Plant {
    pub fn new(
        id: impl Into<String>,
        location: GeoPoint,
        capacity_kbu_day: f64,
        status: PlantStatus,
        start_month: Option<YearMonth>,
    ) -> Result<Self, GeoError> {
        let id = id.into();
        let invalid = |reason: &str| GeoError::InvalidPlant {
            id: id.clone(),
            reason: reason.to_string(),
        };
        if !(capacity_kbu_day > 0.0) {
            return Err(invalid("capacity must be positive"));
        }
        match (status, start_month) {
            (PlantStatus::New, None) => return Err(invalid("new plant requires a start month")),
            (PlantStatus::Existing, Some(_)) => {
                return Err(invalid("existing plant must not carry a start month"))
            }
            _ => {}
        }
        Ok(Self {
            id,
            location,
            capacity_kbu_day,
            status,
            start_month,
            state: None,
        })
    }

    pub fn with_state(mut self, state: impl Into<String>) -> Self {
        self.state = Some(state.into());
        self
    }

    pub fn is_new(&self) -> bool {
        self.status == PlantStatus::New
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elevator {
    pub id: String,
    pub location: GeoPoint,
    pub state: String,
}

impl Elevator {
    pub fn new(id: impl Into<String>, location: GeoPoint, state: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            location,
            state: state.into(),
        }
    }
}

/// The five treatment distance bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    B0_20,
    B20_40,
    B40_60,
    B60_80,
    B80_100,
}

impl Band {
    pub const ALL: [Band; 5] = [
        Band::B0_20,
        Band::B20_40,
        Band::B40_60,
        Band::B60_80,
        Band::B80_100,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Half-open interval in miles under the default scheme.
    pub fn bounds(self) -> (f64, f64) {
        BandScheme::default().bounds(self)
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::B0_20 => "0-20",
            Band::B20_40 => "20-40",
            Band::B40_60 => "40-60",
            Band::B60_80 => "60-80",
            Band::B80_100 => "80-100",
        }
    }

    /// Parses a comma-separated list such as `0-20,40-60`; `all` selects every band.
    pub fn parse_list(s: &str) -> Result<Vec<Band>, GeoError> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Band::ALL.to_vec());
        }
        let mut out: Vec<Band> = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Band {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Band::ALL
            .into_iter()
            .find(|b| b.label() == t || format!("{b:?}") == t)
            .ok_or_else(|| GeoError::UnknownBand(t.to_string()))
    }
}

/// Band edges in miles. `edges[k]..edges[k+1]` is band `k`; the distant
/// control ring is `control.0..control.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandScheme {
    pub edges: [f64; 6],
    pub control: (f64, f64),
}

impl Default for BandScheme {
    fn default() -> Self {
        Self {
            edges: [0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
            control: (100.0, 300.0),
        }
    }
}

/// Distance class of a single elevator relative to its anchor plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceClass {
    Treated(Band),
    Control,
    Excluded,
}

impl BandScheme {
    pub fn validate(&self) -> Result<(), GeoError> {
        if self.edges[0] < 0.0 || self.edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(GeoError::InvalidBands(format!(
                "edges must be nonnegative and strictly increasing: {:?}",
                self.edges
            )));
        }
        if !(self.control.0 < self.control.1) || self.control.0 < self.edges[5] {
            return Err(GeoError::InvalidBands(format!(
                "control ring {:?} must be nonempty and lie beyond the last band edge",
                self.control
            )));
        }
        Ok(())
    }

    pub fn bounds(&self, band: Band) -> (f64, f64) {
        let k = band.index();
        (self.edges[k], self.edges[k + 1])
    }

    pub fn classify(&self, distance_mi: f64) -> DistanceClass {
        if let Some(band) = Band::ALL.into_iter().find(|&b| {
            let (lo, hi) = self.bounds(b);
            distance_mi >= lo && distance_mi < hi
        }) {
            return DistanceClass::Treated(band);
        }
        if distance_mi >= self.control.0 && distance_mi < self.control.1 {
            DistanceClass::Control
        } else {
            DistanceClass::Excluded
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Treated { band: Band, plant_id: String },
    Control,
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandAssignment {
    pub elevator_id: String,
    pub role: Role,
    /// Nearest eligible plant; for controls this is the plant whose
    /// far group the elevator belongs to.
    pub anchor_id: String,
    pub distance_mi: f64,
}

impl BandAssignment {
    pub fn band(&self) -> Option<Band> {
        match self.role {
            Role::Treated { band, .. } => Some(band),
            _ => None,
        }
    }
}

/// Nearest plant by great-circle distance; ties go to the smaller id.
pub fn nearest_plant<'a, I>(point: GeoPoint, plants: I) -> Option<(&'a Plant, f64)>
where
    I: IntoIterator<Item = &'a Plant>,
{
    plants
        .into_iter()
        .map(|p| (p, haversine_miles(point, p.location)))
        .min_by(|(pa, da), (pb, db)| {
            da.partial_cmp(db)
                .unwrap_or(Ordering::Equal)
                .then_with(|| pa.id.cmp(&pb.id))
        })
}

pub fn assign_bands<F>(
    elevators: &[Elevator],
    plants: &[Plant],
    anchor_filter: F,
) -> Result<Vec<BandAssignment>, GeoError>
where
    F: Fn(&Plant) -> bool,
{
    assign_bands_with(elevators, plants, anchor_filter, &BandScheme::default())
}

pub fn assign_bands_with<F>(
    elevators: &[Elevator],
    plants: &[Plant],
    anchor_filter: F,
    scheme: &BandScheme,
) -> Result<Vec<BandAssignment>, GeoError>
where
    F: Fn(&Plant) -> bool,
{
    scheme.validate()?;
    let anchors: Vec<&Plant> = plants.iter().filter(|p| anchor_filter(p)).collect();
    if anchors.is_empty() {
        return Err(GeoError::EmptyAnchorSet);
    }
    Ok(elevators
        .iter()
        .map(|e| {
            let (plant, distance_mi) =
                nearest_plant(e.location, anchors.iter().copied()).expect("nonempty anchors");
            let role = match scheme.classify(distance_mi) {
                DistanceClass::Treated(band) => Role::Treated {
                    band,
                    plant_id: plant.id.clone(),
                },
                DistanceClass::Control => Role::Control,
                DistanceClass::Excluded => Role::Excluded,
            };
            BandAssignment {
                elevator_id: e.id.clone(),
                role,
                anchor_id: plant.id.clone(),
                distance_mi,
            }
        })
        .collect())
}

/// Same-state control elevators for a new plant: elevators lying in `band`
/// around any existing plant of the new plant's state, minus those within
/// [`CONTAMINATION_RADIUS_MI`] of the new plant.
pub fn control_for_new_plant<'a>(
    new_plant: &Plant,
    existing_plants: &[Plant],
    elevators: &'a [Elevator],
    band: Band,
) -> Result<Vec<&'a Elevator>, GeoError> {
    control_for_new_plant_excluding(new_plant, existing_plants, elevators, band, &[])
}

/// As [`control_for_new_plant`], additionally removing elevators within
/// [`CONTAMINATION_RADIUS_MI`] of any plant in `contaminating`.
pub fn control_for_new_plant_excluding<'a>(
    new_plant: &Plant,
    existing_plants: &[Plant],
    elevators: &'a [Elevator],
    band: Band,
    contaminating: &[&Plant],
) -> Result<Vec<&'a Elevator>, GeoError> {
    let state = new_plant
        .state
        .as_deref()
        .ok_or_else(|| GeoError::MissingState(new_plant.id.clone()))?;
    let anchors: Vec<&Plant> = existing_plants
        .iter()
        .filter(|p| p.status == PlantStatus::Existing && p.state.as_deref() == Some(state))
        .collect();
    if anchors.is_empty() {
        return Err(GeoError::NoValidControl {
            plant_id: new_plant.id.clone(),
            state: state.to_string(),
        });
    }
    let (lo, hi) = band.bounds();
    let exposed = |e: &Elevator| {
        std::iter::once(new_plant)
            .chain(contaminating.iter().copied())
            .any(|p| haversine_miles(e.location, p.location) < CONTAMINATION_RADIUS_MI)
    };
    Ok(elevators
        .iter()
        .filter(|e| {
            anchors.iter().any(|p| {
                let d = haversine_miles(e.location, p.location);
                d >= lo && d < hi
            })
        })
        .filter(|e| !exposed(e))
        .collect())
}

/// Fills missing plant states with the state of the nearest elevator.
pub fn infer_plant_states(plants: &mut [Plant], elevators: &[Elevator]) {
    for plant in plants.iter_mut().filter(|p| p.state.is_none()) {
        plant.state = elevators
            .iter()
            .map(|e| (e, haversine_miles(plant.location, e.location)))
            .min_by(|(ea, da), (eb, db)| {
                da.partial_cmp(db)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| ea.id.cmp(&eb.id))
            })
            .map(|(e, _)| e.state.clone());
    }
}
