#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use crushbasis::data::{build_event_window, compute_basis, select_active_futures, DidDataset};
use crushbasis::geo::{haversine_miles, BandAssignment, BandScheme, DistanceClass, Role};
use crushbasis::simulate::{
    generate_basis_panel, generate_layout, NewPlantSpec, SyntheticScenario,
};

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// 200 elevators in a box centred on a new plant; roughly 45% lie within
/// 100 mi of it. Dates cover the 60-day event window around March 2021.
pub fn new_plant_scenario(seed: u64, noise_sd: f64, tau: f64) -> SyntheticScenario {
    SyntheticScenario {
        seed,
        lat_min: 40.0,
        lat_max: 44.0,
        lon_min: -96.0,
        lon_max: -91.0,
        n_plants: 1,
        n_elevators: 200,
        noise_sd,
        start_date: date(2021, 1, 1),
        end_date: date(2021, 5, 31),
        new_plant: Some(NewPlantSpec {
            lat: 42.0,
            lon: -93.5,
            start: "2021-03".parse().unwrap(),
            tau,
            capacity_kbu_day: 100.0,
        }),
        ..SyntheticScenario::default()
    }
}

/// Event-window dataset where every elevator within 100 mi of the new plant
/// is treated and every other elevator is a control.
pub fn exposure_dataset(s: &SyntheticScenario) -> DidDataset {
    let layout = generate_layout(s).unwrap();
    let (cash, quotes) = generate_basis_panel(s, &layout).unwrap();
    let basis = compute_basis(&cash, &select_active_futures(&quotes));
    let plant = layout.plants.iter().find(|p| p.is_new()).unwrap();
    let scheme = BandScheme::default();
    let assignments: Vec<BandAssignment> = layout
        .elevators
        .iter()
        .map(|e| {
            let d = haversine_miles(e.location, plant.location);
            let role = match scheme.classify(d) {
                DistanceClass::Treated(band) => Role::Treated {
                    band,
                    plant_id: plant.id.clone(),
                },
                _ => Role::Control,
            };
            BandAssignment {
                elevator_id: e.id.clone(),
                role,
                anchor_id: plant.id.clone(),
                distance_mi: d,
            }
        })
        .collect();
    build_event_window(&basis, plant.start_month.unwrap(), &assignments)
        .unwrap()
        .dataset
}

/// File name to contents for every regular file in `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_crushbasis"))
}

pub fn input_flags(dir: &Path) -> Vec<String> {
    ["plants", "elevators", "cash", "futures"]
        .iter()
        .flat_map(|k| {
            [
                format!("--{k}"),
                dir.join(format!("{k}.csv")).display().to_string(),
            ]
        })
        .collect()
}
