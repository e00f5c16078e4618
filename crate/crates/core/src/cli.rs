//! Batch command-line surface.
//!
//! Each subcommand reads CSV inputs, runs one pipeline and writes CSV
//! outputs plus a `manifest.json` into the output directory. Exit codes:
//! 0 success, 1 I/O failure, 2 invalid input data, 3 estimation failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    aggregate_monthly, build_event_window, build_panel_dataset, compute_basis, filter_completeness,
    impute_panel, select_active_futures, BasisPanel, DataError, DidDataset, DEFAULT_COMPLETENESS,
};
use crate::estimators::{
    did_fe, panel_event_regression, sdid_att, EffectTable, EstimationError, EventCoefficients,
    SdidConfig,
};
use crate::feedstock::{
    feedstock_cost_gap, lcfs_credit_breakdown, FeedstockError, FeedstockProfile, FuelConstants,
};
use crate::geo::{
    assign_bands, control_for_new_plant_excluding, infer_plant_states, Band, BandAssignment,
    Elevator, GeoError, Plant, PlantStatus, Role,
};
use crate::io::{self, EventRecord, IoError, ResultRecord};
use crate::month::YearMonth;
use crate::simulate::{
    generate_basis_panel, generate_layout, oracle_report, SimulateError, SyntheticScenario,
};

/// Other new plants starting within this many months of a new plant
/// contaminate its event window.
const CONTAMINATION_MONTHS: i64 = 2;
pub const POOLED_SCOPE: &str = "pooled";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }

    /// Single-line, machine-parsable rendering for standard error.
    pub fn error_line(&self) -> String {
        let kind = match self {
            CliError::Io(_) => "io",
            CliError::Validation(_) => "validation",
            CliError::Estimation(_) => "estimation",
        };
        let msg = self.to_string().replace('\n', " ");
        format!(
            "error\tkind={kind}\texit={}\tmessage={msg}",
            self.exit_code()
        )
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<FeedstockError> for CliError {
    fn from(e: FeedstockError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        CliError::Estimation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "crushbasis",
    version,
    about = "Crush-plant effects on local soybean basis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario with known effects.
    Simulate(SimulateArgs),
    /// DiD and synthetic DiD around new-plant startups.
    EstimateNew(EstimateArgs),
    /// Monthly near/far regressions around existing plants.
    EstimateExisting(EstimateArgs),
    /// LCFS credit and feedstock cost arithmetic.
    Feedstock(FeedstockArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file of `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub plants: PathBuf,
    #[arg(long)]
    pub elevators: PathBuf,
    #[arg(long)]
    pub cash: PathBuf,
    #[arg(long)]
    pub futures: PathBuf,
    /// `all` or a comma list such as `0-20,20-40`.
    #[arg(long, default_value = "all")]
    pub bands: String,
    /// First date to use, YYYY-MM-DD.
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Last date to use, YYYY-MM-DD.
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Unit-weight regularization for synthetic DiD.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Newey–West lag for the monthly regressions.
    #[arg(long)]
    pub hac_lag: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_COMPLETENESS)]
    pub completeness: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Placebo replications for synthetic DiD standard errors.
    #[arg(long, default_value_t = 200)]
    pub placebo_reps: usize,
    /// Also report pooled results without this plant.
    #[arg(long)]
    pub exclude_plant: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeedstockArgs {
    #[arg(long, default_value_t = 55.0)]
    pub ci_a: f64,
    #[arg(long, default_value_t = 20.0)]
    pub ci_b: f64,
    #[arg(long, default_value_t = 0.45)]
    pub price_a: f64,
    #[arg(long, default_value_t = 0.37)]
    pub price_b: f64,
    #[arg(long, default_value_t = 129.65)]
    pub mj_per_gallon: f64,
    #[arg(long, default_value_t = 8.125)]
    pub lbs_per_gallon: f64,
    #[arg(long, default_value_t = 59.0)]
    pub credit_price: f64,
    /// Also write `feedstock.csv` and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputPaths {
    pub plants: PathBuf,
    pub elevators: PathBuf,
    pub cash: PathBuf,
    pub futures: PathBuf,
}

/// Resolved settings of an estimation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub bands: Vec<Band>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub zeta: Option<f64>,
    pub hac_lag: Option<usize>,
    pub completeness: f64,
    pub seed: u64,
    pub placebo_reps: usize,
    pub exclude_plant: Option<String>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_args(a: &EstimateArgs) -> Result<Self, CliError> {
        let cfg = Self {
            inputs: InputPaths {
                plants: a.plants.clone(),
                elevators: a.elevators.clone(),
                cash: a.cash.clone(),
                futures: a.futures.clone(),
            },
            bands: Band::parse_list(&a.bands)?,
            from: a.from,
            to: a.to,
            zeta: a.zeta,
            hac_lag: a.hac_lag,
            completeness: a.completeness,
            seed: a.seed,
            placebo_reps: a.placebo_reps,
            exclude_plant: a.exclude_plant.clone(),
            out: a.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.bands.is_empty() {
            return bad("no bands selected".into());
        }
        if !(self.completeness > 0.0 && self.completeness <= 1.0) {
            return bad(format!(
                "completeness must lie in (0, 1], got {}",
                self.completeness
            ));
        }
        if let Some(z) = self.zeta {
            if !(z >= 0.0 && z.is_finite()) {
                return bad(format!("zeta must be finite and nonnegative, got {z}"));
            }
        }
        if let (Some(f), Some(t)) = (self.from, self.to) {
            if t < f {
                return bad(format!("--to {t} precedes --from {f}"));
            }
        }
        for p in [
            &self.inputs.plants,
            &self.inputs.elevators,
            &self.inputs.cash,
            &self.inputs.futures,
        ] {
            if !p.is_file() {
                return Err(CliError::Io(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }

    fn sdid(&self) -> SdidConfig {
        SdidConfig {
            zeta: self.zeta,
            placebo_reps: self.placebo_reps,
            seed: self.seed,
            ..SdidConfig::default()
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    notes: Vec<String>,
}

/// Collects output files and notes for the manifest.
struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
    notes: Vec<String>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            notes: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let p = self.path(name);
        io::write_csv(&p, rows)?;
        Ok(())
    }

    fn note(&mut self, msg: String) {
        warn!("{msg}");
        self.notes.push(msg);
    }

    fn finish<C: Serialize>(
        mut self,
        command: &str,
        config: &C,
        seed: u64,
        inputs: &[(&str, &Path)],
    ) -> Result<PathBuf, CliError> {
        let digest = |p: &Path| io::sha256_file(p).map_err(CliError::from);
        let inputs = inputs
            .iter()
            .map(|(k, p)| Ok((k.to_string(), digest(p)?)))
            .collect::<Result<_, CliError>>()?;
        self.written.sort();
        self.written.dedup();
        let outputs = self
            .written
            .iter()
            .map(|n| Ok((n.clone(), digest(&self.dir.join(n))?)))
            .collect::<Result<_, CliError>>()?;
        let manifest = Manifest {
            command,
            config,
            seed,
            inputs,
            outputs,
            notes: self.notes,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        let path = self.dir.join("manifest.json");
        io::write_atomic(&path, |w| {
            w.write_all(json.as_bytes())
                .and_then(|()| w.write_all(b"\n"))
                .map_err(|source| IoError::Io {
                    path: path.clone(),
                    source,
                })
        })?;
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct SimulateEcho<'a> {
    scenario: &'a SyntheticScenario,
    out: &'a Path,
}

#[derive(Debug, Serialize)]
struct OracleRecord {
    band: String,
    effect: f64,
    new_plant_att: Option<f64>,
}

/// Writes the synthetic inputs and `oracle.csv`.
pub fn cmd_simulate(scenario: &SyntheticScenario, out: &Path) -> Result<(), CliError> {
    let layout = generate_layout(scenario)?;
    let (cash, quotes) = generate_basis_panel(scenario, &layout)?;
    let mut dir = OutputDir::create(out)?;
    let p = dir.path("plants.csv");
    io::write_plants(&p, &layout.plants)?;
    let p = dir.path("elevators.csv");
    io::write_elevators(&p, &layout.elevators)?;
    let p = dir.path("cash.csv");
    io::write_cash(&p, &cash)?;
    let p = dir.path("futures.csv");
    io::write_futures(&p, &quotes)?;
    let oracle: Vec<OracleRecord> = oracle_report(scenario)
        .entries
        .iter()
        .map(|e| OracleRecord {
            band: e.band.label().to_string(),
            effect: e.effect,
            new_plant_att: e.new_plant_att,
        })
        .collect();
    dir.csv("oracle.csv", &oracle)?;
    let cfg = dir.path("scenario.cfg");
    let text = scenario.to_config();
    io::write_atomic(&cfg, |w| {
        w.write_all(text.as_bytes()).map_err(|source| IoError::Io {
            path: cfg.clone(),
            source,
        })
    })?;
    let echo = SimulateEcho { scenario, out };
    dir.finish("simulate", &echo, scenario.seed, &[])?;
    Ok(())
}

struct Inputs {
    plants: Vec<Plant>,
    elevators: Vec<Elevator>,
    basis: BasisPanel,
}

/// Loads inputs and produces the daily basis: date restriction,
/// completeness filter, forward fill, then cash minus active futures.
fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let mut plants = io::read_plants(&cfg.inputs.plants)?;
    let elevators = io::read_elevators(&cfg.inputs.elevators)?;
    infer_plant_states(&mut plants, &elevators);
    let cash = io::read_cash(&cfg.inputs.cash)?.between(cfg.from, cfg.to);
    let quotes = io::read_futures(&cfg.inputs.futures)?;
    let cash = filter_completeness(&cash, cfg.completeness)?;
    if cash.n_elevators() == 0 {
        return Err(CliError::Validation(format!(
            "no elevator meets the completeness threshold {}",
            cfg.completeness
        )));
    }
    let filled = impute_panel(&cash);
    let basis = compute_basis(&filled, &select_active_futures(&quotes));
    Ok(Inputs {
        plants,
        elevators,
        basis,
    })
}

fn input_digests(cfg: &RunConfig) -> [(&'static str, &Path); 4] {
    [
        ("plants", cfg.inputs.plants.as_path()),
        ("elevators", cfg.inputs.elevators.as_path()),
        ("cash", cfg.inputs.cash.as_path()),
        ("futures", cfg.inputs.futures.as_path()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeansRecord {
    pub scope: String,
    pub band: String,
    pub treated_pre: Option<f64>,
    pub treated_post: Option<f64>,
    pub control_pre: Option<f64>,
    pub control_post: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

#[derive(Debug, Serialize)]
struct TrendRecord {
    scope: String,
    band: String,
    relative_day: i32,
    treated: Option<f64>,
    control: Option<f64>,
}

fn means_record(scope: &str, band: Band, data: &DidDataset) -> MeansRecord {
    let count = |t: u8| {
        let mut u: Vec<&str> = data
            .rows
            .iter()
            .filter(|r| r.treatment == t)
            .map(|r| r.unit_id.as_str())
            .collect();
        u.sort_unstable();
        u.dedup();
        u.len()
    };
    MeansRecord {
        scope: scope.to_string(),
        band: band.label().to_string(),
        treated_pre: data.cell_mean(1, 0),
        treated_post: data.cell_mean(1, 1),
        control_pre: data.cell_mean(0, 0),
        control_post: data.cell_mean(0, 1),
        n_treated: count(1),
        n_control: count(0),
    }
}

fn trend_records(scope: &str, band: Band, data: &DidDataset) -> Vec<TrendRecord> {
    let mut acc: BTreeMap<i32, [(f64, usize); 2]> = BTreeMap::new();
    for r in &data.rows {
        let cell = &mut acc.entry(r.relative_day).or_default()[r.treatment as usize];
        cell.0 += r.basis;
        cell.1 += 1;
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    acc.into_iter()
        .map(|(day, [c, t])| TrendRecord {
            scope: scope.to_string(),
            band: band.label().to_string(),
            relative_day: day,
            treated: mean(t),
            control: mean(c),
        })
        .collect()
}

/// Event-window dataset for one new plant and band, with unit ids tagged
/// by plant.
fn new_plant_window(
    plant: &Plant,
    inputs: &Inputs,
    band: Band,
) -> Result<Option<DidDataset>, CliError> {
    let start = plant.start_month.expect("new plants carry a start month");
    let contaminating: Vec<&Plant> = inputs
        .plants
        .iter()
        .filter(|q| q.is_new() && q.id != plant.id)
        .filter(|q| {
            q.start_month
                .is_some_and(|m| start.months_until(m).abs() <= CONTAMINATION_MONTHS)
        })
        .collect();
    let controls = control_for_new_plant_excluding(
        plant,
        &inputs.plants,
        &inputs.elevators,
        band,
        &contaminating,
    )?;
    let mut assignments: Vec<BandAssignment> =
        assign_bands(&inputs.elevators, &inputs.plants, |q| q.id == plant.id)?
            .into_iter()
            .filter(|a| a.band() == Some(band))
            .collect();
    if assignments.is_empty() || controls.is_empty() {
        return Ok(None);
    }
    assignments.extend(controls.into_iter().map(|e| BandAssignment {
        elevator_id: e.id.clone(),
        role: Role::Control,
        anchor_id: plant.id.clone(),
        distance_mi: f64::NAN,
    }));
    let window = build_event_window(&inputs.basis, start, &assignments)?;
    Ok(Some(window.dataset.tagged(&plant.id)))
}

/// Per-plant and pooled DiD and synthetic DiD around new plants. Writes
/// `table2.csv` (pre/post means), `table3.csv` (synthetic DiD),
/// `figure5.csv` (unweighted daily trends) and `figure6.csv` (DiD).
pub fn cmd_estimate_new(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let new_plants: Vec<&Plant> = inputs.plants.iter().filter(|p| p.is_new()).collect();
    if new_plants.is_empty() {
        return Err(CliError::Validation(
            "plants file contains no new plant".into(),
        ));
    }
    if let Some(x) = &cfg.exclude_plant {
        if !new_plants.iter().any(|p| &p.id == x) {
            return Err(CliError::Validation(format!(
                "--exclude-plant {x} is not a new plant"
            )));
        }
    }
    let mut dir = OutputDir::create(&cfg.out)?;

    // (scope, band) -> dataset, in output order.
    let mut cells: Vec<(String, Band, DidDataset)> = Vec::new();
    for &band in &cfg.bands {
        let mut parts = Vec::new();
        for p in &new_plants {
            match new_plant_window(p, &inputs, band)? {
                Some(d) if !d.rows.is_empty() => parts.push((p.id.clone(), d)),
                _ => dir.note(format!(
                    "{}: no treated or control data in band {band}",
                    p.id
                )),
            }
        }
        let pooled = DidDataset::pool(parts.iter().map(|(_, d)| d.clone()));
        let without = cfg.exclude_plant.as_ref().map(|x| {
            (
                format!("{POOLED_SCOPE}_without_{x}"),
                pooled.without_group(x),
            )
        });
        for (id, d) in parts {
            cells.push((id, band, d));
        }
        cells.push((POOLED_SCOPE.to_string(), band, pooled));
        if let Some((scope, d)) = without {
            cells.push((scope, band, d));
        }
    }

    let sdid_cfg = cfg.sdid();
    let fits: Vec<_> = cells
        .par_iter()
        .map(|(scope, band, data)| {
            let label = format!("{scope}:{band}");
            let did = did_fe(data).map(|f| ResultRecord::new(format!("{label}:did"), &f.att));
            let sdid = sdid_att(data, &sdid_cfg)
                .map(|f| ResultRecord::new(format!("{label}:sdid"), &f.att));
            (label, did, sdid)
        })
        .collect();

    let mut table2 = Vec::new();
    let mut figure5 = Vec::new();
    for (scope, band, data) in &cells {
        table2.push(means_record(scope, *band, data));
        if scope == POOLED_SCOPE {
            figure5.extend(trend_records(scope, *band, data));
        }
    }
    let (mut did_rows, mut sdid_rows) = (Vec::new(), Vec::new());
    for (label, did, sdid) in fits {
        match did {
            Ok(r) => did_rows.push(r),
            Err(e) => dir.note(format!("{label}: DiD not estimated: {e}")),
        }
        match sdid {
            Ok(r) => sdid_rows.push(r),
            Err(e) => dir.note(format!("{label}: synthetic DiD not estimated: {e}")),
        }
    }
    if did_rows.is_empty() && sdid_rows.is_empty() {
        return Err(CliError::Estimation(
            "no plant and band produced an estimate".into(),
        ));
    }
    dir.csv("table2.csv", &table2)?;
    dir.csv("table3.csv", &sdid_rows)?;
    dir.csv("figure5.csv", &figure5)?;
    dir.csv("figure6.csv", &did_rows)?;
    dir.finish("estimate-new", cfg, cfg.seed, &input_digests(cfg))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct MonthlyTrendRecord {
    month: YearMonth,
    group: String,
    basis: f64,
    n_elevators: usize,
}

#[derive(Debug, Serialize)]
struct UnidentifiedRecord {
    band: String,
    month: YearMonth,
}

/// Monthly mean basis per band and for the distant control ring.
fn monthly_trends(monthly: &BasisPanel, assignments: &[BandAssignment]) -> Vec<MonthlyTrendRecord> {
    let mut acc: BTreeMap<(YearMonth, String), (f64, usize)> = BTreeMap::new();
    for a in assignments {
        let group = match a.role {
            Role::Treated { band, .. } => band.label().to_string(),
            Role::Control => "100-300".to_string(),
            Role::Excluded => continue,
        };
        for &(d, v) in monthly.series.get(&a.elevator_id).into_iter().flatten() {
            let e = acc.entry((YearMonth::of(d), group.clone())).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((month, group), (s, n))| MonthlyTrendRecord {
            month,
            group,
            basis: s / n as f64,
            n_elevators: n,
        })
        .collect()
}

fn write_effect_table(dir: &mut OutputDir, table: &EffectTable) -> Result<(), CliError> {
    let path = dir.path("table4.csv");
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    io::write_atomic(&path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |source: csv::Error| IoError::Csv {
            path: path.clone(),
            source,
        };
        let mut header = vec!["year".to_string()];
        header.extend(table.bands.iter().map(|b| b.label().to_string()));
        header.push("mean".into());
        wtr.write_record(&header).map_err(err)?;
        for (i, y) in table.years.iter().enumerate() {
            let mut row = vec![y.to_string()];
            row.extend(table.cells[i].iter().map(|&v| cell(v)));
            row.push(cell(table.year_means[i]));
            wtr.write_record(&row).map_err(err)?;
        }
        let mut row = vec!["mean".to_string()];
        row.extend(table.band_means.iter().map(|&v| cell(v)));
        row.push(String::new());
        wtr.write_record(&row).map_err(err)?;
        wtr.flush().map_err(|source| IoError::Io {
            path: path.clone(),
            source,
        })
    })?;
    Ok(())
}

/// Results of [`estimate_existing`] per band.
#[derive(Debug, Clone, PartialEq)]
pub struct ExistingResults {
    pub per_band: Vec<(Band, EventCoefficients)>,
    pub table: EffectTable,
}

/// Runs the monthly near/far regression for each band in parallel.
pub fn estimate_existing(
    monthly: &BasisPanel,
    assignments: &[BandAssignment],
    bands: &[Band],
    hac_lag: Option<usize>,
) -> Result<(ExistingResults, Vec<String>), CliError> {
    let runs: Vec<(Band, Result<EventCoefficients, CliError>)> = bands
        .par_iter()
        .map(|&band| {
            let r = build_panel_dataset(monthly, assignments, band)
                .map_err(CliError::from)
                .and_then(|panel| panel_event_regression(&panel, hac_lag).map_err(CliError::from));
            (band, r)
        })
        .collect();
    let mut notes = Vec::new();
    let mut per_band = Vec::new();
    for (band, r) in runs {
        match r {
            Ok(c) => per_band.push((band, c)),
            Err(e) => notes.push(format!("band {band}: not estimated: {e}")),
        }
    }
    if per_band.is_empty() {
        return Err(CliError::Estimation(format!(
            "no band could be estimated ({})",
            notes.join("; ")
        )));
    }
    let refs: Vec<(Band, &EventCoefficients)> = per_band.iter().map(|(b, c)| (*b, c)).collect();
    let table = EffectTable::build(&refs);
    Ok((ExistingResults { per_band, table }, notes))
}

/// Monthly interaction regressions around existing plants. Writes
/// `figure7.csv` (monthly mean basis by group), `figure8.csv` (β per band
/// and month), `table4.csv` (year × band averages) and `unidentified.csv`.
pub fn cmd_estimate_existing(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let monthly = aggregate_monthly(&inputs.basis)?;
    let assignments = assign_bands(&inputs.elevators, &inputs.plants, |p| {
        p.status == PlantStatus::Existing
    })?;
    let mut dir = OutputDir::create(&cfg.out)?;
    let (results, notes) = estimate_existing(&monthly, &assignments, &cfg.bands, cfg.hac_lag)?;
    for n in notes {
        dir.note(n);
    }
    let mut figure8 = Vec::new();
    let mut unidentified = Vec::new();
    for (band, coeffs) in &results.per_band {
        figure8.extend(
            coeffs
                .coefficients
                .iter()
                .map(|c| EventRecord::new(band.label(), c)),
        );
        unidentified.extend(coeffs.unidentified.iter().map(|&month| UnidentifiedRecord {
            band: band.label().to_string(),
            month,
        }));
    }
    if !unidentified.is_empty() {
        dir.note(format!("{} band-months unidentified", unidentified.len()));
    }
    dir.csv("figure7.csv", &monthly_trends(&monthly, &assignments))?;
    dir.csv("figure8.csv", &figure8)?;
    dir.csv("unidentified.csv", &unidentified)?;
    write_effect_table(&mut dir, &results.table)?;
    dir.finish("estimate-existing", cfg, cfg.seed, &input_digests(cfg))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct FeedstockRecord {
    ci_gap_g_per_mj: f64,
    grams_per_gallon: f64,
    tons_per_gallon: f64,
    credit_usd_per_gallon: f64,
    cost_gap_usd_per_gallon: f64,
}

#[derive(Debug, Serialize)]
struct FeedstockEcho {
    a: FeedstockProfile,
    b: FeedstockProfile,
    constants: FuelConstants,
}

/// Computes the credit chain and cost gap; returns the printed line.
pub fn cmd_feedstock(args: &FeedstockArgs) -> Result<String, CliError> {
    let a = FeedstockProfile::new("a", args.ci_a, args.price_a)?;
    let b = FeedstockProfile::new("b", args.ci_b, args.price_b)?;
    let k = FuelConstants {
        mj_per_gallon: args.mj_per_gallon,
        lbs_feedstock_per_gallon: args.lbs_per_gallon,
        credit_price: args.credit_price,
    };
    k.validate()?;
    let br = lcfs_credit_breakdown(&a, &b, &k);
    let rec = FeedstockRecord {
        ci_gap_g_per_mj: br.ci_gap_g_per_mj,
        grams_per_gallon: br.grams_per_gallon,
        tons_per_gallon: br.tons_per_gallon,
        credit_usd_per_gallon: br.dollars_per_gallon,
        cost_gap_usd_per_gallon: feedstock_cost_gap(&a, &b, &k),
    };
    let line = format!(
        "{} g/MJ x {} MJ/gal = {} g = {} t; x ${}/t = ${}/gal credit; feedstock cost gap ${}/gal",
        short(rec.ci_gap_g_per_mj),
        short(k.mj_per_gallon),
        short(rec.grams_per_gallon),
        short(rec.tons_per_gallon),
        short(k.credit_price),
        short(rec.credit_usd_per_gallon),
        short(rec.cost_gap_usd_per_gallon)
    );
    if let Some(out) = &args.out {
        let mut dir = OutputDir::create(out)?;
        dir.csv("feedstock.csv", std::slice::from_ref(&rec))?;
        let echo = FeedstockEcho { a, b, constants: k };
        dir.finish("feedstock", &echo, 0, &[])?;
    }
    Ok(line)
}

/// Rounds to 8 decimals for display and drops trailing zeros.
fn short(x: f64) -> String {
    let s = format!("{x:.8}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Parses arguments and runs one subcommand.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let mut scenario = match &a.scenario {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                    SyntheticScenario::parse(&text)
                        .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
                }
                None => SyntheticScenario::default(),
            };
            if let Some(seed) = a.seed {
                scenario.seed = seed;
            }
            cmd_simulate(&scenario, &a.out)
        }
        Command::EstimateNew(a) => cmd_estimate_new(&RunConfig::from_args(&a)?),
        Command::EstimateExisting(a) => cmd_estimate_existing(&RunConfig::from_args(&a)?),
        Command::Feedstock(a) => {
            println!("{}", cmd_feedstock(&a)?);
            Ok(())
        }
    }
}
