//! Basis construction and the daily/monthly panel pipeline: active-futures
//! selection, completeness filtering, forward imputation, monthly
//! aggregation, event windows around new plants, and plant-level panels
//! around existing plants.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::geo::{Band, BandAssignment, Role};
use crate::month::YearMonth;

/// Length of the pre and post event windows in calendar days.
pub const EVENT_WINDOW_DAYS: i64 = 30;

/// Default completeness threshold for keeping an elevator.
pub const DEFAULT_COMPLETENESS: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("empty calendar")]
    EmptyCalendar,
    #[error("completeness threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("elevator {elevator}: dates not strictly increasing at {date}")]
    UnsortedDates { elevator: String, date: NaiveDate },
    #[error("elevator {elevator}: date {date} not in calendar")]
    DateOutsideCalendar { elevator: String, date: NaiveDate },
    #[error("invalid futures quote on {date} for {contract}: {reason}")]
    InvalidQuote {
        date: NaiveDate,
        contract: String,
        reason: &'static str,
    },
    #[error("expected {expected:?} basis panel, got {actual:?}")]
    WrongFrequency {
        expected: Frequency,
        actual: Frequency,
    },
    #[error("non-finite value for elevator {elevator} on {date}")]
    NonFinite { elevator: String, date: NaiveDate },
}

/// Daily cash prices (cents/bushel) per elevator against a calendar of
/// expected observation dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    calendar: Vec<NaiveDate>,
    series: BTreeMap<String, Vec<(NaiveDate, f64)>>,
}

impl PricePanel {
    pub fn new(
        calendar: Vec<NaiveDate>,
        series: BTreeMap<String, Vec<(NaiveDate, f64)>>,
    ) -> Result<Self, DataError> {
        let mut calendar = calendar;
        calendar.sort();
        calendar.dedup();
        let cal: BTreeSet<NaiveDate> = calendar.iter().copied().collect();
        for (id, obs) in &series {
            for w in obs.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(DataError::UnsortedDates {
                        elevator: id.clone(),
                        date: w[1].0,
                    });
                }
            }
            for &(date, v) in obs {
                if !cal.contains(&date) {
                    return Err(DataError::DateOutsideCalendar {
                        elevator: id.clone(),
                        date,
                    });
                }
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        elevator: id.clone(),
                        date,
                    });
                }
            }
        }
        Ok(Self { calendar, series })
    }

    /// Builds a panel from `(date, elevator, cash)` triples. The calendar is
    /// the set of distinct observation dates. Later duplicates of a
    /// `(date, elevator)` cell overwrite earlier ones.
    pub fn from_observations<I, S>(obs: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (NaiveDate, S, f64)>,
        S: Into<String>,
    {
        let mut cells: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
        let mut calendar = BTreeSet::new();
        for (date, id, cash) in obs {
            calendar.insert(date);
            cells.entry(id.into()).or_default().insert(date, cash);
        }
        let series = cells
            .into_iter()
            .map(|(id, m)| (id, m.into_iter().collect()))
            .collect();
        Self::new(calendar.into_iter().collect(), series)
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn series(&self) -> &BTreeMap<String, Vec<(NaiveDate, f64)>> {
        &self.series
    }

    pub fn get(&self, elevator: &str) -> Option<&[(NaiveDate, f64)]> {
        self.series.get(elevator).map(Vec::as_slice)
    }

    pub fn n_elevators(&self) -> usize {
        self.series.len()
    }

    pub fn n_observations(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    /// Fraction of calendar dates observed for `elevator`.
    pub fn completeness(&self, elevator: &str) -> Option<f64> {
        if self.calendar.is_empty() {
            return None;
        }
        self.get(elevator)
            .map(|s| s.len() as f64 / self.calendar.len() as f64)
    }

    /// Restricts calendar and observations to `from..=to`.
    pub fn between(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> Self {
        let keep = |d: &NaiveDate| from.is_none_or(|f| *d >= f) && to.is_none_or(|t| *d <= t);
        Self {
            calendar: self.calendar.iter().copied().filter(keep).collect(),
            series: self
                .series
                .iter()
                .map(|(id, s)| {
                    (
                        id.clone(),
                        s.iter().copied().filter(|(d, _)| keep(d)).collect(),
                    )
                })
                .collect(),
        }
    }

    /// Restricts the panel to the given elevators, keeping the calendar.
    pub fn retain<F: FnMut(&str) -> bool>(&self, mut keep: F) -> Self {
        Self {
            calendar: self.calendar.clone(),
            series: self
                .series
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(id, s)| (id.clone(), s.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuturesQuote {
    pub date: NaiveDate,
    pub contract_id: String,
    pub settlement: f64,
    pub volume: f64,
}

impl FuturesQuote {
    pub fn new(
        date: NaiveDate,
        contract_id: impl Into<String>,
        settlement: f64,
        volume: f64,
    ) -> Result<Self, DataError> {
        let contract_id = contract_id.into();
        let bad = |reason| DataError::InvalidQuote {
            date,
            contract: contract_id.clone(),
            reason,
        };
        if !(settlement > 0.0) || !settlement.is_finite() {
            return Err(bad("settlement must be positive"));
        }
        if !(volume >= 0.0) || !volume.is_finite() {
            return Err(bad("volume must be nonnegative"));
        }
        Ok(Self {
            date,
            contract_id,
            settlement,
            volume,
        })
    }
}

/// Settlement of the highest-volume contract on each date. Volume ties go
/// to the smaller contract id, i.e. the earlier expiry for ids that sort
/// chronologically.
pub fn select_active_futures(quotes: &[FuturesQuote]) -> BTreeMap<NaiveDate, f64> {
    let mut best: BTreeMap<NaiveDate, &FuturesQuote> = BTreeMap::new();
    for q in quotes {
        best.entry(q.date)
            .and_modify(|cur| {
                let better = q.volume > cur.volume
                    || (q.volume == cur.volume && q.contract_id < cur.contract_id);
                if better {
                    *cur = q;
                }
            })
            .or_insert(q);
    }
    best.into_iter().map(|(d, q)| (d, q.settlement)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    Daily,
    Monthly,
}

/// Basis series (cents/bushel) per elevator. Monthly periods are keyed by
/// the first day of the month.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisPanel {
    pub frequency: Frequency,
    pub series: BTreeMap<String, Vec<(NaiveDate, f64)>>,
}

impl BasisPanel {
    fn expect(&self, expected: Frequency) -> Result<(), DataError> {
        if self.frequency != expected {
            return Err(DataError::WrongFrequency {
                expected,
                actual: self.frequency,
            });
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }
}

/// Daily basis = cash − active futures. Cells without a futures settlement
/// on their date are dropped.
pub fn compute_basis(cash: &PricePanel, futures: &BTreeMap<NaiveDate, f64>) -> BasisPanel {
    let series = cash
        .series
        .iter()
        .map(|(id, obs)| {
            let b = obs
                .iter()
                .filter_map(|&(d, c)| futures.get(&d).map(|f| (d, c - f)))
                .collect();
            (id.clone(), b)
        })
        .collect();
    BasisPanel {
        frequency: Frequency::Daily,
        series,
    }
}

/// Keeps elevators whose observed share of calendar dates is at least
/// `threshold`.
pub fn filter_completeness(panel: &PricePanel, threshold: f64) -> Result<PricePanel, DataError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DataError::InvalidThreshold(threshold));
    }
    if panel.calendar.is_empty() {
        return Err(DataError::EmptyCalendar);
    }
    let n = panel.calendar.len();
    let kept = panel.retain(|id| {
        let observed = panel.series[id].len();
        // Slack absorbs rounding in threshold * n, e.g. 0.85 * 100.
        observed as f64 >= (threshold - 1e-12) * n as f64
    });
    let dropped = panel.n_elevators() - kept.n_elevators();
    if dropped > 0 {
        log::info!(
            "completeness filter dropped {dropped} of {} elevators",
            panel.n_elevators()
        );
    }
    Ok(kept)
}

/// The `n` most complete elevators (ties by id).
pub fn top_n_by_completeness(panel: &PricePanel, n: usize) -> PricePanel {
    let mut ranked: Vec<(&String, usize)> =
        panel.series.iter().map(|(id, s)| (id, s.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep: BTreeSet<&str> = ranked
        .into_iter()
        .take(n)
        .map(|(id, _)| id.as_str())
        .collect();
    panel.retain(|id| keep.contains(id))
}

/// A forward-filled series starting at `offset` in the original index space.
#[derive(Debug, Clone, PartialEq)]
pub struct FilledSeries {
    pub offset: usize,
    pub values: Vec<f64>,
}

/// Last-observation-carried-forward. Leading missings are dropped.
pub fn impute_forward(series: &[Option<f64>]) -> FilledSeries {
    let Some(offset) = series.iter().position(Option::is_some) else {
        return FilledSeries {
            offset: series.len(),
            values: Vec::new(),
        };
    };
    let mut last = f64::NAN;
    let values = series[offset..]
        .iter()
        .map(|v| {
            if let Some(x) = v {
                last = *x;
            }
            last
        })
        .collect();
    FilledSeries { offset, values }
}

/// Forward-fills every elevator over the panel calendar.
pub fn impute_panel(panel: &PricePanel) -> PricePanel {
    let series = panel
        .series
        .iter()
        .map(|(id, obs)| {
            let by_date: BTreeMap<NaiveDate, f64> = obs.iter().copied().collect();
            let dense: Vec<Option<f64>> = panel
                .calendar
                .iter()
                .map(|d| by_date.get(d).copied())
                .collect();
            let filled = impute_forward(&dense);
            let s = panel.calendar[filled.offset..]
                .iter()
                .copied()
                .zip(filled.values)
                .collect();
            (id.clone(), s)
        })
        .collect();
    PricePanel {
        calendar: panel.calendar.clone(),
        series,
    }
}

/// Arithmetic monthly mean of the daily values present in the panel.
pub fn aggregate_monthly(basis: &BasisPanel) -> Result<BasisPanel, DataError> {
    basis.expect(Frequency::Daily)?;
    let series = basis
        .series
        .iter()
        .map(|(id, obs)| {
            let mut acc: BTreeMap<YearMonth, (f64, usize)> = BTreeMap::new();
            for &(d, v) in obs {
                let e = acc.entry(YearMonth::of(d)).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
            let monthly = acc
                .into_iter()
                .map(|(m, (s, n))| (m.first_day(), s / n as f64))
                .collect();
            (id.clone(), monthly)
        })
        .collect();
    Ok(BasisPanel {
        frequency: Frequency::Monthly,
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidRow {
    /// Pooling group, normally the new plant's id.
    pub group: String,
    pub unit_id: String,
    pub relative_day: i32,
    pub treatment: u8,
    pub post: u8,
    pub basis: f64,
}

/// Event-window rows around one or more new-plant start months.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DidDataset {
    pub rows: Vec<DidRow>,
}

impl DidDataset {
    /// Sorted distinct unit ids.
    pub fn units(&self) -> Vec<&str> {
        let s: BTreeSet<&str> = self.rows.iter().map(|r| r.unit_id.as_str()).collect();
        s.into_iter().collect()
    }

    pub fn unit_index(&self) -> BTreeMap<&str, usize> {
        self.units()
            .into_iter()
            .enumerate()
            .map(|(i, u)| (u, i))
            .collect()
    }

    /// Sorted distinct relative days present.
    pub fn relative_days(&self) -> Vec<i32> {
        let s: BTreeSet<i32> = self.rows.iter().map(|r| r.relative_day).collect();
        s.into_iter().collect()
    }

    /// Every unit observed on every relative day present in the dataset.
    pub fn is_balanced(&self) -> bool {
        let days = self.relative_days().len();
        let mut per_unit: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
        for r in &self.rows {
            per_unit
                .entry(&r.unit_id)
                .or_default()
                .insert(r.relative_day);
        }
        per_unit.values().all(|d| d.len() == days)
    }

    /// Prefixes unit ids with `group/` and records the group on each row.
    pub fn tagged(mut self, group: &str) -> Self {
        for r in &mut self.rows {
            r.group = group.to_string();
            r.unit_id = format!("{group}/{}", r.unit_id);
        }
        self
    }

    pub fn pool<I: IntoIterator<Item = DidDataset>>(parts: I) -> Self {
        let mut rows: Vec<DidRow> = parts.into_iter().flat_map(|d| d.rows).collect();
        rows.sort_by(|a, b| {
            a.unit_id
                .cmp(&b.unit_id)
                .then(a.relative_day.cmp(&b.relative_day))
        });
        Self { rows }
    }

    pub fn without_group(&self, group: &str) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .filter(|r| r.group != group)
                .cloned()
                .collect(),
        }
    }

    /// Mean basis of the (treatment, post) cell.
    pub fn cell_mean(&self, treatment: u8, post: u8) -> Option<f64> {
        let (s, n) = self
            .rows
            .iter()
            .filter(|r| r.treatment == treatment && r.post == post)
            .fold((0.0, 0usize), |(s, n), r| (s + r.basis, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub dataset: DidDataset,
    /// Elevators dropped for lacking observations in the pre or post window.
    pub dropped: usize,
}

/// Pre window: the 30 calendar days before the first day of `start_month`
/// (relative days −30..−1). Post window: the 30 calendar days after its
/// last day (relative days 1..30). Treated roles get `treatment = 1`,
/// controls `0`; excluded elevators are skipped.
pub fn build_event_window(
    basis: &BasisPanel,
    start_month: YearMonth,
    assignment: &[BandAssignment],
) -> Result<EventWindow, DataError> {
    basis.expect(Frequency::Daily)?;
    let first = start_month.first_day();
    let last = start_month.last_day();
    let relative_day = |d: NaiveDate| -> Option<i32> {
        let before = (first - d).num_days();
        let after = (d - last).num_days();
        if (1..=EVENT_WINDOW_DAYS).contains(&before) {
            Some(-(before as i32))
        } else if (1..=EVENT_WINDOW_DAYS).contains(&after) {
            Some(after as i32)
        } else {
            None
        }
    };
    let lo = first - Duration::days(EVENT_WINDOW_DAYS);
    let hi = last + Duration::days(EVENT_WINDOW_DAYS);

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for a in assignment {
        let treatment = match a.role {
            Role::Treated { .. } => 1,
            Role::Control => 0,
            Role::Excluded => continue,
        };
        let Some(obs) = basis.series.get(&a.elevator_id) else {
            dropped += 1;
            continue;
        };
        let window: Vec<DidRow> = obs
            .iter()
            .filter(|(d, _)| *d >= lo && *d <= hi)
            .filter_map(|&(d, v)| {
                relative_day(d).map(|rd| DidRow {
                    group: String::new(),
                    unit_id: a.elevator_id.clone(),
                    relative_day: rd,
                    treatment,
                    post: u8::from(rd >= 1),
                    basis: v,
                })
            })
            .collect();
        let has_pre = window.iter().any(|r| r.post == 0);
        let has_post = window.iter().any(|r| r.post == 1);
        if has_pre && has_post {
            rows.extend(window);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        warn!("event window {start_month}: dropped {dropped} elevators without pre and post data");
    }
    Ok(EventWindow {
        dataset: DidDataset::pool([DidDataset { rows }]),
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proximity {
    Near,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub group_id: String,
    pub month: YearMonth,
    pub proximity: Proximity,
    pub basis: f64,
    pub n_elevators: usize,
}

/// Plant × month × proximity mean-basis panel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelDataset {
    pub rows: Vec<PanelRow>,
}

impl PanelDataset {
    pub fn groups(&self) -> Vec<&str> {
        let s: BTreeSet<&str> = self.rows.iter().map(|r| r.group_id.as_str()).collect();
        s.into_iter().collect()
    }

    pub fn months(&self) -> Vec<YearMonth> {
        let s: BTreeSet<YearMonth> = self.rows.iter().map(|r| r.month).collect();
        s.into_iter().collect()
    }
}

/// Near rows average the plant's elevators in `band`; far rows average the
/// distant-control elevators anchored to the same plant. Empty cells are
/// omitted.
pub fn build_panel_dataset(
    basis: &BasisPanel,
    assignments: &[BandAssignment],
    band: Band,
) -> Result<PanelDataset, DataError> {
    basis.expect(Frequency::Monthly)?;
    let mut cells: BTreeMap<(String, YearMonth, Proximity), (f64, usize)> = BTreeMap::new();
    let mut plants: BTreeSet<&str> = BTreeSet::new();
    for a in assignments {
        let (plant, prox) = match &a.role {
            Role::Treated { band: b, plant_id } if *b == band => {
                (plant_id.as_str(), Proximity::Near)
            }
            Role::Control => (a.anchor_id.as_str(), Proximity::Far),
            _ => continue,
        };
        plants.insert(plant);
        let Some(obs) = basis.series.get(&a.elevator_id) else {
            continue;
        };
        for &(d, v) in obs {
            let e = cells
                .entry((plant.to_string(), YearMonth::of(d), prox))
                .or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    for plant in plants {
        if !cells
            .keys()
            .any(|(p, _, s)| p == plant && *s == Proximity::Near)
        {
            log::debug!("plant {plant}: no near elevators in band {band}");
        }
    }
    let rows = cells
        .into_iter()
        .map(|((group_id, month, proximity), (s, n))| PanelRow {
            group_id,
            month,
            proximity,
            basis: s / n as f64,
            n_elevators: n,
        })
        .collect();
    Ok(PanelDataset { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Role;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn q(date: NaiveDate, c: &str, s: f64, v: f64) -> FuturesQuote {
        FuturesQuote::new(date, c, s, v).unwrap()
    }

    #[test]
    fn active_futures_max_volume() {
        let t = d(2024, 1, 2);
        let quotes = vec![q(t, "C1", 1050.0, 100.0), q(t, "C2", 1060.0, 200.0)];
        assert_eq!(select_active_futures(&quotes)[&t], 1060.0);
        assert_eq!(select_active_futures(&quotes[..1])[&t], 1050.0);
    }

    #[test]
    fn active_futures_tie_breaks_on_contract_id() {
        let t = d(2024, 1, 2);
        let quotes = vec![
            q(t, "2024-05", 1070.0, 200.0),
            q(t, "2024-03", 1060.0, 200.0),
        ];
        assert_eq!(select_active_futures(&quotes)[&t], 1060.0);
    }

    #[test]
    fn quote_validation() {
        assert!(FuturesQuote::new(d(2024, 1, 2), "C", 0.0, 1.0).is_err());
        assert!(FuturesQuote::new(d(2024, 1, 2), "C", 10.0, -1.0).is_err());
    }

    #[test]
    fn basis_examples() {
        let cash = PricePanel::from_observations([
            (d(2024, 1, 2), "e", 1000.0),
            (d(2024, 1, 3), "e", 1050.0),
            (d(2024, 1, 4), "e", 990.0),
        ])
        .unwrap();
        let fut: BTreeMap<_, _> = [(d(2024, 1, 2), 1050.0), (d(2024, 1, 3), 1050.0)].into();
        let b = compute_basis(&cash, &fut);
        assert_eq!(
            b.series["e"],
            vec![(d(2024, 1, 2), -50.0), (d(2024, 1, 3), 0.0)]
        );
    }

    #[test]
    fn panel_rejects_bad_series() {
        let cal = vec![d(2024, 1, 1), d(2024, 1, 2)];
        let unsorted = BTreeMap::from([(
            "e".to_string(),
            vec![(d(2024, 1, 2), 1.0), (d(2024, 1, 1), 1.0)],
        )]);
        assert!(matches!(
            PricePanel::new(cal.clone(), unsorted),
            Err(DataError::UnsortedDates { .. })
        ));
        let outside = BTreeMap::from([("e".to_string(), vec![(d(2024, 1, 5), 1.0)])]);
        assert!(matches!(
            PricePanel::new(cal, outside),
            Err(DataError::DateOutsideCalendar { .. })
        ));
    }

    fn panel_with_counts(counts: &[(&str, usize)], n: usize) -> PricePanel {
        let cal: Vec<NaiveDate> = (0..n as i64)
            .map(|i| d(2020, 1, 1) + Duration::days(i))
            .collect();
        let series = counts
            .iter()
            .map(|&(id, k)| {
                (
                    id.to_string(),
                    cal[..k].iter().map(|&dt| (dt, 1.0)).collect(),
                )
            })
            .collect();
        PricePanel::new(cal, series).unwrap()
    }

    #[test]
    fn completeness_examples() {
        let p = panel_with_counts(&[("a", 90), ("b", 80), ("c", 85)], 100);
        let kept = filter_completeness(&p, 0.85).unwrap();
        let ids: Vec<_> = kept.series().keys().cloned().collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(filter_completeness(&p, 0.0).is_err());
        assert!(filter_completeness(&p, 1.5).is_err());
        let empty = PricePanel::new(vec![], BTreeMap::new()).unwrap();
        assert_eq!(
            filter_completeness(&empty, 0.85),
            Err(DataError::EmptyCalendar)
        );
    }

    #[test]
    fn top_n_keeps_most_complete() {
        let p = panel_with_counts(&[("a", 90), ("b", 95), ("c", 90)], 100);
        let ids: Vec<_> = top_n_by_completeness(&p, 2)
            .series()
            .keys()
            .cloned()
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn impute_examples() {
        assert_eq!(
            impute_forward(&[Some(10.0), None, Some(12.0)]).values,
            vec![10.0, 10.0, 12.0]
        );
        let f = impute_forward(&[None, None, Some(7.0), None]);
        assert_eq!(f.offset, 2);
        assert_eq!(f.values, vec![7.0, 7.0]);
        let full = [Some(1.0), Some(2.0)];
        assert_eq!(impute_forward(&full).values, vec![1.0, 2.0]);
        let none = impute_forward(&[None, None]);
        assert!(none.values.is_empty());
    }

    #[test]
    fn impute_panel_fills_calendar_gaps() {
        let p = PricePanel::from_observations([
            (d(2024, 1, 1), "a", 5.0),
            (d(2024, 1, 2), "b", 1.0),
            (d(2024, 1, 3), "a", 7.0),
            (d(2024, 1, 4), "b", 2.0),
        ])
        .unwrap();
        let f = impute_panel(&p);
        assert_eq!(
            f.get("a").unwrap(),
            &[
                (d(2024, 1, 1), 5.0),
                (d(2024, 1, 2), 5.0),
                (d(2024, 1, 3), 7.0),
                (d(2024, 1, 4), 7.0)
            ]
        );
        assert_eq!(
            f.get("b").unwrap(),
            &[
                (d(2024, 1, 2), 1.0),
                (d(2024, 1, 3), 1.0),
                (d(2024, 1, 4), 2.0)
            ]
        );
    }

    fn daily(series: Vec<(&str, Vec<(NaiveDate, f64)>)>) -> BasisPanel {
        BasisPanel {
            frequency: Frequency::Daily,
            series: series
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    #[test]
    fn monthly_means() {
        let b = daily(vec![(
            "e",
            vec![
                (d(2024, 1, 5), -50.0),
                (d(2024, 1, 6), -40.0),
                (d(2024, 2, 1), -33.0),
            ],
        )]);
        let m = aggregate_monthly(&b).unwrap();
        assert_eq!(m.frequency, Frequency::Monthly);
        assert_eq!(
            m.series["e"],
            vec![(d(2024, 1, 1), -45.0), (d(2024, 2, 1), -33.0)]
        );
        assert!(aggregate_monthly(&m).is_err());
    }

    #[test]
    fn monthly_means_match_summation_oracle() {
        let mut obs = Vec::new();
        for i in 0..59 {
            let dt = d(2023, 1, 1) + Duration::days(i);
            obs.push((dt, ((i * 37) % 17) as f64 - 8.5));
        }
        let m = aggregate_monthly(&daily(vec![("e", obs.clone())])).unwrap();
        assert_eq!(m.series["e"].len(), 2);
        for &(period, mean) in &m.series["e"] {
            let vals: Vec<f64> = obs
                .iter()
                .filter(|(dt, _)| YearMonth::of(*dt) == YearMonth::of(period))
                .map(|(_, v)| *v)
                .collect();
            let oracle = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - oracle).abs() < 1e-12);
        }
    }

    fn assignment(id: &str, role: Role, anchor: &str) -> BandAssignment {
        BandAssignment {
            elevator_id: id.to_string(),
            role,
            anchor_id: anchor.to_string(),
            distance_mi: 0.0,
        }
    }

    fn treated(id: &str, band: Band, plant: &str) -> BandAssignment {
        assignment(
            id,
            Role::Treated {
                band,
                plant_id: plant.to_string(),
            },
            plant,
        )
    }

    fn every_day(from: NaiveDate, to: NaiveDate, v: f64) -> Vec<(NaiveDate, f64)> {
        from.iter_days()
            .take_while(|x| *x <= to)
            .map(|x| (x, v))
            .collect()
    }

    #[test]
    fn event_window_dates() {
        let b = daily(vec![("e", every_day(d(2023, 9, 1), d(2024, 1, 31), 1.0))]);
        let m: YearMonth = "2023-11".parse().unwrap();
        let w = build_event_window(&b, m, &[treated("e", Band::B0_20, "N")]).unwrap();
        let rows = &w.dataset.rows;
        assert_eq!(rows.len(), 60);
        assert_eq!(rows.first().unwrap().relative_day, -30);
        assert_eq!(rows.last().unwrap().relative_day, 30);
        assert!(rows.iter().all(|r| r.relative_day != 0));
        assert!(rows.iter().all(|r| (r.post == 1) == (r.relative_day >= 1)));
        // Pre covers 2023-10-02..2023-10-31, post 2023-12-01..2023-12-30.
        let days: BTreeSet<i32> = rows.iter().map(|r| r.relative_day).collect();
        assert_eq!(days.len(), 60);
        let pre_dates = every_day(d(2023, 10, 2), d(2023, 10, 31), 0.0);
        assert_eq!(pre_dates.len(), 30);
        let post_dates = every_day(d(2023, 12, 1), d(2023, 12, 30), 0.0);
        assert_eq!(post_dates.len(), 30);
    }

    #[test]
    fn event_window_maps_exact_boundaries() {
        // Only boundary dates observed: 2023-10-02 (-30), 2023-10-31 (-1),
        // 2023-12-01 (+1), 2023-12-30 (+30); outside dates ignored.
        let b = daily(vec![(
            "e",
            vec![
                (d(2023, 10, 1), 9.0),
                (d(2023, 10, 2), 1.0),
                (d(2023, 10, 31), 2.0),
                (d(2023, 11, 15), 9.0),
                (d(2023, 12, 1), 3.0),
                (d(2023, 12, 30), 4.0),
                (d(2023, 12, 31), 9.0),
            ],
        )]);
        let w = build_event_window(
            &b,
            "2023-11".parse().unwrap(),
            &[treated("e", Band::B0_20, "N")],
        )
        .unwrap();
        let got: Vec<(i32, f64)> = w
            .dataset
            .rows
            .iter()
            .map(|r| (r.relative_day, r.basis))
            .collect();
        assert_eq!(got, vec![(-30, 1.0), (-1, 2.0), (1, 3.0), (30, 4.0)]);
    }

    #[test]
    fn event_window_drops_one_sided_units() {
        let b = daily(vec![
            ("pre_only", every_day(d(2023, 10, 1), d(2023, 10, 31), 1.0)),
            ("both", every_day(d(2023, 10, 1), d(2023, 12, 31), 1.0)),
        ]);
        let assignments = [
            treated("pre_only", Band::B0_20, "N"),
            assignment("both", Role::Control, "E"),
            assignment("missing", Role::Control, "E"),
            assignment("skip", Role::Excluded, "E"),
        ];
        let w = build_event_window(&b, "2023-11".parse().unwrap(), &assignments).unwrap();
        assert_eq!(w.dropped, 2);
        assert_eq!(w.dataset.units(), vec!["both"]);
        assert!(w.dataset.rows.iter().all(|r| r.treatment == 0));
    }

    #[test]
    fn pooled_windows_share_grid() {
        let b = daily(vec![
            ("a", every_day(d(2022, 12, 1), d(2023, 3, 31), 1.0)),
            ("b", every_day(d(2023, 5, 1), d(2023, 7, 31), 2.0)),
        ]);
        let w1 = build_event_window(
            &b,
            "2023-01".parse().unwrap(),
            &[treated("a", Band::B0_20, "P1")],
        )
        .unwrap();
        let w2 = build_event_window(
            &b,
            "2023-06".parse().unwrap(),
            &[treated("b", Band::B0_20, "P2")],
        )
        .unwrap();
        assert_eq!(w1.dataset.relative_days(), w2.dataset.relative_days());
        let pooled = DidDataset::pool([w1.dataset.tagged("P1"), w2.dataset.tagged("P2")]);
        assert_eq!(pooled.units(), vec!["P1/a", "P2/b"]);
        assert!(pooled.is_balanced());
        assert_eq!(pooled.without_group("P1").units(), vec!["P2/b"]);
    }

    #[test]
    fn panel_dataset_cells() {
        let m = |y, mo| d(y, mo, 1);
        let basis = BasisPanel {
            frequency: Frequency::Monthly,
            series: [
                ("n1", vec![(m(2020, 1), -40.0)]),
                ("n2", vec![(m(2020, 1), -60.0)]),
                ("f1", vec![(m(2020, 1), -70.0)]),
                ("f2", vec![(m(2020, 1), -81.0)]),
                ("f3", vec![(m(2020, 1), -92.5)]),
                ("other", vec![(m(2020, 1), 0.0)]),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        };
        let a = vec![
            treated("n1", Band::B0_20, "P"),
            treated("n2", Band::B0_20, "P"),
            treated("other", Band::B20_40, "P"),
            assignment("f1", Role::Control, "P"),
            assignment("f2", Role::Control, "P"),
            assignment("f3", Role::Control, "P"),
        ];
        let p = build_panel_dataset(&basis, &a, Band::B0_20).unwrap();
        assert_eq!(p.rows.len(), 2);
        let near = p
            .rows
            .iter()
            .find(|r| r.proximity == Proximity::Near)
            .unwrap();
        assert_eq!(near.basis, -50.0);
        let far = p
            .rows
            .iter()
            .find(|r| r.proximity == Proximity::Far)
            .unwrap();
        assert!((far.basis - (-70.0 - 81.0 - 92.5) / 3.0).abs() < 1e-12);
        assert_eq!(far.n_elevators, 3);

        let none = build_panel_dataset(&basis, &a, Band::B80_100).unwrap();
        assert!(none.rows.iter().all(|r| r.proximity == Proximity::Far));
    }

    fn arb_series() -> impl Strategy<Value = Vec<Option<f64>>> {
        prop::collection::vec(prop::option::of(-200.0f64..200.0), 0..50)
    }

    proptest! {
        // Quarter-cent grid keeps the reconstruction exact.
        #[test]
        fn basis_reconstructs_cash(
            cells in prop::collection::vec((0i64..60, -800i64..800, 2000i64..8000), 1..80)
        ) {
            let base = d(2024, 1, 1);
            let obs: Vec<_> = cells.iter()
                .map(|&(day, b, _)| (base + Duration::days(day), format!("e{}", day % 3), b as f64 / 4.0 + 1000.0))
                .collect();
            let cash = PricePanel::from_observations(obs).unwrap();
            let fut: BTreeMap<NaiveDate, f64> = cells.iter()
                .map(|&(day, _, f)| (base + Duration::days(day), f as f64 / 4.0)).collect();
            let b = compute_basis(&cash, &fut);
            for (id, s) in &b.series {
                let c: BTreeMap<_, _> = cash.get(id).unwrap().iter().copied().collect();
                for &(dt, v) in s {
                    prop_assert_eq!(v + fut[&dt], c[&dt]);
                }
            }
        }

        #[test]
        fn impute_idempotent(s in arb_series()) {
            let once = impute_forward(&s);
            let again = impute_forward(&once.values.iter().map(|v| Some(*v)).collect::<Vec<_>>());
            prop_assert_eq!(again.offset, 0);
            prop_assert_eq!(again.values, once.values);
        }

        #[test]
        fn monthly_shift_equivariant(
            vals in prop::collection::vec(-100.0f64..100.0, 1..90),
            c in -50.0f64..50.0,
        ) {
            let obs: Vec<_> = vals.iter().enumerate()
                .map(|(i, &v)| (d(2022, 1, 1) + Duration::days(i as i64 * 2), v)).collect();
            let shifted: Vec<_> = obs.iter().map(|&(dt, v)| (dt, v + c)).collect();
            let a = aggregate_monthly(&daily(vec![("e", obs)])).unwrap();
            let b = aggregate_monthly(&daily(vec![("e", shifted)])).unwrap();
            for (x, y) in a.series["e"].iter().zip(&b.series["e"]) {
                prop_assert!((x.1 + c - y.1).abs() < 1e-9);
            }
        }

        #[test]
        fn completeness_filter_is_projection(
            counts in prop::collection::vec(0usize..=40, 1..10),
            thr in 0.05f64..1.0,
        ) {
            let named: Vec<(String, usize)> = counts.iter().enumerate()
                .map(|(i, &k)| (format!("e{i}"), k)).collect();
            let refs: Vec<(&str, usize)> = named.iter().map(|(s, k)| (s.as_str(), *k)).collect();
            let p = panel_with_counts(&refs, 40);
            let once = filter_completeness(&p, thr).unwrap();
            for id in once.series().keys() {
                prop_assert!(p.series().contains_key(id));
            }
            prop_assert_eq!(filter_completeness(&once, thr).unwrap(), once);
        }

        #[test]
        fn event_window_row_bound(
            present in prop::collection::vec(prop::collection::vec(any::<bool>(), 120), 1..6)
        ) {
            let start = d(2023, 9, 15);
            let series: Vec<(String, Vec<(NaiveDate, f64)>)> = present.iter().enumerate()
                .map(|(i, mask)| (format!("e{i}"), mask.iter().enumerate()
                    .filter(|(_, k)| **k)
                    .map(|(j, _)| (start + Duration::days(j as i64), j as f64)).collect()))
                .collect();
            let b = BasisPanel { frequency: Frequency::Daily, series: series.into_iter().collect() };
            let a: Vec<_> = (0..present.len())
                .map(|i| assignment(&format!("e{i}"), Role::Control, "E")).collect();
            let w = build_event_window(&b, "2023-11".parse().unwrap(), &a).unwrap();
            prop_assert!(w.dataset.rows.len() <= 60 * present.len());
            for r in &w.dataset.rows {
                prop_assert!(r.relative_day != 0);
                prop_assert_eq!(r.post == 1, r.relative_day >= 1);
            }
        }
    }
}
