//! Monthly near/far interaction regression around existing plants:
//! `y_{j,t,s} = α + Σ_t β_t D_{j,t,s} + γ_j + λ_t + ε` with
//! `D = 1{s = near}·1{month = t}`, and Newey–West standard errors.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::hac::{default_lag, newey_west_cov_grouped};
use super::{ols, DesignMatrix, EstimateResult, EstimationError};
use crate::data::{PanelDataset, PanelRow, Proximity};
use crate::geo::Band;
use crate::month::YearMonth;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventCoefficient {
    pub month: YearMonth,
    pub estimate: EstimateResult,
    pub significant_5pct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventCoefficients {
    pub coefficients: Vec<EventCoefficient>,
    /// Months with near rows but no far rows; `β_t` is not identified.
    pub unidentified: Vec<YearMonth>,
    pub lag: usize,
    pub n_obs: usize,
}

impl EventCoefficients {
    pub fn beta(&self, month: YearMonth) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|c| c.month == month)
            .map(|c| c.estimate.coefficient)
    }
}

/// Fits the interaction regression. `lag = None` uses [`default_lag`] on the
/// number of months. HAC lag products are taken within each
/// (plant, proximity) monthly series.
pub fn panel_event_regression(
    data: &PanelDataset,
    lag: Option<usize>,
) -> Result<EventCoefficients, EstimationError> {
    let mut rows: Vec<&PanelRow> = data.rows.iter().collect();
    rows.sort_by(|a, b| {
        (a.group_id.as_str(), a.proximity, a.month).cmp(&(
            b.group_id.as_str(),
            b.proximity,
            b.month,
        ))
    });
    if rows.is_empty() {
        return Err(EstimationError::Insufficient("empty panel".into()));
    }
    let months: Vec<YearMonth> = data.months();
    let groups: Vec<&str> = data.groups();
    let near_months: BTreeSet<YearMonth> = rows
        .iter()
        .filter(|r| r.proximity == Proximity::Near)
        .map(|r| r.month)
        .collect();
    let far_months: BTreeSet<YearMonth> = rows
        .iter()
        .filter(|r| r.proximity == Proximity::Far)
        .map(|r| r.month)
        .collect();
    let beta_months: Vec<YearMonth> = near_months.intersection(&far_months).copied().collect();
    let unidentified: Vec<YearMonth> = near_months.difference(&far_months).copied().collect();
    if !unidentified.is_empty() {
        warn!(
            "{} months have no far rows; their interaction terms are unidentified",
            unidentified.len()
        );
    }
    if beta_months.is_empty() {
        return Err(EstimationError::Insufficient(
            "no month has both near and far rows".into(),
        ));
    }

    let beta_col: BTreeMap<YearMonth, usize> = beta_months
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, 1 + i))
        .collect();
    let gamma_base = 1 + beta_months.len();
    let group_col: BTreeMap<&str, usize> = groups
        .iter()
        .skip(1)
        .enumerate()
        .map(|(i, &g)| (g, gamma_base + i))
        .collect();
    let lambda_base = gamma_base + groups.len() - 1;
    let month_col: BTreeMap<YearMonth, usize> = months
        .iter()
        .skip(1)
        .enumerate()
        .map(|(i, &m)| (m, lambda_base + i))
        .collect();
    let k = lambda_base + months.len() - 1;

    let mut labels = vec!["intercept".to_string()];
    labels.extend(beta_months.iter().map(|m| format!("beta_{m}")));
    labels.extend(groups.iter().skip(1).map(|g| format!("plant_{g}")));
    labels.extend(months.iter().skip(1).map(|m| format!("month_{m}")));

    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, k);
    let mut y = DVector::<f64>::zeros(n);
    let mut segment = Vec::with_capacity(n);
    let mut seg_ids: BTreeMap<(&str, Proximity), usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        y[i] = r.basis;
        x[(i, 0)] = 1.0;
        if r.proximity == Proximity::Near {
            if let Some(&c) = beta_col.get(&r.month) {
                x[(i, c)] = 1.0;
            }
        }
        if let Some(&c) = group_col.get(r.group_id.as_str()) {
            x[(i, c)] = 1.0;
        }
        if let Some(&c) = month_col.get(&r.month) {
            x[(i, c)] = 1.0;
        }
        let next = seg_ids.len();
        segment.push(
            *seg_ids
                .entry((r.group_id.as_str(), r.proximity))
                .or_insert(next),
        );
    }

    let design = DesignMatrix::new(x, labels)?;
    let fit = ols(&design, &y)?;
    let lag = lag.unwrap_or_else(|| default_lag(months.len()));
    let cov = newey_west_cov_grouped(&design.x, &fit.residuals, lag, &segment)?;

    let coefficients = beta_months
        .iter()
        .map(|&m| {
            let c = beta_col[&m];
            let estimate = EstimateResult::new(
                format!("beta_{m}"),
                fit.coefficients[c],
                cov[(c, c)].sqrt(),
                n,
            );
            EventCoefficient {
                month: m,
                significant_5pct: estimate.significant_at(0.05),
                estimate,
            }
        })
        .collect();
    Ok(EventCoefficients {
        coefficients,
        unidentified,
        lag,
        n_obs: n,
    })
}

/// Mean `β_t` per calendar year.
pub fn yearly_average_effects(coeffs: &EventCoefficients) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for c in &coeffs.coefficients {
        let e = acc.entry(c.month.year()).or_insert((0.0, 0));
        e.0 += c.estimate.coefficient;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(y, (s, n))| (y, s / n as f64))
        .collect()
}

/// Year × band matrix of yearly-average effects with both margins.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectTable {
    pub years: Vec<i32>,
    pub bands: Vec<Band>,
    /// `cells[year][band]`; `None` where a band has no estimate that year.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Mean over bands, per year.
    pub year_means: Vec<Option<f64>>,
    /// Mean over years, per band.
    pub band_means: Vec<Option<f64>>,
}

impl EffectTable {
    pub fn build(per_band: &[(Band, &EventCoefficients)]) -> Self {
        let yearly: Vec<(Band, BTreeMap<i32, f64>)> = per_band
            .iter()
            .map(|(b, c)| (*b, yearly_average_effects(c)))
            .collect();
        let years: Vec<i32> = yearly
            .iter()
            .flat_map(|(_, m)| m.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let bands: Vec<Band> = yearly.iter().map(|(b, _)| *b).collect();
        let cells: Vec<Vec<Option<f64>>> = years
            .iter()
            .map(|y| yearly.iter().map(|(_, m)| m.get(y).copied()).collect())
            .collect();
        let mean = |vals: Vec<f64>| {
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let year_means = cells
            .iter()
            .map(|row| mean(row.iter().flatten().copied().collect()))
            .collect();
        let band_means = (0..bands.len())
            .map(|b| mean(cells.iter().filter_map(|row| row[b]).collect()))
            .collect();
        Self {
            years,
            bands,
            cells,
            year_means,
            band_means,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn month(i: u32) -> YearMonth {
        let mut m = YearMonth::new(2020, 1).unwrap();
        for _ in 0..i {
            m = m.succ();
        }
        m
    }

    fn row(g: &str, m: YearMonth, p: Proximity, y: f64) -> PanelRow {
        PanelRow {
            group_id: g.into(),
            month: m,
            proximity: p,
            basis: y,
            n_elevators: 1,
        }
    }

    /// far = plant + month effects, near = far + gap(t).
    fn noiseless(gap: impl Fn(u32) -> f64) -> PanelDataset {
        let mut rows = Vec::new();
        for (gi, g) in ["a", "b", "c"].iter().enumerate() {
            for t in 0..12 {
                let base = 3.0 * gi as f64 + (t as f64 * 0.7).sin() * 10.0 - 50.0;
                rows.push(row(g, month(t), Proximity::Far, base));
                rows.push(row(g, month(t), Proximity::Near, base + gap(t)));
            }
        }
        PanelDataset { rows }
    }

    #[test]
    fn recovers_monthly_gaps() {
        let fit = panel_event_regression(&noiseless(|t| 5.0 + t as f64), Some(2)).unwrap();
        assert_eq!(fit.coefficients.len(), 12);
        for (t, c) in fit.coefficients.iter().enumerate() {
            assert!((c.estimate.coefficient - (5.0 + t as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_gap() {
        let fit = panel_event_regression(&noiseless(|_| 7.5), Some(1)).unwrap();
        assert!(fit
            .coefficients
            .iter()
            .all(|c| (c.estimate.coefficient - 7.5).abs() < 1e-9));
    }

    #[test]
    fn near_only_month_is_unidentified() {
        let mut data = noiseless(|_| 2.0);
        data.rows
            .retain(|r| !(r.month == month(4) && r.proximity == Proximity::Far));
        let fit = panel_event_regression(&data, Some(1)).unwrap();
        assert_eq!(fit.unidentified, vec![month(4)]);
        assert!(fit.beta(month(4)).is_none());
        assert_eq!(fit.coefficients.len(), 11);
        for c in &fit.coefficients {
            assert!((c.estimate.coefficient - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_full_dummy_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let groups = ["p1", "p2", "p3", "p4"];
        let mut rows = Vec::new();
        for g in groups {
            for t in 0..6 {
                for p in [Proximity::Near, Proximity::Far] {
                    if rng.random_bool(0.9) {
                        rows.push(row(g, month(t), p, rng.random_range(-80.0..-20.0)));
                    }
                }
            }
        }
        let data = PanelDataset { rows };
        let fit = panel_event_regression(&data, Some(1)).unwrap();

        // Oracle: full dummy encoding solved by normal equations.
        let months = data.months();
        let gs = data.groups();
        let far: BTreeSet<_> = data
            .rows
            .iter()
            .filter(|r| r.proximity == Proximity::Far)
            .map(|r| r.month)
            .collect();
        let near: BTreeSet<_> = data
            .rows
            .iter()
            .filter(|r| r.proximity == Proximity::Near)
            .map(|r| r.month)
            .collect();
        let bm: Vec<_> = near.intersection(&far).copied().collect();
        let k = 1 + bm.len() + gs.len() - 1 + months.len() - 1;
        let n = data.rows.len();
        let mut x = DMatrix::<f64>::zeros(n, k);
        let mut y = DVector::<f64>::zeros(n);
        for (i, r) in data.rows.iter().enumerate() {
            y[i] = r.basis;
            x[(i, 0)] = 1.0;
            if r.proximity == Proximity::Near {
                if let Some(p) = bm.iter().position(|&m| m == r.month) {
                    x[(i, 1 + p)] = 1.0;
                }
            }
            if let Some(p) = gs.iter().skip(1).position(|&g| g == r.group_id) {
                x[(i, 1 + bm.len() + p)] = 1.0;
            }
            if let Some(p) = months.iter().skip(1).position(|&m| m == r.month) {
                x[(i, bm.len() + gs.len() + p)] = 1.0;
            }
        }
        let beta = (x.transpose() * &x)
            .lu()
            .solve(&(x.transpose() * &y))
            .unwrap();
        for (i, m) in bm.iter().enumerate() {
            assert!((fit.beta(*m).unwrap() - beta[1 + i]).abs() < 1e-8);
        }
    }

    fn coeffs_from(values: &[(YearMonth, f64)]) -> EventCoefficients {
        EventCoefficients {
            coefficients: values
                .iter()
                .map(|&(m, b)| EventCoefficient {
                    month: m,
                    estimate: EstimateResult::new("b", b, 1.0, 10),
                    significant_5pct: true,
                })
                .collect(),
            unidentified: vec![],
            lag: 0,
            n_obs: 10,
        }
    }

    #[test]
    fn yearly_means() {
        let flat: Vec<_> = (1..=12)
            .map(|m| (YearMonth::new(2017, m).unwrap(), 12.0))
            .collect();
        assert_eq!(yearly_average_effects(&coeffs_from(&flat))[&2017], 12.0);
        let alt: Vec<_> = (1..=12)
            .map(|m| {
                (
                    YearMonth::new(2018, m).unwrap(),
                    if m % 2 == 0 { 10.0 } else { 20.0 },
                )
            })
            .collect();
        assert_eq!(yearly_average_effects(&coeffs_from(&alt))[&2018], 15.0);
    }

    #[test]
    fn table_margins_reaverage_cells() {
        let a: Vec<_> = (1u32..=24)
            .map(|i| {
                let m = YearMonth::new(2017 + (i as i32 - 1) / 12, (i - 1) % 12 + 1).unwrap();
                (m, i as f64)
            })
            .collect();
        let b: Vec<_> = a
            .iter()
            .take(15)
            .map(|&(m, v)| (m, v * 0.5 - 3.0))
            .collect();
        let (ca, cb) = (coeffs_from(&a), coeffs_from(&b));
        let t = EffectTable::build(&[(Band::B0_20, &ca), (Band::B20_40, &cb)]);
        assert_eq!(t.years, vec![2017, 2018]);
        for (yi, row) in t.cells.iter().enumerate() {
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((t.year_means[yi].unwrap() - m).abs() < 1e-12);
        }
        for bi in 0..2 {
            let vals: Vec<f64> = t.cells.iter().filter_map(|r| r[bi]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((t.band_means[bi].unwrap() - m).abs() < 1e-12);
        }
    }
}
