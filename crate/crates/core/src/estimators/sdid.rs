//! Synthetic difference-in-differences.
//!
//! Unit weights `ω` on the simplex (with free intercept `ω0`) make the
//! weighted control pre-period path track the treated average, penalized by
//! `ζ² T_pre ‖ω‖²`. Time weights `λ` on the simplex (with intercept `λ0`,
//! unpenalized) make a weighted pre-period average of each control predict
//! its post-period mean. The ATT is the `(ω, λ)`-weighted double difference;
//! its standard error comes from placebo reassignment among controls.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::simplex::{solve_simplex_lsq, SimplexOptions};
use super::{EstimateResult, EstimationError};
use crate::data::DidDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SdidWeights {
    pub unit_weights: DVector<f64>,
    pub time_weights: DVector<f64>,
    pub unit_intercept: f64,
    pub time_intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Optimized,
    /// Uniform `ω` and `λ`; reduces the estimator to plain DiD on cell means.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdidConfig {
    /// Unit-weight regularization; `None` uses [`default_zeta`].
    pub zeta: Option<f64>,
    pub mode: WeightMode,
    pub placebo_reps: usize,
    pub seed: u64,
    pub solver: SimplexOptions,
}

impl Default for SdidConfig {
    fn default() -> Self {
        Self {
            zeta: None,
            mode: WeightMode::Optimized,
            placebo_reps: 200,
            seed: 42,
            solver: SimplexOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdidFit {
    pub att: EstimateResult,
    pub weights: SdidWeights,
    pub zeta: f64,
    /// Control unit ids, aligned with `weights.unit_weights`.
    pub control_units: Vec<String>,
    /// Pre-period relative days, aligned with `weights.time_weights`.
    pub pre_periods: Vec<i32>,
    pub n_treated: usize,
    pub dropped_units: usize,
    pub placebo_estimates: Vec<f64>,
}

/// Time-weight regularization relative to the noise level.
pub const TIME_RIDGE: f64 = 1e-6;

/// Solves for unit and time weights.
///
/// `y_control_pre` is controls × pre-periods, `y_treated_pre_mean` the
/// treated average per pre-period, `y_control_post_mean` each control's
/// post-period mean.
pub fn sdid_weights(
    y_control_pre: &DMatrix<f64>,
    y_treated_pre_mean: &DVector<f64>,
    y_control_post_mean: &DVector<f64>,
    zeta: f64,
    opts: SimplexOptions,
) -> Result<SdidWeights, EstimationError> {
    let (n_co, t_pre) = y_control_pre.shape();
    if n_co == 0 {
        return Err(EstimationError::Insufficient("no control units".into()));
    }
    if t_pre < 2 {
        return Err(EstimationError::Insufficient(
            "need at least two pre-treatment periods".into(),
        ));
    }
    if y_treated_pre_mean.len() != t_pre || y_control_post_mean.len() != n_co {
        return Err(EstimationError::Dimension(
            "weight inputs disagree on controls or periods".into(),
        ));
    }

    // Unit weights: rows are periods, columns controls; centering over
    // periods profiles out ω0.
    let a_unit = center_columns(&y_control_pre.transpose());
    let b_unit = center(y_treated_pre_mean);
    let eta = zeta * zeta * t_pre as f64;
    let unit = solve_simplex_lsq(&a_unit, &b_unit, eta, opts)?;
    let omega = unit.weights;
    let unit_intercept = (y_treated_pre_mean - y_control_pre.tr_mul(&omega)).mean();

    // Time weights: rows are controls, columns pre-periods; centering over
    // controls profiles out λ0. The ridge is negligible but picks a unique
    // λ when there are no more controls than pre-periods.
    let a_time = center_columns(y_control_pre);
    let b_time = center(y_control_post_mean);
    let eta_time = (TIME_RIDGE * noise_level(y_control_pre)).powi(2) * n_co as f64;
    let time = solve_simplex_lsq(&a_time, &b_time, eta_time, opts)?;
    let lambda = time.weights;
    let time_intercept = (y_control_post_mean - y_control_pre * &lambda).mean();

    Ok(SdidWeights {
        unit_weights: omega,
        time_weights: lambda,
        unit_intercept,
        time_intercept,
    })
}

/// `ζ = (N_treated · T_post)^{1/4} · σ̂`, with `σ̂` the sample standard
/// deviation of first differences of control outcomes over the pre-period.
pub fn default_zeta(y_control_pre: &DMatrix<f64>, n_treated: usize, t_post: usize) -> f64 {
    ((n_treated * t_post) as f64).powf(0.25) * noise_level(y_control_pre)
}

/// Sample standard deviation of first differences along each row.
pub fn noise_level(y_control_pre: &DMatrix<f64>) -> f64 {
    let diffs: Vec<f64> = y_control_pre
        .row_iter()
        .flat_map(|row| {
            row.iter()
                .zip(row.iter().skip(1))
                .map(|(a, b)| b - a)
                .collect::<Vec<_>>()
        })
        .collect();
    if diffs.len() < 2 {
        return 0.0;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    var.sqrt()
}

/// Point estimate on a units × periods outcome matrix.
///
/// `y_control` is controls × periods; `y_treated_mean` the treated average
/// per period; the first `t_pre` periods are pre-treatment.
pub fn sdid_estimate(
    y_control: &DMatrix<f64>,
    y_treated_mean: &DVector<f64>,
    n_treated: usize,
    t_pre: usize,
    config: &SdidConfig,
) -> Result<(f64, SdidWeights, f64), EstimationError> {
    let (n_co, t) = y_control.shape();
    if t_pre >= t {
        return Err(EstimationError::Insufficient(
            "no post-treatment periods".into(),
        ));
    }
    let t_post = t - t_pre;
    let pre = y_control.columns(0, t_pre).into_owned();
    let post_mean = DVector::from_iterator(
        n_co,
        y_control
            .columns(t_pre, t_post)
            .row_iter()
            .map(|r| r.mean()),
    );
    let tr_pre = y_treated_mean.rows(0, t_pre).into_owned();
    let tr_post_mean = y_treated_mean.rows(t_pre, t_post).mean();

    let zeta = config
        .zeta
        .unwrap_or_else(|| default_zeta(&pre, n_treated, t_post));
    let weights = match config.mode {
        WeightMode::Optimized => sdid_weights(&pre, &tr_pre, &post_mean, zeta, config.solver)?,
        WeightMode::Uniform => {
            if n_co == 0 {
                return Err(EstimationError::Insufficient("no control units".into()));
            }
            let omega = DVector::from_element(n_co, 1.0 / n_co as f64);
            let lambda = DVector::from_element(t_pre, 1.0 / t_pre as f64);
            SdidWeights {
                unit_intercept: (&tr_pre - pre.tr_mul(&omega)).mean(),
                time_intercept: (&post_mean - &pre * &lambda).mean(),
                unit_weights: omega,
                time_weights: lambda,
            }
        }
    };
    let lambda = &weights.time_weights;
    let treated_diff = tr_post_mean - tr_pre.dot(lambda);
    let control_diffs = &post_mean - &pre * lambda;
    let tau = treated_diff - weights.unit_weights.dot(&control_diffs);
    Ok((tau, weights, zeta))
}

/// SDID ATT on an event-window dataset, with placebo standard errors.
/// Units missing any relative day are dropped before pivoting.
pub fn sdid_att(data: &DidDataset, config: &SdidConfig) -> Result<SdidFit, EstimationError> {
    let periods = data.relative_days();
    let t_pre = periods.iter().filter(|&&d| d < 0).count();
    let t = periods.len();
    if t_pre < 2 || t_pre == t {
        return Err(EstimationError::Insufficient(
            "need at least two pre periods and one post period".into(),
        ));
    }
    let col: BTreeMap<i32, usize> = periods.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    let mut cells: BTreeMap<&str, (u8, Vec<Option<f64>>)> = BTreeMap::new();
    for r in &data.rows {
        let e = cells
            .entry(&r.unit_id)
            .or_insert_with(|| (r.treatment, vec![None; t]));
        e.1[col[&r.relative_day]] = Some(r.basis);
    }
    let total = cells.len();
    let complete: Vec<(&str, u8, Vec<f64>)> = cells
        .into_iter()
        .filter_map(|(u, (tr, v))| {
            v.into_iter()
                .collect::<Option<Vec<f64>>>()
                .map(|v| (u, tr, v))
        })
        .collect();
    let dropped_units = total - complete.len();
    if dropped_units > 0 {
        warn!("SDID: dropped {dropped_units} units with incomplete event windows");
    }

    let treated: Vec<&Vec<f64>> = complete.iter().filter(|c| c.1 == 1).map(|c| &c.2).collect();
    let controls: Vec<&(&str, u8, Vec<f64>)> = complete.iter().filter(|c| c.1 == 0).collect();
    if treated.is_empty() {
        return Err(EstimationError::Insufficient("no treated units".into()));
    }
    if controls.is_empty() {
        return Err(EstimationError::Insufficient("no control units".into()));
    }
    let n_tr = treated.len();
    let y_tr_mean = DVector::from_fn(t, |j, _| {
        treated.iter().map(|v| v[j]).sum::<f64>() / n_tr as f64
    });
    let y_co = DMatrix::from_fn(controls.len(), t, |i, j| controls[i].2[j]);

    let (tau, weights, zeta) = sdid_estimate(&y_co, &y_tr_mean, n_tr, t_pre, config)?;
    let placebo_estimates = placebo(&y_co, n_tr, t_pre, config)?;
    let se = if placebo_estimates.len() >= 2 {
        let b = placebo_estimates.len() as f64;
        let mean = placebo_estimates.iter().sum::<f64>() / b;
        (placebo_estimates
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / b)
            .sqrt()
    } else {
        f64::NAN
    };

    Ok(SdidFit {
        att: EstimateResult::new("sdid_att", tau, se, (n_tr + controls.len()) * t),
        weights,
        zeta,
        control_units: controls.iter().map(|c| c.0.to_string()).collect(),
        pre_periods: periods[..t_pre].to_vec(),
        n_treated: n_tr,
        dropped_units,
        placebo_estimates,
    })
}

/// Placebo estimates: each replication assigns `n_treated` controls at
/// random to a pseudo-treated group and re-estimates on controls only.
fn placebo(
    y_co: &DMatrix<f64>,
    n_treated: usize,
    t_pre: usize,
    config: &SdidConfig,
) -> Result<Vec<f64>, EstimationError> {
    let n_co = y_co.nrows();
    if config.placebo_reps == 0 {
        return Ok(Vec::new());
    }
    if n_co <= n_treated {
        warn!("SDID placebo needs more controls ({n_co}) than treated units ({n_treated}); SE unavailable");
        return Ok(Vec::new());
    }
    (0..config.placebo_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(rep as u64 + 1);
            let mut idx: Vec<usize> = (0..n_co).collect();
            idx.shuffle(&mut rng);
            let (pseudo, rest) = idx.split_at(n_treated);
            let t = y_co.ncols();
            let tr_mean = DVector::from_fn(t, |j, _| {
                pseudo.iter().map(|&i| y_co[(i, j)]).sum::<f64>() / n_treated as f64
            });
            let co = DMatrix::from_fn(rest.len(), t, |i, j| y_co[(rest[i], j)]);
            sdid_estimate(&co, &tr_mean, n_treated, t_pre, config).map(|(tau, _, _)| tau)
        })
        .collect()
}

fn center(v: &DVector<f64>) -> DVector<f64> {
    v.add_scalar(-v.mean())
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    out
}
