//! Two-group, two-period difference-in-differences with unit fixed effects.
//!
//! `y = β0 + β1·treatment + β2·post + β3·treatment·post + γ_unit + ε`. The
//! treatment main effect and intercept are absorbed by the unit effects, so
//! the estimable slopes are `post` and `treatment·post`. Standard errors are
//! clustered by unit (CR1).

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{ols, DesignMatrix, EstimateResult, EstimationError};
use crate::data::{DidDataset, DidRow};

pub const ATT_LABEL: &str = "treatment:post";

#[derive(Debug, Clone, PartialEq)]
pub struct DidFit {
    pub att: EstimateResult,
    pub n_units: usize,
    /// Units dropped for being observed in only one of the pre/post regimes.
    pub dropped_units: usize,
}

struct Prepared<'a> {
    rows: Vec<&'a DidRow>,
    unit_of_row: Vec<usize>,
    n_units: usize,
    dropped: usize,
}

fn prepare(data: &DidDataset) -> Result<Prepared<'_>, EstimationError> {
    let has = |f: &dyn Fn(&DidRow) -> bool| data.rows.iter().any(f);
    if !has(&|r| r.treatment == 1) || !has(&|r| r.treatment == 0) {
        return Err(EstimationError::Insufficient(
            "need both treated and control units".into(),
        ));
    }
    if !has(&|r| r.post == 1) || !has(&|r| r.post == 0) {
        return Err(EstimationError::Insufficient(
            "need both pre and post observations".into(),
        ));
    }
    let mut regimes: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for r in &data.rows {
        let e = regimes.entry(&r.unit_id).or_default();
        if r.post == 1 {
            e.1 = true;
        } else {
            e.0 = true;
        }
    }
    let kept: BTreeMap<&str, usize> = regimes
        .iter()
        .filter(|(_, (pre, post))| *pre && *post)
        .enumerate()
        .map(|(i, (u, _))| (*u, i))
        .collect();
    let dropped = regimes.len() - kept.len();
    if dropped > 0 {
        warn!("DiD: dropped {dropped} units observed in only one period regime");
    }
    let rows: Vec<&DidRow> = data
        .rows
        .iter()
        .filter(|r| kept.contains_key(r.unit_id.as_str()))
        .collect();
    let unit_of_row = rows.iter().map(|r| kept[r.unit_id.as_str()]).collect();
    Ok(Prepared {
        rows,
        unit_of_row,
        n_units: kept.len(),
        dropped,
    })
}

/// Fixed-effects DiD via the within (unit-demeaning) transform.
pub fn did_fe(data: &DidDataset) -> Result<DidFit, EstimationError> {
    let p = prepare(data)?;
    let n = p.rows.len();
    let mut sums = vec![(0.0, 0.0, 0.0, 0usize); p.n_units];
    for (r, &u) in p.rows.iter().zip(&p.unit_of_row) {
        let s = &mut sums[u];
        s.0 += r.basis;
        s.1 += r.post as f64;
        s.2 += (r.treatment * r.post) as f64;
        s.3 += 1;
    }
    let mut x = DMatrix::<f64>::zeros(n, 2);
    let mut y = DVector::<f64>::zeros(n);
    for (i, (r, &u)) in p.rows.iter().zip(&p.unit_of_row).enumerate() {
        let (sy, sp, stp, c) = sums[u];
        let c = c as f64;
        y[i] = r.basis - sy / c;
        x[(i, 0)] = r.post as f64 - sp / c;
        x[(i, 1)] = (r.treatment * r.post) as f64 - stp / c;
    }
    let design = DesignMatrix::new(x, vec!["post".into(), ATT_LABEL.into()])?;
    let fit = ols(&design, &y)?;
    let cov = cluster_cov(
        &design.x,
        &fit.residuals,
        &fit.xtx_inv,
        &p.unit_of_row,
        p.n_units,
        3,
    );
    Ok(DidFit {
        att: EstimateResult::new(ATT_LABEL, fit.coefficients[1], cov[(1, 1)].sqrt(), n),
        n_units: p.n_units,
        dropped_units: p.dropped,
    })
}

/// Fixed-effects DiD with explicit unit dummies. Agrees with [`did_fe`].
pub fn did_fe_dummies(data: &DidDataset) -> Result<DidFit, EstimationError> {
    let p = prepare(data)?;
    let n = p.rows.len();
    let k = 2 + p.n_units;
    let mut x = DMatrix::<f64>::zeros(n, k);
    let mut y = DVector::<f64>::zeros(n);
    for (i, (r, &u)) in p.rows.iter().zip(&p.unit_of_row).enumerate() {
        y[i] = r.basis;
        x[(i, 0)] = r.post as f64;
        x[(i, 1)] = (r.treatment * r.post) as f64;
        x[(i, 2 + u)] = 1.0;
    }
    let mut labels = vec!["post".to_string(), ATT_LABEL.to_string()];
    labels.extend((0..p.n_units).map(|u| format!("unit_{u}")));
    let design = DesignMatrix::new(x, labels)?;
    let fit = ols(&design, &y)?;
    let cov = cluster_cov(
        &design.x,
        &fit.residuals,
        &fit.xtx_inv,
        &p.unit_of_row,
        p.n_units,
        3,
    );
    Ok(DidFit {
        att: EstimateResult::new(ATT_LABEL, fit.coefficients[1], cov[(1, 1)].sqrt(), n),
        n_units: p.n_units,
        dropped_units: p.dropped,
    })
}

/// CR1 cluster-robust covariance with `G/(G−1) · (N−1)/(N−K)` scaling.
/// `k_eff` counts slopes plus the absorbed intercept, so the within and
/// dummy routes produce identical standard errors.
fn cluster_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
    cluster: &[usize],
    n_clusters: usize,
    k_eff: usize,
) -> DMatrix<f64> {
    let (n, k) = (x.nrows(), x.ncols());
    let mut scores = DMatrix::<f64>::zeros(n_clusters, k);
    for (i, &g) in cluster.iter().enumerate() {
        for j in 0..k {
            scores[(g, j)] += x[(i, j)] * residuals[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let g = n_clusters as f64;
    let scale = if n_clusters > 1 && n > k_eff {
        g / (g - 1.0) * (n as f64 - 1.0) / (n - k_eff) as f64
    } else {
        f64::NAN
    };
    xtx_inv * meat * xtx_inv * scale
}
