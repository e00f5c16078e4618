//! Heteroskedasticity- and autocorrelation-consistent covariance.
//!
//! With scores `h_t = x_t e_t` and `Γ_l = Σ_t h_t h_{t−l}'`, the Bartlett
//! long-run matrix is `S = Γ_0 + Σ_{l=1..L} (1 − l/(L+1)) (Γ_l + Γ_l')` and
//! the covariance is the sandwich `(X'X)⁻¹ S (X'X)⁻¹`, without small-sample
//! scaling. `L = 0` is the White (HC0) estimator.

use nalgebra::{DMatrix, DVector};

use super::ols::xtx_inverse;
use super::EstimationError;

/// `floor(4 · (T/100)^(2/9))`.
pub fn default_lag(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Newey–West covariance treating all rows as one time-ordered series.
pub fn newey_west_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    lag: usize,
) -> Result<DMatrix<f64>, EstimationError> {
    let segments = vec![0; x.nrows()];
    newey_west_cov_grouped(x, residuals, lag, &segments)
}

/// Newey–West covariance where lagged products are taken only within runs
/// of equal `segment` labels (each run is one time-ordered series).
pub fn newey_west_cov_grouped(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    lag: usize,
    segment: &[usize],
) -> Result<DMatrix<f64>, EstimationError> {
    let (n, k) = (x.nrows(), x.ncols());
    if residuals.len() != n || segment.len() != n {
        return Err(EstimationError::Dimension(format!(
            "X has {n} rows, residuals {}, segments {}",
            residuals.len(),
            segment.len()
        )));
    }
    let runs = runs(segment);
    let longest = runs.iter().map(|&(_, len)| len).max().unwrap_or(0);
    if lag >= longest {
        return Err(EstimationError::InvalidLag { lag, t: longest });
    }
    let bread = xtx_inverse(x).ok_or_else(|| EstimationError::Singular {
        columns: vec!["<design>".into()],
    })?;

    let mut scores = x.clone();
    for (mut row, e) in scores.row_iter_mut().zip(residuals.iter()) {
        row *= *e;
    }
    let mut meat = scores.transpose() * &scores;
    for l in 1..=lag {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let mut gamma = DMatrix::<f64>::zeros(k, k);
        for &(start, len) in &runs {
            if len <= l {
                continue;
            }
            let lead = scores.rows(start + l, len - l);
            let lagged = scores.rows(start, len - l);
            gamma += lead.transpose() * lagged;
        }
        meat += (&gamma + gamma.transpose()) * w;
    }
    let cov = &bread * meat * &bread;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// White heteroskedasticity-robust (HC0) covariance.
pub fn white_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
) -> Result<DMatrix<f64>, EstimationError> {
    let bread = xtx_inverse(x).ok_or_else(|| EstimationError::Singular {
        columns: vec!["<design>".into()],
    })?;
    let mut meat = DMatrix::<f64>::zeros(x.ncols(), x.ncols());
    for (row, e) in x.row_iter().zip(residuals.iter()) {
        meat += row.transpose() * row * (e * e);
    }
    let cov = &bread * meat * &bread;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// `(start, len)` of each maximal run of equal labels.
fn runs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            if i > start {
                out.push((start, i - start));
            }
            start = i;
        }
    }
    out
}
