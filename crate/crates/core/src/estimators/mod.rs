//! Regression and treatment-effect estimators: QR-based OLS, fixed-effects
//! difference-in-differences, synthetic difference-in-differences with
//! simplex-constrained weights, the monthly near/far event regression, and
//! Newey–West covariance.

mod did;
mod event;
mod hac;
mod ols;
mod sdid;
mod simplex;

pub use did::{did_fe, did_fe_dummies, DidFit};
pub use event::{
    panel_event_regression, yearly_average_effects, EffectTable, EventCoefficient,
    EventCoefficients,
};
pub use hac::{default_lag, newey_west_cov, newey_west_cov_grouped, white_cov};
pub use ols::{ols, OlsFit};
pub use sdid::{
    default_zeta, sdid_att, sdid_estimate, sdid_weights, SdidConfig, SdidFit, SdidWeights,
    WeightMode,
};
pub use simplex::{solve_simplex_lsq, SimplexOptions, SimplexSolution};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided 95% normal critical value used for confidence intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimationError {
    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    Singular { columns: Vec<String> },
    #[error("need more observations than regressors (n={n}, k={k})")]
    TooFewObservations { n: usize, k: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("HAC lag {lag} must be smaller than the series length {t}")]
    InvalidLag { lag: usize, t: usize },
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("simplex solver did not converge after {iterations} iterations (gap {gap:e})")]
    NotConverged { iterations: usize, gap: f64 },
}

/// Dense regressor matrix with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, labels: Vec<String>) -> Result<Self, EstimationError> {
        if labels.len() != x.ncols() {
            return Err(EstimationError::Dimension(format!(
                "{} labels for {} columns",
                labels.len(),
                x.ncols()
            )));
        }
        Ok(Self { x, labels })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }
}

/// One coefficient with its standard error and normal-approximation
/// inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub label: String,
    pub coefficient: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci95: (f64, f64),
    pub n_obs: usize,
}

impl EstimateResult {
    pub fn new(label: impl Into<String>, coefficient: f64, se: f64, n_obs: usize) -> Self {
        let t_stat = coefficient / se;
        let p_value = if t_stat.is_finite() {
            let normal = Normal::standard();
            2.0 * (1.0 - normal.cdf(t_stat.abs()))
        } else {
            f64::NAN
        };
        Self {
            label: label.into(),
            coefficient,
            se,
            t_stat,
            p_value,
            ci95: (coefficient - Z_95 * se, coefficient + Z_95 * se),
            n_obs,
        }
    }

    pub fn significant_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}
