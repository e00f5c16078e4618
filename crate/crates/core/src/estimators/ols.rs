use nalgebra::{DMatrix, DVector};

use super::{DesignMatrix, EstimationError};

/// Column `i` is treated as collinear when its QR pivot is this small
/// relative to the column's own norm.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub labels: Vec<String>,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(X'X)⁻¹`, from the triangular factor.
    pub xtx_inv: DMatrix<f64>,
    /// Residual variance with `n − k` degrees of freedom.
    pub sigma2: f64,
    /// Conventional covariance `σ² (X'X)⁻¹`.
    pub cov: DMatrix<f64>,
    pub n: usize,
    pub k: usize,
}

impl OlsFit {
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.coefficients[i])
    }
}

/// Least squares via Householder QR. Fails with the offending column labels
/// when `X` is rank deficient.
pub fn ols(design: &DesignMatrix, y: &DVector<f64>) -> Result<OlsFit, EstimationError> {
    let (n, k) = (design.nrows(), design.ncols());
    if y.len() != n {
        return Err(EstimationError::Dimension(format!(
            "y has {} rows, X has {n}",
            y.len()
        )));
    }
    if n <= k {
        return Err(EstimationError::TooFewObservations { n, k });
    }
    let (r, qty) = qr_factor(&design.x, y);
    let collinear: Vec<String> = (0..k)
        .filter(|&i| {
            let norm = design.x.column(i).norm();
            norm == 0.0 || r[(i, i)].abs() <= RANK_TOL * norm
        })
        .map(|i| design.labels[i].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(EstimationError::Singular { columns: collinear });
    }
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| EstimationError::Singular {
            columns: design.labels.clone(),
        })?;
    let residuals = y - &design.x * &coefficients;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .expect("nonsingular triangular factor");
    let xtx_inv = &r_inv * r_inv.transpose();
    let sigma2 = residuals.norm_squared() / (n - k) as f64;
    let cov = &xtx_inv * sigma2;
    Ok(OlsFit {
        labels: design.labels.clone(),
        coefficients,
        residuals,
        xtx_inv,
        sigma2,
        cov,
        n,
        k,
    })
}

/// Returns the `k × k` triangular factor and the first `k` entries of `Q'y`.
fn qr_factor(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let k = x.ncols();
    let qr = x.clone().qr();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    (qr.r(), qty.rows(0, k).into_owned())
}

/// `(X'X)⁻¹` for a full-rank `X`.
pub(crate) fn xtx_inverse(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = x.ncols();
    let r = x.clone().qr().r();
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(k, k))?;
    Some(&r_inv * r_inv.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(x: DMatrix<f64>) -> DesignMatrix {
        let labels = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        DesignMatrix::new(x, labels).unwrap()
    }

    #[test]
    fn exact_fit_without_noise() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 5.0, 8.0, 11.0]);
        let fit = ols(&design(x), &y).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.residuals.amax() < 1e-12);
    }

    #[test]
    fn intercept_only_gives_mean() {
        let y = DVector::from_vec(vec![3.0, -1.0, 4.0, 10.0, 5.5]);
        let fit = ols(&design(DMatrix::from_element(5, 1, 1.0)), &y).unwrap();
        assert!((fit.coefficients[0] - y.mean()).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(20, |_, _| rng.random_range(-5.0..5.0));
        let fit = ols(&design(x.clone()), &y).unwrap();
        // Independent route: solve X'X b = X'y by Cholesky.
        let xtx = x.transpose() * &x;
        let oracle = xtx.cholesky().unwrap().solve(&(x.transpose() * &y));
        assert!((&fit.coefficients - oracle).amax() < 1e-8);
        // Residuals orthogonal to every column.
        let xte = x.transpose() * &fit.residuals;
        assert!(xte.amax() <= 1e-8 * y.norm());
    }

    #[test]
    fn reports_collinear_columns() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 1.0, 3.0, 4.0, 1.0, 4.0, 5.0],
        );
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 5.0]);
        match ols(&design(x), &y) {
            Err(EstimationError::Singular { columns }) => assert_eq!(columns, ["x2"]),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_too_few_rows() {
        let x = DMatrix::from_element(2, 2, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            ols(&design(x), &y),
            Err(EstimationError::TooFewObservations { .. })
        ));
    }
}
