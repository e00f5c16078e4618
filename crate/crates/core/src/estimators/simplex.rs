//! Simplex-constrained regularized least squares by Frank–Wolfe.
//!
//! Minimizes `f(w) = ‖A w − b‖² + η ‖w‖²` over the probability simplex.
//! Each iteration takes the Frank–Wolfe vertex step with exact line search,
//! then re-minimizes over the face spanned by the current support
//! (Wolfe's min-norm-point correction). Plain and away-step variants can
//! stall on flat faces when `A` is rank deficient and `η = 0`.

use nalgebra::{DMatrix, DVector};

use super::EstimationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Accept a duality gap below `tol · max(1, f(w₀))` once steps stop
    /// making progress.
    pub tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: DVector<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
}

pub fn solve_simplex_lsq(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    eta: f64,
    opts: SimplexOptions,
) -> Result<SimplexSolution, EstimationError> {
    let (m, n) = (a.nrows(), a.ncols());
    if n == 0 || b.len() != m {
        return Err(EstimationError::Dimension(format!(
            "A is {m}×{n}, b has {} entries",
            b.len()
        )));
    }
    let objective = |w: &DVector<f64>| (a * w - b).norm_squared() + eta * w.norm_squared();

    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let tol = opts.tol * objective(&w).max(1.0);

    let mut gap = f64::INFINITY;
    // `face_optimal`: w minimizes over its own support, so a Frank–Wolfe
    // vertex inside the support means the remaining gap is roundoff.
    let (mut face_optimal, mut stalled) = (false, false);
    for it in 0..=opts.max_iter {
        let aw = a * &w;
        let grad: DVector<f64> = (a.tr_mul(&(&aw - b)) + &w * eta) * 2.0;
        let s = grad.argmin().0;
        gap = grad.dot(&w) - grad[s];
        let done = gap <= 0.0 || (face_optimal && w[s] > 0.0) || (stalled && gap <= tol);
        if done || (it == opts.max_iter && gap <= tol) {
            return Ok(finish(w, a, b, eta, gap, it));
        }
        if it == opts.max_iter {
            break;
        }
        let previous = objective(&w);

        let mut d = -w.clone();
        d[s] += 1.0;
        let ad = a.column(s) - &aw;
        let curvature = 2.0 * (ad.norm_squared() + eta * d.norm_squared());
        let gamma = if curvature > 0.0 {
            (gap / curvature).min(1.0)
        } else {
            1.0
        };
        w.axpy(gamma, &d, 1.0);
        w.iter_mut().for_each(|v| *v = v.max(0.0));

        let before = objective(&w);
        let (corrected, optimal) = correct_on_support(a, b, eta, w.clone());
        face_optimal = false;
        if objective(&corrected) <= before {
            w = corrected;
            face_optimal = optimal;
        }
        stalled = objective(&w) >= previous;
    }
    Err(EstimationError::NotConverged {
        iterations: opts.max_iter,
        gap,
    })
}

/// Moves `w` to the minimizer over the face of its support, dropping
/// coordinates that would turn negative on the way. The flag reports
/// whether that minimizer was reached.
fn correct_on_support(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    eta: f64,
    mut w: DVector<f64>,
) -> (DVector<f64>, bool) {
    loop {
        if eta == 0.0 {
            reduce_support(a, &mut w);
        }
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        if support.len() < 2 {
            return (w, true);
        }
        let Some(v) = face_minimizer(a, b, eta, &support) else {
            return (w, false);
        };
        let blocking = support
            .iter()
            .zip(v.iter())
            .filter(|&(_, &vi)| vi < 0.0)
            .map(|(&i, &vi)| (i, w[i] / (w[i] - vi)))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match blocking {
            None => {
                for (&i, &vi) in support.iter().zip(v.iter()) {
                    w[i] = vi;
                }
                return (w, true);
            }
            Some((drop, theta)) => {
                for (&i, &vi) in support.iter().zip(v.iter()) {
                    w[i] = (w[i] + theta * (vi - w[i])).max(0.0);
                }
                w[drop] = 0.0;
                let total = w.sum();
                w /= total;
            }
        }
    }
}

/// Shrinks the support until its columns are affinely independent, moving
/// only along directions that leave `A w` and the weight total unchanged.
fn reduce_support(a: &DMatrix<f64>, w: &mut DVector<f64>) {
    loop {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        let k = support.len();
        if k < 2 {
            return;
        }
        let a_s = a.select_columns(&support);
        let scale = a_s.amax();
        let mut m = if scale > 0.0 { a_s / scale } else { a_s }.insert_row(a.nrows(), 1.0);
        // Pad to square so the SVD exposes a full right basis.
        let rows = m.nrows();
        if rows < k {
            m = m.insert_rows(rows, k - rows, 0.0);
        }
        let svd = m.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let (j, &sigma) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty");
        if sigma > 1e-10 {
            return;
        }
        let mut z = v_t.row(j).transpose();
        // The SVD can be inaccurate without reporting it; check directly.
        if (&m * &z).amax() > 1e-9 {
            return;
        }
        if z[z.iamax()] < 0.0 {
            z = -z;
        }
        let Some((drop, t)) = support
            .iter()
            .zip(z.iter())
            .filter(|&(_, &zi)| zi < 0.0)
            .map(|(&i, &zi)| (i, w[i] / -zi))
            .min_by(|x, y| x.1.total_cmp(&y.1))
        else {
            return;
        };
        for (&i, &zi) in support.iter().zip(z.iter()) {
            w[i] = (w[i] + t * zi).max(0.0);
        }
        w[drop] = 0.0;
        let total = w.sum();
        *w /= total;
    }
}

/// Minimizer of the objective over the affine hull of the support
/// (weights summing to one, signs free).
///
/// Writes `v = 1/k + N y` with `N` spanning the zero-sum directions and
/// solves the stacked least-squares problem in `y` by QR, avoiding the
/// squared condition number of the normal equations. The stack has full
/// column rank when `η > 0` or the support is affinely independent.
fn face_minimizer(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    eta: f64,
    support: &[usize],
) -> Option<DVector<f64>> {
    let k = support.len();
    let m = a.nrows();
    let a_s = a.select_columns(support);
    let v0 = DVector::from_element(k, 1.0 / k as f64);
    let n = DMatrix::from_fn(k, k - 1, |i, j| {
        if i == j {
            1.0
        } else if i == k - 1 {
            -1.0
        } else {
            0.0
        }
    });
    let root = eta.sqrt();
    let mut lhs = DMatrix::zeros(m + k, k - 1);
    lhs.rows_mut(0, m).copy_from(&(&a_s * &n));
    lhs.rows_mut(m, k).copy_from(&(&n * root));
    let mut rhs = DVector::zeros(m + k);
    rhs.rows_mut(0, m).copy_from(&(b - &a_s * &v0));
    rhs.rows_mut(m, k).copy_from(&(&v0 * -root));
    let qr = lhs.qr();
    let y = qr.r().solve_upper_triangular(&qr.q().tr_mul(&rhs))?;
    let v = v0 + n * y;
    v.iter().all(|x| x.is_finite()).then_some(v)
}

fn finish(
    mut w: DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    eta: f64,
    gap: f64,
    iterations: usize,
) -> SimplexSolution {
    let total = w.sum();
    w /= total;
    let r = a * &w - b;
    SimplexSolution {
        objective: r.norm_squared() + eta * w.norm_squared(),
        weights: w,
        gap,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_column_is_trivial() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let sol = solve_simplex_lsq(&a, &b, 0.0, SimplexOptions::default()).unwrap();
        assert_eq!(sol.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn vertex_optimum_found_exactly() {
        // b equals column 2, so w = e_2 gives zero loss.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0, 1.0, 1.0, 0.5]);
        let b = a.column(2).into_owned();
        let sol = solve_simplex_lsq(&a, &b, 0.0, SimplexOptions::default()).unwrap();
        assert!((sol.weights[2] - 1.0).abs() < 1e-9);
        assert!(sol.objective < 1e-12);
    }

    #[test]
    fn stays_on_simplex_for_ill_conditioned_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(8, 5, |i, j| base[i] * 1e3 + 1e-6 * (i * j) as f64);
        let b = DVector::from_fn(8, |_, _| rng.random_range(-1e3..1e3));
        let sol = solve_simplex_lsq(&a, &b, 1e-3, SimplexOptions::default()).unwrap();
        assert!(sol.weights.iter().all(|&v| v >= 0.0));
        assert!((sol.weights.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn converges_on_rank_deficient_face() {
        // Centered 4×5 instance on which away-step iterations stall.
        let a = DMatrix::from_row_slice(
            4,
            5,
            &[
                2.0371096950007557,
                3.5348001744578603,
                5.395221381207951,
                10.565959162844198,
                10.865626055071044,
                1.347278357926693,
                -4.75461555335191,
                -4.039079802021246,
                -5.35720347449281,
                -4.352198400498283,
                -7.654827710462873,
                -6.506993761854617,
                -2.9052671044626757,
                -7.229870096072022,
                -9.50404914350004,
                4.270439657535424,
                7.726809140748667,
                1.5491255252759704,
                2.021114407720634,
                2.9906214889272813,
            ],
        );
        let b = DVector::from_vec(vec![
            6.551936554977555,
            -3.1827511055206763,
            -5.799983124637146,
            2.430797675180267,
        ]);
        let sol = solve_simplex_lsq(&a, &b, 0.0, SimplexOptions::default()).unwrap();
        assert!(sol.iterations < 100, "{}", sol.iterations);
        assert!(sol.weights.iter().all(|&v| v >= 0.0));
        assert!((sol.weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularized_many_controls_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(20, 150, |_, _| rng.random_range(-10.0..10.0));
        let b = DVector::from_fn(20, |_, _| rng.random_range(-10.0..10.0));
        for eta in [0.0, 0.5, 50.0] {
            let sol = solve_simplex_lsq(&a, &b, eta, SimplexOptions::default()).unwrap();
            assert!((sol.weights.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let opts = SimplexOptions {
            max_iter: 0,
            tol: 1e-300,
        };
        assert!(matches!(
            solve_simplex_lsq(&a, &b, 0.0, opts),
            Err(EstimationError::NotConverged { iterations: 0, .. })
        ));
    }
}
