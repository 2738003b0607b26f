//! Dense linear algebra on `ndarray` matrices: a one-sided Jacobi SVD, SVD-backed
//! least squares with optional ridge, and Pearson correlation.
//!
//! Jacobi was chosen over bidiagonalisation because every matrix in this crate is
//! small (at most a few hundred columns) and Jacobi gives singular values to high
//! relative accuracy with a deterministic rotation order.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `a = u · diag(sigma) · vt`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// rows × r, orthonormal columns.
    pub u: Matrix,
    /// r values, non-increasing, all strictly positive.
    pub sigma: Array1<f64>,
    /// r × cols, orthonormal rows.
    pub vt: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let scaled = &self.u * &self.sigma.view().insert_axis(Axis(0));
        scaled.dot(&self.vt)
    }
}

pub fn ensure_finite(a: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!("{what} has non-finite entries")))
    }
}

/// Every singular value of `a` (min(rows, cols) of them), descending, with the
/// matching full-width factors. No rank truncation.
fn jacobi_svd(a: ArrayView2<f64>) -> (Matrix, Vec<f64>, Matrix) {
    let (rows, cols) = a.dim();
    if rows < cols {
        let (u, s, vt) = jacobi_svd(a.t());
        return (vt.reversed_axes(), s, u.reversed_axes());
    }
    // Work column-major: each inner Vec is one column.
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    // Stable: equal singular values keep their column order.
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = Matrix::zeros((rows, cols));
    let mut vt = Matrix::zeros((cols, cols));
    let mut sigma = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > 0.0 {
            for i in 0..rows {
                u[[i, k]] = w[j][i] / s;
            }
        }
        for i in 0..cols {
            vt[[k, i]] = v[j][i];
        }
    }
    (u, sigma, vt)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All min(rows, cols) singular values, descending, without rank truncation.
pub fn singular_values(a: ArrayView2<f64>) -> Result<Vec<f64>> {
    ensure_finite(a, "input")?;
    Ok(jacobi_svd(a).1)
}

/// Thin SVD with numerically-zero singular values removed
/// (threshold `max(rows, cols) · eps · sigma_max`).
///
/// Signs are fixed so that the largest-magnitude entry of every column of `u`
/// is nonnegative.
pub fn svd_thin(a: ArrayView2<f64>) -> Result<SvdFactors> {
    ensure_finite(a, "input")?;
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    let (mut u, sigma, mut vt) = jacobi_svd(a);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    let r = sigma.iter().take_while(|&&s| s > tol && s > 0.0).count();

    for k in 0..r {
        let col = u.column(k);
        let mut best = 0;
        for i in 1..rows {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(k).mapv_inplace(|x| -x);
            vt.row_mut(k).mapv_inplace(|x| -x);
        }
    }

    Ok(SvdFactors {
        u: u.slice(ndarray::s![.., ..r]).to_owned(),
        sigma: Array1::from(sigma[..r].to_vec()),
        vt: vt.slice(ndarray::s![..r, ..]).to_owned(),
    })
}

/// Minimum-norm solution of `argmin ‖a·x − b‖²_F + ridge·‖x‖²_F` through the
/// pseudo-inverse.
pub fn solve_least_squares(a: ArrayView2<f64>, b: ArrayView2<f64>, ridge: f64) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "system has {} rows but right-hand side has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
    }
    ensure_finite(b, "right-hand side")?;
    let f = svd_thin(a)?;
    let mut utb = f.u.t().dot(&b);
    for (k, mut row) in utb.axis_iter_mut(Axis(0)).enumerate() {
        let s = f.sigma[k];
        let scale = s / (s * s + ridge);
        row.mapv_inplace(|x| x * scale);
    }
    Ok(f.vt.t().dot(&utb))
}

/// Solves `a · x = b` for a square `a`, refusing (numerically) singular systems.
pub fn solve_nonsingular(a: ArrayView2<f64>, b: ArrayView2<f64>, what: &str) -> Result<Matrix> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::Shape(format!("{what} is {rows}x{cols}, expected square")));
    }
    if rows != b.nrows() {
        return Err(Error::Shape(format!("{what} has {rows} rows, right-hand side {}", b.nrows())));
    }
    ensure_finite(a, what)?;
    let (_, sigma, _) = jacobi_svd(a);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let smin = sigma.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::Singular(format!(
            "{what} has condition beyond 1e12 (smallest singular value {smin:e})"
        )));
    }
    solve_least_squares(a, b, 0.0)
}

pub fn frobenius_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sample Pearson correlation.
pub fn pearson_r(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput("need at least two observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant sequence has no correlation".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn max_abs(a: &Matrix) -> f64 {
        a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn identity_svd() {
        let f = svd_thin(Matrix::eye(3).view()).unwrap();
        assert_eq!(f.sigma.to_vec(), vec![1.0, 1.0, 1.0]);
        assert!(max_abs(&(f.reconstruct() - Matrix::eye(3))) < 1e-15);
    }

    #[test]
    fn diagonal_svd() {
        let f = svd_thin(array![[3.0, 0.0], [0.0, 2.0]].view()).unwrap();
        assert_eq!(f.sigma.to_vec(), vec![3.0, 2.0]);
    }

    #[test]
    fn random_svd_reconstructs_and_is_orthonormal() {
        for (r, c, seed) in [(6, 4, 1), (4, 6, 2), (10, 10, 3), (1, 5, 4)] {
            let a = random(r, c, seed);
            let f = svd_thin(a.view()).unwrap();
            let rel = frobenius_norm((f.reconstruct() - &a).view()) / frobenius_norm(a.view());
            assert!(rel <= 1e-8, "{rel}");
            let k = f.rank();
            assert!(max_abs(&(f.u.t().dot(&f.u) - Matrix::eye(k))) < 1e-10);
            assert!(max_abs(&(f.vt.dot(&f.vt.t()) - Matrix::eye(k))) < 1e-10);
            for w in f.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn rank_deficient_is_truncated() {
        let b = random(7, 2, 5);
        let c = random(2, 5, 6);
        let f = svd_thin(b.dot(&c).view()).unwrap();
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn sign_convention_is_fixed() {
        let f = svd_thin(random(5, 3, 9).view()).unwrap();
        for col in f.u.columns() {
            let big = col.iter().fold(0.0f64, |m, x| if x.abs() > m.abs() { *x } else { m });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let a = array![[1.0, f64::NAN]];
        assert!(matches!(svd_thin(a.view()), Err(Error::InvalidMatrix(_))));
    }

    // Closed-form oracle: singular values are sqrt of eigenvalues of aᵗa.
    #[test]
    fn singular_values_match_characteristic_polynomial() {
        for seed in 0..20 {
            let a = random(2, 2, 100 + seed);
            let m = a.t().dot(&a);
            let tr = m[[0, 0]] + m[[1, 1]];
            let det = m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let expected = [(tr / 2.0 + disc).sqrt(), (tr / 2.0 - disc).max(0.0).sqrt()];
            let got = singular_values(a.view()).unwrap();
            for (g, e) in got.iter().zip(expected) {
                assert!((g - e).abs() < 1e-8);
            }
        }
        for seed in 0..20 {
            let a = random(3, 3, 200 + seed);
            let m = a.t().dot(&a);
            // Trigonometric solution of the symmetric 3x3 characteristic cubic.
            let p1 = m[[0, 1]].powi(2) + m[[0, 2]].powi(2) + m[[1, 2]].powi(2);
            let q = (m[[0, 0]] + m[[1, 1]] + m[[2, 2]]) / 3.0;
            let p2 = (m[[0, 0]] - q).powi(2) + (m[[1, 1]] - q).powi(2) + (m[[2, 2]] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = (&m - &(Matrix::eye(3) * q)) / p;
            let det_b = b[[0, 0]] * (b[[1, 1]] * b[[2, 2]] - b[[1, 2]] * b[[2, 1]])
                - b[[0, 1]] * (b[[1, 0]] * b[[2, 2]] - b[[1, 2]] * b[[2, 0]])
                + b[[0, 2]] * (b[[1, 0]] * b[[2, 1]] - b[[1, 1]] * b[[2, 0]]);
            let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let e2 = 3.0 * q - e1 - e3;
            let got = singular_values(a.view()).unwrap();
            for (g, e) in got.iter().zip([e1, e2, e3]) {
                assert!((g - e.max(0.0).sqrt()).abs() < 1e-8, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn identity_system() {
        let b = random(4, 3, 11);
        let x = solve_least_squares(Matrix::eye(4).view(), b.view(), 0.0).unwrap();
        assert!(max_abs(&(x - &b)) < 1e-14);
    }

    #[test]
    fn orthonormal_columns() {
        let q = svd_thin(random(6, 3, 12).view()).unwrap().u;
        let b = random(6, 2, 13);
        let x = solve_least_squares(q.view(), b.view(), 0.0).unwrap();
        assert!(max_abs(&(x - q.t().dot(&b))) < 1e-12);
    }

    #[test]
    fn ridge_normal_equation_holds() {
        let a = random(8, 3, 14);
        let b = random(8, 2, 15);
        let x = solve_least_squares(a.view(), b.view(), 0.1).unwrap();
        let grad = 2.0 * a.t().dot(&(a.dot(&x) - &b)) + 2.0 * 0.1 * &x;
        assert!(max_abs(&grad) < 1e-8);
    }

    #[test]
    fn pseudo_inverse_recovers_exact_solution() {
        let a = random(9, 4, 16);
        let x0 = random(4, 3, 17);
        let x = solve_least_squares(a.view(), a.dot(&x0).view(), 0.0).unwrap();
        assert!(max_abs(&(x - x0)) < 1e-8);
    }

    #[test]
    fn least_squares_shape_error() {
        let r = solve_least_squares(Matrix::eye(3).view(), Matrix::zeros((2, 1)).view(), 0.0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn nonsingular_solve_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let r = solve_nonsingular(a.view(), Matrix::eye(2).view(), "test");
        assert!(matches!(r, Err(Error::Singular(_))));
    }

    #[test]
    fn pearson_cases() {
        let x = array![1.0, 2.0, 3.0];
        assert!((pearson_r(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-15);
        let neg = -&x;
        assert!((pearson_r(x.view(), neg.view()).unwrap() + 1.0).abs() < 1e-15);
        // Hand formula: means 2 and 13/3; deviations (-1,0,1) and (-7/3,-1/3,8/3).
        let y = array![2.0, 4.0, 7.0];
        let sxy = 7.0 / 3.0 + 8.0 / 3.0;
        let syy: f64 = [49.0, 1.0, 64.0].iter().sum::<f64>() / 9.0;
        let expected = sxy / (2.0f64.sqrt() * syy.sqrt());
        assert!((pearson_r(x.view(), y.view()).unwrap() - expected).abs() < 1e-14);
        let c = array![1.0, 1.0, 1.0];
        assert!(matches!(pearson_r(x.view(), c.view()), Err(Error::DegenerateInput(_))));
    }

    proptest::proptest! {
        #[test]
        fn pearson_affine_invariant(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..20),
            a in 0.1f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let n = xs.len();
            let x = Array1::from(xs);
            let y = Array1::from_shape_fn(n, |i| (i as f64 * 1.3).sin() + x[i] * 0.2);
            if let Ok(r) = pearson_r(x.view(), y.view()) {
                let xt = x.mapv(|v| a * v + b);
                let r2 = pearson_r(xt.view(), y.view()).unwrap();
                proptest::prop_assert!((r - r2).abs() < 1e-9);
            }
        }
    }
}
