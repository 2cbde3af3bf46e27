//! Cholesky factorization and triangular solves.

use super::{Matrix, NumericsError, RngStream};

/// Maximum number of jitter escalations before giving up.
pub const JITTER_RETRIES: usize = 8;

/// Result of a jittered Cholesky factorization.
#[derive(Debug, Clone)]
pub struct Cholesky {
    pub factor: Matrix,
    /// Diagonal jitter that was actually added.
    pub jitter: f64,
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        let lj = l.row_slice(j);
        d -= lj[..j].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let s: f64 = {
                let (li, lj) = (l.row_slice(i), l.row_slice(j));
                li[..j].iter().zip(&lj[..j]).map(|(x, y)| x * y).sum()
            };
            l[(i, j)] = (a[(i, j)] - s) / d;
        }
    }
    Some(l)
}

/// Factor `a + jitter·I = L·Lᵀ`.
///
/// When the first attempt fails the jitter is raised to at least
/// `1e-6·trace(a)/n` and multiplied by ten on each of up to
/// [`JITTER_RETRIES`] further attempts.
pub fn cholesky_psd(a: &Matrix, jitter: f64) -> Result<Cholesky, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    if jitter < 0.0 || !jitter.is_finite() {
        return Err(NumericsError::ParameterOutOfRange(format!("jitter {jitter}")));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Cholesky { factor: Matrix::zeros(0, 0), jitter });
    }
    if let Some(factor) = try_cholesky(a, jitter) {
        return Ok(Cholesky { factor, jitter });
    }
    let base = (1e-6 * a.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
    let mut j = jitter.max(base);
    for _ in 0..JITTER_RETRIES {
        if let Some(factor) = try_cholesky(a, j) {
            return Ok(Cholesky { factor, jitter: j });
        }
        j *= 10.0;
    }
    Err(NumericsError::NotPositiveDefinite { last_jitter: j / 10.0 })
}

fn check_triangular(l: &Matrix, b: &Matrix) -> Result<(), NumericsError> {
    if !l.is_square() || l.rows() != b.rows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "triangular solve {}x{} against {}x{}",
            l.rows(),
            l.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if let Some(i) = (0..l.rows()).find(|&i| l[(i, i)] == 0.0) {
        return Err(NumericsError::SingularTriangular(i));
    }
    Ok(())
}

/// Solve `l·x = b` by forward substitution (`l` lower-triangular).
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    check_triangular(l, b)?;
    Ok(solve_lower_unchecked(l, b))
}

pub(crate) fn solve_lower_unchecked(l: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = b.shape();
    let mut x = b.clone();
    for i in 0..n {
        let li = l.row_slice(i);
        for p in 0..i {
            let lip = li[p];
            if lip == 0.0 {
                continue;
            }
            let (head, tail) = x.as_mut_slice().split_at_mut(i * m);
            let xp = &head[p * m..(p + 1) * m];
            for (xi, &v) in tail[..m].iter_mut().zip(xp) {
                *xi -= lip * v;
            }
        }
        let d = li[i];
        for v in x.row_slice_mut(i) {
            *v /= d;
        }
    }
    x
}

/// Solve `lᵀ·x = b` by back substitution (`l` lower-triangular).
pub fn solve_upper_t(l: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    check_triangular(l, b)?;
    Ok(solve_upper_t_unchecked(l, b))
}

pub(crate) fn solve_upper_t_unchecked(l: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = b.shape();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for p in i + 1..n {
            let lpi = l[(p, i)];
            if lpi == 0.0 {
                continue;
            }
            let (head, tail) = x.as_mut_slice().split_at_mut(p * m);
            let xi = &mut head[i * m..(i + 1) * m];
            for (a, &v) in xi.iter_mut().zip(&tail[..m]) {
                *a -= lpi * v;
            }
        }
        let d = l[(i, i)];
        for v in x.row_slice_mut(i) {
            *v /= d;
        }
    }
    x
}

/// `A⁻¹·b` for `A = L·Lᵀ`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let y = solve_lower(l, b)?;
    Ok(solve_upper_t_unchecked(l, &y))
}

/// `log|A|` for `A = L·Lᵀ`.
pub fn log_det_from_cholesky(l: &Matrix) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// Draw `mean + chol_cov·u` with `u` standard normal.
pub fn sample_mvn(mean: &[f64], chol_cov: &Matrix, rng: &mut RngStream) -> Result<Vec<f64>, NumericsError> {
    let n = mean.len();
    if chol_cov.shape() != (n, n) {
        return Err(NumericsError::DimensionMismatch(format!(
            "mean of length {n} with {}x{} factor",
            chol_cov.rows(),
            chol_cov.cols()
        )));
    }
    let u: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    Ok((0..n)
        .map(|i| mean[i] + chol_cov.row_slice(i).iter().zip(&u).map(|(l, u)| l * u).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(n: usize, rng: &mut RngStream) -> Matrix {
        let b = Matrix::from_fn(n, n, |_, _| rng.normal());
        b.matmul_t(&b).add(&Matrix::identity(n))
    }

    #[test]
    fn identity_factor() {
        let c = cholesky_psd(&Matrix::identity(2), 0.0).unwrap();
        assert_eq!(c.factor, Matrix::identity(2));
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky_psd(&a, 0.0).unwrap().factor;
        let expect = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 2f64.sqrt()]]).unwrap();
        assert!(l.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = RngStream::new(11);
        for _ in 0..20 {
            let a = random_spd(8, &mut rng);
            let l = cholesky_psd(&a, 0.0).unwrap().factor;
            assert!(l.matmul_t(&l).max_abs_diff(&a) <= 1e-8);
        }
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let v = Matrix::column(&[1.0, 2.0, 3.0]);
        let a = v.matmul_t(&v);
        let c = cholesky_psd(&a, 0.0).unwrap();
        assert!(c.jitter > 0.0);
        let shifted = a.add(&Matrix::identity(3).scale(c.jitter));
        assert!(c.factor.matmul_t(&c.factor).max_abs_diff(&shifted) < 1e-8);
    }

    #[test]
    fn indefinite_fails() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(cholesky_psd(&a, 0.0), Err(NumericsError::NotPositiveDefinite { .. })));
        assert!(matches!(
            cholesky_psd(&Matrix::zeros(2, 3), 0.0),
            Err(NumericsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn solves() {
        let l = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let x = solve_lower(&l, &Matrix::column(&[2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
        let b = Matrix::column(&[4.0, -1.0]);
        assert_eq!(solve_lower(&Matrix::identity(2), &b).unwrap(), b);

        let mut rng = RngStream::new(3);
        let a = random_spd(6, &mut rng);
        let l = cholesky_psd(&a, 0.0).unwrap().factor;
        let b = Matrix::from_fn(6, 3, |_, _| rng.normal());
        let x = solve_lower(&l, &b).unwrap();
        assert!(l.matmul(&x).max_abs_diff(&b) <= 1e-9 * b.max_abs().max(1.0));
        let y = solve_upper_t(&l, &b).unwrap();
        assert!(l.transpose().matmul(&y).max_abs_diff(&b) <= 1e-9 * b.max_abs().max(1.0));
        let z = cholesky_solve(&l, &b).unwrap();
        assert!(a.matmul(&z).max_abs_diff(&b) <= 1e-8);
    }

    #[test]
    fn singular_triangular() {
        let l = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            solve_lower(&l, &Matrix::column(&[1.0, 1.0])),
            Err(NumericsError::SingularTriangular(1))
        ));
    }

    #[test]
    fn mvn_degenerate_and_deterministic() {
        let mut rng = RngStream::new(5);
        let mean = [1.0, -2.0];
        assert_eq!(sample_mvn(&mean, &Matrix::zeros(2, 2), &mut rng).unwrap(), mean.to_vec());
        let l = Matrix::identity(2);
        let a = RngStream::new(9);
        let (mut r1, mut r2) = (a.clone(), a);
        assert_eq!(
            sample_mvn(&mean, &l, &mut r1).unwrap(),
            sample_mvn(&mean, &l, &mut r2).unwrap()
        );
        assert!(sample_mvn(&mean, &Matrix::identity(3), &mut rng).is_err());
    }

    #[test]
    fn mvn_monte_carlo_mean() {
        let mut rng = RngStream::new(77);
        let l = Matrix::identity(1);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_mvn(&[0.0], &l, &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "sample mean {mean}");
    }
}
