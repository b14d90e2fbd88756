//! Dense nonsymmetric eigen-solve for the small state matrices in this crate.
//!
//! Eigenvalues come from nalgebra's real Schur decomposition (Francis
//! double-shift QR). Eigenvectors, when needed, are recovered by complex
//! inverse iteration on `A − λI`.

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};
use crate::scalar::{cabs, Real};

const MAX_SCHUR_ITERATIONS: usize = 1_000;

/// All eigenvalues of a real square matrix, sorted by real part then
/// imaginary part. Complex eigenvalues appear in conjugate pairs.
pub fn eigenvalues<T: Real>(a: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("matrix is {}x{}", a.nrows(), a.ncols())));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    // Deflation is judged relative to neighbouring diagonal entries. Some
    // matrices with clustered eigenvalues stall at machine precision, so the
    // tolerance is relaxed in steps; each step bounds the added error by
    // that relative tolerance.
    let eps = T::default_epsilon();
    let mut tol = eps;
    let mut schur = None;
    while schur.is_none() && tol <= eps * T::lit(1e5) {
        schur = Schur::try_new(a.clone(), tol, MAX_SCHUR_ITERATIONS);
        tol *= T::lit(8.0);
    }
    let mut ev: Vec<_> = schur
        .ok_or(Error::EigenNoConvergence)?
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(ev)
}

fn complexify<T: Real>(a: &DMatrix<T>) -> DMatrix<Complex<T>> {
    a.map(|x| Complex::new(x, T::zero()))
}

/// Unit eigenvector for `lambda` by inverse iteration.
pub fn eigenvector<T: Real>(a: &DMatrix<T>, lambda: Complex<T>) -> Result<DVector<Complex<T>>> {
    let n = a.nrows();
    let norm = a.norm().max(T::one());
    // shift slightly off the eigenvalue so the LU factorization stays regular
    let shift = lambda + Complex::new(norm * T::default_epsilon() * T::lit(16.0), T::zero());
    let mut m = complexify(a);
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex::new(T::one(), T::lit(0.1 * i as f64)));
    for _ in 0..4 {
        let w = lu.solve(&v).ok_or(Error::EigenNoConvergence)?;
        let wn = w.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
        if !(wn > T::zero()) || !wn.is_finite() {
            return Err(Error::EigenNoConvergence);
        }
        v = w.map(|z| z / wn);
    }
    Ok(v)
}

pub fn eigenpairs<T: Real>(a: &DMatrix<T>) -> Result<Vec<(Complex<T>, DVector<Complex<T>>)>> {
    eigenvalues(a)?
        .into_iter()
        .map(|l| eigenvector(a, l).map(|v| (l, v)))
        .collect()
}

/// `‖A·v − λ·v‖ / ‖v‖`.
pub fn eigen_residual<T: Real>(a: &DMatrix<T>, lambda: Complex<T>, v: &DVector<Complex<T>>) -> T {
    let av = complexify(a) * v;
    let r = av - v.map(|z| z * lambda);
    let rn = r.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
    let vn = v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
    rn / vn
}

/// Pairs each entry of `a` with a distinct entry of `b`, repeatedly taking
/// the globally closest remaining pair. Returns `(index_a, index_b)` in
/// order of increasing distance; length is `min(a.len(), b.len())`.
pub fn match_nearest<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(T, usize, usize)> = a
        .iter()
        .enumerate()
        .flat_map(|(i, x)| b.iter().enumerate().map(move |(j, y)| (cabs(*x - *y), i, j)))
        .collect();
    candidates.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let ev = eigenvalues(&a).unwrap();
        let re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![-1.0, 2.0, 3.0]);
        assert!(ev.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let ev = eigenvalues(&a).unwrap();
        assert!((ev[0] - Complex::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn repeated_zero_eigenvalues() {
        // block lower-triangular with three exact zeros and a repeated pole
        let mut a = DMatrix::zeros(6, 6);
        for i in 3..6 {
            a[(i, i)] = -75.4;
            a[(i, i - 3)] = 3.0 * i as f64;
            a[(i, (i + 1) % 3)] = -1.5;
        }
        let ev = eigenvalues(&a).unwrap();
        assert_eq!(ev.iter().filter(|z| z.norm() < 1e-9).count(), 3);
        assert_eq!(ev.iter().filter(|z| (z.re + 75.4).abs() < 1e-9 && z.im.abs() < 1e-9).count(), 3);
    }

    #[test]
    fn rejects_non_square() {
        assert!(eigenvalues(&DMatrix::<f64>::zeros(2, 3)).is_err());
        assert!(eigenvalues(&DMatrix::<f64>::zeros(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn eigenpair_residuals_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for n in [2, 5, 9] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-100.0..100.0));
            let pairs = eigenpairs(&a).unwrap();
            assert_eq!(pairs.len(), n);
            for (l, v) in &pairs {
                assert!(eigen_residual(&a, *l, v) <= 1e-8 * a.norm());
            }
            // conjugate closure
            for (l, _) in &pairs {
                assert!(pairs.iter().any(|(m, _)| (m - l.conj()).norm() <= 1e-9 * a.norm()));
            }
        }
    }

    #[test]
    fn nearest_matching_is_one_to_one() {
        let a = [Complex::new(1.0, 0.0), Complex::new(2.0, 0.0)];
        let b = [Complex::new(2.1, 0.0), Complex::new(0.9, 0.0), Complex::new(10.0, 0.0)];
        let mut m = match_nearest(&a, &b);
        m.sort();
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }
}
