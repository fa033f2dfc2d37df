//! Small dense helpers shared by the solvers and metrics.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Column-major complex matrix.
pub type CMatrix = DMatrix<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `C = A * B` through the blocked complex GEMM kernel.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut c = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex64 is repr(C) { re, im }, layout-identical to [f64; 2];
    // all three buffers are column-major with the strides given below.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// `Aᴴ B` without materialising the adjoint.
pub fn adjoint_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.nrows(), b.nrows(), "adjoint_mul shape mismatch");
    let (k, m, n) = (a.nrows(), a.ncols(), b.ncols());
    let a_conj = a.map(|c| c.conj());
    let mut c = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: as in `matmul`; A is read transposed through swapped strides.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a_conj.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

pub fn conj(a: &CMatrix) -> CMatrix {
    a.map(|c| c.conj())
}

/// Real part of `⟨A, B⟩ = tr(Aᴴ B)`.
pub fn re_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn vec_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Largest row 2-norm, `‖A‖_{2,∞}`.
pub fn max_row_norm(a: &CMatrix) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|c| c.norm_sqr()).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt()
}

/// Orthonormal basis of the column span (thin Q of a Householder QR).
pub fn orthonormalize(a: &CMatrix) -> CMatrix {
    a.clone().qr().q()
}

/// Orthonormal basis via two rounds of Cholesky QR, falling back to
/// Householder QR when the Gram matrix is too ill-conditioned.
pub fn orthonormalize_fast(a: &CMatrix) -> CMatrix {
    let k = a.ncols();
    if k == 0 || a.nrows() < k {
        return orthonormalize(a);
    }
    let mut q = a.clone();
    for _ in 0..2 {
        let gram = adjoint_mul(&q, &q);
        let Some(chol) = gram.cholesky() else {
            return orthonormalize(a);
        };
        let l = chol.l();
        let diag: Vec<f64> = (0..k).map(|i| l[(i, i)].re).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(lo > 1e-6 * hi) {
            return orthonormalize(a);
        }
        let Some(l_inv) = l.solve_lower_triangular(&CMatrix::identity(k, k)) else {
            return orthonormalize(a);
        };
        q = matmul(&q, &l_inv.adjoint());
    }
    q
}


/// Dense SVD with singular values sorted in nonincreasing order.
pub fn sorted_svd(a: &CMatrix) -> (CMatrix, Vec<f64>, CMatrix) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    // v_t rows are vᴴ; return V with columns.
    let v = CMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)].conj());
    (u, sigma, v)
}

/// Real-valued SVD, sorted, returning (U, s, V).
pub(crate) fn sorted_real_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    (u, sigma, v)
}

/// Singular values of a dense complex matrix, nonincreasing.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(m: usize, n: usize, seed: f64) -> CMatrix {
        CMatrix::from_fn(m, n, |i, j| {
            Complex64::new((seed + i as f64 * 0.7 + j as f64 * 1.3).sin(), (seed * 2.0 - i as f64 * 0.3 + j as f64).cos())
        })
    }

    #[test]
    fn gemm_matches_nalgebra() {
        let a = sample(17, 5, 0.1);
        let b = sample(5, 3, 0.9);
        assert!((matmul(&a, &b) - &a * &b).norm() < 1e-12);
        let c = sample(17, 4, 0.4);
        assert!((adjoint_mul(&a, &c) - a.adjoint() * &c).norm() < 1e-12);
    }

    #[test]
    fn fast_orthonormalization() {
        let a = sample(40, 6, 0.2);
        let q = orthonormalize_fast(&a);
        assert!((q.adjoint() * &q - CMatrix::identity(6, 6)).norm() < 1e-12);
        // Same span: projecting a onto span(q) leaves nothing.
        assert!((&a - &q * (q.adjoint() * &a)).norm() < 1e-10 * a.norm());
        let mut deficient = a.clone();
        let c0 = deficient.column(0).clone_owned();
        deficient.set_column(1, &c0);
        let q = orthonormalize_fast(&deficient);
        assert!((q.adjoint() * &q - CMatrix::identity(6, 6)).norm() < 1e-10);
    }

    #[test]
    fn empty_shapes() {
        let a = CMatrix::zeros(3, 0);
        let b = CMatrix::zeros(0, 2);
        assert_eq!(matmul(&a, &b), CMatrix::zeros(3, 2));
    }

    #[test]
    fn sorted_svd_reconstructs() {
        let a = sample(6, 4, 0.3);
        let (u, s, v) = sorted_svd(&a);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let sd = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(s.len(), s.iter().map(|&x| Complex64::new(x, 0.0))));
        assert!((&u * sd * v.adjoint() - a).norm() < 1e-12);
    }
}
