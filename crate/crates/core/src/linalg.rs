//! Dense linear-algebra helpers shared by the basis, projection and sampler
//! modules.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// non-increasing order and each eigenvector's largest-magnitude entry made
/// positive (first index wins on exact ties).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        // strict comparison with a relative slack keeps the first index on near ties
        if x.abs() > best_abs * (1.0 + 1e-12) {
            best_abs = x.abs();
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Tries the matrix as given, then adds `1e-10, 1e-9, ..., 1e-4` times the
/// mean diagonal.
pub fn cholesky_jitter(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut jitter = 1e-10 * scale;
    while jitter <= 1e-4 * scale {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.cholesky() {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(context))
}

/// Draw `x ~ N(A⁻¹ b, A⁻¹)` given the Cholesky factor of the precision `A`.
pub fn sample_gaussian_canonical<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    b: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let l = chol.l_dirty();
    let n = b.len();
    // w = L⁻¹ b + z ; x = L⁻ᵀ w
    let mut w = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a nonzero diagonal");
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        w[i] += z;
    }
    l.tr_solve_lower_triangular(&w)
        .expect("Cholesky factor has a nonzero diagonal")
}

/// Euclidean distance matrix of the rows of an n×2 coordinate matrix.
pub fn pairwise_distances(coords: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coords.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[(i, 0)] - coords[(j, 0)];
            let dy = coords[(i, 1)] - coords[(j, 1)];
            let v = (dx * dx + dy * dy).sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Cross distances between the rows of `a` (q×2) and `b` (n×2): q×n.
pub fn cross_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let dx = a[(i, 0)] - b[(j, 0)];
        let dy = a[(i, 1)] - b[(j, 1)];
        (dx * dx + dy * dy).sqrt()
    })
}

/// `rows · diag(w) · rowsᵀ`.
pub fn weighted_gram(rows: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = rows.clone();
    for (j, wj) in w.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*wj);
    }
    &scaled * rows.transpose()
}

/// Largest absolute entry of `m - I`.
pub fn identity_residual(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_sorted_and_signed() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        for c in 0..3 {
            let col = vecs.column(c);
            let top = col.amax();
            let first = col.iter().position(|v| v.abs() >= top * (1.0 - 1e-10)).unwrap();
            assert!(col[first] > 0.0);
        }
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_jitter(&m, "test").is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jitter(&bad, "test").is_err());
    }

    #[test]
    fn canonical_gaussian_mean() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(alloc::vec![1.0, 2.0]);
        let chol = a.clone().cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += sample_gaussian_canonical(&chol, &b, &mut rng);
        }
        acc /= n as f64;
        let mean = a.try_inverse().unwrap() * b;
        assert!((acc - mean).amax() < 0.01);
    }
}
