//! Orthonormal basis systems on a one-dimensional grid.
//!
//! Every system is stored as its evaluation matrix (rows = basis functions,
//! columns = grid points) together with the quadrature weights that define the
//! discrete L2 inner product. Orthonormality always refers to that inner
//! product: `values · diag(w) · valuesᵀ = I`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{fix_sign, identity_residual, sym_eigen_desc, weighted_gram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BasisFamily {
    Bspline,
    Fourier,
    Fpc,
}

/// An orthonormal basis evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem {
    pub family: BasisFamily,
    pub domain: (f64, f64),
    pub grid: Vec<f64>,
    /// `n_basis × grid.len()`.
    pub values: DMatrix<f64>,
    pub quad_weights: Vec<f64>,
}

impl BasisSystem {
    pub fn n_basis(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    /// `‖values·diag(w)·valuesᵀ − I‖∞`.
    pub fn orthonormality_residual(&self) -> f64 {
        identity_residual(&weighted_gram(&self.values, &self.quad_weights))
    }

    /// Basis coefficients of the rows of `curves` (n × grid): `curves · diag(w) · valuesᵀ`.
    pub fn coefficients(&self, curves: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("curve grid length", self.n_grid(), curves.ncols())?;
        let mut weighted = curves.clone();
        for (j, w) in self.quad_weights.iter().enumerate() {
            weighted.column_mut(j).scale_mut(*w);
        }
        Ok(weighted * self.values.transpose())
    }

    /// Evaluate coefficient rows (n × n_basis) on the grid.
    pub fn evaluate(&self, coef: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("coefficient columns", self.n_basis(), coef.ncols())?;
        Ok(coef * &self.values)
    }
}

fn validate_grid(grid: &[f64], domain: (f64, f64)) -> Result<()> {
    if !(domain.0.is_finite() && domain.1.is_finite() && domain.1 > domain.0) {
        return Err(Error::InvalidArgument(format!(
            "domain [{}, {}] is not a proper interval",
            domain.0, domain.1
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }
    let tol = 1e-12 * (domain.1 - domain.0);
    if grid[0] < domain.0 - tol || grid[grid.len() - 1] > domain.1 + tol {
        return Err(Error::InvalidArgument("grid extends outside the domain".into()));
    }
    Ok(())
}

/// Trapezoid weights on `grid`, with the end segments between the domain
/// boundary and the first/last grid point integrated by a constant. The
/// weights always sum to the domain length.
pub fn quadrature_weights(grid: &[f64], domain: (f64, f64)) -> Result<Vec<f64>> {
    validate_grid(grid, domain)?;
    let n = grid.len();
    if n == 1 {
        return Ok(vec![domain.1 - domain.0]);
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w[0] += (grid[0] - domain.0).max(0.0);
    w[n - 1] += (domain.1 - grid[n - 1]).max(0.0);
    Ok(w)
}

/// Orthonormalize the rows of `raw` under the weighted inner product by a
/// weighted Householder QR. Output row `i` has a positive inner product with
/// raw row `i`.
pub fn orthonormalize(raw: &DMatrix<f64>, quad_weights: &[f64]) -> Result<DMatrix<f64>> {
    let k = raw.nrows();
    let m = raw.ncols();
    ensure_dim("quadrature weights", m, quad_weights.len())?;
    if quad_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("quadrature weights must be positive".into()));
    }
    if k > m {
        return Err(Error::RankDeficient {
            rank: m,
            required: k,
        });
    }
    let sqrt_w: Vec<f64> = quad_weights.iter().map(|w| w.sqrt()).collect();
    // B = diag(√w) rawᵀ  (m × k)
    let mut b = raw.transpose();
    for (i, s) in sqrt_w.iter().enumerate() {
        b.row_mut(i).scale_mut(*s);
    }
    let qr = b.qr();
    let r = qr.r();
    let q = qr.q();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-10 * max_diag.max(f64::MIN_POSITIVE);
    let rank = (0..k).filter(|&i| r[(i, i)].abs() > tol).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, required: k });
    }
    let mut out = DMatrix::zeros(k, m);
    for i in 0..k {
        let sign = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            out[(i, j)] = sign * q[(j, i)] / sqrt_w[j];
        }
    }
    Ok(out)
}

/// Clamped knot vector: `order`-fold boundary knots and `n_basis − order`
/// equally spaced interior knots.
fn clamped_knots(domain: (f64, f64), n_basis: usize, order: usize) -> Vec<f64> {
    let n_inner = n_basis - order;
    let mut knots = Vec::with_capacity(n_basis + order);
    knots.extend(core::iter::repeat_n(domain.0, order));
    let h = (domain.1 - domain.0) / (n_inner + 1) as f64;
    for i in 1..=n_inner {
        knots.push(domain.0 + h * i as f64);
    }
    knots.extend(core::iter::repeat_n(domain.1, order));
    knots
}

/// Raw (non-orthonormal) B-spline evaluation matrix, `n_basis × grid.len()`.
pub fn bspline_raw(domain: (f64, f64), n_basis: usize, order: usize, grid: &[f64]) -> DMatrix<f64> {
    let degree = order - 1;
    let knots = clamped_knots(domain, n_basis, order);
    let mut out = DMatrix::zeros(n_basis, grid.len());
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    let mut nvals = vec![0.0; order];
    for (j, &x) in grid.iter().enumerate() {
        let x = x.clamp(domain.0, domain.1);
        // knot span: knots[span] <= x < knots[span + 1], last span closed
        let mut span = degree;
        while span < n_basis - 1 && x >= knots[span + 1] {
            span += 1;
        }
        nvals[0] = 1.0;
        for d in 1..=degree {
            left[d] = x - knots[span + 1 - d];
            right[d] = knots[span + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let temp = nvals[r] / (right[r + 1] + left[d - r]);
                nvals[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            nvals[d] = saved;
        }
        for r in 0..=degree {
            out[(span - degree + r, j)] = nvals[r];
        }
    }
    out
}

/// Orthonormalized B-splines of the given order (4 = cubic) with equally
/// spaced interior knots.
pub fn make_bspline(
    domain: (f64, f64),
    n_basis: usize,
    order: usize,
    grid: &[f64],
) -> Result<BasisSystem> {
    if order < 2 || n_basis < order {
        return Err(Error::InvalidArgument(format!(
            "B-spline needs n_basis >= order >= 2 (got n_basis {n_basis}, order {order})"
        )));
    }
    let w = quadrature_weights(grid, domain)?;
    if n_basis > grid.len() {
        return Err(Error::RankDeficient {
            rank: grid.len(),
            required: n_basis,
        });
    }
    let raw = bspline_raw(domain, n_basis, order, grid);
    let values = orthonormalize(&raw, &w)?;
    Ok(BasisSystem {
        family: BasisFamily::Bspline,
        domain,
        grid: grid.to_vec(),
        values,
        quad_weights: w,
    })
}

/// Raw Fourier rows: constant, then `sin, cos` pairs of increasing frequency,
/// each with its continuous L2 normalizing constant.
pub fn fourier_raw(domain: (f64, f64), n_basis: usize, grid: &[f64]) -> DMatrix<f64> {
    let len = domain.1 - domain.0;
    let c0 = 1.0 / len.sqrt();
    let c = (2.0 / len).sqrt();
    DMatrix::from_fn(n_basis, grid.len(), |i, j| {
        if i == 0 {
            return c0;
        }
        let freq = i.div_ceil(2) as f64;
        let arg = 2.0 * PI * freq * (grid[j] - domain.0) / len;
        if i % 2 == 1 {
            c * arg.sin()
        } else {
            c * arg.cos()
        }
    })
}

pub fn make_fourier(domain: (f64, f64), n_basis: usize, grid: &[f64]) -> Result<BasisSystem> {
    if n_basis == 0 || n_basis.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "Fourier basis needs an odd n_basis (constant + sin/cos pairs); use {}",
            n_basis + 1
        )));
    }
    let w = quadrature_weights(grid, domain)?;
    if n_basis > grid.len() {
        return Err(Error::RankDeficient {
            rank: grid.len(),
            required: n_basis,
        });
    }
    let values = orthonormalize(&fourier_raw(domain, n_basis, grid), &w)?;
    Ok(BasisSystem {
        family: BasisFamily::Fourier,
        domain,
        grid: grid.to_vec(),
        values,
        quad_weights: w,
    })
}

/// Eigen-decomposition of the weighted empirical covariance of centered
/// curves. Returns eigenvalues (non-increasing) and the corresponding
/// L2-orthonormal eigenfunctions as rows.
fn fpc_decompose(curves: &DMatrix<f64>, w: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = curves.nrows();
    let m = curves.ncols();
    let mean = curves.row_mean();
    let mut centered = curves.clone();
    for i in 0..n {
        let mut row = centered.row_mut(i);
        row -= &mean;
    }
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    for (j, s) in sqrt_w.iter().enumerate() {
        centered.column_mut(j).scale_mut(*s);
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    let (vals, vecs) = sym_eigen_desc(&cov);
    let mut funcs = DMatrix::zeros(m, m);
    for c in 0..m {
        let mut row: Vec<f64> = (0..m).map(|j| vecs[(j, c)] / sqrt_w[j]).collect();
        fix_sign(&mut row);
        for j in 0..m {
            funcs[(c, j)] = row[j];
        }
    }
    (vals.iter().copied().collect(), funcs)
}

fn numerical_rank(eigenvalues: &[f64]) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    eigenvalues.iter().filter(|&&v| v > 1e-10 * top).count()
}

/// Functional principal components of `curves` (n × grid), domain = grid hull.
pub fn make_fpc(curves: &DMatrix<f64>, n_components: usize, grid: &[f64]) -> Result<BasisSystem> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("FPC needs at least two grid points".into()));
    }
    let domain = (grid[0], grid[grid.len() - 1]);
    let w = quadrature_weights(grid, domain)?;
    ensure_dim("curve grid length", grid.len(), curves.ncols())?;
    if curves.nrows() < n_components {
        return Err(Error::InvalidArgument(format!(
            "FPC needs at least n_components curves ({} < {n_components})",
            curves.nrows()
        )));
    }
    let (vals, funcs) = fpc_decompose(curves, &w);
    let rank = numerical_rank(&vals);
    if n_components > rank || n_components == 0 {
        return Err(Error::RankDeficient {
            rank,
            required: n_components,
        });
    }
    Ok(BasisSystem {
        family: BasisFamily::Fpc,
        domain,
        grid: grid.to_vec(),
        values: funcs.rows(0, n_components).into_owned(),
        quad_weights: w,
    })
}

/// Smallest number of components whose eigenvalues explain at least
/// `fraction` of the total variance.
pub fn fpc_components_for_variance(curves: &DMatrix<f64>, grid: &[f64], fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument("variance fraction must be in (0, 1]".into()));
    }
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("FPC needs at least two grid points".into()));
    }
    let w = quadrature_weights(grid, (grid[0], grid[grid.len() - 1]))?;
    ensure_dim("curve grid length", grid.len(), curves.ncols())?;
    let (vals, _) = fpc_decompose(curves, &w);
    let total: f64 = vals.iter().filter(|v| **v > 0.0).sum();
    if total <= 0.0 {
        return Err(Error::ConstantInput);
    }
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total * (1.0 - 1e-12) {
            return Ok(i + 1);
        }
    }
    Ok(numerical_rank(&vals))
}

/// A bivariate surface on an `r × t` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSurface {
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `r_grid.len() × t_grid.len()`.
    pub values: DMatrix<f64>,
}

impl TensorSurface {
    pub fn new(r_grid: Vec<f64>, t_grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        ensure_dim("surface rows", r_grid.len(), values.nrows())?;
        ensure_dim("surface columns", t_grid.len(), values.ncols())?;
        Ok(Self {
            r_grid,
            t_grid,
            values,
        })
    }

    pub fn zeros(r_grid: Vec<f64>, t_grid: Vec<f64>) -> Self {
        let values = DMatrix::zeros(r_grid.len(), t_grid.len());
        Self {
            r_grid,
            t_grid,
            values,
        }
    }
}

/// `Ψ(r,t) = Σ_g Σ_k coeff[g,k] ξ_g(r) φ_k(t)` on the two grids.
pub fn tensor_surface(xi: &BasisSystem, phi: &BasisSystem, coeff: &DMatrix<f64>) -> Result<TensorSurface> {
    ensure_dim("coefficient rows (g_n)", xi.n_basis(), coeff.nrows())?;
    ensure_dim("coefficient columns (k_n)", phi.n_basis(), coeff.ncols())?;
    let values = xi.values.transpose() * coeff * &phi.values;
    TensorSurface::new(xi.grid.clone(), phi.grid.clone(), values)
}

/// Inverse of [`tensor_surface`] on the tensor span: weighted projection of
/// a surface sampled on the two grids.
pub fn project_surface(xi: &BasisSystem, phi: &BasisSystem, surface: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_dim("surface rows", xi.n_grid(), surface.nrows())?;
    ensure_dim("surface columns", phi.n_grid(), surface.ncols())?;
    let left = xi.coefficients(&surface.transpose())?; // n_t × g_n
    phi.coefficients(&left.transpose())
}
