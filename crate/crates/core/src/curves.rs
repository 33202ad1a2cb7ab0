//! Functional datasets and the data-space ⇄ basis-space transforms.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::basis::{make_bspline, make_fourier, make_fpc, BasisFamily, BasisSystem};
use crate::error::{ensure_dim, Error, Result};
use crate::spatial::SpatialStructure;

/// Response and covariate curves observed at `n` sites on shared grids.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    /// `n × t_grid.len()`.
    pub response: DMatrix<f64>,
    /// `n × r_grid.len()`.
    pub covariate: DMatrix<f64>,
    pub t_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub spatial: Option<SpatialStructure>,
    pub ids: Vec<String>,
}

fn check_grid(grid: &[f64], name: &'static str) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch(name));
    }
    Ok(())
}

impl FunctionalDataset {
    pub fn new(
        response: DMatrix<f64>,
        covariate: DMatrix<f64>,
        t_grid: Vec<f64>,
        r_grid: Vec<f64>,
        spatial: Option<SpatialStructure>,
        ids: Vec<String>,
    ) -> Result<Self> {
        let n = response.nrows();
        ensure_dim("covariate rows", n, covariate.nrows())?;
        ensure_dim("ids", n, ids.len())?;
        ensure_dim("response grid", t_grid.len(), response.ncols())?;
        ensure_dim("covariate grid", r_grid.len(), covariate.ncols())?;
        check_grid(&t_grid, "response grid must be strictly increasing")?;
        check_grid(&r_grid, "covariate grid must be strictly increasing")?;
        if response.iter().chain(covariate.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "curves contain missing or non-finite values".into(),
            ));
        }
        if let Some(s) = &spatial {
            ensure_dim("spatial sites", n, s.n_sites())?;
        }
        Ok(Self {
            response,
            covariate,
            t_grid,
            r_grid,
            spatial,
            ids,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.response.nrows()
    }

    /// Subset of sites, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
        let spatial = match &self.spatial {
            Some(s) => Some(s.select(rows)?),
            None => None,
        };
        Self::new(
            pick(&self.response),
            pick(&self.covariate),
            self.t_grid.clone(),
            self.r_grid.clone(),
            spatial,
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
        )
    }
}

/// Basis-space representation `Ỹ` (n × k_n) and `X̃` (n × g_n).
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub y_coef: DMatrix<f64>,
    pub x_coef: DMatrix<f64>,
    pub phi: BasisSystem,
    pub xi: BasisSystem,
}

impl CoefficientSet {
    pub fn new(y_coef: DMatrix<f64>, x_coef: DMatrix<f64>, phi: BasisSystem, xi: BasisSystem) -> Result<Self> {
        ensure_dim("coefficient rows", y_coef.nrows(), x_coef.nrows())?;
        ensure_dim("response coefficients (k_n)", phi.n_basis(), y_coef.ncols())?;
        ensure_dim("covariate coefficients (g_n)", xi.n_basis(), x_coef.ncols())?;
        Ok(Self {
            y_coef,
            x_coef,
            phi,
            xi,
        })
    }

    pub fn n(&self) -> usize {
        self.y_coef.nrows()
    }
    pub fn k_n(&self) -> usize {
        self.y_coef.ncols()
    }
    pub fn g_n(&self) -> usize {
        self.x_coef.ncols()
    }
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Weighted inner products of every curve with every basis function.
pub fn to_basis(dataset: &FunctionalDataset, phi: &BasisSystem, xi: &BasisSystem) -> Result<CoefficientSet> {
    if !same_grid(&dataset.t_grid, &phi.grid) {
        return Err(Error::GridMismatch("response grid differs from the response basis grid"));
    }
    if !same_grid(&dataset.r_grid, &xi.grid) {
        return Err(Error::GridMismatch("covariate grid differs from the covariate basis grid"));
    }
    let y_coef = phi.coefficients(&dataset.response)?;
    let x_coef = xi.coefficients(&dataset.covariate)?;
    CoefficientSet::new(y_coef, x_coef, phi.clone(), xi.clone())
}

/// `coef · Φ`: curves on the basis grid.
pub fn from_basis(coef: &DMatrix<f64>, phi: &BasisSystem) -> Result<DMatrix<f64>> {
    phi.evaluate(coef)
}

/// Build a basis of the requested family and size; FPC systems are
/// estimated from `curves`.
pub fn build_basis(
    family: BasisFamily,
    domain: (f64, f64),
    n_basis: usize,
    grid: &[f64],
    curves: &DMatrix<f64>,
) -> Result<BasisSystem> {
    match family {
        BasisFamily::Bspline => make_bspline(domain, n_basis, 4, grid),
        BasisFamily::Fourier => make_fourier(domain, n_basis, grid),
        BasisFamily::Fpc => make_fpc(curves, n_basis, grid),
    }
}

/// GCV score of a projection smoother with trace `k`:
/// `Σ_i RSS_i(k) / (n_t (1 − k/n_t)²)`.
pub fn gcv_score(curves: &DMatrix<f64>, basis: &BasisSystem) -> Result<f64> {
    let n_t = basis.n_grid();
    let k = basis.n_basis();
    if k >= n_t {
        return Err(Error::InvalidArgument(format!(
            "GCV needs n_basis < grid length ({k} >= {n_t})"
        )));
    }
    let fitted = basis.evaluate(&basis.coefficients(curves)?)?;
    let rss: f64 = (curves - fitted).iter().map(|e| e * e).sum();
    let shrink = 1.0 - k as f64 / n_t as f64;
    Ok(rss / (n_t as f64 * shrink * shrink))
}

/// Candidate with the smallest GCV score; ties go to the smaller basis.
pub fn gcv_select(
    curves: &DMatrix<f64>,
    grid: &[f64],
    domain: (f64, f64),
    family: BasisFamily,
    candidates: &[usize],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty GCV candidate list".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(usize, f64)> = None;
    for &k in &sorted {
        if k >= grid.len() {
            return Err(Error::InvalidArgument(format!(
                "GCV candidate {k} is not below the grid length {}",
                grid.len()
            )));
        }
        let basis = build_basis(family, domain, k, grid, curves)?;
        let score = gcv_score(curves, &basis)?;
        let better = match best {
            None => true,
            Some((_, s)) => score < s * (1.0 - 1e-12) - 1e-300,
        };
        if better {
            best = Some((k, score));
        }
    }
    Ok(best.map(|(k, _)| k).unwrap_or(sorted[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Vec<f64> {
        (1..=60).map(|i| i as f64).collect()
    }

    #[test]
    fn basis_rows_transform_to_unit_vectors() {
        let g = grid();
        let phi = make_bspline((0.0, 61.0), 8, 4, &g).unwrap();
        let c = phi.coefficients(&phi.values).unwrap();
        assert!(crate::linalg::identity_residual(&c) < 1e-8);
    }

    #[test]
    fn round_trip_coefficients() {
        let g = grid();
        let phi = make_bspline((0.0, 61.0), 10, 4, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = DMatrix::from_fn(7, 10, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let back = phi.coefficients(&from_basis(&c, &phi).unwrap()).unwrap();
        assert!((back - c).amax() < 1e-8);
        let zero = from_basis(&DMatrix::zeros(3, 10), &phi).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dataset_rejects_missing_values() {
        let g = grid();
        let mut y = DMatrix::zeros(2, 60);
        y[(1, 3)] = f64::NAN;
        let x = DMatrix::zeros(2, 60);
        let ids = alloc::vec!["a".into(), "b".into()];
        assert!(FunctionalDataset::new(y, x, g.clone(), g, None, ids).is_err());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let g = grid();
        let ds = FunctionalDataset::new(
            DMatrix::zeros(2, 60),
            DMatrix::zeros(2, 60),
            g.clone(),
            g.clone(),
            None,
            alloc::vec!["a".into(), "b".into()],
        )
        .unwrap();
        let other: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let phi = make_bspline((0.0, 61.0), 5, 4, &other).unwrap();
        let xi = make_bspline((0.0, 61.0), 5, 4, &g).unwrap();
        assert!(matches!(to_basis(&ds, &phi, &xi), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn gcv_exact_representation() {
        let g = grid();
        let k0 = 9;
        let phi = make_bspline((0.0, 61.0), k0, 4, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = DMatrix::from_fn(12, k0, |_, _| rng.random::<f64>() - 0.5);
        let curves = from_basis(&c, &phi).unwrap();
        let chosen = gcv_select(&curves, &g, (0.0, 61.0), BasisFamily::Bspline, &[7, 8, 9, 10, 11]).unwrap();
        assert!(chosen <= k0);
        assert!(gcv_score(&curves, &phi).unwrap() < 1e-20);
        assert!(gcv_select(&curves, &g, (0.0, 61.0), BasisFamily::Bspline, &[]).is_err());
    }
}
