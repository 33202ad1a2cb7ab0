//! Universal kriging of whole curves with a trace-variogram.
//!
//! The variogram is estimated from the residual curves of an ordinary least
//! squares fit of the drift, fitted parametrically, and plugged into the
//! variogram form of the kriging system
//!
//! ```text
//! [ Γ   X ] [λ]   [γ₀]
//! [ Xᵀ  0 ] [μ] = [x₀]
//! ```
//!
//! with `Γᵢⱼ = γ(‖sᵢ − sⱼ‖)` and `γ(0) = 0`. The prediction is `Σᵢ λᵢ Yᵢ(t)`.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{cross_distances, pairwise_distances};
use crate::spatial::{default_variogram_edges, fit_variogram, trace_variogram, EmpiricalVariogram, FittedVariogram, VariogramModel};

#[derive(Debug, Clone, PartialEq)]
pub struct UkConfig {
    pub model: VariogramModel,
    pub n_bins: usize,
    /// Keep only the first `m` drift covariates (the intercept is always kept).
    pub drift_terms: Option<usize>,
    /// Use this variogram instead of estimating one.
    pub variogram: Option<FittedVariogram>,
}

impl Default for UkConfig {
    fn default() -> Self {
        Self {
            model: VariogramModel::Gaussian,
            n_bins: 15,
            drift_terms: None,
            variogram: None,
        }
    }
}

/// Solved kriging system for a batch of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct UkSystem {
    pub variogram: FittedVariogram,
    pub empirical: Option<EmpiricalVariogram>,
    /// `n × q` kriging weights.
    pub weights: DMatrix<f64>,
    /// `L × q` Lagrange multipliers.
    pub multipliers: DMatrix<f64>,
    /// `n × L` drift design, intercept first.
    pub drift: DMatrix<f64>,
    /// `q × L` drift at the targets.
    pub target_drift: DMatrix<f64>,
}

impl UkSystem {
    /// Largest violation of `Xᵀλ = x₀` over all targets.
    pub fn unbiasedness_residual(&self) -> f64 {
        (self.drift.transpose() * &self.weights - self.target_drift.transpose()).amax()
    }
}

/// Intercept column followed by the first `terms` columns of `covariates`.
pub fn drift_design(covariates: Option<&DMatrix<f64>>, rows: usize, terms: Option<usize>) -> DMatrix<f64> {
    let extra = covariates.map_or(0, |c| terms.map_or(c.ncols(), |m| m.min(c.ncols())));
    DMatrix::from_fn(rows, 1 + extra, |i, j| {
        if j == 0 {
            1.0
        } else {
            covariates.expect("extra > 0")[(i, j - 1)]
        }
    })
}

/// OLS residual curves of `curves` (n × n_t) on the drift design.
pub fn drift_residuals(curves: &DMatrix<f64>, drift: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = drift.clone().qr();
    let r = qr.r();
    let rank = (0..r.nrows().min(r.ncols())).filter(|&i| r[(i, i)].abs() > 1e-10 * r.amax().max(1e-300)).count();
    if rank < drift.ncols() {
        return Err(Error::RankDeficient {
            rank,
            required: drift.ncols(),
        });
    }
    let qty = qr.q().transpose() * curves;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularSystem("drift least squares"))?;
    Ok(curves - drift * beta)
}

/// Solve the kriging system for all targets at once.
pub fn uk_system(
    coords: &DMatrix<f64>,
    drift: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    target_drift: &DMatrix<f64>,
    variogram: FittedVariogram,
) -> Result<UkSystem> {
    let n = coords.nrows();
    let l = drift.ncols();
    let q = targets.nrows();
    ensure_dim("drift rows", n, drift.nrows())?;
    ensure_dim("target drift rows", q, target_drift.nrows())?;
    ensure_dim("target drift columns", l, target_drift.ncols())?;
    let d = pairwise_distances(coords);
    let d0 = cross_distances(coords, targets);
    let size = n + l;
    let mut a = DMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = variogram.gamma(d[(i, j)]);
        }
        for k in 0..l {
            a[(i, n + k)] = drift[(i, k)];
            a[(n + k, i)] = drift[(i, k)];
        }
    }
    let mut rhs = DMatrix::zeros(size, q);
    for s in 0..q {
        for i in 0..n {
            rhs[(i, s)] = variogram.gamma(d0[(i, s)]);
        }
        for k in 0..l {
            rhs[(n + k, s)] = target_drift[(s, k)];
        }
    }
    let lu = a.full_piv_lu();
    let sol = lu
        .solve(&rhs)
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularSystem("kriging system; add a nugget, jitter or reduce the drift terms"))?;
    let weights = sol.rows(0, n).into_owned();
    let multipliers = sol.rows(n, l).into_owned();
    let sys = UkSystem {
        variogram,
        empirical: None,
        weights,
        multipliers,
        drift: drift.clone(),
        target_drift: target_drift.clone(),
    };
    if sys.unbiasedness_residual() > 1e-6 * (1.0 + target_drift.amax()) {
        return Err(Error::SingularSystem("kriging system is ill-conditioned; add a nugget or reduce the drift terms"));
    }
    Ok(sys)
}

/// Universal kriging predictions `q × n_t` of `curves` (n × n_t) at `targets`.
///
/// `weights` are the quadrature weights of the curve grid; `covariates` and
/// `target_covariates` are the scalar drift covariates (intercept added here,
/// `None` gives ordinary kriging).
#[allow(clippy::too_many_arguments)]
pub fn uk_predict(
    curves: &DMatrix<f64>,
    weights: &[f64],
    covariates: Option<&DMatrix<f64>>,
    coords: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    target_covariates: Option<&DMatrix<f64>>,
    config: &UkConfig,
) -> Result<(DMatrix<f64>, UkSystem)> {
    let n = curves.nrows();
    ensure_dim("coordinate rows", n, coords.nrows())?;
    ensure_dim("coordinate columns", 2, coords.ncols())?;
    ensure_dim("target columns", 2, targets.ncols())?;
    if covariates.is_some() != target_covariates.is_some() {
        return Err(Error::InvalidArgument("drift covariates must be given for both sites and targets".into()));
    }
    if let (Some(c), Some(tc)) = (covariates, target_covariates) {
        ensure_dim("covariate rows", n, c.nrows())?;
        ensure_dim("target covariate rows", targets.nrows(), tc.nrows())?;
        ensure_dim("target covariate columns", c.ncols(), tc.ncols())?;
    }
    let drift = drift_design(covariates, n, config.drift_terms);
    let target_drift = drift_design(target_covariates, targets.nrows(), config.drift_terms);
    let (variogram, empirical) = match config.variogram {
        Some(v) => (v, None),
        None => {
            let resid = drift_residuals(curves, &drift)?;
            let edges = default_variogram_edges(coords, config.n_bins);
            let emp = trace_variogram(&resid, weights, coords, &edges)?;
            (fit_variogram(&emp, config.model)?, Some(emp))
        }
    };
    let mut sys = uk_system(coords, &drift, targets, &target_drift, variogram)?;
    sys.empirical = empirical;
    let pred = sys.weights.transpose() * curves;
    Ok((pred, sys))
}

/// Fitted variogram evaluated at `lags`.
pub fn fitted_variogram_curve(v: &FittedVariogram, lags: &[f64]) -> Vec<f64> {
    lags.iter().map(|h| v.gamma(*h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> (DMatrix<f64>, FittedVariogram) {
        let coords = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0]);
        let v = FittedVariogram {
            model: VariogramModel::Exponential,
            nugget: 0.0,
            sill: 1.0,
            range: 2.0,
        };
        (coords, v)
    }

    #[test]
    fn exact_interpolation_at_a_site() {
        let (coords, v) = line();
        let curves = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let cfg = UkConfig {
            variogram: Some(v),
            ..UkConfig::default()
        };
        let target = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (pred, sys) = uk_predict(&curves, &[1.0, 1.0], None, &coords, &target, None, &cfg).unwrap();
        assert!((pred - curves.rows(1, 1)).amax() < 1e-10);
        assert!((sys.weights[(1, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_shift_invariance() {
        let (coords, v) = line();
        let curves = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let cfg = UkConfig {
            variogram: Some(v),
            ..UkConfig::default()
        };
        let target = DMatrix::from_row_slice(1, 2, &[2.0, 0.5]);
        let (a, _) = uk_predict(&curves, &[1.0, 1.0], None, &coords, &target, None, &cfg).unwrap();
        let (b, _) = uk_predict(&curves.add_scalar(5.0), &[1.0, 1.0], None, &coords, &target, None, &cfg).unwrap();
        assert!((b - a).add_scalar(-5.0).amax() < 1e-10);
    }

    #[test]
    fn duplicate_sites_are_singular() {
        let coords = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let (_, v) = line();
        let target = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let d = drift_design(None, 2, None);
        let td = drift_design(None, 1, None);
        assert!(matches!(uk_system(&coords, &d, &target, &td, v), Err(Error::SingularSystem(_))));
    }
}
