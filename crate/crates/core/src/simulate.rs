//! Synthetic spatial functional data with a known regression surface.
//!
//! Sites are uniform on the unit square. Covariate coefficients are Normal
//! around the site's x-coordinate, the spatial effect is a Matérn Gaussian
//! process per response coefficient, and the true coefficients `ψ̃` are the
//! projection of a closed-form surface onto the tensor basis.

use alloc::format;
use alloc::vec::Vec;

use core::f64::consts::PI;

use nalgebra::DMatrix;
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{make_bspline, project_surface, tensor_surface, BasisSystem, TensorSurface};
use crate::curves::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::cholesky_jitter;
use crate::spatial::{matern_cov, SpatialStructure};

/// Curve domain `[0, 225]` with integer grid points `1..=225`.
pub const DOMAIN: (f64, f64) = (0.0, 225.0);
pub const GRID_LEN: usize = 225;

/// Ridge along the diagonal: `(7/500)(0.006π)^{−1/2} exp(−((t−r)/225)²/0.006)`.
pub fn true_psi_gaussian(r: f64, t: f64) -> f64 {
    let u = (t - r) / 225.0;
    7.0 / 500.0 / (0.006 * PI).sqrt() * (-u * u / 0.006).exp()
}

/// `x − c` above `c`, `x + c` below `−c`, zero in between.
pub fn soft_threshold(x: f64, c: f64) -> f64 {
    if x > c {
        x - c
    } else if x < -c {
        x + c
    } else {
        0.0
    }
}

/// Unthresholded oscillating surface, in coordinates rescaled to `[0, 1]`.
pub fn complex_psi_raw(r: f64, t: f64) -> f64 {
    let (r, t) = (r / 225.0, t / 225.0);
    0.1 * ((10.0 * r).sin() * (10.0 * t).cos() + (-5.0 * (r * r + t * t)).exp() + 0.5 * (5.0 * (r + t)).sin())
}

/// Soft-thresholded oscillating surface with dead zone `±0.03`.
pub fn true_psi_complex(r: f64, t: f64) -> f64 {
    soft_threshold(complex_psi_raw(r, t), 0.03)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TruePsi {
    Gaussian,
    Complex,
}

impl TruePsi {
    pub fn eval(self, r: f64, t: f64) -> f64 {
        match self {
            Self::Gaussian => true_psi_gaussian(r, t),
            Self::Complex => true_psi_complex(r, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimulationConfig {
    pub n: usize,
    pub seed: u64,
    pub n_basis: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub smoothness: f64,
    pub tau2: f64,
    pub psi: TruePsi,
    pub train_frac: f64,
    /// Include the spatial random effect.
    pub spatial_effect: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 1,
            n_basis: 15,
            sigma2: 0.5,
            rho: 0.2,
            smoothness: 0.5,
            tau2: 0.01,
            psi: TruePsi::Gaussian,
            train_frac: 0.7,
            spatial_effect: true,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("simulation needs n >= 2".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return Err(Error::InvalidArgument("train_frac must lie in (0, 1]".into()));
        }
        if !(self.tau2 >= 0.0 && self.sigma2 >= 0.0 && self.rho > 0.0 && self.smoothness > 0.0) {
            return Err(Error::InvalidArgument("invalid covariance settings".into()));
        }
        if self.n_basis < 4 || self.n_basis >= GRID_LEN {
            return Err(Error::InvalidArgument(format!(
                "n_basis must lie in [4, {GRID_LEN})"
            )));
        }
        Ok(())
    }
}

/// Generating quantities kept for scoring.
#[derive(Debug, Clone)]
pub struct SimulationTruth {
    /// `g × k` true coefficients.
    pub psi_coef: DMatrix<f64>,
    /// Closed-form surface on the grid.
    pub psi_surface: TensorSurface,
    /// `n × k` spatial effect.
    pub w_coef: DMatrix<f64>,
    pub x_coef: DMatrix<f64>,
    pub y_coef: DMatrix<f64>,
    pub basis: BasisSystem,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub full: FunctionalDataset,
    pub train: FunctionalDataset,
    pub test: FunctionalDataset,
    pub truth: SimulationTruth,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn grid() -> Vec<f64> {
    (1..=GRID_LEN).map(|i| i as f64).collect()
}

/// True surface evaluated on the `grid × grid` lattice.
pub fn true_surface(psi: TruePsi) -> TensorSurface {
    let g = grid();
    let values = DMatrix::from_fn(GRID_LEN, GRID_LEN, |i, j| psi.eval(g[i], g[j]));
    TensorSurface {
        r_grid: g.clone(),
        t_grid: g,
        values,
    }
}

pub fn generate(config: &SimulationConfig) -> Result<SimulatedData> {
    config.validate()?;
    let n = config.n;
    let k = config.n_basis;
    let g = grid();
    let basis = make_bspline(DOMAIN, k, 4, &g)?;

    let mut rng_loc = stream(config.seed, 0);
    let coords = DMatrix::from_fn(n, 2, |_, _| rng_loc.random::<f64>());

    let mut rng_x = stream(config.seed, 1);
    let mut x_coef = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng_x);
            x_coef[(i, j)] = coords[(i, 0)] + z;
        }
    }

    let mut w_coef = DMatrix::zeros(n, k);
    if config.spatial_effect && config.sigma2 > 0.0 {
        let cov = matern_cov(&coords, config.sigma2, config.rho, config.smoothness)?;
        let l = cholesky_jitter(&cov, "Matérn covariance")?.l();
        let mut rng_w = stream(config.seed, 2);
        let z = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng_w));
        w_coef = l * z;
    }

    let surface = true_surface(config.psi);
    let psi_coef = project_surface(&basis, &basis, &surface.values)?;

    let mut y_coef = &x_coef * &psi_coef + &w_coef;
    if config.tau2 > 0.0 {
        let sd = config.tau2.sqrt();
        let mut rng_e = stream(config.seed, 3);
        for v in y_coef.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng_e);
            *v += sd * z;
        }
    }

    let response = basis.evaluate(&y_coef)?;
    let covariate = basis.evaluate(&x_coef)?;
    let ids = (0..n).map(|i| format!("s{}", i + 1)).collect::<Vec<_>>();
    let full = FunctionalDataset::new(
        response,
        covariate,
        g.clone(),
        g,
        Some(SpatialStructure::continuous(coords)?),
        ids,
    )?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(config.seed, 4));
    let n_train = ((config.train_frac * n as f64).round() as usize).clamp(1, n);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let train_ds = full.select(&train)?;
    let test_ds = if test.is_empty() {
        FunctionalDataset {
            response: DMatrix::zeros(0, GRID_LEN),
            covariate: DMatrix::zeros(0, GRID_LEN),
            spatial: None,
            ids: Vec::new(),
            ..full.clone()
        }
    } else {
        full.select(&test)?
    };

    Ok(SimulatedData {
        full,
        train: train_ds,
        test: test_ds,
        truth: SimulationTruth {
            psi_coef,
            psi_surface: surface,
            w_coef,
            x_coef,
            y_coef,
            basis,
            train,
            test,
        },
    })
}

/// Tensor reconstruction of the true coefficients.
pub fn reconstructed_surface(truth: &SimulationTruth) -> Result<TensorSurface> {
    tensor_surface(&truth.basis, &truth.basis, &truth.psi_coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_ridge_values() {
        let peak = 0.014 / (0.006 * PI).sqrt();
        assert!((peak - 0.10197).abs() < 1e-5);
        for r in [0.0, 50.0, 225.0] {
            assert!((true_psi_gaussian(r, r) - peak).abs() < 1e-15);
        }
        assert!(true_psi_gaussian(0.0, 225.0) < 1e-70);
        assert_eq!(true_psi_gaussian(10.0, 40.0), true_psi_gaussian(40.0, 10.0));
    }

    #[test]
    fn soft_threshold_shift() {
        assert_eq!(soft_threshold(0.02, 0.03), 0.0);
        assert!((soft_threshold(0.05, 0.03) - 0.02).abs() < 1e-15);
        assert!((soft_threshold(-0.05, 0.03) + 0.02).abs() < 1e-15);
        let eps = 1e-9;
        assert!(soft_threshold(0.03 + eps, 0.03).abs() < eps * 1.01);
    }

    #[test]
    fn deterministic_and_noiseless() {
        let cfg = SimulationConfig {
            n: 40,
            tau2: 0.0,
            spatial_effect: false,
            ..SimulationConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.full.response, b.full.response);
        let t = &a.truth;
        assert!((&t.x_coef * &t.psi_coef - &t.y_coef).amax() < 1e-14);
        assert_eq!(t.train.len(), 28);
        assert_eq!(t.test.len(), 12);
        let back = t.basis.coefficients(&a.full.response).unwrap();
        assert!((back - &t.y_coef).amax() < 1e-8);
    }
}
