//! Data-space inference from basis-space draws: regression surfaces with
//! simultaneous credible bands, SimBaS, contour-avoiding regions, functional
//! kriging and scoring.
//!
//! Surfaces are never all held in memory. Each summary makes one pass for
//! pointwise moments and one more for the standardized maxima, re-evaluating
//! every draw on demand.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{tensor_surface, BasisSystem, TensorSurface};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::cross_distances;
use crate::sampler::conditionals::RangeState;
use crate::sampler::PosteriorDraws;
use crate::spatial::matern_correlation;
use crate::special::norm_quantile;

/// Floor applied to pointwise standard deviations.
pub const SD_FLOOR: f64 = 1e-12;

/// Order statistic used as the simultaneous-band multiplier: the `k`-th
/// smallest of `z` with `k = U − c`, where `c` is the largest count whose
/// share `c/U` stays below `alpha`. Exceedances of `M_α` then occur on fewer
/// than `α·U` draws, which makes the band and SimBaS agree exactly.
pub fn simultaneous_quantile(z: &[f64], alpha: f64) -> Result<f64> {
    let u = z.len();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("alpha {alpha} outside (0, 1)")));
    }
    if (u as f64) * alpha < 1.0 {
        return Err(Error::TooFewDraws {
            needed: (1.0 / alpha).ceil() as usize,
            found: u,
        });
    }
    let mut c = ((alpha * u as f64).ceil() as usize).min(u);
    while c > 0 && (c as f64) / (u as f64) >= alpha {
        c -= 1;
    }
    while ((c + 1) as f64) / (u as f64) < alpha {
        c += 1;
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    Ok(sorted[u - c - 1])
}

/// Simultaneous-band summary of a set of draw matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSummary {
    pub mean: DMatrix<f64>,
    pub sd: DMatrix<f64>,
    /// Standardized maximum deviation of every draw.
    pub z: Vec<f64>,
    pub alphas: Vec<f64>,
    pub m_alpha: Vec<f64>,
    pub lower: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
    pub simbas: DMatrix<f64>,
    /// Per α: sign of the mean where the band excludes zero, else 0.
    pub significance: Vec<DMatrix<f64>>,
}

/// Pointwise mean and standard deviation (divisor `U − 1`, floored).
pub fn draw_moments<F>(n_draws: usize, mut eval: F) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: FnMut(usize) -> DMatrix<f64>,
{
    if n_draws < 2 {
        return Err(Error::TooFewDraws {
            needed: 2,
            found: n_draws,
        });
    }
    let first = eval(0);
    let mut mean = first.clone();
    let mut m2 = DMatrix::zeros(first.nrows(), first.ncols());
    for u in 1..n_draws {
        let d = eval(u);
        ensure_dim("draw rows", mean.nrows(), d.nrows())?;
        ensure_dim("draw columns", mean.ncols(), d.ncols())?;
        let cnt = (u + 1) as f64;
        for ((m, s), x) in mean.iter_mut().zip(m2.iter_mut()).zip(d.iter()) {
            let delta = x - *m;
            *m += delta / cnt;
            *s += delta * (x - *m);
        }
    }
    let sd = m2.map(|s: f64| (s / (n_draws - 1) as f64).max(0.0).sqrt().max(SD_FLOOR));
    Ok((mean, sd))
}

/// Simultaneous bands, SimBaS and significance masks over arbitrary draws.
pub fn simultaneous_bands<F>(n_draws: usize, mut eval: F, alphas: &[f64]) -> Result<BandSummary>
where
    F: FnMut(usize) -> DMatrix<f64>,
{
    let (mean, sd) = draw_moments(n_draws, &mut eval)?;
    let z: Vec<f64> = (0..n_draws)
        .map(|u| {
            let d = eval(u);
            d.iter()
                .zip(mean.iter())
                .zip(sd.iter())
                .map(|((x, m), s)| (x - m).abs() / s)
                .fold(0.0, f64::max)
        })
        .collect();
    let mut sorted = z.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let ratio = mean.zip_map(&sd, |m, s| m.abs() / s);
    let simbas = ratio.map(|r| {
        // share of draws with Z ≥ r
        let below = sorted.partition_point(|v| *v < r);
        (n_draws - below) as f64 / n_draws as f64
    });
    let mut m_alpha = Vec::with_capacity(alphas.len());
    let mut lower = Vec::with_capacity(alphas.len());
    let mut upper = Vec::with_capacity(alphas.len());
    let mut significance = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let m = simultaneous_quantile(&z, a)?;
        m_alpha.push(m);
        lower.push(mean.zip_map(&sd, |c, s| c - m * s));
        upper.push(mean.zip_map(&sd, |c, s| c + m * s));
        significance.push(mean.zip_zip_map(&ratio, &sd, |c, r, _| if r > m { c.signum() } else { 0.0 }));
    }
    Ok(BandSummary {
        mean,
        sd,
        z,
        alphas: alphas.to_vec(),
        m_alpha,
        lower,
        upper,
        simbas,
        significance,
    })
}

/// Regression-surface summary on the `(r, t)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub mean: TensorSurface,
    pub sd: TensorSurface,
    pub alphas: Vec<f64>,
    pub m_alpha: Vec<f64>,
    pub lower: Vec<TensorSurface>,
    pub upper: Vec<TensorSurface>,
    pub simbas: TensorSurface,
    pub significance: Vec<TensorSurface>,
    pub z: Vec<f64>,
}

impl SurfaceSummary {
    pub fn alpha_index(&self, alpha: f64) -> Option<usize> {
        self.alphas.iter().position(|a| (a - alpha).abs() < 1e-12)
    }
}

/// `Ψ^{(u)} = Ξᵀψ̃^{(u)}Φ` for every draw, summarized with simultaneous bands.
pub fn summarize_surface(
    psi_draws: &[DMatrix<f64>],
    xi: &BasisSystem,
    phi: &BasisSystem,
    alphas: &[f64],
) -> Result<SurfaceSummary> {
    for d in psi_draws {
        ensure_dim("psi rows (g_n)", xi.n_basis(), d.nrows())?;
        ensure_dim("psi columns (k_n)", phi.n_basis(), d.ncols())?;
    }
    let left = xi.values.transpose();
    let eval = |u: usize| &left * &psi_draws[u] * &phi.values;
    let b = simultaneous_bands(psi_draws.len(), eval, alphas)?;
    let wrap = |m: DMatrix<f64>| TensorSurface {
        r_grid: xi.grid.clone(),
        t_grid: phi.grid.clone(),
        values: m,
    };
    Ok(SurfaceSummary {
        mean: wrap(b.mean),
        sd: wrap(b.sd),
        alphas: b.alphas,
        m_alpha: b.m_alpha,
        lower: b.lower.into_iter().map(wrap).collect(),
        upper: b.upper.into_iter().map(wrap).collect(),
        simbas: wrap(b.simbas),
        significance: b.significance.into_iter().map(wrap).collect(),
        z: b.z,
    })
}

/// Contour avoidance function `F₀` and the significance mask `F₀ > 1 − α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourAvoiding {
    pub f0: DMatrix<f64>,
    pub mask: DMatrix<f64>,
}

/// Contour-avoiding region at level 0 over arbitrary draws.
pub fn contour_avoiding<F>(n_draws: usize, mut eval: F, alpha: f64) -> Result<ContourAvoiding>
where
    F: FnMut(usize) -> DMatrix<f64>,
{
    let (_, sd) = draw_moments(n_draws, &mut eval)?;
    let (r, c) = sd.shape();
    let mut above = DMatrix::<f64>::zeros(r, c);
    let mut below = DMatrix::<f64>::zeros(r, c);
    for u in 0..n_draws {
        let d = eval(u);
        for i in 0..d.len() {
            if d[i] > 0.0 {
                above[i] += 1.0;
            } else if d[i] < 0.0 {
                below[i] += 1.0;
            }
        }
    }
    let un = n_draws as f64;
    let lo_clamp = 1.0 / un;
    let limits: Vec<(f64, f64)> = (0..sd.len())
        .map(|i| {
            let rho_u = above[i] / un;
            let rho_l = below[i] / un;
            let rho = rho_u.max(rho_l).clamp(lo_clamp, 1.0 - lo_clamp);
            if rho_u <= 0.5 {
                (f64::NEG_INFINITY, sd[i] * norm_quantile(rho))
            } else {
                (sd[i] * norm_quantile(1.0 - rho), f64::INFINITY)
            }
        })
        .collect();
    let mut inside = DMatrix::<f64>::zeros(r, c);
    for u in 0..n_draws {
        let d = eval(u);
        for i in 0..d.len() {
            let (a, b) = limits[i];
            if d[i] >= a && d[i] <= b {
                inside[i] += 1.0;
            }
        }
    }
    let f0 = inside / un;
    let mask = f0.map(|v| if v > 1.0 - alpha { 1.0 } else { 0.0 });
    Ok(ContourAvoiding { f0, mask })
}

/// Contour-avoiding region of the regression surface.
pub fn contour_avoiding_surface(
    psi_draws: &[DMatrix<f64>],
    xi: &BasisSystem,
    phi: &BasisSystem,
    alpha: f64,
) -> Result<ContourAvoiding> {
    let left = xi.values.transpose();
    contour_avoiding(psi_draws.len(), |u| &left * &psi_draws[u] * &phi.values, alpha)
}

/// Random-effect contribution at prediction sites.
pub enum EffectPredictor<'a> {
    /// No spatial term (FoFR).
    None,
    /// Projection rows `P_{s*}` (q × p) for PSFoFR.
    Projection(&'a DMatrix<f64>),
    /// Conditional Gaussian kriging of the Matérn latent columns.
    Matern {
        train_coords: &'a DMatrix<f64>,
        target_coords: &'a DMatrix<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingOptions {
    pub alpha: f64,
    pub seed: u64,
    /// Add `N(0, τ²)` measurement noise to every predictive coefficient.
    pub predictive_noise: bool,
    pub keep_draws: bool,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            seed: 1,
            predictive_noise: true,
            keep_draws: false,
        }
    }
}

/// Predicted curves with per-curve simultaneous bands.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingResult {
    /// `q × n_t`.
    pub mean_curves: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    /// Band multiplier of every site.
    pub m_alpha: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub alpha: f64,
    pub predictive_draws: Option<Vec<DMatrix<f64>>>,
}

struct MaternCache {
    rho: f64,
    weights: DMatrix<f64>,
    cond_sd: Vec<f64>,
}

/// Posterior predictive curves at `q` new sites.
pub fn krige(
    draws: &PosteriorDraws,
    x_star: &DMatrix<f64>,
    predictor: &EffectPredictor<'_>,
    phi: &BasisSystem,
    options: &KrigingOptions,
) -> Result<KrigingResult> {
    let u_n = draws.n_draws();
    let q = x_star.nrows();
    if q == 0 {
        return Err(Error::InvalidArgument("no prediction sites".into()));
    }
    ensure_dim("prediction covariate coefficients (g_n)", draws.g_n(), x_star.ncols())?;
    ensure_dim("response basis size (k_n)", phi.n_basis(), draws.k_n())?;
    let effects = draws.random_effect.as_deref();
    match predictor {
        EffectPredictor::None => {}
        EffectPredictor::Projection(p_star) => {
            let eff = effects.ok_or_else(|| Error::InvalidArgument("draws carry no random effect".into()))?;
            ensure_dim("projection rows", q, p_star.nrows())?;
            ensure_dim("projection rank", eff[0].nrows(), p_star.ncols())?;
        }
        EffectPredictor::Matern {
            train_coords,
            target_coords,
        } => {
            let eff = effects.ok_or_else(|| Error::InvalidArgument("draws carry no random effect".into()))?;
            ensure_dim("training coordinates", eff[0].nrows(), train_coords.nrows())?;
            ensure_dim("target coordinates", q, target_coords.nrows())?;
            if draws.rho.is_none() || draws.sigma2.is_none() {
                return Err(Error::InvalidArgument("Matérn kriging needs rho and sigma2 draws".into()));
            }
        }
    }
    let smoothness = draws.spec.smoothness;
    let cross = match predictor {
        EffectPredictor::Matern {
            train_coords,
            target_coords,
        } => Some((cross_distances(target_coords, train_coords), crate::linalg::pairwise_distances(train_coords))),
        _ => None,
    };

    // Draw u of the predictive curves; the RNG is replayed identically on every pass.
    let mut cache: Option<MaternCache> = None;
    let mut draw = |u: usize, rng: &mut ChaCha8Rng| -> Result<DMatrix<f64>> {
        let mut eta = x_star * &draws.psi[u];
        match predictor {
            EffectPredictor::None => {}
            EffectPredictor::Projection(p_star) => {
                eta += *p_star * &effects.expect("checked")[u];
            }
            EffectPredictor::Matern { .. } => {
                let (cd, td) = cross.as_ref().expect("distances");
                let rho = draws.rho.as_ref().expect("checked")[u];
                let sigma2 = draws.sigma2.as_ref().expect("checked")[u];
                if cache.as_ref().is_none_or(|c| c.rho != rho) {
                    let state = RangeState::new(td, rho, smoothness)?;
                    let c = cd.map(|d| matern_correlation(d, rho, smoothness));
                    let weights = state.chol.solve(&c.transpose()).transpose();
                    let cond_sd = (0..q)
                        .map(|i| (1.0 - weights.row(i).dot(&c.row(i))).max(0.0).sqrt())
                        .collect();
                    cache = Some(MaternCache { rho, weights, cond_sd });
                }
                let mc = cache.as_ref().expect("filled");
                eta += &mc.weights * &effects.expect("checked")[u];
                let s = sigma2.sqrt();
                for i in 0..q {
                    for k in 0..eta.ncols() {
                        let z: f64 = StandardNormal.sample(rng);
                        eta[(i, k)] += s * mc.cond_sd[i] * z;
                    }
                }
            }
        }
        if options.predictive_noise {
            let sd = draws.tau2[u].sqrt();
            for v in eta.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sd * z;
            }
        }
        Ok(&eta * &phi.values)
    };

    let n_t = phi.n_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut mean = DMatrix::<f64>::zeros(q, n_t);
    let mut m2 = DMatrix::<f64>::zeros(q, n_t);
    let mut kept = options.keep_draws.then(|| Vec::with_capacity(u_n));
    if u_n < 2 {
        return Err(Error::TooFewDraws { needed: 2, found: u_n });
    }
    for u in 0..u_n {
        let d = draw(u, &mut rng)?;
        let cnt = (u + 1) as f64;
        for ((m, s), x) in mean.iter_mut().zip(m2.iter_mut()).zip(d.iter()) {
            let delta = x - *m;
            *m += delta / cnt;
            *s += delta * (x - *m);
        }
        if let Some(k) = kept.as_mut() {
            k.push(d);
        }
    }
    let sd: DMatrix<f64> = m2.map(|s: f64| (s / (u_n - 1) as f64).max(0.0).sqrt().max(SD_FLOOR));
    let mut z = vec![Vec::with_capacity(u_n); q];
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for u in 0..u_n {
        let d = draw(u, &mut rng)?;
        for i in 0..q {
            let zi = (0..n_t)
                .map(|t| (d[(i, t)] - mean[(i, t)]).abs() / sd[(i, t)])
                .fold(0.0, f64::max);
            z[i].push(zi);
        }
    }
    let m_alpha = z
        .iter()
        .map(|zi| simultaneous_quantile(zi, options.alpha))
        .collect::<Result<Vec<f64>>>()?;
    let lower = DMatrix::from_fn(q, n_t, |i, t| mean[(i, t)] - m_alpha[i] * sd[(i, t)]);
    let upper = DMatrix::from_fn(q, n_t, |i, t| mean[(i, t)] + m_alpha[i] * sd[(i, t)]);
    Ok(KrigingResult {
        mean_curves: mean,
        lower,
        upper,
        m_alpha,
        t_grid: phi.grid.clone(),
        alpha: options.alpha,
        predictive_draws: kept,
    })
}

/// Prediction scores against held-out curves.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictionScore {
    /// `√(mean squared error)` over all curves and grid points.
    pub mspe: f64,
    /// Average over curves of the share of grid points covered by the band.
    pub mean_coverage: Option<f64>,
}

pub fn score(
    predicted: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    bands: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<PredictionScore> {
    ensure_dim("predicted rows", truth.nrows(), predicted.nrows())?;
    ensure_dim("predicted columns", truth.ncols(), predicted.ncols())?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("nothing to score".into()));
    }
    let mspe = ((predicted - truth).norm_squared() / truth.len() as f64).sqrt();
    let mean_coverage = match bands {
        None => None,
        Some((lo, hi)) => {
            ensure_dim("lower band rows", truth.nrows(), lo.nrows())?;
            ensure_dim("upper band rows", truth.nrows(), hi.nrows())?;
            ensure_dim("lower band columns", truth.ncols(), lo.ncols())?;
            ensure_dim("upper band columns", truth.ncols(), hi.ncols())?;
            let n_t = truth.ncols() as f64;
            let per_curve = (0..truth.nrows()).map(|i| {
                (0..truth.ncols())
                    .filter(|&t| lo[(i, t)] <= truth[(i, t)] && truth[(i, t)] <= hi[(i, t)])
                    .count() as f64
                    / n_t
            });
            Some(per_curve.sum::<f64>() / truth.nrows() as f64)
        }
    };
    Ok(PredictionScore { mspe, mean_coverage })
}

/// Root mean squared difference between estimated and true surfaces.
pub fn score_surface(psi_hat: &DMatrix<f64>, psi_true: &DMatrix<f64>) -> Result<f64> {
    ensure_dim("surface rows", psi_true.nrows(), psi_hat.nrows())?;
    ensure_dim("surface columns", psi_true.ncols(), psi_hat.ncols())?;
    Ok(((psi_hat - psi_true).norm_squared() / psi_true.len() as f64).sqrt())
}

/// Surface of the posterior-mean coefficients, `Ξᵀψ̄Φ`.
pub fn mean_surface(draws: &PosteriorDraws, xi: &BasisSystem, phi: &BasisSystem) -> Result<TensorSurface> {
    tensor_surface(xi, phi, &draws.psi_mean())
}
