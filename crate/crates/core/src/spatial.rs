//! Spatial dependence: Matérn covariance, ICAR precision, Moran's I and the
//! trace-variogram.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::pairwise_distances;
use crate::special::{bessel_k, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DomainKind {
    Continuous,
    Discrete,
}

/// Site coordinates (point-level) or a binary adjacency matrix (areal).
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialStructure {
    /// `n × 2` coordinates.
    Continuous { coords: DMatrix<f64> },
    /// Symmetric 0/1 adjacency with zero diagonal.
    Discrete { adjacency: DMatrix<f64> },
}

impl SpatialStructure {
    pub fn continuous(coords: DMatrix<f64>) -> Result<Self> {
        ensure_dim("coordinate columns", 2, coords.ncols())?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("coordinates must be finite".into()));
        }
        Ok(Self::Continuous { coords })
    }

    pub fn discrete(adjacency: DMatrix<f64>) -> Result<Self> {
        validate_adjacency(&adjacency)?;
        Ok(Self::Discrete { adjacency })
    }

    pub fn kind(&self) -> DomainKind {
        match self {
            Self::Continuous { .. } => DomainKind::Continuous,
            Self::Discrete { .. } => DomainKind::Discrete,
        }
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Self::Continuous { coords } => coords.nrows(),
            Self::Discrete { adjacency } => adjacency.nrows(),
        }
    }

    pub fn coords(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Continuous { coords } => Some(coords),
            Self::Discrete { .. } => None,
        }
    }

    pub fn adjacency(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Continuous { .. } => None,
            Self::Discrete { adjacency } => Some(adjacency),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        match self {
            Self::Continuous { coords } => Self::continuous(DMatrix::from_fn(rows.len(), 2, |i, j| {
                coords[(rows[i], j)]
            })),
            Self::Discrete { adjacency } => Self::discrete(DMatrix::from_fn(rows.len(), rows.len(), |i, j| {
                adjacency[(rows[i], rows[j])]
            })),
        }
    }
}

pub fn validate_adjacency(d: &DMatrix<f64>) -> Result<()> {
    let n = d.nrows();
    ensure_dim("adjacency columns", n, d.ncols())?;
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(Error::InvalidArgument(format!("adjacency has a nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = d[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidArgument(format!("adjacency entry ({i},{j}) is not binary")));
            }
            if v != d[(j, i)] {
                return Err(Error::InvalidArgument(format!("adjacency is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Connected-component label per node (labels in order of first appearance).
pub fn connected_components(d: &DMatrix<f64>) -> Vec<usize> {
    let n = d.nrows();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if d[(i, j)] != 0.0 && label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    label
}

/// Covariance/precision hyperparameters of the spatial random effect.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovarianceParams {
    pub sigma2: f64,
    pub rho: f64,
    pub smoothness: f64,
    pub nu: f64,
    pub tau2: f64,
}

impl CovarianceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma2, self.rho, self.smoothness, self.nu, self.tau2];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("covariance parameters must be positive".into()))
        }
    }
}

/// Matérn correlation at distance `d` with range `rho` and smoothness `nu`;
/// `exp(−d/ρ)` at smoothness 0.5.
pub fn matern_correlation(d: f64, rho: f64, smoothness: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let x = d / rho;
    if (smoothness - 0.5).abs() < 1e-12 {
        (-x).exp()
    } else if (smoothness - 1.5).abs() < 1e-12 {
        (1.0 + x) * (-x).exp()
    } else if (smoothness - 2.5).abs() < 1e-12 {
        (1.0 + x + x * x / 3.0) * (-x).exp()
    } else {
        if x > 700.0 {
            return 0.0;
        }
        let log_c = (1.0 - smoothness) * 2f64.ln() - ln_gamma(smoothness);
        (log_c + smoothness * x.ln()).exp() * bessel_k(smoothness, x)
    }
}

fn matern_from_distances(dist: &DMatrix<f64>, sigma2: f64, rho: f64, smoothness: f64, jitter: bool) -> Result<DMatrix<f64>> {
    if !(sigma2 > 0.0 && rho > 0.0 && smoothness > 0.0) {
        return Err(Error::InvalidArgument("Matérn parameters must be positive".into()));
    }
    if dist.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite distances".into()));
    }
    let mut m = dist.map(|d| sigma2 * matern_correlation(d, rho, smoothness));
    if jitter {
        for i in 0..m.nrows().min(m.ncols()) {
            m[(i, i)] += 1e-8 * sigma2;
        }
    }
    Ok(m)
}

/// Matérn covariance `Λ` among the rows of `coords`, with `1e-8·σ²` added to
/// the diagonal.
pub fn matern_cov(coords: &DMatrix<f64>, sigma2: f64, rho: f64, smoothness: f64) -> Result<DMatrix<f64>> {
    ensure_dim("coordinate columns", 2, coords.ncols())?;
    matern_from_distances(&pairwise_distances(coords), sigma2, rho, smoothness, true)
}

/// Matérn correlation matrix from a precomputed distance matrix (no jitter).
pub fn matern_cov_from_distances(dist: &DMatrix<f64>, sigma2: f64, rho: f64, smoothness: f64) -> Result<DMatrix<f64>> {
    matern_from_distances(dist, sigma2, rho, smoothness, false)
}

/// ICAR precision `diag(D1) − D` (without the ν multiplier).
pub fn icar_precision(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    validate_adjacency(d)?;
    let n = d.nrows();
    let mut q = -d.clone();
    for i in 0..n {
        q[(i, i)] = d.row(i).sum();
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MoransI {
    pub statistic: f64,
    pub p_value: f64,
}

fn morans_statistic(e: &[f64], d: &DMatrix<f64>, s0: f64) -> f64 {
    let n = e.len();
    let mut num = 0.0;
    for i in 0..n {
        if e[i] == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for j in 0..n {
            acc += d[(i, j)] * e[j];
        }
        num += e[i] * acc;
    }
    let den: f64 = e.iter().map(|v| v * v).sum();
    (n as f64 / s0) * num / den
}

/// Moran's I of `residuals` under the binary weights `d`, with a two-sided
/// permutation p-value from `permutations` random relabelings.
pub fn morans_i(residuals: &[f64], d: &DMatrix<f64>, permutations: usize, seed: u64) -> Result<MoransI> {
    let n = residuals.len();
    ensure_dim("adjacency size", n, d.nrows())?;
    ensure_dim("adjacency size", n, d.ncols())?;
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = residuals.iter().map(|r| r - mean).collect();
    let scale = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs())).max(1e-300);
    if e.iter().all(|v| v.abs() <= 1e-14 * scale) {
        return Err(Error::ConstantInput);
    }
    let s0: f64 = d.iter().sum();
    if s0 <= 0.0 {
        return Err(Error::InvalidArgument("adjacency has no edges".into()));
    }
    let observed = morans_statistic(&e, d, s0);
    let expected = -1.0 / (n as f64 - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = e.clone();
    let mut extreme = 0usize;
    let dev = (observed - expected).abs();
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        let v = morans_statistic(&perm, d, s0);
        if (v - expected).abs() >= dev - 1e-15 {
            extreme += 1;
        }
    }
    Ok(MoransI {
        statistic: observed,
        p_value: (extreme + 1) as f64 / (permutations + 1) as f64,
    })
}

/// Empirical trace-variogram by distance bin.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariogram {
    pub lags: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n_pairs: Vec<usize>,
    /// Indices of bins dropped because they held no pairs.
    pub dropped_bins: Vec<usize>,
}

/// Default bin edges: `n_bins` equal-width bins from 0 to half the maximum
/// inter-site distance.
pub fn default_variogram_edges(coords: &DMatrix<f64>, n_bins: usize) -> Vec<f64> {
    let d = pairwise_distances(coords);
    let max = d.iter().fold(0.0f64, |a, v| a.max(*v));
    let top = 0.5 * max;
    (0..=n_bins).map(|i| top * i as f64 / n_bins as f64).collect()
}

/// `γ̂(h) = (1/2|N(h)|) Σ_{(i,j)∈N(h)} Σ_t w_t (Y_i(t) − Y_j(t))²`.
///
/// Bin `b` holds pairs with `edges[b] ≤ d < edges[b+1]` (last bin closed).
/// Empty bins are dropped and reported in `dropped_bins`.
pub fn trace_variogram(
    curves: &DMatrix<f64>,
    weights: &[f64],
    coords: &DMatrix<f64>,
    edges: &[f64],
) -> Result<EmpiricalVariogram> {
    let n = curves.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("trace-variogram needs at least two sites".into()));
    }
    ensure_dim("coordinate rows", n, coords.nrows())?;
    ensure_dim("quadrature weights", curves.ncols(), weights.len())?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("variogram bin edges must be strictly increasing".into()));
    }
    let n_bins = edges.len() - 1;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let last = edges[n_bins];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[(i, 0)] - coords[(j, 0)];
            let dy = coords[(i, 1)] - coords[(j, 1)];
            let h = (dx * dx + dy * dy).sqrt();
            if h < edges[0] || h > last {
                continue;
            }
            let bin = if h == last {
                n_bins - 1
            } else {
                edges.partition_point(|e| *e <= h) - 1
            };
            let mut s = 0.0;
            for t in 0..curves.ncols() {
                let diff = curves[(i, t)] - curves[(j, t)];
                s += weights[t] * diff * diff;
            }
            sums[bin] += s;
            counts[bin] += 1;
        }
    }
    let mut out = EmpiricalVariogram {
        lags: Vec::new(),
        gamma: Vec::new(),
        n_pairs: Vec::new(),
        dropped_bins: Vec::new(),
    };
    for b in 0..n_bins {
        if counts[b] == 0 {
            out.dropped_bins.push(b);
            continue;
        }
        out.lags.push(0.5 * (edges[b] + edges[b + 1]));
        out.gamma.push(sums[b] / (2.0 * counts[b] as f64));
        out.n_pairs.push(counts[b]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum VariogramModel {
    Gaussian,
    Exponential,
}

/// Parametric variogram `nugget + sill·(1 − ρ(h/range))` (partial sill).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FittedVariogram {
    pub model: VariogramModel,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl FittedVariogram {
    /// `γ(h)`, with `γ(0) = 0`.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + self.sill * self.structure(h)
    }

    fn structure(&self, h: f64) -> f64 {
        shape(self.model, h, self.range)
    }
}

fn shape(model: VariogramModel, h: f64, range: f64) -> f64 {
    let x = h / range;
    match model {
        VariogramModel::Gaussian => 1.0 - (-x * x).exp(),
        VariogramModel::Exponential => 1.0 - (-x).exp(),
    }
}

/// Pair-count weighted least squares for (nugget, sill) at a fixed range,
/// both constrained nonnegative. Returns (nugget, sill, loss).
fn nnls_nugget_sill(model: VariogramModel, range: f64, emp: &EmpiricalVariogram) -> (f64, f64, f64) {
    let loss = |c0: f64, c1: f64| -> f64 {
        emp.lags
            .iter()
            .zip(&emp.gamma)
            .zip(&emp.n_pairs)
            .map(|((h, g), w)| {
                let r = g - c0 - c1 * shape(model, *h, range);
                *w as f64 * r * r
            })
            .sum()
    };
    let (mut sw, mut sf, mut sff, mut sg, mut sfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((h, g), w) in emp.lags.iter().zip(&emp.gamma).zip(&emp.n_pairs) {
        let w = *w as f64;
        let f = shape(model, *h, range);
        sw += w;
        sf += w * f;
        sff += w * f * f;
        sg += w * g;
        sfg += w * f * g;
    }
    let mut candidates = Vec::with_capacity(4);
    let det = sw * sff - sf * sf;
    if det.abs() > 1e-300 {
        let c0 = (sg * sff - sf * sfg) / det;
        let c1 = (sw * sfg - sf * sg) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            candidates.push((c0, c1));
        }
    }
    if sff > 0.0 {
        candidates.push((0.0, (sfg / sff).max(0.0)));
    }
    if sw > 0.0 {
        candidates.push(((sg / sw).max(0.0), 0.0));
    }
    candidates.push((0.0, 0.0));
    candidates
        .into_iter()
        .map(|(a, b)| (a, b, loss(a, b)))
        .fold((0.0, 0.0, f64::INFINITY), |best, c| if c.2 < best.2 { c } else { best })
}

/// Fit a parametric model to an empirical variogram by pair-count weighted
/// least squares, nugget and sill nonnegative.
pub fn fit_variogram(emp: &EmpiricalVariogram, model: VariogramModel) -> Result<FittedVariogram> {
    if emp.lags.is_empty() {
        return Err(Error::InvalidArgument("empirical variogram has no bins".into()));
    }
    let max_lag = emp.lags.iter().fold(0.0f64, |a, h| a.max(*h));
    let min_lag = emp.lags.iter().fold(f64::INFINITY, |a, h| a.min(*h));
    let lo = (min_lag * 0.05).max(1e-12).ln();
    let hi = (max_lag * 20.0).max(1e-10).ln();
    // coarse log grid, then golden-section refinement around the best cell
    let steps = 200;
    let mut best_i = 0;
    let mut best_loss = f64::INFINITY;
    let at = |i: usize| lo + (hi - lo) * i as f64 / steps as f64;
    for i in 0..=steps {
        let l = nnls_nugget_sill(model, at(i).exp(), emp).2;
        if l < best_loss {
            best_loss = l;
            best_i = i;
        }
    }
    let mut a = at(best_i.saturating_sub(1));
    let mut b = at((best_i + 1).min(steps));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| nnls_nugget_sill(model, x.exp(), emp).2;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mut range = (0.5 * (a + b)).exp();
    if f(range.ln()) > best_loss {
        range = at(best_i).exp();
    }
    let (nugget, sill, _) = nnls_nugget_sill(model, range, emp);
    Ok(FittedVariogram {
        model,
        nugget,
        sill,
        range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn matern_values() {
        let coords = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.2, 0.0]);
        let c = matern_cov(&coords, 0.5, 0.2, 0.5).unwrap();
        assert!((c[(0, 0)] - 0.5 * (1.0 + 1e-8)).abs() < 1e-15);
        assert!((c[(0, 1)] - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((c[(0, 1)] - 0.183_939_720_585_721_2).abs() < 1e-12);
        // general smoothness path agrees with the closed forms
        for &nu in &[0.5, 1.5, 2.5] {
            for &d in &[0.01, 0.1, 0.5, 2.0] {
                let x = d / 0.3;
                let log_c = (1.0 - nu) * 2f64.ln() - ln_gamma(nu);
                let general = (log_c + nu * x.ln()).exp() * bessel_k(nu, x);
                assert!((general - matern_correlation(d, 0.3, nu)).abs() < 1e-12);
            }
        }
        assert!(matern_correlation(0.3, 0.2, 1.0) < matern_correlation(0.3, 0.2, 2.0));
    }

    #[test]
    fn matern_random_points_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords = DMatrix::from_fn(10, 2, |_, _| rng.random::<f64>());
        let c = matern_cov(&coords, 0.5, 0.2, 0.5).unwrap();
        assert!(c.cholesky().is_some());
    }

    #[test]
    fn icar_small_graphs() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            icar_precision(&d).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            icar_precision(&p).unwrap(),
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
        );
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(icar_precision(&asym).is_err());
    }

    #[test]
    fn components() {
        let mut d = DMatrix::zeros(5, 5);
        for (a, b) in [(0, 1), (1, 2), (3, 4)] {
            d[(a, b)] = 1.0;
            d[(b, a)] = 1.0;
        }
        assert_eq!(connected_components(&d), vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn variogram_constant_difference() {
        let coords = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let w = crate::basis::quadrature_weights(&grid, (0.0, 1.0)).unwrap();
        let c = 0.7;
        let curves = DMatrix::from_fn(2, 11, |i, j| (grid[j] * 3.0).sin() + if i == 1 { c } else { 0.0 });
        let v = trace_variogram(&curves, &w, &coords, &[0.0, 0.5, 1.5]).unwrap();
        assert_eq!(v.n_pairs, vec![1]);
        assert_eq!(v.dropped_bins, vec![0]);
        assert!((v.gamma[0] - c * c / 2.0).abs() < 1e-12);
        let same = DMatrix::from_fn(2, 11, |_, j| grid[j]);
        let v0 = trace_variogram(&same, &w, &coords, &[0.0, 1.5]).unwrap();
        assert_eq!(v0.gamma, vec![0.0]);
    }

    #[test]
    fn variogram_fit_recovers_known_model() {
        let truth = FittedVariogram {
            model: VariogramModel::Exponential,
            nugget: 0.05,
            sill: 0.5,
            range: 0.2,
        };
        let lags: Vec<f64> = (1..=15).map(|i| i as f64 * 0.04).collect();
        let emp = EmpiricalVariogram {
            gamma: lags.iter().map(|h| truth.gamma(*h)).collect(),
            n_pairs: vec![10; 15],
            lags,
            dropped_bins: Vec::new(),
        };
        let fit = fit_variogram(&emp, VariogramModel::Exponential).unwrap();
        assert!((fit.range - 0.2).abs() < 1e-4, "{fit:?}");
        assert!((fit.sill - 0.5).abs() < 1e-4);
        assert!((fit.nugget - 0.05).abs() < 1e-4);
    }

    #[test]
    fn morans_constant_is_error() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(morans_i(&[1.0, 1.0], &d, 9, 0), Err(Error::ConstantInput));
    }
}
