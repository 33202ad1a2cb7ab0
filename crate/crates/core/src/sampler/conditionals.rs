//! Full conditional distributions, usable in isolation.

use nalgebra::{Cholesky, DMatrix, Dyn};
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, sample_gaussian_canonical};
use crate::spatial::matern_correlation;

/// Inverse-gamma with density `∝ x^{−shape−1} exp(−scale/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn mean(&self) -> f64 {
        self.scale / (self.shape - 1.0)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        m * m / (self.shape - 2.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.shape, 1.0).expect("positive shape").sample(rng);
        self.scale / g
    }
}

/// Gamma with density `∝ x^{shape−1} exp(−rate·x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRate {
    pub shape: f64,
    pub rate: f64,
}

impl GammaRate {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.shape, 1.0).expect("positive shape").sample(rng);
        g / self.rate
    }
}

/// `τ² | rest ~ IG(a + n_obs/2, b + SSR/2)`.
pub fn tau2_conditional(ssr: f64, n_obs: usize, prior: (f64, f64)) -> InvGamma {
    InvGamma {
        shape: prior.0 + n_obs as f64 / 2.0,
        scale: prior.1 + ssr / 2.0,
    }
}

/// Matérn variance: `σ² | W̃, ρ ~ IG(a + n·k_n/2, b + Σ_k W̃_kᵀΓ⁻¹W̃_k/2)`.
pub fn sigma2_conditional(quad: f64, n: usize, k_n: usize, prior: (f64, f64)) -> InvGamma {
    InvGamma {
        shape: prior.0 + (n * k_n) as f64 / 2.0,
        scale: prior.1 + quad / 2.0,
    }
}

/// δ precision multiplier: `Gamma(a + p·k_n/2, Σ_k δ_kᵀKδ_k/2 + p·b)`, or shape
/// 1 in literal mode.
pub fn delta_precision_conditional(quad: f64, p: usize, k_n: usize, prior: (f64, f64), literal: bool) -> GammaRate {
    GammaRate {
        shape: if literal { 1.0 } else { prior.0 + (p * k_n) as f64 / 2.0 },
        rate: quad / 2.0 + p as f64 * prior.1,
    }
}

/// ICAR precision: `Gamma(a + rank(Q)·k_n/2, Σ_k W̃_kᵀQW̃_k/2 + n·b)`, or shape 1
/// in literal mode.
pub fn icar_precision_conditional(
    quad: f64,
    rank_q: usize,
    n: usize,
    k_n: usize,
    prior: (f64, f64),
    literal: bool,
) -> GammaRate {
    GammaRate {
        shape: if literal { 1.0 } else { prior.0 + (rank_q * k_n) as f64 / 2.0 },
        rate: quad / 2.0 + n as f64 * prior.1,
    }
}

/// Column-wise Gaussian conditional sharing one precision matrix `A`: column
/// `k` is `N(A⁻¹ b_k, A⁻¹)`.
pub struct GaussianColumns {
    chol: Cholesky<f64, Dyn>,
}

impl GaussianColumns {
    pub fn new(precision: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        Ok(Self {
            chol: cholesky_jitter(precision, context)?,
        })
    }

    pub fn mean(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rhs: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for k in 0..rhs.ncols() {
            let b = rhs.column(k).into_owned();
            out.set_column(k, &sample_gaussian_canonical(&self.chol, &b, rng));
        }
        out
    }
}

/// `X̃ᵀX̃/τ² + I/v`.
pub fn psi_precision(xtx: &DMatrix<f64>, tau2: f64, psi_var: f64) -> DMatrix<f64> {
    let mut a = xtx / tau2;
    for i in 0..a.nrows() {
        a[(i, i)] += 1.0 / psi_var;
    }
    a
}

/// `PᵀP/τ² + λ·K` for the projected random effect.
pub fn delta_precision(ptp: &DMatrix<f64>, k: &DMatrix<f64>, tau2: f64, lambda: f64) -> DMatrix<f64> {
    ptp / tau2 + k * lambda
}

/// `I/τ² + S`, where `S` is the prior precision of a latent column.
pub fn latent_precision(prior_precision: &DMatrix<f64>, tau2: f64) -> DMatrix<f64> {
    let mut a = prior_precision.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += 1.0 / tau2;
    }
    a
}

/// Matérn correlation at range `rho`, factorized once.
pub struct RangeState {
    pub rho: f64,
    pub chol: Cholesky<f64, Dyn>,
    pub log_det: f64,
}

impl RangeState {
    pub fn new(dist: &DMatrix<f64>, rho: f64, smoothness: f64) -> Result<Self> {
        let n = dist.nrows();
        let gamma = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + 1e-8
            } else {
                matern_correlation(dist[(i, j)], rho, smoothness)
            }
        });
        let chol = cholesky_jitter(&gamma, "Matérn correlation")?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { rho, chol, log_det })
    }

    /// `Σ_k W_kᵀ Γ⁻¹ W_k`.
    pub fn quad(&self, w: &DMatrix<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(w)
            .expect("Cholesky factor has a nonzero diagonal");
        z.norm_squared()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Log density of `logit((ρ − lo)/(hi − lo))` given `W̃` and `σ²`, under a
/// uniform prior on `(lo, hi)`.
pub fn range_log_target(state: &RangeState, w: &DMatrix<f64>, sigma2: f64, bounds: (f64, f64)) -> f64 {
    let k_n = w.ncols() as f64;
    -0.5 * k_n * state.log_det - state.quad(w) / (2.0 * sigma2)
        + (state.rho - bounds.0).ln()
        + (bounds.1 - state.rho).ln()
}

fn logit_scaled(rho: f64, b: (f64, f64)) -> f64 {
    let u = (rho - b.0) / (b.1 - b.0);
    (u / (1.0 - u)).ln()
}

fn expit_scaled(z: f64, b: (f64, f64)) -> f64 {
    let u = 1.0 / (1.0 + (-z).exp());
    b.0 + (b.1 - b.0) * u
}

/// One random-walk Metropolis step for the Matérn range on the logit scale.
/// Returns the new state and whether the proposal was accepted.
#[allow(clippy::too_many_arguments)]
pub fn range_metropolis_step<R: Rng + ?Sized>(
    current: RangeState,
    current_log_target: f64,
    w: &DMatrix<f64>,
    sigma2: f64,
    dist: &DMatrix<f64>,
    smoothness: f64,
    bounds: (f64, f64),
    proposal_sd: f64,
    rng: &mut R,
) -> Result<(RangeState, f64, bool)> {
    let z: f64 = StandardNormal.sample(rng);
    let rho_new = expit_scaled(logit_scaled(current.rho, bounds) + proposal_sd * z, bounds);
    let u: f64 = rng.random();
    if !(rho_new > bounds.0 && rho_new < bounds.1) {
        return Ok((current, current_log_target, false));
    }
    let proposal = RangeState::new(dist, rho_new, smoothness)?;
    let lt = range_log_target(&proposal, w, sigma2, bounds);
    if u.ln() < lt - current_log_target {
        Ok((proposal, lt, true))
    } else {
        Ok((current, current_log_target, false))
    }
}

/// Block identifiers for per-parameter random streams.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Block {
    Psi = 0,
    Effect = 1,
    Tau2 = 2,
    Hyper = 3,
    Range = 4,
}

pub(crate) fn block_rng(seed: u64, chain: u64, block: Block) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain.wrapping_mul(8).wrapping_add(block as u64));
    rng
}

pub(crate) fn check_finite(m: &DMatrix<f64>, iteration: usize, context: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure { iteration, context })
    }
}
