use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;

use super::conditionals::{
    block_rng, check_finite, delta_precision, delta_precision_conditional, icar_precision_conditional,
    latent_precision, psi_precision, range_log_target, range_metropolis_step, sigma2_conditional,
    tau2_conditional, Block, GaussianColumns, RangeState,
};
use super::{ModelKind, ModelSpec, PosteriorDraws};
use crate::curves::CoefficientSet;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::pairwise_distances;
use crate::projection::ProjectionBasis;
use crate::spatial::{connected_components, icar_precision, validate_adjacency, DomainKind};

/// Basis-space response `Ỹ` (n × k_n) and design `X̃` (n × g_n).
#[derive(Debug, Clone, Copy)]
pub struct Design<'a> {
    pub y: &'a DMatrix<f64>,
    pub x: &'a DMatrix<f64>,
}

impl<'a> From<&'a CoefficientSet> for Design<'a> {
    fn from(c: &'a CoefficientSet) -> Self {
        Design {
            y: &c.y_coef,
            x: &c.x_coef,
        }
    }
}

enum Effect {
    None,
    Projection {
        p: DMatrix<f64>,
        k: DMatrix<f64>,
        ptp: DMatrix<f64>,
        pty: DMatrix<f64>,
        ptx: DMatrix<f64>,
        xtp: DMatrix<f64>,
    },
    Icar {
        q: DMatrix<f64>,
        rank: usize,
        components: Vec<usize>,
        n_components: usize,
    },
    Matern {
        dist: DMatrix<f64>,
    },
}

/// FoFR: `Ỹ = X̃ψ̃ + ε̃`.
pub fn fit_fofr<'a>(design: impl Into<Design<'a>>, spec: &ModelSpec) -> Result<PosteriorDraws> {
    run(design.into(), Effect::None, spec)
}

/// PSFoFR: `Ỹ = X̃ψ̃ + Pδ + ε̃`, with `δ_k` given precision `λ·q_delta`.
pub fn fit_psfofr<'a>(
    design: impl Into<Design<'a>>,
    proj: &ProjectionBasis,
    q_delta: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<PosteriorDraws> {
    let d = design.into();
    let p = &proj.p_matrix;
    ensure_dim("projection rows", d.y.nrows(), p.nrows())?;
    ensure_dim("delta precision rows", p.ncols(), q_delta.nrows())?;
    ensure_dim("delta precision columns", p.ncols(), q_delta.ncols())?;
    let sym = (q_delta + q_delta.transpose()) * 0.5;
    let min_eig = sym.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < -1e-8 * sym.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite("delta prior precision is not positive semidefinite"));
    }
    let pt = p.transpose();
    let ptx = &pt * d.x;
    let effect = Effect::Projection {
        ptp: &pt * p,
        pty: &pt * d.y,
        xtp: ptx.transpose(),
        ptx,
        k: sym,
        p: p.clone(),
    };
    run(d, effect, spec)
}

/// Continuous SFoFR with a Matérn latent field at `coords` (n × 2).
pub fn fit_sfofr_continuous<'a>(
    design: impl Into<Design<'a>>,
    coords: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<PosteriorDraws> {
    let d = design.into();
    ensure_dim("coordinate rows", d.y.nrows(), coords.nrows())?;
    ensure_dim("coordinate columns", 2, coords.ncols())?;
    run(
        d,
        Effect::Matern {
            dist: pairwise_distances(coords),
        },
        spec,
    )
}

/// Discrete SFoFR with an ICAR latent field on adjacency `adjacency`.
pub fn fit_sfofr_discrete<'a>(
    design: impl Into<Design<'a>>,
    adjacency: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<PosteriorDraws> {
    let d = design.into();
    validate_adjacency(adjacency)?;
    ensure_dim("adjacency rows", d.y.nrows(), adjacency.nrows())?;
    let components = connected_components(adjacency);
    let n_components = components.iter().max().map_or(0, |m| m + 1);
    run(
        d,
        Effect::Icar {
            q: icar_precision(adjacency)?,
            rank: adjacency.nrows() - n_components,
            components,
            n_components,
        },
        spec,
    )
}

fn trace_quad(m: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    (k * m).component_mul(m).sum()
}

fn center_components(w: &mut DMatrix<f64>, labels: &[usize], n_components: usize) {
    let mut sums = alloc::vec![0.0; n_components];
    let mut counts = alloc::vec![0usize; n_components];
    for &l in labels {
        counts[l] += 1;
    }
    for k in 0..w.ncols() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += w[(i, k)];
        }
        for (i, &l) in labels.iter().enumerate() {
            w[(i, k)] -= sums[l] / counts[l] as f64;
        }
    }
}

fn run(d: Design<'_>, effect: Effect, spec: &ModelSpec) -> Result<PosteriorDraws> {
    spec.validate()?;
    let (y, x) = (d.y, d.x);
    let n = y.nrows();
    let k_n = y.ncols();
    let g_n = x.ncols();
    ensure_dim("design rows", n, x.nrows())?;
    if n == 0 || k_n == 0 || g_n == 0 {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    let model = match effect {
        Effect::None => ModelKind::Fofr,
        Effect::Projection { .. } => ModelKind::Psfofr,
        _ => ModelKind::Sfofr,
    };
    let mut spec = spec.clone();
    spec.model = model;
    match effect {
        Effect::Icar { .. } => spec.domain_kind = DomainKind::Discrete,
        Effect::Matern { .. } => spec.domain_kind = DomainKind::Continuous,
        _ => {}
    }
    let pri = spec.priors;
    let mc = spec.mcmc;
    let fixed = spec.fixed;

    let xt = x.transpose();
    let xtx = &xt * x;
    let xty = &xt * y;

    let mut rng_psi = block_rng(mc.seed, mc.chain, Block::Psi);
    let mut rng_eff = block_rng(mc.seed, mc.chain, Block::Effect);
    let mut rng_tau = block_rng(mc.seed, mc.chain, Block::Tau2);
    let mut rng_hyp = block_rng(mc.seed, mc.chain, Block::Hyper);
    let mut rng_rho = block_rng(mc.seed, mc.chain, Block::Range);

    let effect_rows = match &effect {
        Effect::None => 0,
        Effect::Projection { p, .. } => p.ncols(),
        _ => n,
    };
    let mut eff = DMatrix::<f64>::zeros(effect_rows, k_n);
    let mut tau2 = fixed.tau2.unwrap_or(1.0);
    let mut hyper = fixed.hyper.unwrap_or(1.0);
    let bounds = pri.rho_unif;
    let mut range = match &effect {
        Effect::Matern { dist } => {
            let r0 = fixed.rho.unwrap_or(bounds.0 + 0.25 * (bounds.1 - bounds.0));
            Some(RangeState::new(dist, r0, spec.smoothness)?)
        }
        _ => None,
    };
    let mut gamma_inv = range.as_ref().map(|r| r.inverse());
    let mut proposal_sd = mc.rho_proposal_sd;
    let (mut batch_acc, mut batch_len, mut batch_idx) = (0usize, 0usize, 0usize);
    let (mut kept_acc, mut kept_tries) = (0usize, 0usize);

    let u = mc.n_stored();
    let mut out_psi = Vec::with_capacity(u);
    let mut out_eff = Vec::with_capacity(if effect_rows > 0 { u } else { 0 });
    let mut out_tau2 = Vec::with_capacity(u);
    let mut out_hyper = Vec::with_capacity(u);
    let mut out_rho = Vec::with_capacity(u);

    for it in 1..=mc.iters {
        // regression coefficients
        let xtr = match &effect {
            Effect::None => None,
            Effect::Projection { xtp, .. } => Some(xtp * &eff),
            _ => Some(&xt * &eff),
        };
        let mut rhs = match xtr {
            Some(m) => &xty - m,
            None => xty.clone(),
        };
        rhs /= tau2;
        let block = GaussianColumns::new(&psi_precision(&xtx, tau2, pri.psi_var), "psi precision")
            .map_err(|_| Error::NumericalFailure {
                iteration: it,
                context: "psi precision",
            })?;
        let psi = block.sample(&rhs, &mut rng_psi);
        check_finite(&psi, it, "psi draw")?;

        // random effect
        let fail = |context| Error::NumericalFailure { iteration: it, context };
        match &effect {
            Effect::None => {}
            Effect::Projection { ptp, pty, ptx, k, .. } => {
                let rhs = (pty - ptx * &psi) / tau2;
                let b = GaussianColumns::new(&delta_precision(ptp, k, tau2, hyper), "delta precision")
                    .map_err(|_| fail("delta precision"))?;
                eff = b.sample(&rhs, &mut rng_eff);
            }
            Effect::Icar {
                q,
                components,
                n_components,
                ..
            } => {
                let rhs = (y - x * &psi) / tau2;
                let b = GaussianColumns::new(&latent_precision(&(q * hyper), tau2), "latent precision")
                    .map_err(|_| fail("latent precision"))?;
                eff = b.sample(&rhs, &mut rng_eff);
                center_components(&mut eff, components, *n_components);
            }
            Effect::Matern { .. } => {
                let rhs = (y - x * &psi) / tau2;
                let prior = gamma_inv.as_ref().expect("range state") / hyper;
                let b = GaussianColumns::new(&latent_precision(&prior, tau2), "latent precision")
                    .map_err(|_| fail("latent precision"))?;
                eff = b.sample(&rhs, &mut rng_eff);
            }
        }
        check_finite(&eff, it, "random effect draw")?;

        // measurement error
        if fixed.tau2.is_none() {
            let mut resid = y - x * &psi;
            match &effect {
                Effect::None => {}
                Effect::Projection { p, .. } => resid -= p * &eff,
                _ => resid -= &eff,
            }
            let ssr = resid.norm_squared();
            tau2 = tau2_conditional(ssr, n * k_n, pri.tau2_ig).sample(&mut rng_tau);
            if !(tau2.is_finite() && tau2 > 0.0) {
                return Err(fail("tau2 draw"));
            }
        }

        // hyperparameters
        match &effect {
            Effect::None => {}
            Effect::Projection { k, p, .. } => {
                if fixed.hyper.is_none() {
                    let quad = trace_quad(&eff, k);
                    hyper = delta_precision_conditional(quad, p.ncols(), k_n, pri.delta_prec_gamma, spec.appendix_literal)
                        .sample(&mut rng_hyp);
                }
            }
            Effect::Icar { q, rank, .. } => {
                if fixed.hyper.is_none() {
                    let quad = trace_quad(&eff, q);
                    hyper = icar_precision_conditional(quad, *rank, n, k_n, pri.nu_gamma, spec.appendix_literal)
                        .sample(&mut rng_hyp);
                }
            }
            Effect::Matern { dist } => {
                let state = range.take().expect("range state");
                if fixed.hyper.is_none() {
                    hyper = sigma2_conditional(state.quad(&eff), n, k_n, pri.sigma2_ig).sample(&mut rng_hyp);
                }
                if fixed.rho.is_none() {
                    let lt = range_log_target(&state, &eff, hyper, bounds);
                    let (next, _, accepted) = range_metropolis_step(
                        state,
                        lt,
                        &eff,
                        hyper,
                        dist,
                        spec.smoothness,
                        bounds,
                        proposal_sd,
                        &mut rng_rho,
                    )
                    .map_err(|_| fail("Matérn correlation"))?;
                    if accepted {
                        gamma_inv = Some(next.inverse());
                    }
                    if it <= mc.burnin {
                        batch_acc += accepted as usize;
                        batch_len += 1;
                        if batch_len == 50 {
                            batch_idx += 1;
                            let rate = batch_acc as f64 / 50.0;
                            let step = 1.0 / (batch_idx as f64).sqrt();
                            proposal_sd = (proposal_sd.ln() + step * (rate - 0.3)).exp().clamp(1e-3, 10.0);
                            batch_acc = 0;
                            batch_len = 0;
                        }
                    } else {
                        kept_acc += accepted as usize;
                        kept_tries += 1;
                    }
                    range = Some(next);
                } else {
                    range = Some(state);
                }
            }
        }
        if !(hyper.is_finite() && hyper > 0.0) {
            return Err(fail("variance hyperparameter draw"));
        }

        if it > mc.burnin && (it - mc.burnin).is_multiple_of(mc.thin) {
            out_psi.push(psi.clone());
            if effect_rows > 0 {
                out_eff.push(eff.clone());
            }
            out_tau2.push(tau2);
            out_hyper.push(hyper);
            if let Some(r) = &range {
                out_rho.push(r.rho);
            }
        }
    }

    let is_matern = matches!(effect, Effect::Matern { .. });
    let has_effect = !matches!(effect, Effect::None);
    Ok(PosteriorDraws {
        psi: out_psi,
        random_effect: has_effect.then_some(out_eff),
        tau2: out_tau2,
        sigma2: if is_matern { Some(out_hyper.clone()) } else { None },
        precision: if has_effect && !is_matern { Some(out_hyper) } else { None },
        rho: is_matern.then_some(out_rho),
        acceptance_rate_rho: if is_matern && fixed.rho.is_none() {
            Some(kept_acc as f64 / kept_tries.max(1) as f64)
        } else {
            None
        },
        rho_proposal_sd: (is_matern && fixed.rho.is_none()).then_some(proposal_sd),
        spec,
        n_chains: 1,
    })
}
