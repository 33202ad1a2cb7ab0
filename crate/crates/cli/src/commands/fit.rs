use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sfofr_core::curves::CoefficientSet;
use sfofr_core::projection::{
    areal_moran_eigenvalues, bounding_box, build_mesh, mesh_moran_eigenvalues, moran_basis_areal, projection_point,
    rank_for_variance, ProjectionBasis,
};
use sfofr_core::sampler::{
    ess, fit_fofr, fit_psfofr, fit_sfofr_continuous, fit_sfofr_discrete, mcse, ModelKind, ModelSpec,
};
use sfofr_core::spatial::{morans_i, MoransI};
use sfofr_core::{BasisFamily, PosteriorDraws};

use super::resolve_basis;
use crate::config::{unique_alphas, Basis, BasisCount, Domain, FitConfig, Model};
use crate::draws::save_draws;
use crate::error::{CliError, CliResult};
use crate::io::{
    ensure_dir, load_dataset, numbered, read_json, write_adjacency, write_basis, write_json, write_locations,
    write_matrix, write_triangles, DatasetDir,
};

pub const RUN_FILE: &str = "run.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const DRAWS_DIR: &str = "draws";
pub const PHI_FILE: &str = "basis_phi.csv";
pub const XI_FILE: &str = "basis_xi.csv";
pub const TRAIN_LOCATIONS_FILE: &str = "train_locations.csv";
pub const TRAIN_ADJACENCY_FILE: &str = "train_adjacency.csv";
pub const MESH_VERTICES_FILE: &str = "mesh_vertices.csv";
pub const MESH_TRIANGLES_FILE: &str = "mesh_triangles.csv";
pub const MESH_BASIS_FILE: &str = "mesh_basis.csv";
pub const PROJECTION_FILE: &str = "projection.csv";

#[derive(Debug, Default, Args)]
pub struct FitArgs {
    /// Dataset directory with `response.csv`, `covariate.csv` and optional spatial files.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<Model>,
    #[arg(long, value_enum)]
    pub domain: Option<Domain>,
    #[arg(long, value_enum)]
    pub basis: Option<Basis>,
    /// Response basis size (`auto` for GCV).
    #[arg(long)]
    pub k_basis: Option<BasisCount>,
    /// Covariate basis size (`auto` for GCV).
    #[arg(long)]
    pub g_basis: Option<BasisCount>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub max_edge: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Band level kept for later summaries (repeatable).
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Gamma conditionals with shape 1 as printed in the original derivation.
    #[arg(long)]
    pub appendix_literal: bool,
}

impl FitArgs {
    pub fn resolve(&self) -> CliResult<FitConfig> {
        let mut cfg: FitConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => FitConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(model, basis, k_basis, g_basis, max_edge, margin, iters, burnin, thin, seed, chains);
        if self.domain.is_some() {
            cfg.domain = self.domain;
        }
        if self.rank.is_some() {
            cfg.rank = self.rank;
        }
        if !self.alphas.is_empty() {
            cfg.alphas = unique_alphas(&self.alphas);
        }
        cfg.appendix_literal |= self.appendix_literal;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mesh settings needed to rebuild the mesh at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub bbox: (f64, f64, f64, f64),
    pub max_edge: f64,
    pub margin: f64,
    pub n_vertices: usize,
    pub n_triangles: usize,
}

/// Everything `predict` and `summarize` need besides the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    /// Resolved configuration, basis sizes fixed.
    pub config: FitConfig,
    pub domain: Domain,
    pub data_dir: PathBuf,
    pub ids: Vec<String>,
    pub family: BasisFamily,
    pub t_domain: (f64, f64),
    pub r_domain: (f64, f64),
    pub k_n: usize,
    pub g_n: usize,
    pub rank: Option<usize>,
    pub mesh: Option<MeshInfo>,
    pub threads: Option<usize>,
    pub elapsed_seconds: f64,
}

/// Chain-quality summary of one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub n_entries: usize,
    pub ess_min: Option<f64>,
    pub ess_median: Option<f64>,
    pub mcse_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_draws: usize,
    pub n_chains: usize,
    pub psi: BlockDiagnostics,
    pub random_effect: Option<BlockDiagnostics>,
    pub tau2: BlockDiagnostics,
    pub sigma2: Option<BlockDiagnostics>,
    pub precision: Option<BlockDiagnostics>,
    pub rho: Option<BlockDiagnostics>,
    pub acceptance_rate_rho: Option<f64>,
    /// Moran's I of the site-averaged residual curves (areal data).
    pub residual_morans_i: Option<MoransI>,
}

/// ESS/MCSE over a set of scalar traces.
pub fn block_diagnostics(traces: &[Vec<f64>]) -> BlockDiagnostics {
    let mut esses: Vec<f64> = traces.iter().filter_map(|t| ess(t).ok()).collect();
    esses.sort_by(f64::total_cmp);
    let mcse_max = traces
        .iter()
        .filter_map(|t| mcse(t).ok())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    BlockDiagnostics {
        n_entries: traces.len(),
        ess_min: esses.first().copied(),
        ess_median: (!esses.is_empty()).then(|| esses[esses.len() / 2]),
        mcse_max,
    }
}

fn matrix_traces(ms: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
    let (r, c) = ms[0].shape();
    (0..r * c).map(|e| ms.iter().map(|m| m[e]).collect()).collect()
}

pub fn diagnose(draws: &PosteriorDraws) -> Diagnostics {
    let scalar = |v: &Option<Vec<f64>>| v.as_ref().map(|v| block_diagnostics(std::slice::from_ref(v)));
    Diagnostics {
        n_draws: draws.n_draws(),
        n_chains: draws.n_chains,
        psi: block_diagnostics(&matrix_traces(&draws.psi)),
        random_effect: draws.random_effect.as_ref().map(|r| block_diagnostics(&matrix_traces(r))),
        tau2: block_diagnostics(std::slice::from_ref(&draws.tau2)),
        sigma2: scalar(&draws.sigma2),
        precision: scalar(&draws.precision),
        rho: scalar(&draws.rho),
        acceptance_rate_rho: draws.acceptance_rate_rho,
        residual_morans_i: None,
    }
}

fn infer_domain(cfg: &FitConfig, data: &DatasetDir) -> Domain {
    cfg.domain.unwrap_or(if data.coords.is_none() && data.adjacency.is_some() {
        Domain::Areal
    } else {
        Domain::Point
    })
}

fn build_spec(cfg: &FitConfig, domain: Domain) -> ModelSpec {
    let mut spec = ModelSpec::new(cfg.model.into(), domain.into());
    spec.priors = cfg.priors;
    spec.mcmc.iters = cfg.iters;
    spec.mcmc.burnin = cfg.burnin;
    spec.mcmc.thin = cfg.thin;
    spec.mcmc.seed = cfg.seed;
    spec.smoothness = cfg.smoothness;
    spec.appendix_literal = cfg.appendix_literal;
    spec
}

/// Spatial inputs a model needs, checked against the dataset.
enum Structure<'a> {
    None,
    Points(&'a DMatrix<f64>),
    Areas(&'a DMatrix<f64>),
}

fn structure<'a>(model: Model, domain: Domain, data: &'a DatasetDir, dir: &Path) -> CliResult<Structure<'a>> {
    if model == Model::Fofr {
        return Ok(Structure::None);
    }
    let name = format!("{model:?}").to_lowercase();
    match domain {
        Domain::Point => data.coords.as_ref().map(Structure::Points).ok_or_else(|| {
            CliError::SpatialMetadata(format!(
                "model {name} on point data needs {}",
                dir.join(crate::io::LOCATIONS_FILE).display()
            ))
        }),
        Domain::Areal => data.adjacency.as_ref().map(Structure::Areas).ok_or_else(|| {
            CliError::SpatialMetadata(format!(
                "model {name} on areal data needs {}",
                dir.join(crate::io::ADJACENCY_FILE).display()
            ))
        }),
    }
}

fn run_chains<F>(chains: usize, threads: Option<usize>, spec: &ModelSpec, fit: F) -> CliResult<PosteriorDraws>
where
    F: Fn(&ModelSpec) -> sfofr_core::Result<PosteriorDraws> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        (0..chains)
            .into_par_iter()
            .map(|c| {
                let mut s = spec.clone();
                s.mcmc.chain = c as u64;
                fit(&s)
            })
            .collect()
    });
    let chains = results.into_iter().collect::<sfofr_core::Result<Vec<_>>>()?;
    Ok(PosteriorDraws::concat(chains)?)
}

/// Site-averaged residual curves `mean_t((Ỹ − X̃ψ̄)Φ)`.
fn residual_site_means(coef: &CoefficientSet, draws: &PosteriorDraws) -> CliResult<Vec<f64>> {
    let resid = &coef.y_coef - &coef.x_coef * draws.psi_mean();
    let curves = coef.phi.evaluate(&resid)?;
    Ok(curves.row_iter().map(|r| r.mean()).collect())
}

pub fn run(args: &FitArgs, threads: Option<usize>) -> CliResult<serde_json::Value> {
    let started = Instant::now();
    let mut cfg = args.resolve()?;
    let data = load_dataset(&args.data)?;
    let response = data.require_response(&args.data)?;
    let domain = infer_domain(&cfg, &data);
    let structure = structure(cfg.model, domain, &data, &args.data)?;

    let family: BasisFamily = cfg.basis.into();
    let phi = resolve_basis(family, cfg.k_basis, cfg.gcv_max, data.t_domain(), &data.t_grid, response)?;
    let xi = resolve_basis(family, cfg.g_basis, cfg.gcv_max, data.r_domain(), &data.r_grid, &data.covariate)?;
    cfg.k_basis = BasisCount::Fixed(phi.n_basis());
    cfg.g_basis = BasisCount::Fixed(xi.n_basis());
    let coef = CoefficientSet::new(phi.coefficients(response)?, xi.coefficients(&data.covariate)?, phi, xi)?;
    let n = coef.n();
    let spec = build_spec(&cfg, domain);
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;

    ensure_dir(&args.out)?;
    let mut rank = None;
    let mut mesh_info = None;
    let draws = match (cfg.model, &structure) {
        (Model::Fofr, _) => run_chains(cfg.chains, threads, &spec, |s| fit_fofr(&coef, s))?,
        (Model::Sfofr, Structure::Points(coords)) => {
            run_chains(cfg.chains, threads, &spec, |s| fit_sfofr_continuous(&coef, coords, s))?
        }
        (Model::Sfofr, Structure::Areas(adj)) => {
            run_chains(cfg.chains, threads, &spec, |s| fit_sfofr_discrete(&coef, adj, s))?
        }
        (Model::Psfofr, Structure::Points(coords)) => {
            let bbox = bounding_box(coords);
            let mesh = build_mesh(bbox, cfg.max_edge, cfg.margin)?;
            let p = match cfg.rank {
                Some(p) => p,
                None => rank_for_variance(&mesh_moran_eigenvalues(&mesh), cfg.rank_variance).min(n - coef.g_n()),
            };
            let proj = projection_point(&mesh, coords, p)?;
            mesh_info = Some(MeshInfo {
                bbox,
                max_edge: cfg.max_edge,
                margin: cfg.margin,
                n_vertices: mesh.n_vertices(),
                n_triangles: mesh.triangles.len(),
            });
            write_matrix(&args.out.join(MESH_VERTICES_FILE), &["x".into(), "y".into()], &mesh.vertices)?;
            write_triangles(&args.out.join(MESH_TRIANGLES_FILE), &mesh.triangles)?;
            if let Some(m) = &proj.m_matrix {
                write_matrix(&args.out.join(MESH_BASIS_FILE), &numbered("m", p), m)?;
            }
            rank = Some(p);
            fit_projection(&cfg, threads, &spec, &coef, &proj, &args.out)?
        }
        (Model::Psfofr, Structure::Areas(adj)) => {
            let p = match cfg.rank {
                Some(p) => p,
                None => rank_for_variance(&areal_moran_eigenvalues(&coef.x_coef, adj)?, cfg.rank_variance)
                    .min(n - coef.g_n()),
            };
            let proj = moran_basis_areal(&coef.x_coef, adj, p)?;
            rank = Some(p);
            fit_projection(&cfg, threads, &spec, &coef, &proj, &args.out)?
        }
        (_, Structure::None) => unreachable!("spatial models carry a structure"),
    };

    save_draws(&args.out.join(DRAWS_DIR), &draws)?;
    write_basis(&args.out.join(PHI_FILE), &coef.phi)?;
    write_basis(&args.out.join(XI_FILE), &coef.xi)?;
    if let Some(c) = &data.coords {
        write_locations(&args.out.join(TRAIN_LOCATIONS_FILE), &data.ids, c)?;
    }
    if let Some(a) = &data.adjacency {
        write_adjacency(&args.out.join(TRAIN_ADJACENCY_FILE), &data.ids, a)?;
    }

    let mut diagnostics = diagnose(&draws);
    if let (Domain::Areal, Some(adj)) = (domain, &data.adjacency) {
        let resid = residual_site_means(&coef, &draws)?;
        diagnostics.residual_morans_i = morans_i(&resid, adj, 999, cfg.seed).ok();
    }
    write_json(&args.out.join(DIAGNOSTICS_FILE), &diagnostics)?;

    let meta = RunMeta {
        config: cfg,
        domain,
        data_dir: args.data.clone(),
        ids: data.ids.clone(),
        family,
        t_domain: data.t_domain(),
        r_domain: data.r_domain(),
        k_n: coef.k_n(),
        g_n: coef.g_n(),
        rank,
        mesh: mesh_info,
        threads,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&args.out.join(RUN_FILE), &meta)?;
    Ok(json!({
        "command": "fit",
        "out": args.out,
        "model": meta.config.model,
        "n_draws": draws.n_draws(),
        "k_n": meta.k_n,
        "g_n": meta.g_n,
        "rank": rank,
        "elapsed_seconds": meta.elapsed_seconds,
    }))
}

fn fit_projection(
    cfg: &FitConfig,
    threads: Option<usize>,
    spec: &ModelSpec,
    coef: &CoefficientSet,
    proj: &ProjectionBasis,
    out: &Path,
) -> CliResult<PosteriorDraws> {
    write_matrix(&out.join(PROJECTION_FILE), &numbered("p", proj.rank), &proj.p_matrix)?;
    run_chains(cfg.chains, threads, spec, |s| fit_psfofr(coef, proj, &proj.delta_precision, s))
}

/// Model kind recorded in a run directory.
pub fn load_run(dir: &Path) -> CliResult<RunMeta> {
    read_json(&dir.join(RUN_FILE))
}

impl RunMeta {
    pub fn model_kind(&self) -> ModelKind {
        self.config.model.into()
    }
}
