use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;
use sfofr_core::simulate::{generate, SimulationConfig, TruePsi, DOMAIN};
use sfofr_core::FunctionalDataset;

use crate::error::{CliError, CliResult};
use crate::io::{
    ensure_dir, numbered, read_json, write_basis, write_dataset, write_json, write_matrix, write_surface, DatasetDir,
    DatasetMeta,
};

pub const TRUTH_DIR: &str = "truth";
pub const PSI_SURFACE_FILE: &str = "psi_surface.csv";
pub const PSI_COEF_FILE: &str = "psi_coef.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsiShape {
    Gaussian,
    Complex,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regression surface to simulate from.
    #[arg(long, value_enum)]
    pub psi: Option<PsiShape>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub n_basis: Option<usize>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Omit the spatial random effect.
    #[arg(long)]
    pub no_spatial: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn resolve(&self) -> CliResult<SimulationConfig> {
        let mut cfg: SimulationConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => SimulationConfig::default(),
        };
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.psi {
            cfg.psi = match v {
                PsiShape::Gaussian => TruePsi::Gaussian,
                PsiShape::Complex => TruePsi::Complex,
            };
        }
        if let Some(v) = self.train_frac {
            cfg.train_frac = v;
        }
        if let Some(v) = self.n_basis {
            cfg.n_basis = v;
        }
        if let Some(v) = self.tau2 {
            cfg.tau2 = v;
        }
        if let Some(v) = self.sigma2 {
            cfg.sigma2 = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if self.no_spatial {
            cfg.spatial_effect = false;
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn to_dir(ds: &FunctionalDataset) -> DatasetDir {
    DatasetDir {
        ids: ds.ids.clone(),
        t_grid: ds.t_grid.clone(),
        r_grid: ds.r_grid.clone(),
        response: Some(ds.response.clone()),
        covariate: ds.covariate.clone(),
        coords: ds.spatial.as_ref().and_then(|s| s.coords().cloned()),
        adjacency: None,
        meta: DatasetMeta {
            t_domain: Some(DOMAIN),
            r_domain: Some(DOMAIN),
        },
    }
}

/// Writes `train/`, `test/` and `truth/` under `--out`.
pub fn run(args: &SimulateArgs) -> CliResult<serde_json::Value> {
    let cfg = args.resolve()?;
    let sim = generate(&cfg)?;
    ensure_dir(&args.out)?;
    write_dataset(&args.out.join("train"), &to_dir(&sim.train))?;
    if !sim.truth.test.is_empty() {
        write_dataset(&args.out.join("test"), &to_dir(&sim.test))?;
    }
    let truth = args.out.join(TRUTH_DIR);
    ensure_dir(&truth)?;
    let t = &sim.truth;
    let k = t.basis.n_basis();
    write_matrix(&truth.join(PSI_COEF_FILE), &numbered("phi", k), &t.psi_coef)?;
    write_surface(&truth.join(PSI_SURFACE_FILE), &t.psi_surface)?;
    write_matrix(&truth.join("w_coef.csv"), &numbered("phi", k), &t.w_coef)?;
    write_basis(&truth.join("basis.csv"), &t.basis)?;
    write_json(&truth.join("simulation.json"), &cfg)?;
    Ok(json!({
        "command": "simulate",
        "out": args.out,
        "n_train": t.train.len(),
        "n_test": t.test.len(),
        "config": cfg,
    }))
}
