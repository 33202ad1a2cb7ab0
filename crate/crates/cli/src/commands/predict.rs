use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sfofr_core::posterior::{krige, score, EffectPredictor, KrigingOptions};
use sfofr_core::projection::{build_mesh, interpolation_matrix};
use sfofr_core::BasisSystem;

use super::fit::{load_run, RunMeta, DRAWS_DIR, MESH_BASIS_FILE, PHI_FILE, TRAIN_LOCATIONS_FILE, XI_FILE};
use crate::config::{unique_alphas, validate_alphas, Domain, Model};
use crate::draws::load_draws;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, load_dataset, read_basis, read_locations, read_matrix, write_json, write_kriging};

pub const PREDICTIONS_FILE: &str = "predictions.json";

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Run directory written by `fit`.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory of the target sites; `response.csv` enables scoring.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Band level (repeatable); one kriging table per level.
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Seed of the predictive simulation; defaults to the fit seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Predict the latent curve without measurement noise.
    #[arg(long)]
    pub no_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaScore {
    pub alpha: f64,
    pub file: String,
    pub mspe: Option<f64>,
    pub mean_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub model: Model,
    pub n_sites: usize,
    pub scores: Vec<AlphaScore>,
}

pub(crate) fn load_bases(run: &Path, meta: &RunMeta) -> CliResult<(BasisSystem, BasisSystem)> {
    let phi = read_basis(&run.join(PHI_FILE), meta.family, meta.t_domain)?;
    let xi = read_basis(&run.join(XI_FILE), meta.family, meta.r_domain)?;
    Ok((phi, xi))
}

fn kriging_file(alpha: f64, single: bool) -> String {
    if single {
        "kriging.csv".into()
    } else {
        format!("kriging_{alpha}.csv")
    }
}

pub fn run(args: &PredictArgs) -> CliResult<serde_json::Value> {
    let meta = load_run(&args.run)?;
    let alphas = if args.alphas.is_empty() {
        meta.config.alphas.clone()
    } else {
        unique_alphas(&args.alphas)
    };
    validate_alphas(&alphas)?;
    let draws = load_draws(&args.run.join(DRAWS_DIR))?;
    let (phi, xi) = load_bases(&args.run, &meta)?;
    let data = load_dataset(&args.data)?;
    if data.r_grid.len() != xi.n_grid() {
        return Err(CliError::Dimension(format!(
            "target covariate grid has {} points, the fitted basis {}",
            data.r_grid.len(),
            xi.n_grid()
        )));
    }
    let x_star = xi.coefficients(&data.covariate)?;

    let target_coords = || {
        data.coords.as_ref().ok_or_else(|| {
            CliError::SpatialMetadata(format!(
                "kriging with {:?} needs {}",
                meta.config.model,
                args.data.join(crate::io::LOCATIONS_FILE).display()
            ))
        })
    };
    let projection_rows: DMatrix<f64>;
    let train_coords: DMatrix<f64>;
    let predictor = match (meta.config.model, meta.domain) {
        (Model::Fofr, _) => EffectPredictor::None,
        (_, Domain::Areal) => {
            return Err(CliError::Unsupported(
                "kriging at new areal units; refit with the target units included".into(),
            ))
        }
        (Model::Psfofr, Domain::Point) => {
            let info = meta
                .mesh
                .ok_or_else(|| CliError::schema(&args.run.join(super::fit::RUN_FILE), "no mesh settings"))?;
            let mesh = build_mesh(info.bbox, info.max_edge, info.margin)?;
            let (_, m) = read_matrix(&args.run.join(MESH_BASIS_FILE))?;
            if m.nrows() != mesh.n_vertices() {
                return Err(CliError::Dimension(format!(
                    "mesh basis has {} rows, rebuilt mesh {} vertices",
                    m.nrows(),
                    mesh.n_vertices()
                )));
            }
            projection_rows = interpolation_matrix(&mesh, target_coords()?)? * m;
            EffectPredictor::Projection(&projection_rows)
        }
        (Model::Sfofr, Domain::Point) => {
            train_coords = read_locations(&args.run.join(TRAIN_LOCATIONS_FILE))?.1;
            EffectPredictor::Matern {
                train_coords: &train_coords,
                target_coords: target_coords()?,
            }
        }
    };

    ensure_dir(&args.out)?;
    let mut scores = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let options = KrigingOptions {
            alpha,
            seed: args.seed.unwrap_or(meta.config.seed),
            predictive_noise: !args.no_noise,
            keep_draws: false,
        };
        let result = krige(&draws, &x_star, &predictor, &phi, &options)?;
        let file = kriging_file(alpha, alphas.len() == 1);
        write_kriging(
            &args.out.join(&file),
            &data.ids,
            &result.t_grid,
            &result.mean_curves,
            &result.lower,
            &result.upper,
        )?;
        let s = data
            .response
            .as_ref()
            .map(|y| score(&result.mean_curves, y, Some((&result.lower, &result.upper))))
            .transpose()?;
        scores.push(AlphaScore {
            alpha,
            file,
            mspe: s.map(|s| s.mspe),
            mean_coverage: s.and_then(|s| s.mean_coverage),
        });
    }
    let report = PredictionReport {
        model: meta.config.model,
        n_sites: data.n_sites(),
        scores,
    };
    write_json(&args.out.join(PREDICTIONS_FILE), &report)?;
    Ok(json!({ "command": "predict", "out": args.out, "report": report }))
}
