use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sfofr_core::baseline::{fitted_variogram_curve, uk_predict, UkConfig};
use sfofr_core::basis::quadrature_weights;
use sfofr_core::posterior::score;
use sfofr_core::spatial::{FittedVariogram, VariogramModel};
use sfofr_core::BasisFamily;

use super::resolve_basis;
use crate::config::{Basis, BasisCount};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, load_dataset, write_curves, write_json, write_variogram, VariogramRow};

pub const UK_PREDICTIONS_FILE: &str = "uk_predictions.csv";
pub const VARIOGRAM_FILE: &str = "variogram.csv";
pub const UK_REPORT_FILE: &str = "uk.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariogramArg {
    Gaussian,
    Exponential,
}

#[derive(Debug, Args)]
pub struct BaselineUkArgs {
    /// Training dataset directory (point-level).
    #[arg(long)]
    pub data: PathBuf,
    /// Target dataset directory; `response.csv` enables scoring.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub variogram: VariogramArg,
    #[arg(long, default_value_t = 15)]
    pub n_bins: usize,
    /// Covariate basis used for the drift covariates.
    #[arg(long, value_enum, default_value = "bspline")]
    pub basis: Basis,
    #[arg(long, default_value = "auto")]
    pub g_basis: BasisCount,
    #[arg(long, default_value_t = 30)]
    pub gcv_max: usize,
    /// Use only the first N drift covariates.
    #[arg(long)]
    pub drift_terms: Option<usize>,
    /// Ordinary kriging (intercept-only drift).
    #[arg(long)]
    pub no_drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UkReport {
    pub n_sites: usize,
    pub n_targets: usize,
    pub drift_covariates: usize,
    pub variogram: FittedVariogram,
    pub unbiasedness_residual: f64,
    pub mspe: Option<f64>,
}

pub fn run(args: &BaselineUkArgs) -> CliResult<serde_json::Value> {
    let train = load_dataset(&args.data)?;
    let targets = load_dataset(&args.targets)?;
    let response = train.require_response(&args.data)?;
    let coords = train.coords.as_ref().ok_or_else(|| {
        CliError::SpatialMetadata(format!("universal kriging needs {}", args.data.join(crate::io::LOCATIONS_FILE).display()))
    })?;
    let target_coords = targets.coords.as_ref().ok_or_else(|| {
        CliError::SpatialMetadata(format!(
            "universal kriging needs {}",
            args.targets.join(crate::io::LOCATIONS_FILE).display()
        ))
    })?;
    if targets.r_grid != train.r_grid {
        return Err(CliError::Dimension("target covariate grid differs from the training grid".into()));
    }

    let (covariates, target_covariates) = if args.no_drift {
        (None, None)
    } else {
        let family: BasisFamily = args.basis.into();
        let xi = resolve_basis(family, args.g_basis, args.gcv_max, train.r_domain(), &train.r_grid, &train.covariate)?;
        (Some(xi.coefficients(&train.covariate)?), Some(xi.coefficients(&targets.covariate)?))
    };
    let config = UkConfig {
        model: match args.variogram {
            VariogramArg::Gaussian => VariogramModel::Gaussian,
            VariogramArg::Exponential => VariogramModel::Exponential,
        },
        n_bins: args.n_bins,
        drift_terms: args.drift_terms,
        variogram: None,
    };
    let weights = quadrature_weights(&train.t_grid, train.t_domain())?;
    let (pred, system) = uk_predict(
        response,
        &weights,
        covariates.as_ref(),
        coords,
        target_coords,
        target_covariates.as_ref(),
        &config,
    )?;

    ensure_dir(&args.out)?;
    write_curves(&args.out.join(UK_PREDICTIONS_FILE), &targets.ids, &train.t_grid, &pred)?;
    if let Some(emp) = &system.empirical {
        let fitted = fitted_variogram_curve(&system.variogram, &emp.lags);
        let rows: Vec<VariogramRow> = (0..emp.lags.len())
            .map(|i| VariogramRow {
                lag: emp.lags[i],
                gamma: Some(emp.gamma[i]),
                n_pairs: Some(emp.n_pairs[i]),
                fitted_gamma: fitted[i],
            })
            .collect();
        write_variogram(&args.out.join(VARIOGRAM_FILE), &rows)?;
    }
    let mspe = targets
        .response
        .as_ref()
        .map(|y| score(&pred, y, None).map(|s| s.mspe))
        .transpose()?;
    let report = UkReport {
        n_sites: train.n_sites(),
        n_targets: targets.n_sites(),
        drift_covariates: system.drift.ncols() - 1,
        variogram: system.variogram,
        unbiasedness_residual: system.unbiasedness_residual(),
        mspe,
    };
    write_json(&args.out.join(UK_REPORT_FILE), &report)?;
    Ok(json!({ "command": "baseline-uk", "out": args.out, "report": report }))
}
