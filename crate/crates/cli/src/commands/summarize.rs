use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sfofr_core::posterior::{contour_avoiding_surface, score_surface, summarize_surface, SurfaceSummary};
use sfofr_core::TensorSurface;

use super::fit::{load_run, Diagnostics, DIAGNOSTICS_FILE, DRAWS_DIR};
use super::predict::{load_bases, PredictionReport, PREDICTIONS_FILE};
use super::simulate::PSI_SURFACE_FILE;
use crate::config::{unique_alphas, validate_alphas, Model};
use crate::draws::load_draws;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, read_json, read_surface, write_json, write_matrix};

pub const SURFACE_FILE: &str = "surface.csv";
pub const CONTOUR_FILE: &str = "contour.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Run directory written by `fit`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Band level (repeatable).
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Directory holding the true surface `psi_surface.csv`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory of `predict`, whose scores are folded in.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: Model,
    pub n_draws: usize,
    pub alphas: Vec<f64>,
    pub m_alpha: Vec<f64>,
    /// Share of surface points flagged significant at each level.
    pub significant_fraction: Vec<f64>,
    /// Level of the contour-avoiding region in `contour.csv`.
    pub contour_alpha: f64,
    /// Root mean squared error of the posterior-mean surface.
    pub mse: Option<f64>,
    pub mspe: Option<f64>,
    pub coverage: Option<f64>,
    pub predictions: Option<PredictionReport>,
    pub diagnostics: Diagnostics,
}

/// `r, t, mean, sd, lower_α…, upper_α…, simbas, significant_α…, width_α…`.
pub fn surface_table(s: &SurfaceSummary) -> (Vec<String>, DMatrix<f64>) {
    let mut head: Vec<String> = ["r", "t", "mean", "sd"].iter().map(|c| c.to_string()).collect();
    for a in &s.alphas {
        head.push(format!("lower_{a}"));
        head.push(format!("upper_{a}"));
    }
    head.push("simbas".into());
    head.extend(s.alphas.iter().map(|a| format!("significant_{a}")));
    head.extend(s.alphas.iter().map(|a| format!("width_{a}")));
    let (nr, nt) = s.mean.values.shape();
    let mut table = DMatrix::zeros(nr * nt, head.len());
    for i in 0..nr {
        for j in 0..nt {
            let row = i * nt + j;
            let mut cells = vec![s.mean.r_grid[i], s.mean.t_grid[j], s.mean.values[(i, j)], s.sd.values[(i, j)]];
            for (lo, hi) in s.lower.iter().zip(&s.upper) {
                cells.push(lo.values[(i, j)]);
                cells.push(hi.values[(i, j)]);
            }
            cells.push(s.simbas.values[(i, j)]);
            cells.extend(s.significance.iter().map(|m| m.values[(i, j)]));
            cells.extend(s.lower.iter().zip(&s.upper).map(|(lo, hi)| hi.values[(i, j)] - lo.values[(i, j)]));
            for (c, v) in cells.into_iter().enumerate() {
                table[(row, c)] = v;
            }
        }
    }
    (head, table)
}

fn lattice(surface: &TensorSurface, f: impl Fn(usize, usize) -> Vec<f64>, head: &[&str]) -> DMatrix<f64> {
    let (nr, nt) = surface.values.shape();
    let mut table = DMatrix::zeros(nr * nt, head.len());
    for i in 0..nr {
        for j in 0..nt {
            for (c, v) in f(i, j).into_iter().enumerate() {
                table[(i * nt + j, c)] = v;
            }
        }
    }
    table
}

pub fn run(args: &SummarizeArgs) -> CliResult<serde_json::Value> {
    let meta = load_run(&args.run)?;
    let alphas = if args.alphas.is_empty() {
        meta.config.alphas.clone()
    } else {
        unique_alphas(&args.alphas)
    };
    validate_alphas(&alphas)?;
    let draws = load_draws(&args.run.join(DRAWS_DIR))?;
    let (phi, xi) = load_bases(&args.run, &meta)?;
    let summary = summarize_surface(&draws.psi, &xi, &phi, &alphas)?;
    let contour = contour_avoiding_surface(&draws.psi, &xi, &phi, alphas[0])?;

    ensure_dir(&args.out)?;
    let (head, table) = surface_table(&summary);
    write_matrix(&args.out.join(SURFACE_FILE), &head, &table)?;
    let contour_head = ["r", "t", "f0", "mask"];
    let contour_table = lattice(
        &summary.mean,
        |i, j| vec![summary.mean.r_grid[i], summary.mean.t_grid[j], contour.f0[(i, j)], contour.mask[(i, j)]],
        &contour_head,
    );
    write_matrix(
        &args.out.join(CONTOUR_FILE),
        &contour_head.map(String::from),
        &contour_table,
    )?;

    let mse = match &args.truth {
        None => None,
        Some(dir) => {
            let truth = read_surface(&dir.join(PSI_SURFACE_FILE))?;
            if truth.values.shape() != summary.mean.values.shape() {
                return Err(CliError::Dimension(format!(
                    "true surface is {:?}, estimate {:?}",
                    truth.values.shape(),
                    summary.mean.values.shape()
                )));
            }
            Some(score_surface(&summary.mean.values, &truth.values)?)
        }
    };
    let predictions: Option<PredictionReport> = args
        .predictions
        .as_ref()
        .map(|d| read_json(&d.join(PREDICTIONS_FILE)))
        .transpose()?;
    let first_score = predictions.as_ref().and_then(|p| p.scores.first().cloned());
    let n_points = summary.mean.values.len() as f64;
    let out = Summary {
        model: meta.config.model,
        n_draws: draws.n_draws(),
        significant_fraction: summary.significance.iter().map(|m| m.values.sum() / n_points).collect(),
        alphas,
        m_alpha: summary.m_alpha.clone(),
        contour_alpha: summary.alphas[0],
        mse,
        mspe: first_score.as_ref().and_then(|s| s.mspe),
        coverage: first_score.as_ref().and_then(|s| s.mean_coverage),
        predictions,
        diagnostics: read_json(&args.run.join(DIAGNOSTICS_FILE))?,
    };
    write_json(&args.out.join(SUMMARY_FILE), &out)?;
    Ok(json!({
        "command": "summarize",
        "out": args.out,
        "mse": out.mse,
        "mspe": out.mspe,
        "coverage": out.coverage,
        "m_alpha": out.m_alpha,
    }))
}
