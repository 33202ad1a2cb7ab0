//! Subcommand implementations.

pub mod baseline_uk;
pub mod fit;
pub mod predict;
pub mod simulate;
pub mod summarize;

use nalgebra::DMatrix;
use sfofr_core::curves::{build_basis, gcv_select};
use sfofr_core::{BasisFamily, BasisSystem};

use crate::config::BasisCount;
use crate::error::{CliError, CliResult};

/// GCV candidate sizes valid for `family` on a grid of `n_grid` points.
fn gcv_candidates(family: BasisFamily, max: usize, n_grid: usize, n_curves: usize) -> Vec<usize> {
    let top = max.min(n_grid.saturating_sub(1));
    match family {
        BasisFamily::Bspline => (4..=top).collect(),
        BasisFamily::Fourier => (3..=top).step_by(2).collect(),
        BasisFamily::Fpc => (1..=top.min(n_curves.saturating_sub(1))).collect(),
    }
}

/// Basis of the requested size, running GCV when the size is `auto`.
pub(crate) fn resolve_basis(
    family: BasisFamily,
    count: BasisCount,
    gcv_max: usize,
    domain: (f64, f64),
    grid: &[f64],
    curves: &DMatrix<f64>,
) -> CliResult<BasisSystem> {
    let k = match count {
        BasisCount::Fixed(k) => k,
        BasisCount::Auto => {
            let candidates = gcv_candidates(family, gcv_max, grid.len(), curves.nrows());
            if candidates.is_empty() {
                return Err(CliError::Config("no admissible basis size for GCV".into()));
            }
            gcv_select(curves, grid, domain, family, &candidates)?
        }
    };
    Ok(build_basis(family, domain, k, grid, curves)?)
}
