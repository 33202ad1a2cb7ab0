//! Posterior draws on disk: `meta.json` plus one little-endian `f64` file per
//! parameter block, row-major with the shape recorded in the meta file.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sfofr_core::{ModelSpec, PosteriorDraws};

use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, read_json, write_json};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub file: String,
    /// Leading axis is the draw index.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub spec: ModelSpec,
    pub n_draws: usize,
    pub n_chains: usize,
    pub g_n: usize,
    pub k_n: usize,
    pub acceptance_rate_rho: Option<f64>,
    pub rho_proposal_sd: Option<f64>,
    pub arrays: Vec<ArrayMeta>,
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> CliResult<()> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_f64s(path: &Path, expected: usize) -> CliResult<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(CliError::schema(
            path,
            format!("expected {} bytes ({expected} values), found {}", expected * 8, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn matrices_row_major(ms: &[DMatrix<f64>]) -> impl Iterator<Item = f64> + '_ {
    ms.iter()
        .flat_map(|m| (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)])))
}

/// Write `draws` under `dir`, creating it if needed.
pub fn save_draws(dir: &Path, draws: &PosteriorDraws) -> CliResult<()> {
    ensure_dir(dir)?;
    let u = draws.n_draws();
    let mut arrays = Vec::new();
    let mut put_matrices = |name: &str, ms: &[DMatrix<f64>]| -> CliResult<()> {
        let (r, c) = ms.first().map_or((0, 0), |m| m.shape());
        let file = format!("{name}.bin");
        write_f64s(&dir.join(&file), matrices_row_major(ms))?;
        arrays.push(ArrayMeta {
            name: name.into(),
            file,
            shape: vec![u, r, c],
        });
        Ok(())
    };
    put_matrices("psi", &draws.psi)?;
    if let Some(re) = &draws.random_effect {
        put_matrices("random_effect", re)?;
    }
    let scalars = [
        ("tau2", Some(&draws.tau2)),
        ("sigma2", draws.sigma2.as_ref()),
        ("precision", draws.precision.as_ref()),
        ("rho", draws.rho.as_ref()),
    ];
    for (name, values) in scalars {
        if let Some(v) = values {
            let file = format!("{name}.bin");
            write_f64s(&dir.join(&file), v.iter().copied())?;
            arrays.push(ArrayMeta {
                name: name.into(),
                file,
                shape: vec![v.len()],
            });
        }
    }
    let meta = DrawsMeta {
        spec: draws.spec.clone(),
        n_draws: u,
        n_chains: draws.n_chains,
        g_n: draws.g_n(),
        k_n: draws.k_n(),
        acceptance_rate_rho: draws.acceptance_rate_rho,
        rho_proposal_sd: draws.rho_proposal_sd,
        arrays,
    };
    write_json(&dir.join(META_FILE), &meta)
}

fn read_matrices(dir: &Path, a: &ArrayMeta, u: usize) -> CliResult<Vec<DMatrix<f64>>> {
    let path = dir.join(&a.file);
    let [lead, r, c] = a.shape[..] else {
        return Err(CliError::schema(&dir.join(META_FILE), format!("{} needs a 3-axis shape", a.name)));
    };
    if lead != u {
        return Err(CliError::Dimension(format!("{}: {lead} draws, expected {u}", a.name)));
    }
    let flat = read_f64s(&path, u * r * c)?;
    Ok(flat.chunks_exact((r * c).max(1)).take(u).map(|s| DMatrix::from_row_slice(r, c, s)).collect())
}

fn read_vector(dir: &Path, a: &ArrayMeta, u: usize) -> CliResult<Vec<f64>> {
    if a.shape != [u] {
        return Err(CliError::Dimension(format!("{}: shape {:?}, expected [{u}]", a.name, a.shape)));
    }
    read_f64s(&dir.join(&a.file), u)
}

pub fn load_draws(dir: &Path) -> CliResult<PosteriorDraws> {
    let meta: DrawsMeta = read_json(&dir.join(META_FILE))?;
    let u = meta.n_draws;
    let find = |name: &str| meta.arrays.iter().find(|a| a.name == name);
    let psi_meta = find("psi").ok_or_else(|| CliError::schema(&dir.join(META_FILE), "no psi array"))?;
    let psi = read_matrices(dir, psi_meta, u)?;
    if psi.first().is_some_and(|m| m.shape() != (meta.g_n, meta.k_n)) {
        return Err(CliError::Dimension("psi draws disagree with g_n × k_n".into()));
    }
    let random_effect = find("random_effect").map(|a| read_matrices(dir, a, u)).transpose()?;
    let tau2_meta = find("tau2").ok_or_else(|| CliError::schema(&dir.join(META_FILE), "no tau2 array"))?;
    let scalar = |name: &str| find(name).map(|a| read_vector(dir, a, u)).transpose();
    Ok(PosteriorDraws {
        psi,
        random_effect,
        tau2: read_vector(dir, tau2_meta, u)?,
        sigma2: scalar("sigma2")?,
        precision: scalar("precision")?,
        rho: scalar("rho")?,
        acceptance_rate_rho: meta.acceptance_rate_rho,
        rho_proposal_sd: meta.rho_proposal_sd,
        spec: meta.spec,
        n_chains: meta.n_chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfofr_core::sampler::ModelKind;
    use sfofr_core::spatial::DomainKind;

    #[test]
    fn draws_round_trip_exactly() {
        let spec = ModelSpec::new(ModelKind::Sfofr, DomainKind::Continuous);
        let draws = PosteriorDraws {
            psi: (0..3).map(|u| DMatrix::from_fn(2, 4, |i, j| (u * 8 + i * 4 + j) as f64 / 3.0)).collect(),
            random_effect: Some((0..3).map(|u| DMatrix::from_fn(5, 4, |i, j| (u + i) as f64 - j as f64 * 0.1)).collect()),
            tau2: vec![0.1, 0.2, 0.3],
            sigma2: Some(vec![1.0, 2.0, 3.0]),
            precision: None,
            rho: Some(vec![0.25, 0.5, 0.125]),
            acceptance_rate_rho: Some(0.3),
            rho_proposal_sd: Some(0.7),
            spec,
            n_chains: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        save_draws(dir.path(), &draws).unwrap();
        assert_eq!(load_draws(dir.path()).unwrap(), draws);
    }

    #[test]
    fn truncated_file_is_a_schema_error() {
        let spec = ModelSpec::new(ModelKind::Fofr, DomainKind::Continuous);
        let draws = PosteriorDraws {
            psi: vec![DMatrix::zeros(2, 2); 2],
            random_effect: None,
            tau2: vec![1.0, 1.0],
            sigma2: None,
            precision: None,
            rho: None,
            acceptance_rate_rho: None,
            rho_proposal_sd: None,
            spec,
            n_chains: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        save_draws(dir.path(), &draws).unwrap();
        fs::write(dir.path().join("tau2.bin"), [0u8; 12]).unwrap();
        assert_eq!(load_draws(dir.path()).unwrap_err().code(), "schema_violation");
    }
}
