//! Run configuration: JSON file values with command-line overrides.

use std::fmt;
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sfofr_core::sampler::{ModelKind, Priors};
use sfofr_core::spatial::DomainKind;
use sfofr_core::BasisFamily;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Fofr,
    Sfofr,
    Psfofr,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Fofr => ModelKind::Fofr,
            Model::Sfofr => ModelKind::Sfofr,
            Model::Psfofr => ModelKind::Psfofr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Point,
    Areal,
}

impl From<Domain> for DomainKind {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Point => DomainKind::Continuous,
            Domain::Areal => DomainKind::Discrete,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Bspline,
    Fourier,
    Fpc,
}

impl From<Basis> for BasisFamily {
    fn from(b: Basis) -> Self {
        match b {
            Basis::Bspline => BasisFamily::Bspline,
            Basis::Fourier => BasisFamily::Fourier,
            Basis::Fpc => BasisFamily::Fpc,
        }
    }
}

/// Number of basis functions: chosen by GCV or given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasisCount {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for BasisCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected `auto` or a positive integer, got `{s}`")),
            Ok(k) => Ok(Self::Fixed(k)),
        }
    }
}

impl fmt::Display for BasisCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for BasisCount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BasisCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("basis count must be positive")),
            Raw::Count(k) => Ok(Self::Fixed(k)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Settings of `fit`, defaulting to the simulation-study protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: Model,
    /// Inferred from the dataset's spatial files when absent.
    pub domain: Option<Domain>,
    pub basis: Basis,
    /// Response basis size.
    pub k_basis: BasisCount,
    /// Covariate basis size.
    pub g_basis: BasisCount,
    /// Largest basis size tried by GCV.
    pub gcv_max: usize,
    /// Projection rank; chosen from `rank_variance` when absent.
    pub rank: Option<usize>,
    /// Share of the positive Moran eigenvalue mass the default rank reaches.
    pub rank_variance: f64,
    pub max_edge: f64,
    pub margin: f64,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub alphas: Vec<f64>,
    pub appendix_literal: bool,
    pub smoothness: f64,
    pub priors: Priors,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: Model::Psfofr,
            domain: None,
            basis: Basis::Bspline,
            k_basis: BasisCount::Auto,
            g_basis: BasisCount::Auto,
            gcv_max: 30,
            rank: None,
            rank_variance: 0.9,
            max_edge: 0.04,
            margin: 0.05,
            iters: 70_000,
            burnin: 50_000,
            thin: 20,
            seed: 1,
            chains: 1,
            alphas: vec![0.05],
            appendix_literal: false,
            smoothness: 0.5,
            priors: Priors::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.chains == 0 {
            return Err(CliError::Config("chains must be at least 1".into()));
        }
        if !(self.max_edge > 0.0 && self.margin >= 0.0) {
            return Err(CliError::Config("max_edge must be positive and margin non-negative".into()));
        }
        validate_alphas(&self.alphas)?;
        if !(self.rank_variance > 0.0 && self.rank_variance <= 1.0) {
            return Err(CliError::Config("rank_variance must lie in (0, 1]".into()));
        }
        if self.rank == Some(0) {
            return Err(CliError::Config("rank must be positive".into()));
        }
        Ok(())
    }
}

pub fn validate_alphas(alphas: &[f64]) -> CliResult<()> {
    if alphas.is_empty() {
        return Err(CliError::Config("at least one alpha is required".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(CliError::Config(format!("alpha {a} is outside (0, 1)")));
    }
    Ok(())
}

/// Deduplicated alphas in the order given.
pub fn unique_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(alphas.len());
    for &a in alphas {
        if !out.contains(&a) {
            out.push(a);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_count_parses_and_serializes() {
        assert_eq!("auto".parse::<BasisCount>().unwrap(), BasisCount::Auto);
        assert_eq!("15".parse::<BasisCount>().unwrap(), BasisCount::Fixed(15));
        assert!("0".parse::<BasisCount>().is_err());
        let json = serde_json::to_string(&[BasisCount::Auto, BasisCount::Fixed(7)]).unwrap();
        assert_eq!(json, r#"["auto",7]"#);
        let back: Vec<BasisCount> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![BasisCount::Auto, BasisCount::Fixed(7)]);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let cfg: FitConfig = serde_json::from_str(r#"{"model": "fofr", "k_basis": 9}"#).unwrap();
        assert_eq!(cfg.model, Model::Fofr);
        assert_eq!(cfg.k_basis, BasisCount::Fixed(9));
        assert_eq!(cfg.iters, 70_000);
        assert!(serde_json::from_str::<FitConfig>(r#"{"modle": "fofr"}"#).is_err());
    }
}
