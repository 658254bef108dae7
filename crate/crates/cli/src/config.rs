//! Option resolution: built-in defaults, then a JSON config file, then flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use tvcm::basis::BasisFamily;
use tvcm::data::{ingest_csv, CsvSchema, LongitudinalDataset};
use tvcm::engine::{Engine, EngineConfig};
use tvcm::vb::VbConfig;

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "TVCM_SEED";

/// Merge `flags` over the JSON object in `config`. Keys in the file use the
/// flag names with underscores; unknown keys are rejected.
pub fn resolve<T>(flags: &T, config: Option<&Path>) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(mut merged) = file else {
        bail!("config {} must hold a JSON object", path.display());
    };
    let known: BTreeSet<String> = match serde_json::to_value(T::default())? {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => BTreeSet::new(),
    };
    if let Some(bad) = merged.keys().find(|k| !known.contains(*k)) {
        bail!("unknown key `{bad}` in config {}", path.display());
    }
    if let Value::Object(set) = serde_json::to_value(flags)? {
        for (k, v) in set {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .with_context(|| format!("invalid values in config {}", path.display()))
}

/// `--seed`, then the config file, then `TVCM_SEED`, then the default.
pub fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Long-format CSV, one row per measurement.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Subject id column [default: subject]
    #[arg(long)]
    pub subject_col: Option<String>,
    /// Time column [default: time]
    #[arg(long)]
    pub time_col: Option<String>,
    /// Response column [default: y]
    #[arg(long)]
    pub response_col: Option<String>,
    /// Covariate columns, comma separated [default: all remaining columns]
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

impl DataArgs {
    pub fn schema(&self) -> CsvSchema {
        let d = CsvSchema::default();
        CsvSchema {
            subject: self.subject_col.clone().unwrap_or(d.subject),
            time: self.time_col.clone().unwrap_or(d.time),
            response: self.response_col.clone().unwrap_or(d.response),
            covariates: self.covariates.clone(),
            time_domain: None,
        }
    }

    pub fn load(&self) -> Result<(PathBuf, LongitudinalDataset)> {
        let path = self.data.clone().context("--data is required")?;
        let data = ingest_csv(&path, &self.schema())
            .with_context(|| format!("loading {}", path.display()))?;
        Ok((path, data))
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Basis family: radial or tpower [default: radial]
    #[arg(long)]
    pub family: Option<String>,
    /// Polynomial degree of the basis [default: 2]
    #[arg(long)]
    pub degree: Option<usize>,
    /// `auto`, one count for every coefficient, or one count per coefficient
    /// separated by commas [default: auto]
    #[arg(long)]
    pub knots: Option<String>,
    /// Largest knot count searched by `--knots auto` [default: 10]
    #[arg(long)]
    pub k_max: Option<usize>,
}

/// Knot counts requested on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum KnotRequest {
    Auto,
    Fixed(Vec<usize>),
}

impl ModelArgs {
    pub fn family(&self) -> Result<BasisFamily> {
        Ok(self.family.as_deref().unwrap_or("radial").parse()?)
    }

    pub fn degree(&self) -> usize {
        self.degree.unwrap_or(2)
    }

    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(10)
    }

    pub fn knots(&self, coefficients: usize) -> Result<KnotRequest> {
        let raw = self.knots.as_deref().unwrap_or("auto").trim();
        if raw.eq_ignore_ascii_case("auto") {
            return Ok(KnotRequest::Auto);
        }
        let counts = raw
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("--knots expects `auto` or counts, got `{raw}`"))?;
        match counts.len() {
            1 => Ok(KnotRequest::Fixed(vec![counts[0]; coefficients])),
            k if k == coefficients => Ok(KnotRequest::Fixed(counts)),
            k => bail!("--knots lists {k} counts but the model has {coefficients} coefficients"),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EngineArgs {
    /// Inference engine: wls, gibbs or vb [default: wls]
    #[arg(long)]
    pub engine: Option<String>,
    /// Bootstrap replicates for the wls engine [default: 0]
    #[arg(long)]
    pub boot: Option<usize>,
    /// Retained posterior draws [default: 2000]
    #[arg(long)]
    pub draws: Option<usize>,
    /// Gibbs burn-in iterations [default: 500]
    #[arg(long)]
    pub burnin: Option<usize>,
    /// VB stopping tolerance on the ELBO increase [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,
    /// VB iteration cap [default: 500]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Worker threads for bootstrap and replications [default: 1]
    #[arg(long)]
    pub threads: Option<usize>,
}

impl EngineArgs {
    pub fn engine(&self) -> Result<Engine> {
        Ok(self.engine.as_deref().unwrap_or("wls").parse()?)
    }

    pub fn config(&self) -> EngineConfig {
        let d = EngineConfig::default();
        EngineConfig {
            boot: self.boot.unwrap_or(d.boot),
            draws: self.draws.unwrap_or(d.draws),
            burnin: self.burnin.unwrap_or(d.burnin),
            vb: VbConfig {
                tol: self.tol.unwrap_or(d.vb.tol),
                max_iters: self.max_iters.unwrap_or(d.vb.max_iters),
            },
            threads: self.threads.unwrap_or(d.threads).max(1),
        }
    }
}
