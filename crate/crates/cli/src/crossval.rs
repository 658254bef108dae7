use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvcm::basis::BasisSpec;
use tvcm::selection::crossval_amse;

use crate::config::{resolve, resolve_seed, DataArgs, EngineArgs, ModelArgs};
use crate::fit::resolve_specs;
use crate::output::emit_json;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CrossvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,
    /// Number of random observation folds [default: 10]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Random seed [default: $TVCM_SEED, then 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the JSON result to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the options above; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(args: &CrossvalArgs) -> Result<()> {
    let opts = resolve(args, args.config.as_deref())?;
    let seed = resolve_seed(opts.seed)?;
    let (_, data) = opts.data.load()?;
    // knots chosen by `auto` use all observations, before the split
    let (specs, _) = resolve_specs(&data, &opts.model)?;
    let engine = opts.engine.engine()?;
    let folds = opts.folds.unwrap_or(10);
    let mse = crossval_amse(&data, &specs, engine, &opts.engine.config(), folds, seed)?;
    let value = json!({
        "engine": engine,
        "folds": folds,
        "seed": seed,
        "knots": specs.iter().map(BasisSpec::n_knots).collect::<Vec<_>>(),
        "n_obs": data.n_obs(),
        "cv_mse": mse,
    });
    emit_json(&value, opts.out.as_deref())
}
