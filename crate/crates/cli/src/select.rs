use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvcm::selection::{select_knots, Criterion, SearchStrategy, SelectionConfig};

use crate::config::{resolve, DataArgs};
use crate::output::emit_json;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Basis family: radial or tpower [default: radial]
    #[arg(long)]
    pub family: Option<String>,
    /// Polynomial degree [default: 2]
    #[arg(long)]
    pub degree: Option<usize>,
    /// Largest knot count per coefficient [default: 10]
    #[arg(long)]
    pub k_max: Option<usize>,
    /// auto, grid or coordinate [default: auto]
    #[arg(long)]
    pub strategy: Option<String>,
    /// pcv (trace form) or loo (explicit leave-one-point-out) [default: pcv]
    #[arg(long)]
    pub criterion: Option<String>,
    /// Also write the JSON result to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the options above; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(args: &SelectArgs) -> Result<()> {
    let opts = resolve(args, args.config.as_deref())?;
    let (_, data) = opts.data.load()?;
    let family = opts.family.as_deref().unwrap_or("radial").parse()?;
    let mut config =
        SelectionConfig::new(family, opts.degree.unwrap_or(2), opts.k_max.unwrap_or(10));
    config.strategy = match opts.strategy.as_deref().unwrap_or("auto") {
        "auto" => None,
        "grid" | "full" => Some(SearchStrategy::FullGrid),
        "coordinate" => Some(SearchStrategy::Coordinate),
        other => bail!("unknown strategy `{other}` (expected auto, grid or coordinate)"),
    };
    config.criterion = match opts.criterion.as_deref().unwrap_or("pcv") {
        "pcv" => Criterion::Pcv,
        "loo" => Criterion::LeaveOnePointOut,
        other => bail!("unknown criterion `{other}` (expected pcv or loo)"),
    };
    let sel = select_knots(&data, &config)?;
    let table: Vec<_> = sel
        .candidates
        .iter()
        .map(|c| json!({ "knots": c.knots, "score": c.score }))
        .collect();
    let value = json!({
        "family": family,
        "degree": config.degree,
        "k_max": config.k_max,
        "strategy": sel.strategy,
        "criterion": sel.criterion,
        "chosen": sel.chosen,
        "score": sel.score,
        "candidates": table,
    });
    emit_json(&value, opts.out.as_deref())
}
