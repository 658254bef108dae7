use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvcm::basis::{coefficient_curve, uniform_grid, BasisSpec};
use tvcm::data::LongitudinalDataset;
use tvcm::engine::fit_engine;
use tvcm::selection::{select_knots, specs_for, KnotSelection, SelectionConfig};

use crate::config::{resolve, resolve_seed, DataArgs, EngineArgs, KnotRequest, ModelArgs};
use crate::output::{curves_csv, ensure_dir, manifest, write_json, write_text};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,
    /// Pointwise interval level [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// Number of grid points in curves.csv [default: 200]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Output directory [default: tvcm-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed [default: $TVCM_SEED, then 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with any of the options above; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Basis specs from `--knots`, running the PCV search for `auto`.
pub fn resolve_specs(
    data: &LongitudinalDataset,
    model: &ModelArgs,
) -> Result<(Vec<BasisSpec>, Option<KnotSelection>)> {
    let family = model.family()?;
    let degree = model.degree();
    match model.knots(data.covariate_dim() + 1)? {
        KnotRequest::Auto => {
            let selection =
                select_knots(data, &SelectionConfig::new(family, degree, model.k_max()))?;
            log::info!(
                "selected knots {:?} (PCV {})",
                selection.chosen,
                selection.score
            );
            let specs = selection.specs(family, degree, data.time_domain())?;
            Ok((specs, Some(selection)))
        }
        KnotRequest::Fixed(counts) => Ok((
            specs_for(family, degree, &counts, data.time_domain())?,
            None,
        )),
    }
}

pub fn run(args: &FitArgs) -> Result<()> {
    let opts = resolve(args, args.config.as_deref())?;
    let seed = resolve_seed(opts.seed)?;
    let (_, data) = opts.data.load()?;
    let (specs, selection) = resolve_specs(&data, &opts.model)?;
    let engine = opts.engine.engine()?;
    let config = opts.engine.config();
    let level = opts.level.unwrap_or(0.95);
    let fit = fit_engine(&data, &specs, engine, &config, seed)?;

    let grid = uniform_grid(data.time_domain(), opts.grid.unwrap_or(200));
    let mut rows = Vec::new();
    for (r, (spec, block)) in specs.iter().zip(fit.alpha_blocks()).enumerate() {
        let estimate = coefficient_curve(spec, block, &grid)?;
        let band = match &fit.draws {
            Some(d) => Some(d.curve_band(&specs, r, &grid, level)?),
            None => None,
        };
        for (k, (&t, &e)) in grid.iter().zip(&estimate).enumerate() {
            rows.push((r, t, e, band.as_ref().map(|b| (b.lower[k], b.upper[k]))));
        }
    }

    let sigma2 = match (&fit.variational, &fit.draws) {
        (Some(v), _) => v.sigma2_mean(),
        (None, Some(d)) if fit.prior.is_some() => d.sigma2_mean(),
        _ => fit.wls.sigma2_hat,
    };
    let report = json!({
        "engine": engine,
        "seed": seed,
        "n_subjects": data.n_subjects(),
        "n_obs": data.n_obs(),
        "time_domain": data.time_domain(),
        "specs": specs,
        "knots": specs.iter().map(BasisSpec::n_knots).collect::<Vec<_>>(),
        "selection": selection,
        "alpha": fit.alpha.as_slice(),
        "sigma2": sigma2,
        "wls": {
            "alpha_hat": fit.wls.alpha_hat.as_slice(),
            "sigma2_hat": fit.wls.sigma2_hat,
            "hat_trace": fit.wls.hat_trace,
            "weighted_rss": fit.wls.weighted_rss,
            "condition": fit.wls.condition,
        },
        "prior": fit.prior,
        "dic": fit.dic,
        "variational": fit.variational.as_ref().map(|v| v.report()),
        "draws": match &fit.draws {
            Some(d) => json!({
                "source": d.source,
                "n_draws": d.n_draws(),
                "alpha_mean": d.alpha_mean().as_slice(),
                "sigma2_mean": d.sigma2_mean(),
                "level": level,
            }),
            None => serde_json::Value::Null,
        },
    });

    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("tvcm-out"));
    ensure_dir(&out)?;
    let fit_path = out.join("fit.json");
    let curves_path = out.join("curves.csv");
    let manifest_path = out.join("manifest.json");
    write_json(&fit_path, &report)?;
    write_text(&curves_path, &curves_csv(&rows))?;
    let outputs = [fit_path, curves_path, manifest_path.clone()];
    write_json(&manifest_path, &manifest("fit", seed, &opts, &outputs)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}
