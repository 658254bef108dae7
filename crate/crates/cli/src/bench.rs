use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvcm::basis::{build_design, BasisSpec};
use tvcm::data::subject_uniform_weights;
use tvcm::engine::{time_draws, Engine, EngineConfig};
use tvcm::frequentist::fit_wls;
use tvcm::rng::derive_seed;
use tvcm::selection::{select_knots, SelectionConfig};
use tvcm::simgen::{join_knots, Scenario, Scenario1Config, Scenario2Config};
use tvcm::vb::VbConfig;

use crate::config::{resolve, resolve_seed};
use crate::output::{print_stdout, write_json};
use crate::simulate::ScenarioArgs;

#[derive(Debug, Clone, Serialize)]
struct BenchRow {
    scenario: u8,
    n: usize,
    n_obs: usize,
    knots: Vec<usize>,
    millis: BTreeMap<Engine, f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    /// Sample sizes, comma separated; overrides --n [default: --n]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// gibbs, vb or both [default: both]
    #[arg(long)]
    pub engine: Option<String>,
    /// Basis family [default: radial]
    #[arg(long)]
    pub family: Option<String>,
    /// Largest knot count searched per coefficient [default: 10]
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Draws generated per timing [default: 2000]
    #[arg(long)]
    pub draws: Option<usize>,
    /// Gibbs burn-in [default: 500]
    #[arg(long)]
    pub burnin: Option<usize>,
    /// VB tolerance [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Timed repetitions per cell; the median is reported [default: 5]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed [default: $TVCM_SEED, then 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the table as JSON to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the options above; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let opts = resolve(args, args.config.as_deref())?;
    let seed = resolve_seed(opts.seed)?;
    let engines = match opts.engine.as_deref().unwrap_or("both") {
        "both" => vec![Engine::Gibbs, Engine::Vb],
        "gibbs" | "mc" => vec![Engine::Gibbs],
        "vb" => vec![Engine::Vb],
        other => bail!("unknown engine `{other}` (expected gibbs, vb or both)"),
    };
    let family = opts.family.as_deref().unwrap_or("radial").parse()?;
    let reps = opts.reps.unwrap_or(5).max(1);
    let d = EngineConfig::default();
    let config = EngineConfig {
        draws: opts.draws.unwrap_or(d.draws),
        burnin: opts.burnin.unwrap_or(d.burnin),
        vb: VbConfig {
            tol: opts.tol.unwrap_or(d.vb.tol),
            ..d.vb
        },
        ..d
    };
    let base = opts.scenario.scenario(2)?;
    let sizes = match &opts.sizes {
        Some(s) => s.clone(),
        None => vec![match base {
            Scenario::One(c) => c.n,
            Scenario::Two(c) => c.n,
        }],
    };

    let mut rows = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let scenario = match base {
            Scenario::One(c) => Scenario::One(Scenario1Config { n, ..c }),
            Scenario::Two(c) => Scenario::Two(Scenario2Config { n, ..c }),
        };
        let data_seed = derive_seed(seed, i as u64);
        let (data, _) = scenario.generate(data_seed)?;
        let sel = select_knots(
            &data,
            &SelectionConfig::new(family, 2, opts.k_max.unwrap_or(10)),
        )?;
        let specs: Vec<BasisSpec> = sel.specs(family, 2, data.time_domain())?;
        let bundle = build_design(&data, &specs, &subject_uniform_weights(&data))?;
        let wls = fit_wls(&bundle)?;
        let mut millis = BTreeMap::new();
        for &engine in &engines {
            let times = (0..reps)
                .map(|r| {
                    Ok(time_draws(
                        &bundle,
                        &wls,
                        engine,
                        &config,
                        derive_seed(data_seed, r as u64),
                    )?
                    .0)
                })
                .collect::<Result<Vec<f64>>>()?;
            millis.insert(engine, median(times));
        }
        rows.push(BenchRow {
            scenario: matches!(scenario, Scenario::Two(_)) as u8 + 1,
            n,
            n_obs: data.n_obs(),
            knots: sel.chosen,
            millis,
        });
    }

    let mut table = format!("{:<9} {:>5} {:>7} {:<10}", "scenario", "n", "N", "knots");
    for e in &engines {
        let label = if *e == Engine::Gibbs {
            "MC (ms)"
        } else {
            "VB (ms)"
        };
        write!(table, " {label:>10}")?;
    }
    table.push('\n');
    for row in &rows {
        write!(
            table,
            "{:<9} {:>5} {:>7} {:<10}",
            row.scenario,
            row.n,
            row.n_obs,
            join_knots(&row.knots)
        )?;
        for e in &engines {
            write!(table, " {:>10.2}", row.millis[e])?;
        }
        table.push('\n');
    }
    print_stdout(&table)?;
    let value = json!({
        "seed": seed,
        "draws": config.draws,
        "burnin": config.burnin,
        "family": family,
        "repetitions": reps,
        "rows": rows,
    });
    if let Some(path) = &opts.out {
        write_json(path, &value)?;
    }
    Ok(())
}
