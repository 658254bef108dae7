use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use tvcm::basis::BasisFamily;
use tvcm::engine::{Engine, EngineConfig};
use tvcm::simgen::{
    run_replications, ReplicationConfig, Scenario, Scenario1Config, Scenario2Config,
};
use tvcm::vb::VbConfig;

use crate::config::{resolve, resolve_seed};
use crate::output::{ensure_dir, manifest, write_json, write_text};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScenarioArgs {
    /// Simulation scenario, 1 or 2 [default: 1]
    #[arg(long)]
    pub scenario: Option<u8>,
    /// Subjects per dataset [default: 25 for scenario 1, 100 for scenario 2]
    #[arg(long)]
    pub n: Option<usize>,
    /// Scheduled measurements per subject [default: 30 for scenario 1, 31 for scenario 2]
    #[arg(long)]
    pub m: Option<usize>,
    /// Probability that a scheduled measurement is dropped [default: 0.5]
    #[arg(long)]
    pub missing_rate: Option<f64>,
    /// Scenario-1 population curve: exp or trig [default: exp]
    #[arg(long)]
    pub shape: Option<String>,
    /// Scenario-1 within-subject correlation: weak, medium or high [default: weak]
    #[arg(long)]
    pub level: Option<String>,
}

impl ScenarioArgs {
    pub fn scenario(&self, default: u8) -> Result<Scenario> {
        match self.scenario.unwrap_or(default) {
            1 => {
                let d = Scenario1Config::default();
                Ok(Scenario::One(Scenario1Config {
                    n: self.n.unwrap_or(d.n),
                    m: self.m.unwrap_or(d.m),
                    missing_rate: self.missing_rate.unwrap_or(d.missing_rate),
                    level: self.level.as_deref().map_or(Ok(d.level), str::parse)?,
                    shape: self.shape.as_deref().map_or(Ok(d.shape), str::parse)?,
                }))
            }
            2 => {
                let d = Scenario2Config::default();
                Ok(Scenario::Two(Scenario2Config {
                    n: self.n.unwrap_or(d.n),
                    m: self.m.unwrap_or(d.m),
                    missing_rate: self.missing_rate.unwrap_or(d.missing_rate),
                }))
            }
            s => bail!("unknown scenario {s} (expected 1 or 2)"),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    /// Replications [default: 50]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Engines, comma separated [default: wls,gibbs,vb]
    #[arg(long, value_delimiter = ',')]
    pub engines: Option<Vec<String>>,
    /// Basis families, comma separated [default: radial,tpower]
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Polynomial degree [default: 2]
    #[arg(long)]
    pub degree: Option<usize>,
    /// Largest knot count searched per coefficient [default: 10]
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Retained posterior draws [default: 2000]
    #[arg(long)]
    pub draws: Option<usize>,
    /// Gibbs burn-in [default: 500]
    #[arg(long)]
    pub burnin: Option<usize>,
    /// VB tolerance [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Replications run concurrently on this many threads [default: 1]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Random seed [default: $TVCM_SEED, then 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: tvcm-sim]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the options above; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let opts = resolve(args, args.config.as_deref())?;
    let seed = resolve_seed(opts.seed)?;
    let mut config = ReplicationConfig::new(opts.scenario.scenario(1)?, opts.reps.unwrap_or(50));
    if let Some(list) = &opts.engines {
        config.engines = list
            .iter()
            .map(|s| s.parse::<Engine>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(list) = &opts.families {
        config.families = list
            .iter()
            .map(|s| s.parse::<BasisFamily>())
            .collect::<Result<_, _>>()?;
    }
    config.degree = opts.degree.unwrap_or(config.degree);
    config.k_max = opts.k_max.unwrap_or(config.k_max);
    let d = EngineConfig::default();
    config.engine = EngineConfig {
        draws: opts.draws.unwrap_or(d.draws),
        burnin: opts.burnin.unwrap_or(d.burnin),
        vb: VbConfig {
            tol: opts.tol.unwrap_or(d.vb.tol),
            ..d.vb
        },
        ..d
    };
    config.threads = opts.threads.unwrap_or(1).max(1);

    let report = run_replications(&config, seed)?;
    if !report.failures.is_empty() {
        log::warn!(
            "{} of {} replications failed",
            report.failures.len(),
            config.reps
        );
    }
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("tvcm-sim"));
    ensure_dir(&out)?;
    let report_path = out.join("report.csv");
    let timings_path = out.join("timings.csv");
    let summary_path = out.join("summary.json");
    let manifest_path = out.join("manifest.json");
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_text(&report_path, &String::from_utf8(buf)?)?;
    let mut buf = Vec::new();
    report.write_timings_csv(&mut buf)?;
    write_text(&timings_path, &String::from_utf8(buf)?)?;
    let mut summary = report.summary_json();
    summary["failure_messages"] = serde_json::to_value(&report.failures)?;
    write_json(&summary_path, &summary)?;
    let outputs = [
        report_path,
        timings_path,
        summary_path,
        manifest_path.clone(),
    ];
    write_json(
        &manifest_path,
        &manifest("simulate", seed, &opts, &outputs)?,
    )?;
    Ok(())
}
