//! Synthetic benchmark data with known coefficient curves, and the
//! replication driver that scores every engine and basis family on them.
//!
//! Scenario 1 is a mixed-effects model with no covariates,
//!
//! ```text
//! y_i(t) = β_0(t) + a_i0 + a_i1 cos 2πt + a_i2 sin 2πt + ε_i(t),
//! ε_i(t) ~ N(0, σ² [1 - exp(-t/2 - i/n)]²),
//! ```
//!
//! observed at `t_ij = j/(m+1)`. Scenario 2 has two time-invariant
//! covariates and Gaussian-process errors with covariance
//! `0.0625 exp(-|s - t|)` on the integer schedule `0..=m`.
//!
//! Subject `i` always draws from stream `i` of the dataset seed, so growing
//! `n` leaves earlier subjects unchanged.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{coefficient_curve, sorted_quantile, BasisFamily};
use crate::data::{LongitudinalDataset, Observation, SubjectRecord};
use crate::engine::{fit_engine, Engine, EngineConfig};
use crate::error::{Result, TvcmError};
use crate::rng::{self, TvcmRng};
use crate::selection::{amse, coefficient_ranges, made, select_knots, SelectionConfig};

/// Common variance of the slope random effects and of the measurement error
/// in scenario 1.
pub const SCENARIO1_SIGMA2: f64 = 0.01;
/// Scale of the scenario-2 error covariance.
pub const SCENARIO2_GP_SCALE: f64 = 0.0625;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationLevel {
    Weak,
    Medium,
    High,
}

impl CorrelationLevel {
    pub const ALL: [CorrelationLevel; 3] = [Self::Weak, Self::Medium, Self::High];

    /// Variance of the random intercept.
    pub fn intercept_variance(&self) -> f64 {
        match self {
            Self::Weak => 0.01,
            Self::Medium => 0.04,
            Self::High => 0.09,
        }
    }

    /// Range of the within-subject correlation implied by the variances.
    pub fn correlation_bounds(&self) -> (f64, f64) {
        let s0 = self.intercept_variance();
        let s = SCENARIO1_SIGMA2;
        ((s0 - s) / (s0 + 2.0 * s), (s0 + s) / (s0 + 2.0 * s))
    }
}

impl std::str::FromStr for CorrelationLevel {
    type Err = TvcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" => Ok(Self::Weak),
            "medium" => Ok(Self::Medium),
            "high" | "strong" => Ok(Self::High),
            other => Err(TvcmError::InvalidArgument(format!(
                "unknown correlation level `{other}` (expected weak, medium or high)"
            ))),
        }
    }
}

/// Population curve of scenario 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `2 eᵗ`
    Exp,
    /// `1 + cos 2πt + sin 2πt`
    Trig,
}

impl Shape {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Shape::Exp => 2.0 * t.exp(),
            Shape::Trig => 1.0 + (2.0 * PI * t).cos() + (2.0 * PI * t).sin(),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = TvcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" => Ok(Shape::Exp),
            "trig" => Ok(Shape::Trig),
            other => Err(TvcmError::InvalidArgument(format!(
                "unknown shape `{other}` (expected exp or trig)"
            ))),
        }
    }
}

/// Scenario-2 coefficient `r` at time `t`.
pub fn scenario2_beta(r: usize, t: f64) -> f64 {
    match r {
        0 => 3.5 + 6.5 * (t * PI / 60.0).sin(),
        1 => -0.2 - 1.6 * ((t - 30.0) * PI / 60.0).cos(),
        2 => 0.25 - 0.0074 * ((30.0 - t) / 10.0).powi(3),
        _ => panic!("scenario 2 has coefficients 0..=2, got {r}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario1Config {
    pub n: usize,
    /// Scheduled measurements per subject.
    pub m: usize,
    pub missing_rate: f64,
    pub level: CorrelationLevel,
    pub shape: Shape,
}

impl Default for Scenario1Config {
    fn default() -> Self {
        Self {
            n: 25,
            m: 30,
            missing_rate: 0.5,
            level: CorrelationLevel::Weak,
            shape: Shape::Exp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario2Config {
    pub n: usize,
    /// Last scheduled time; the schedule is `0, 1, …, m`.
    pub m: usize,
    pub missing_rate: f64,
}

impl Default for Scenario2Config {
    fn default() -> Self {
        Self {
            n: 100,
            m: 31,
            missing_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum Scenario {
    One(Scenario1Config),
    Two(Scenario2Config),
}

impl Scenario {
    pub fn generate(&self, seed: u64) -> Result<(LongitudinalDataset, SimTruth)> {
        match self {
            Scenario::One(cfg) => gen_scenario1(cfg, seed),
            Scenario::Two(cfg) => gen_scenario2(cfg, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub scenario: Scenario,
    pub seed: u64,
    /// Random-intercept variance (scenario 1).
    pub intercept_variance: Option<f64>,
    /// Slope random-effect and measurement-error variance (scenario 1).
    pub sigma2: Option<f64>,
    /// Error covariance scale (scenario 2).
    pub gp_scale: Option<f64>,
}

/// True coefficient values at every observation of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// `beta_true[r][row]`, rows in dataset order.
    pub beta_true: Vec<Vec<f64>>,
    pub params: GenerationParams,
}

fn check_common(n: usize, m: usize, missing_rate: f64) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(TvcmError::InvalidArgument(format!(
            "need n ≥ 1 and m ≥ 1, got n = {n}, m = {m}"
        )));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(TvcmError::InvalidArgument(format!(
            "missing rate must lie in [0, 1), got {missing_rate}"
        )));
    }
    Ok(())
}

/// Keep each scheduled index with probability `1 - rate`; redraw empty masks.
fn retained_mask(rng: &mut TvcmRng, slots: usize, rate: f64) -> Vec<bool> {
    loop {
        let mask: Vec<bool> = (0..slots).map(|_| rng.random::<f64>() >= rate).collect();
        if mask.iter().any(|&k| k) {
            return mask;
        }
    }
}

fn normal(rng: &mut TvcmRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_scenario1(cfg: &Scenario1Config, seed: u64) -> Result<(LongitudinalDataset, SimTruth)> {
    check_common(cfg.n, cfg.m, cfg.missing_rate)?;
    let s0 = cfg.level.intercept_variance().sqrt();
    let s = SCENARIO1_SIGMA2.sqrt();
    let mut subjects = Vec::with_capacity(cfg.n);
    let mut truth = Vec::new();
    for i in 1..=cfg.n {
        let mut r = rng::stream(seed, i as u64);
        let a0 = s0 * normal(&mut r);
        let a1 = s * normal(&mut r);
        let a2 = s * normal(&mut r);
        let mask = retained_mask(&mut r, cfg.m, cfg.missing_rate);
        let ratio = i as f64 / cfg.n as f64;
        let mut obs = Vec::new();
        for (j, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
            let t = (j + 1) as f64 / (cfg.m + 1) as f64;
            let beta = cfg.shape.eval(t);
            let effect = a0 + a1 * (2.0 * PI * t).cos() + a2 * (2.0 * PI * t).sin();
            let sd = s * (1.0 - (-0.5 * t - ratio).exp());
            obs.push(Observation {
                time: t,
                response: beta + effect + sd * normal(&mut r),
                covariates: vec![],
            });
            truth.push(beta);
        }
        subjects.push(SubjectRecord::new(format!("s{i}"), obs));
    }
    let data = LongitudinalDataset::new(subjects, 0, Some((0.0, 1.0)))?;
    Ok((
        data,
        SimTruth {
            beta_true: vec![truth],
            params: GenerationParams {
                scenario: Scenario::One(*cfg),
                seed,
                intercept_variance: Some(cfg.level.intercept_variance()),
                sigma2: Some(SCENARIO1_SIGMA2),
                gp_scale: None,
            },
        },
    ))
}

/// Exponential covariance `scale · exp(-|s - t|)` on a set of times.
pub fn exponential_covariance(times: &[f64], scale: f64) -> DMatrix<f64> {
    let k = times.len();
    DMatrix::from_fn(k, k, |a, b| scale * (-(times[a] - times[b]).abs()).exp())
}

pub fn gen_scenario2(cfg: &Scenario2Config, seed: u64) -> Result<(LongitudinalDataset, SimTruth)> {
    check_common(cfg.n, cfg.m, cfg.missing_rate)?;
    let mut subjects = Vec::with_capacity(cfg.n);
    let mut truth = vec![Vec::new(), Vec::new(), Vec::new()];
    for i in 1..=cfg.n {
        let mut r = rng::stream(seed, i as u64);
        let x1 = if r.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let x2 = 4.0 * normal(&mut r);
        let mask = retained_mask(&mut r, cfg.m + 1, cfg.missing_rate);
        let times: Vec<f64> = (0..=cfg.m).filter(|&j| mask[j]).map(|j| j as f64).collect();
        let chol =
            Cholesky::new(exponential_covariance(&times, SCENARIO2_GP_SCALE)).ok_or_else(|| {
                TvcmError::Numerical(format!(
                    "error covariance of subject {i} is not positive definite"
                ))
            })?;
        let eps = chol.l() * DVector::from_fn(times.len(), |_, _| normal(&mut r));
        let obs = times
            .iter()
            .zip(eps.iter())
            .map(|(&t, e)| {
                let b: Vec<f64> = (0..3).map(|k| scenario2_beta(k, t)).collect();
                for (k, v) in b.iter().enumerate() {
                    truth[k].push(*v);
                }
                Observation {
                    time: t,
                    response: b[0] + b[1] * x1 + b[2] * x2 + e,
                    covariates: vec![x1, x2],
                }
            })
            .collect();
        subjects.push(SubjectRecord::new(format!("s{i}"), obs));
    }
    let data = LongitudinalDataset::new(subjects, 2, Some((0.0, cfg.m as f64)))?;
    Ok((
        data,
        SimTruth {
            beta_true: truth,
            params: GenerationParams {
                scenario: Scenario::Two(*cfg),
                seed,
                intercept_variance: None,
                sigma2: None,
                gp_scale: Some(SCENARIO2_GP_SCALE),
            },
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub scenario: Scenario,
    pub reps: usize,
    pub engines: Vec<Engine>,
    pub families: Vec<BasisFamily>,
    pub degree: usize,
    pub k_max: usize,
    pub engine: EngineConfig,
    /// Replications run concurrently when greater than 1.
    pub threads: usize,
}

impl ReplicationConfig {
    pub fn new(scenario: Scenario, reps: usize) -> Self {
        Self {
            scenario,
            reps,
            engines: Engine::ALL.to_vec(),
            families: vec![BasisFamily::RadialGaussian, BasisFamily::TruncatedPower],
            degree: 2,
            k_max: 10,
            engine: EngineConfig::default(),
            threads: 1,
        }
    }
}

/// One replication × engine × family outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub engine: Engine,
    pub family: BasisFamily,
    pub knots: Vec<usize>,
    /// AMSE of `β_0` for scenario 1, MADE for scenario 2.
    pub metric: f64,
    /// Wall-clock time of the engine fit.
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: sorted_quantile(&v, 0.25),
            median: sorted_quantile(&v, 0.5),
            q3: sorted_quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub engine: Engine,
    pub family: BasisFamily,
    pub count: usize,
    pub metric: Option<Quartiles>,
    pub millis: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub config: ReplicationConfig,
    pub seed: u64,
    pub metric_name: String,
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<ReplicationFailure>,
}

impl ReplicationReport {
    pub fn cell(&self, engine: Engine, family: BasisFamily) -> CellSummary {
        let rows: Vec<&ReplicationRow> = self
            .rows
            .iter()
            .filter(|r| r.engine == engine && r.family == family)
            .collect();
        let metric: Vec<f64> = rows.iter().map(|r| r.metric).collect();
        let millis: Vec<f64> = rows.iter().map(|r| r.millis).collect();
        CellSummary {
            engine,
            family,
            count: rows.len(),
            metric: Quartiles::of(&metric),
            millis: Quartiles::of(&millis),
        }
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut out = Vec::new();
        for &engine in &self.config.engines {
            for &family in &self.config.families {
                out.push(self.cell(engine, family));
            }
        }
        out
    }

    /// Per-row CSV without timings, so it is reproducible byte for byte.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "seed", "engine", "family", "knots", "metric"])?;
        for r in &self.rows {
            w.write_record([
                r.rep.to_string(),
                r.seed.to_string(),
                r.engine.to_string(),
                r.family.to_string(),
                join_knots(&r.knots),
                format!("{:?}", r.metric),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "engine", "family", "millis"])?;
        for r in &self.rows {
            w.write_record([
                r.rep.to_string(),
                r.engine.to_string(),
                r.family.to_string(),
                format!("{:.3}", r.millis),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON summary: quartiles of the metric per cell and the failure count.
    pub fn summary_json(&self) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .summary()
            .into_iter()
            .map(|c| {
                serde_json::json!({
                    "engine": c.engine,
                    "family": c.family,
                    "count": c.count,
                    "metric": c.metric,
                })
            })
            .collect();
        serde_json::json!({
            "scenario": self.config.scenario,
            "reps": self.config.reps,
            "seed": self.seed,
            "metric": self.metric_name,
            "failures": self.failures.len(),
            "cells": cells,
        })
    }
}

pub fn join_knots(knots: &[usize]) -> String {
    knots
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn replicate_once(
    config: &ReplicationConfig,
    rep_seed: u64,
) -> Result<Vec<(Engine, BasisFamily, Vec<usize>, f64, f64)>> {
    let (data, truth) = config.scenario.generate(rep_seed)?;
    let times = data.times();
    let mut out = Vec::new();
    for &family in &config.families {
        let selection = select_knots(
            &data,
            &SelectionConfig::new(family, config.degree, config.k_max),
        )?;
        let specs = selection.specs(family, config.degree, data.time_domain())?;
        for &engine in &config.engines {
            let start = Instant::now();
            let fit = fit_engine(
                &data,
                &specs,
                engine,
                &config.engine,
                rng::derive_seed(rep_seed, 7),
            )?;
            let millis = start.elapsed().as_secs_f64() * 1e3;
            let estimates = specs
                .iter()
                .zip(fit.alpha_blocks())
                .map(|(spec, a)| coefficient_curve(spec, a, &times))
                .collect::<Result<Vec<_>>>()?;
            let metric = match config.scenario {
                Scenario::One(_) => amse(&truth.beta_true[0], &estimates[0], &data)?,
                Scenario::Two(_) => {
                    let ranges = coefficient_ranges(&truth.beta_true);
                    made(&truth.beta_true, &estimates, &ranges, &data)?
                }
            };
            out.push((engine, family, selection.chosen.clone(), metric, millis));
        }
    }
    Ok(out)
}

/// Generate `reps` datasets, choose knots by PCV for each family, fit every
/// engine, and score the estimates. Replication `r` uses seed
/// `derive_seed(seed, r)`; failed replications are recorded, not fatal.
pub fn run_replications(config: &ReplicationConfig, seed: u64) -> Result<ReplicationReport> {
    if config.reps == 0 {
        return Err(TvcmError::InvalidArgument(
            "need at least one replication".into(),
        ));
    }
    let run = |rep: usize| {
        let rep_seed = rng::derive_seed(seed, rep as u64);
        (rep, rep_seed, replicate_once(config, rep_seed))
    };
    let results: Vec<_> = if config.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| TvcmError::InvalidArgument(e.to_string()))?
            .install(|| (0..config.reps).into_par_iter().map(run).collect())
    } else {
        (0..config.reps).map(run).collect()
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, rep_seed, result) in results {
        match result {
            Ok(cells) => rows.extend(cells.into_iter().map(
                |(engine, family, knots, metric, millis)| ReplicationRow {
                    rep,
                    seed: rep_seed,
                    engine,
                    family,
                    knots,
                    metric,
                    millis,
                },
            )),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failures.push(ReplicationFailure {
                    rep,
                    seed: rep_seed,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(ReplicationReport {
        config: config.clone(),
        seed,
        metric_name: match config.scenario {
            Scenario::One(_) => "amse".into(),
            Scenario::Two(_) => "made".into(),
        },
        rows,
        failures,
    })
}
