//! Knot-count selection and fit-quality metrics.
//!
//! The selection criterion is the trace form of point cross-validation,
//!
//! ```text
//! PCV = (y - Ay)ᵀ W (y - Ay) / (1 - tr(A)/N)²,   A = Z (ZᵀWZ)⁻¹ ZᵀW.
//! ```
//!
//! It coincides with the literal leave-one-point-out sum
//! `Σ w_i (y_ij - ŷ_ij^(-ij))²` only when the hat-matrix diagonal is
//! constant, so the brute-force version is kept as [`loo_pcv`] for
//! comparison.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, BasisFamily, BasisSpec, DesignBundle};
use crate::data::{subject_uniform_weights, LongitudinalDataset};
use crate::engine::{fit_bayes, Engine, EngineConfig};
use crate::error::{Result, TvcmError};
use crate::frequentist::{fit_wls, WlsFit};
use crate::rng;

/// PCV from its parts; `+∞` when the fit is saturated (`tr(A) ≥ N`).
pub fn pcv_value(weighted_rss: f64, hat_trace: f64, n_obs: usize) -> f64 {
    let n = n_obs as f64;
    if hat_trace >= n {
        return f64::INFINITY;
    }
    let denom = 1.0 - hat_trace / n;
    weighted_rss / (denom * denom)
}

pub fn pcv(bundle: &DesignBundle, fit: &WlsFit) -> f64 {
    pcv_value(fit.weighted_rss, fit.hat_trace, bundle.n_obs())
}

/// Prediction error at each row when that row is left out of the fit.
pub fn loo_residuals(bundle: &DesignBundle) -> Result<Vec<f64>> {
    let n = bundle.n_obs();
    let mut rows: Vec<usize> = (1..n).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            rows[i - 1] = i - 1;
        }
        let fit = fit_wls(&bundle.select_rows(&rows))?;
        let pred = bundle.z.row(i).dot(&fit.alpha_hat.transpose());
        out.push(bundle.y[i] - pred);
    }
    Ok(out)
}

/// Brute-force `Σ w_i (y_ij - ŷ_ij^(-ij))²`.
pub fn loo_pcv(bundle: &DesignBundle) -> Result<f64> {
    Ok(loo_residuals(bundle)?
        .iter()
        .zip(bundle.weights.iter())
        .map(|(e, w)| w * e * e)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    FullGrid,
    Coordinate,
}

impl SearchStrategy {
    /// Full grid for `d ≤ 2` and `k_max ≤ 10`, coordinate descent otherwise.
    pub fn default_for(covariate_dim: usize, k_max: usize) -> Self {
        if covariate_dim <= 2 && k_max <= 10 {
            SearchStrategy::FullGrid
        } else {
            SearchStrategy::Coordinate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Trace-form PCV.
    Pcv,
    /// Literal leave-one-point-out refits.
    LeaveOnePointOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub family: BasisFamily,
    pub degree: usize,
    pub k_max: usize,
    /// `None` picks [`SearchStrategy::default_for`].
    pub strategy: Option<SearchStrategy>,
    pub criterion: Criterion,
}

impl SelectionConfig {
    pub fn new(family: BasisFamily, degree: usize, k_max: usize) -> Self {
        Self {
            family,
            degree,
            k_max,
            strategy: None,
            criterion: Criterion::Pcv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub knots: Vec<usize>,
    /// Criterion value; `None` when the configuration could not be fitted.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSelection {
    pub chosen: Vec<usize>,
    pub score: f64,
    pub strategy: SearchStrategy,
    pub criterion: Criterion,
    /// Every evaluated configuration, in evaluation order.
    pub candidates: Vec<Candidate>,
}

impl KnotSelection {
    /// Basis specs for the chosen knot counts.
    pub fn specs(
        &self,
        family: BasisFamily,
        degree: usize,
        domain: (f64, f64),
    ) -> Result<Vec<BasisSpec>> {
        specs_for(family, degree, &self.chosen, domain)
    }
}

/// Equally spaced specs for a vector of knot counts.
pub fn specs_for(
    family: BasisFamily,
    degree: usize,
    knots: &[usize],
    domain: (f64, f64),
) -> Result<Vec<BasisSpec>> {
    knots
        .iter()
        .map(|&k| BasisSpec::equally_spaced(family, degree, k, domain))
        .collect()
}

fn is_infeasible(err: &TvcmError) -> bool {
    matches!(
        err,
        TvcmError::SingularDesign { .. }
            | TvcmError::InsufficientData { .. }
            | TvcmError::InvalidBasis(_)
    )
}

struct Evaluator<'a> {
    data: &'a LongitudinalDataset,
    weights: Vec<f64>,
    config: SelectionConfig,
    cache: HashMap<Vec<usize>, Option<f64>>,
    order: Vec<Vec<usize>>,
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a LongitudinalDataset, config: SelectionConfig) -> Self {
        Self {
            data,
            weights: subject_uniform_weights(data),
            config,
            cache: HashMap::new(),
            order: Vec::new(),
        }
    }

    fn score(&mut self, knots: &[usize]) -> Result<Option<f64>> {
        if let Some(&s) = self.cache.get(knots) {
            return Ok(s);
        }
        let value = match self.compute(knots) {
            Ok(v) if v.is_finite() => Some(v),
            Ok(_) => None,
            Err(e) if is_infeasible(&e) => None,
            Err(e) => return Err(e),
        };
        self.cache.insert(knots.to_vec(), value);
        self.order.push(knots.to_vec());
        Ok(value)
    }

    fn compute(&self, knots: &[usize]) -> Result<f64> {
        let specs = specs_for(
            self.config.family,
            self.config.degree,
            knots,
            self.data.time_domain(),
        )?;
        let bundle = build_design(self.data, &specs, &self.weights)?;
        let fit = fit_wls(&bundle)?;
        match self.config.criterion {
            Criterion::Pcv => Ok(pcv(&bundle, &fit)),
            Criterion::LeaveOnePointOut => loo_pcv(&bundle),
        }
    }

    fn into_candidates(self) -> Vec<Candidate> {
        let cache = self.cache;
        self.order
            .into_iter()
            .map(|knots| {
                let score = cache[&knots];
                Candidate { knots, score }
            })
            .collect()
    }
}

/// Scores closer than this fraction of `Σ w y²` count as ties, so exact fits
/// are not separated by rounding noise.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `a` beats `b`: lower score beyond `tol`, then fewer total knots, then
/// lexicographic.
fn better(a: (&[usize], f64), b: (&[usize], f64), tol: f64) -> bool {
    if (a.1 - b.1).abs() > tol {
        return a.1 < b.1;
    }
    let (sa, sb) = (a.0.iter().sum::<usize>(), b.0.iter().sum::<usize>());
    if sa != sb {
        return sa < sb;
    }
    a.0 < b.0
}

/// Choose knot counts `(k_0, …, k_d)` in `0..=k_max` minimizing the criterion.
pub fn select_knots(data: &LongitudinalDataset, config: &SelectionConfig) -> Result<KnotSelection> {
    let dims = data.covariate_dim() + 1;
    let strategy = config
        .strategy
        .unwrap_or_else(|| SearchStrategy::default_for(data.covariate_dim(), config.k_max));
    let mut eval = Evaluator::new(data, *config);
    let tol = TIE_TOLERANCE
        * eval
            .weights
            .iter()
            .zip(data.observations())
            .map(|(w, o)| w * o.response * o.response)
            .sum::<f64>();
    let mut best: Option<(Vec<usize>, f64)> = None;

    let consider = |knots: &[usize], score: Option<f64>, best: &mut Option<(Vec<usize>, f64)>| {
        if let Some(s) = score {
            let replace = match best {
                Some((bk, bs)) => better((knots, s), (bk, *bs), tol),
                None => true,
            };
            if replace {
                *best = Some((knots.to_vec(), s));
            }
        }
    };

    match strategy {
        SearchStrategy::FullGrid => {
            let mut knots = vec![0usize; dims];
            loop {
                let s = eval.score(&knots)?;
                consider(&knots, s, &mut best);
                // odometer increment, last coordinate fastest
                let mut pos = dims;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    if knots[pos] < config.k_max {
                        knots[pos] += 1;
                        knots[pos + 1..].iter_mut().for_each(|k| *k = 0);
                        break;
                    }
                    if pos == 0 {
                        pos = usize::MAX;
                        break;
                    }
                }
                if pos == usize::MAX {
                    break;
                }
            }
        }
        SearchStrategy::Coordinate => {
            let mut current = vec![0usize; dims];
            let s = eval.score(&current)?;
            consider(&current, s, &mut best);
            loop {
                let mut improved = false;
                for r in 0..dims {
                    for k in 0..=config.k_max {
                        let mut trial = current.clone();
                        trial[r] = k;
                        let s = eval.score(&trial)?;
                        let before = best.clone();
                        consider(&trial, s, &mut best);
                        if best != before {
                            improved = true;
                        }
                    }
                    if let Some((bk, _)) = &best {
                        current = bk.clone();
                    }
                }
                if !improved {
                    break;
                }
            }
        }
    }

    let candidates = eval.into_candidates();
    match best {
        Some((chosen, score)) => Ok(KnotSelection {
            chosen,
            score,
            strategy,
            criterion: config.criterion,
            candidates,
        }),
        None => Err(TvcmError::NoFeasibleConfiguration {
            candidates: candidates.len(),
        }),
    }
}

fn check_shape(data: &LongitudinalDataset, len: usize, what: &str) -> Result<()> {
    if len != data.n_obs() {
        return Err(TvcmError::DimensionMismatch(format!(
            "{what} has {len} values for {} observations",
            data.n_obs()
        )));
    }
    Ok(())
}

/// `Σ_i Σ_j (β(t_ij) - β̂(t_ij))² / (n n_i)` for one coefficient.
pub fn amse(truth: &[f64], estimate: &[f64], data: &LongitudinalDataset) -> Result<f64> {
    check_shape(data, truth.len(), "truth")?;
    check_shape(data, estimate.len(), "estimate")?;
    let w = subject_uniform_weights(data);
    Ok(truth
        .iter()
        .zip(estimate)
        .zip(&w)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum())
}

/// `max - min` of each true coefficient over the design points.
pub fn coefficient_ranges(truth: &[Vec<f64>]) -> Vec<f64> {
    truth
        .iter()
        .map(|values| {
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        })
        .collect()
}

/// `Σ_r Σ_i Σ_j |β_r(t_ij) - β̂_r(t_ij)| / (n n_i range(β_r))`.
pub fn made(
    truth: &[Vec<f64>],
    estimates: &[Vec<f64>],
    ranges: &[f64],
    data: &LongitudinalDataset,
) -> Result<f64> {
    if truth.len() != estimates.len() || truth.len() != ranges.len() {
        return Err(TvcmError::DimensionMismatch(format!(
            "{} true coefficients, {} estimates, {} ranges",
            truth.len(),
            estimates.len(),
            ranges.len()
        )));
    }
    let w = subject_uniform_weights(data);
    let mut total = 0.0;
    for ((t, e), &range) in truth.iter().zip(estimates).zip(ranges) {
        check_shape(data, t.len(), "truth")?;
        check_shape(data, e.len(), "estimate")?;
        if !(range > 0.0) {
            return Err(TvcmError::InvalidArgument(format!(
                "coefficient range must be positive, got {range}"
            )));
        }
        total += t
            .iter()
            .zip(e)
            .zip(&w)
            .map(|((a, b), w)| w * (a - b).abs())
            .sum::<f64>()
            / range;
    }
    Ok(total)
}

/// Random partition of `0..n` into `folds` groups of near-equal size.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(TvcmError::InvalidArgument(format!(
            "cannot split {n} observations into {folds} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::root(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// `L`-fold cross-validated mean squared prediction error.
///
/// Observations are split at random; each fold is predicted from a fit on
/// the remaining rows, which keep their full-data subject weights.
pub fn crossval_amse(
    data: &LongitudinalDataset,
    specs: &[BasisSpec],
    engine: Engine,
    config: &EngineConfig,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let weights = subject_uniform_weights(data);
    let bundle = build_design(data, specs, &weights)?;
    let n = bundle.n_obs();
    let partition = fold_partition(n, folds, seed)?;
    let mut sse = 0.0;
    for (f, held) in partition.iter().enumerate() {
        let mut mask = vec![true; n];
        held.iter().for_each(|&i| mask[i] = false);
        let train: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        let train_bundle = bundle.select_rows(&train);
        let alpha = fold_alpha(
            train_bundle,
            engine,
            config,
            rng::derive_seed(seed, f as u64 + 1),
        )
        .map_err(|e| TvcmError::FoldFit {
            fold: f,
            source: Box::new(e),
        })?;
        for &i in held {
            let pred = bundle.z.row(i).dot(&alpha.transpose());
            sse += (bundle.y[i] - pred).powi(2);
        }
    }
    Ok(sse / n as f64)
}

fn fold_alpha(
    bundle: DesignBundle,
    engine: Engine,
    config: &EngineConfig,
    seed: u64,
) -> Result<nalgebra::DVector<f64>> {
    let wls = fit_wls(&bundle)?;
    match engine {
        Engine::Wls => Ok(wls.alpha_hat),
        _ => Ok(fit_bayes(bundle, wls, engine, config, seed)?.alpha),
    }
}
