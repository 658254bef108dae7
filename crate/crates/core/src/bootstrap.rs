//! Subject-level bootstrap and percentile intervals.
//!
//! A bootstrap dataset draws `n` subjects with replacement and keeps each
//! drawn subject's measurements intact. Weights and the design are rebuilt on
//! the resampled data and the WLS estimator is refitted, giving one draw of
//! `(α, σ²)` per replicate.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::basis::{build_design, sorted_quantile, BasisSpec};
use crate::data::{subject_uniform_weights, LongitudinalDataset, SubjectRecord};
use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Result, TvcmError};
use crate::frequentist::{fit_wls, WlsFit};
use crate::rng;

/// Draw `n` subjects uniformly with replacement. Each copy gets the id suffix
/// `#<slot>` so duplicates stay distinct subjects.
pub fn resample_subjects<R: Rng + ?Sized>(
    data: &LongitudinalDataset,
    rng: &mut R,
) -> Result<LongitudinalDataset> {
    let n = data.n_subjects();
    let subjects: Vec<SubjectRecord> = (0..n)
        .map(|slot| {
            let pick = &data.subjects()[rng.random_range(0..n)];
            SubjectRecord::new(format!("{}#{slot}", pick.id), pick.observations.clone())
        })
        .collect();
    LongitudinalDataset::new(subjects, data.covariate_dim(), Some(data.time_domain()))
}

fn refit(data: &LongitudinalDataset, specs: &[BasisSpec]) -> Result<WlsFit> {
    let weights = subject_uniform_weights(data);
    let bundle = build_design(data, specs, &weights)?;
    fit_wls(&bundle)
}

fn is_degenerate(err: &TvcmError) -> bool {
    matches!(
        err,
        TvcmError::SingularDesign { .. } | TvcmError::InsufficientData { .. }
    )
}

/// One replicate: resample until the design is fittable or `cap` attempts.
fn replicate(
    data: &LongitudinalDataset,
    specs: &[BasisSpec],
    seed: u64,
    index: usize,
    cap: usize,
) -> Result<(Option<WlsFit>, usize)> {
    let mut rng = rng::stream(seed, index as u64);
    for attempt in 1..=cap {
        let sample = resample_subjects(data, &mut rng)?;
        match refit(&sample, specs) {
            Ok(fit) => return Ok((Some(fit), attempt)),
            Err(e) if is_degenerate(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok((None, cap))
}

/// `B` bootstrap draws of `(α, σ²)`.
///
/// Replicate `b` uses stream `b` of `seed`, so the result is identical for any
/// `threads`. Singular replicates are redrawn; more than `10·B` attempts in
/// total is an error.
pub fn bootstrap_fit(
    data: &LongitudinalDataset,
    specs: &[BasisSpec],
    replicates: usize,
    seed: u64,
    threads: usize,
) -> Result<PosteriorDraws> {
    if replicates == 0 {
        return Err(TvcmError::InvalidArgument(
            "bootstrap needs at least one replicate".into(),
        ));
    }
    let cap = 10 * replicates;
    let run = |b: usize| replicate(data, specs, seed, b, cap);
    let results: Vec<Result<(Option<WlsFit>, usize)>> = if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| TvcmError::InvalidArgument(e.to_string()))?
            .install(|| (0..replicates).into_par_iter().map(run).collect())
    } else {
        (0..replicates).map(run).collect()
    };

    let mut fits = Vec::with_capacity(replicates);
    let mut attempts = 0;
    for result in results {
        let (fit, used) = result?;
        attempts += used;
        fits.push(fit);
    }
    if attempts > cap || fits.iter().any(Option::is_none) {
        return Err(TvcmError::BootstrapDegeneracy {
            failures: attempts - fits.iter().filter(|f| f.is_some()).count(),
            attempts,
        });
    }

    let p = specs.iter().map(BasisSpec::dim).sum();
    let mut alpha = DMatrix::zeros(replicates, p);
    let mut sigma2 = Vec::with_capacity(replicates);
    for (b, fit) in fits.into_iter().flatten().enumerate() {
        alpha.row_mut(b).copy_from(&fit.alpha_hat.transpose());
        sigma2.push(fit.sigma2_hat);
    }
    PosteriorDraws::new(alpha, sigma2, DrawSource::Bootstrap, seed)
}

/// Percentile interval `(q_{α/2}, q_{1-α/2})` with `α = 1 - level`, using
/// order statistics with linear interpolation between adjacent ranks.
pub fn percentile_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(TvcmError::InvalidArgument(
            "percentile interval of an empty sample".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(TvcmError::InvalidArgument(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((
        sorted_quantile(&sorted, tail),
        sorted_quantile(&sorted, 1.0 - tail),
    ))
}
