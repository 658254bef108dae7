//! Bayesian fit under an independent g-prior, by Gibbs sampling.
//!
//! After whitening (`Z̃ = √W Z`, `ỹ = √W y`) the model is
//!
//! ```text
//! ỹ | α, σ² ~ N(Z̃α, σ² I_N),   α | σ² ~ N(0, N σ² I_p),   σ² ~ IG(a_σ, b_σ)
//! ```
//!
//! and both full conditionals are closed form:
//!
//! ```text
//! σ² | α ~ IG(a_σ + N/2 + p/2, b_σ + ½‖ỹ - Z̃α‖² + ‖α‖² / (2N))
//! α | σ² ~ N(A⁻¹Z̃ᵀỹ, σ² A⁻¹),   A = Z̃ᵀZ̃ + I_p / N
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::DesignBundle;
use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Result, TvcmError};
use crate::frequentist::WlsFit;
use crate::rng;

/// Floor used for `b_σ` when the WLS variance estimate is zero.
pub const MIN_B_SIGMA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Prior precision scale on `α` (`1/N`).
    pub ridge: f64,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.a_sigma) && ok(self.b_sigma) && ok(self.ridge) {
            Ok(())
        } else {
            Err(TvcmError::InvalidArgument(format!(
                "prior parameters must be positive: {self:?}"
            )))
        }
    }

    /// Prior mean of `σ²`, `b_σ / (a_σ - 1)` (infinite for `a_σ ≤ 1`).
    pub fn sigma2_prior_mean(&self) -> f64 {
        if self.a_sigma > 1.0 {
            self.b_sigma / (self.a_sigma - 1.0)
        } else {
            f64::INFINITY
        }
    }

    /// Prior variance of `σ²` (infinite for `a_σ ≤ 2`).
    pub fn sigma2_prior_variance(&self) -> f64 {
        if self.a_sigma > 2.0 {
            let a = self.a_sigma;
            self.b_sigma * self.b_sigma / ((a - 1.0).powi(2) * (a - 2.0))
        } else {
            f64::INFINITY
        }
    }
}

/// `a_σ = 2`, `b_σ = σ̂²`, ridge `1/N`.
pub fn default_prior(fit: &WlsFit) -> PriorSpec {
    let mut b_sigma = fit.sigma2_hat;
    if !(b_sigma > 0.0) {
        log::warn!("WLS variance estimate is zero; using b_sigma = {MIN_B_SIGMA:e}");
        b_sigma = MIN_B_SIGMA;
    }
    PriorSpec {
        a_sigma: 2.0,
        b_sigma,
        ridge: 1.0 / fit.n_obs() as f64,
    }
}

/// Row-scale the design and response by `√w`.
pub fn whiten(bundle: &DesignBundle) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if let Some(w) = bundle
        .weights
        .iter()
        .find(|&&w| !(w > 0.0 && w.is_finite()))
    {
        return Err(TvcmError::InvalidArgument(format!(
            "weights must be positive, found {w}"
        )));
    }
    let sqrt_w = bundle.weights.map(f64::sqrt);
    let mut z = bundle.z.clone();
    for (mut row, &s) in z.row_iter_mut().zip(sqrt_w.iter()) {
        row *= s;
    }
    Ok((z, bundle.y.component_mul(&sqrt_w)))
}

/// Cached pieces of the `α` conditional: `A = Z̃ᵀZ̃ + ridge·I`, its Cholesky
/// factor and the ridge solution `A⁻¹Z̃ᵀỹ`.
pub(crate) struct RidgeSystem {
    pub gram: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub zty: DVector<f64>,
    pub mean: DVector<f64>,
}

impl RidgeSystem {
    pub fn new(z: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(TvcmError::DimensionMismatch(format!(
                "design has {} rows but the response has {}",
                z.nrows(),
                y.len()
            )));
        }
        let p = z.ncols();
        let mut gram = z.tr_mul(z);
        for i in 0..p {
            gram[(i, i)] += ridge;
        }
        let chol = Cholesky::new(gram.clone()).ok_or_else(|| {
            TvcmError::Numerical("Cholesky factorization of Z'Z + I/N failed".into())
        })?;
        let zty = z.tr_mul(y);
        let mean = chol.solve(&zty);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(TvcmError::Numerical("non-finite ridge solution".into()));
        }
        Ok(Self {
            gram,
            chol,
            zty,
            mean,
        })
    }

    /// `mean + scale · L⁻ᵀ ε` with `ε ~ N(0, I)`, a draw from
    /// `N(mean, scale² A⁻¹)`.
    pub fn draw<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> DVector<f64> {
        let p = self.mean.len();
        let eps = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dev = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&eps)
            .unwrap_or(eps);
        &self.mean + dev * scale
    }
}

/// Ridge solution `(Z̃ᵀZ̃ + ridge·I)⁻¹ Z̃ᵀỹ`.
pub fn ridge_solution(z: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    Ok(RidgeSystem::new(z, y, ridge)?.mean)
}

/// Draw from `IG(shape, rate)`.
pub(crate) fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| TvcmError::Numerical(format!("inverse gamma({shape}, {rate}): {e}")))?;
    Ok(1.0 / gamma.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Total iterations, including burn-in.
    pub iters: usize,
    pub burnin: usize,
    /// Hold `σ²` at this value and skip its update.
    pub fixed_sigma2: Option<f64>,
}

impl GibbsConfig {
    /// `draws` retained draws after `burnin` iterations.
    pub fn retained(draws: usize, burnin: usize) -> Self {
        Self {
            iters: draws + burnin,
            burnin,
            fixed_sigma2: None,
        }
    }
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self::retained(2000, 500)
    }
}

/// Two-block Gibbs sampler started at the ridge solution.
pub fn gibbs(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorSpec,
    config: &GibbsConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    if config.iters <= config.burnin {
        return Err(TvcmError::InvalidArgument(format!(
            "iterations ({}) must exceed burn-in ({})",
            config.iters, config.burnin
        )));
    }
    let (n, p) = z.shape();
    let system = RidgeSystem::new(z, y, prior.ridge)?;
    let shape = prior.a_sigma + 0.5 * n as f64 + 0.5 * p as f64;

    let mut rng = rng::root(seed);
    let mut alpha = system.mean.clone();
    let mut resid = DVector::zeros(n);
    let kept = config.iters - config.burnin;
    let mut alpha_draws = DMatrix::zeros(kept, p);
    let mut sigma_draws = Vec::with_capacity(kept);

    for it in 0..config.iters {
        let sigma2 = match config.fixed_sigma2 {
            Some(s) => s,
            None => {
                resid.copy_from(y);
                resid.gemv(-1.0, z, &alpha, 1.0);
                let rate = prior.b_sigma
                    + 0.5 * resid.norm_squared()
                    + 0.5 * prior.ridge * alpha.norm_squared();
                inverse_gamma(shape, rate, &mut rng)?
            }
        };
        alpha = system.draw(sigma2.sqrt(), &mut rng);
        if it >= config.burnin {
            let row = it - config.burnin;
            alpha_draws.row_mut(row).copy_from(&alpha.transpose());
            sigma_draws.push(sigma2);
        }
    }
    if alpha_draws.iter().any(|v| !v.is_finite()) {
        return Err(TvcmError::Numerical("non-finite Gibbs draw".into()));
    }
    PosteriorDraws::new(alpha_draws, sigma_draws, DrawSource::Gibbs, seed)
}

/// Gaussian log-likelihood of the whitened model.
pub fn log_likelihood(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: &DVector<f64>,
    sigma2: f64,
) -> f64 {
    let n = y.len() as f64;
    let rss = (y - z * alpha).norm_squared();
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * rss / sigma2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_dic: f64,
    /// `log p(y | Υ̂)` at the posterior mean.
    pub loglik_at_mean: f64,
    /// Draw average of `log p(y | Υ)`.
    pub mean_loglik: f64,
}

/// `DIC = -2 log p(y|Υ̂) + 2 p_DIC`, `p_DIC = 2 log p(y|Υ̂) - 2 E[log p(y|Υ)]`.
pub fn dic(draws: &PosteriorDraws, z: &DMatrix<f64>, y: &DVector<f64>) -> Result<Dic> {
    if draws.n_draws() < 2 {
        return Err(TvcmError::InvalidArgument(
            "DIC needs at least two draws".into(),
        ));
    }
    if draws.n_params() != z.ncols() {
        return Err(TvcmError::DimensionMismatch(
            "draw dimension does not match the design".into(),
        ));
    }
    let at_mean = log_likelihood(z, y, &draws.alpha_mean(), draws.sigma2_mean());
    let lls: Vec<f64> = draws
        .alpha
        .row_iter()
        .zip(&draws.sigma2)
        .map(|(row, &s)| log_likelihood(z, y, &row.transpose(), s))
        .collect();
    let mean_loglik = crate::draws::shifted_mean(&lls);
    let p_dic = 2.0 * (at_mean - mean_loglik);
    Ok(Dic {
        dic: -2.0 * at_mean + 2.0 * p_dic,
        p_dic,
        loglik_at_mean: at_mean,
        mean_loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use approx::assert_abs_diff_eq;

    fn ones_problem() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_element(3, 1, 1.0),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
        )
    }

    #[test]
    fn whitening_examples() {
        let bundle = DesignBundle {
            z: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            weights: DVector::from_vec(vec![1.0, 4.0]),
            y: DVector::from_vec(vec![1.0, 1.0]),
            block_dims: vec![2],
            specs: vec![BasisSpec::truncated_power(1, vec![]).unwrap()],
        };
        let (z, y) = whiten(&bundle).unwrap();
        assert_eq!(z.row(0), bundle.z.row(0));
        assert_eq!(z.row(1).iter().copied().collect::<Vec<_>>(), vec![6.0, 8.0]);
        assert_eq!(y.as_slice(), &[1.0, 2.0]);

        let mut bad = bundle.clone();
        bad.weights[0] = 0.0;
        assert!(whiten(&bad).is_err());
    }

    #[test]
    fn ridge_solution_by_hand() {
        // (3 + 1/3)^-1 * 6 = 1.8
        let (z, y) = ones_problem();
        let m = ridge_solution(&z, &y, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(m[0], 1.8, epsilon = 1e-14);
    }

    #[test]
    fn prior_defaults() {
        let fit = WlsFit {
            alpha_hat: DVector::zeros(1),
            sigma2_hat: 0.25,
            fitted: DVector::zeros(100),
            residuals: DVector::zeros(100),
            gram_inverse: DMatrix::zeros(1, 1),
            hat_trace: 1.0,
            weighted_rss: 0.0,
            condition: 1.0,
            block_dims: vec![1],
        };
        let prior = default_prior(&fit);
        assert_eq!(
            prior,
            PriorSpec {
                a_sigma: 2.0,
                b_sigma: 0.25,
                ridge: 0.01
            }
        );
        assert_eq!(prior.sigma2_prior_mean(), 0.25);
        assert!(prior.sigma2_prior_variance().is_infinite());

        let zero = WlsFit {
            sigma2_hat: 0.0,
            ..fit
        };
        assert_eq!(default_prior(&zero).b_sigma, MIN_B_SIGMA);
    }

    #[test]
    fn chain_is_deterministic_and_well_formed() {
        let (z, y) = ones_problem();
        let prior = PriorSpec {
            a_sigma: 2.0,
            b_sigma: 0.5,
            ridge: 1.0 / 3.0,
        };
        let config = GibbsConfig::retained(200, 50);
        let a = gibbs(&z, &y, &prior, &config, 5).unwrap();
        let b = gibbs(&z, &y, &prior, &config, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_draws(), 200);
        assert_eq!(a.n_params(), 1);
        assert!(a.sigma2.iter().all(|&s| s > 0.0));
        assert!(gibbs(
            &z,
            &y,
            &prior,
            &GibbsConfig {
                iters: 10,
                burnin: 10,
                fixed_sigma2: None
            },
            1
        )
        .is_err());
    }

    #[test]
    fn alpha_mean_matches_ridge_solution() {
        let (z, y) = ones_problem();
        let prior = PriorSpec {
            a_sigma: 2.0,
            b_sigma: 0.5,
            ridge: 1.0 / 3.0,
        };
        let draws = gibbs(&z, &y, &prior, &GibbsConfig::retained(20_000, 100), 8).unwrap();
        let col: Vec<f64> = draws.alpha.column(0).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd =
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        let se = sd / (col.len() as f64).sqrt();
        assert!((mean - 1.8).abs() < 3.0 * se, "{mean} vs 1.8 (se {se})");
    }

    #[test]
    fn zero_response_concentrates_at_zero() {
        let z = DMatrix::from_fn(20, 2, |i, j| (i as f64 / 20.0).powi(j as i32));
        let y = DVector::zeros(20);
        let prior = PriorSpec {
            a_sigma: 2.0,
            b_sigma: 0.1,
            ridge: 0.05,
        };
        let draws = gibbs(&z, &y, &prior, &GibbsConfig::retained(5000, 100), 3).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = draws.alpha.column(j).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64)
                .sqrt();
            assert!(mean.abs() < 3.0 * sd / (col.len() as f64).sqrt());
        }
    }

    #[test]
    fn dic_zero_spread() {
        let (z, y) = ones_problem();
        let alpha = DMatrix::from_element(5, 1, 1.9);
        let draws = PosteriorDraws::new(alpha, vec![0.7; 5], DrawSource::Gibbs, 0).unwrap();
        let d = dic(&draws, &z, &y).unwrap();
        assert_eq!(d.p_dic, 0.0);
        let ll = log_likelihood(&z, &y, &DVector::from_element(1, 1.9), 0.7);
        assert_eq!(d.dic, -2.0 * ll);
    }

    #[test]
    fn dic_penalty_positive_for_a_real_chain() {
        let z = DMatrix::from_fn(30, 3, |i, j| (i as f64 / 30.0).powi(j as i32));
        let y = DVector::from_fn(30, |i, _| (i as f64 / 5.0).sin());
        let prior = PriorSpec {
            a_sigma: 2.0,
            b_sigma: 0.05,
            ridge: 1.0 / 30.0,
        };
        let draws = gibbs(&z, &y, &prior, &GibbsConfig::retained(2000, 200), 4).unwrap();
        let d = dic(&draws, &z, &y).unwrap();
        assert!(d.p_dic > 0.0);
    }
}
