//! Mean-field variational Bayes for the whitened g-prior model.
//!
//! The approximation `q(α, σ²) = q(α) q(σ²)` has `q(α) = N(m*, V*)` and
//! `q(σ²) = IG(a*, b*)` with `a* = a_σ + N/2 + p/2` fixed. Coordinate ascent
//! cycles
//!
//! ```text
//! V* ← (b*/a*) A⁻¹
//! m* ← (a*/b*) V* Z̃ᵀỹ
//! b* ← b_σ + ½(‖ỹ‖² - 2ỹᵀZ̃m* + m*ᵀAm* + tr(A V*))
//! ```
//!
//! where `A = Z̃ᵀZ̃ + I_p/N` is factorized once.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Result, TvcmError};
use crate::mcmc::{inverse_gamma, PriorSpec, RidgeSystem};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub m_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
    pub a_star: f64,
    pub b_star: f64,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl VariationalPosterior {
    pub fn iterations(&self) -> usize {
        self.elbo_trace.len()
    }

    /// `E_q[σ²] = b*/(a* - 1)`.
    pub fn sigma2_mean(&self) -> f64 {
        self.b_star / (self.a_star - 1.0)
    }

    /// Compact JSON view: `V*` reduced to its diagonal.
    pub fn report(&self) -> VbReport {
        VbReport {
            m_star: self.m_star.iter().copied().collect(),
            v_star_diag: self.v_star.diagonal().iter().copied().collect(),
            a_star: self.a_star,
            b_star: self.b_star,
            elbo_trace: self.elbo_trace.clone(),
            converged: self.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbReport {
    pub m_star: Vec<f64>,
    pub v_star_diag: Vec<f64>,
    pub a_star: f64,
    pub b_star: f64,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

/// `‖ỹ‖² - 2ỹᵀZ̃m + mᵀAm + tr(AV)`, the expected penalized residual sum.
fn expected_sum(system: &RidgeSystem, yty: f64, m: &DVector<f64>, v: &DMatrix<f64>) -> f64 {
    let am = &system.gram * m;
    let trace_av = system.gram.component_mul(v).sum();
    yty - 2.0 * system.zty.dot(m) + m.dot(&am) + trace_av
}

/// Coordinate-ascent fit, starting from `b* = b_σ`.
pub fn vb_fit(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorSpec,
    config: &VbConfig,
) -> Result<VariationalPosterior> {
    prior.validate()?;
    if !(config.tol > 0.0) || config.max_iters == 0 {
        return Err(TvcmError::InvalidArgument(format!(
            "invalid VB settings: tol = {}, max_iters = {}",
            config.tol, config.max_iters
        )));
    }
    let (n, p) = z.shape();
    let system = RidgeSystem::new(z, y, prior.ridge)?;
    let gram_inv = system.chol.inverse();
    let yty = y.norm_squared();

    let a_star = prior.a_sigma + 0.5 * n as f64 + 0.5 * p as f64;
    let mut state = VariationalPosterior {
        m_star: DVector::zeros(p),
        v_star: DMatrix::zeros(p, p),
        a_star,
        b_star: prior.b_sigma,
        elbo_trace: Vec::new(),
        converged: false,
    };

    for _ in 0..config.max_iters {
        state.v_star = &gram_inv * (state.b_star / a_star);
        state.m_star = &state.v_star * &system.zty * (a_star / state.b_star);
        state.b_star =
            prior.b_sigma + 0.5 * expected_sum(&system, yty, &state.m_star, &state.v_star);
        if !state.b_star.is_finite() || state.m_star.iter().any(|v| !v.is_finite()) {
            return Err(TvcmError::Numerical("non-finite variational update".into()));
        }

        let value = elbo_with(&state, &system, yty, prior, n)?;
        let increase = state.elbo_trace.last().map(|prev| value - prev);
        state.elbo_trace.push(value);
        if matches!(increase, Some(d) if d < config.tol) {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

/// Evidence lower bound of a variational state:
///
/// ```text
/// -½(N log 2π + p log N - p) + a_σ log b_σ - log Γ(a_σ)
///   + a*(1 + log b* - 2ψ(a*)) + log Γ(a*) + 2(log b* - ψ(a*)) + ½ log|V*|
///   - (a*/b*)[b_σ + ½(‖ỹ‖² - 2ỹᵀZ̃m* + m*ᵀAm* + tr(A V*))]
/// ```
pub fn elbo(
    state: &VariationalPosterior,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorSpec,
) -> Result<f64> {
    let system = RidgeSystem::new(z, y, prior.ridge)?;
    elbo_with(state, &system, y.norm_squared(), prior, z.nrows())
}

fn elbo_with(
    state: &VariationalPosterior,
    system: &RidgeSystem,
    yty: f64,
    prior: &PriorSpec,
    n_obs: usize,
) -> Result<f64> {
    if !(state.b_star > 0.0) {
        return Err(TvcmError::InvalidArgument(format!(
            "b* must be positive, got {}",
            state.b_star
        )));
    }
    let p = system.zty.len() as f64;
    let n_obs = n_obs as f64;
    let a = state.a_star;
    let b = state.b_star;
    let chol = Cholesky::new(state.v_star.clone())
        .ok_or_else(|| TvcmError::Numerical("V* is not positive definite".into()))?;
    let log_det_v = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let psi = digamma(a);

    let constant = -0.5 * (n_obs * (2.0 * std::f64::consts::PI).ln() + p * n_obs.ln() - p);
    let prior_terms = prior.a_sigma * prior.b_sigma.ln() - ln_gamma(prior.a_sigma);
    let q_terms =
        a * (1.0 + b.ln() - 2.0 * psi) + ln_gamma(a) + 2.0 * (b.ln() - psi) + 0.5 * log_det_v;
    let bracket = prior.b_sigma + 0.5 * expected_sum(system, yty, &state.m_star, &state.v_star);
    Ok(constant + prior_terms + q_terms - (a / b) * bracket)
}

/// `B` independent draws from `q(α) q(σ²)`.
pub fn vb_sample(post: &VariationalPosterior, draws: usize, seed: u64) -> Result<PosteriorDraws> {
    if draws == 0 {
        return Err(TvcmError::InvalidArgument("need at least one draw".into()));
    }
    let p = post.m_star.len();
    let chol = Cholesky::new(post.v_star.clone())
        .ok_or_else(|| TvcmError::Numerical("V* is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = rng::root(seed);
    let mut alpha = DMatrix::zeros(draws, p);
    let mut sigma2 = Vec::with_capacity(draws);
    let mut eps = DVector::zeros(p);
    for b in 0..draws {
        sigma2.push(inverse_gamma(post.a_star, post.b_star, &mut rng)?);
        eps.iter_mut()
            .for_each(|e| *e = rng.sample::<f64, _>(StandardNormal));
        let draw = &post.m_star + &l * &eps;
        alpha.row_mut(b).copy_from(&draw.transpose());
    }
    PosteriorDraws::new(alpha, sigma2, DrawSource::Variational, seed)
}
