//! Uniform entry point over the three inference engines.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, BasisSpec, DesignBundle};
use crate::bootstrap::bootstrap_fit;
use crate::data::{subject_uniform_weights, LongitudinalDataset};
use crate::draws::PosteriorDraws;
use crate::error::{Result, TvcmError};
use crate::frequentist::{fit_wls, WlsFit};
use crate::mcmc::{default_prior, dic, gibbs, whiten, Dic, GibbsConfig, PriorSpec};
use crate::rng;
use crate::vb::{vb_fit, vb_sample, VariationalPosterior, VbConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Wls,
    Gibbs,
    Vb,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Wls, Engine::Gibbs, Engine::Vb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Wls => "wls",
            Engine::Gibbs => "gibbs",
            Engine::Vb => "vb",
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Engine {
    type Err = TvcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wls" | "frequentist" | "bootstrap" => Ok(Engine::Wls),
            "gibbs" | "mcmc" | "mc" => Ok(Engine::Gibbs),
            "vb" | "variational" => Ok(Engine::Vb),
            other => Err(TvcmError::InvalidArgument(format!(
                "unknown engine `{other}` (expected wls, gibbs or vb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Bootstrap replicates for the WLS engine (0 disables the bootstrap).
    pub boot: usize,
    /// Retained posterior draws for Gibbs and VB.
    pub draws: usize,
    pub burnin: usize,
    pub vb: VbConfig,
    pub threads: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            boot: 0,
            draws: 2000,
            burnin: 500,
            vb: VbConfig::default(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineFit {
    pub engine: Engine,
    /// Point estimate of `α`: `α̂` for WLS, the posterior mean for Gibbs,
    /// `m*` for VB.
    pub alpha: DVector<f64>,
    pub wls: WlsFit,
    pub prior: Option<PriorSpec>,
    pub draws: Option<PosteriorDraws>,
    pub variational: Option<VariationalPosterior>,
    pub dic: Option<Dic>,
    pub bundle: DesignBundle,
}

impl EngineFit {
    pub fn alpha_blocks(&self) -> Vec<&[f64]> {
        self.bundle.split_alpha(self.alpha.as_slice())
    }
}

/// Build the weighted design for `data` and run one engine on it.
pub fn fit_engine(
    data: &LongitudinalDataset,
    specs: &[BasisSpec],
    engine: Engine,
    config: &EngineConfig,
    seed: u64,
) -> Result<EngineFit> {
    let weights = subject_uniform_weights(data);
    let bundle = build_design(data, specs, &weights)?;
    let wls = fit_wls(&bundle)?;
    match engine {
        Engine::Wls => {
            let draws = if config.boot > 0 {
                Some(bootstrap_fit(
                    data,
                    specs,
                    config.boot,
                    seed,
                    config.threads,
                )?)
            } else {
                None
            };
            Ok(EngineFit {
                engine,
                alpha: wls.alpha_hat.clone(),
                wls,
                prior: None,
                draws,
                variational: None,
                dic: None,
                bundle,
            })
        }
        Engine::Gibbs | Engine::Vb => fit_bayes(bundle, wls, engine, config, seed),
    }
}

/// Bayesian engines on an already assembled design.
pub fn fit_bayes(
    bundle: DesignBundle,
    wls: WlsFit,
    engine: Engine,
    config: &EngineConfig,
    seed: u64,
) -> Result<EngineFit> {
    let prior = default_prior(&wls);
    let (z, y) = whiten(&bundle)?;
    let (alpha, draws, variational) = match engine {
        Engine::Gibbs => {
            let draws = gibbs(
                &z,
                &y,
                &prior,
                &GibbsConfig::retained(config.draws, config.burnin),
                seed,
            )?;
            (draws.alpha_mean(), draws, None)
        }
        Engine::Vb => {
            let post = vb_fit(&z, &y, &prior, &config.vb)?;
            if !post.converged {
                log::warn!(
                    "variational fit stopped after {} iterations without converging",
                    post.iterations()
                );
            }
            let draws = vb_sample(&post, config.draws, rng::derive_seed(seed, 1))?;
            (post.m_star.clone(), draws, Some(post))
        }
        Engine::Wls => {
            return Err(TvcmError::InvalidArgument(
                "fit_bayes called with the WLS engine".into(),
            ))
        }
    };
    let dic = if draws.n_draws() >= 2 {
        Some(dic(&draws, &z, &y)?)
    } else {
        None
    };
    Ok(EngineFit {
        engine,
        alpha,
        wls,
        prior: Some(prior),
        draws: Some(draws),
        variational,
        dic,
        bundle,
    })
}

/// Wall-clock milliseconds spent producing `config.draws` posterior draws
/// on an assembled design. Whitening and the prior are prepared untimed.
pub fn time_draws(
    bundle: &DesignBundle,
    wls: &WlsFit,
    engine: Engine,
    config: &EngineConfig,
    seed: u64,
) -> Result<(f64, PosteriorDraws)> {
    let prior = default_prior(wls);
    let (z, y) = whiten(bundle)?;
    let start = std::time::Instant::now();
    let draws = match engine {
        Engine::Gibbs => gibbs(
            &z,
            &y,
            &prior,
            &GibbsConfig::retained(config.draws, config.burnin),
            seed,
        )?,
        Engine::Vb => {
            let post = vb_fit(&z, &y, &prior, &config.vb)?;
            vb_sample(&post, config.draws, rng::derive_seed(seed, 1))?
        }
        Engine::Wls => {
            return Err(TvcmError::InvalidArgument(
                "draw timing applies to gibbs and vb".into(),
            ))
        }
    };
    Ok((start.elapsed().as_secs_f64() * 1e3, draws))
}
