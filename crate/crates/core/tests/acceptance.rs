//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line and then
//! asserts it. Tests hold a shared lock so timings are not disturbed by
//! neighbours; run with `--nocapture` to see the lines.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use tvcm::basis::{build_design, BasisFamily, BasisSpec, DesignBundle};
use tvcm::bootstrap::bootstrap_fit;
use tvcm::data::{ingest_csv, subject_uniform_weights, CsvSchema, LongitudinalDataset};
use tvcm::draws::{DrawSource, PosteriorDraws};
use tvcm::engine::{fit_engine, time_draws, Engine, EngineConfig};
use tvcm::frequentist::fit_wls;
use tvcm::mcmc::{default_prior, dic, gibbs, ridge_solution, whiten, GibbsConfig};
use tvcm::rng;
use tvcm::selection::{pcv, select_knots, specs_for, Criterion, SelectionConfig};
use tvcm::simgen::{
    gen_scenario1, gen_scenario2, run_replications, CorrelationLevel, ReplicationConfig,
    ReplicationReport, Scenario, Scenario1Config, Scenario2Config, Shape,
};
use tvcm::vb::{vb_fit, VbConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn scenario2(n: usize, seed: u64) -> LongitudinalDataset {
    gen_scenario2(
        &Scenario2Config {
            n,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
    .0
}

fn scenario2_bundle(
    data: &LongitudinalDataset,
    family: BasisFamily,
    knots: &[usize],
) -> (Vec<BasisSpec>, DesignBundle) {
    let specs = specs_for(family, 2, knots, data.time_domain()).unwrap();
    let bundle = build_design(data, &specs, &subject_uniform_weights(data)).unwrap();
    (specs, bundle)
}

fn std_normal_vec(n: usize, r: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(r))
}

#[test]
fn exact_recovery() {
    let _g = serial();
    let mut worst_rel: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    let mut worst_ms: f64 = 0.0;
    for seed in 0..20u64 {
        let data = scenario2(25, seed);
        let family = if seed % 2 == 0 {
            BasisFamily::RadialGaussian
        } else {
            BasisFamily::TruncatedPower
        };
        let knots = [1 + seed as usize % 4, 2, 3 - seed as usize % 3];
        let (_, mut bundle) = scenario2_bundle(&data, family, &knots);
        let truth = std_normal_vec(bundle.n_params(), &mut rng::root(seed));
        bundle.y = &bundle.z * &truth;
        let start = Instant::now();
        let fit = fit_wls(&bundle).unwrap();
        worst_ms = worst_ms.max(start.elapsed().as_secs_f64() * 1e3);
        worst_rel = worst_rel.max((&fit.alpha_hat - &truth).norm() / truth.norm());
        worst_sigma = worst_sigma.max(fit.sigma2_hat);
    }
    verdict(
        "exact-recovery",
        worst_rel <= 1e-10 && worst_sigma <= 1e-16 && worst_ms < 1000.0,
        format!("max rel err {worst_rel:.2e} (≤1e-10), max σ̂² {worst_sigma:.2e} (≤1e-16), max fit {worst_ms:.1} ms (<1 s), 20 designs"),
    );
}

#[test]
fn estimator_unbiasedness() {
    let _g = serial();
    let start = Instant::now();
    let data = scenario2(25, 101);
    let (_, bundle) = scenario2_bundle(&data, BasisFamily::RadialGaussian, &[2, 2, 2]);
    let p = bundle.n_params();
    let mut r = rng::root(5);
    let truth = std_normal_vec(p, &mut r);
    let mean_y = &bundle.z * &truth;
    let sd: Vec<f64> = bundle.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let reps = 500;
    let mut alphas = DMatrix::zeros(reps, p);
    let mut sigmas = Vec::with_capacity(reps);
    for b in 0..reps {
        let mut trial = bundle.clone();
        trial.y = DVector::from_fn(mean_y.len(), |i, _| {
            mean_y[i] + sd[i] * r.sample::<f64, _>(StandardNormal)
        });
        let fit = fit_wls(&trial).unwrap();
        alphas.row_mut(b).copy_from(&fit.alpha_hat.transpose());
        sigmas.push(fit.sigma2_hat);
    }
    let mut worst_z: f64 = 0.0;
    for c in 0..p {
        let col = alphas.column(c);
        let mean = col.mean();
        let se = (col.variance() * reps as f64 / (reps - 1) as f64 / reps as f64).sqrt();
        worst_z = worst_z.max((mean - truth[c]).abs() / se);
    }
    let sigma_mean = sigmas.iter().sum::<f64>() / reps as f64;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "estimator-unbiasedness",
        worst_z <= 3.0 && (sigma_mean - 1.0).abs() <= 0.05 && secs < 30.0,
        format!("max |mean α̂ - α*|/SE = {worst_z:.2} (≤3), mean σ̂² = {sigma_mean:.4} (within 5% of 1), p = {p}, {secs:.1} s (<30 s)"),
    );
}

#[test]
fn gibbs_conjugacy() {
    let _g = serial();
    let start = Instant::now();
    let data = scenario2(25, 7);
    let (_, bundle) = scenario2_bundle(&data, BasisFamily::RadialGaussian, &[1, 1, 1]);
    let fit = fit_wls(&bundle).unwrap();
    let prior = default_prior(&fit);
    let (z, y) = whiten(&bundle).unwrap();
    let sigma2 = 0.8;
    let draws = 10_000;
    let config = GibbsConfig {
        iters: draws,
        burnin: 0,
        fixed_sigma2: Some(sigma2),
    };
    let chain = gibbs(&z, &y, &prior, &config, 2024).unwrap();

    let p = z.ncols();
    let mut a = z.tr_mul(&z);
    for i in 0..p {
        a[(i, i)] += prior.ridge;
    }
    let a_inv = a.clone().try_inverse().unwrap();
    let mean = &a_inv * z.tr_mul(&y);
    let cov = a_inv * sigma2;

    let m = draws as f64;
    let sample_mean = chain.alpha.row_mean().transpose();
    let centred = DMatrix::from_fn(draws, p, |i, j| chain.alpha[(i, j)] - sample_mean[j]);
    let sample_cov = centred.tr_mul(&centred) / (m - 1.0);
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for i in 0..p {
        worst_mean = worst_mean.max((sample_mean[i] - mean[i]).abs() / (cov[(i, i)] / m).sqrt());
        for j in 0..p {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / m).sqrt();
            worst_cov = worst_cov.max((sample_cov[(i, j)] - cov[(i, j)]).abs() / se);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gibbs-conjugacy",
        worst_mean <= 3.0 && worst_cov <= 3.0 && secs < 30.0,
        format!("max mean dev {worst_mean:.2} SE, max covariance dev {worst_cov:.2} SE (≤3), p = {p}, {draws} draws, {secs:.1} s (<30 s)"),
    );
}

#[test]
fn vb_correctness() {
    let _g = serial();
    let start = Instant::now();
    let config = VbConfig::default();

    let mut worst_drop: f64 = 0.0;
    let mut worst_ridge: f64 = 0.0;
    for seed in 0..20u64 {
        let (data, _) = gen_scenario1(&Scenario1Config::default(), seed).unwrap();
        let specs = specs_for(BasisFamily::RadialGaussian, 2, &[5], data.time_domain()).unwrap();
        let bundle = build_design(&data, &specs, &subject_uniform_weights(&data)).unwrap();
        let prior = default_prior(&fit_wls(&bundle).unwrap());
        let (z, y) = whiten(&bundle).unwrap();
        let post = vb_fit(&z, &y, &prior, &config).unwrap();
        for w in post.elbo_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let ridge = ridge_solution(&z, &y, 1.0 / z.nrows() as f64).unwrap();
        worst_ridge = worst_ridge.max((&post.m_star - &ridge).amax() / ridge.amax().max(1.0));
    }

    let data = scenario2(50, 3);
    let sel = select_knots(
        &data,
        &SelectionConfig::new(BasisFamily::RadialGaussian, 2, 5),
    )
    .unwrap();
    let specs = sel
        .specs(BasisFamily::RadialGaussian, 2, data.time_domain())
        .unwrap();
    let engine_config = EngineConfig::default();
    let vb = fit_engine(&data, &specs, Engine::Vb, &engine_config, 11).unwrap();
    let mc = fit_engine(&data, &specs, Engine::Gibbs, &engine_config, 11).unwrap();
    let rel = (&vb.alpha - &mc.alpha).norm() / vb.alpha.norm();
    let secs = start.elapsed().as_secs_f64();

    verdict(
        "vb-correctness",
        worst_drop <= 1e-8 && worst_ridge <= 1e-8 && rel <= 0.02 && secs < 120.0,
        format!(
            "(a) max ELBO decrease {worst_drop:.1e} (≤1e-8) over 20 datasets; (b) max |m* - ridge| {worst_ridge:.1e} (≤1e-8); \
             (c) ‖m* - Gibbs mean‖/‖m*‖ = {rel:.4} (≤0.02), knots {:?}; {secs:.1} s (<120 s)",
            sel.chosen
        ),
    );
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

#[test]
fn table1_speed_ordering() {
    let _g = serial();
    let start = Instant::now();
    let config = EngineConfig::default();
    let mut times = Vec::new();
    for n in [25, 100] {
        let data = scenario2(n, 1);
        let (_, bundle) = scenario2_bundle(&data, BasisFamily::RadialGaussian, &[4, 4, 4]);
        let wls = fit_wls(&bundle).unwrap();
        let mut cell = Vec::new();
        for engine in [Engine::Gibbs, Engine::Vb] {
            let ms: Vec<f64> = (0..7)
                .map(|rep| time_draws(&bundle, &wls, engine, &config, rep).unwrap().0)
                .collect();
            cell.push(median(ms));
        }
        times.push(cell);
    }
    let (mc25, vb25, mc100, vb100) = (times[0][0], times[0][1], times[1][0], times[1][1]);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "table1-speed-ordering",
        vb100 * 5.0 <= mc100 && vb100 <= 2.0 * vb25 && mc100 > mc25 && secs < 120.0,
        format!(
            "n=25: MC {mc25:.2} ms, VB {vb25:.2} ms; n=100: MC {mc100:.2} ms, VB {vb100:.2} ms; \
             VB/MC at n=100 = {:.3} (≤0.2), VB growth {:.2}× (≤2), MC growth {:.2}× (>1); {secs:.1} s (<120 s)",
            vb100 / mc100,
            vb100 / vb25,
            mc100 / mc25
        ),
    );
}

fn replications(scenario: Scenario, k_max: usize, seed: u64) -> ReplicationReport {
    let mut config = ReplicationConfig::new(scenario, 50);
    config.k_max = k_max;
    config.threads = threads();
    let report = run_replications(&config, seed).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    report
}

#[test]
fn simulation_trends() {
    let _g = serial();
    let start = Instant::now();
    let s1 = |n, level, shape| {
        Scenario::One(Scenario1Config {
            n,
            level,
            shape,
            ..Default::default()
        })
    };
    let mut lines = Vec::new();
    let mut pass = true;

    for shape in [Shape::Exp, Shape::Trig] {
        let reports: Vec<ReplicationReport> = [25, 50, 100]
            .into_iter()
            .map(|n| replications(s1(n, CorrelationLevel::Weak, shape), 10, 17))
            .collect();
        for engine in Engine::ALL {
            for family in [BasisFamily::RadialGaussian, BasisFamily::TruncatedPower] {
                let med: Vec<f64> = reports
                    .iter()
                    .map(|r| r.cell(engine, family).metric.unwrap().median)
                    .collect();
                let ok = med[0] > med[1] && med[1] > med[2];
                pass &= ok;
                lines.push(format!(
                    "(a) {shape:?} {engine}/{family} median AMSE n=25,50,100: {:.2e} > {:.2e} > {:.2e} {}",
                    med[0], med[1], med[2], if ok { "ok" } else { "VIOLATED" }
                ));
            }
        }

        let reports: Vec<ReplicationReport> = CorrelationLevel::ALL
            .into_iter()
            .map(|level| replications(s1(50, level, shape), 10, 17))
            .collect();
        for engine in Engine::ALL {
            for family in [BasisFamily::RadialGaussian, BasisFamily::TruncatedPower] {
                let iqr: Vec<f64> = reports
                    .iter()
                    .map(|r| r.cell(engine, family).metric.unwrap().iqr())
                    .collect();
                let ok = iqr[0] < iqr[1] && iqr[1] < iqr[2];
                pass &= ok;
                lines.push(format!(
                    "(b) {shape:?} {engine}/{family} AMSE IQR weak,medium,high: {:.2e} < {:.2e} < {:.2e} {}",
                    iqr[0], iqr[1], iqr[2], if ok { "ok" } else { "VIOLATED" }
                ));
            }
        }
    }

    let s2 = |n| {
        Scenario::Two(Scenario2Config {
            n,
            ..Default::default()
        })
    };
    let small = replications(s2(25), 5, 23);
    let large = replications(s2(100), 5, 23);
    for engine in Engine::ALL {
        for family in [BasisFamily::RadialGaussian, BasisFamily::TruncatedPower] {
            let a = small.cell(engine, family).metric.unwrap().median;
            let b = large.cell(engine, family).metric.unwrap().median;
            let ok = b < a;
            pass &= ok;
            lines.push(format!(
                "(c) {engine}/{family} median MADE n=100 {b:.4} < n=25 {a:.4} {}",
                if ok { "ok" } else { "VIOLATED" }
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        println!("    {l}");
    }
    let violated: Vec<&String> = lines.iter().filter(|l| l.ends_with("VIOLATED")).collect();
    verdict(
        "simulation-trends",
        pass && secs < 900.0,
        format!(
            "{} of {} per-cell orderings hold, R = 50 per cell, {secs:.1} s (<900 s){}",
            lines.len() - violated.len(),
            lines.len(),
            if violated.is_empty() {
                String::new()
            } else {
                format!(
                    "; violated: {}",
                    violated
                        .iter()
                        .map(|l| l.trim_end_matches(" VIOLATED"))
                        .collect::<Vec<_>>()
                        .join("; ")
                )
            }
        ),
    );
}

#[test]
fn bootstrap_coverage() {
    let _g = serial();
    let start = Instant::now();
    let points = [0.3, 0.5, 0.7];
    let cfg = Scenario1Config {
        n: 50,
        level: CorrelationLevel::Weak,
        shape: Shape::Trig,
        ..Default::default()
    };
    let outer = 100;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads())
        .build()
        .unwrap();
    let hits: Vec<[bool; 3]> = pool.install(|| {
        (0..outer)
            .into_par_iter()
            .map(|rep| {
                let seed = rng::derive_seed(99, rep as u64);
                let (data, _) = gen_scenario1(&cfg, seed).unwrap();
                let family = BasisFamily::RadialGaussian;
                let sel = select_knots(&data, &SelectionConfig::new(family, 2, 10)).unwrap();
                let specs = sel.specs(family, 2, data.time_domain()).unwrap();
                let draws = bootstrap_fit(&data, &specs, 200, seed, 1).unwrap();
                let band = draws.curve_band(&specs, 0, &points, 0.95).unwrap();
                let mut out = [false; 3];
                for (k, &t) in points.iter().enumerate() {
                    let truth = Shape::Trig.eval(t);
                    out[k] = band.lower[k] <= truth && truth <= band.upper[k];
                }
                out
            })
            .collect()
    });
    let coverage: Vec<f64> = (0..3)
        .map(|k| hits.iter().filter(|h| h[k]).count() as f64 / outer as f64)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = coverage.iter().all(|&c| (0.88..=0.99).contains(&c));
    verdict(
        "bootstrap-coverage",
        ok && secs < 600.0,
        format!(
            "coverage at t=0.3,0.5,0.7: {:.2}, {:.2}, {:.2} (each in [0.88, 0.99]), B = 200, {outer} replications, {secs:.1} s (<600 s)",
            coverage[0], coverage[1], coverage[2]
        ),
    );
}

#[test]
fn pcv_machinery() {
    let _g = serial();
    let start = Instant::now();
    let mut r = rng::root(8);
    let mut worst_trace: f64 = 0.0;
    for (rows, cols) in [(12, 5), (30, 7), (50, 12), (200, 20), (13, 12)] {
        for _ in 0..4 {
            let bundle = DesignBundle {
                z: DMatrix::from_fn(rows, cols, |_, _| r.random_range(-2.0..2.0)),
                weights: DVector::from_fn(rows, |_, _| r.random_range(0.05..1.0)),
                y: std_normal_vec(rows, &mut r),
                block_dims: vec![cols],
                specs: vec![BasisSpec::truncated_power(cols - 1, vec![]).unwrap()],
            };
            let fit = fit_wls(&bundle).unwrap();
            worst_trace = worst_trace.max((fit.hat_trace - cols as f64).abs());
        }
    }

    let data = LongitudinalDataset::new(
        vec![tvcm::SubjectRecord::new(
            "a",
            [1.0, 2.0, 3.0]
                .iter()
                .enumerate()
                .map(|(j, &y)| tvcm::Observation {
                    time: j as f64,
                    response: y,
                    covariates: vec![],
                })
                .collect(),
        )],
        0,
        None,
    )
    .unwrap();
    let spec = BasisSpec::truncated_power(0, vec![]).unwrap();
    let bundle = build_design(&data, &[spec], &subject_uniform_weights(&data)).unwrap();
    let hand = pcv(&bundle, &fit_wls(&bundle).unwrap());

    let mut agree = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let (data, _) = gen_scenario1(
            &Scenario1Config {
                n: 8,
                m: 10,
                ..Default::default()
            },
            seed,
        )
        .unwrap();
        let mut config = SelectionConfig::new(BasisFamily::RadialGaussian, 2, 4);
        let trace_form = select_knots(&data, &config).unwrap().chosen;
        config.criterion = Criterion::LeaveOnePointOut;
        let loo = select_knots(&data, &config).unwrap().chosen;
        if trace_form == loo {
            agree += 1;
        }
        pairs.push(format!("{}/{}", trace_form[0], loo[0]));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "pcv-machinery",
        worst_trace <= 1e-8 && (hand - 1.5).abs() <= 4.0 * f64::EPSILON && agree >= 8 && secs < 120.0,
        format!(
            "max |tr(A) - p| {worst_trace:.1e} (≤1e-8); hand PCV {hand:?} (1.5); trace/LOO argmin agree {agree}/10 (≥8) [{}]; {secs:.1} s (<120 s)",
            pairs.join(" ")
        ),
    );
}

#[test]
fn dic_behaviour() {
    let _g = serial();
    let start = Instant::now();
    let data = scenario2(25, 4);
    let (_, bundle) = scenario2_bundle(&data, BasisFamily::RadialGaussian, &[2, 2, 2]);
    let (z, y) = whiten(&bundle).unwrap();
    let point = ridge_solution(&z, &y, 1.0 / z.nrows() as f64).unwrap();
    let flat = PosteriorDraws::new(
        DMatrix::from_fn(6, point.len(), |_, j| point[j]),
        vec![0.37; 6],
        DrawSource::Gibbs,
        0,
    )
    .unwrap();
    let zero_spread = dic(&flat, &z, &y).unwrap().p_dic;

    let mut wins = 0;
    let mut margins = Vec::new();
    let config = EngineConfig::default();
    for seed in 0..10u64 {
        let data = scenario2(50, 1000 + seed);
        let family = BasisFamily::RadialGaussian;
        let sel = select_knots(&data, &SelectionConfig::new(family, 2, 5)).unwrap();
        let specs = sel.specs(family, 2, data.time_domain()).unwrap();
        let full = fit_engine(&data, &specs, Engine::Gibbs, &config, seed).unwrap();
        let constant = specs_for(
            BasisFamily::TruncatedPower,
            0,
            &[0, 0, 0],
            data.time_domain(),
        )
        .unwrap();
        let flat = fit_engine(&data, &constant, Engine::Gibbs, &config, seed).unwrap();
        let (a, b) = (full.dic.unwrap().dic, flat.dic.unwrap().dic);
        if a < b {
            wins += 1;
        }
        margins.push(format!("{:.0}", b - a));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "dic",
        zero_spread == 0.0 && wins == 10 && secs < 120.0,
        format!(
            "zero-spread p_DIC = {zero_spread:?} (exactly 0); smooth basis beats constant-only in {wins}/10 (10) [DIC margins {}]; {secs:.1} s (<120 s)",
            margins.join(" ")
        ),
    );
}

fn case_study_csv() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/actg_like.csv")
}

#[test]
fn case_study_smoke() {
    let _g = serial();
    let start = Instant::now();
    let schema = CsvSchema {
        time: "week".into(),
        response: "sqrt_cd4".into(),
        covariates: Some(vec!["treatment".into()]),
        ..Default::default()
    };
    let data = ingest_csv(case_study_csv(), &schema).unwrap();
    let sizes: Vec<usize> = data.subjects().iter().map(|s| s.len()).collect();
    let shape_ok = data.n_subjects() == 166
        && sizes.iter().all(|&k| (1..=18).contains(&k))
        && sizes.contains(&1)
        && sizes.contains(&18);

    let family = BasisFamily::RadialGaussian;
    let sel = select_knots(&data, &SelectionConfig::new(family, 2, 10)).unwrap();
    let specs = sel.specs(family, 2, data.time_domain()).unwrap();
    let fit = fit_engine(&data, &specs, Engine::Gibbs, &EngineConfig::default(), 42).unwrap();
    let grid = tvcm::basis::uniform_grid(data.time_domain(), 200);
    let draws = fit.draws.as_ref().unwrap();
    let bands_ok = (0..2).all(|r| {
        let band = draws.curve_band(&specs, r, &grid, 0.95).unwrap();
        band.lower
            .iter()
            .zip(&band.upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && l <= u)
    });
    let dic_value = fit.dic.as_ref().unwrap().dic;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "case-study-smoke",
        shape_ok && bands_ok && dic_value.is_finite(),
        format!(
            "{} subjects, {} observations, knots {:?}, DIC {dic_value:.1}, finite 95% bands on 200-point grid; {secs:.1} s \
             (published case-study numbers are not reproducible without the original data)",
            data.n_subjects(),
            data.n_obs(),
            sel.chosen
        ),
    );
}
