//! Experiment drivers: tuning and estimation for each named experiment.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpsError};
use crate::estimators::{
    aggregate, cv_estimate, mse_cv_estimate, sample_split, ups_estimate, AggregateSummary,
    CvInstance, DataSplit, UpsEstimate,
};
use crate::models::data::{bundled, load_leukemia, load_mammal, load_stackloss, synthetic_logistic};
use crate::models::linear::{LinearModel, LinregGibbsKernel};
use crate::models::logistic::{laplace_fit, LogisticModel, PggKernel, PggPathKind};
use crate::models::rwmh::{CouplingKind, RwmhConfig, RwmhKernel};
use crate::paths::{
    cv_covariate_path, cv_tempering_path, doublewell_path, laplace_anchored_path,
    logistic_covariate_path, normal_translation_path, PathFamily,
};
use crate::tuning::{
    build_proposal, choose_k, choose_m, estimate_m2, quantile_type7, survey_meetings,
    GridPointTuning, LambdaGrid, TuningReport,
};
use crate::unbiased::{h_km, run_coupled, run_to_meeting, CoupledKernel, EstimatorConfig};

use super::config::{ExperimentConfig, ExperimentName, GridChoice, PathVariant};

// Independent RNG seed streams derived from the master seed.
const SALT_DATA: u64 = 0x5eed_da7a;
const SALT_SURVEY: u64 = 0x0051;
const SALT_ADAPT: u64 = 0x0052;
const SALT_M2: u64 = 0x0053;
const SALT_ESTIMATE: u64 = 0xe571_0000;

/// Mean and spherical spread of a target, estimated with unbiased MCMC;
/// used to recenter initial and proposal distributions per grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptedMoments {
    pub mean: Vec<f64>,
    pub sd: f64,
}

/// The persisted outcome of `run_tune`: the library tuning report plus
/// any experiment-specific extras the estimation phase needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningArtifact {
    pub experiment: ExperimentName,
    pub report: TuningReport,
    /// Per-grid-point adapted kernel moments (normal toy second pass).
    pub moments: Option<Vec<AdaptedMoments>>,
    /// (left-out index, meeting time) pairs for split-indexed surveys;
    /// the index is None when the validation set is not a single point.
    pub survey_by_index: Option<Vec<(Option<usize>, usize)>>,
}

impl TuningArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn make_grid(cfg: &ExperimentConfig) -> Result<LambdaGrid> {
    match cfg.grid {
        GridChoice::Equispaced => LambdaGrid::equispaced(cfg.grid_size),
        GridChoice::Log => LambdaGrid::log_equispaced(cfg.grid_size),
    }
}

fn synthetic_model(cfg: &ExperimentConfig) -> LogisticModel {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_DATA);
    synthetic_logistic(&mut rng)
}

fn mean_of(taus: &[usize]) -> f64 {
    taus.iter().sum::<usize>() as f64 / taus.len() as f64
}

fn tau_quantile(taus: &[usize], p: f64) -> f64 {
    let mut sorted: Vec<f64> = taus.iter().map(|&t| t as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7(&sorted, p)
}

/// Burn-ins and horizons from surveyed meeting times, honoring fixed
/// overrides from the config.
fn choose_km(cfg: &ExperimentConfig, meetings: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let ks: Vec<usize> = match cfg.fixed_k {
        Some(k) => vec![k; meetings.len()],
        None => meetings
            .iter()
            .map(|m| choose_k(m, cfg.k_quantile, cfg.k_multiplier))
            .collect(),
    };
    let ms = match cfg.fixed_m {
        Some(m) => vec![m; meetings.len()],
        None => {
            let tau_means: Vec<f64> = meetings.iter().map(|m| mean_of(m)).collect();
            choose_m(&ks, &tau_means)
        }
    };
    (ks, ms)
}

fn assemble_report(
    cfg: &ExperimentConfig,
    grid: LambdaGrid,
    meetings: Vec<Vec<usize>>,
    ks: &[usize],
    ms: &[usize],
    sqrt_m2: &[f64],
    masses: Vec<f64>,
) -> TuningReport {
    let points = grid
        .points()
        .iter()
        .zip(meetings)
        .enumerate()
        .map(|(i, (&lambda, meeting_times))| GridPointTuning {
            lambda,
            tau_mean: mean_of(&meeting_times),
            tau_q99: tau_quantile(&meeting_times, cfg.k_quantile),
            meeting_times,
            k: ks[i],
            m: ms[i],
            sqrt_m2: sqrt_m2[i],
        })
        .collect();
    TuningReport {
        grid,
        points,
        masses,
    }
}

/// A single-interval report on [0, 1] with a uniform lambda proposal and
/// the same (k, m) at both endpoints; used by the fixed-(k, m)
/// experiments.
fn uniform_report(cfg: &ExperimentConfig, taus: Vec<usize>, k: usize, m: usize) -> TuningReport {
    let grid = LambdaGrid::equispaced(1).expect("L = 1 is valid");
    let tau_mean = mean_of(&taus);
    let tau_q99 = tau_quantile(&taus, cfg.k_quantile);
    let mk_point = |lambda: f64, meeting_times: Vec<usize>| GridPointTuning {
        lambda,
        meeting_times,
        k,
        m,
        tau_mean,
        tau_q99,
        sqrt_m2: 1.0,
    };
    TuningReport {
        grid,
        points: vec![mk_point(0.0, taus), mk_point(1.0, Vec::new())],
        masses: vec![1.0],
    }
}

/// Meeting times of `r` independent coupled runs of one fixed kernel.
fn survey_fixed(
    kernel: &dyn CoupledKernel,
    r: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    (0..r)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            run_to_meeting(kernel, max_iterations, &mut rng)
        })
        .collect()
}

/// Meeting times over random data splits; each replicate draws its own
/// split (and, when `uniform_lambda` is set, its own lambda).
fn survey_random_splits<F>(
    n: usize,
    n_t: usize,
    uniform_lambda: bool,
    make: &F,
    r: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<Vec<(Option<usize>, usize)>>
where
    F: Fn(&DataSplit, f64) -> Result<Box<dyn CoupledKernel>> + Sync,
{
    (0..r)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let split = sample_split(n, n_t, &mut rng)?;
            let lambda = if uniform_lambda { rng.gen::<f64>() } else { 1.0 };
            let kernel = make(&split, lambda)?;
            let tau = run_to_meeting(kernel.as_ref(), max_iterations, &mut rng)?;
            let index = if split.valid.len() == 1 {
                Some(split.valid[0])
            } else {
                None
            };
            Ok((index, tau))
        })
        .collect()
}

/// Estimate per-grid-point target moments with unbiased MCMC, averaging
/// `r` replicates of H_{k:m} applied to h(x) = (x, x^2).
fn adapt_moments<F>(
    factory: &F,
    grid: &LambdaGrid,
    ks: &[usize],
    ms: &[usize],
    r: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<Vec<AdaptedMoments>>
where
    F: Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync,
{
    grid.points()
        .par_iter()
        .enumerate()
        .map(|(idx, &lambda)| {
            let kernel = factory(lambda).map_err(|e| e.at_lambda(lambda))?;
            let cfg = EstimatorConfig::with_cap(ks[idx], ms[idx], max_iterations)?;
            let h = |s: &[f64]| {
                let mut out = s.to_vec();
                out.extend(s.iter().map(|v| v * v));
                out
            };
            let mut sums: Vec<f64> = Vec::new();
            for rep in 0..r {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((idx as u64) << 32) | rep as u64);
                let run =
                    run_coupled(kernel.as_ref(), &h, &cfg, &mut rng).map_err(|e| e.at_lambda(lambda))?;
                let est = h_km(&run, &cfg);
                if sums.is_empty() {
                    sums = vec![0.0; est.len()];
                }
                for (a, b) in sums.iter_mut().zip(est) {
                    *a += b;
                }
            }
            let d = sums.len() / 2;
            let mean: Vec<f64> = sums[..d].iter().map(|v| v / r as f64).collect();
            let var_avg = (0..d)
                .map(|j| (sums[d + j] / r as f64 - mean[j] * mean[j]).max(1e-4))
                .sum::<f64>()
                / d as f64;
            Ok(AdaptedMoments {
                mean,
                sd: var_avg.sqrt(),
            })
        })
        .collect()
}

/// Kernel factory for the normal toy: fixed wide settings before
/// adaptation, per-grid-point moment-matched settings after.
fn normal_rwmh_factory(
    grid: LambdaGrid,
    moments: Option<Vec<AdaptedMoments>>,
) -> impl Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync {
    let path: Arc<dyn PathFamily> = Arc::new(normal_translation_path(4.0));
    move |lambda| {
        let cfg = match &moments {
            Some(ms) => {
                let m = &ms[grid.nearest_index(lambda)];
                RwmhConfig::spherical(
                    1,
                    m.sd,
                    DVector::from_vec(m.mean.clone()),
                    m.sd,
                    CouplingKind::Maximal,
                )
            }
            None => RwmhConfig::spherical(
                1,
                1.0,
                DVector::from_element(1, -1.0),
                2.0,
                CouplingKind::Maximal,
            ),
        };
        Ok(Box::new(RwmhKernel::new(path.clone(), lambda, cfg)))
    }
}

fn doublewell_factory() -> impl Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync {
    let path: Arc<dyn PathFamily> = Arc::new(doublewell_path());
    let cfg = RwmhConfig::from_covariances(
        DMatrix::identity(2, 2) * 2.0,
        DVector::from_vec(vec![-2.0, -2.0]),
        DMatrix::identity(2, 2),
        CouplingKind::Maximal,
    )
    .expect("identity covariances are PD");
    move |lambda| Ok(Box::new(RwmhKernel::new(path.clone(), lambda, cfg.clone())))
}

/// Random-walk settings from the Laplace approximation: proposal
/// covariance V_hat / p, initial distribution N(beta_mle, V_hat),
/// reflection-maximal proposal coupling.
fn laplace_rw_config(model: &LogisticModel) -> Result<RwmhConfig> {
    let (mle, vhat) = laplace_fit(model)?;
    RwmhConfig::from_covariances(
        &vhat / model.p() as f64,
        mle,
        vhat,
        CouplingKind::ReflectionMaximal,
    )
}

fn resolve_variant(cfg: &ExperimentConfig) -> Result<PathVariant> {
    let allowed: &[PathVariant] = match cfg.experiment {
        ExperimentName::LogisticEvidence => &[PathVariant::Covariate, PathVariant::Laplace],
        ExperimentName::LogisticCv => &[PathVariant::Covariate, PathVariant::Tempering],
        ExperimentName::Leukemia => &[PathVariant::Covariate],
        _ => &[],
    };
    match cfg.path {
        PathVariant::Default => Ok(allowed.first().copied().unwrap_or(PathVariant::Default)),
        v if allowed.contains(&v) || allowed.is_empty() && v == PathVariant::Default => Ok(v),
        v => Err(UpsError::Config(format!(
            "path variant '{v}' not available for experiment '{}'",
            cfg.experiment
        ))),
    }
}

/// The 5-step tuning pipeline over the configured grid.
fn standard_tune<F>(
    cfg: &ExperimentConfig,
    path: &dyn PathFamily,
    factory: &F,
) -> Result<TuningReport>
where
    F: Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync,
{
    let grid = make_grid(cfg)?;
    let meetings = survey_meetings(
        factory,
        &grid,
        cfg.survey_replicates,
        cfg.max_iterations,
        cfg.seed ^ SALT_SURVEY,
    )?;
    let (ks, ms) = choose_km(cfg, &meetings);
    let m2 = estimate_m2(
        factory,
        path,
        &grid,
        &ks,
        &ms,
        cfg.m2_replicates,
        cfg.max_iterations,
        cfg.seed ^ SALT_M2,
    )?;
    let sqrt_m2: Vec<f64> = m2.iter().map(|v| v.sqrt()).collect();
    let proposal = build_proposal(&grid, &sqrt_m2)?;
    let masses = proposal.masses().to_vec();
    Ok(assemble_report(cfg, grid, meetings, &ks, &ms, &sqrt_m2, masses))
}

/// Tune an experiment: survey meeting times, pick (k, m), estimate
/// sqrt(m2) and build the lambda proposal. Fixed-(k, m) experiments
/// survey a single representative kernel and use a uniform proposal.
pub fn run_tune(cfg: &ExperimentConfig) -> Result<TuningArtifact> {
    cfg.validate()?;
    let variant = resolve_variant(cfg)?;
    let mut moments = None;
    let mut survey_by_index = None;
    let report = match cfg.experiment {
        ExperimentName::Normal => {
            let path = normal_translation_path(4.0);
            let factory = normal_rwmh_factory(make_grid(cfg)?, None);
            let grid = make_grid(cfg)?;
            let meetings = survey_meetings(
                &factory,
                &grid,
                cfg.survey_replicates,
                cfg.max_iterations,
                cfg.seed ^ SALT_SURVEY,
            )?;
            let (ks, ms) = choose_km(cfg, &meetings);
            let final_factory = if cfg.adapt {
                let ms_adapted = adapt_moments(
                    &factory,
                    &grid,
                    &ks,
                    &ms,
                    cfg.m2_replicates,
                    cfg.max_iterations,
                    cfg.seed ^ SALT_ADAPT,
                )?;
                moments = Some(ms_adapted.clone());
                normal_rwmh_factory(grid.clone(), Some(ms_adapted))
            } else {
                normal_rwmh_factory(grid.clone(), None)
            };
            let m2 = estimate_m2(
                &final_factory,
                &path,
                &grid,
                &ks,
                &ms,
                cfg.m2_replicates,
                cfg.max_iterations,
                cfg.seed ^ SALT_M2,
            )?;
            let sqrt_m2: Vec<f64> = m2.iter().map(|v| v.sqrt()).collect();
            let proposal = build_proposal(&grid, &sqrt_m2)?;
            let masses = proposal.masses().to_vec();
            assemble_report(cfg, grid, meetings, &ks, &ms, &sqrt_m2, masses)
        }
        ExperimentName::Doublewell => {
            standard_tune(cfg, &doublewell_path(), &doublewell_factory())?
        }
        ExperimentName::LogisticEvidence => {
            let model = synthetic_model(cfg);
            match variant {
                PathVariant::Laplace => {
                    let path = Arc::new(laplace_anchored_path(&model)?);
                    let rw = laplace_rw_config(&model)?;
                    let kernel = RwmhKernel::new(path, 0.0, rw);
                    let taus = survey_fixed(
                        &kernel,
                        cfg.survey_replicates,
                        cfg.max_iterations,
                        cfg.seed ^ SALT_SURVEY,
                    )?;
                    let k = cfg
                        .fixed_k
                        .unwrap_or_else(|| choose_k(&taus, cfg.k_quantile, cfg.k_multiplier));
                    let m = cfg.fixed_m.unwrap_or(5 * k);
                    uniform_report(cfg, taus, k, m)
                }
                _ => {
                    let path = logistic_covariate_path(&model);
                    let m = model.clone();
                    let factory = move |lambda: f64| -> Result<Box<dyn CoupledKernel>> {
                        Ok(Box::new(PggKernel::new(
                            &m,
                            lambda,
                            PggPathKind::CovariateScaling,
                            &[],
                        )?))
                    };
                    standard_tune(cfg, &path, &factory)?
                }
            }
        }
        ExperimentName::LogisticCv => {
            let model = synthetic_model(cfg);
            let taus = match variant {
                PathVariant::Tempering => {
                    let rw = laplace_rw_config(&model)?;
                    let n = model.n();
                    let split = DataSplit {
                        train: (0..n - 1).collect(),
                        valid: vec![n - 1],
                    };
                    let instance = logistic_tempering_instance(&model, &rw, &split)?;
                    let kernel = (instance.factory)(1.0)?;
                    survey_fixed(
                        kernel.as_ref(),
                        cfg.survey_replicates,
                        cfg.max_iterations,
                        cfg.seed ^ SALT_SURVEY,
                    )?
                }
                _ => {
                    // At lambda = 1 the covariate-scaled chain is the
                    // full-data posterior chain; meeting times there
                    // govern the fixed (k, m) for every split.
                    let kernel =
                        PggKernel::new(&model, 1.0, PggPathKind::CovariateScaling, &[])?;
                    survey_fixed(
                        &kernel,
                        cfg.survey_replicates,
                        cfg.max_iterations,
                        cfg.seed ^ SALT_SURVEY,
                    )?
                }
            };
            let k = cfg
                .fixed_k
                .unwrap_or_else(|| choose_k(&taus, cfg.k_quantile, cfg.k_multiplier));
            let m = cfg.fixed_m.unwrap_or(5 * k);
            uniform_report(cfg, taus, k, m)
        }
        ExperimentName::Leukemia => {
            let model = load_leukemia(&bundled("leukemia.csv"))?;
            let mk = |split: &DataSplit, lambda: f64| -> Result<Box<dyn CoupledKernel>> {
                Ok(Box::new(PggKernel::new(
                    &model,
                    lambda,
                    PggPathKind::CvCovariate,
                    &split.valid,
                )?))
            };
            let pairs = survey_random_splits(
                model.n(),
                model.n() - 1,
                true,
                &mk,
                cfg.survey_replicates,
                cfg.max_iterations,
                cfg.seed ^ SALT_SURVEY,
            )?;
            let taus: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
            let k = cfg
                .fixed_k
                .unwrap_or_else(|| choose_k(&taus, cfg.k_quantile, cfg.k_multiplier));
            let m = cfg.fixed_m.unwrap_or(5 * k);
            survey_by_index = Some(pairs);
            uniform_report(cfg, taus, k, m)
        }
        ExperimentName::MammalMse => {
            let model = load_mammal(&bundled("mammal.csv"))?;
            let mk = |split: &DataSplit, _lambda: f64| -> Result<Box<dyn CoupledKernel>> {
                Ok(Box::new(LinregGibbsKernel::new(&model, &split.train, &[], 1.0)?))
            };
            let pairs = survey_random_splits(
                model.n(),
                model.n() / 2,
                false,
                &mk,
                cfg.survey_replicates,
                cfg.max_iterations,
                cfg.seed ^ SALT_SURVEY,
            )?;
            let taus: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
            let k = cfg
                .fixed_k
                .unwrap_or_else(|| choose_k(&taus, cfg.k_quantile, cfg.k_multiplier));
            let m = cfg.fixed_m.unwrap_or(5 * k);
            uniform_report(cfg, taus, k, m)
        }
        ExperimentName::MammalLogscore | ExperimentName::Stackloss => {
            let (model, n_t) = match cfg.experiment {
                ExperimentName::MammalLogscore => {
                    let m = load_mammal(&bundled("mammal.csv"))?;
                    let n_t = m.n() / 2;
                    (m, n_t)
                }
                _ => {
                    let m = load_stackloss(&bundled("stackloss.csv"))?;
                    let n_t = m.n() - 1;
                    (m, n_t)
                }
            };
            let mk = |split: &DataSplit, lambda: f64| -> Result<Box<dyn CoupledKernel>> {
                Ok(Box::new(LinregGibbsKernel::new(
                    &model,
                    &split.train,
                    &split.valid,
                    lambda,
                )?))
            };
            let pairs = survey_random_splits(
                model.n(),
                n_t,
                true,
                &mk,
                cfg.survey_replicates,
                cfg.max_iterations,
                cfg.seed ^ SALT_SURVEY,
            )?;
            let taus: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
            let k = cfg
                .fixed_k
                .unwrap_or_else(|| choose_k(&taus, cfg.k_quantile, cfg.k_multiplier));
            let m = cfg.fixed_m.unwrap_or(5 * k);
            survey_by_index = Some(pairs);
            uniform_report(cfg, taus, k, m)
        }
    };
    Ok(TuningArtifact {
        experiment: cfg.experiment,
        report,
        moments,
        survey_by_index,
    })
}

/// Tempering-path CV instance for a logistic split: geometric path in
/// the validation likelihood, sampled with random-walk MH tuned from the
/// Laplace approximation.
fn logistic_tempering_instance(
    model: &LogisticModel,
    rw: &RwmhConfig,
    split: &DataSplit,
) -> Result<CvInstance> {
    let train_model = model.subset(&split.train);
    let valid_model = model.subset(&split.valid);
    let prior = model.prior();
    let base = move |s: &[f64]| {
        let beta = DVector::from_column_slice(s);
        prior.log_density_vector(&beta) + train_model.log_likelihood(&beta)
    };
    let valid = move |s: &[f64]| {
        let beta = DVector::from_column_slice(s);
        valid_model.log_likelihood(&beta)
    };
    let path: Arc<dyn PathFamily> = Arc::new(cv_tempering_path(base, valid));
    let kernel_path = path.clone();
    let rw = rw.clone();
    Ok(CvInstance {
        path,
        factory: Box::new(move |lambda| {
            Ok(Box::new(RwmhKernel::new(kernel_path.clone(), lambda, rw.clone())))
        }),
    })
}

/// Covariate-scaling CV instance for a logistic split, sampled with the
/// coupled PGG kernel.
fn logistic_covariate_instance(model: &LogisticModel, split: &DataSplit) -> Result<CvInstance> {
    let path = cv_covariate_path(model, &split.train, &split.valid)?;
    let kernel_model = model.clone();
    let valid = split.valid.clone();
    Ok(CvInstance {
        path: Arc::new(path),
        factory: Box::new(move |lambda| {
            Ok(Box::new(PggKernel::new(
                &kernel_model,
                lambda,
                PggPathKind::CvCovariate,
                &valid,
            )?))
        }),
    })
}

/// Tempering-path CV instance for a linear-regression split, sampled
/// with the coupled two-block Gibbs kernel. The chain state is
/// (beta, sigma^2).
fn linear_tempering_instance(model: &LinearModel, split: &DataSplit) -> Result<CvInstance> {
    let p = model.p();
    let base_model = model.clone();
    let train = split.train.clone();
    let base = move |s: &[f64]| {
        let sigma2 = s[p];
        if sigma2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let beta = DVector::from_column_slice(&s[..p]);
        // Improper prior sigma^-2 times the training likelihood.
        -sigma2.ln() + base_model.log_likelihood_rows(&train, &beta, sigma2)
    };
    let valid_model = model.clone();
    let valid_rows = split.valid.clone();
    let valid = move |s: &[f64]| {
        let sigma2 = s[p];
        if sigma2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let beta = DVector::from_column_slice(&s[..p]);
        valid_model.log_likelihood_rows(&valid_rows, &beta, sigma2)
    };
    let path: Arc<dyn PathFamily> = Arc::new(cv_tempering_path(base, valid));
    let kernel_model = model.clone();
    let train_k = split.train.clone();
    let valid_k = split.valid.clone();
    Ok(CvInstance {
        path,
        factory: Box::new(move |lambda| {
            Ok(Box::new(LinregGibbsKernel::new(
                &kernel_model,
                &train_k,
                &valid_k,
                lambda,
            )?))
        }),
    })
}

/// Generate the configured number of independent replicates and their
/// aggregate. Replicate i uses its own RNG stream, so the output is
/// independent of worker scheduling.
pub fn run_estimate(
    cfg: &ExperimentConfig,
    artifact: &TuningArtifact,
) -> Result<(Vec<UpsEstimate>, AggregateSummary)> {
    cfg.validate()?;
    if artifact.experiment != cfg.experiment {
        return Err(UpsError::Config(format!(
            "tuning artifact is for '{}', config wants '{}'",
            artifact.experiment, cfg.experiment
        )));
    }
    let variant = resolve_variant(cfg)?;
    let q = artifact.report.proposal()?;
    let report = &artifact.report;
    let km = move |lambda: f64| {
        let point = &report.points[report.grid.nearest_index(lambda)];
        (point.k, point.m)
    };
    let cap = cfg.max_iterations;

    let replicate: Box<dyn Fn(&mut ChaCha8Rng) -> Result<UpsEstimate> + Sync + '_> =
        match cfg.experiment {
            ExperimentName::Normal => {
                let path: Arc<dyn PathFamily> = Arc::new(normal_translation_path(4.0));
                let factory =
                    normal_rwmh_factory(report.grid.clone(), artifact.moments.clone());
                Box::new(move |rng| ups_estimate(path.as_ref(), &q, &km, &factory, cap, rng))
            }
            ExperimentName::Doublewell => {
                let path: Arc<dyn PathFamily> = Arc::new(doublewell_path());
                let factory = doublewell_factory();
                Box::new(move |rng| ups_estimate(path.as_ref(), &q, &km, &factory, cap, rng))
            }
            ExperimentName::LogisticEvidence => {
                let model = synthetic_model(cfg);
                match variant {
                    PathVariant::Laplace => {
                        let path: Arc<dyn PathFamily> = Arc::new(laplace_anchored_path(&model)?);
                        let rw = laplace_rw_config(&model)?;
                        let kernel_path = path.clone();
                        let factory = move |lambda: f64| -> Result<Box<dyn CoupledKernel>> {
                            Ok(Box::new(RwmhKernel::new(
                                kernel_path.clone(),
                                lambda,
                                rw.clone(),
                            )))
                        };
                        // Report the same estimand as the covariate path:
                        // log Z1 + n log 2.
                        let shift = model.n() as f64 * std::f64::consts::LN_2;
                        Box::new(move |rng| {
                            let mut est =
                                ups_estimate(path.as_ref(), &q, &km, &factory, cap, rng)?;
                            est.value += shift;
                            Ok(est)
                        })
                    }
                    _ => {
                        let path = Arc::new(logistic_covariate_path(&model));
                        let kernel_model = model.clone();
                        let factory = move |lambda: f64| -> Result<Box<dyn CoupledKernel>> {
                            Ok(Box::new(PggKernel::new(
                                &kernel_model,
                                lambda,
                                PggPathKind::CovariateScaling,
                                &[],
                            )?))
                        };
                        Box::new(move |rng| {
                            ups_estimate(path.as_ref(), &q, &km, &factory, cap, rng)
                        })
                    }
                }
            }
            ExperimentName::LogisticCv => {
                let model = synthetic_model(cfg);
                let n = model.n();
                match variant {
                    PathVariant::Tempering => {
                        let rw = laplace_rw_config(&model)?;
                        let build = move |split: &DataSplit| {
                            logistic_tempering_instance(&model, &rw, split)
                        };
                        Box::new(move |rng| cv_estimate(n, n - 1, &build, &q, &km, cap, rng))
                    }
                    _ => {
                        let build =
                            move |split: &DataSplit| logistic_covariate_instance(&model, split);
                        Box::new(move |rng| cv_estimate(n, n - 1, &build, &q, &km, cap, rng))
                    }
                }
            }
            ExperimentName::Leukemia => {
                let model = load_leukemia(&bundled("leukemia.csv"))?;
                let n = model.n();
                let build = move |split: &DataSplit| logistic_covariate_instance(&model, split);
                Box::new(move |rng| cv_estimate(n, n - 1, &build, &q, &km, cap, rng))
            }
            ExperimentName::MammalMse => {
                let model = load_mammal(&bundled("mammal.csv"))?;
                let n_t = model.n() / 2;
                let (k, m) = (report.points[0].k, report.points[0].m);
                Box::new(move |rng| mse_cv_estimate(&model, n_t, k, m, cap, rng))
            }
            ExperimentName::MammalLogscore => {
                let model = load_mammal(&bundled("mammal.csv"))?;
                let n = model.n();
                let n_t = n / 2;
                let build = move |split: &DataSplit| linear_tempering_instance(&model, split);
                Box::new(move |rng| cv_estimate(n, n_t, &build, &q, &km, cap, rng))
            }
            ExperimentName::Stackloss => {
                let model = load_stackloss(&bundled("stackloss.csv"))?;
                let n = model.n();
                let build = move |split: &DataSplit| linear_tempering_instance(&model, split);
                Box::new(move |rng| cv_estimate(n, n - 1, &build, &q, &km, cap, rng))
            }
        };

    let estimates: Result<Vec<UpsEstimate>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_ESTIMATE);
            rng.set_stream(i as u64);
            replicate(&mut rng)
        })
        .collect();
    let estimates = estimates?;
    let summary = if estimates.len() >= 2 {
        aggregate(&estimates)?
    } else {
        let value = estimates[0].value;
        AggregateSummary {
            m: 1,
            mean: value,
            sample_sd: 0.0,
            ci_low: value,
            ci_high: value,
            total_cost: estimates[0].cost_units,
        }
    };
    Ok((estimates, summary))
}
