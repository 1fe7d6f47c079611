//! The UPS estimator r01_hat = E_hat(lambda) / q(lambda), the unbiased
//! cross-validation estimators over random data splits, and replicate
//! aggregation into confidence intervals.

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpsError};
use crate::models::linear::{LinearModel, LinregGibbsKernel};
use crate::paths::PathFamily;
use crate::tuning::LambdaProposal;
use crate::unbiased::{h_km, run_coupled, CoupledKernel, EstimatorConfig};

/// One replicate of the estimator. For the plain ratio estimator,
/// `value * q_density = raw_e_hat`; CV variants additionally fold in the
/// sign convention and the path's endpoint offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpsEstimate {
    pub lambda: f64,
    pub value: f64,
    pub raw_e_hat: f64,
    pub q_density: f64,
    pub tau: usize,
    pub cost_units: usize,
    /// Index of the left-out observation for leave-one-out CV
    /// replicates; None otherwise.
    pub split_left_out: Option<usize>,
}

/// A partition of {0..n-1} into training and validation indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Uniform split: a random permutation's prefix of length `n_t` is the
/// training set.
pub fn sample_split(n: usize, n_t: usize, rng: &mut dyn RngCore) -> Result<DataSplit> {
    if n_t == 0 || n_t >= n {
        return Err(UpsError::Config(format!(
            "training size must satisfy 1 <= n_t <= n - 1, got n_t={n_t}, n={n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    // Fisher-Yates on the prefix we need.
    for i in 0..n_t {
        let j = i + rng.gen_range(0..n - i);
        indices.swap(i, j);
    }
    let mut train = indices[..n_t].to_vec();
    let mut valid = indices[n_t..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok(DataSplit { train, valid })
}

/// Per-lambda burn-in and horizon lookup, typically the nearest tuned
/// grid point's (k, m).
pub type KmLookup<'a> = dyn Fn(f64) -> (usize, usize) + 'a;

/// One draw of the unbiased path sampling estimator:
/// lambda ~ q, then value = H_{k:m}(grad_lambda) / q(lambda).
pub fn ups_estimate<F>(
    path: &dyn PathFamily,
    q: &LambdaProposal,
    km: &KmLookup,
    factory: &F,
    max_iterations: usize,
    rng: &mut dyn RngCore,
) -> Result<UpsEstimate>
where
    F: Fn(f64) -> Result<Box<dyn CoupledKernel>>,
{
    let (lambda, q_density) = q.sample(rng);
    let (k, m) = km(lambda);
    let cfg = EstimatorConfig::with_cap(k, m, max_iterations)
        .map_err(|e| e.at_lambda(lambda))?;
    let kernel = factory(lambda).map_err(|e| e.at_lambda(lambda))?;
    let h = |s: &[f64]| vec![path.grad_lambda(lambda, s)];
    let run = run_coupled(kernel.as_ref(), &h, &cfg, rng).map_err(|e| e.at_lambda(lambda))?;
    let raw_e_hat = h_km(&run, &cfg)[0];
    Ok(UpsEstimate {
        lambda,
        value: raw_e_hat / q_density,
        raw_e_hat,
        q_density,
        tau: run.tau,
        cost_units: run.cost_units,
        split_left_out: None,
    })
}

/// A CV problem instance for one concrete split: the path whose log
/// normalizing-constant ratio is log p(V|T) (up to the path's endpoint
/// offset) and a kernel factory targeting pi_lambda.
pub struct CvInstance {
    pub path: std::sync::Arc<dyn PathFamily>,
    pub factory: Box<dyn Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync>,
}

/// One draw of the unbiased CV estimator: sample a split, estimate
/// r01_hat on that split's path, and return the negative log predictive
/// score -(r01_hat - endpoint_offset), which is unbiased for the CV
/// objective.
pub fn cv_estimate(
    n: usize,
    n_t: usize,
    build: &dyn Fn(&DataSplit) -> Result<CvInstance>,
    q: &LambdaProposal,
    km: &KmLookup,
    max_iterations: usize,
    rng: &mut dyn RngCore,
) -> Result<UpsEstimate> {
    let split = sample_split(n, n_t, rng)?;
    let instance = build(&split)?;
    let mut est = ups_estimate(
        instance.path.as_ref(),
        q,
        km,
        &|lambda| (instance.factory)(lambda),
        max_iterations,
        rng,
    )?;
    let log_pred = est.value - instance.path.endpoint_offset();
    est.value = -log_pred;
    est.split_left_out = if split.valid.len() == 1 {
        Some(split.valid[0])
    } else {
        None
    };
    Ok(est)
}

/// One draw of the unbiased mean-squared-error CV estimator for linear
/// regression: sample a split, run unbiased MCMC on the training
/// posterior, and evaluate h(beta, sigma^2) = n_V sigma^2 +
/// ||D_V beta - Y_V||^2. No path sampling is involved.
pub fn mse_cv_estimate(
    model: &LinearModel,
    n_t: usize,
    k: usize,
    m: usize,
    max_iterations: usize,
    rng: &mut dyn RngCore,
) -> Result<UpsEstimate> {
    let split = sample_split(model.n(), n_t, rng)?;
    let kernel = LinregGibbsKernel::new(model, &split.train, &[], 1.0)?;
    let cfg = EstimatorConfig::with_cap(k, m, max_iterations)?;
    let p = model.p();
    let valid = split.valid.clone();
    let h = |s: &[f64]| {
        let beta = nalgebra::DVector::from_column_slice(&s[..p]);
        let sigma2 = s[p];
        let mut sq = 0.0;
        for &i in &valid {
            let mu = model.design.row(i).transpose().dot(&beta);
            sq += (model.y[i] - mu).powi(2);
        }
        vec![valid.len() as f64 * sigma2 + sq]
    };
    let run = run_coupled(&kernel, &h, &cfg, rng)?;
    let value = h_km(&run, &cfg)[0];
    Ok(UpsEstimate {
        lambda: 0.0,
        value,
        raw_e_hat: value,
        q_density: 1.0,
        tau: run.tau,
        cost_units: run.cost_units,
        split_left_out: if split.valid.len() == 1 {
            Some(split.valid[0])
        } else {
            None
        },
    })
}

/// Mean, sample standard deviation and the 1.96-sigma confidence
/// interval of a batch of replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub m: usize,
    pub mean: f64,
    pub sample_sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub total_cost: usize,
}

pub fn aggregate(estimates: &[UpsEstimate]) -> Result<AggregateSummary> {
    if estimates.len() < 2 {
        return Err(UpsError::Config("aggregation needs at least 2 replicates".into()));
    }
    let m = estimates.len();
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let (mean, sample_sd) = crate::diagnostics::mean_sd(&values);
    let half = 1.96 * sample_sd / (m as f64).sqrt();
    Ok(AggregateSummary {
        m,
        mean,
        sample_sd,
        ci_low: mean - half,
        ci_high: mean + half,
        total_cost: estimates.iter().map(|e| e.cost_units).sum(),
    })
}
