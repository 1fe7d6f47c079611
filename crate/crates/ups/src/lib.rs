//! Unbiased path sampling: estimators of log normalizing-constant ratios
//! built from coupled MCMC chains.
//!
//! Given a family of unnormalized densities `pi_lambda` interpolating
//! between a tractable `pi_0` and a target `pi_1`, the thermodynamic
//! identity writes `log(Z_1/Z_0)` as an integral over `lambda` of the
//! expected lambda-derivative of the log density. This crate estimates
//! that integral without any discretization or burn-in bias:
//!
//! * [`unbiased`] implements the coupled-chain estimator `H_{k:m}`,
//!   which debiases a single MCMC average using a second, coupled chain
//!   and the pair's meeting time.
//! * [`paths`] provides the interpolation families ([`paths::PathFamily`])
//!   used by the bundled experiments, with analytic lambda-gradients
//!   checked against finite differences.
//! * [`tuning`] surveys meeting times on a lambda grid, picks the
//!   burn-in `k` and horizon `m` per grid point, and builds the
//!   piecewise-uniform proposal `q(lambda)` that minimizes variance.
//! * [`estimators`] draws `lambda ~ q` and returns the single-draw
//!   unbiased estimator `H_{k:m}(grad_lambda) / q(lambda)`, plus the
//!   cross-validation variants over random train/validation splits.
//! * [`coupling`], [`gaussian`], [`pg`] and [`models`] supply maximal
//!   couplings, multivariate-normal utilities, the Polya-Gamma sampler
//!   and the coupled kernels (random-walk MH, Polya-Gamma Gibbs, linear
//!   regression Gibbs) used by the experiments.
//! * [`experiments`] is the reproducible harness behind the `ups` CLI.
//!
//! # Example: the full pipeline on a toy path
//!
//! The translation family `pi_lambda = N(lambda d, 1)` has constant
//! normalizing constant, so `log(Z_1/Z_0) = 0`; the pipeline below
//! tunes on a small grid and recovers that within its confidence
//! interval.
//!
//! ```
//! use std::sync::Arc;
//! use nalgebra::DVector;
//! use rand::SeedableRng;
//! use rand_chacha::ChaCha8Rng;
//! use ups::estimators::{aggregate, ups_estimate};
//! use ups::models::rwmh::{CouplingKind, RwmhConfig, RwmhKernel};
//! use ups::paths::{normal_translation_path, PathFamily};
//! use ups::tuning::{
//!     build_proposal, choose_k, choose_m, estimate_m2, survey_meetings, LambdaGrid,
//! };
//! use ups::unbiased::CoupledKernel;
//!
//! # fn main() -> ups::Result<()> {
//! let path: Arc<dyn PathFamily> = Arc::new(normal_translation_path(4.0));
//! let factory = |lambda: f64| -> ups::Result<Box<dyn CoupledKernel>> {
//!     let cfg = RwmhConfig::spherical(
//!         1,
//!         1.0,
//!         DVector::from_element(1, -1.0),
//!         2.0,
//!         CouplingKind::Maximal,
//!     );
//!     Ok(Box::new(RwmhKernel::new(path.clone(), lambda, cfg)))
//! };
//!
//! // Tune: survey meeting times, choose (k, m), estimate the second
//! // moment of the per-lambda estimator, and build q.
//! let grid = LambdaGrid::equispaced(4)?;
//! let meetings = survey_meetings(&factory, &grid, 20, 100_000, 7)?;
//! let ks: Vec<usize> = meetings.iter().map(|m| choose_k(m, 0.99, 1.0)).collect();
//! let tau_means: Vec<f64> = meetings
//!     .iter()
//!     .map(|m| m.iter().sum::<usize>() as f64 / m.len() as f64)
//!     .collect();
//! let ms = choose_m(&ks, &tau_means);
//! let m2 = estimate_m2(&factory, path.as_ref(), &grid, &ks, &ms, 20, 100_000, 7)?;
//! let sqrt_m2: Vec<f64> = m2.iter().map(|v| v.sqrt()).collect();
//! let q = build_proposal(&grid, &sqrt_m2)?;
//!
//! // Estimate: independent unbiased draws, then a CLT interval.
//! let km = |lambda: f64| {
//!     let i = grid.nearest_index(lambda);
//!     (ks[i], ms[i])
//! };
//! let mut rng = ChaCha8Rng::seed_from_u64(11);
//! let estimates = (0..60)
//!     .map(|_| ups_estimate(path.as_ref(), &q, &km, &factory, 100_000, &mut rng))
//!     .collect::<ups::Result<Vec<_>>>()?;
//! let summary = aggregate(&estimates)?;
//! assert!(summary.ci_low <= 0.0 && 0.0 <= summary.ci_high);
//! # Ok(())
//! # }
//! ```
//!
//! The same pipeline, preconfigured for each bundled experiment, is
//! available from the command line:
//!
//! ```text
//! ups tune --experiment normal --out out/normal
//! ups estimate --experiment normal --tuning out/normal/tuning.json --out out/normal
//! ups figures --from out/normal
//! ```

pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod gaussian;
pub mod models;
pub mod paths;
pub mod pg;
pub mod tuning;
pub mod unbiased;

pub use error::{Result, UpsError};
