//! Random-walk Metropolis-Hastings targeting a path density at a fixed
//! lambda, with coupled proposals (maximal or reflection-maximal) and a
//! shared acceptance uniform.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::coupling::{maximal_coupling, reflection_maximal_normal, SamplableDensity};
use crate::error::{Result, UpsError};
use crate::paths::PathFamily;
use crate::unbiased::CoupledKernel;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// How the two proposal normals are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    Maximal,
    ReflectionMaximal,
}

/// Proposal and initial distribution for the random-walk kernel.
#[derive(Debug, Clone)]
pub struct RwmhConfig {
    /// Lower Cholesky factor of the proposal covariance.
    pub proposal_chol: DMatrix<f64>,
    pub init_mean: DVector<f64>,
    /// Lower Cholesky factor of the initial covariance.
    pub init_chol: DMatrix<f64>,
    pub coupling: CouplingKind,
}

impl RwmhConfig {
    /// Spherical proposal and initial distribution in `dim` dimensions.
    pub fn spherical(
        dim: usize,
        proposal_sd: f64,
        init_mean: DVector<f64>,
        init_sd: f64,
        coupling: CouplingKind,
    ) -> Self {
        RwmhConfig {
            proposal_chol: DMatrix::identity(dim, dim) * proposal_sd,
            init_mean,
            init_chol: DMatrix::identity(dim, dim) * init_sd,
            coupling,
        }
    }

    pub fn from_covariances(
        proposal_cov: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
        coupling: CouplingKind,
    ) -> Result<Self> {
        let pc = nalgebra::Cholesky::new(proposal_cov)
            .ok_or_else(|| UpsError::LinearAlgebra("proposal covariance not PD".into()))?
            .unpack();
        let ic = nalgebra::Cholesky::new(init_cov)
            .ok_or_else(|| UpsError::LinearAlgebra("initial covariance not PD".into()))?
            .unpack();
        Ok(RwmhConfig {
            proposal_chol: pc,
            init_mean,
            init_chol: ic,
            coupling,
        })
    }
}

/// A normal with a shared, precomputed Cholesky factor; the proposal
/// distribution re-centered at the current state each step.
struct ShiftedNormal<'a> {
    mean: DVector<f64>,
    chol: &'a DMatrix<f64>,
    log_det_cov: f64,
}

impl<'a> ShiftedNormal<'a> {
    fn new(mean: DVector<f64>, chol: &'a DMatrix<f64>) -> Self {
        let log_det_cov = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        ShiftedNormal {
            mean,
            chol,
            log_det_cov,
        }
    }
}

impl SamplableDensity for ShiftedNormal<'_> {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| {
            StandardNormal.sample(&mut *rng)
        });
        (&self.mean + self.chol * z).as_slice().to_vec()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut w = DVector::from_column_slice(x) - &self.mean;
        self.chol.solve_lower_triangular_mut(&mut w);
        -0.5 * (self.mean.len() as f64 * LN_2PI + self.log_det_cov + w.norm_squared())
    }
}

/// Coupled random-walk MH kernel for the path density at `lambda`.
pub struct RwmhKernel {
    path: Arc<dyn PathFamily>,
    lambda: f64,
    cfg: RwmhConfig,
}

impl RwmhKernel {
    pub fn new(path: Arc<dyn PathFamily>, lambda: f64, cfg: RwmhConfig) -> Self {
        RwmhKernel { path, lambda, cfg }
    }

    fn log_target(&self, x: &[f64]) -> Result<f64> {
        let v = self.path.log_unnorm(self.lambda, x);
        if v.is_nan() || v == f64::INFINITY {
            return Err(UpsError::NonFiniteDensity { value: v });
        }
        Ok(v)
    }
}

impl CoupledKernel for RwmhKernel {
    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = DVector::from_fn(self.cfg.init_mean.len(), |_, _| {
            StandardNormal.sample(&mut *rng)
        });
        (&self.cfg.init_mean + &self.cfg.init_chol * z)
            .as_slice()
            .to_vec()
    }

    fn step(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let proposal =
            ShiftedNormal::new(DVector::from_column_slice(state), &self.cfg.proposal_chol);
        let candidate = proposal.sample(rng);
        let log_alpha = self.log_target(&candidate).expect("non-finite target")
            - self.log_target(state).expect("non-finite target");
        if rng.gen::<f64>().ln() <= log_alpha {
            candidate
        } else {
            state.to_vec()
        }
    }

    fn coupled_step(
        &self,
        x: &[f64],
        y: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let draw = match self.cfg.coupling {
            CouplingKind::Maximal => {
                let px = ShiftedNormal::new(DVector::from_column_slice(x), &self.cfg.proposal_chol);
                let py = ShiftedNormal::new(DVector::from_column_slice(y), &self.cfg.proposal_chol);
                maximal_coupling(&px, &py, rng)?
            }
            CouplingKind::ReflectionMaximal => reflection_maximal_normal(
                &DVector::from_column_slice(x),
                &DVector::from_column_slice(y),
                &self.cfg.proposal_chol,
                rng,
            )?,
        };
        // Shared acceptance uniform.
        let log_u = rng.gen::<f64>().ln();
        let accept = |cur: &[f64], cand: &[f64]| -> Result<bool> {
            Ok(log_u <= self.log_target(cand)? - self.log_target(cur)?)
        };
        let new_x = if accept(x, &draw.x)? { draw.x } else { x.to_vec() };
        let new_y = if accept(y, &draw.y)? { draw.y } else { y.to_vec() };
        Ok((new_x, new_y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_critical, ks_statistic, normal_cdf};
    use crate::paths::{doublewell_path, geometric};
    use crate::unbiased::run_to_meeting;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal_path() -> Arc<dyn PathFamily> {
        Arc::new(geometric(|x: &[f64]| x[0] * x[0] / 2.0, |x: &[f64]| x[0] * x[0] / 2.0))
    }

    #[test]
    fn chain_is_invariant_for_standard_normal() {
        let cfg = RwmhConfig::spherical(1, 1.0, DVector::zeros(1), 1.0, CouplingKind::Maximal);
        let kernel = RwmhKernel::new(std_normal_path(), 0.5, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut state = kernel.initial(&mut rng);
        let mut draws = Vec::new();
        for t in 0..11_000 {
            state = kernel.step(&state, &mut rng);
            // Thin to reduce autocorrelation before the KS test.
            if t >= 1000 && t % 10 == 0 {
                draws.push(state[0]);
            }
        }
        let n = draws.len();
        let d = ks_statistic(&mut draws, |v| normal_cdf(v, 0.0, 1.0));
        // Thinned samples are still correlated; use a loose level.
        assert!(d < 3.0 * ks_critical(n, 1e-3), "KS {d}");
    }

    #[test]
    fn coupled_chains_from_same_state_stay_equal() {
        for coupling in [CouplingKind::Maximal, CouplingKind::ReflectionMaximal] {
            let cfg = RwmhConfig::spherical(1, 1.0, DVector::zeros(1), 1.0, coupling);
            let kernel = RwmhKernel::new(std_normal_path(), 0.0, cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(71);
            let state = kernel.initial(&mut rng);
            let (a, b) = kernel.coupled_step(&state, &state, &mut rng).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn chains_meet_under_both_couplings() {
        for coupling in [CouplingKind::Maximal, CouplingKind::ReflectionMaximal] {
            let cfg = RwmhConfig::spherical(1, 1.0, DVector::zeros(1), 1.0, coupling);
            let kernel = RwmhKernel::new(std_normal_path(), 1.0, cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(72);
            for _ in 0..20 {
                let tau = run_to_meeting(&kernel, 100_000, &mut rng).unwrap();
                assert!(tau < 10_000, "{coupling:?}: tau = {tau}");
            }
        }
    }

    #[test]
    fn doublewell_chain_visits_both_modes() {
        let cfg = RwmhConfig::from_covariances(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![-2.0, -2.0]),
            DMatrix::identity(2, 2),
            CouplingKind::Maximal,
        )
        .unwrap();
        let kernel = RwmhKernel::new(Arc::new(doublewell_path()), 1.0, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut state = kernel.initial(&mut rng);
        let (mut saw_neg, mut saw_pos) = (false, false);
        for _ in 0..100_000 {
            state = kernel.step(&state, &mut rng);
            if state[0] < -1.0 {
                saw_neg = true;
            }
            if state[0] > 1.0 {
                saw_pos = true;
            }
            if saw_neg && saw_pos {
                break;
            }
        }
        assert!(saw_neg && saw_pos, "chain stayed in one mode");
    }
}
