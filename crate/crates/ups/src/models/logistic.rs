//! Bayesian logistic regression: likelihood evaluation, the Laplace
//! (maximum-likelihood) fit, and the coupled Polya-Gamma Gibbs kernel.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand::SeedableRng;

use crate::coupling::maximal_coupling;
use crate::error::{Result, UpsError};
use crate::gaussian::MvNormal;
use crate::pg::pg_sample;
use crate::unbiased::CoupledKernel;

/// Numerically stable log(1 + exp(z)).
pub fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// The logistic function 1 / (1 + exp(-z)).
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression with Gaussian prior N(b, B) on the coefficients:
/// P(y_i = 1 | beta) = expit(d_i' beta).
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub design: DMatrix<f64>,
    pub y: DVector<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl LogisticModel {
    pub fn new(
        design: DMatrix<f64>,
        y: DVector<f64>,
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, p) = design.shape();
        if y.len() != n || prior_mean.len() != p || prior_cov.shape() != (p, p) {
            return Err(UpsError::Dimension(format!(
                "logistic model: design {n}x{p}, y {}, prior mean {}, prior cov {}x{}",
                y.len(),
                prior_mean.len(),
                prior_cov.nrows(),
                prior_cov.ncols()
            )));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(UpsError::Config("outcomes must be 0 or 1".into()));
        }
        // Validate positive definiteness up front.
        MvNormal::from_covariance(prior_mean.clone(), prior_cov.clone())?;
        Ok(LogisticModel {
            design,
            y,
            prior_mean,
            prior_cov,
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn prior(&self) -> MvNormal {
        MvNormal::from_covariance(self.prior_mean.clone(), self.prior_cov.clone())
            .expect("validated at construction")
    }

    /// Log-likelihood sum_i { d_i' beta y_i - log(1 + exp(d_i' beta)) }.
    pub fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.design * beta;
        eta.iter()
            .zip(self.y.iter())
            .map(|(&e, &y)| e * y - log1p_exp(e))
            .sum()
    }

    /// Restriction of the model to a subset of observation indices.
    pub fn subset(&self, indices: &[usize]) -> LogisticModel {
        let design = DMatrix::from_fn(indices.len(), self.p(), |i, j| {
            self.design[(indices[i], j)]
        });
        let y = DVector::from_fn(indices.len(), |i, _| self.y[indices[i]]);
        LogisticModel {
            design,
            y,
            prior_mean: self.prior_mean.clone(),
            prior_cov: self.prior_cov.clone(),
        }
    }
}

/// Maximum-likelihood fit: Newton-Raphson on the log-likelihood (not the
/// log-posterior). Returns the MLE and the inverse of minus the
/// log-likelihood Hessian at the optimum.
pub fn laplace_fit(model: &LogisticModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = model.p();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = &model.design * &beta;
        let probs = eta.map(expit);
        let grad = model.design.transpose() * (&model.y - &probs);
        // Negative Hessian D' W D with W = diag(p(1-p)).
        let w = probs.map(|q| q * (1.0 - q));
        let mut neg_hess = DMatrix::zeros(p, p);
        for i in 0..model.n() {
            let row = model.design.row(i);
            for a in 0..p {
                for b in 0..p {
                    neg_hess[(a, b)] += w[i] * row[a] * row[b];
                }
            }
        }
        let chol = nalgebra::Cholesky::new(neg_hess.clone())
            .ok_or_else(|| UpsError::LinearAlgebra("singular Hessian in Newton step".into()))?;
        if grad.norm() < 1e-8 {
            let cov = chol.inverse();
            return Ok((beta, cov));
        }
        beta += chol.solve(&grad);
    }
    Err(UpsError::NonConvergence(
        "logistic MLE: Newton did not converge in 100 iterations".into(),
    ))
}

/// Which lambda-dependence the PGG kernel targets: scaling all covariates
/// (evidence path) or only the validation block (CV path).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PggPathKind {
    CovariateScaling,
    CvCovariate,
}

/// The coupled Polya-Gamma Gibbs kernel for logistic regression at a
/// fixed lambda. The state is the coefficient vector beta; the auxiliary
/// PG variables are drawn fresh each step, so they are not part of the
/// state.
pub struct PggKernel {
    /// Row-scaled design D_lambda.
    scaled_design: DMatrix<f64>,
    y_tilde: DVector<f64>,
    prior: MvNormal,
    /// B^-1 and B^-1 b for the conditional precision and mean.
    prior_precision: DMatrix<f64>,
    prior_precision_mean: DVector<f64>,
}

impl PggKernel {
    /// Build the kernel at `lambda`. For `CovariateScaling` every row of
    /// the design is multiplied by lambda; for `CvCovariate`, only the
    /// rows in `scaled_rows` (the validation block).
    pub fn new(
        model: &LogisticModel,
        lambda: f64,
        kind: PggPathKind,
        scaled_rows: &[usize],
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(UpsError::Config(format!("lambda {lambda} outside [0,1]")));
        }
        let mut scaled_design = model.design.clone();
        match kind {
            PggPathKind::CovariateScaling => scaled_design *= lambda,
            PggPathKind::CvCovariate => {
                for &r in scaled_rows {
                    for c in 0..model.p() {
                        scaled_design[(r, c)] *= lambda;
                    }
                }
            }
        }
        let prior_chol = nalgebra::Cholesky::new(model.prior_cov.clone())
            .ok_or_else(|| UpsError::LinearAlgebra("prior covariance not PD".into()))?;
        let prior_precision = prior_chol.inverse();
        let prior_precision_mean = &prior_precision * &model.prior_mean;
        Ok(PggKernel {
            scaled_design,
            y_tilde: model.y.map(|v| v - 0.5),
            prior: model.prior(),
            prior_precision,
            prior_precision_mean,
        })
    }

    /// The beta-conditional N(mu(omega), Sigma(omega)) given PG draws.
    fn beta_conditional(&self, omega: &DVector<f64>) -> Result<MvNormal> {
        let p = self.scaled_design.ncols();
        let mut precision = self.prior_precision.clone();
        for i in 0..self.scaled_design.nrows() {
            let row = self.scaled_design.row(i);
            for a in 0..p {
                for b in 0..p {
                    precision[(a, b)] += omega[i] * row[a] * row[b];
                }
            }
        }
        let rhs = self.scaled_design.transpose() * &self.y_tilde + &self.prior_precision_mean;
        let chol = nalgebra::Cholesky::new(precision.clone())
            .ok_or_else(|| UpsError::LinearAlgebra("PGG conditional precision not PD".into()))?;
        let mean = chol.solve(&rhs);
        MvNormal::from_precision(mean, precision)
    }

    fn omega_given(&self, beta: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        let eta = &self.scaled_design * beta;
        let mut omega = DVector::zeros(eta.len());
        for i in 0..eta.len() {
            omega[i] = pg_sample(eta[i].abs(), rng)?;
        }
        Ok(omega)
    }

    #[cfg(test)]
    pub(crate) fn conditional_for_test(&self, omega: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let p = self.scaled_design.ncols();
        let mut precision = self.prior_precision.clone();
        for i in 0..self.scaled_design.nrows() {
            let row = self.scaled_design.row(i);
            for a in 0..p {
                for b in 0..p {
                    precision[(a, b)] += omega[i] * row[a] * row[b];
                }
            }
        }
        let rhs = self.scaled_design.transpose() * &self.y_tilde + &self.prior_precision_mean;
        let mean = nalgebra::Cholesky::new(precision.clone()).unwrap().solve(&rhs);
        (mean, precision, rhs)
    }
}

impl CoupledKernel for PggKernel {
    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.prior.sample_vector(rng).as_slice().to_vec()
    }

    fn step(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let beta = DVector::from_column_slice(state);
        let omega = self.omega_given(&beta, rng).expect("PG sampling failed");
        let cond = self
            .beta_conditional(&omega)
            .expect("PGG conditional failed");
        cond.sample_vector(rng).as_slice().to_vec()
    }

    fn coupled_step(
        &self,
        x: &[f64],
        y: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        // PG draws by common random numbers: a single RNG stream consumed
        // identically once the conditioning states agree.
        let bx = DVector::from_column_slice(x);
        let by = DVector::from_column_slice(y);
        let eta_x = &self.scaled_design * &bx;
        let eta_y = &self.scaled_design * &by;
        let mut omega_x = DVector::zeros(eta_x.len());
        let mut omega_y = DVector::zeros(eta_y.len());
        for i in 0..eta_x.len() {
            // Both draws replay the same sub-stream, so equal parameters
            // produce bitwise-equal draws and unequal parameters stay
            // positively correlated; each draw is exact for its own
            // parameter.
            let seed = rand::Rng::gen::<u64>(&mut *rng);
            let mut sub = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            omega_x[i] = pg_sample(eta_x[i].abs(), &mut sub)?;
            let mut sub = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            omega_y[i] = pg_sample(eta_y[i].abs(), &mut sub)?;
        }
        let cond_x = self.beta_conditional(&omega_x)?;
        let cond_y = self.beta_conditional(&omega_y)?;
        if omega_x == omega_y {
            // Identical conditionals couple exactly.
            let draw = cond_x.sample_vector(rng).as_slice().to_vec();
            return Ok((draw.clone(), draw));
        }
        let draw = maximal_coupling(&cond_x, &cond_y, rng)?;
        Ok((draw.x, draw.y))
    }
}
