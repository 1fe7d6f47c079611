//! Path families (pi_lambda) on [0,1] with evaluable unnormalized
//! log-densities and lambda-gradients, the objects the path sampling
//! identity integrates:
//!
//!   log(Z1/Z0) = integral over lambda of E_lambda[grad_lambda log pi].

use nalgebra::{DMatrix, DVector};

use crate::coupling::SamplableDensity;
use crate::error::{Result, UpsError};
use crate::gaussian::MvNormal;
use crate::models::logistic::{expit, log1p_exp, LogisticModel};

/// A family of unnormalized densities indexed by lambda in [0,1].
///
/// `endpoint_offset` is minus the known log-normalizing factor of the
/// lambda = 0 endpoint (e.g. n log 2 when Z0 = 2^-n), so harnesses can
/// convert the raw ratio estimate r01 into the reported estimand without
/// re-deriving constants.
pub trait PathFamily: Sync + Send {
    fn log_unnorm(&self, lambda: f64, x: &[f64]) -> f64;
    fn grad_lambda(&self, lambda: f64, x: &[f64]) -> f64;
    fn endpoint_offset(&self) -> f64 {
        0.0
    }
}

type Potential = Box<dyn Fn(&[f64]) -> f64 + Sync + Send>;

/// The geometric path U_lambda = (1 - lambda) U0 + lambda U1.
pub struct GeometricPath {
    u0: Potential,
    u1: Potential,
    offset: f64,
}

/// Build a geometric path between two potentials (negative unnormalized
/// log-densities).
pub fn geometric(
    u0: impl Fn(&[f64]) -> f64 + Sync + Send + 'static,
    u1: impl Fn(&[f64]) -> f64 + Sync + Send + 'static,
) -> GeometricPath {
    GeometricPath {
        u0: Box::new(u0),
        u1: Box::new(u1),
        offset: 0.0,
    }
}

impl PathFamily for GeometricPath {
    fn log_unnorm(&self, lambda: f64, x: &[f64]) -> f64 {
        -(1.0 - lambda) * (self.u0)(x) - lambda * (self.u1)(x)
    }

    fn grad_lambda(&self, _lambda: f64, x: &[f64]) -> f64 {
        (self.u0)(x) - (self.u1)(x)
    }

    fn endpoint_offset(&self) -> f64 {
        self.offset
    }
}

/// The translated-normal family pi_lambda = N(lambda D, 1), for which
/// r01 = 0 exactly.
pub struct NormalTranslationPath {
    d: f64,
}

pub fn normal_translation_path(d: f64) -> NormalTranslationPath {
    NormalTranslationPath { d }
}

impl PathFamily for NormalTranslationPath {
    fn log_unnorm(&self, lambda: f64, x: &[f64]) -> f64 {
        let c = x[0] - lambda * self.d;
        -c * c / 2.0
    }

    fn grad_lambda(&self, lambda: f64, x: &[f64]) -> f64 {
        self.d * (x[0] - lambda * self.d)
    }
}

/// Geometric path from a Gaussian centered at (-2, 0) to a double-well
/// potential with two well-separated modes.
pub fn doublewell_path() -> GeometricPath {
    geometric(
        |x: &[f64]| (x[0] + 2.0).powi(2) + x[1] * x[1] / 2.0,
        |x: &[f64]| {
            (((x[0] - 1.0).powi(2) - x[1] * x[1]).powi(2)
                + 10.0 * (x[0] * x[0] - 5.0).powi(2)
                + (x[0] + x[1]).powi(4)
                + (x[0] - x[1]).powi(4))
                / 10.0
        },
    )
}

/// Logistic-regression evidence path: covariates scaled by lambda, so the
/// lambda = 0 likelihood is the constant 2^-n and Z0 = 2^-n.
pub struct LogisticCovariatePath {
    design: DMatrix<f64>,
    y: DVector<f64>,
    prior: MvNormal,
    offset: f64,
}

pub fn logistic_covariate_path(model: &LogisticModel) -> LogisticCovariatePath {
    LogisticCovariatePath {
        design: model.design.clone(),
        y: model.y.clone(),
        prior: model.prior(),
        offset: model.n() as f64 * std::f64::consts::LN_2,
    }
}

fn scaled_logistic_terms(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    beta: &DVector<f64>,
) -> (f64, f64) {
    let eta = design * beta;
    let mut log_lik = 0.0;
    let mut grad = 0.0;
    for (&e, &yi) in eta.iter().zip(y.iter()) {
        log_lik += lambda * e * yi - log1p_exp(lambda * e);
        grad += e * (yi - expit(lambda * e));
    }
    (log_lik, grad)
}

impl PathFamily for LogisticCovariatePath {
    fn log_unnorm(&self, lambda: f64, x: &[f64]) -> f64 {
        let beta = DVector::from_column_slice(x);
        let (ll, _) = scaled_logistic_terms(&self.design, &self.y, lambda, &beta);
        self.prior.log_density(x) + ll
    }

    fn grad_lambda(&self, lambda: f64, x: &[f64]) -> f64 {
        let beta = DVector::from_column_slice(x);
        scaled_logistic_terms(&self.design, &self.y, lambda, &beta).1
    }

    fn endpoint_offset(&self) -> f64 {
        self.offset
    }
}

/// The tempering CV path pi_lambda = prior x lik(T) x lik(V)^lambda,
/// generic over the model through two closures. Z0 = p(T), Z1 = p(T,V).
pub struct CvTemperingPath {
    /// log prior + training log-likelihood.
    base: Potential,
    /// validation log-likelihood; this is also the lambda-gradient.
    valid: Potential,
}

pub fn cv_tempering_path(
    base: impl Fn(&[f64]) -> f64 + Sync + Send + 'static,
    valid: impl Fn(&[f64]) -> f64 + Sync + Send + 'static,
) -> CvTemperingPath {
    CvTemperingPath {
        base: Box::new(base),
        valid: Box::new(valid),
    }
}

impl PathFamily for CvTemperingPath {
    fn log_unnorm(&self, lambda: f64, x: &[f64]) -> f64 {
        (self.base)(x) + lambda * (self.valid)(x)
    }

    fn grad_lambda(&self, _lambda: f64, x: &[f64]) -> f64 {
        (self.valid)(x)
    }
}

/// Logistic CV path scaling only the validation covariates by lambda, so
/// Z0 = 2^-n_V p(T) and Z1 = p(T, V).
pub struct CvCovariatePath {
    train_design: DMatrix<f64>,
    train_y: DVector<f64>,
    valid_design: DMatrix<f64>,
    valid_y: DVector<f64>,
    prior: MvNormal,
    offset: f64,
}

pub fn cv_covariate_path(
    model: &LogisticModel,
    train: &[usize],
    valid: &[usize],
) -> Result<CvCovariatePath> {
    if valid.is_empty() {
        return Err(UpsError::Config("empty validation set".into()));
    }
    let t = model.subset(train);
    let v = model.subset(valid);
    Ok(CvCovariatePath {
        train_design: t.design,
        train_y: t.y,
        valid_design: v.design,
        valid_y: v.y,
        prior: model.prior(),
        offset: valid.len() as f64 * std::f64::consts::LN_2,
    })
}

impl PathFamily for CvCovariatePath {
    fn log_unnorm(&self, lambda: f64, x: &[f64]) -> f64 {
        let beta = DVector::from_column_slice(x);
        let (train_ll, _) = scaled_logistic_terms(&self.train_design, &self.train_y, 1.0, &beta);
        let (valid_ll, _) =
            scaled_logistic_terms(&self.valid_design, &self.valid_y, lambda, &beta);
        self.prior.log_density(x) + train_ll + valid_ll
    }

    fn grad_lambda(&self, lambda: f64, x: &[f64]) -> f64 {
        let beta = DVector::from_column_slice(x);
        scaled_logistic_terms(&self.valid_design, &self.valid_y, lambda, &beta).1
    }

    fn endpoint_offset(&self) -> f64 {
        self.offset
    }
}

/// Geometric path from the Laplace approximation (a normalized Gaussian,
/// so Z0 = 1 and r01 = log Z1) to the logistic posterior.
pub fn laplace_anchored_path(model: &LogisticModel) -> Result<GeometricPath> {
    let (mle, vhat) = crate::models::logistic::laplace_fit(model)?;
    let anchor = MvNormal::from_covariance(mle, vhat)?;
    let posterior_model = model.clone();
    let prior = model.prior();
    Ok(GeometricPath {
        u0: Box::new(move |x: &[f64]| -anchor.log_density(x)),
        u1: Box::new(move |x: &[f64]| {
            let beta = DVector::from_column_slice(x);
            -(prior.log_density(x) + posterior_model.log_likelihood(&beta))
        }),
        offset: 0.0,
    })
}

/// Largest violation of the finite-difference gradient check over the
/// given (lambda, x) points, as a ratio of error to tolerance; values
/// below 1 pass. Central differences with step 1e-6, relative tolerance
/// 1e-5 with an absolute floor near zero.
pub fn finite_difference_worst_ratio(path: &dyn PathFamily, points: &[(f64, Vec<f64>)]) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (lambda, x) in points {
        let lo = (lambda - h).max(0.0);
        let hi = (lambda + h).min(1.0);
        let fd = (path.log_unnorm(hi, x) - path.log_unnorm(lo, x)) / (hi - lo);
        let g = path.grad_lambda(*lambda, x);
        let scale = path.log_unnorm(*lambda, x).abs().max(1.0);
        let tol = (1e-5 * g.abs()).max(1e-8 * scale).max(1e-8);
        worst = worst.max((g - fd).abs() / tol);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::simpson;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(dim: usize, n: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (
                    rng.gen_range(0.01..0.99),
                    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
            })
            .collect()
    }

    fn small_logistic() -> LogisticModel {
        let design = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, -1.0, 1.0, -0.4, 1.0, 0.1, 1.0, 0.6, 1.0, 1.1, 1.0, 1.7],
        );
        let y = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        LogisticModel::new(design, y, DVector::zeros(2), DMatrix::identity(2, 2) * 10.0).unwrap()
    }

    #[test]
    fn geometric_endpoints_and_gradient() {
        let path = geometric(|x: &[f64]| x[0] * x[0], |x: &[f64]| 2.0 * x[0] * x[0]);
        assert_eq!(path.log_unnorm(0.0, &[1.5]), -2.25);
        assert_eq!(path.log_unnorm(1.0, &[1.5]), -4.5);
        assert_eq!(path.grad_lambda(0.3, &[1.0]), -1.0);
    }

    #[test]
    fn geometric_three_point_collinearity() {
        let path = doublewell_path();
        for (l0, l1, l2) in [(0.0, 0.5, 1.0), (0.1, 0.3, 0.5), (0.2, 0.6, 1.0)] {
            let x = [0.7, -0.3];
            let f0 = path.log_unnorm(l0, &x);
            let f1 = path.log_unnorm(l1, &x);
            let f2 = path.log_unnorm(l2, &x);
            // Affine in lambda: midpoint interpolation is exact.
            let t = (l1 - l0) / (l2 - l0);
            assert!((f1 - ((1.0 - t) * f0 + t * f2)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_translation_values() {
        let path = normal_translation_path(4.0);
        assert_eq!(path.grad_lambda(0.0, &[0.0]), 0.0);
        assert_eq!(path.grad_lambda(0.5, &[4.0]), 8.0);
    }

    #[test]
    fn doublewell_endpoint_minimum() {
        let path = doublewell_path();
        assert_eq!(path.log_unnorm(0.0, &[-2.0, 0.0]), 0.0);
    }

    #[test]
    fn doublewell_log_ratio_oracle() {
        // r01 = log(Z1 / Z0) by 2-D quadrature; the analytic Z0 is
        // sqrt(pi) * sqrt(2 pi).
        let path = doublewell_path();
        let z = |lambda: f64| {
            simpson(
                |x1| {
                    simpson(
                        |x2| path.log_unnorm(lambda, &[x1, x2]).exp(),
                        -6.0,
                        6.0,
                        400,
                    )
                },
                -6.0,
                6.0,
                400,
            )
        };
        let z0 = z(0.0);
        let z1 = z(1.0);
        let analytic_z0 = std::f64::consts::PI * std::f64::consts::SQRT_2;
        assert!((z0 - analytic_z0).abs() < 1e-6 * analytic_z0);
        let r01 = (z1 / z0).ln();
        assert!(
            (-7.2..=-6.6).contains(&r01),
            "quadrature r01 = {r01}, expected near -6.9"
        );
    }

    #[test]
    fn logistic_covariate_path_lambda_zero_constant_likelihood() {
        let model = small_logistic();
        let path = logistic_covariate_path(&model);
        let n = model.n() as f64;
        for x in [[0.3, -0.8], [1.2, 0.4]] {
            let lik = path.log_unnorm(0.0, &x) - model.prior().log_density(&x);
            assert!((lik - (-n * std::f64::consts::LN_2)).abs() < 1e-12);
        }
        assert_eq!(path.endpoint_offset(), n * std::f64::consts::LN_2);
        // Gradient at lambda = 0 is sum_i d_i'beta (y_i - 1/2).
        let beta = DVector::from_vec(vec![0.4, -0.9]);
        let eta = &model.design * &beta;
        let expect: f64 = eta
            .iter()
            .zip(model.y.iter())
            .map(|(&e, &y)| e * (y - 0.5))
            .sum();
        assert!((path.grad_lambda(0.0, &[0.4, -0.9]) - expect).abs() < 1e-12);
    }

    #[test]
    fn cv_paths_share_endpoints() {
        let model = small_logistic();
        let train = [0usize, 2, 4];
        let valid = [1usize, 3, 5];
        let cov = cv_covariate_path(&model, &train, &valid).unwrap();
        let t_model = model.subset(&train);
        let full = model.clone();
        let temper = cv_tempering_path(
            {
                let prior = model.prior();
                move |x: &[f64]| {
                    let beta = DVector::from_column_slice(x);
                    prior.log_density(x) + t_model.log_likelihood(&beta)
                }
            },
            {
                let v_model = model.subset(&valid);
                move |x: &[f64]| v_model.log_likelihood(&DVector::from_column_slice(x))
            },
        );
        // Both reach the full posterior at lambda = 1.
        for x in [[0.2, 0.5], [-1.0, 1.3]] {
            let beta = DVector::from_column_slice(&x);
            let full_post = model.prior().log_density(&x) + full.log_likelihood(&beta);
            assert!((cov.log_unnorm(1.0, &x) - full_post).abs() < 1e-10);
            assert!((temper.log_unnorm(1.0, &x) - full_post).abs() < 1e-10);
        }
        // Covariate path at lambda = 0: validation factor is 2^-n_V.
        let x = [0.2, 0.5];
        let t_only = model.prior().log_density(&x)
            + model.subset(&train).log_likelihood(&DVector::from_column_slice(&x));
        assert!(
            (cov.log_unnorm(0.0, &x) - (t_only - 3.0 * std::f64::consts::LN_2)).abs() < 1e-10
        );
        assert_eq!(cov.endpoint_offset(), 3.0 * std::f64::consts::LN_2);
    }

    #[test]
    fn gradients_match_finite_differences_everywhere() {
        let model = small_logistic();
        let train = [0usize, 2, 4];
        let valid = [1usize, 3, 5];
        let t_model = model.subset(&train);
        let v_model = model.subset(&valid);
        let prior = model.prior();
        let paths: Vec<(&str, Box<dyn PathFamily>, usize)> = vec![
            (
                "geometric",
                Box::new(geometric(|x: &[f64]| x[0] * x[0], |x: &[f64]| (x[0] - 1.0).powi(2))),
                1,
            ),
            ("normal-translation", Box::new(normal_translation_path(4.0)), 1),
            ("double-well", Box::new(doublewell_path()), 2),
            ("logistic-covariate", Box::new(logistic_covariate_path(&model)), 2),
            (
                "cv-tempering",
                Box::new(cv_tempering_path(
                    move |x: &[f64]| {
                        prior.log_density(x)
                            + t_model.log_likelihood(&DVector::from_column_slice(x))
                    },
                    move |x: &[f64]| v_model.log_likelihood(&DVector::from_column_slice(x)),
                )),
                2,
            ),
            (
                "cv-covariate",
                Box::new(cv_covariate_path(&model, &train, &valid).unwrap()),
                2,
            ),
            ("laplace-anchored", Box::new(laplace_anchored_path(&model).unwrap()), 2),
        ];
        for (name, path, dim) in &paths {
            let pts = random_points(*dim, 100, 60);
            let worst = finite_difference_worst_ratio(path.as_ref(), &pts);
            assert!(worst < 1.0, "{name}: worst FD ratio {worst}");
        }
    }

    #[test]
    fn empty_validation_set_rejected() {
        let model = small_logistic();
        let all: Vec<usize> = (0..6).collect();
        assert!(cv_covariate_path(&model, &all, &[]).is_err());
    }
}
