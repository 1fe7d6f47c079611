//! Exact couplings of continuous distributions.
//!
//! Couplings are the ingredient that makes pairs of Markov chains meet
//! exactly: both constructions below put positive mass on the diagonal
//! `{x = y}`, and on that event the two draws are bitwise identical.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::RngCore;

use crate::error::{Result, UpsError};

/// Safety cap for the residual rejection loop of the maximal coupling.
const REJECTION_CAP: usize = 1_000_000;

/// A distribution that can be sampled and whose density can be evaluated
/// in log space, up to a common base measure. `-inf` is allowed outside
/// the support.
pub trait SamplableDensity {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// One draw from a coupling of two distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDraw {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// When true, `x` and `y` are identical coordinatewise, with zero
    /// tolerance.
    pub met: bool,
}

fn check_finite(value: f64) -> Result<f64> {
    // -inf is a legitimate "outside the support" value; NaN and +inf are not.
    if value.is_nan() || value == f64::INFINITY {
        Err(UpsError::NonFiniteDensity { value })
    } else {
        Ok(value)
    }
}

/// Maximal (gamma-) coupling of `p` and `q`.
///
/// Sample `X ~ p` and accept `Y = X` with probability `min(1, q(X)/p(X))`;
/// otherwise rejection-sample `Y ~ q` until the residual `q - min(p, q)`
/// dominates. The marginals are `p` and `q`, and the two draws are equal
/// with probability `1 - TV(p, q)`.
pub fn maximal_coupling(
    p: &dyn SamplableDensity,
    q: &dyn SamplableDensity,
    rng: &mut dyn RngCore,
) -> Result<CoupledDraw> {
    let x = p.sample(rng);
    let log_p_x = check_finite(p.log_density(&x))?;
    let log_q_x = check_finite(q.log_density(&x))?;
    // Acceptance test in log space: ln U <= ln q(X) - ln p(X).
    if rng.gen::<f64>().ln() <= log_q_x - log_p_x {
        return Ok(CoupledDraw {
            y: x.clone(),
            x,
            met: true,
        });
    }
    for _ in 0..REJECTION_CAP {
        let y = q.sample(rng);
        let log_p_y = check_finite(p.log_density(&y))?;
        let log_q_y = check_finite(q.log_density(&y))?;
        if rng.gen::<f64>().ln() > log_p_y - log_q_y {
            return Ok(CoupledDraw { x, y, met: false });
        }
    }
    Err(UpsError::RejectionCap { cap: REJECTION_CAP })
}

fn std_normal_vec(d: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    let dist = rand_distr::StandardNormal;
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(dist))
}

fn log_std_normal(z: &DVector<f64>) -> f64 {
    -0.5 * z.dot(z)
}

/// Reflection-maximal coupling of `N(mu1, Sigma)` and `N(mu2, Sigma)`,
/// where `chol` is a lower-triangular Cholesky factor of the shared
/// covariance.
///
/// With probability `1 - TV` the two draws coincide; otherwise the
/// standardized residual of `y` is the Householder reflection of the
/// standardized residual of `x` about `e ~ chol^-1 (mu1 - mu2)`.
pub fn reflection_maximal_normal(
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    chol: &DMatrix<f64>,
    rng: &mut dyn RngCore,
) -> Result<CoupledDraw> {
    let d = mu1.len();
    if mu2.len() != d || chol.nrows() != d || chol.ncols() != d {
        return Err(UpsError::Dimension(format!(
            "reflection coupling: mu1 {} mu2 {} chol {}x{}",
            d,
            mu2.len(),
            chol.nrows(),
            chol.ncols()
        )));
    }
    if chol.diagonal().iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(UpsError::LinearAlgebra(
            "Cholesky factor must have a strictly positive diagonal".into(),
        ));
    }
    let diff = mu1 - mu2;
    let z = chol
        .clone()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| UpsError::LinearAlgebra("singular Cholesky factor".into()))?;

    let xdot = std_normal_vec(d, rng);
    let x: Vec<f64> = (mu1 + chol * &xdot).data.into();
    let z_norm = z.norm();
    if z_norm == 0.0 {
        // Identical distributions: the chains meet surely.
        return Ok(CoupledDraw {
            y: x.clone(),
            x,
            met: true,
        });
    }
    let shifted = &xdot + &z;
    if rng.gen::<f64>().ln() <= log_std_normal(&shifted) - log_std_normal(&xdot) {
        // y = mu2 + chol (xdot + z) = mu1 + chol xdot = x, exactly; reuse
        // the same coordinates to keep the equality bitwise.
        Ok(CoupledDraw {
            y: x.clone(),
            x,
            met: true,
        })
    } else {
        let e = &z / z_norm;
        let ydot = &xdot - (2.0 * e.dot(&xdot)) * &e;
        let y: Vec<f64> = (mu2 + chol * ydot).data.into();
        Ok(CoupledDraw { x, y, met: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_critical, ks_statistic, normal_cdf, simpson};
    use crate::gaussian::{MvNormal, Uniform1d};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal_1d(mean: f64, sd: f64) -> MvNormal {
        MvNormal::from_covariance(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, sd * sd),
        )
        .unwrap()
    }

    /// Quadrature oracle for P(meet) = integral of min of two normal
    /// densities.
    fn meet_prob_normals(m1: f64, m2: f64, sd: f64) -> f64 {
        let pdf = |m: f64, x: f64| {
            (-0.5 * ((x - m) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        };
        simpson(|x| pdf(m1, x).min(pdf(m2, x)), -10.0, 14.0, 40_000)
    }

    #[test]
    fn identical_normals_always_meet() {
        let p = normal_1d(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = maximal_coupling(&p, &p, &mut rng).unwrap();
            assert!(d.met);
            assert_eq!(d.x, d.y);
        }
    }

    #[test]
    fn disjoint_uniforms_never_meet() {
        let p = Uniform1d::new(0.0, 1.0);
        let q = Uniform1d::new(2.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let d = maximal_coupling(&p, &q, &mut rng).unwrap();
            assert!(!d.met);
        }
    }

    #[test]
    fn separated_normals_meet_with_tv_probability() {
        // P(meet) = 1 - TV(N(0,1), N(4,1)), computed by quadrature.
        let expected = meet_prob_normals(0.0, 4.0, 1.0);
        assert!((expected - 0.0455).abs() < 0.005, "oracle value {expected}");

        let p = normal_1d(0.0, 1.0);
        let q = normal_1d(4.0, 1.0);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut meets = 0usize;
        for _ in 0..n {
            if maximal_coupling(&p, &q, &mut rng).unwrap().met {
                meets += 1;
            }
        }
        let phat = meets as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!(
            (phat - expected).abs() < 4.0 * se,
            "phat = {phat}, expected = {expected}"
        );
    }

    #[test]
    fn maximal_coupling_preserves_marginals() {
        let p = normal_1d(0.0, 1.0);
        let q = normal_1d(1.0, 2.0);
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let d = maximal_coupling(&p, &q, &mut rng).unwrap();
            xs.push(d.x[0]);
            ys.push(d.y[0]);
        }
        let crit = ks_critical(n, 1e-3);
        assert!(ks_statistic(&mut xs, |v| normal_cdf(v, 0.0, 1.0)) < crit);
        assert!(ks_statistic(&mut ys, |v| normal_cdf(v, 1.0, 2.0)) < crit);
    }

    #[test]
    fn reflection_meets_when_means_equal() {
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let chol = DMatrix::identity(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = reflection_maximal_normal(&mu, &mu, &chol, &mut rng).unwrap();
            assert!(d.met);
            assert_eq!(d.x, d.y);
        }
    }

    #[test]
    fn reflection_meeting_probability_matches_quadrature() {
        let expected = meet_prob_normals(0.0, 4.0, 1.0);
        let mu1 = DVector::from_element(1, 0.0);
        let mu2 = DVector::from_element(1, 4.0);
        let chol = DMatrix::identity(1, 1);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut meets = 0usize;
        for _ in 0..n {
            if reflection_maximal_normal(&mu1, &mu2, &chol, &mut rng)
                .unwrap()
                .met
            {
                meets += 1;
            }
        }
        let phat = meets as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((phat - expected).abs() < 4.0 * se);
    }

    #[test]
    fn reflection_is_householder_in_2d() {
        // mu1 = (0,0), mu2 = (1,0), Sigma = I: a non-met draw satisfies
        // y1 = 1 - x1 and y2 = x2.
        let mu1 = DVector::from_vec(vec![0.0, 0.0]);
        let mu2 = DVector::from_vec(vec![1.0, 0.0]);
        let chol = DMatrix::identity(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut saw_unmet = false;
        for _ in 0..500 {
            let d = reflection_maximal_normal(&mu1, &mu2, &chol, &mut rng).unwrap();
            if !d.met {
                saw_unmet = true;
                assert!((d.y[0] - (1.0 - d.x[0])).abs() < 1e-12);
                assert!((d.y[1] - d.x[1]).abs() < 1e-12);
            }
        }
        assert!(saw_unmet);
    }

    #[test]
    fn reflection_preserves_marginals() {
        let mu1 = DVector::from_element(1, 0.0);
        let mu2 = DVector::from_element(1, 1.5);
        let chol = DMatrix::from_element(1, 1, 0.7);
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let d = reflection_maximal_normal(&mu1, &mu2, &chol, &mut rng).unwrap();
            xs.push(d.x[0]);
            ys.push(d.y[0]);
        }
        let crit = ks_critical(n, 1e-3);
        assert!(ks_statistic(&mut xs, |v| normal_cdf(v, 0.0, 0.7)) < crit);
        assert!(ks_statistic(&mut ys, |v| normal_cdf(v, 1.5, 0.7)) < crit);
    }

    #[test]
    fn nan_density_is_an_error() {
        struct Bad;
        impl SamplableDensity for Bad {
            fn sample(&self, _: &mut dyn RngCore) -> Vec<f64> {
                vec![0.0]
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                f64::NAN
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(matches!(
            maximal_coupling(&Bad, &Bad, &mut rng),
            Err(UpsError::NonFiniteDensity { .. })
        ));
    }
}
