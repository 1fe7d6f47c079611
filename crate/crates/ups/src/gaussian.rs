//! Multivariate normal, inverse-Gamma and uniform distributions with the
//! sample/log-density interface required by the couplings.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::RngCore;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::coupling::SamplableDensity;
use crate::error::{Result, UpsError};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Whether the stored Cholesky factor decomposes the covariance or the
/// precision matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    Covariance,
    Precision,
}

/// Multivariate normal distribution, parameterized by either its
/// covariance or its precision matrix (the latter is what Gibbs
/// conditionals produce naturally).
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    /// Clean lower-triangular Cholesky factor of the parameterizing
    /// matrix.
    l: DMatrix<f64>,
    param: Param,
    /// log det of the covariance matrix.
    log_det_cov: f64,
}

impl MvNormal {
    pub fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::build(mean, cov, Param::Covariance)
    }

    pub fn from_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        Self::build(mean, precision, Param::Precision)
    }

    fn build(mean: DVector<f64>, matrix: DMatrix<f64>, param: Param) -> Result<Self> {
        if matrix.nrows() != mean.len() || matrix.ncols() != mean.len() {
            return Err(UpsError::Dimension(format!(
                "normal: mean has {} entries, matrix is {}x{}",
                mean.len(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let l = Cholesky::new(matrix)
            .ok_or_else(|| UpsError::LinearAlgebra("matrix is not positive definite".into()))?
            .unpack();
        let log_det_factor: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        let log_det_cov = match param {
            Param::Covariance => 2.0 * log_det_factor,
            Param::Precision => -2.0 * log_det_factor,
        };
        Ok(MvNormal {
            mean,
            l,
            param,
            log_det_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Lower-triangular Cholesky factor of the covariance. Only available
    /// in the covariance parameterization.
    pub fn covariance_chol(&self) -> Option<&DMatrix<f64>> {
        match self.param {
            Param::Covariance => Some(&self.l),
            Param::Precision => None,
        }
    }

    pub fn sample_vector(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        match self.param {
            // mean + L z
            Param::Covariance => &self.mean + &self.l * z,
            // mean + L^-T z, where precision = L L^T
            Param::Precision => {
                let mut w = z;
                self.l.tr_solve_lower_triangular_mut(&mut w);
                &self.mean + w
            }
        }
    }

    pub fn log_density_vector(&self, x: &DVector<f64>) -> f64 {
        let centered = x - &self.mean;
        let quad = match self.param {
            Param::Covariance => {
                let mut w = centered;
                self.l.solve_lower_triangular_mut(&mut w);
                w.dot(&w)
            }
            Param::Precision => {
                let w = self.l.tr_mul(&centered);
                w.dot(&w)
            }
        };
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov + quad)
    }
}

impl SamplableDensity for MvNormal {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample_vector(rng).as_slice().to_vec()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_vector(&DVector::from_column_slice(x))
    }
}

/// Inverse-Gamma distribution with shape `a` and rate `b`, i.e.
/// density proportional to `z^{-a-1} exp(-b/z)` on `z > 0`.
#[derive(Debug, Clone, Copy)]
pub struct InvGamma {
    a: f64,
    b: f64,
}

impl InvGamma {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(InvGamma { a, b })
        } else {
            Err(UpsError::Config(format!(
                "inverse-Gamma parameters must be positive and finite, got a={a}, b={b}"
            )))
        }
    }
}

impl SamplableDensity for InvGamma {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let g = Gamma::new(self.a, 1.0 / self.b).expect("validated parameters");
        vec![1.0 / g.sample(rng)]
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let z = x[0];
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.a * self.b.ln() - ln_gamma(self.a) - (self.a + 1.0) * z.ln() - self.b / z
    }
}

/// Uniform distribution on an interval; used in tests and as a trivial
/// density example.
#[derive(Debug, Clone, Copy)]
pub struct Uniform1d {
    lo: f64,
    hi: f64,
}

impl Uniform1d {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(hi > lo);
        Uniform1d { lo, hi }
    }
}

impl SamplableDensity for Uniform1d {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.gen_range(self.lo..self.hi)]
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if x[0] >= self.lo && x[0] <= self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn covariance_and_precision_forms_agree() {
        let mean = DVector::from_vec(vec![0.5, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let prec = cov.clone().try_inverse().unwrap();
        let a = MvNormal::from_covariance(mean.clone(), cov).unwrap();
        let b = MvNormal::from_precision(mean, prec).unwrap();
        for pt in [[0.0, 0.0], [1.0, -2.0], [-0.4, 3.0]] {
            assert!((a.log_density(&pt) - b.log_density(&pt)).abs() < 1e-10);
        }
    }

    #[test]
    fn normal_log_density_matches_closed_form_1d() {
        let n = MvNormal::from_covariance(
            DVector::from_element(1, 2.0),
            DMatrix::from_element(1, 1, 4.0),
        )
        .unwrap();
        let x = 3.0f64;
        let expect = -0.5 * ((x - 2.0f64).powi(2) / 4.0 + (4.0f64).ln() + LN_2PI);
        assert!((n.log_density(&[x]) - expect).abs() < 1e-12);
    }

    #[test]
    fn precision_sampling_has_right_moments() {
        let prec = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let cov = prec.clone().try_inverse().unwrap();
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let n = MvNormal::from_precision(mean.clone(), prec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 200_000;
        let mut sum = DVector::zeros(2);
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let s = n.sample_vector(&mut rng);
            sum_sq += (s[0] - mean[0]) * (s[0] - mean[0]);
            sum += s;
        }
        let m = sum / reps as f64;
        assert!((m[0] - 1.0).abs() < 0.01 && (m[1] - 2.0).abs() < 0.01);
        assert!((sum_sq / reps as f64 - cov[(0, 0)]).abs() < 0.01);
    }

    #[test]
    fn inv_gamma_mean_matches() {
        // mean = b / (a - 1)
        let ig = InvGamma::new(3.0, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reps = 200_000;
        let mean: f64 = (0..reps)
            .map(|_| ig.sample(&mut rng)[0])
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn inv_gamma_density_integrates_to_one() {
        let ig = InvGamma::new(2.5, 1.5).unwrap();
        let integral = crate::diagnostics::simpson(
            |z| if z > 0.0 { ig.log_density(&[z]).exp() } else { 0.0 },
            1e-9,
            1000.0,
            400_000,
        );
        assert!((integral - 1.0).abs() < 1e-5, "integral {integral}");
    }
}
