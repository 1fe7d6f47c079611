//! Small statistical test helpers used by the test suites and the
//! experiment harness: Kolmogorov-Smirnov distances, chi-square
//! goodness-of-fit, and composite Simpson quadrature.
//!
//! These are deliberately independent of the estimator code paths so they
//! can serve as oracles.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Composite Simpson quadrature of `f` on `[a, b]` with `n` panels
/// (`n` is rounded up to an even number).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// One-sample KS statistic of `samples` against the CDF `cdf`.
/// Sorts the slice in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let c = cdf(x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Asymptotic critical value of the one-sample KS statistic at level
/// `alpha`: sqrt(ln(2/alpha) / (2n)).
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Two-sample KS statistic. Sorts both slices in place.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical value for the two-sample KS statistic at level `alpha`.
pub fn ks_two_sample_critical(na: usize, nb: usize, alpha: f64) -> f64 {
    let scale = ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt();
    ((2.0 / alpha).ln() / 2.0).sqrt() * scale
}

/// Pearson chi-square statistic for observed `counts` against expected
/// cell probabilities `probs`, together with the critical value at level
/// `alpha` (df = cells - 1).
pub fn chi_square_gof(counts: &[u64], probs: &[f64], alpha: f64) -> (f64, f64) {
    assert_eq!(counts.len(), probs.len());
    let total: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let expect = total as f64 * p;
            (c as f64 - expect).powi(2) / expect
        })
        .sum();
    let df = (counts.len() - 1) as f64;
    let crit = ChiSquared::new(df).unwrap().inverse_cdf(1.0 - alpha);
    (stat, crit)
}

/// Normal CDF with the given mean and standard deviation.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).unwrap().cdf(x)
}

/// Sample mean and standard deviation (divisor n - 1).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
