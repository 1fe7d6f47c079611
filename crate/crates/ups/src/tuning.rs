//! The five-step tuning pipeline: meeting-time surveys over a lambda
//! grid, selection of the burn-in k and horizon m per grid point,
//! estimation of the second moment m2(lambda), and construction of the
//! piecewise-uniform proposal q with mass proportional to sqrt(m2).

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpsError};
use crate::paths::PathFamily;
use crate::unbiased::{h_km, run_coupled, run_to_meeting, CoupledKernel, EstimatorConfig};

/// Shape of a lambda grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Equispaced,
    LogEquispaced,
    Custom,
}

/// A sorted grid 0 = lambda_0 <= ... <= lambda_L = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    points: Vec<f64>,
    kind: GridKind,
}

impl LambdaGrid {
    /// Points l / L for l = 0..L.
    pub fn equispaced(l: usize) -> Result<Self> {
        if l < 1 {
            return Err(UpsError::Config("grid needs L >= 1".into()));
        }
        let points = (0..=l).map(|i| i as f64 / l as f64).collect();
        Ok(LambdaGrid {
            points,
            kind: GridKind::Equispaced,
        })
    }

    /// Points exp(l - L) for l = 1..L, with the smallest point replaced
    /// by 0 so the grid spans [0, 1] and the resulting proposal keeps
    /// full support.
    pub fn log_equispaced(l: usize) -> Result<Self> {
        if l < 1 {
            return Err(UpsError::Config("grid needs L >= 1".into()));
        }
        let mut points = vec![0.0];
        for i in 1..=l {
            points.push((i as f64 - l as f64).exp());
        }
        Ok(LambdaGrid {
            points,
            kind: GridKind::LogEquispaced,
        })
    }

    pub fn custom(points: Vec<f64>) -> Result<Self> {
        let ok = points.len() >= 2
            && points.first() == Some(&0.0)
            && points.last() == Some(&1.0)
            && points.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(UpsError::Config(
                "custom grid must be sorted with endpoints 0 and 1".into(),
            ));
        }
        Ok(LambdaGrid {
            points,
            kind: GridKind::Custom,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the grid point nearest to `lambda`; ties break toward
    /// the smaller index.
    pub fn nearest_index(&self, lambda: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &p) in self.points.iter().enumerate() {
            let d = (p - lambda).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }
}

/// Per-grid-point results of the tuning pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPointTuning {
    pub lambda: f64,
    pub meeting_times: Vec<usize>,
    pub k: usize,
    pub m: usize,
    pub tau_mean: f64,
    pub tau_q99: f64,
    pub sqrt_m2: f64,
}

/// The persisted outcome of a tuning phase: everything the estimation
/// phase needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningReport {
    pub grid: LambdaGrid,
    pub points: Vec<GridPointTuning>,
    /// Per-interval probability masses of the lambda proposal.
    pub masses: Vec<f64>,
}

impl TuningReport {
    pub fn proposal(&self) -> Result<LambdaProposal> {
        LambdaProposal::from_masses(self.grid.clone(), self.masses.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Empirical quantile with linear interpolation of order statistics
/// (type 7). `sorted` must be ascending.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Draw `r` independent meeting times at every grid point. Replicates
/// run in parallel on deterministic sub-streams of `seed`, so the output
/// does not depend on scheduling.
pub fn survey_meetings<F>(
    factory: &F,
    grid: &LambdaGrid,
    r: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>>
where
    F: Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync,
{
    if r < 2 {
        return Err(UpsError::Config("survey needs at least 2 replicates".into()));
    }
    grid.points()
        .iter()
        .enumerate()
        .map(|(idx, &lambda)| {
            let kernel = factory(lambda).map_err(|e| e.at_lambda(lambda))?;
            (0..r)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((idx as u64) << 32) | rep as u64);
                    run_to_meeting(kernel.as_ref(), max_iterations, &mut rng)
                        .map_err(|e| e.at_lambda(lambda))
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect()
}

/// k = ceil(multiplier x empirical quantile) of the meeting times.
pub fn choose_k(samples: &[usize], quantile: f64, multiplier: f64) -> usize {
    assert!(!samples.is_empty());
    let mut sorted: Vec<f64> = samples.iter().map(|&t| t as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (multiplier * quantile_type7(&sorted, quantile)).ceil() as usize
}

/// Horizons m_l = ceil(5 max_j k_j + max_j tau_mean_j - tau_mean_l), so
/// the expected cost tau - 1 + max(tau, m) is balanced across lambda.
pub fn choose_m(ks: &[usize], mean_taus: &[f64]) -> Vec<usize> {
    assert_eq!(ks.len(), mean_taus.len());
    let k_max = ks.iter().copied().max().unwrap_or(0) as f64;
    let tau_max = mean_taus.iter().cloned().fold(f64::MIN, f64::max);
    mean_taus
        .iter()
        .map(|&t| (5.0 * k_max + tau_max - t).ceil() as usize)
        .collect()
}

/// Estimate m2(lambda_l) = E[E_hat(lambda_l)^2] from `r` independent
/// H_{k:m} replicates with h = grad_lambda.
pub fn estimate_m2<F>(
    factory: &F,
    path: &dyn PathFamily,
    grid: &LambdaGrid,
    ks: &[usize],
    ms: &[usize],
    r: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<Box<dyn CoupledKernel>> + Sync,
{
    if r < 2 {
        return Err(UpsError::Config("m2 estimation needs at least 2 replicates".into()));
    }
    grid.points()
        .iter()
        .enumerate()
        .map(|(idx, &lambda)| {
            let kernel = factory(lambda).map_err(|e| e.at_lambda(lambda))?;
            let cfg = EstimatorConfig::with_cap(ks[idx], ms[idx], max_iterations)?;
            let h = move |s: &[f64]| vec![path.grad_lambda(lambda, s)];
            let sum_sq: f64 = (0..r)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                    rng.set_stream(((idx as u64) << 32) | rep as u64);
                    let run = run_coupled(kernel.as_ref(), &h, &cfg, &mut rng)
                        .map_err(|e| e.at_lambda(lambda))?;
                    Ok(h_km(&run, &cfg)[0].powi(2))
                })
                .sum::<Result<f64>>()?;
            Ok(sum_sq / r as f64)
        })
        .collect()
}

/// Piecewise-uniform proposal on (0,1): interval masses proportional to
/// width times the trapezoidal average of sqrt(m2) at the endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaProposal {
    grid: LambdaGrid,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

pub fn build_proposal(grid: &LambdaGrid, sqrt_m2: &[f64]) -> Result<LambdaProposal> {
    if sqrt_m2.len() != grid.len() {
        return Err(UpsError::Dimension(format!(
            "grid has {} points, sqrt_m2 has {}",
            grid.len(),
            sqrt_m2.len()
        )));
    }
    if sqrt_m2.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(UpsError::Config("sqrt_m2 must be finite and nonnegative".into()));
    }
    let max = sqrt_m2.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Err(UpsError::DegenerateProposal(
            "all sqrt_m2 values are zero".into(),
        ));
    }
    // Floor the values so every interval keeps positive mass and q stays
    // strictly positive on (0,1), as unbiasedness requires.
    let floor = 1e-8 * max;
    let vals: Vec<f64> = sqrt_m2.iter().map(|&v| v.max(floor)).collect();
    let pts = grid.points();
    let raw: Vec<f64> = pts
        .windows(2)
        .zip(vals.windows(2))
        .map(|(w, v)| (w[1] - w[0]) * (v[0] + v[1]) / 2.0)
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(UpsError::DegenerateProposal("zero total proposal mass".into()));
    }
    let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
    LambdaProposal::from_masses(grid.clone(), masses)
}

impl LambdaProposal {
    pub fn from_masses(grid: LambdaGrid, masses: Vec<f64>) -> Result<Self> {
        if masses.len() + 1 != grid.len() {
            return Err(UpsError::Dimension(format!(
                "grid has {} points but {} interval masses",
                grid.len(),
                masses.len()
            )));
        }
        let widths: Vec<f64> = grid.points().windows(2).map(|w| w[1] - w[0]).collect();
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(UpsError::Config(format!(
                "interval masses sum to {total}, expected 1"
            )));
        }
        for (m, w) in masses.iter().zip(&widths) {
            if *m < 0.0 || (*w == 0.0 && *m > 0.0) {
                return Err(UpsError::DegenerateProposal(
                    "mass on an empty interval".into(),
                ));
            }
            if *w > 0.0 && *m <= 0.0 {
                return Err(UpsError::DegenerateProposal(
                    "interval with zero mass breaks full support".into(),
                ));
            }
        }
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(LambdaProposal {
            grid,
            masses,
            cumulative,
        })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn grid(&self) -> &LambdaGrid {
        &self.grid
    }

    /// Density of the piecewise-uniform law at `lambda`.
    pub fn density(&self, lambda: f64) -> f64 {
        let pts = self.grid.points();
        if !(0.0..=1.0).contains(&lambda) {
            return 0.0;
        }
        let idx = match pts.binary_search_by(|p| p.partial_cmp(&lambda).unwrap()) {
            Ok(i) => i.min(pts.len() - 2),
            Err(i) => i.saturating_sub(1),
        };
        let width = pts[idx + 1] - pts[idx];
        if width > 0.0 {
            self.masses[idx] / width
        } else {
            0.0
        }
    }

    /// Draw lambda and return it with its exact density value. The
    /// interval is found by binary search on cumulative masses.
    pub fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let u = rng.gen::<f64>();
        let idx = self
            .cumulative
            .partition_point(|&c| c < u)
            .min(self.masses.len() - 1);
        let pts = self.grid.points();
        let (lo, hi) = (pts[idx], pts[idx + 1]);
        let lambda = lo + rng.gen::<f64>() * (hi - lo);
        (lambda, self.masses[idx] / (hi - lo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::chi_square_gof;

    #[test]
    fn grids_have_exact_endpoints() {
        let eq = LambdaGrid::equispaced(10).unwrap();
        assert_eq!(eq.points().len(), 11);
        assert_eq!(eq.points()[0], 0.0);
        assert_eq!(eq.points()[10], 1.0);
        let log = LambdaGrid::log_equispaced(20).unwrap();
        assert_eq!(log.points().len(), 21);
        assert_eq!(log.points()[0], 0.0);
        assert_eq!(*log.points().last().unwrap(), 1.0);
        assert!((log.points()[1] - (-19.0f64).exp()).abs() < 1e-300);
        assert!(LambdaGrid::custom(vec![0.0, 0.3, 1.0]).is_ok());
        assert!(LambdaGrid::custom(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn nearest_index_breaks_ties_low() {
        let grid = LambdaGrid::equispaced(2).unwrap(); // 0, 0.5, 1
        assert_eq!(grid.nearest_index(0.2), 0);
        assert_eq!(grid.nearest_index(0.25), 0); // tie -> smaller index
        assert_eq!(grid.nearest_index(0.26), 1);
        assert_eq!(grid.nearest_index(0.9), 2);
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(&[3, 3, 3], 0.99, 1.0), 3);
        assert_eq!(choose_k(&[3, 3, 3], 0.99, 2.0), 6);
        // Type-7 quantile of {1..100} at 0.99 is 99.01; ceil gives 100.
        let samples: Vec<usize> = (1..=100).collect();
        assert_eq!(choose_k(&samples, 0.99, 1.0), 100);
    }

    #[test]
    fn choose_m_examples_and_balance() {
        // Symmetric inputs: 5 * 2 + 4 - 4 = 10 at both points.
        assert_eq!(choose_m(&[2, 2], &[4.0, 4.0]), vec![10, 10]);
        assert_eq!(choose_m(&[2, 4], &[3.0, 7.0]), vec![24, 20]);
        // m_l + tau_l is constant up to rounding.
        let ms = choose_m(&[3, 5, 1], &[2.5, 9.0, 4.25]);
        let costs: Vec<f64> = ms
            .iter()
            .zip([2.5, 9.0, 4.25])
            .map(|(&m, t)| m as f64 + t)
            .collect();
        for w in costs.windows(2) {
            assert!((w[0] - w[1]).abs() <= 1.0, "costs {costs:?}");
        }
        for (m, k) in ms.iter().zip([3usize, 5, 1]) {
            assert!(*m >= 5 * k);
        }
    }

    #[test]
    fn proposal_uniform_for_constant_m2() {
        let grid = LambdaGrid::equispaced(4).unwrap();
        let q = build_proposal(&grid, &[2.0; 5]).unwrap();
        for m in q.masses() {
            assert!((m - 0.25).abs() < 1e-12);
        }
        assert!((q.density(0.1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proposal_example_masses() {
        let grid = LambdaGrid::custom(vec![0.0, 0.5, 1.0]).unwrap();
        // m2 = (1, 1, 9) -> sqrt = (1, 1, 3) -> masses (1/3, 2/3).
        let q = build_proposal(&grid, &[1.0, 1.0, 3.0]).unwrap();
        assert!((q.masses()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((q.masses()[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((q.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_proposals_rejected() {
        let grid = LambdaGrid::equispaced(2).unwrap();
        assert!(matches!(
            build_proposal(&grid, &[0.0, 0.0, 0.0]),
            Err(UpsError::DegenerateProposal(_))
        ));
        // A zero value among positive ones is floored, not fatal.
        let q = build_proposal(&grid, &[1.0, 0.0, 1.0]).unwrap();
        assert!(q.masses().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn sampler_matches_masses() {
        use rand::SeedableRng;
        let grid = LambdaGrid::custom(vec![0.0, 0.5, 1.0]).unwrap();
        let q = LambdaProposal::from_masses(grid, vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let n = 100_000;
        let mut counts = [0u64; 2];
        for _ in 0..n {
            let (lambda, dens) = q.sample(&mut rng);
            assert!((0.0..1.0).contains(&lambda));
            let idx = usize::from(lambda >= 0.5);
            counts[idx] += 1;
            let expect = q.masses()[idx] / 0.5;
            assert_eq!(dens, expect);
        }
        let (stat, crit) = chi_square_gof(&counts, &[1.0 / 3.0, 2.0 / 3.0], 1e-3);
        assert!(stat < crit, "chi-square {stat} vs {crit}");
    }

    #[test]
    fn single_interval_proposal_is_uniform() {
        use rand::SeedableRng;
        let grid = LambdaGrid::equispaced(1).unwrap();
        let q = LambdaProposal::from_masses(grid, vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..100 {
            let (lambda, dens) = q.sample(&mut rng);
            assert!((0.0..1.0).contains(&lambda));
            assert_eq!(dens, 1.0);
        }
    }

    #[test]
    fn survey_and_m2_on_toy_kernel() {
        use crate::paths::geometric;
        // Contraction kernel meeting at tau = 2 with constant gradient 2:
        // H is exactly 2, so m2 = 4.
        struct ToZero;
        impl CoupledKernel for ToZero {
            fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
                vec![rng.gen::<f64>()]
            }
            fn step(&self, _: &[f64], _: &mut dyn RngCore) -> Vec<f64> {
                vec![0.0]
            }
            fn coupled_step(
                &self,
                _: &[f64],
                _: &[f64],
                _: &mut dyn RngCore,
            ) -> Result<(Vec<f64>, Vec<f64>)> {
                Ok((vec![0.0], vec![0.0]))
            }
        }
        let factory = |_: f64| -> Result<Box<dyn CoupledKernel>> { Ok(Box::new(ToZero)) };
        let grid = LambdaGrid::equispaced(3).unwrap();
        let taus = survey_meetings(&factory, &grid, 50, 1000, 7).unwrap();
        assert_eq!(taus.len(), 4);
        assert!(taus.iter().flatten().all(|&t| t == 2));
        // Constant path: U0 - U1 = 2 everywhere near zero state.
        let path = geometric(|_: &[f64]| 0.0, |_: &[f64]| -2.0);
        let ks = vec![1usize; 4];
        let ms = vec![5usize; 4];
        let m2 = estimate_m2(&factory, &path, &grid, &ks, &ms, 20, 1000, 7).unwrap();
        for v in m2 {
            assert!((v - 4.0).abs() < 1e-12, "m2 = {v}");
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let grid = LambdaGrid::equispaced(2).unwrap();
        let report = TuningReport {
            grid: grid.clone(),
            points: grid
                .points()
                .iter()
                .map(|&l| GridPointTuning {
                    lambda: l,
                    meeting_times: vec![2, 3, 4],
                    k: 3,
                    m: 15,
                    tau_mean: 3.0,
                    tau_q99: 4.0,
                    sqrt_m2: 1.5,
                })
                .collect(),
            masses: vec![0.5, 0.5],
        };
        let text = report.to_json().unwrap();
        let back = TuningReport::from_json(&text).unwrap();
        assert_eq!(back.grid, report.grid);
        assert_eq!(back.masses, report.masses);
        assert_eq!(back.points[1].k, 3);
        back.proposal().unwrap();
    }
}
