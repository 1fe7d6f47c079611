//! Coupled-chain runs and the bias-corrected estimator H_{k:m}.
//!
//! Two chains are started independently, the first is advanced one step,
//! and the pair then evolves through a coupled kernel until the chains
//! meet exactly. The meeting time tau is the first n with X_n equal to
//! Y_{n-1}; after meeting only one chain is advanced.

use rand::RngCore;

use crate::error::{Result, UpsError};

/// A Markov kernel together with a coupled version of itself and an
/// initial distribution. The coupled transition must preserve the
/// single-chain marginals, and must be faithful: equal inputs produce
/// equal outputs.
pub trait CoupledKernel: Sync {
    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
    fn coupled_step(
        &self,
        x: &[f64],
        y: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Burn-in `k`, horizon `m` and the iteration safety cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorConfig {
    pub k: usize,
    pub m: usize,
    pub max_iterations: usize,
}

impl EstimatorConfig {
    pub fn new(k: usize, m: usize) -> Self {
        EstimatorConfig {
            k,
            m,
            max_iterations: 100_000,
        }
    }

    pub fn with_cap(k: usize, m: usize, max_iterations: usize) -> Result<Self> {
        if m < k || max_iterations <= m {
            return Err(UpsError::Config(format!(
                "need 0 <= k <= m < max_iterations, got k={k}, m={m}, cap={max_iterations}"
            )));
        }
        Ok(EstimatorConfig {
            k,
            m,
            max_iterations,
        })
    }
}

/// Record of one coupled run: meeting time, test-function values along
/// both chains, and the cost in kernel-step units.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    /// First n >= 1 with X_n = Y_{n-1}.
    pub tau: usize,
    /// h(X_0), ..., h(X_N) with N = max(m, tau - 1).
    pub h_values_x: Vec<Vec<f64>>,
    /// h(Y_0), ..., h(Y_{tau-2}); the y-chain is not advanced past
    /// meeting.
    pub h_values_y: Vec<Vec<f64>>,
    /// tau - 1 + max(tau, m).
    pub cost_units: usize,
}

/// Cost of one run in kernel-step units: one coupled transition counts
/// as two single steps, the initial draws are not counted.
pub fn cost_of(tau: usize, m: usize) -> usize {
    tau - 1 + tau.max(m)
}

/// Run a coupled pair of chains until meeting (and until iteration `m`
/// on the surviving chain), recording `h` along the way.
pub fn run_coupled(
    kernel: &dyn CoupledKernel,
    h: &dyn Fn(&[f64]) -> Vec<f64>,
    cfg: &EstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<CoupledRun> {
    let run = run_internal(kernel, Some(h), cfg, rng)?;
    Ok(run)
}

/// Run a coupled pair only to its meeting time; no test-function values
/// are recorded. Used by meeting-time surveys.
pub fn run_to_meeting(
    kernel: &dyn CoupledKernel,
    max_iterations: usize,
    rng: &mut dyn RngCore,
) -> Result<usize> {
    let cfg = EstimatorConfig {
        k: 0,
        m: 0,
        max_iterations,
    };
    let run = run_internal(kernel, None, &cfg, rng)?;
    Ok(run.tau)
}

fn run_internal(
    kernel: &dyn CoupledKernel,
    h: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    cfg: &EstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<CoupledRun> {
    let record = |state: &[f64], out: &mut Vec<Vec<f64>>| {
        if let Some(f) = h {
            out.push(f(state));
        }
    };

    let mut h_x = Vec::new();
    let mut h_y = Vec::new();

    // X_0 and Y_0 independently from the initial distribution, then one
    // single step of the x-chain.
    let y0 = kernel.initial(rng);
    let mut x = kernel.initial(rng);
    record(&x, &mut h_x);
    record(&y0, &mut h_y);
    x = kernel.step(&x, rng);
    record(&x, &mut h_x);
    let mut y = y0;

    // Coupled transitions: at stage n >= 1 we map (X_n, Y_{n-1}) to
    // (X_{n+1}, Y_n) and test X_{n+1} = Y_n.
    let mut tau = None;
    let mut n = 1usize;
    while n < cfg.max_iterations {
        let (xn, yn) = kernel.coupled_step(&x, &y, rng)?;
        record(&xn, &mut h_x);
        x = xn;
        y = yn;
        n += 1;
        if x == y {
            tau = Some(n);
            break;
        }
        record(&y, &mut h_y);
    }
    let tau = match tau {
        Some(t) => t,
        None => {
            return Err(UpsError::NoMeeting {
                max_iterations: cfg.max_iterations,
                partial_x: h_x,
                partial_y: h_y,
            })
        }
    };

    // The x-chain now sits at index tau; continue alone up to max(m, tau).
    let top = cfg.m.max(tau);
    for _ in tau..top {
        x = kernel.step(&x, rng);
        record(&x, &mut h_x);
    }

    // Trim to the indices h_km actually needs (y-chain up to tau - 2).
    if h.is_some() {
        h_y.truncate(tau.saturating_sub(1));
    }

    Ok(CoupledRun {
        tau,
        h_values_x: h_x,
        h_values_y: h_y,
        cost_units: cost_of(tau, cfg.m),
    })
}

/// The bias-corrected estimator: the ergodic average of h over k..m plus
/// the telescoping correction up to tau - 1.
pub fn h_km(run: &CoupledRun, cfg: &EstimatorConfig) -> Vec<f64> {
    let dim = run.h_values_x[0].len();
    let span = (cfg.m - cfg.k + 1) as f64;
    let mut out = vec![0.0; dim];
    for n in cfg.k..=cfg.m {
        for (o, v) in out.iter_mut().zip(&run.h_values_x[n]) {
            *o += v / span;
        }
    }
    // Empty when tau - 1 < k + 1.
    for n in (cfg.k + 1)..run.tau {
        let w = 1.0f64.min((n - cfg.k) as f64 / span);
        for ((o, hx), hy) in out
            .iter_mut()
            .zip(&run.h_values_x[n])
            .zip(&run.h_values_y[n - 1])
        {
            *o += w * (hx - hy);
        }
    }
    out
}
