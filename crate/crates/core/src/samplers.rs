//! Reverse-diffusion driver, ULA baseline and schedule constructors.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec, EstimatorState, PreparedLevel};
use crate::potential::{Counted, Potential};
use crate::rng::{purpose, stream};
use crate::samples::SampleMatrix;

/// Uniform time grid `t_k = kT/N`, `k = 1..=N`, with per-step particle counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: f64,
    pub steps: usize,
    pub grid: Vec<f64>,
    pub particles: Vec<u64>,
}

impl Schedule {
    fn uniform(horizon: f64, steps: usize, particles: u64) -> Self {
        let grid = (1..=steps)
            .map(|k| {
                if k == steps {
                    horizon
                } else {
                    k as f64 * horizon / steps as f64
                }
            })
            .collect();
        Self {
            horizon,
            steps,
            grid,
            particles: vec![particles; steps],
        }
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `Σ_k n_k`, the value queries one chain spends with a Gaussian-draw estimator.
    pub fn total_particles(&self) -> u64 {
        self.particles.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.grid.len() != self.steps || self.particles.len() != self.steps {
            return Err(Error::Config(
                "schedule grid and particle counts must have N ≥ 1 entries".into(),
            ));
        }
        if !(self.grid[0] > 0.0) || self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "schedule grid must be strictly increasing and positive".into(),
            ));
        }
        if self.particles.contains(&0) {
            return Err(Error::Config("every n_k must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Guards `ceil` against `powf` landing a hair above an exact integer.
fn ceil_count(x: f64) -> f64 {
    (x * (1.0 - 4.0 * f64::EPSILON)).ceil()
}

/// Theory preset: `T = ln(1/ε)`, `N = ⌈1/ε⌉`, `n_k = ⌈d ε^{−(2d+3)}⌉`.
pub fn schedule_theory(epsilon: f64, dim: usize) -> Result<Schedule> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if dim == 0 {
        return Err(Error::Config("dimension must be ≥ 1".into()));
    }
    let horizon = (1.0 / epsilon).ln();
    let steps = ceil_count(1.0 / epsilon);
    let exponent = -(2.0 * dim as f64 + 3.0);
    let n = ceil_count(dim as f64 * epsilon.powf(exponent));
    let total = n * steps;
    if !n.is_finite() || n >= u64::MAX as f64 || !total.is_finite() || total >= u64::MAX as f64 {
        return Err(Error::BudgetOverflow(format!(
            "ε = {epsilon}, d = {dim} needs n_k ≈ {n:.3e} particles per step and ≈ {total:.3e} \
             potential queries per sample"
        )));
    }
    if steps > usize::MAX as f64 {
        return Err(Error::BudgetOverflow(format!("N = {steps:.3e} steps")));
    }
    Ok(Schedule::uniform(horizon, steps as usize, n as u64))
}

/// Practical preset: uniform grid over `[0, T]` with `N` steps and constant `n`.
pub fn schedule_practical(horizon: f64, steps: usize, particles: u64) -> Result<Schedule> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!("horizon must be > 0, got {horizon}")));
    }
    if steps == 0 || particles == 0 {
        return Err(Error::Config("steps and particles must be ≥ 1".into()));
    }
    Ok(Schedule::uniform(horizon, steps, particles))
}

/// Exact solution over duration `h` of `dY = (Y + 2s) dt + √2 dB` with `s`
/// frozen: `e^h y + 2(e^h − 1) s + √(e^{2h} − 1) ξ`.
pub fn reverse_step(y: &[f64], s: &[f64], h: f64, xi: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    reverse_step_in_place(&mut out, s, h, xi);
    out
}

fn reverse_step_in_place(y: &mut [f64], s: &[f64], h: f64, xi: &[f64]) {
    let growth = h.exp();
    let drift = 2.0 * h.exp_m1();
    let diffusion = (2.0 * h).exp_m1().sqrt();
    for ((yi, si), xii) in y.iter_mut().zip(s).zip(xi) {
        *yi = growth * *yi + drift * si + diffusion * xii;
    }
}

/// Output of a sampler run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub samples: SampleMatrix,
    pub seed: u64,
    pub potential_queries: u64,
    pub gradient_queries: u64,
    pub wall_seconds: f64,
}

/// Runs `num_chains` independent reverse-diffusion chains from `N(0, I)`.
///
/// Chain `c` evaluates the estimator at `t_k` for `k = N, …, 1` on its current
/// state and advances with [`reverse_step`] over `t_k − t_{k−1}`. The number
/// of Monte-Carlo particles at step `k` is `schedule.particles[k]`; the
/// estimator's own `particles` field is ignored here.
pub fn run_reverse_diffusion(
    pot: &dyn Potential,
    schedule: &Schedule,
    estimator: &EstimatorSpec,
    num_chains: usize,
    seed: u64,
) -> Result<SampleRun> {
    schedule.validate()?;
    estimator.validate()?;
    if num_chains == 0 {
        return Err(Error::Config("num_chains must be ≥ 1".into()));
    }
    let started = Instant::now();
    let counted = Counted::new(pot);
    let d = pot.dim();
    let levels: Vec<PreparedLevel> = schedule
        .grid
        .iter()
        .map(|&t| estimator.prepare(&counted, t))
        .collect::<Result<_>>()?;

    let chains: Vec<Vec<f64>> = (0..num_chains)
        .into_par_iter()
        .map(|chain| {
            let mut init = stream(seed, &[purpose::CHAIN_INIT, chain as u64]);
            let mut y: Vec<f64> = (0..d).map(|_| init.sample(StandardNormal)).collect();
            let mut s = vec![0.0; d];
            let mut xi = vec![0.0; d];
            let mut state = EstimatorState::default();
            for k in (0..schedule.steps).rev() {
                let mut rng = stream(seed, &[purpose::REVERSE_STEP, chain as u64, k as u64 + 1]);
                let particles = schedule.particles[k] as usize;
                estimator
                    .estimate(
                        &counted, &levels[k], &y, particles, &mut rng, &mut state, &mut s,
                    )
                    .map_err(|e| Error::Chain {
                        chain,
                        step: k + 1,
                        source: Box::new(e),
                    })?;
                xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let h = schedule.grid[k] - if k == 0 { 0.0 } else { schedule.grid[k - 1] };
                reverse_step_in_place(&mut y, &s, h, &xi);
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;

    let tally = counted.tally();
    Ok(SampleRun {
        samples: SampleMatrix::from_flat(d, chains.concat())?,
        seed,
        potential_queries: tally.values,
        gradient_queries: tally.gradients,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Reverse diffusion with scores from inner ULA chains on the auxiliary
/// distribution.
pub fn run_rdmc(
    pot: &dyn Potential,
    schedule: &Schedule,
    inner: &EstimatorSpec,
    num_chains: usize,
    seed: u64,
) -> Result<SampleRun> {
    if inner.kind != EstimatorKind::AuxiliaryUla {
        return Err(Error::Config(format!(
            "RDMC needs an auxiliary_ula estimator, got {}",
            inner.kind.name()
        )));
    }
    run_reverse_diffusion(pot, schedule, inner, num_chains, seed)
}

/// Initial law for ULA chains.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UlaInit {
    #[default]
    StandardNormal,
    Point(Vec<f64>),
    Gaussian {
        mean: Vec<f64>,
        std: f64,
    },
}

/// Unadjusted Langevin: `x' = x − h ∇V(x) + √(2h) ξ`, independent chains,
/// final states returned.
pub fn run_ula(
    pot: &dyn Potential,
    step_size: f64,
    steps: usize,
    num_chains: usize,
    init: &UlaInit,
    seed: u64,
) -> Result<SampleRun> {
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::Config(format!(
            "ULA step size must be > 0, got {step_size}"
        )));
    }
    if num_chains == 0 {
        return Err(Error::Config("num_chains must be ≥ 1".into()));
    }
    if !pot.has_gradient() {
        return Err(Error::MissingGradient);
    }
    let d = pot.dim();
    match init {
        UlaInit::Point(p) | UlaInit::Gaussian { mean: p, .. } if p.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            })
        }
        _ => {}
    }
    let started = Instant::now();
    let counted = Counted::new(pot);
    let noise = (2.0 * step_size).sqrt();
    let chains: Vec<Vec<f64>> = (0..num_chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = stream(seed, &[purpose::ULA_CHAIN, chain as u64]);
            let mut x: Vec<f64> = match init {
                UlaInit::StandardNormal => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
                UlaInit::Point(p) => p.clone(),
                UlaInit::Gaussian { mean, std } => mean
                    .iter()
                    .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            };
            let mut g = vec![0.0; d];
            for _ in 0..steps {
                counted.gradient(&x, &mut g)?;
                for (xi, gi) in x.iter_mut().zip(&g) {
                    let e: f64 = rng.sample(StandardNormal);
                    *xi += -step_size * gi + noise * e;
                }
            }
            Ok(x)
        })
        .collect::<Result<_>>()?;
    let tally = counted.tally();
    Ok(SampleRun {
        samples: SampleMatrix::from_flat(d, chains.concat())?,
        seed,
        potential_queries: tally.values,
        gradient_queries: tally.gradients,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
