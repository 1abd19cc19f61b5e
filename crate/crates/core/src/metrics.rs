//! Sample-quality metrics: empirical W2, score MSE, mode coverage, second moment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, EstimatorState};
use crate::mixture::GaussianMixture;
use crate::rng::{purpose, stream};
use crate::samples::SampleMatrix;

/// Largest sample size for which [`W2Method::Auto`] uses the exact solver.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    /// Optimal permutation (requires equal sizes).
    ExactAssignment,
    /// Log-domain entropic transport. `reg` defaults to `0.01 ×` the median
    /// pairwise cost.
    Sinkhorn { reg: Option<f64>, max_iter: usize },
    /// Exact up to [`EXACT_ASSIGNMENT_LIMIT`] equal-size points, Sinkhorn otherwise.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Kind {
    ExactAssignment,
    Sinkhorn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Result {
    pub distance: f64,
    pub method: W2Kind,
    pub iterations: Option<usize>,
    pub dual_gap: Option<f64>,
}

fn cost_matrix(a: &SampleMatrix, b: &SampleMatrix) -> Vec<f64> {
    let m = b.len();
    let mut cost = vec![0.0; a.len() * m];
    cost.par_chunks_mut(m.max(1))
        .zip(a.rows().collect::<Vec<_>>())
        .for_each(|(row, x)| {
            for (c, y) in row.iter_mut().zip(b.rows()) {
                *c = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            }
        });
    cost
}

/// Empirical W2 between uniform measures on the rows of `a` and `b`, with
/// squared Euclidean ground cost.
pub fn wasserstein2(a: &SampleMatrix, b: &SampleMatrix, method: W2Method) -> Result<W2Result> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config(
            "W2 needs at least one point on each side".into(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::NonFinite(
            "W2 input contains non-finite coordinates".into(),
        ));
    }
    let method = match method {
        W2Method::Auto if a.len() == b.len() && a.len() <= EXACT_ASSIGNMENT_LIMIT => {
            W2Method::ExactAssignment
        }
        W2Method::Auto => W2Method::Sinkhorn {
            reg: None,
            max_iter: 100_000,
        },
        m => m,
    };
    let cost = cost_matrix(a, b);
    match method {
        W2Method::ExactAssignment => {
            if a.len() != b.len() {
                return Err(Error::Config(format!(
                    "exact assignment needs equal sizes, got {} and {}",
                    a.len(),
                    b.len()
                )));
            }
            let n = a.len();
            let perm = assignment::solve(&cost, n);
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            Ok(W2Result {
                distance: (total / n as f64).max(0.0).sqrt(),
                method: W2Kind::ExactAssignment,
                iterations: None,
                dual_gap: None,
            })
        }
        W2Method::Sinkhorn { reg, max_iter } => sinkhorn(&cost, a.len(), b.len(), reg, max_iter),
        W2Method::Auto => unreachable!(),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

const MARGINAL_TOL: f64 = 1e-8;

fn sinkhorn(
    cost: &[f64],
    n: usize,
    m: usize,
    reg: Option<f64>,
    max_iter: usize,
) -> Result<W2Result> {
    let eps = match reg {
        Some(r) if r > 0.0 => r,
        Some(r) => {
            return Err(Error::Config(format!(
                "Sinkhorn regularisation must be > 0, got {r}"
            )))
        }
        None => {
            let med = median(cost);
            if med > 0.0 {
                0.01 * med
            } else {
                1e-12
            }
        }
    };
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        for (i, fi) in f.iter_mut().enumerate() {
            let row = &cost[i * m..(i + 1) * m];
            *fi = -eps * log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (gj - c) / eps + log_b));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = -eps * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps + log_a));
        }
        // After the g-update column marginals are exact; check the rows.
        violation = (0..n)
            .map(|i| {
                let row = &cost[i * m..(i + 1) * m];
                let s: f64 = row
                    .iter()
                    .zip(&g)
                    .map(|(c, gj)| ((f[i] + gj - c) / eps + log_a + log_b).exp())
                    .sum();
                (s - 1.0 / n as f64).abs()
            })
            .sum();
        if violation < MARGINAL_TOL {
            break;
        }
    }
    if !violation.is_finite() {
        return Err(Error::NonFinite("Sinkhorn iterations diverged".into()));
    }
    let mut primal = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost[i * m + j];
            primal += ((f[i] + g[j] - c) / eps + log_a + log_b).exp() * c;
        }
    }
    let dual: f64 = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    Ok(W2Result {
        distance: primal.max(0.0).sqrt(),
        method: W2Kind::Sinkhorn,
        iterations: Some(iterations),
        dual_gap: Some(primal - dual),
    })
}

/// Mean and standard error of a score-estimator MSE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseEstimate {
    pub mse: f64,
    /// Standard error across replications.
    pub stderr: f64,
}

/// Mean over points and replications of `‖ŝ(z) − ∇log p_t(z)‖²`, the exact
/// score coming from the noised mixture.
pub fn score_mse(
    estimator: &EstimatorSpec,
    gm: &GaussianMixture,
    t: f64,
    eval_points: &SampleMatrix,
    replications: usize,
    seed: u64,
) -> Result<MseEstimate> {
    if replications == 0 || eval_points.is_empty() {
        return Err(Error::Config(
            "score_mse needs ≥ 1 replication and ≥ 1 point".into(),
        ));
    }
    if eval_points.dim() != gm.dim() {
        return Err(Error::DimensionMismatch {
            expected: gm.dim(),
            got: eval_points.dim(),
        });
    }
    let prepared = estimator.prepare(gm, t)?;
    let exact = gm.noised(t)?;
    let truth: Vec<Vec<f64>> = eval_points
        .rows()
        .map(|z| exact.score(z))
        .collect::<Result<_>>()?;
    let d = gm.dim();
    let per_rep: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut out = vec![0.0; d];
            let mut total = 0.0;
            for (p, (z, s)) in eval_points.rows().zip(&truth).enumerate() {
                let mut rng = stream(seed, &[purpose::SCORE_MSE, r as u64, p as u64]);
                let mut state = EstimatorState::default();
                estimator.estimate(
                    gm,
                    &prepared,
                    z,
                    estimator.particles,
                    &mut rng,
                    &mut state,
                    &mut out,
                )?;
                total += out
                    .iter()
                    .zip(s)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            Ok(total / eval_points.len() as f64)
        })
        .collect::<Result<_>>()?;
    let k = per_rep.len() as f64;
    let mse = per_rep.iter().sum::<f64>() / k;
    let stderr = if per_rep.len() > 1 {
        (per_rep.iter().map(|v| (v - mse).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok(MseEstimate { mse, stderr })
}

/// Share of samples in each mode's ball and outside all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub fractions: Vec<f64>,
    pub stray: f64,
}

impl ModeCoverage {
    /// Number of modes holding at least `min_fraction` of the samples.
    pub fn modes_covered(&self, min_fraction: f64) -> usize {
        self.fractions
            .iter()
            .filter(|&&f| f >= min_fraction)
            .count()
    }
}

/// Buckets each sample by its nearest centre; samples farther than `radius`
/// from that centre are stray.
pub fn mode_coverage(
    samples: &SampleMatrix,
    centers: &[Vec<f64>],
    radius: f64,
) -> Result<ModeCoverage> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("radius must be > 0, got {radius}")));
    }
    if centers.is_empty() || samples.is_empty() {
        return Err(Error::Config(
            "mode coverage needs centres and samples".into(),
        ));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != samples.dim()) {
        return Err(Error::DimensionMismatch {
            expected: samples.dim(),
            got: c.len(),
        });
    }
    let mut counts = vec![0usize; centers.len()];
    let mut stray = 0usize;
    let r2 = radius * radius;
    for x in samples.rows() {
        let (best, dist2) = centers
            .iter()
            .map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("centres are non-empty");
        if dist2 <= r2 {
            counts[best] += 1;
        } else {
            stray += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(ModeCoverage {
        fractions: counts.iter().map(|&c| c as f64 / n).collect(),
        stray: stray as f64 / n,
    })
}

/// Empirical second moment `mean ‖x‖²`.
pub fn moment2(samples: &SampleMatrix) -> f64 {
    samples
        .rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / samples.len() as f64
}
