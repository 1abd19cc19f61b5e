//! Gaussian mixtures with exact log-density, score, noising and structural
//! constants.
//!
//! All evaluations go through log space: per-component log terms are combined
//! with a max-shifted log-sum-exp, so densities far in the tails (or mixtures
//! with widely separated modes) never underflow.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_dim, Error, Result};
use crate::potential::Potential;
use crate::rng::{purpose, stream};
use crate::samples::SampleMatrix;

type Scratch = SmallVec<[f64; 8]>;
type Terms = SmallVec<[f64; 32]>;

const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Log terms this far below the largest one are below half an ulp of the
/// log-sum-exp and are skipped (deep-underflow `exp` calls are slow).
const NEGLIGIBLE_LOG_GAP: f64 = -40.0;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major `d × d`.
    cov: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    /// Reciprocals of the factor's diagonal.
    inv_diag: Vec<f64>,
    /// The covariance is diagonal, so the factor is too.
    diagonal: bool,
    /// `log w − (d/2) log 2π − ½ log det Σ`.
    log_norm: f64,
}

impl Component {
    fn new(index: usize, weight: f64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidMixture(format!(
                        "covariance {index} is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if cov.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMixture(format!(
                "component {index} has non-finite parameters"
            )));
        }
        let m = DMatrix::from_row_slice(d, d, &cov);
        let chol = m
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { component: index })?;
        let l = chol.l();
        let mut chol_rm = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol_rm[i * d + j] = l[(i, j)];
            }
            let diag = l[(i, i)];
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { component: index });
            }
            log_det += 2.0 * diag.ln();
        }
        let log_norm = weight.ln() - 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * log_det;
        let inv_diag = (0..d).map(|i| 1.0 / chol_rm[i * d + i]).collect();
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || cov[i * d + j] == 0.0));
        Ok(Self {
            weight,
            mean,
            cov,
            chol: chol_rm,
            inv_diag,
            diagonal,
            log_norm,
        })
    }

    /// Solves `Lᵀ v = u` in place.
    #[inline]
    fn backward_solve(&self, v: &mut [f64]) {
        let d = v.len();
        if self.diagonal {
            for (vi, inv) in v.iter_mut().zip(&self.inv_diag) {
                *vi *= inv;
            }
            return;
        }
        for i in (0..d).rev() {
            let mut acc = v[i];
            for (j, vj) in v.iter().enumerate().skip(i + 1) {
                acc -= self.chol[j * d + i] * vj;
            }
            v[i] = acc * self.inv_diag[i];
        }
    }

    /// Log of `w_i N(x; μ_i, Σ_i)`; leaves the whitened residual in `u`.
    #[inline(always)]
    fn log_term(&self, x: &[f64], u: &mut [f64]) -> f64 {
        let d = x.len();
        let mean = &self.mean[..d];
        let inv = &self.inv_diag[..d];
        let u = &mut u[..d];
        let mut quad = 0.0;
        if self.diagonal {
            for i in 0..d {
                let v = (x[i] - mean[i]) * inv[i];
                u[i] = v;
                quad += v * v;
            }
        } else {
            let chol = &self.chol[..d * d];
            for i in 0..d {
                let row = &chol[i * d..i * d + i];
                let mut acc = x[i] - mean[i];
                for (l, uj) in row.iter().zip(u.iter()) {
                    acc -= l * uj;
                }
                let v = acc * inv[i];
                u[i] = v;
                quad += v * v;
            }
        }
        self.log_norm - 0.5 * quad
    }
}

/// Finite mixture `Σ w_i N(μ_i, Σ_i)` over `R^d`.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

/// Structural constants of a mixture: semi-log-convexity `∇²V ⪯ β I` and
/// dissipativity `⟨∇V(x), x⟩ ≥ a‖x‖² − b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureConstants {
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub r_max: f64,
}

impl GaussianMixture {
    /// Builds a mixture from weights, means and full row-major covariances.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let p = weights.len();
        if p == 0 {
            return Err(Error::InvalidMixture("mixture has no components".into()));
        }
        if means.len() != p || covariances.len() != p {
            return Err(Error::InvalidMixture(format!(
                "{p} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMixture(format!(
                "weight {w} is not strictly positive"
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMixture("dimension must be positive".into()));
        }
        let mut components = Vec::with_capacity(p);
        for (i, ((w, mean), cov)) in weights.into_iter().zip(means).zip(covariances).enumerate() {
            check_dim(dim, mean.len())?;
            if cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
                return Err(Error::InvalidMixture(format!(
                    "covariance {i} is not {dim}×{dim}"
                )));
            }
            let flat: Vec<f64> = cov.into_iter().flatten().collect();
            components.push(Component::new(i, w, mean, flat)?);
        }
        Ok(Self { dim, components })
    }

    /// Mixture with isotropic components `N(μ_i, σ_i² I)`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: &[f64]) -> Result<Self> {
        let dim = means.first().map_or(0, Vec::len);
        let covs = variances.iter().map(|&v| scaled_identity(dim, v)).collect();
        Self::new(weights, means, covs)
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::new(
            vec![1.0],
            vec![vec![0.0; dim]],
            vec![scaled_identity(dim, 1.0)],
        )
        .expect("standard normal is a valid mixture")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.components[i].mean
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// Covariance of component `i`, row-major.
    pub fn covariance(&self, i: usize) -> &[f64] {
        &self.components[i].cov
    }

    pub fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.dim;
        self.components
            .iter()
            .map(|c| c.cov.chunks(d).map(<[f64]>::to_vec).collect())
            .collect()
    }

    fn log_terms(&self, x: &[f64], terms: &mut Terms, u: &mut Scratch) -> f64 {
        terms.clear();
        let mut max = f64::NEG_INFINITY;
        for c in &self.components {
            let t = c.log_term(x, u);
            max = max.max(t);
            terms.push(t);
        }
        if !max.is_finite() {
            return max;
        }
        let s: f64 = terms
            .iter()
            .map(|t| t - max)
            .filter(|&gap| gap > NEGLIGIBLE_LOG_GAP)
            .map(f64::exp)
            .sum();
        max + s.ln()
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut terms = Terms::new();
        let mut u: Scratch = SmallVec::from_elem(0.0, self.dim);
        self.log_terms(x, &mut terms, &mut u)
    }

    /// Normalised `log μ(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    /// Posterior component probabilities `γ_i(x)`; they sum to one up to rounding.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut terms = Terms::new();
        let mut u: Scratch = SmallVec::from_elem(0.0, self.dim);
        let lse = self.log_terms(x, &mut terms, &mut u);
        let mut g: Vec<f64> = terms.iter().map(|t| (t - lse).exp()).collect();
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
        Ok(g)
    }

    /// Writes `∇ log μ(x)` into `out` and returns `log μ(x)`.
    fn score_unchecked(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut terms = Terms::new();
        let mut u: Scratch = SmallVec::from_elem(0.0, d);
        let lse = self.log_terms(x, &mut terms, &mut u);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, t) in self.components.iter().zip(&terms) {
            let gap = t - lse;
            if gap <= NEGLIGIBLE_LOG_GAP {
                continue;
            }
            let gamma = gap.exp();
            c.log_term(x, &mut u);
            c.backward_solve(&mut u);
            for (o, v) in out.iter_mut().zip(&u) {
                *o -= gamma * v;
            }
        }
        lse
    }

    /// `∇ log μ(x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.score_unchecked(x, &mut out);
        Ok(out)
    }

    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, out.len())?;
        self.score_unchecked(x, out);
        Ok(())
    }

    /// Law at time `t` of the OU process `dX = −X dt + √2 dB` started from
    /// this mixture: every component maps to
    /// `N(e^{−t} μ_i, e^{−2t} Σ_i + (1 − e^{−2t}) I)` with unchanged weight.
    pub fn noised(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Config(format!("noising time must be ≥ 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        let d = self.dim;
        let decay = (-t).exp();
        let lambda = (-2.0 * t).exp();
        let fill = -(-2.0 * t).exp_m1();
        let mut components = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            let mean = c.mean.iter().map(|m| decay * m).collect();
            let mut cov: Vec<f64> = c.cov.iter().map(|v| lambda * v).collect();
            for k in 0..d {
                cov[k * d + k] += fill;
            }
            components.push(Component::new(i, c.weight, mean, cov)?);
        }
        Ok(Self { dim: d, components })
    }

    /// Semi-log-convexity and dissipativity constants from the extreme
    /// covariance eigenvalues and the largest mean norm.
    pub fn constants(&self) -> MixtureConstants {
        let d = self.dim;
        let mut lambda_min = f64::INFINITY;
        let mut lambda_max = 0.0_f64;
        let mut r_max = 0.0_f64;
        for c in &self.components {
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &c.cov)).eigenvalues;
            lambda_min = lambda_min.min(eig.min());
            lambda_max = lambda_max.max(eig.max());
            r_max = r_max.max(c.mean.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        MixtureConstants {
            beta: 1.0 / lambda_min,
            a: 1.0 / (2.0 * lambda_max),
            b: lambda_max * (r_max / lambda_min).powi(2),
            lambda_min,
            lambda_max,
            r_max,
        }
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleMatrix> {
        Ok(self.sample_labeled(n, seed)?.0)
    }

    /// Like [`GaussianMixture::sample`], also returning the component index of
    /// every draw.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> Result<(SampleMatrix, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Config("sample count must be ≥ 1".into()));
        }
        let d = self.dim;
        let mut rng = stream(seed, &[purpose::MIXTURE_SAMPLE]);
        let mut cumulative = Vec::with_capacity(self.components.len());
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            cumulative.push(acc);
        }
        let mut out = SampleMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut xi = vec![0.0; d];
        for row in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.components.len() - 1);
            let c = &self.components[k];
            xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let dst = out.row_mut(row);
            for (i, v) in dst.iter_mut().enumerate() {
                let lx: f64 = (0..=i).map(|j| c.chol[i * d + j] * xi[j]).sum();
                *v = c.mean[i] + lx;
            }
            labels.push(k);
        }
        Ok((out, labels))
    }

    /// Parses the JSON mixture schema.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: MixtureFile = serde_json::from_str(s)?;
        file.into_mixture()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> MixtureFile {
        MixtureFile {
            weights: self.weights(),
            means: self.means(),
            covariances: self
                .covariances()
                .into_iter()
                .map(CovarianceSpec::Full)
                .collect(),
        }
    }
}

impl Potential for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        -self.log_density_unchecked(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.score_unchecked(x, out);
        out.iter_mut().for_each(|v| *v = -*v);
        Ok(())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn mixture(&self) -> Option<&GaussianMixture> {
        Some(self)
    }
}

fn scaled_identity(dim: usize, v: f64) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { v } else { 0.0 }).collect())
        .collect()
}

/// A covariance as written in a mixture file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceSpec {
    /// `σ² I`.
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovarianceSpec {
    fn to_full(&self, dim: usize, index: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Scalar(v) => Ok(scaled_identity(dim, *v)),
            Self::Diagonal(diag) => {
                if diag.len() != dim {
                    return Err(Error::InvalidMixture(format!(
                        "diagonal covariance {index} has length {}, expected {dim}",
                        diag.len()
                    )));
                }
                Ok((0..dim)
                    .map(|i| {
                        (0..dim)
                            .map(|j| if i == j { diag[i] } else { 0.0 })
                            .collect()
                    })
                    .collect())
            }
            Self::Full(m) => Ok(m.clone()),
        }
    }
}

/// On-disk mixture definition:
/// `{"weights": [...], "means": [[...]], "covariances": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<CovarianceSpec>,
}

impl MixtureFile {
    pub fn into_mixture(self) -> Result<GaussianMixture> {
        let dim = self
            .means
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidMixture("mixture has no means".into()))?;
        let covs = self
            .covariances
            .iter()
            .enumerate()
            .map(|(i, c)| c.to_full(dim, i))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(self.weights, self.means, covs)
    }
}
