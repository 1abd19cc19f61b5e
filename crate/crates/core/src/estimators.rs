//! Monte-Carlo estimators of the intermediate scores `∇ log p_t` of the OU
//! forward process, plus the exact mixture oracle.
//!
//! With `λ_t = e^{−2t}` the noised law is `p_t = Law(√λ_t X₀ + √(1−λ_t) Z)`.
//! The estimators here are ratios of weighted sample averages. Weights of the
//! form `exp(−V_i)` are always normalised against `min_j V_j` before
//! exponentiation; the ratio is invariant to that shift and raw exponentials
//! underflow for well separated targets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_dim, Error, Result};
use crate::mixture::GaussianMixture;
use crate::potential::Potential;
use crate::rng::StreamRng;

type Scratch = SmallVec<[f64; 8]>;

/// Smallest forward time at which estimators accept a query by default.
pub const DEFAULT_T_FLOOR: f64 = 1e-4;

/// A forward time `t` together with `λ_t = e^{−2t}` and `1 − λ_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevel {
    t: f64,
    lambda: f64,
    one_minus_lambda: f64,
}

impl NoiseLevel {
    pub fn new(t: f64) -> Result<Self> {
        Self::with_floor(t, DEFAULT_T_FLOOR)
    }

    /// Refuses `t < floor`: the estimators divide by `1 − e^{−2t}`.
    pub fn with_floor(t: f64, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::Config(format!("t_floor must be > 0, got {floor}")));
        }
        if !(t >= floor) || !t.is_finite() {
            return Err(Error::BelowTimeFloor { t, floor });
        }
        Ok(Self {
            t,
            lambda: (-2.0 * t).exp(),
            one_minus_lambda: -(-2.0 * t).exp_m1(),
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn one_minus_lambda(&self) -> f64 {
        self.one_minus_lambda
    }

    pub fn sqrt_lambda(&self) -> f64 {
        (-self.t).exp()
    }
}

/// Running `Σ w_i v_i / Σ w_i` with `w_i = exp(m − V_i)`, `m = min_j V_j`
/// maintained online so a single pass suffices.
struct SoftmaxMean {
    min_v: f64,
    sum_w: f64,
    sum: Scratch,
}

impl SoftmaxMean {
    fn new(dim: usize) -> Self {
        Self {
            min_v: f64::INFINITY,
            sum_w: 0.0,
            sum: SmallVec::from_elem(0.0, dim),
        }
    }

    fn push(&mut self, v: f64, vec: &[f64]) -> Result<()> {
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::NonFinite(format!("potential returned {v}")));
        }
        if v == f64::INFINITY {
            return Ok(());
        }
        if v < self.min_v {
            let scale = if self.min_v.is_finite() {
                (v - self.min_v).exp()
            } else {
                0.0
            };
            self.sum_w *= scale;
            self.sum.iter_mut().for_each(|s| *s *= scale);
            self.min_v = v;
        }
        let w = (self.min_v - v).exp();
        self.sum_w += w;
        for (s, x) in self.sum.iter_mut().zip(vec) {
            *s += w * x;
        }
        Ok(())
    }

    fn finish(&self, factor: f64, out: &mut [f64]) -> Result<()> {
        if !(self.sum_w > 0.0) {
            return Err(Error::NonFinite(
                "potential is +inf at every draw; weights vanish".into(),
            ));
        }
        for (o, s) in out.iter_mut().zip(&self.sum) {
            *o = factor * s / self.sum_w;
        }
        Ok(())
    }
}

/// Self-normalised denoising-identity estimator:
///
/// `ŝ(z) = −1/(1−λ_t) · Σ y_i e^{−V(e^t(z−y_i))} / Σ e^{−V(e^t(z−y_i))}`,
/// `y_i ~ N(0, (1−λ_t) I)` i.i.d. Consumes exactly `n` value queries.
pub fn self_normalized_score(
    pot: &dyn Potential,
    level: &NoiseLevel,
    z: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    self_normalized_score_into(pot, level, z, n, rng, &mut out)?;
    Ok(out)
}

pub fn self_normalized_score_into(
    pot: &dyn Potential,
    level: &NoiseLevel,
    z: &[f64],
    n: usize,
    rng: &mut StreamRng,
    out: &mut [f64],
) -> Result<()> {
    let d = pot.dim();
    check_dim(d, z.len())?;
    check_dim(d, out.len())?;
    if n == 0 {
        return Err(Error::Config("particle count must be ≥ 1".into()));
    }
    let sd = level.one_minus_lambda().sqrt();
    let inv_scale = 1.0 / level.sqrt_lambda();
    let mut y: Scratch = SmallVec::from_elem(0.0, d);
    let mut arg: Scratch = SmallVec::from_elem(0.0, d);
    let mut acc = SoftmaxMean::new(d);
    for _ in 0..n {
        for ((yi, ai), zi) in y.iter_mut().zip(arg.iter_mut()).zip(z) {
            *yi = sd * rng.sample::<f64, _>(StandardNormal);
            *ai = inv_scale * (zi - *yi);
        }
        acc.push(pot.value(&arg), &y)?;
    }
    acc.finish(-1.0 / level.one_minus_lambda(), out)
}

/// The self-normalised estimator evaluated on caller-supplied draws
/// `y_i ~ N(0, (1−λ_t) I)`, one per row.
pub fn self_normalized_from_draws(
    pot: &dyn Potential,
    level: &NoiseLevel,
    z: &[f64],
    draws: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = pot.dim();
    check_dim(d, z.len())?;
    if draws.is_empty() {
        return Err(Error::Config("particle count must be ≥ 1".into()));
    }
    let inv_scale = 1.0 / level.sqrt_lambda();
    let mut arg = vec![0.0; d];
    let mut acc = SoftmaxMean::new(d);
    for y in draws {
        check_dim(d, y.len())?;
        for ((ai, zi), yi) in arg.iter_mut().zip(z).zip(y) {
            *ai = inv_scale * (zi - yi);
        }
        acc.push(pot.value(&arg), y)?;
    }
    let mut out = vec![0.0; d];
    acc.finish(-1.0 / level.one_minus_lambda(), &mut out)?;
    Ok(out)
}

/// Self-normalised target-score-identity estimator with Gaussian draws:
///
/// `ŝ(z) = (1/√λ_t) Σ w_i ∇log μ(a_i) / Σ w_i`, `a_i = (z − √(1−λ_t) y_i)/√λ_t`,
/// `w_i = μ(a_i)`, `y_i ~ N(0, I)`. Consumes `n` value and `n` gradient queries.
pub fn tsi_gaussian_score(
    pot: &dyn Potential,
    level: &NoiseLevel,
    z: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    tsi_gaussian_score_into(pot, level, z, n, rng, &mut out)?;
    Ok(out)
}

pub fn tsi_gaussian_score_into(
    pot: &dyn Potential,
    level: &NoiseLevel,
    z: &[f64],
    n: usize,
    rng: &mut StreamRng,
    out: &mut [f64],
) -> Result<()> {
    let d = pot.dim();
    check_dim(d, z.len())?;
    check_dim(d, out.len())?;
    if !pot.has_gradient() {
        return Err(Error::MissingGradient);
    }
    if n == 0 {
        return Err(Error::Config("particle count must be ≥ 1".into()));
    }
    let sd = level.one_minus_lambda().sqrt();
    let inv_scale = 1.0 / level.sqrt_lambda();
    let mut arg: Scratch = SmallVec::from_elem(0.0, d);
    let mut grad: Scratch = SmallVec::from_elem(0.0, d);
    let mut acc = SoftmaxMean::new(d);
    for _ in 0..n {
        for (ai, zi) in arg.iter_mut().zip(z) {
            let yi: f64 = rng.sample(StandardNormal);
            *ai = inv_scale * (zi - sd * yi);
        }
        let v = pot.value(&arg);
        pot.gradient(&arg, &mut grad)?;
        grad.iter_mut().for_each(|g| *g = -*g);
        acc.push(v, &grad)?;
    }
    acc.finish(inv_scale, out)
}

/// Where inner auxiliary chains start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerInit {
    /// `N(x, (1−λ_t) I)`, the Gaussian factor of the auxiliary density.
    #[default]
    Prior,
    /// `N(0, I)` in the noised coordinates.
    Standard,
    /// `N(0, I)` in clean coordinates, i.e. `y = √λ_t ξ`.
    CleanStandard,
}

/// Inner step size as a function of the noise level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStepRule {
    /// Use `step_size` as is.
    #[default]
    Fixed,
    /// Use `step_size · λ_t`. This is ULA with step `step_size` on the clean
    /// variable `u = y/√λ_t`, whose conditioning does not blow up as `t` grows.
    NoiseScaled,
}

/// Parameters of the inner ULA chains for the auxiliary-distribution estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerUla {
    pub steps: usize,
    pub step_size: f64,
    #[serde(default)]
    pub init: InnerInit,
    #[serde(default)]
    pub step_rule: InnerStepRule,
    /// Start each call from the particles left by the previous call on the
    /// same chain instead of a fresh initialisation.
    #[serde(default)]
    pub warm_start: bool,
}

impl InnerUla {
    pub fn new(steps: usize, step_size: f64) -> Self {
        Self {
            steps,
            step_size,
            init: InnerInit::Prior,
            step_rule: InnerStepRule::Fixed,
            warm_start: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "inner step size must be > 0, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Per-chain state carried between estimator calls (warm-started inner chains).
#[derive(Clone, Debug, Default)]
pub struct EstimatorState {
    /// Inner particles in clean coordinates `u = y/√λ`, row-major.
    aux: Option<Vec<f64>>,
}

/// Identity-3 estimator: `∇ log p_t(x) = (E[y|x] − x)/(1−λ_t)` with
/// `y|x ∝ μ(y/√λ_t) N(y; x, (1−λ_t) I)` sampled by `particles` ULA chains on
/// `U(y) = V(y/√λ_t) + ‖y−x‖²/(2(1−λ_t))`. Consumes exactly
/// `particles · inner.steps` gradient queries.
pub fn auxiliary_ula_score(
    pot: &dyn Potential,
    level: &NoiseLevel,
    x: &[f64],
    particles: usize,
    inner: &InnerUla,
    rng: &mut StreamRng,
    state: Option<&mut EstimatorState>,
) -> Result<Vec<f64>> {
    let d = pot.dim();
    check_dim(d, x.len())?;
    inner.validate()?;
    if !pot.has_gradient() {
        return Err(Error::MissingGradient);
    }
    if particles == 0 {
        return Err(Error::Config("particle count must be ≥ 1".into()));
    }
    let sqrt_lambda = level.sqrt_lambda();
    let oml = level.one_minus_lambda();
    let h = match inner.step_rule {
        InnerStepRule::Fixed => inner.step_size,
        InnerStepRule::NoiseScaled => inner.step_size * level.lambda(),
    };
    let noise = (2.0 * h).sqrt();

    let warm = match (&state, inner.warm_start) {
        (Some(s), true) => s.aux.as_ref().filter(|a| a.len() == particles * d),
        _ => None,
    };
    let mut ys = vec![0.0; particles * d];
    match warm {
        Some(u) => {
            for (y, ui) in ys.iter_mut().zip(u) {
                *y = sqrt_lambda * ui;
            }
        }
        None => {
            for row in ys.chunks_exact_mut(d) {
                for (y, xi) in row.iter_mut().zip(x) {
                    let xi_n: f64 = rng.sample(StandardNormal);
                    *y = match inner.init {
                        InnerInit::Prior => xi + oml.sqrt() * xi_n,
                        InnerInit::Standard => xi_n,
                        InnerInit::CleanStandard => sqrt_lambda * xi_n,
                    };
                }
            }
        }
    }

    let mut u: Scratch = SmallVec::from_elem(0.0, d);
    let mut grad: Scratch = SmallVec::from_elem(0.0, d);
    for row in ys.chunks_exact_mut(d) {
        for _ in 0..inner.steps {
            for (ui, y) in u.iter_mut().zip(row.iter()) {
                *ui = y / sqrt_lambda;
            }
            pot.gradient(&u, &mut grad)?;
            for ((y, g), xi) in row.iter_mut().zip(&grad).zip(x) {
                let drift = g / sqrt_lambda + (*y - xi) / oml;
                let e: f64 = rng.sample(StandardNormal);
                *y += -h * drift + noise * e;
            }
        }
    }

    let mut mean = vec![0.0; d];
    for row in ys.chunks_exact(d) {
        for (m, y) in mean.iter_mut().zip(row) {
            *m += y;
        }
    }
    let out: Vec<f64> = mean
        .iter()
        .zip(x)
        .map(|(m, xi)| (m / particles as f64 - xi) / oml)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "inner ULA diverged at t = {} (step {h})",
            level.t()
        )));
    }
    if let Some(s) = state {
        if inner.warm_start {
            ys.iter_mut().for_each(|y| *y /= sqrt_lambda);
            s.aux = Some(ys);
        }
    }
    Ok(out)
}

/// Exact `∇ log p_t(z)` for a mixture target (Tweedie: the noised law is
/// itself a mixture). Makes no potential queries.
pub fn exact_oracle_score(gm: &GaussianMixture, level: &NoiseLevel, z: &[f64]) -> Result<Vec<f64>> {
    gm.noised(level.t())?.score(z)
}

/// Which score identity an estimator uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[serde(rename = "self_normalized_dsi")]
    SelfNormalized,
    TsiGaussian,
    AuxiliaryUla,
    ExactOracle,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SelfNormalized => "self_normalized_dsi",
            Self::TsiGaussian => "tsi_gaussian",
            Self::AuxiliaryUla => "auxiliary_ula",
            Self::ExactOracle => "exact_oracle",
        }
    }
}

fn default_t_floor() -> f64 {
    DEFAULT_T_FLOOR
}

fn default_particles() -> usize {
    1
}

/// A fully specified score estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerUla>,
    #[serde(default = "default_t_floor")]
    pub t_floor: f64,
}

impl EstimatorSpec {
    fn with_kind(kind: EstimatorKind, particles: usize) -> Self {
        Self {
            kind,
            particles,
            inner: None,
            t_floor: DEFAULT_T_FLOOR,
        }
    }

    pub fn self_normalized(particles: usize) -> Self {
        Self::with_kind(EstimatorKind::SelfNormalized, particles)
    }

    pub fn tsi_gaussian(particles: usize) -> Self {
        Self::with_kind(EstimatorKind::TsiGaussian, particles)
    }

    pub fn auxiliary_ula(particles: usize, inner: InnerUla) -> Self {
        Self {
            inner: Some(inner),
            ..Self::with_kind(EstimatorKind::AuxiliaryUla, particles)
        }
    }

    pub fn exact_oracle() -> Self {
        Self::with_kind(EstimatorKind::ExactOracle, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("particles must be ≥ 1".into()));
        }
        if !(self.t_floor > 0.0) {
            return Err(Error::Config(format!(
                "t_floor must be > 0, got {}",
                self.t_floor
            )));
        }
        match (self.kind, &self.inner) {
            (EstimatorKind::AuxiliaryUla, Some(inner)) => inner.validate(),
            (EstimatorKind::AuxiliaryUla, None) => Err(Error::Config(
                "auxiliary_ula requires inner ULA parameters".into(),
            )),
            (_, Some(_)) => Err(Error::Config(format!(
                "inner ULA parameters are only valid for auxiliary_ula, not {}",
                self.kind.name()
            ))),
            (_, None) => Ok(()),
        }
    }

    /// Checks the estimator against a target and precomputes what it needs
    /// at forward time `t`.
    pub fn prepare(&self, pot: &dyn Potential, t: f64) -> Result<PreparedLevel> {
        self.validate()?;
        let level = NoiseLevel::with_floor(t, self.t_floor)?;
        let noised = match self.kind {
            EstimatorKind::ExactOracle => Some(
                pot.mixture()
                    .ok_or_else(|| {
                        Error::Config("exact_oracle requires a Gaussian-mixture target".into())
                    })?
                    .noised(t)?,
            ),
            EstimatorKind::TsiGaussian | EstimatorKind::AuxiliaryUla if !pot.has_gradient() => {
                return Err(Error::MissingGradient)
            }
            _ => None,
        };
        Ok(PreparedLevel { level, noised })
    }

    /// Estimates `∇ log p_t(z)` with `particles` Monte-Carlo draws.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate(
        &self,
        pot: &dyn Potential,
        prepared: &PreparedLevel,
        z: &[f64],
        particles: usize,
        rng: &mut StreamRng,
        state: &mut EstimatorState,
        out: &mut [f64],
    ) -> Result<()> {
        let level = &prepared.level;
        match self.kind {
            EstimatorKind::SelfNormalized => {
                self_normalized_score_into(pot, level, z, particles, rng, out)
            }
            EstimatorKind::TsiGaussian => {
                tsi_gaussian_score_into(pot, level, z, particles, rng, out)
            }
            EstimatorKind::AuxiliaryUla => {
                let inner = self.inner.as_ref().ok_or_else(|| {
                    Error::Config("auxiliary_ula requires inner ULA parameters".into())
                })?;
                let s = auxiliary_ula_score(pot, level, z, particles, inner, rng, Some(state))?;
                out.copy_from_slice(&s);
                Ok(())
            }
            EstimatorKind::ExactOracle => {
                let gm = prepared.noised.as_ref().ok_or_else(|| {
                    Error::Config("exact_oracle requires a Gaussian-mixture target".into())
                })?;
                gm.score_into(z, out)
            }
        }
    }
}

/// A validated noise level plus any precomputed oracle.
#[derive(Clone, Debug)]
pub struct PreparedLevel {
    pub level: NoiseLevel,
    noised: Option<GaussianMixture>,
}
