//! Experiment configuration files and the shipped presets.

use std::path::{Path, PathBuf};

use revdiff::estimators::{EstimatorKind, EstimatorSpec, InnerUla};
use revdiff::mixture::MixtureFile;
use revdiff::samplers::{self, UlaInit};
use revdiff::{targets, GaussianMixture, QueryTally, Schedule};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodConfig>,
    #[serde(default = "default_chains")]
    pub num_chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cap on queries (values plus gradients) per chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_mse: Option<ScoreMseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
}

fn default_chains() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Mixture JSON file; relative paths resolve against the config file.
    File(PathBuf),
    Inline(MixtureFile),
    SixteenModes {
        #[serde(default = "default_half_width")]
        half_width: f64,
        /// Seed of the centre layout; defaults to the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layout_seed: Option<u64>,
    },
    ThreeModes {
        radius: f64,
    },
    NonHolder,
    StandardNormal {
        dim: usize,
    },
    AsymmetricPair {
        radius: f64,
        lambda_max: f64,
        lambda_min: f64,
        dim: usize,
    },
}

fn default_half_width() -> f64 {
    40.0
}

impl TargetSpec {
    pub fn build(&self, seed: u64) -> Result<GaussianMixture> {
        Ok(match self {
            Self::File(path) => GaussianMixture::load(path)
                .map_err(|e| BenchError::Config(format!("target.file {}: {e}", path.display())))?,
            Self::Inline(file) => file
                .clone()
                .into_mixture()
                .map_err(|e| BenchError::Config(format!("target.inline: {e}")))?,
            Self::SixteenModes {
                half_width,
                layout_seed,
            } => {
                if !(*half_width > 0.0) {
                    return Err(BenchError::Config(
                        "target.sixteen_modes.half_width must be > 0".into(),
                    ));
                }
                targets::sixteen_modes(layout_seed.unwrap_or(seed), *half_width)
            }
            Self::ThreeModes { radius } => targets::three_modes(*radius)?,
            Self::NonHolder => targets::non_holder(),
            Self::StandardNormal { dim } => {
                if *dim == 0 {
                    return Err(BenchError::Config(
                        "target.standard_normal.dim must be ≥ 1".into(),
                    ));
                }
                GaussianMixture::standard_normal(*dim)
            }
            Self::AsymmetricPair {
                radius,
                lambda_max,
                lambda_min,
                dim,
            } => targets::asymmetric_pair(*radius, *lambda_max, *lambda_min, *dim)?,
        })
    }
}

/// Exactly one sampler per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    /// Reverse diffusion with Monte-Carlo score estimates.
    Ours(OursConfig),
    Ula(UlaConfig),
    Rdmc(RdmcConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OursConfig {
    pub schedule: ScheduleConfig,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
}

fn default_estimator() -> EstimatorKind {
    EstimatorKind::SelfNormalized
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Practical {
        horizon: f64,
        steps: usize,
        particles: u64,
    },
    /// Schedule derived from a target accuracy.
    Theory { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlaConfig {
    pub step_size: f64,
    pub steps: usize,
    #[serde(default)]
    pub init: UlaInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdmcConfig {
    pub horizon: f64,
    pub steps: usize,
    pub particles: u64,
    pub inner: InnerUla,
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ours(_) => "ours",
            Self::Ula(_) => "ula",
            Self::Rdmc(_) => "rdmc",
        }
    }

    fn schedule(&self, dim: usize) -> Result<Option<Schedule>> {
        Ok(match self {
            Self::Ours(o) => Some(match o.schedule {
                ScheduleConfig::Practical {
                    horizon,
                    steps,
                    particles,
                } => samplers::schedule_practical(horizon, steps, particles)?,
                ScheduleConfig::Theory { epsilon } => samplers::schedule_theory(epsilon, dim)?,
            }),
            Self::Rdmc(r) => Some(samplers::schedule_practical(
                r.horizon,
                r.steps,
                r.particles,
            )?),
            Self::Ula(_) => None,
        })
    }

    /// Closed-form queries one chain will make.
    pub fn planned_queries(&self, dim: usize) -> Result<QueryTally> {
        let overflow = || BenchError::Budget("planned query count overflows u64".into());
        Ok(match self {
            Self::Ours(o) => {
                let per_chain = self
                    .schedule(dim)?
                    .expect("ours has a schedule")
                    .total_particles();
                match o.estimator {
                    EstimatorKind::SelfNormalized => QueryTally {
                        values: per_chain,
                        gradients: 0,
                    },
                    EstimatorKind::TsiGaussian => QueryTally {
                        values: per_chain,
                        gradients: per_chain,
                    },
                    EstimatorKind::ExactOracle => QueryTally::default(),
                    EstimatorKind::AuxiliaryUla => {
                        return Err(BenchError::Config(
                            "method.ours.estimator: use the rdmc block for auxiliary_ula".into(),
                        ))
                    }
                }
            }
            Self::Ula(u) => QueryTally {
                values: 0,
                gradients: u.steps as u64,
            },
            Self::Rdmc(r) => QueryTally {
                values: 0,
                gradients: (r.steps as u64)
                    .checked_mul(r.particles)
                    .and_then(|v| v.checked_mul(r.inner.steps as u64))
                    .ok_or_else(overflow)?,
            },
        })
    }

    pub fn run(
        &self,
        target: &GaussianMixture,
        num_chains: usize,
        seed: u64,
    ) -> Result<revdiff::SampleRun> {
        let schedule = self.schedule(target.dim())?;
        Ok(match self {
            Self::Ours(o) => {
                let spec = EstimatorSpec {
                    kind: o.estimator,
                    ..EstimatorSpec::self_normalized(1)
                };
                samplers::run_reverse_diffusion(
                    target,
                    schedule.as_ref().unwrap(),
                    &spec,
                    num_chains,
                    seed,
                )?
            }
            Self::Ula(u) => {
                samplers::run_ula(target, u.step_size, u.steps, num_chains, &u.init, seed)?
            }
            Self::Rdmc(r) => {
                let spec = EstimatorSpec::auxiliary_ula(r.particles as usize, r.inner.clone());
                samplers::run_rdmc(target, schedule.as_ref().unwrap(), &spec, num_chains, seed)?
            }
        })
    }
}

/// Fails with a budget error when one chain would exceed `budget` queries.
pub fn enforce_budget(
    method: &MethodConfig,
    dim: usize,
    budget: Option<u64>,
) -> Result<QueryTally> {
    let planned = method.planned_queries(dim)?;
    if let Some(cap) = budget {
        if planned.total() > cap {
            return Err(BenchError::Budget(format!(
                "{} plans {} queries per chain ({} values, {} gradients), budget is {cap}",
                method.name(),
                planned.total(),
                planned.values,
                planned.gradients
            )));
        }
    }
    Ok(planned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    pub methods: Vec<MethodConfig>,
    /// Generated samples per method (one chain each).
    #[serde(default = "default_sweep_samples")]
    pub samples: usize,
    #[serde(default = "default_sweep_samples")]
    pub reference_samples: usize,
    /// Run sweep points concurrently. Results do not depend on this.
    #[serde(default)]
    pub parallel: bool,
}

fn default_radii() -> Vec<f64> {
    vec![2.0, 4.0, 6.0, 8.0, 10.0]
}

fn default_sweep_samples() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMseConfig {
    pub t: f64,
    pub particles: Vec<usize>,
    #[serde(default = "default_mse_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
}

fn default_mse_estimators() -> Vec<EstimatorSpec> {
    vec![EstimatorSpec::self_normalized(1)]
}

fn default_replications() -> usize {
    200
}

fn default_eval_points() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_check_points")]
    pub points: usize,
    #[serde(default = "default_moment_samples")]
    pub second_moment_samples: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            points: default_check_points(),
            second_moment_samples: default_moment_samples(),
            tol: default_tol(),
        }
    }
}

fn default_check_points() -> usize {
    100
}

fn default_moment_samples() -> usize {
    100_000
}

fn default_tol() -> f64 {
    1e-3
}

/// Shipped presets, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig3-ours", include_str!("../presets/fig3-ours.json")),
    ("fig3-ula", include_str!("../presets/fig3-ula.json")),
    ("fig3-rdmc", include_str!("../presets/fig3-rdmc.json")),
    ("fig1-sweep", include_str!("../presets/fig1-sweep.json")),
    ("theory-1d", include_str!("../presets/theory-1d.json")),
    (
        "standard-gaussian",
        include_str!("../presets/standard-gaussian.json"),
    ),
    (
        "check-non-holder",
        include_str!("../presets/check-non-holder.json"),
    ),
    (
        "check-standard",
        include_str!("../presets/check-standard.json"),
    ),
    ("score-mse-1d", include_str!("../presets/score-mse-1d.json")),
];

pub fn parse(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        BenchError::Config(format!("{origin}: at `{path}`: {}", e.inner()))
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
        BenchError::Config(format!(
            "unknown preset `{name}`; available: {}",
            names.join(", ")
        ))
    })?;
    parse(text, &format!("preset {name}"))
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = parse(&text, &path.display().to_string())?;
    if let Some(TargetSpec::File(file)) = &mut config.target {
        if file.is_relative() {
            if let Some(dir) = path.parent() {
                *file = dir.join(&*file);
            }
        }
    }
    Ok(config)
}

impl ExperimentConfig {
    pub fn require_target(&self) -> Result<&TargetSpec> {
        self.target
            .as_ref()
            .ok_or_else(|| BenchError::Config("missing field `target`".into()))
    }

    pub fn require_method(&self) -> Result<&MethodConfig> {
        self.method
            .as_ref()
            .ok_or_else(|| BenchError::Config("missing field `method`".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_chains == 0 {
            return Err(BenchError::Config("num_chains must be ≥ 1".into()));
        }
        Ok(())
    }

    /// This config with the target replaced by its inline mixture, so that
    /// re-running it reproduces the run without the original files or seed
    /// dependent layouts.
    pub fn resolved(&self, target: &GaussianMixture) -> Self {
        Self {
            target: Some(TargetSpec::Inline(target.to_file())),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
        }
    }

    #[test]
    fn errors_name_the_field_path() {
        let err = parse(
            r#"{"target": "non_holder", "method": {"ula": {"step_size": "x", "steps": 3}}}"#,
            "t",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("method.ula.step_size"), "{msg}");
        assert!(matches!(err, BenchError::Config(_)));
    }

    #[test]
    fn unknown_preset_lists_names() {
        let msg = preset("nope").unwrap_err().to_string();
        assert!(msg.contains("fig3-ours"));
    }

    #[test]
    fn planned_queries_follow_the_method() {
        let fig3 = preset("fig3-ours").unwrap();
        let q = fig3.method.unwrap().planned_queries(2).unwrap();
        assert_eq!(
            q,
            QueryTally {
                values: 50_000,
                gradients: 0
            }
        );
        let theory = preset("theory-1d").unwrap();
        assert_eq!(
            theory.method.unwrap().planned_queries(1).unwrap().values,
            64
        );
        let sweep = preset("fig1-sweep").unwrap().sweep.unwrap();
        for m in &sweep.methods {
            assert_eq!(
                m.planned_queries(2).unwrap().total(),
                1_000_000,
                "{}",
                m.name()
            );
        }
    }

    #[test]
    fn budget_is_checked_per_chain() {
        let m = preset("fig3-ula").unwrap().method.unwrap();
        assert!(enforce_budget(&m, 2, Some(50_000)).is_ok());
        assert!(matches!(
            enforce_budget(&m, 2, Some(49_999)),
            Err(BenchError::Budget(_))
        ));
    }

    #[test]
    fn resolved_config_inlines_the_target() {
        let c = preset("fig3-ours").unwrap();
        let gm = c.require_target().unwrap().build(c.seed).unwrap();
        let r = c.resolved(&gm);
        let rebuilt = r.require_target().unwrap().build(12345).unwrap();
        assert_eq!(rebuilt.means(), gm.means());
        let round = parse(&serde_json::to_string(&r).unwrap(), "r").unwrap();
        assert_eq!(round, r);
    }
}
