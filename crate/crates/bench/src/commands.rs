use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use revdiff::metrics::{self, W2Method};
use revdiff::rng::{child_seed, purpose};
use revdiff::theory::{self, CheckReport};
use revdiff::{targets, GaussianMixture, MixtureConstants, QueryTally, SampleMatrix, SampleRun};
use serde::{Deserialize, Serialize};

use crate::config::{enforce_budget, CheckConfig, ExperimentConfig};
use crate::error::{BenchError, Result};

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_samples_csv(path: &Path, samples: &SampleMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..samples.dim()).map(|i| format!("x{i}")))?;
    for row in samples.rows() {
        w.write_record(row.iter().map(|&v| fmt_float(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<SampleMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len();
    let mut data = Vec::new();
    for record in r.records() {
        for field in record?.iter() {
            data.push(field.parse::<f64>().map_err(|e| {
                BenchError::Config(format!("{}: bad number `{field}`: {e}", path.display()))
            })?);
        }
    }
    Ok(SampleMatrix::from_flat(dim, data)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub method: String,
    pub num_chains: usize,
    pub potential_queries: u64,
    pub gradient_queries: u64,
    pub queries_per_chain: QueryTally,
    pub wall_seconds: f64,
    pub config: ExperimentConfig,
}

/// Runs the configured sampler, checking the budget before any query is made.
pub fn sample(config: &ExperimentConfig) -> Result<(SampleRun, SampleMeta)> {
    config.validate()?;
    let target = config.require_target()?.build(config.seed)?;
    let method = config.require_method()?;
    let per_chain = enforce_budget(method, target.dim(), config.query_budget)?;
    let run = method.run(&target, config.num_chains, config.seed)?;
    let meta = SampleMeta {
        seed: config.seed,
        method: method.name().to_string(),
        num_chains: config.num_chains,
        potential_queries: run.potential_queries,
        gradient_queries: run.gradient_queries,
        queries_per_chain: per_chain,
        wall_seconds: run.wall_seconds,
        config: config.resolved(&target),
    };
    Ok((run, meta))
}

pub fn cmd_sample(config: &ExperimentConfig, out: &Path) -> Result<SampleMeta> {
    let (run, meta) = sample(config)?;
    fs::create_dir_all(out)?;
    write_samples_csv(&out.join("samples.csv"), &run.samples)?;
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius: f64,
    pub method: String,
    pub w2: f64,
    /// Queries per chain, values plus gradients.
    pub queries: u64,
    pub seed: u64,
}

pub fn sweep_w2(config: &ExperimentConfig, force_parallel: bool) -> Result<Vec<SweepRow>> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| BenchError::Config("missing field `sweep`".into()))?;
    if sweep.radii.is_empty() || sweep.methods.is_empty() {
        return Err(BenchError::Config(
            "sweep.radii and sweep.methods must be non-empty".into(),
        ));
    }
    if sweep.samples == 0 || sweep.reference_samples == 0 {
        return Err(BenchError::Config("sweep sample counts must be ≥ 1".into()));
    }
    for m in &sweep.methods {
        enforce_budget(m, 2, config.query_budget)?;
    }
    let jobs: Vec<(f64, usize)> = sweep
        .radii
        .iter()
        .flat_map(|&r| (0..sweep.methods.len()).map(move |m| (r, m)))
        .collect();
    let job = |&(radius, m): &(f64, usize)| -> Result<SweepRow> {
        let method = &sweep.methods[m];
        let target = targets::three_modes(radius)?;
        let reference = target.sample(
            sweep.reference_samples,
            child_seed(config.seed, &[purpose::REFERENCE, radius.to_bits()]),
        )?;
        let run = method.run(&target, sweep.samples, config.seed)?;
        let w2 = metrics::wasserstein2(&run.samples, &reference, W2Method::Auto)?;
        Ok(SweepRow {
            radius,
            method: method.name().to_string(),
            w2: w2.distance,
            queries: (run.potential_queries + run.gradient_queries) / sweep.samples as u64,
            seed: config.seed,
        })
    };
    if sweep.parallel || force_parallel {
        jobs.par_iter().map(job).collect()
    } else {
        jobs.iter().map(job).collect()
    }
}

pub fn cmd_sweep_w2(
    config: &ExperimentConfig,
    out: &Path,
    force_parallel: bool,
) -> Result<Vec<SweepRow>> {
    let started = Instant::now();
    let rows = sweep_w2(config, force_parallel)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    w.write_record(["R", "method", "w2", "queries", "seed"])?;
    for row in &rows {
        w.write_record([
            fmt_float(row.radius),
            row.method.clone(),
            fmt_float(row.w2),
            row.queries.to_string(),
            row.seed.to_string(),
        ])?;
    }
    w.flush()?;
    let meta = serde_json::json!({
        "seed": config.seed,
        "wall_seconds": started.elapsed().as_secs_f64(),
        "config": config,
    });
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOutput {
    pub constants: MixtureConstants,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

pub fn check(target: &GaussianMixture, settings: &CheckConfig, seed: u64) -> Result<CheckOutput> {
    let checks = vec![
        theory::check_semi_log_convexity(target, settings.points, seed, settings.tol)?,
        theory::check_dissipativity(target, settings.points, seed, settings.tol)?,
        theory::check_second_moment(target, settings.second_moment_samples, seed)?,
    ];
    Ok(CheckOutput {
        constants: target.constants(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Writes `report.json` and prints a pass/fail table. Returns a
/// [`BenchError::CheckFailed`] when any check fails.
pub fn cmd_check(config: &ExperimentConfig, out: &Path) -> Result<CheckOutput> {
    let target = config.require_target()?.build(config.seed)?;
    let settings = config.check.clone().unwrap_or_default();
    let report = check(&target, &settings, config.seed)?;
    fs::create_dir_all(out)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "{:<20} {:>7} {:>14} {:>9}  result",
        "check", "points", "worst excess", "tol"
    );
    for c in &report.checks {
        println!(
            "{:<20} {:>7} {:>14.6e} {:>9.1e}  {}",
            c.name,
            c.points_tested,
            c.worst_violation,
            c.tolerance,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(BenchError::CheckFailed {
            failed,
            total: report.checks.len(),
        });
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub n: usize,
    pub estimator: String,
    pub t: f64,
    pub mse: f64,
    pub stderr: f64,
}

pub fn score_mse(config: &ExperimentConfig) -> Result<Vec<MseRow>> {
    let target = config.require_target()?.build(config.seed)?;
    let settings = config
        .score_mse
        .as_ref()
        .ok_or_else(|| BenchError::Config("missing field `score_mse`".into()))?;
    if settings.particles.is_empty() || settings.estimators.is_empty() {
        return Err(BenchError::Config(
            "score_mse.particles and score_mse.estimators must be non-empty".into(),
        ));
    }
    let points = target.noised(settings.t)?.sample(
        settings.eval_points,
        child_seed(config.seed, &[purpose::SCORE_MSE]),
    )?;
    let mut rows = Vec::new();
    for &n in &settings.particles {
        for spec in &settings.estimators {
            let spec = revdiff::EstimatorSpec {
                particles: n,
                ..spec.clone()
            };
            let est = metrics::score_mse(
                &spec,
                &target,
                settings.t,
                &points,
                settings.replications,
                child_seed(config.seed, &[n as u64]),
            )?;
            rows.push(MseRow {
                n,
                estimator: spec.kind.name().to_string(),
                t: settings.t,
                mse: est.mse,
                stderr: est.stderr,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_score_mse(config: &ExperimentConfig, out: &Path) -> Result<Vec<MseRow>> {
    let rows = score_mse(config)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("mse.csv"))?;
    w.write_record(["n", "estimator", "t", "mse", "stderr"])?;
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            r.estimator.clone(),
            fmt_float(r.t),
            fmt_float(r.mse),
            fmt_float(r.stderr),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
