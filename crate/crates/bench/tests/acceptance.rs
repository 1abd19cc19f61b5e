//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p revdiff-bench --test acceptance -- 1 6 9`.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;
use revdiff::estimators::EstimatorSpec;
use revdiff::metrics::{self, mode_coverage, wasserstein2, W2Method};
use revdiff::rng::stream;
use revdiff::samplers::{self, run_reverse_diffusion, schedule_practical};
use revdiff::theory::{
    check_dissipativity, check_second_moment, check_semi_log_convexity, non_holder_demo,
    poincare_ratio,
};
use revdiff::{GaussianMixture, SampleMatrix};
use revdiff_bench::commands::{sample, sweep_w2};
use revdiff_bench::config::{preset, TargetSpec};

// Criterion 1
const GAUSS_MEAN_TOL: f64 = 0.1;
const GAUSS_VAR_TOL: f64 = 0.15;
const GAUSS_MAX_SECONDS: f64 = 10.0;
// Criterion 2
const COVERAGE_RADIUS: f64 = 3.0;
const COVERAGE_MIN_FRACTION: f64 = 0.01;
const COVERAGE_MAX_STRAY: f64 = 0.05;
const COVERAGE_SEEDS: u64 = 5;
const COVERAGE_MIN_PASSING: usize = 4;
// Criterion 3
const SWEEP_RADIUS: f64 = 10.0;
const SWEEP_SEEDS: u64 = 3;
// Criterion 4
const MSE_T: f64 = 0.5;
const MSE_PARTICLES: [usize; 4] = [100, 1_000, 10_000, 100_000];
const MSE_REPLICATIONS: usize = 200;
const MSE_POINTS: usize = 20;
const MSE_SLOPE: f64 = -1.0;
const MSE_SLOPE_TOL: f64 = 0.2;
// Criterion 5
const RANDOM_MIXTURES: u64 = 20;
const CHECK_POINTS: usize = 100;
const CHECK_TOL: f64 = 1e-3;
const MOMENT_SAMPLES: usize = 100_000;
// Criterion 6
const DIAGONAL_TOL: f64 = 1e-10;
const OFF_DIAGONAL_RATIO: (f64, f64) = (1.96, 2.04);
// Criterion 7
const POINCARE_RADII: [f64; 3] = [2.0, 4.0, 6.0];
const POINCARE_SAMPLES: usize = 1_000_000;
const POINCARE_BOUND_FACTOR: f64 = 0.9;
const POINCARE_GROWTH: f64 = 2.0;
// Criterion 9
const W2_INSTANCES: u64 = 100;
const W2_TOL: f64 = 1e-12;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn standard_gaussian_end_to_end() -> Outcome {
    let target = GaussianMixture::standard_normal(2);
    let schedule = schedule_practical(3.0, 100, 1).unwrap();
    let started = Instant::now();
    let run =
        run_reverse_diffusion(&target, &schedule, &EstimatorSpec::exact_oracle(), 2000, 0).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let mean = run.samples.mean();
    let cov = run.samples.covariance();
    let var = [cov[0], cov[3]];
    let passed = mean.iter().all(|m| m.abs() < GAUSS_MEAN_TOL)
        && var.iter().all(|v| (v - 1.0).abs() < GAUSS_VAR_TOL)
        && secs < GAUSS_MAX_SECONDS;
    outcome(
        passed,
        format!("mean {mean:.4?}, variances {var:.4?}, {secs:.2}s"),
    )
}

fn sixteen_mode_coverage() -> Outcome {
    let mut passing = 0;
    let mut lines = Vec::new();
    for seed in 0..COVERAGE_SEEDS {
        let mut ours = preset("fig3-ours").unwrap();
        let mut ula = preset("fig3-ula").unwrap();
        ours.seed = seed;
        ula.seed = seed;
        let target = ours.target.as_ref().unwrap().build(seed).unwrap();
        let centers = target.means();
        let (run, _) = sample(&ours).unwrap();
        let cov = mode_coverage(&run.samples, &centers, COVERAGE_RADIUS).unwrap();
        let (ula_run, _) = sample(&ula).unwrap();
        let ula_cov = mode_coverage(&ula_run.samples, &centers, COVERAGE_RADIUS).unwrap();
        let ours_modes = cov.modes_covered(COVERAGE_MIN_FRACTION);
        let ula_modes = ula_cov.modes_covered(COVERAGE_MIN_FRACTION);
        let ok = ours_modes == 16 && cov.stray <= COVERAGE_MAX_STRAY && ula_modes < 16;
        passing += ok as usize;
        lines.push(format!(
            "seed {seed}: ours {ours_modes}/16 stray {:.3}, ula {ula_modes}/16",
            cov.stray
        ));
    }
    outcome(
        passing >= COVERAGE_MIN_PASSING,
        format!(
            "{passing}/{COVERAGE_SEEDS} seeds pass [{}]",
            lines.join("; ")
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn three_mode_sweep() -> Outcome {
    let mut w2 = std::collections::BTreeMap::<String, Vec<f64>>::new();
    for seed in 0..SWEEP_SEEDS {
        let mut c = preset("fig1-sweep").unwrap();
        c.seed = seed;
        c.sweep.as_mut().unwrap().radii = vec![SWEEP_RADIUS];
        for row in sweep_w2(&c, false).unwrap() {
            w2.entry(row.method).or_default().push(row.w2);
        }
    }
    let med: std::collections::BTreeMap<String, f64> =
        w2.into_iter().map(|(k, v)| (k, median(v))).collect();
    let ours = med["ours"];
    let passed = ours < med["ula"] && ours < med["rdmc"];
    outcome(passed, format!("median W2 at R={SWEEP_RADIUS}: {med:.4?}"))
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn estimator_consistency() -> Outcome {
    let c = preset("score-mse-1d").unwrap();
    let Some(TargetSpec::Inline(file)) = &c.target else {
        unreachable!("score-mse-1d ships an inline target")
    };
    let target = file.clone().into_mixture().unwrap();
    let points = target.noised(MSE_T).unwrap().sample(MSE_POINTS, 1).unwrap();
    let mses: Vec<f64> = MSE_PARTICLES
        .iter()
        .map(|&n| {
            metrics::score_mse(
                &EstimatorSpec::self_normalized(n),
                &target,
                MSE_T,
                &points,
                MSE_REPLICATIONS,
                n as u64,
            )
            .unwrap()
            .mse
        })
        .collect();
    let xs: Vec<f64> = MSE_PARTICLES.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&xs, &mses);
    outcome(
        (slope - MSE_SLOPE).abs() <= MSE_SLOPE_TOL,
        format!(
            "slope {slope:.3}, mse [{}]",
            mses.iter()
                .map(|m| format!("{m:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

/// `p ≤ 5` components in `d ≤ 3` with covariances `A Aᵀ + 0.05 I`.
fn random_mixture(seed: u64) -> GaussianMixture {
    let mut rng = stream(seed, &[7_777]);
    let p = rng.random_range(1..=5);
    let d = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let means = (0..p)
        .map(|_| (0..d).map(|_| rng.random_range(-6.0..6.0)).collect())
        .collect();
    let covs = (0..p)
        .map(|_| {
            let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.2..1.2)).collect();
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>()
                                + if i == j { 0.05 } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    GaussianMixture::new(raw.iter().map(|w| w / total).collect(), means, covs).unwrap()
}

fn structural_checks() -> Outcome {
    let mut failures = Vec::new();
    let (mut worst_hessian, mut worst_dissipativity) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..RANDOM_MIXTURES {
        let gm = random_mixture(k);
        let slc = check_semi_log_convexity(&gm, CHECK_POINTS, k, CHECK_TOL).unwrap();
        let dis = check_dissipativity(&gm, CHECK_POINTS, k, CHECK_TOL).unwrap();
        let m2 = check_second_moment(&gm, MOMENT_SAMPLES, k).unwrap();
        worst_hessian = worst_hessian.max(slc.worst_violation);
        worst_dissipativity = worst_dissipativity.max(dis.worst_violation);
        if !(slc.passed && dis.passed && m2.passed) {
            failures.push(k);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} of {RANDOM_MIXTURES} mixtures fail {failures:?}; worst Hessian excess {worst_hessian:.2e}, worst dissipativity excess {worst_dissipativity:.2e}",
            failures.len()
        ),
    )
}

fn non_holder_values() -> Outcome {
    let diag = non_holder_demo(&[5.0], 0.0).unwrap();
    let off = non_holder_demo(&[50.0], 0.1).unwrap();
    let d = diag[0].on_diagonal;
    let ratio = off[0].off_diagonal[0] / 50.0;
    let passed = (d[0] - 7.5).abs() <= DIAGONAL_TOL
        && (d[1] - 7.5).abs() <= DIAGONAL_TOL
        && (OFF_DIAGONAL_RATIO.0..=OFF_DIAGONAL_RATIO.1).contains(&ratio);
    outcome(
        passed,
        format!("-grad log mu(5,5) = {d:?}, first coordinate at (50, 50.1) / 50 = {ratio:.6}"),
    )
}

fn poincare_growth() -> Outcome {
    let est: Vec<_> = POINCARE_RADII
        .iter()
        .map(|&r| poincare_ratio(r, 1.0, 0.5, 2, POINCARE_SAMPLES, 0).unwrap())
        .collect();
    let above_bound = est
        .iter()
        .all(|e| e.ratio >= POINCARE_BOUND_FACTOR * e.bound);
    let growth = est
        .windows(2)
        .all(|w| w[1].ratio >= POINCARE_GROWTH * w[0].ratio);
    let rows: Vec<String> = POINCARE_RADII
        .iter()
        .zip(&est)
        .map(|(r, e)| {
            format!(
                "R={r}: ratio {:.4e} vs bound {:.4e}, Var(f) {:.4}",
                e.ratio, e.bound, e.variance
            )
        })
        .collect();
    outcome(
        above_bound && growth,
        format!("ratio >= {POINCARE_BOUND_FACTOR}*bound: {above_bound}, growth >= {POINCARE_GROWTH}x: {growth} [{}]", rows.join("; ")),
    )
}

fn query_accounting() -> Outcome {
    let mut theory = preset("theory-1d").unwrap();
    theory.num_chains = 5;
    let (run, meta) = sample(&theory).unwrap();
    let theory_ok = meta.queries_per_chain.values == 64 && run.potential_queries == 5 * 64;

    let mut fig3 = preset("fig3-ours").unwrap();
    fig3.num_chains = 4;
    let (run3, meta3) = sample(&fig3).unwrap();
    let fig3_ok = meta3.queries_per_chain.values == 50_000 && run3.potential_queries == 4 * 50_000;
    let schedule = samplers::schedule_theory(0.5, 1).unwrap();
    outcome(
        theory_ok && fig3_ok && run.gradient_queries == 0 && run3.gradient_queries == 0,
        format!(
            "theory schedule: N={} particles {:?}, {} queries per chain; fig3: {} per chain",
            schedule.steps,
            schedule.particles,
            run.potential_queries / 5,
            run3.potential_queries / 4
        ),
    )
}

fn brute_force_w2(a: &SampleMatrix, b: &SampleMatrix) -> f64 {
    fn search(k: usize, perm: &mut [usize], a: &SampleMatrix, b: &SampleMatrix, best: &mut f64) {
        let n = perm.len();
        if k == n {
            let c: f64 = (0..n)
                .map(|i| {
                    a.row(i)
                        .iter()
                        .zip(b.row(perm[i]))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                })
                .sum();
            *best = best.min(c / n as f64);
            return;
        }
        for i in k..n {
            perm.swap(k, i);
            search(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..a.len()).collect();
    search(0, &mut perm, a, b, &mut best);
    best.sqrt()
}

fn exact_w2_vs_brute_force() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_self = 0.0f64;
    for k in 0..W2_INSTANCES {
        let mut rng = stream(k, &[31]);
        let n = rng.random_range(1..=7);
        let d = rng.random_range(1..=3);
        let mut cloud = || {
            SampleMatrix::from_flat(d, (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect())
                .unwrap()
        };
        let a = cloud();
        let b = cloud();
        let exact = wasserstein2(&a, &b, W2Method::ExactAssignment)
            .unwrap()
            .distance;
        worst = worst.max((exact - brute_force_w2(&a, &b)).abs());
        worst_self = worst_self.max(
            wasserstein2(&a, &a, W2Method::ExactAssignment)
                .unwrap()
                .distance,
        );
    }
    outcome(
        worst <= W2_TOL && worst_self <= W2_TOL,
        format!("max |exact - brute force| {worst:.2e}, max W2(A,A) {worst_self:.2e} over {W2_INSTANCES} instances"),
    )
}

fn byte_identical_reruns() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_revdiff-bench"))
            .args([
                "sample",
                "--preset",
                "fig3-ours",
                "--seed",
                "17",
                "--output",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        fs::read(out.join("samples.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    outcome(
        a == b && !a.is_empty(),
        format!("{} bytes per samples.csv, identical: {}", a.len(), a == b),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (
        1,
        "standard Gaussian end-to-end",
        standard_gaussian_end_to_end,
    ),
    (2, "sixteen-mode coverage vs ULA", sixteen_mode_coverage),
    (3, "three-mode W2 sweep at R=10", three_mode_sweep),
    (4, "self-normalised MSE slope", estimator_consistency),
    (
        5,
        "semi-log-convexity, dissipativity, second moment",
        structural_checks,
    ),
    (6, "non-Hölder score values", non_holder_values),
    (7, "Poincaré quotient bound and growth", poincare_growth),
    (8, "query accounting", query_accounting),
    (9, "exact W2 vs brute force", exact_w2_vs_brute_force),
    (10, "byte-identical reruns", byte_identical_reruns),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let result = check();
        println!(
            "criterion {id:>2} {} {name} ({:.1}s): {}",
            if result.passed { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
