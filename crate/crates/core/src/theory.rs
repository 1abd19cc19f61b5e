//! Numeric checks of the structural properties of Gaussian mixtures:
//! semi-log-convexity, dissipativity, the second-moment bound, the
//! non-Hölder score example and the Poincaré test-function quotient.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::moment2;
use crate::mixture::GaussianMixture;
use crate::rng::{purpose, stream, StreamRng};
use crate::targets;

/// One evaluated point of a check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub value: f64,
    pub bound: f64,
    /// Positive means the bound is violated by that much.
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub points_tested: usize,
    /// Largest `violation` over all points; negative values are margins.
    pub worst_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub details: Vec<PointRecord>,
}

impl CheckReport {
    fn from_records(name: &str, tolerance: f64, details: Vec<PointRecord>) -> Self {
        let worst_violation = details
            .iter()
            .map(|r| r.violation)
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            name: name.to_string(),
            points_tested: details.len(),
            worst_violation,
            tolerance,
            passed: worst_violation <= tolerance,
            details,
        }
    }
}

fn gaussian_point(rng: &mut StreamRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central second-difference Hessian of `V = −log μ` with step
/// `1e-4 · max(1, ‖x‖)`, symmetrised.
pub fn finite_difference_hessian(gm: &GaussianMixture, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = x.len();
    let h = 1e-4 * norm(x).max(1.0);
    let v = |p: &[f64]| -> Result<f64> { Ok(-gm.log_density(p)?) };
    let v0 = v(x)?;
    let mut hess = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for i in 0..d {
        p[i] = x[i] + h;
        let plus = v(&p)?;
        p[i] = x[i] - h;
        let minus = v(&p)?;
        p[i] = x[i];
        hess[(i, i)] = (plus - 2.0 * v0 + minus) / (h * h);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                p[i] = x[i] + si * h;
                p[j] = x[j] + sj * h;
                let r = v(&p);
                p[i] = x[i];
                p[j] = x[j];
                r
            };
            let mixed = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?)
                / (4.0 * h * h);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "finite-difference Hessian at {x:?}"
        )));
    }
    Ok(hess)
}

/// Largest eigenvalue of the finite-difference `∇²V` at points drawn from
/// `N(0, (r_max + 3√λ_max)² I)` must not exceed `β + tol`.
pub fn check_semi_log_convexity(
    gm: &GaussianMixture,
    num_points: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    if num_points == 0 {
        return Err(Error::Config("num_points must be ≥ 1".into()));
    }
    let c = gm.constants();
    let scale = c.r_max + 3.0 * c.lambda_max.sqrt();
    let mut rng = stream(seed, &[purpose::CHECK_POINTS, 1]);
    let mut details = Vec::with_capacity(num_points);
    for _ in 0..num_points {
        let x = gaussian_point(&mut rng, gm.dim(), scale);
        let hess = finite_difference_hessian(gm, &x)?;
        let top = SymmetricEigen::new(hess).eigenvalues.max();
        details.push(PointRecord {
            violation: top - c.beta,
            value: top,
            bound: c.beta,
            x,
        });
    }
    Ok(CheckReport::from_records(
        "semi_log_convexity",
        tol,
        details,
    ))
}

/// `⟨∇V(x), x⟩ ≥ a‖x‖² − b` at the origin, at envelope points, and on shells
/// out to radius `10 (r_max + √λ_max)`.
pub fn check_dissipativity(
    gm: &GaussianMixture,
    num_points: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    if num_points == 0 {
        return Err(Error::Config("num_points must be ≥ 1".into()));
    }
    let c = gm.constants();
    let d = gm.dim();
    let envelope = c.r_max + 3.0 * c.lambda_max.sqrt();
    let max_radius = 10.0 * (c.r_max + c.lambda_max.sqrt());
    let mut rng = stream(seed, &[purpose::CHECK_POINTS, 2]);
    let mut points = vec![vec![0.0; d]];
    while points.len() < num_points {
        if points.len() % 2 == 0 {
            points.push(gaussian_point(&mut rng, d, envelope));
        } else {
            let dir = gaussian_point(&mut rng, d, 1.0);
            let r = rng.random_range(0.0..=max_radius) / norm(&dir).max(f64::MIN_POSITIVE);
            points.push(dir.iter().map(|v| v * r).collect());
        }
    }
    let mut details = Vec::with_capacity(points.len());
    for x in points {
        let score = gm.score(&x)?;
        let lhs: f64 = -score.iter().zip(&x).map(|(s, xi)| s * xi).sum::<f64>();
        let rhs = c.a * norm(&x).powi(2) - c.b;
        details.push(PointRecord {
            violation: rhs - lhs,
            value: lhs,
            bound: rhs,
            x,
        });
    }
    Ok(CheckReport::from_records("dissipativity", tol, details))
}

/// Empirical `m₂` against `(b + 2d)/a`; passes when `m₂ ≤ bound + 3 SE`.
pub fn check_second_moment(
    gm: &GaussianMixture,
    n_samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    if n_samples < 10_000 {
        return Err(Error::Config(format!(
            "second-moment check needs ≥ 10⁴ samples, got {n_samples}"
        )));
    }
    let c = gm.constants();
    let samples = gm.sample(n_samples, seed)?;
    let m2 = moment2(&samples);
    let n = n_samples as f64;
    let var = samples
        .rows()
        .map(|r| (r.iter().map(|v| v * v).sum::<f64>() - m2).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let se = (var / n).sqrt();
    let bound = (c.b + 2.0 * gm.dim() as f64) / c.a;
    let record = PointRecord {
        x: Vec::new(),
        value: m2,
        bound,
        violation: m2 - 3.0 * se - bound,
    };
    Ok(CheckReport::from_records(
        "second_moment",
        0.0,
        vec![record],
    ))
}

/// `−∇log μ` on and just off the diagonal for the non-Hölder mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonHolderRow {
    pub x: f64,
    /// `−∇log μ(x, x)`.
    pub on_diagonal: [f64; 2],
    /// `−∇log μ(x, x + η)`.
    pub off_diagonal: [f64; 2],
}

pub fn non_holder_demo(x_values: &[f64], eta: f64) -> Result<Vec<NonHolderRow>> {
    let gm = targets::non_holder();
    x_values
        .iter()
        .map(|&x| {
            let on = gm.score(&[x, x])?;
            let off = gm.score(&[x, x + eta])?;
            Ok(NonHolderRow {
                x,
                on_diagonal: [-on[0], -on[1]],
                off_diagonal: [-off[0], -off[1]],
            })
        })
        .collect()
}

/// Test function `f(x) = g(x₁)` with `g` linear of slope `2/R` on
/// `[−R/2, R/2]` and saturating at ±1. Returns `(f, ‖∇f‖²)`.
pub fn poincare_test_function(x1: f64, radius: f64) -> (f64, f64) {
    let half = radius / 2.0;
    if x1 < -half {
        (-1.0, 0.0)
    } else if x1 > half {
        (1.0, 0.0)
    } else {
        (2.0 * x1 / radius, 4.0 / (radius * radius))
    }
}

/// Monte-Carlo Rayleigh quotient of the saturated test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareEstimate {
    pub ratio: f64,
    /// `R² e^{R²/(2λ_max)} / 2`.
    pub bound: f64,
    pub variance: f64,
    pub variance_stderr: f64,
    pub dirichlet: f64,
    pub dirichlet_stderr: f64,
    /// Delta-method relative standard error of `ratio`.
    pub ratio_rel_err: f64,
}

/// `Var_μ(f) / ∫‖∇f‖² dμ` for `μ = ½N(R e₁, λ_max I) + ½N(−R e₁, λ_min I)`.
/// The variance is centred with the empirical mean.
pub fn poincare_ratio(
    radius: f64,
    lambda_max: f64,
    lambda_min: f64,
    dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<PoincareEstimate> {
    if !(radius > 0.0)
        || !(lambda_min > 0.0)
        || lambda_max < lambda_min
        || n_samples < 2
        || dim == 0
    {
        return Err(Error::Config(
            "poincare_ratio needs R > 0, λ_max ≥ λ_min > 0, d ≥ 1 and ≥ 2 samples".into(),
        ));
    }
    let gm = targets::asymmetric_pair(radius, lambda_max, lambda_min, dim)?;
    let samples = gm.sample(n_samples, stream_seed(seed))?;
    let n = n_samples as f64;
    let (mut sf, mut sf2, mut sf4, mut sg, mut sg2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for row in samples.rows() {
        let (f, g) = poincare_test_function(row[0], radius);
        sf += f;
        sf2 += f * f;
        sf4 += f.powi(4);
        sg += g;
        sg2 += g * g;
    }
    let mean_f = sf / n;
    let mean_f2 = sf2 / n;
    let variance = mean_f2 - mean_f * mean_f;
    let dirichlet = sg / n;
    // SE of E[f²] dominates that of the centring term for these targets.
    let variance_stderr = ((sf4 / n - mean_f2 * mean_f2).max(0.0) / n).sqrt();
    let dirichlet_stderr = ((sg2 / n - dirichlet * dirichlet).max(0.0) / n).sqrt();
    let ratio = variance / dirichlet;
    let ratio_rel_err =
        ((variance_stderr / variance).powi(2) + (dirichlet_stderr / dirichlet).powi(2)).sqrt();
    let bound = radius * radius * (radius * radius / (2.0 * lambda_max)).exp() / 2.0;
    Ok(PoincareEstimate {
        ratio,
        bound,
        variance,
        variance_stderr,
        dirichlet,
        dirichlet_stderr,
        ratio_rel_err,
    })
}

fn stream_seed(seed: u64) -> u64 {
    crate::rng::child_seed(seed, &[purpose::POINCARE])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_of_standard_normal_is_identity() {
        let gm = GaussianMixture::standard_normal(2);
        let h = finite_difference_hessian(&gm, &[0.3, -1.7]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((h[(i, j)] - id).abs() < 1e-5, "{h}");
            }
        }
        let r = check_semi_log_convexity(&gm, 20, 0, 1e-3).unwrap();
        assert!(r.passed);
        assert!(r.worst_violation.abs() < 1e-4);
    }

    #[test]
    fn semi_log_convexity_on_non_holder_mixture() {
        let gm = targets::non_holder();
        assert!((gm.constants().beta - 2.0).abs() < 1e-12);
        let r = check_semi_log_convexity(&gm, 100, 1, 1e-3).unwrap();
        assert!(r.passed, "worst {}", r.worst_violation);
        assert_eq!(r.points_tested, 100);
    }

    #[test]
    fn semi_log_convexity_with_narrow_component() {
        let gm = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![-1.0, 0.5]],
            vec![
                vec![vec![0.1, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            ],
        )
        .unwrap();
        assert!((gm.constants().beta - 10.0).abs() < 1e-10);
        assert!(check_semi_log_convexity(&gm, 100, 2, 1e-3).unwrap().passed);
    }

    #[test]
    fn dissipativity_cases() {
        let gm = GaussianMixture::standard_normal(3);
        let r = check_dissipativity(&gm, 50, 0, 1e-3).unwrap();
        assert!(r.passed);
        // ⟨x, x⟩ − ½‖x‖² = ½‖x‖²
        for rec in &r.details {
            let n2: f64 = rec.x.iter().map(|v| v * v).sum();
            assert!((rec.violation + 0.5 * n2).abs() < 1e-9 * n2.max(1.0));
        }

        let two = GaussianMixture::isotropic(
            vec![0.5, 0.5],
            vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            &[0.5, 1.0],
        )
        .unwrap();
        let r = check_dissipativity(&two, 500, 3, 1e-3).unwrap();
        assert!(r.passed);
        let origin = &r.details[0];
        assert_eq!(origin.x, vec![0.0, 0.0]);
        assert!((origin.violation - -16.0).abs() < 1e-9);
        assert!(r.details.iter().all(|d| d.violation <= 0.0));
    }

    #[test]
    fn second_moment_cases() {
        let r = check_second_moment(&GaussianMixture::standard_normal(2), 10_000, 0).unwrap();
        assert!(r.passed);
        assert!((r.details[0].bound - 8.0).abs() < 1e-12);

        let two = GaussianMixture::isotropic(
            vec![0.5, 0.5],
            vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            &[0.5, 1.0],
        )
        .unwrap();
        let r = check_second_moment(&two, 100_000, 1).unwrap();
        assert!((r.details[0].bound - 40.0).abs() < 1e-9);
        // ‖μ‖² + averaged trace: 4 + (1 + 2)/2
        assert!(
            (r.details[0].value - 5.5).abs() < 0.1,
            "{}",
            r.details[0].value
        );
        assert!(r.passed);

        let tiny = GaussianMixture::isotropic(vec![1.0], vec![vec![1.0, 1.0]], &[1e-6]).unwrap();
        let r = check_second_moment(&tiny, 10_000, 2).unwrap();
        assert!(r.passed);
        assert!(check_second_moment(&tiny, 10, 2).is_err());
    }

    #[test]
    fn non_holder_rows() {
        let rows = non_holder_demo(&[5.0, 50.0], 0.1).unwrap();
        assert!((rows[0].on_diagonal[0] - 7.5).abs() < 1e-10);
        assert!((rows[0].on_diagonal[1] - 7.5).abs() < 1e-10);
        let ratio = rows[1].off_diagonal[0] / 50.0;
        assert!((ratio - 2.0).abs() <= 0.04, "{ratio}");
        let same = non_holder_demo(&[3.0], 0.0).unwrap();
        assert_eq!(same[0].on_diagonal, same[0].off_diagonal);
    }

    #[test]
    fn test_function_gradient_vanishes_outside_slab() {
        let r = 4.0;
        for x in [-10.0, -2.0001, 2.0001, 7.0] {
            assert_eq!(poincare_test_function(x, r).1, 0.0);
            assert_eq!(poincare_test_function(x, r).0.abs(), 1.0);
        }
        for x in [-2.0, 0.0, 1.3, 2.0] {
            let (f, g) = poincare_test_function(x, r);
            assert_eq!(g, 0.25);
            assert!((f - x / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn poincare_quotient_is_bounded_by_unit_variance() {
        let est = poincare_ratio(2.0, 1.0, 0.5, 2, 100_000, 0).unwrap();
        // |f| ≤ 1 and E_i[f²] ≥ ½ for each component
        assert!(est.variance <= 1.0);
        assert!(est.variance >= 0.5);
        assert!(est.dirichlet > 0.0);
        assert!(poincare_ratio(2.0, 0.5, 1.0, 2, 10, 0).is_err());
    }
}
