use proptest::prelude::*;
use revdiff::estimators::{self, NoiseLevel};
use revdiff::metrics::{wasserstein2, W2Method};
use revdiff::rng::stream;
use revdiff::{GaussianMixture, Potential, SampleMatrix};

/// Random SPD matrix `A Aᵀ + δ I`.
fn spd(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (prop::collection::vec(-1.5f64..1.5, dim * dim), 0.05f64..1.0).prop_map(move |(a, delta)| {
        (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| {
                        let dot: f64 = (0..dim).map(|k| a[i * dim + k] * a[j * dim + k]).sum();
                        dot + if i == j { delta } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    })
}

pub fn mixture(max_components: usize, max_dim: usize) -> impl Strategy<Value = GaussianMixture> {
    (1..=max_components, 1..=max_dim).prop_flat_map(|(p, d)| {
        (
            prop::collection::vec(0.1f64..1.0, p),
            prop::collection::vec(prop::collection::vec(-4.0f64..4.0, d), p),
            prop::collection::vec(spd(d), p),
        )
            .prop_map(|(w, means, covs)| {
                let total: f64 = w.iter().sum();
                let weights = w.iter().map(|v| v / total).collect();
                GaussianMixture::new(weights, means, covs).unwrap()
            })
    })
}

fn point_cloud(max_n: usize, dim: usize) -> impl Strategy<Value = SampleMatrix> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-3.0f64..3.0, n * dim)
            .prop_map(move |v| SampleMatrix::from_flat(dim, v).unwrap())
    })
}

fn brute_force_w2(a: &SampleMatrix, b: &SampleMatrix) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, cost: &dyn Fn(&[usize]) -> f64, best: &mut f64) {
        if k == perm.len() {
            *best = best.min(cost(perm));
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, cost, best);
            perm.swap(k, i);
        }
    }
    let n = a.len();
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| {
                a.row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    };
    let mut best = f64::INFINITY;
    permute(0, &mut (0..n).collect(), &cost, &mut best);
    best.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn score_matches_finite_difference_of_log_density(
        gm in mixture(4, 3),
        x in prop::collection::vec(-6.0f64..6.0, 3),
    ) {
        let x = &x[..gm.dim()];
        let score = gm.score(x).unwrap();
        let h = 1e-5;
        let mut p = x.to_vec();
        for i in 0..gm.dim() {
            p[i] = x[i] + h;
            let up = gm.log_density(&p).unwrap();
            p[i] = x[i] - h;
            let down = gm.log_density(&p).unwrap();
            p[i] = x[i];
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd - score[i]).abs() <= 1e-4 * score[i].abs().max(1.0), "fd {fd} vs {}", score[i]);
        }
    }

    #[test]
    fn gradient_of_potential_is_negative_score(gm in mixture(3, 3), x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let x = &x[..gm.dim()];
        let mut g = vec![0.0; gm.dim()];
        gm.gradient(x, &mut g).unwrap();
        let s = gm.score(x).unwrap();
        for (a, b) in g.iter().zip(&s) {
            prop_assert_eq!(*a, -*b);
        }
        prop_assert_eq!(gm.value(x), -gm.log_density(x).unwrap());
    }

    #[test]
    fn responsibilities_form_a_distribution(gm in mixture(5, 3), x in prop::collection::vec(-50.0f64..50.0, 3)) {
        let g = gm.responsibilities(&x[..gm.dim()]).unwrap();
        prop_assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noising_composes(gm in mixture(3, 2), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        let two_step = gm.noised(s).unwrap().noised(t).unwrap();
        let direct = gm.noised(s + t).unwrap();
        for i in 0..gm.num_components() {
            for (a, b) in two_step.mean(i).iter().zip(direct.mean(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in two_step.covariance(i).iter().zip(direct.covariance(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_w2_matches_brute_force(a in point_cloud(7, 2), seed in any::<u64>()) {
        let b = SampleMatrix::from_flat(
            2,
            a.as_flat().iter().enumerate().map(|(i, v)| v.sin() * 2.0 + ((seed >> (i % 60)) & 7) as f64 * 0.3).collect(),
        ).unwrap();
        let exact = wasserstein2(&a, &b, W2Method::ExactAssignment).unwrap().distance;
        let brute = brute_force_w2(&a, &b);
        prop_assert!((exact - brute).abs() <= 1e-12 * brute.max(1.0), "{exact} vs {brute}");
    }

    #[test]
    fn w2_is_a_metric_on_point_clouds(a in point_cloud(6, 2), shift_b in -2.0f64..2.0, shift_c in -2.0f64..2.0) {
        let shifted = |s: f64| SampleMatrix::from_flat(2, a.as_flat().iter().enumerate().map(|(i, v)| v + s * (i % 3) as f64).collect()).unwrap();
        let b = shifted(shift_b);
        let c = shifted(shift_c);
        let w = |x: &SampleMatrix, y: &SampleMatrix| wasserstein2(x, y, W2Method::ExactAssignment).unwrap().distance;
        prop_assert!(w(&a, &a) <= 1e-12);
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-12);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
    }

    #[test]
    fn self_normalized_estimate_stays_in_the_hull(
        gm in mixture(3, 2),
        z in prop::collection::vec(-8.0f64..8.0, 2),
        t in 0.05f64..3.0,
        seed in any::<u64>(),
    ) {
        // ŝ is −1/(1−λ) times a convex combination of the draws, so its norm is
        // bounded by the largest draw.
        let level = NoiseLevel::new(t).unwrap();
        let z = &z[..gm.dim()];
        let mut rng = stream(seed, &[0]);
        let draws: Vec<Vec<f64>> = (0..64)
            .map(|_| {
                (0..gm.dim())
                    .map(|_| level.one_minus_lambda().sqrt() * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let s = estimators::self_normalized_from_draws(&gm, &level, z, &draws).unwrap();
        let largest = draws.iter().map(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= largest / level.one_minus_lambda() * (1.0 + 1e-12));
    }
}
