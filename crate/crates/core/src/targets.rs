//! Named benchmark targets.

use rand::Rng;

use crate::error::Result;
use crate::mixture::GaussianMixture;
use crate::rng::{purpose, stream};

/// Sixteen equally weighted unit-variance Gaussians in the plane, centres
/// uniform on `[−half_width, half_width]²` and drawn from `seed`.
pub fn sixteen_modes(seed: u64, half_width: f64) -> GaussianMixture {
    let mut rng = stream(seed, &[purpose::TARGET_LAYOUT]);
    let means: Vec<Vec<f64>> = (0..16)
        .map(|_| {
            (0..2)
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect()
        })
        .collect();
    GaussianMixture::isotropic(vec![1.0 / 16.0; 16], means, &[1.0; 16])
        .expect("unit-variance mixture is valid")
}

/// Three equally weighted planar Gaussians at distance `radius` from the
/// origin (angles 90°, 210°, 330°) with covariances `I`, `I/2`, `I/4`.
pub fn three_modes(radius: f64) -> Result<GaussianMixture> {
    let means = [90.0_f64, 210.0, 330.0]
        .iter()
        .map(|deg| {
            let a = deg.to_radians();
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect();
    GaussianMixture::isotropic(vec![1.0 / 3.0; 3], means, &[1.0, 0.5, 0.25])
}

/// `½ N(0, diag(1, ½)) + ½ N(0, diag(½, 1))`, whose score is not Hölder
/// continuous.
pub fn non_holder() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        vec![
            vec![vec![1.0, 0.0], vec![0.0, 0.5]],
            vec![vec![0.5, 0.0], vec![0.0, 1.0]],
        ],
    )
    .expect("fixed mixture is valid")
}

/// `½ N(R e₁, λ_max I) + ½ N(−R e₁, λ_min I)` in dimension `dim`.
pub fn asymmetric_pair(
    radius: f64,
    lambda_max: f64,
    lambda_min: f64,
    dim: usize,
) -> Result<GaussianMixture> {
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    plus[0] = radius;
    minus[0] = -radius;
    GaussianMixture::isotropic(vec![0.5, 0.5], vec![plus, minus], &[lambda_max, lambda_min])
}
