//! Seeded synthetic domain pairs for tests, demos and smoke benchmarks.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledMatrix;
use crate::rng::seeded;

/// Two-class Gaussian domains with a covariate shift.
///
/// Both domains draw class `k ∈ {0, 1}` from `N(±sep/2 · u, σ²I)`, with `u`
/// a fixed unit direction whose cosine with the all-ones direction is
/// `alignment`. Target instances are additionally translated by `shift · σ`
/// along every coordinate, so a source classifier that uses the aligned part
/// of `u` is biased on the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGaussianSpec {
    pub n_per_domain: usize,
    pub dim: usize,
    /// Target translation per coordinate, in units of `sigma`.
    pub shift: f64,
    /// Distance between the two class means.
    pub separation: f64,
    pub sigma: f64,
    /// Cosine between the class direction and the shift direction.
    pub alignment: f64,
    pub seed: u64,
}

impl Default for ShiftedGaussianSpec {
    fn default() -> Self {
        Self {
            n_per_domain: 200,
            dim: 20,
            shift: 1.5,
            separation: 3.0,
            sigma: 1.0,
            alignment: 0.2,
            seed: 7,
        }
    }
}

fn class_direction(dim: usize, alignment: f64) -> Array1<f64> {
    let ones = Array1::from_elem(dim, 1.0 / (dim as f64).sqrt());
    // alternating signs, minus their projection on the ones direction
    let mut v: Array1<f64> = Array1::from_shape_fn(dim, |j| if j % 2 == 0 { 1.0 } else { -1.0 });
    let along = v.dot(&ones);
    v.scaled_add(-along, &ones);
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    let a = alignment.clamp(-1.0, 1.0);
    v * (1.0 - a * a).sqrt() + ones * a
}

fn draw(spec: &ShiftedGaussianSpec, offset: f64, rng: &mut impl rand::Rng) -> LabeledMatrix {
    let normal = Normal::new(0.0, spec.sigma).expect("positive sigma");
    let u = class_direction(spec.dim, spec.alignment);
    let mut x = Array2::zeros((spec.n_per_domain, spec.dim));
    let mut labels = Vec::with_capacity(spec.n_per_domain);
    for i in 0..spec.n_per_domain {
        let class = i % 2;
        let sign = if class == 1 { 0.5 } else { -0.5 };
        for j in 0..spec.dim {
            x[[i, j]] = sign * spec.separation * u[j] + offset + normal.sample(rng);
        }
        labels.push(class);
    }
    LabeledMatrix::new(x, Some(labels)).expect("labels match rows")
}

/// Returns labeled `(source, target)` matrices.
pub fn shifted_gaussian_pair(spec: &ShiftedGaussianSpec) -> (LabeledMatrix, LabeledMatrix) {
    let mut rng = seeded(spec.seed);
    let source = draw(spec, 0.0, &mut rng);
    let target = draw(spec, spec.shift * spec.sigma, &mut rng);
    (source, target)
}

/// Two independent standard-normal samples of the same distribution.
pub fn identical_domains(n: usize, dim: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let a = Array2::from_shape_fn((n, dim), |_| normal.sample(&mut rng));
    let b = Array2::from_shape_fn((n, dim), |_| normal.sample(&mut rng));
    (a, b)
}
