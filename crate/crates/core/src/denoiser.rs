//! Marginalized denoising autoencoder layer.
//!
//! The reconstruction `‖X − X̃ W‖²` is averaged over infinitely many
//! feature-removal corruptions `X̃` of `X`. With `U = XᵀX` and survival
//! probability `q = 1 − p` the expectations are
//!
//! ```text
//! E[P]   = q U
//! E[Q]ij = q² Uij  (i ≠ j),   q Uii  (i = j)
//! ```
//!
//! and the layer mapping is the solution of `(E[Q] + λI + βE[Q₂]) W = E[P]`,
//! where `E[Q₂]` applies the same scaling pattern to `Xᵀ M X` for an MMD
//! matrix `M` (zero when no adaptation term is used).

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, frobenius};
use crate::mmd::MmdMatrix;
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Feature-removal corruption: every entry is zeroed independently with
/// probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    p: f64,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "corruption probability {p} outside [0, 1)"
            )));
        }
        Ok(Self { p, seed })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn survival(&self) -> f64 {
        1.0 - self.p
    }
}

/// Expected scatter matrices of the corrupted input.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationStats {
    /// `E[X̃ᵀX̃]`, symmetric.
    pub q: Array2<f64>,
    /// `E[X̃ᵀX]`.
    pub p_cross: Array2<f64>,
    /// `E[Q₂]` built from `Xᵀ M X`, when an MMD matrix was supplied.
    pub q2: Option<Array2<f64>>,
    /// `‖X‖²_F`, the constant term of the reconstruction objective.
    pub energy: f64,
}

/// Mapping matrix of one layer. With a bias column the matrix has `d + 1`
/// rows, the last acting on a constant input of one.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w: Array2<f64>,
    pub bias: bool,
    /// Relative residual of the linear solve that produced `w`.
    pub residual: f64,
}

impl LayerWeights {
    pub fn from_matrix(w: Array2<f64>) -> Self {
        Self {
            w,
            bias: false,
            residual: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows() - usize::from(self.bias)
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }
}

fn scale_pattern(u: &mut Array2<f64>, survival: &Array1<f64>) {
    let n = u.nrows();
    for i in 0..n {
        for j in 0..n {
            u[[i, j]] *= if i == j { survival[i] } else { survival[i] * survival[j] };
        }
    }
}

fn with_bias_column(x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(s![.., ..x.ncols()]).assign(x);
    out
}

fn stats_for(
    input: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    survival: &Array1<f64>,
    mmd_sum: Option<&MmdMatrix>,
) -> Result<ExpectationStats> {
    if input.nrows() == 0 {
        return Err(Error::Empty("no instances".into()));
    }
    let mut q = input.t().dot(input);
    linalg::symmetrize(&mut q);
    scale_pattern(&mut q, survival);

    let mut p_cross = input.t().dot(targets);
    for (mut row, &s) in p_cross.outer_iter_mut().zip(survival.iter()) {
        row *= s;
    }

    let q2 = mmd_sum
        .map(|m| -> Result<Array2<f64>> {
            let mut u2 = m.congruence(input)?;
            linalg::symmetrize(&mut u2);
            scale_pattern(&mut u2, survival);
            Ok(u2)
        })
        .transpose()?;

    Ok(ExpectationStats {
        q,
        p_cross,
        q2,
        energy: targets.iter().map(|v| v * v).sum(),
    })
}

/// Expectation matrices for `x` under `noise`; `E[Q₂]` is included when an
/// (aggregated) MMD matrix over the rows of `x` is supplied.
pub fn expected_stats(x: &ArrayView2<f64>, noise: &NoiseSpec, mmd_sum: Option<&MmdMatrix>) -> Result<ExpectationStats> {
    let survival = Array1::from_elem(x.ncols(), noise.survival());
    stats_for(x, x, &survival, mmd_sum)
}

/// Like [`expected_stats`] with a constant, never-corrupted bias feature
/// appended to the input. `q` is `(d+1)×(d+1)` and `p_cross` is `(d+1)×d`.
pub fn expected_stats_with_bias(
    x: &ArrayView2<f64>,
    noise: &NoiseSpec,
    mmd_sum: Option<&MmdMatrix>,
) -> Result<ExpectationStats> {
    let input = with_bias_column(x);
    let mut survival = Array1::from_elem(x.ncols() + 1, noise.survival());
    survival[x.ncols()] = 1.0;
    stats_for(&input.view(), x, &survival, mmd_sum)
}

fn corrupt_into<R: Rng>(x: &ArrayView2<f64>, p: f64, rng: &mut R) -> Array2<f64> {
    let mut out = x.to_owned();
    if p > 0.0 {
        out.iter_mut().for_each(|v| {
            if rng.random_bool(p) {
                *v = 0.0;
            }
        });
    }
    out
}

/// One explicitly corrupted copy of `x`, deterministic in `noise.seed()`.
pub fn corrupt_sample(x: &ArrayView2<f64>, noise: &NoiseSpec) -> Array2<f64> {
    let mut rng = seeded(noise.seed);
    corrupt_into(x, noise.p, &mut rng)
}

const SAMPLE_BLOCK: usize = 4096;

/// Empirical `(1/K) Σ X̃ᵢᵀX̃ᵢ` and `(1/K) Σ X̃ᵢᵀX` over `samples` corruptions.
///
/// Samples are drawn in fixed-size blocks, each seeded from `noise.seed()`
/// and its block index, and summed in block order; `workers` only bounds
/// concurrency, so the output depends on `(noise, samples)` alone.
pub fn sampled_stats(
    x: &ArrayView2<f64>,
    noise: &NoiseSpec,
    samples: usize,
    workers: usize,
) -> Result<ExpectationStats> {
    if samples == 0 || workers == 0 {
        return Err(Error::InvalidParameter("samples and workers must be positive".into()));
    }
    let d = x.ncols();
    let p = noise.p;
    let blocks = samples.div_ceil(SAMPLE_BLOCK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let partials: Vec<(Array2<f64>, Array2<f64>)> = pool.install(|| {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let count = SAMPLE_BLOCK.min(samples - b * SAMPLE_BLOCK);
                let mut rng = seeded(derive_seed(noise.seed, b as u64));
                let mut q = Array2::<f64>::zeros((d, d));
                let mut pc = Array2::<f64>::zeros((d, d));
                let mut kept = vec![0.0; d];
                for _ in 0..count {
                    for row in x.outer_iter() {
                        for (k, &v) in kept.iter_mut().zip(row.iter()) {
                            *k = if p > 0.0 && rng.random_bool(p) { 0.0 } else { v };
                        }
                        for i in 0..d {
                            let ki = kept[i];
                            if ki == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                q[[i, j]] += ki * kept[j];
                                pc[[i, j]] += ki * row[j];
                            }
                        }
                    }
                }
                (q, pc)
            })
            .collect()
    });
    let mut q = Array2::zeros((d, d));
    let mut p_cross = Array2::zeros((d, d));
    for (pq, pp) in partials {
        q += &pq;
        p_cross += &pp;
    }
    q /= samples as f64;
    p_cross /= samples as f64;
    Ok(ExpectationStats {
        q,
        p_cross,
        q2: None,
        energy: x.iter().map(|v| v * v).sum(),
    })
}

/// Solves `(E[Q] + λI + βE[Q₂]) W = E[P]`.
pub fn solve_from_stats(stats: &ExpectationStats, lambda: f64, beta: f64) -> Result<Array2<f64>> {
    solve_system(stats, lambda, beta).map(|(w, _)| w)
}

fn solve_system(stats: &ExpectationStats, lambda: f64, beta: f64) -> Result<(Array2<f64>, f64)> {
    if !(lambda >= 0.0 && beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} and beta = {beta} must be non-negative"
        )));
    }
    let mut a = stats.q.clone();
    a.diag_mut().iter_mut().for_each(|v| *v += lambda);
    if let Some(q2) = &stats.q2 {
        a.scaled_add(beta, q2);
    }
    linalg::solve_spd(&a, &stats.p_cross).map_err(|e| match e {
        Error::Singular { class, hint } if lambda == 0.0 => Error::Singular {
            class,
            hint: format!("{hint} (lambda is 0; choose lambda > 0)"),
        },
        other => other,
    })
}

/// Solves one layer, optionally with the MMD penalty `β tr(Wᵀ E[Q₂] W)`.
pub fn solve_layer(
    x: &ArrayView2<f64>,
    noise: &NoiseSpec,
    lambda: f64,
    beta: f64,
    mmd_sum: Option<&MmdMatrix>,
    append_bias: bool,
) -> Result<LayerWeights> {
    let stats = if append_bias {
        expected_stats_with_bias(x, noise, mmd_sum)?
    } else {
        expected_stats(x, noise, mmd_sum)?
    };
    let (w, residual) = solve_system(&stats, lambda, beta)?;
    Ok(LayerWeights {
        w,
        bias: append_bias,
        residual,
    })
}

/// Plain marginalized denoising autoencoder mapping
/// `W = (E[Q] + λI)⁻¹ E[P]`, computed as a linear solve.
pub fn solve_mda(x: &ArrayView2<f64>, noise: &NoiseSpec, lambda: f64) -> Result<LayerWeights> {
    solve_layer(x, noise, lambda, 0.0, None, false)
}

/// `tanh(x W)` on clean input.
pub fn encode(x: &ArrayView2<f64>, weights: &LayerWeights) -> Result<Array2<f64>> {
    if x.ncols() != weights.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} columns, weights expect {}",
            x.ncols(),
            weights.input_dim()
        )));
    }
    let mut out = if weights.bias {
        let d = weights.input_dim();
        let mut z = x.dot(&weights.w.slice(s![..d, ..]));
        z += &weights.w.row(d).insert_axis(Axis(0));
        z
    } else {
        x.dot(&weights.w)
    };
    out.mapv_inplace(f64::tanh);
    Ok(out)
}

/// Expected objective
/// `‖X‖² − 2⟨E[P], W⟩ + tr(WᵀE[Q]W) + λ‖W‖² + β tr(WᵀE[Q₂]W)`.
pub fn objective(stats: &ExpectationStats, w: &ArrayView2<f64>, lambda: f64, beta: f64) -> f64 {
    let cross: f64 = Zip::from(&stats.p_cross).and(w).fold(0.0, |acc, a, b| acc + a * b);
    let quad = |m: &Array2<f64>| -> f64 { Zip::from(&m.dot(w)).and(w).fold(0.0, |acc, a, b| acc + a * b) };
    let mut value = stats.energy - 2.0 * cross + quad(&stats.q) + lambda * frobenius(w).powi(2);
    if let Some(q2) = &stats.q2 {
        value += beta * quad(q2);
    }
    value
}

/// Analytic gradient `−2E[P] + 2E[Q]W + 2λW + 2βE[Q₂]W`.
pub fn gradient(stats: &ExpectationStats, w: &ArrayView2<f64>, lambda: f64, beta: f64) -> Array2<f64> {
    let mut g = stats.q.dot(w) * 2.0 - &stats.p_cross * 2.0;
    g.scaled_add(2.0 * lambda, w);
    if let Some(q2) = &stats.q2 {
        g.scaled_add(2.0 * beta, &q2.dot(w));
    }
    g
}
