//! Global autoencoder with joint distribution adaptation.
//!
//! The denoising objective over the stacked `[X_S; X_T]` is penalized by
//! `β` times the marginal MMD plus the class-conditional MMD of every class
//! present in both domains (target classes come from pseudo-labels). All
//! penalties share one `β`, and the aggregated matrix `ΣM_c` enters the
//! solve through `E[Q₂]`.

use ndarray::{Array2, ArrayView2};

use crate::denoiser::{self, ExpectationStats, LayerWeights, NoiseSpec};
use crate::mmd::{build_conditional_mmd, build_marginal_mmd, sum_mmd_matrices, MmdMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GlobalAdaptProblem<'a> {
    /// Source rows followed by target rows.
    pub x: ArrayView2<'a, f64>,
    pub source_labels: &'a [usize],
    pub target_pseudo_labels: &'a [usize],
    pub noise: NoiseSpec,
    pub lambda: f64,
    pub beta: f64,
    pub class_count: usize,
    pub append_bias: bool,
}

impl GlobalAdaptProblem<'_> {
    pub fn n_source(&self) -> usize {
        self.source_labels.len()
    }

    pub fn n_target(&self) -> usize {
        self.target_pseudo_labels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.n_source() + self.n_target() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for {} source and {} target labels",
                self.x.nrows(),
                self.n_source(),
                self.n_target()
            )));
        }
        if let Some(&label) = self
            .source_labels
            .iter()
            .chain(self.target_pseudo_labels)
            .find(|&&l| l >= self.class_count)
        {
            return Err(Error::InvalidLabel {
                label,
                class_count: self.class_count,
            });
        }
        Ok(())
    }
}

/// Aggregated `M₀ + Σ_c M_c` and the classes whose conditional term was
/// skipped.
#[derive(Debug, Clone)]
pub struct AdaptationMatrix {
    pub sum: MmdMatrix,
    pub skipped_classes: Vec<usize>,
}

pub fn adaptation_matrix(
    source_labels: &[usize],
    target_labels: &[usize],
    class_count: usize,
) -> Result<AdaptationMatrix> {
    let mut parts = vec![build_marginal_mmd(source_labels.len(), target_labels.len())?];
    let mut skipped_classes = Vec::new();
    for c in 0..class_count {
        match build_conditional_mmd(source_labels, target_labels, c, class_count) {
            Ok(m) if m.is_skipped() => skipped_classes.push(c),
            Ok(m) => parts.push(m),
            Err(Error::EmptyClass { .. }) => skipped_classes.push(c),
            Err(e) => return Err(e),
        }
    }
    if skipped_classes.len() == class_count {
        log::warn!("no class present in both domains; using the marginal MMD term only");
    }
    Ok(AdaptationMatrix {
        sum: sum_mmd_matrices(&parts)?,
        skipped_classes,
    })
}

#[derive(Debug, Clone)]
pub struct GlobalSolution {
    pub weights: LayerWeights,
    pub skipped_classes: Vec<usize>,
}

pub fn solve_mda_ad(problem: &GlobalAdaptProblem<'_>) -> Result<GlobalSolution> {
    problem.validate()?;
    let adapt = adaptation_matrix(problem.source_labels, problem.target_pseudo_labels, problem.class_count)?;
    let weights = solve_with_matrix(problem, &adapt.sum)?;
    Ok(GlobalSolution {
        weights,
        skipped_classes: adapt.skipped_classes,
    })
}

/// Solve with a prebuilt aggregated MMD matrix; stacked layers reuse the
/// same matrix because it only depends on the labels.
pub fn solve_with_matrix(problem: &GlobalAdaptProblem<'_>, mmd_sum: &MmdMatrix) -> Result<LayerWeights> {
    problem.validate()?;
    denoiser::solve_layer(
        &problem.x,
        &problem.noise,
        problem.lambda,
        problem.beta,
        Some(mmd_sum),
        problem.append_bias,
    )
}

/// Expectation matrices of the problem including `E[Q₂]`.
pub fn problem_stats(problem: &GlobalAdaptProblem<'_>) -> Result<ExpectationStats> {
    problem.validate()?;
    let adapt = adaptation_matrix(problem.source_labels, problem.target_pseudo_labels, problem.class_count)?;
    if problem.append_bias {
        denoiser::expected_stats_with_bias(&problem.x, &problem.noise, Some(&adapt.sum))
    } else {
        denoiser::expected_stats(&problem.x, &problem.noise, Some(&adapt.sum))
    }
}

pub fn encode_global(x: &ArrayView2<f64>, weights: &LayerWeights) -> Result<Array2<f64>> {
    denoiser::encode(x, weights)
}
