//! Per-class local autoencoders.
//!
//! Instances are split by class (source labels, target pseudo-labels) and
//! each subset gets its own denoising autoencoder, penalized by the marginal
//! MMD between the subset's source and target members. Classes are solved
//! independently. Encoded rows are scattered back to the original instance
//! order so they line up with the global representation.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::denoiser::{self, ExpectationStats, LayerWeights, NoiseSpec};
use crate::mmd::build_marginal_mmd;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubset {
    pub class: usize,
    /// Source members followed by target members, each in original order.
    pub data: Array2<f64>,
    pub n_source: usize,
    /// Row of the original `[X_S; X_T]` stacking for each subset row.
    pub origin_index: Vec<usize>,
}

impl ClassSubset {
    pub fn n_target(&self) -> usize {
        self.data.nrows() - self.n_source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    pub subsets: Vec<ClassSubset>,
    /// Classes missing from at least one domain.
    pub skipped_classes: Vec<usize>,
    pub total_rows: usize,
}

impl ClassPartition {
    /// Original rows not covered by any subset.
    pub fn uncovered_rows(&self) -> Vec<usize> {
        let mut covered = vec![false; self.total_rows];
        for s in &self.subsets {
            for &o in &s.origin_index {
                covered[o] = true;
            }
        }
        (0..self.total_rows).filter(|&r| !covered[r]).collect()
    }
}

pub fn partition_by_class(
    x: &ArrayView2<f64>,
    source_labels: &[usize],
    target_pseudo_labels: &[usize],
    class_count: usize,
) -> Result<ClassPartition> {
    let n_s = source_labels.len();
    let total_rows = n_s + target_pseudo_labels.len();
    if x.nrows() != total_rows {
        return Err(Error::DimensionMismatch(format!(
            "{} rows for {} labels",
            x.nrows(),
            total_rows
        )));
    }
    if let Some(&label) = source_labels
        .iter()
        .chain(target_pseudo_labels)
        .find(|&&l| l >= class_count)
    {
        return Err(Error::InvalidLabel { label, class_count });
    }
    let mut subsets = Vec::new();
    let mut skipped_classes = Vec::new();
    for c in 0..class_count {
        let src: Vec<usize> = (0..n_s).filter(|&i| source_labels[i] == c).collect();
        let tgt: Vec<usize> = (0..target_pseudo_labels.len())
            .filter(|&j| target_pseudo_labels[j] == c)
            .map(|j| n_s + j)
            .collect();
        if src.is_empty() || tgt.is_empty() {
            skipped_classes.push(c);
            continue;
        }
        let origin_index: Vec<usize> = src.iter().chain(&tgt).copied().collect();
        subsets.push(ClassSubset {
            class: c,
            data: x.select(Axis(0), &origin_index),
            n_source: src.len(),
            origin_index,
        });
    }
    if subsets.is_empty() {
        return Err(Error::AllClassesSkipped);
    }
    Ok(ClassPartition {
        subsets,
        skipped_classes,
        total_rows,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalWeights {
    pub per_class: BTreeMap<usize, LayerWeights>,
}

fn subset_mmd(subset: &ClassSubset) -> Result<crate::mmd::MmdMatrix> {
    build_marginal_mmd(subset.n_source, subset.n_target())
}

pub fn solve_class(
    subset: &ClassSubset,
    noise: &NoiseSpec,
    lambda: f64,
    beta: f64,
    append_bias: bool,
) -> Result<LayerWeights> {
    let m = subset_mmd(subset)?;
    denoiser::solve_layer(&subset.data.view(), noise, lambda, beta, Some(&m), append_bias)
        .map_err(|e| e.with_class(subset.class))
}

/// Expectation matrices for one class subset, `E[Q₂]` included.
pub fn class_stats(subset: &ClassSubset, noise: &NoiseSpec) -> Result<ExpectationStats> {
    let m = subset_mmd(subset)?;
    denoiser::expected_stats(&subset.data.view(), noise, Some(&m))
}

pub fn solve_mmda(
    partition: &ClassPartition,
    noise: &NoiseSpec,
    lambda: f64,
    beta: f64,
    append_bias: bool,
) -> Result<LocalWeights> {
    let solved: Vec<(usize, LayerWeights)> = partition
        .subsets
        .par_iter()
        .map(|s| solve_class(s, noise, lambda, beta, append_bias).map(|w| (s.class, w)))
        .collect::<Result<_>>()?;
    Ok(LocalWeights {
        per_class: solved.into_iter().collect(),
    })
}

/// Next-layer partition: each subset's rows replaced by `tanh(rows · W^(c))`.
pub fn encode_subsets(partition: &ClassPartition, weights: &LocalWeights) -> Result<ClassPartition> {
    let subsets = partition
        .subsets
        .iter()
        .map(|s| {
            let w = weights
                .per_class
                .get(&s.class)
                .ok_or_else(|| Error::InvalidParameter(format!("no local weights for class {}", s.class)))?;
            Ok(ClassSubset {
                class: s.class,
                data: denoiser::encode(&s.data.view(), w)?,
                n_source: s.n_source,
                origin_index: s.origin_index.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClassPartition {
        subsets,
        skipped_classes: partition.skipped_classes.clone(),
        total_rows: partition.total_rows,
    })
}

/// Scatters subset rows back to the original instance order.
///
/// Rows not covered by any subset (skipped classes) stay zero; they are
/// returned in the second slot.
pub fn scatter(partition: &ClassPartition, total_rows: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    let width = partition.subsets.first().map_or(0, |s| s.data.ncols());
    let mut out = Array2::zeros((total_rows, width));
    let mut covered = vec![false; total_rows];
    for s in &partition.subsets {
        if s.data.ncols() != width {
            return Err(Error::DimensionMismatch("subsets differ in width".into()));
        }
        for (row, &origin) in s.data.outer_iter().zip(&s.origin_index) {
            if origin >= total_rows {
                return Err(Error::InvalidParameter(format!(
                    "origin index {origin} outside {total_rows} rows"
                )));
            }
            out.row_mut(origin).assign(&row);
            covered[origin] = true;
        }
    }
    let zero_rows = (0..total_rows).filter(|&r| !covered[r]).collect();
    Ok((out, zero_rows))
}

/// Encodes every subset and restores the original instance order into a
/// `total_rows × d` matrix. Also returns the rows left at zero.
pub fn encode_local(
    partition: &ClassPartition,
    weights: &LocalWeights,
    total_rows: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    scatter(&encode_subsets(partition, weights)?, total_rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_partition() {
        let x = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        let p = partition_by_class(&x.view(), &[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(p.subsets.len(), 2);
        assert_eq!(p.subsets[0].origin_index, vec![0, 2]);
        assert_eq!(p.subsets[1].origin_index, vec![1, 3]);
        assert_eq!(p.subsets[1].data, array![[2.0, 0.0], [4.0, 0.0]]);
        assert!(p.skipped_classes.is_empty());
    }

    #[test]
    fn single_class_partition_is_the_input() {
        let x = array![[1.0], [2.0], [3.0]];
        let p = partition_by_class(&x.view(), &[0, 0], &[0], 1).unwrap();
        assert_eq!(p.subsets[0].data, x);
        assert_eq!(p.subsets[0].n_source, 2);
    }

    #[test]
    fn missing_target_class_is_skipped() {
        let x = Array2::<f64>::zeros((4, 2));
        let p = partition_by_class(&x.view(), &[0, 1], &[0, 0], 2).unwrap();
        assert_eq!(p.skipped_classes, vec![1]);
        assert_eq!(p.uncovered_rows(), vec![1]);
        assert!(matches!(
            partition_by_class(&x.view(), &[0, 0], &[1, 1], 2),
            Err(Error::AllClassesSkipped)
        ));
    }

    #[test]
    fn zero_weights_give_zero_rows() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let p = partition_by_class(&x.view(), &[0, 0], &[0], 1).unwrap();
        let mut w = LocalWeights::default();
        w.per_class.insert(0, LayerWeights::from_matrix(Array2::zeros((2, 2))));
        let (h, zero_rows) = encode_local(&p, &w, 3).unwrap();
        assert_eq!(h, Array2::<f64>::zeros((3, 2)));
        assert!(zero_rows.is_empty());
    }

    #[test]
    fn skipped_rows_are_exactly_the_zero_rows() {
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let p = partition_by_class(&x.view(), &[0, 1, 0], &[0, 0], 2).unwrap();
        let mut w = LocalWeights::default();
        w.per_class.insert(0, LayerWeights::from_matrix(array![[1.0]]));
        let (h, zero_rows) = encode_local(&p, &w, 5).unwrap();
        assert_eq!(zero_rows, vec![1]);
        for r in 0..5 {
            assert_eq!(h[[r, 0]] == 0.0, r == 1);
        }
    }

    #[test]
    fn origin_out_of_range_is_an_error() {
        let mut p = partition_by_class(&array![[1.0], [2.0]].view(), &[0], &[0], 1).unwrap();
        p.subsets[0].origin_index[1] = 7;
        let mut w = LocalWeights::default();
        w.per_class.insert(0, LayerWeights::from_matrix(array![[1.0]]));
        assert!(encode_local(&p, &w, 2).is_err());
    }

    #[test]
    fn missing_weights_are_an_error() {
        let p = partition_by_class(&array![[1.0], [2.0]].view(), &[0], &[0], 1).unwrap();
        assert!(encode_local(&p, &LocalWeights::default(), 2).is_err());
    }
}
