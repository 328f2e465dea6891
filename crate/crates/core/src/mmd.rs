//! Maximum mean discrepancy coefficient matrices for the linear kernel.
//!
//! Instances are ordered source rows first, then target rows. The marginal
//! matrix has entries `1/(n_s n_s)` inside the source block, `1/(n_t n_t)`
//! inside the target block and `-1/(n_s n_t)` across blocks; the
//! class-conditional matrix for class `c` is the same pattern restricted to
//! the members of `c`.
//!
//! Both are outer products `v vᵀ` of a signed indicator `v` (`1/n_s` on the
//! source members, `-1/n_t` on the target members), so an [`MmdMatrix`] is
//! stored as a weighted sum of such terms and only densified on request.
//! `Xᵀ M X` then costs `O(n d + d²)` per term instead of `O(n² d)`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdKind {
    Marginal,
    /// 0-based class index.
    Conditional(usize),
    Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
struct RankOne {
    weight: f64,
    v: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdMatrix {
    kind: MmdKind,
    size: usize,
    terms: Vec<RankOne>,
    skipped: bool,
}

impl MmdMatrix {
    pub fn kind(&self) -> MmdKind {
        self.kind
    }

    /// Side length `n_s + n_t`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// True for a conditional matrix whose class is missing from one domain;
    /// such a matrix is all zeros.
    pub fn is_skipped(&self) -> bool {
        self.skipped
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.size, self.size));
        for t in &self.terms {
            for (i, &vi) in t.v.iter().enumerate() {
                if vi == 0.0 {
                    continue;
                }
                for (j, &vj) in t.v.iter().enumerate() {
                    m[[i, j]] += t.weight * vi * vj;
                }
            }
        }
        m
    }

    pub fn scaled(&self, factor: f64) -> MmdMatrix {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.weight *= factor;
        }
        out
    }

    /// `Xᵀ M X` for a matrix whose rows follow the same instance order.
    pub fn congruence(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.size {
            return Err(Error::DimensionMismatch(format!(
                "MMD matrix of size {} applied to {} rows",
                self.size,
                x.nrows()
            )));
        }
        let d = x.ncols();
        let mut out = Array2::zeros((d, d));
        for t in &self.terms {
            let mean_diff = x.t().dot(&t.v);
            let col = mean_diff.view().insert_axis(ndarray::Axis(1));
            let row = mean_diff.view().insert_axis(ndarray::Axis(0));
            out.scaled_add(t.weight, &col.dot(&row));
        }
        Ok(out)
    }

    /// `zᵀ M z`.
    pub fn quadratic_form(&self, z: &ArrayView1<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let s = t.v.dot(z);
                t.weight * s * s
            })
            .sum()
    }

    /// Dense coefficients as CSV with a `c1..cn` header, readable by
    /// [`crate::dataio::read_csv`].
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((1..=self.size).map(|j| format!("c{j}")))?;
        for row in self.to_dense().outer_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn build_marginal_mmd(n_s: usize, n_t: usize) -> Result<MmdMatrix> {
    if n_s == 0 || n_t == 0 {
        return Err(Error::Empty(format!(
            "marginal MMD needs both domains (n_s = {n_s}, n_t = {n_t})"
        )));
    }
    let mut v = Array1::zeros(n_s + n_t);
    v.slice_mut(ndarray::s![..n_s]).fill(1.0 / n_s as f64);
    v.slice_mut(ndarray::s![n_s..]).fill(-1.0 / n_t as f64);
    Ok(MmdMatrix {
        kind: MmdKind::Marginal,
        size: n_s + n_t,
        terms: vec![RankOne { weight: 1.0, v }],
        skipped: false,
    })
}

/// Conditional matrix for class `c` from source labels and target
/// pseudo-labels.
///
/// A class present in only one domain yields a zero matrix flagged as
/// skipped; a class present in neither is an error.
pub fn build_conditional_mmd(
    source_labels: &[usize],
    target_labels: &[usize],
    c: usize,
    class_count: usize,
) -> Result<MmdMatrix> {
    if c >= class_count {
        return Err(Error::InvalidLabel { label: c, class_count });
    }
    if let Some(&label) = source_labels.iter().chain(target_labels).find(|&&l| l >= class_count) {
        return Err(Error::InvalidLabel { label, class_count });
    }
    let n_s = source_labels.len();
    let size = n_s + target_labels.len();
    let ns_c = source_labels.iter().filter(|&&l| l == c).count();
    let nt_c = target_labels.iter().filter(|&&l| l == c).count();
    let kind = MmdKind::Conditional(c);
    match (ns_c, nt_c) {
        (0, 0) => Err(Error::EmptyClass { class: c }),
        (0, _) | (_, 0) => Ok(MmdMatrix {
            kind,
            size,
            terms: Vec::new(),
            skipped: true,
        }),
        _ => {
            let mut v = Array1::zeros(size);
            for (i, _) in source_labels.iter().enumerate().filter(|(_, &l)| l == c) {
                v[i] = 1.0 / ns_c as f64;
            }
            for (j, _) in target_labels.iter().enumerate().filter(|(_, &l)| l == c) {
                v[n_s + j] = -1.0 / nt_c as f64;
            }
            Ok(MmdMatrix {
                kind,
                size,
                terms: vec![RankOne { weight: 1.0, v }],
                skipped: false,
            })
        }
    }
}

pub fn sum_mmd_matrices(matrices: &[MmdMatrix]) -> Result<MmdMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Empty("no MMD matrices to sum".into()))?;
    if let Some(m) = matrices.iter().find(|m| m.size != first.size) {
        return Err(Error::DimensionMismatch(format!(
            "MMD matrices of size {} and {}",
            first.size, m.size
        )));
    }
    Ok(MmdMatrix {
        kind: MmdKind::Aggregate,
        size: first.size,
        terms: matrices.iter().flat_map(|m| m.terms.iter().cloned()).collect(),
        skipped: false,
    })
}

/// Squared linear-kernel MMD: `‖mean(a) − mean(b)‖²` over rows.
pub fn mmd_squared_linear(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("MMD of an empty sample".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} and {} features",
            a.ncols(),
            b.ncols()
        )));
    }
    let ma = a.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mb = b.mean_axis(ndarray::Axis(0)).expect("non-empty");
    Ok((ma - mb).iter().map(|v| v * v).sum())
}
