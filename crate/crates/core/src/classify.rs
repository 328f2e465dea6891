//! Linear SVM (L2-regularized hinge loss) for pseudo-labeling and scoring.
//!
//! Each binary problem minimizes
//!
//! ```text
//! ½‖w‖² + C Σᵢ max(0, 1 − yᵢ (w·xᵢ + b))
//! ```
//!
//! with the intercept folded in as a constant feature (so it is regularized
//! too), solved by dual coordinate descent. Training stops once the duality
//! gap falls below `tol` times the primal objective, which bounds any further
//! relative decrease of the objective by `tol`. More than two classes use
//! one-vs-rest; predictions take the arg-max score, ties to the lowest class.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// Hinge-loss weight `C`.
    pub c: f64,
    /// Maximum number of passes over the data.
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 1000,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    /// Final primal objective, summed over the binary sub-problems.
    pub loss: f64,
    /// Largest epoch count among the sub-problems.
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// One row per class, or a single row scoring class 1 for binary models.
    pub weights: Array2<f64>,
    pub intercepts: Array1<f64>,
    pub class_count: usize,
    pub info: TrainingInfo,
}

struct BinaryFit {
    w: Array1<f64>,
    b: f64,
    loss: f64,
    epochs: usize,
    converged: bool,
}

fn train_binary(x: &ArrayView2<f64>, y: &[f64], params: &SvmParams, seed: u64) -> BinaryFit {
    let (n, d) = x.dim();
    let c = params.c;
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    // squared norms of the augmented rows [x, 1]
    let diag: Vec<f64> = x.outer_iter().map(|r| r.dot(&r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(seed);
    let mut loss = f64::INFINITY;
    let mut epochs = 0;
    let mut converged = false;
    while epochs < params.max_iter {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let xi = x.row(i);
            let g = y[i] * (xi.dot(&w) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    w.scaled_add(step, &xi);
                    b += step;
                }
            }
        }
        let norm2 = w.dot(&w) + b * b;
        let hinge: f64 = x
            .outer_iter()
            .zip(y)
            .map(|(r, &yi)| (1.0 - yi * (r.dot(&w) + b)).max(0.0))
            .sum();
        loss = 0.5 * norm2 + c * hinge;
        let dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        if loss - dual <= params.tol * loss.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    BinaryFit {
        w,
        b,
        loss,
        epochs,
        converged,
    }
}

/// Trains a linear SVM on rows of `x` with labels in `0..class_count`, where
/// `class_count` is one more than the largest label.
pub fn train_linear(x: &ArrayView2<f64>, y: &[usize], params: &SvmParams) -> Result<LinearModel> {
    let class_count = y.iter().max().map_or(0, |m| m + 1);
    train_linear_classes(x, y, class_count, params)
}

/// Like [`train_linear`] with an explicit class count. Classes without
/// training instances get an all-negative one-vs-rest model.
pub fn train_linear_classes(
    x: &ArrayView2<f64>,
    y: &[usize],
    class_count: usize,
    params: &SvmParams,
) -> Result<LinearModel> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows and {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite training features".into()));
    }
    if params.c.is_nan() || params.c <= 0.0 || params.tol.is_nan() || params.tol <= 0.0 || params.max_iter == 0 {
        return Err(Error::InvalidParameter(format!("bad SVM parameters {params:?}")));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= class_count) {
        return Err(Error::InvalidLabel { label, class_count });
    }
    let mut present = vec![false; class_count];
    y.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }

    let rows = if class_count == 2 { 1 } else { class_count };
    let fits: Vec<BinaryFit> = (0..rows)
        .into_par_iter()
        .map(|k| {
            let positive = if rows == 1 { 1 } else { k };
            let targets: Vec<f64> = y.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }).collect();
            train_binary(x, &targets, params, derive_seed(params.seed, k as u64))
        })
        .collect();

    let d = x.ncols();
    let mut weights = Array2::zeros((rows, d));
    let mut intercepts = Array1::zeros(rows);
    for (k, fit) in fits.iter().enumerate() {
        weights.row_mut(k).assign(&fit.w);
        intercepts[k] = fit.b;
    }
    let info = TrainingInfo {
        loss: fits.iter().map(|f| f.loss).sum(),
        iterations: fits.iter().map(|f| f.epochs).max().unwrap_or(0),
        converged: fits.iter().all(|f| f.converged),
    };
    if !info.converged {
        log::debug!("SVM stopped at max_iter = {} before reaching tol", params.max_iter);
    }
    Ok(LinearModel {
        weights,
        intercepts,
        class_count,
        info,
    })
}

impl LinearModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Per-class scores, `n × class_count`. Binary models score class 0 as
    /// the negated class-1 score.
    pub fn decision_scores(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, input has {}",
                self.feature_dim(),
                x.ncols()
            )));
        }
        let raw = x.dot(&self.weights.t()) + &self.intercepts;
        if self.weights.nrows() == 1 && self.class_count == 2 {
            let mut scores = Array2::zeros((x.nrows(), 2));
            for (i, &s) in raw.column(0).iter().enumerate() {
                scores[[i, 0]] = -s;
                scores[[i, 1]] = s;
            }
            Ok(scores)
        } else {
            Ok(raw)
        }
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (row, b) in self.weights.outer_iter().zip(self.intercepts.iter()) {
            let mut parts = vec![b.to_string()];
            parts.extend(row.iter().map(|v| v.to_string()));
            writeln!(w, "{}", parts.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the one-line-per-class text format. A single line is a binary
    /// model.
    pub fn read_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            rows.push(row);
        }
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parse {
                line: 1,
                message: "model rows must share a non-zero width".into(),
            });
        }
        let n = rows.len();
        let intercepts = Array1::from_iter(rows.iter().map(|r| r[0]));
        let weights = Array2::from_shape_fn((n, width - 1), |(i, j)| rows[i][j + 1]);
        Ok(Self {
            weights,
            intercepts,
            class_count: if n == 1 { 2 } else { n },
            info: TrainingInfo {
                loss: f64::NAN,
                iterations: 0,
                converged: true,
            },
        })
    }
}

/// Arg-max of each row, ties to the lowest index.
pub fn argmax_rows(scores: &ArrayView2<f64>) -> Vec<usize> {
    scores
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &LinearModel, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.decision_scores(x)?.view()))
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("accuracy of zero instances".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}
