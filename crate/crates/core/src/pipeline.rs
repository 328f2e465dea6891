//! Stacked dual-representation learning with pseudo-label refinement.
//!
//! 1. A linear SVM trained on the raw source features assigns the initial
//!    target pseudo-labels.
//! 2. For every outer round `z = 1..l`, using the current pseudo-labels:
//!    * the global stage stacks `z` adapted layers over all instances (H₁),
//!    * the local stage stacks `z` per-class layers and restores instance
//!      order (H₂),
//!    * an SVM trained on the source rows of `[H₁, H₂]` refreshes the target
//!      pseudo-labels.
//!
//! Every layer encodes the clean output of the previous one; corruption
//! only exists inside the expectation matrices. Both stages of a round read
//! the same pseudo-label snapshot.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::adapt_global::adaptation_matrix;
use crate::adapt_local::{encode_subsets, partition_by_class, scatter, solve_mmda};
use crate::classify::{accuracy, predict, train_linear_classes, LinearModel};
use crate::config::{AdaptConfig, Normalization};
use crate::dataio::{stack_rows, DomainPair};
use crate::denoiser::{self, NoiseSpec};
use crate::{Error, Result};

/// Which feature blocks feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Global and local blocks.
    Full,
    /// Global (adapted) block only.
    GlobalOnly,
    /// Local (per-class) block only.
    LocalOnly,
}

impl Variant {
    pub fn uses_global(self) -> bool {
        matches!(self, Variant::Full | Variant::GlobalOnly)
    }

    pub fn uses_local(self) -> bool {
        matches!(self, Variant::Full | Variant::LocalOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "ssrlda",
            Variant::GlobalOnly => "omda_ad",
            Variant::LocalOnly => "ommda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "ssrlda" => Ok(Variant::Full),
            "omda_ad" | "omdaad" | "global" => Ok(Variant::GlobalOnly),
            "ommda" | "local" => Ok(Variant::LocalOnly),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Stacked representations of all `n_s + n_t` instances, source rows first.
///
/// A block the variant does not use has zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DualRepresentation {
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub raw: Option<Array2<f64>>,
    /// Column offset of each layer within a block, plus the block width.
    pub layer_boundaries: Vec<usize>,
    pub n_source: usize,
    /// Instances whose local features are zero (class skipped or local
    /// stage fell back).
    pub local_zero_rows: Vec<usize>,
}

impl DualRepresentation {
    pub fn rows(&self) -> usize {
        self.h1.nrows().max(self.h2.nrows())
    }

    /// `[raw?, H₁, H₂]`.
    pub fn classifier_input(&self) -> Array2<f64> {
        let mut blocks: Vec<ArrayView2<f64>> = Vec::new();
        if let Some(raw) = &self.raw {
            blocks.push(raw.view());
        }
        blocks.push(self.h1.view());
        blocks.push(self.h2.view());
        ndarray::concatenate(Axis(1), &blocks).expect("blocks share row count")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub global_width: usize,
    pub local_width: usize,
    /// Accuracy of the refreshed pseudo-labels when target truth is known.
    pub pseudo_label_accuracy: Option<f64>,
    /// Largest relative residual among the layer solves of the round.
    pub max_residual: f64,
    pub skipped_classes: Vec<usize>,
    pub label_changes: usize,
    pub local_fallback: bool,
    pub classifier_loss: f64,
}

#[derive(Debug, Clone)]
pub struct SsrldaOutput {
    pub variant: Variant,
    pub model: LinearModel,
    pub representation: DualRepresentation,
    pub predictions: Vec<usize>,
    pub initial_predictions: Vec<usize>,
    /// Raw-feature SVM accuracy on the target, when truth is known.
    pub initial_accuracy: Option<f64>,
    pub trace: Vec<IterationTrace>,
}

impl SsrldaOutput {
    pub fn accuracy(&self, truth: &[usize]) -> Result<f64> {
        accuracy(&self.predictions, truth)
    }
}

pub fn normalize(x: &mut Array2<f64>, mode: Normalization) {
    if mode == Normalization::L2 {
        for mut row in x.outer_iter_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
}

struct StageOutput {
    features: Array2<f64>,
    max_residual: f64,
    skipped: Vec<usize>,
    zero_rows: Vec<usize>,
    fallback: bool,
}

fn global_stage(
    x0: &Array2<f64>,
    source_labels: &[usize],
    target_labels: &[usize],
    cfg: &AdaptConfig,
    noise: &NoiseSpec,
    class_count: usize,
    depth: usize,
) -> Result<StageOutput> {
    let adapt = adaptation_matrix(source_labels, target_labels, class_count)?;
    let mut layers = Vec::with_capacity(depth);
    let mut max_residual: f64 = 0.0;
    let mut input = x0.clone();
    for _ in 0..depth {
        let w = denoiser::solve_layer(
            &input.view(),
            noise,
            cfg.lambda,
            cfg.beta,
            Some(&adapt.sum),
            cfg.append_bias,
        )?;
        max_residual = max_residual.max(w.residual);
        input = denoiser::encode(&input.view(), &w)?;
        layers.push(input.clone());
    }
    let views: Vec<_> = layers.iter().map(|l| l.view()).collect();
    Ok(StageOutput {
        features: ndarray::concatenate(Axis(1), &views).expect("same rows"),
        max_residual,
        skipped: adapt.skipped_classes,
        zero_rows: Vec::new(),
        fallback: false,
    })
}

fn local_stage(
    x0: &Array2<f64>,
    source_labels: &[usize],
    target_labels: &[usize],
    cfg: &AdaptConfig,
    noise: &NoiseSpec,
    class_count: usize,
    depth: usize,
) -> Result<StageOutput> {
    let n = x0.nrows();
    let width = depth * x0.ncols();
    let fallback = |skipped: Vec<usize>| StageOutput {
        features: Array2::zeros((n, width)),
        max_residual: 0.0,
        skipped,
        zero_rows: (0..n).collect(),
        fallback: true,
    };
    let distinct_targets = {
        let mut seen = vec![false; class_count];
        target_labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if class_count > 1 && distinct_targets <= 1 {
        log::warn!("target pseudo-labels collapsed to one class; local features zeroed this round");
        return Ok(fallback((0..class_count).collect()));
    }
    let mut partition = match partition_by_class(&x0.view(), source_labels, target_labels, class_count) {
        Ok(p) => p,
        Err(Error::AllClassesSkipped) => {
            log::warn!("no class present in both domains; local features zeroed this round");
            return Ok(fallback((0..class_count).collect()));
        }
        Err(e) => return Err(e),
    };
    if !partition.skipped_classes.is_empty() {
        log::info!(
            "classes {:?} missing from one domain; their local features are zero",
            partition.skipped_classes
        );
    }
    let mut layers = Vec::with_capacity(depth);
    let mut max_residual: f64 = 0.0;
    let mut zero_rows = Vec::new();
    for _ in 0..depth {
        let weights = solve_mmda(&partition, noise, cfg.lambda, cfg.beta, cfg.append_bias)?;
        for w in weights.per_class.values() {
            max_residual = max_residual.max(w.residual);
        }
        partition = encode_subsets(&partition, &weights)?;
        let (layer, zeros) = scatter(&partition, n)?;
        zero_rows = zeros;
        layers.push(layer);
    }
    let views: Vec<_> = layers.iter().map(|l| l.view()).collect();
    Ok(StageOutput {
        features: ndarray::concatenate(Axis(1), &views).expect("same rows"),
        max_residual,
        skipped: partition.skipped_classes,
        zero_rows,
        fallback: false,
    })
}

pub fn run_ssrlda(pair: &DomainPair, config: &AdaptConfig) -> Result<SsrldaOutput> {
    run_variant(pair, config, Variant::Full)
}

pub fn run_variant(pair: &DomainPair, config: &AdaptConfig, variant: Variant) -> Result<SsrldaOutput> {
    config.validate()?;
    let noise = config.noise_spec()?;
    let class_count = pair.class_count;
    let source_labels = pair.source_labels();
    let n_s = pair.source.instance_count();
    let n_t = pair.target.instance_count();
    if n_s == 0 || n_t == 0 {
        return Err(Error::Empty("both domains need instances".into()));
    }
    let d = pair.feature_dim();
    let truth = pair.held_out_target_labels.as_deref();

    let mut x0 = stack_rows(&pair.source.dense().view(), &pair.target.dense().view())?;
    normalize(&mut x0, config.normalization);

    let initial = train_linear_classes(&x0.slice(s![..n_s, ..]), source_labels, class_count, &config.svm)?;
    let initial_predictions = predict(&initial, &x0.slice(s![n_s.., ..]))?;
    let initial_accuracy = truth.map(|t| accuracy(&initial_predictions, t)).transpose()?;

    let rounds: Vec<usize> = if config.fast_stacking {
        vec![config.layers]
    } else {
        (1..=config.layers).collect()
    };

    let mut pseudo = initial_predictions.clone();
    let mut trace = Vec::with_capacity(rounds.len());
    let mut last = None;
    for (i, &depth) in rounds.iter().enumerate() {
        let (global, local) = rayon::join(
            || {
                variant
                    .uses_global()
                    .then(|| global_stage(&x0, source_labels, &pseudo, config, &noise, class_count, depth))
                    .transpose()
            },
            || {
                variant
                    .uses_local()
                    .then(|| local_stage(&x0, source_labels, &pseudo, config, &noise, class_count, depth))
                    .transpose()
            },
        );
        let (global, local) = (global?, local?);
        let n = n_s + n_t;
        let empty = || Array2::zeros((n, 0));
        let rep = DualRepresentation {
            h1: global.as_ref().map_or_else(empty, |g| g.features.clone()),
            h2: local.as_ref().map_or_else(empty, |l| l.features.clone()),
            raw: config.include_raw_features.then(|| x0.clone()),
            layer_boundaries: (0..=depth).map(|k| k * d).collect(),
            n_source: n_s,
            local_zero_rows: local.as_ref().map_or_else(Vec::new, |l| l.zero_rows.clone()),
        };
        let input = rep.classifier_input();
        let model = train_linear_classes(&input.slice(s![..n_s, ..]), source_labels, class_count, &config.svm)?;
        let updated = predict(&model, &input.slice(s![n_s.., ..]))?;

        let mut skipped: Vec<usize> = global
            .iter()
            .chain(local.iter())
            .flat_map(|st| st.skipped.iter().copied())
            .collect();
        skipped.sort_unstable();
        skipped.dedup();
        let max_residual = global
            .iter()
            .chain(local.iter())
            .map(|st| st.max_residual)
            .fold(0.0, f64::max);
        trace.push(IterationTrace {
            iteration: i + 1,
            global_width: rep.h1.ncols(),
            local_width: rep.h2.ncols(),
            pseudo_label_accuracy: truth.map(|t| accuracy(&updated, t)).transpose()?,
            max_residual,
            skipped_classes: skipped,
            label_changes: updated.iter().zip(&pseudo).filter(|(a, b)| a != b).count(),
            local_fallback: local.as_ref().is_some_and(|l| l.fallback),
            classifier_loss: model.info.loss,
        });
        pseudo = updated;
        last = Some((model, rep));
    }
    let (model, representation) = last.expect("at least one round");
    Ok(SsrldaOutput {
        variant,
        model,
        representation,
        predictions: pseudo,
        initial_predictions,
        initial_accuracy,
        trace,
    })
}

/// Writes the per-round trace as CSV.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[IterationTrace]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(file, trace).map_err(|e| match e {
        Error::Csv(c) if c.is_io_error() => Error::io(path, std::io::Error::other(c.to_string())),
        other => other,
    })
}

pub fn write_trace<W: Write>(writer: W, trace: &[IterationTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "iteration",
        "pseudo_label_accuracy",
        "max_residual",
        "global_width",
        "local_width",
        "label_changes",
        "skipped_classes",
        "local_fallback",
        "classifier_loss",
    ])?;
    for t in trace {
        let skipped: Vec<String> = t.skipped_classes.iter().map(|c| c.to_string()).collect();
        w.write_record([
            t.iteration.to_string(),
            t.pseudo_label_accuracy.map_or_else(String::new, |a| a.to_string()),
            t.max_residual.to_string(),
            t.global_width.to_string(),
            t.local_width.to_string(),
            t.label_changes.to_string(),
            skipped.join(" "),
            t.local_fallback.to_string(),
            t.classifier_loss.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}
