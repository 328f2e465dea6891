//! Experiment runners: proxy-A-distance, parameter sweeps and manifest
//! driven benchmarks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{accuracy, predict, train_linear, SvmParams};
use crate::config::AdaptConfig;
use crate::dataio::{
    load_sparse, make_domain_pair, select_top_frequent_features, stack_rows, DataFormat, DomainPair, LabeledMatrix,
};
use crate::pipeline::{run_variant, Variant};
use crate::rng::seeded;
use crate::{Error, Result};

pub const DEFAULT_PAD_FOLDS: usize = 5;

/// `2(1 − 2ε)` clamped to `[0, 2]`; errors above one half map to 0.
pub fn distance_from_error(error: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * error)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyDistance {
    pub distance: f64,
    /// Mean held-out error of the domain discriminator.
    pub error: f64,
}

/// Proxy-A-distance between two samples.
///
/// Source rows are labeled 0 and target rows 1; a linear SVM discriminator
/// is cross-validated over `folds` shuffled folds and `ε` is its mean fold
/// error.
pub fn proxy_a_distance(
    x_s: &ArrayView2<f64>,
    x_t: &ArrayView2<f64>,
    folds: usize,
    svm: &SvmParams,
) -> Result<ProxyDistance> {
    if x_s.nrows() == 0 || x_t.nrows() == 0 {
        return Err(Error::Empty("proxy-A-distance needs both samples".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidParameter("at least two folds are required".into()));
    }
    let n = x_s.nrows() + x_t.nrows();
    if x_s.nrows().max(x_t.nrows()) < folds {
        return Err(Error::InvalidParameter(format!(
            "{n} instances cannot fill {folds} folds"
        )));
    }
    let x = stack_rows(x_s, x_t)?;
    let y: Vec<usize> = (0..n).map(|i| usize::from(i >= x_s.nrows())).collect();
    // stratified folds, each domain shuffled by the same seed, so swapping the
    // arguments keeps every fold's membership and only flips the labels
    let fold_of: Vec<usize> = [x_s.nrows(), x_t.nrows()]
        .into_iter()
        .flat_map(|m| {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut seeded(svm.seed));
            let mut fold = vec![0; m];
            for (pos, i) in order.into_iter().enumerate() {
                fold[i] = pos % folds;
            }
            fold
        })
        .collect();

    let errors: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == k);
            let xtr = x.select(ndarray::Axis(0), &train_idx);
            let ytr: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
            let model = train_linear(&xtr.view(), &ytr, svm)?;
            let xte = x.select(ndarray::Axis(0), &test_idx);
            let yte: Vec<usize> = test_idx.iter().map(|&i| y[i]).collect();
            Ok(1.0 - accuracy(&predict(&model, &xte.view())?, &yte)?)
        })
        .collect::<Result<_>>()?;
    let error = errors.iter().sum::<f64>() / folds as f64;
    Ok(ProxyDistance {
        distance: distance_from_error(error),
        error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Layers,
    Noise,
    Beta,
    Lambda,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l" | "layers" => Ok(SweepAxis::Layers),
            "p" | "noise" => Ok(SweepAxis::Noise),
            "beta" => Ok(SweepAxis::Beta),
            "lambda" => Ok(SweepAxis::Lambda),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Layers => "l",
            SweepAxis::Noise => "p",
            SweepAxis::Beta => "beta",
            SweepAxis::Lambda => "lambda",
        }
    }
}

/// One axis varied over `values`; everything else comes from the base
/// config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl SweepGrid {
    pub fn new(axis: SweepAxis, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        for &v in &values {
            let ok = match axis {
                SweepAxis::Layers => v >= 1.0 && v.fract() == 0.0,
                SweepAxis::Noise => (0.0..1.0).contains(&v),
                SweepAxis::Beta | SweepAxis::Lambda => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::Config(format!("{v} is not a valid {} value", axis.name())));
            }
        }
        Ok(Self { axis, values })
    }

    pub fn config_for(&self, base: &AdaptConfig, value: f64) -> AdaptConfig {
        let mut cfg = base.clone();
        match self.axis {
            SweepAxis::Layers => cfg.layers = value as usize,
            SweepAxis::Noise => cfg.noise = value,
            SweepAxis::Beta => cfg.beta = value,
            SweepAxis::Lambda => cfg.lambda = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: Option<f64>,
    pub feature_width: Option<usize>,
    pub error: Option<String>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// One full pipeline run per grid value. Cell failures are recorded in the
/// row and do not stop the sweep. Rows follow the grid order.
pub fn run_sweep(pair: &DomainPair, base: &AdaptConfig, grid: &SweepGrid, jobs: usize) -> Result<Vec<SweepRow>> {
    let pool = thread_pool(jobs)?;
    let truth = pair.held_out_target_labels.as_deref();
    Ok(pool.install(|| {
        grid.values
            .par_iter()
            .map(|&value| {
                let cfg = grid.config_for(base, value);
                match run_variant(pair, &cfg, Variant::Full) {
                    Ok(out) => {
                        let acc = truth.map(|t| out.accuracy(t));
                        match acc.transpose() {
                            Ok(accuracy) => SweepRow {
                                value,
                                accuracy,
                                feature_width: Some(out.model.feature_dim()),
                                error: None,
                            },
                            Err(e) => SweepRow {
                                value,
                                accuracy: None,
                                feature_width: Some(out.model.feature_dim()),
                                error: Some(e.to_string()),
                            },
                        }
                    }
                    Err(e) => SweepRow {
                        value,
                        accuracy: None,
                        feature_width: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    }))
}

pub fn write_sweep_csv<W: Write>(writer: W, axis: SweepAxis, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([axis.name(), "accuracy", "feature_width", "error"])?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.accuracy.map_or_else(String::new, |a| a.to_string()),
            r.feature_width.map_or_else(String::new, |f| f.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// One manifest line: `name, source_path, target_path, config_overrides`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSpec {
    pub name: String,
    pub source: PathBuf,
    pub target: PathBuf,
    pub overrides: String,
}

// quotes preceded by whitespace are not treated as quoting by the csv reader
fn unquote(field: &str) -> &str {
    field
        .strip_prefix('"')
        .and_then(|f| f.strip_suffix('"'))
        .unwrap_or(field)
}

pub fn parse_manifest_str(text: &str, base_dir: &Path) -> Result<Vec<TaskSpec>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut tasks = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("name")) {
            continue;
        }
        if record.len() < 3 || record.len() > 4 {
            let line = record.position().map_or(i + 1, |p| p.line() as usize);
            return Err(Error::Parse {
                line,
                message: format!("expected 3 or 4 fields, found {}", record.len()),
            });
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        tasks.push(TaskSpec {
            name: record[0].to_string(),
            source: resolve(unquote(&record[1])),
            target: resolve(unquote(&record[2])),
            overrides: unquote(record.get(3).unwrap_or("")).to_string(),
        });
    }
    Ok(tasks)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<TaskSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Applies feature selection and builds a validated pair. The class count
/// comes from the config or, failing that, from the largest label seen.
pub fn prepare_pair(source: LabeledMatrix, target: LabeledMatrix, cfg: &AdaptConfig) -> Result<DomainPair> {
    let (source, target) = match cfg.top_features {
        Some(k) => {
            let (mut out, _) = select_top_frequent_features(&[source, target], k)?;
            let target = out.pop().expect("two matrices");
            (out.pop().expect("two matrices"), target)
        }
        None => (source, target),
    };
    let class_count = match cfg.class_count {
        Some(c) => c,
        None => source
            .labels
            .iter()
            .chain(target.labels.iter())
            .flatten()
            .max()
            .map_or(0, |m| m + 1),
    };
    make_domain_pair(source, target, class_count)
}

/// Loads both files (format chosen by extension) and prepares the pair.
pub fn load_pair(source: &Path, target: &Path, cfg: &AdaptConfig) -> Result<DomainPair> {
    let s = load_sparse(source, DataFormat::from_path(source))?;
    let t = load_sparse(target, DataFormat::from_path(target))?;
    // align svmlight widths inferred from the largest index
    let d = s.feature_dim().max(t.feature_dim());
    let widen = |m: LabeledMatrix, path: &Path| -> Result<LabeledMatrix> {
        if m.feature_dim() < d && DataFormat::from_path(path).kind == crate::dataio::FormatKind::Svmlight {
            load_sparse(path, DataFormat::from_path(path).with_feature_dim(d))
        } else {
            Ok(m)
        }
    };
    prepare_pair(widen(s, source)?, widen(t, target)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    /// Target accuracy per method (`svm`, `ssrlda`, and ablations when run).
    pub accuracy: BTreeMap<String, f64>,
    pub proxy_a_distance_before: f64,
    pub proxy_a_distance_after: f64,
    pub config: AdaptConfig,
    pub stage_seconds: BTreeMap<String, f64>,
    pub source_instances: usize,
    pub target_instances: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TaskOutcome {
    Completed(EvalReport),
    Skipped { task: String, reason: String },
    Failed { task: String, error: String },
}

impl TaskOutcome {
    pub fn task(&self) -> &str {
        match self {
            TaskOutcome::Completed(r) => &r.task,
            TaskOutcome::Skipped { task, .. } | TaskOutcome::Failed { task, .. } => task,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub base: AdaptConfig,
    pub jobs: usize,
    /// Also run the global-only and local-only variants.
    pub ablations: bool,
    pub pad_folds: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            base: AdaptConfig::default(),
            jobs: 1,
            ablations: false,
            pad_folds: DEFAULT_PAD_FOLDS,
        }
    }
}

/// Runs the experiment for one prepared pair.
pub fn evaluate_pair(task: &str, pair: &DomainPair, cfg: &AdaptConfig, opts: &BenchOptions) -> Result<EvalReport> {
    let mut stage_seconds = BTreeMap::new();
    let mut accuracy_by_method = BTreeMap::new();
    let truth = pair.held_out_target_labels.as_deref();
    let n_s = pair.source.instance_count();

    let started = Instant::now();
    let full = run_variant(pair, cfg, Variant::Full)?;
    stage_seconds.insert("ssrlda".to_string(), started.elapsed().as_secs_f64());
    if let Some(t) = truth {
        if let Some(a) = full.initial_accuracy {
            accuracy_by_method.insert("svm".to_string(), a);
        }
        accuracy_by_method.insert("ssrlda".to_string(), accuracy(&full.predictions, t)?);
    }
    if opts.ablations {
        for variant in [Variant::GlobalOnly, Variant::LocalOnly] {
            let started = Instant::now();
            let out = run_variant(pair, cfg, variant)?;
            stage_seconds.insert(variant.name().to_string(), started.elapsed().as_secs_f64());
            if let Some(t) = truth {
                accuracy_by_method.insert(variant.name().to_string(), accuracy(&out.predictions, t)?);
            }
        }
    }

    let started = Instant::now();
    let mut raw = stack_rows(&pair.source.dense().view(), &pair.target.dense().view())?;
    crate::pipeline::normalize(&mut raw, cfg.normalization);
    let before = proxy_a_distance(
        &raw.slice(s![..n_s, ..]),
        &raw.slice(s![n_s.., ..]),
        opts.pad_folds,
        &cfg.svm,
    )?;
    let learned: Array2<f64> = full.representation.classifier_input();
    let after = proxy_a_distance(
        &learned.slice(s![..n_s, ..]),
        &learned.slice(s![n_s.., ..]),
        opts.pad_folds,
        &cfg.svm,
    )?;
    stage_seconds.insert("proxy_a_distance".to_string(), started.elapsed().as_secs_f64());

    Ok(EvalReport {
        task: task.to_string(),
        accuracy: accuracy_by_method,
        proxy_a_distance_before: before.distance,
        proxy_a_distance_after: after.distance,
        config: cfg.clone(),
        stage_seconds,
        source_instances: n_s,
        target_instances: pair.target.instance_count(),
        feature_dim: pair.feature_dim(),
    })
}

pub fn run_task(spec: &TaskSpec, opts: &BenchOptions) -> TaskOutcome {
    for path in [&spec.source, &spec.target] {
        if !path.exists() {
            let reason = format!("missing dataset file {}", path.display());
            log::warn!("task {}: {reason}", spec.name);
            return TaskOutcome::Skipped {
                task: spec.name.clone(),
                reason,
            };
        }
    }
    let run = || -> Result<EvalReport> {
        let mut cfg = opts.base.clone();
        cfg.apply_overrides(&spec.overrides)?;
        cfg.validate()?;
        let started = Instant::now();
        let pair = load_pair(&spec.source, &spec.target, &cfg)?;
        let load_seconds = started.elapsed().as_secs_f64();
        let mut report = evaluate_pair(&spec.name, &pair, &cfg, opts)?;
        report.stage_seconds.insert("load".to_string(), load_seconds);
        Ok(report)
    };
    match run() {
        Ok(report) => TaskOutcome::Completed(report),
        Err(e) => {
            log::error!("task {} failed: {e}", spec.name);
            TaskOutcome::Failed {
                task: spec.name.clone(),
                error: e.to_string(),
            }
        }
    }
}

/// Runs every task of a manifest. Outcomes are sorted by task name.
pub fn run_benchmark(manifest: impl AsRef<Path>, opts: &BenchOptions) -> Result<Vec<TaskOutcome>> {
    let tasks = parse_manifest(manifest)?;
    let pool = thread_pool(opts.jobs)?;
    let mut outcomes: Vec<TaskOutcome> = pool.install(|| tasks.par_iter().map(|t| run_task(t, opts)).collect());
    outcomes.sort_by(|a, b| a.task().cmp(b.task()));
    Ok(outcomes)
}

const METHODS: [&str; 4] = ["svm", "ssrlda", "omda_ad", "ommda"];

pub fn write_reports_csv<W: Write>(writer: W, outcomes: &[TaskOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["task", "status"];
    header.extend(METHODS);
    header.extend([
        "pad_before",
        "pad_after",
        "source_instances",
        "target_instances",
        "feature_dim",
        "seconds",
        "detail",
    ]);
    w.write_record(&header)?;
    for o in outcomes {
        let mut rec: Vec<String> = vec![o.task().to_string()];
        match o {
            TaskOutcome::Completed(r) => {
                rec.push("completed".into());
                for m in METHODS {
                    rec.push(r.accuracy.get(m).map_or_else(String::new, |a| a.to_string()));
                }
                rec.push(r.proxy_a_distance_before.to_string());
                rec.push(r.proxy_a_distance_after.to_string());
                rec.push(r.source_instances.to_string());
                rec.push(r.target_instances.to_string());
                rec.push(r.feature_dim.to_string());
                rec.push(r.stage_seconds.values().sum::<f64>().to_string());
                rec.push(String::new());
            }
            TaskOutcome::Skipped { reason, .. } | TaskOutcome::Failed { error: reason, .. } => {
                rec.push(
                    if matches!(o, TaskOutcome::Skipped { .. }) {
                        "skipped"
                    } else {
                        "failed"
                    }
                    .into(),
                );
                rec.extend(std::iter::repeat_n(String::new(), METHODS.len() + 6));
                rec.push(reason.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// Accuracy table (percent) with one row per task and an average row.
pub fn summary_table(outcomes: &[TaskOutcome]) -> String {
    let reports: Vec<&EvalReport> = outcomes
        .iter()
        .filter_map(|o| match o {
            TaskOutcome::Completed(r) => Some(r),
            _ => None,
        })
        .collect();
    let methods: Vec<&str> = METHODS
        .iter()
        .copied()
        .filter(|m| reports.iter().any(|r| r.accuracy.contains_key(*m)))
        .collect();
    let width = outcomes.iter().map(|o| o.task().len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "tasks");
    for m in &methods {
        let _ = write!(out, " {:>8}", m.to_uppercase());
    }
    let _ = writeln!(out, " {:>8} {:>8}", "PAD_PRE", "PAD_POST");
    for o in outcomes {
        let _ = write!(out, "{:<width$}", o.task());
        match o {
            TaskOutcome::Completed(r) => {
                for m in &methods {
                    match r.accuracy.get(*m) {
                        Some(a) => {
                            let _ = write!(out, " {:>8.2}", 100.0 * a);
                        }
                        None => {
                            let _ = write!(out, " {:>8}", "-");
                        }
                    }
                }
                let _ = writeln!(
                    out,
                    " {:>8.3} {:>8.3}",
                    r.proxy_a_distance_before, r.proxy_a_distance_after
                );
            }
            TaskOutcome::Skipped { reason, .. } => {
                let _ = writeln!(out, " skipped: {reason}");
            }
            TaskOutcome::Failed { error, .. } => {
                let _ = writeln!(out, " failed: {error}");
            }
        }
    }
    if !reports.is_empty() {
        let _ = write!(out, "{:<width$}", "Avg");
        for m in &methods {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.accuracy.get(*m).copied()).collect();
            let avg = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let _ = write!(out, " {:>8.2}", 100.0 * avg);
        }
        let _ = writeln!(out);
    }
    out
}
