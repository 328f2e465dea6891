//! Loading, validation and preparation of source/target feature matrices.
//!
//! Two on-disk formats are understood:
//!
//! * svmlight-style text, `<label> <idx>:<val> ...` with 1-based feature
//!   indices (or `<idx>:<val> ...` when the descriptor says there are no
//!   labels). `#` starts a comment.
//! * dense CSV with a header row. A column named `label` (any case) holds the
//!   class; every other column is a feature.
//!
//! Rows are instances and columns are features. Nothing is normalized at
//! load time.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-compressed sparse storage for count matrices that are too wide to
/// densify before feature selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
    ncols: usize,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row must
    /// be distinct and below `ncols`.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, ncols: usize) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Parse {
                        line: r + 1,
                        message: format!("duplicate feature index {}", w[0].0 + 1),
                    });
                }
            }
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::DimensionMismatch(format!("column {c} outside {ncols} columns")));
                }
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            indptr,
            indices,
            data,
            ncols,
        })
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.data[span].iter().copied())
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows(), self.ncols));
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }
}

/// Dense or sparse feature storage behind a [`LabeledMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Array2<f64>),
    Sparse(CsrMatrix),
}

impl Features {
    pub fn nrows(&self) -> usize {
        match self {
            Features::Dense(a) => a.nrows(),
            Features::Sparse(s) => s.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Features::Dense(a) => a.ncols(),
            Features::Sparse(s) => s.ncols(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Features::Dense(a) => a.clone(),
            Features::Sparse(s) => s.to_dense(),
        }
    }

    fn column_sums(&self) -> Vec<f64> {
        match self {
            Features::Dense(a) => a.sum_axis(Axis(0)).to_vec(),
            Features::Sparse(s) => {
                let mut sums = vec![0.0; s.ncols];
                for (&c, &v) in s.indices.iter().zip(&s.data) {
                    sums[c] += v;
                }
                sums
            }
        }
    }

    fn project(&self, keep: &[usize]) -> Features {
        match self {
            Features::Dense(a) => Features::Dense(a.select(Axis(1), keep)),
            Features::Sparse(s) => {
                let mut new_col = vec![usize::MAX; s.ncols];
                for (j, &c) in keep.iter().enumerate() {
                    new_col[c] = j;
                }
                let rows = (0..s.nrows())
                    .map(|r| {
                        s.row(r)
                            .filter(|&(c, _)| new_col[c] != usize::MAX)
                            .map(|(c, v)| (new_col[c], v))
                            .collect()
                    })
                    .collect();
                // projection of a valid matrix is valid
                Features::Sparse(CsrMatrix::from_rows(rows, keep.len()).expect("valid projection"))
            }
        }
    }
}

/// Instance-by-feature matrix with optional per-instance class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub values: Features,
    pub labels: Option<Vec<usize>>,
}

impl LabeledMatrix {
    pub fn new(values: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        Self::from_features(Features::Dense(values), labels)
    }

    pub fn from_features(values: Features, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != values.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} instances",
                    l.len(),
                    values.nrows()
                )));
            }
        }
        Ok(Self { values, labels })
    }

    pub fn instance_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn dense(&self) -> Array2<f64> {
        self.values.to_dense()
    }

    /// Checks that every label lies in `0..class_count`.
    pub fn validate_labels(&self, class_count: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
                return Err(Error::InvalidLabel { label, class_count });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatKind {
    Svmlight,
    Csv,
}

/// File format descriptor. `labels = false` reads feature columns only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataFormat {
    pub kind: FormatKind,
    pub labels: bool,
    /// Column count for svmlight input; inferred from the largest index when
    /// absent.
    pub feature_dim: Option<usize>,
}

impl DataFormat {
    pub fn svmlight() -> Self {
        Self {
            kind: FormatKind::Svmlight,
            labels: true,
            feature_dim: None,
        }
    }

    pub fn csv() -> Self {
        Self {
            kind: FormatKind::Csv,
            labels: true,
            feature_dim: None,
        }
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = false;
        self
    }

    pub fn with_feature_dim(mut self, d: usize) -> Self {
        self.feature_dim = Some(d);
        self
    }

    /// `.csv` files are dense CSV; anything else is svmlight.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::csv(),
            _ => Self::svmlight(),
        }
    }
}

pub fn load_sparse(path: impl AsRef<Path>, format: DataFormat) -> Result<LabeledMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format.kind {
        FormatKind::Svmlight => read_svmlight(reader, format),
        FormatKind::Csv => read_csv(reader, format),
    }
}

/// Parses svmlight text from any reader.
pub fn read_svmlight<R: BufRead>(reader: R, format: DataFormat) -> Result<LabeledMatrix> {
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() && (format.labels || line.trim_start().starts_with('#')) {
            continue;
        }
        let mut tokens = content.split_whitespace();
        if format.labels {
            let tok = tokens.next().expect("non-empty line has a token");
            let label = parse_label(tok).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("invalid label {tok:?}"),
            })?;
            raw_labels.push(label);
        }
        let mut row = Vec::new();
        let mut seen = HashSet::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected <index>:<value>, found {tok:?}"),
            })?;
            let idx: i64 = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid feature index {idx:?}"),
            })?;
            if idx < 1 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("feature index {idx} is not a positive 1-based index"),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid feature value {val:?}"),
            })?;
            let col = (idx - 1) as usize;
            if !seen.insert(col) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate feature index {idx}"),
                });
            }
            max_index = max_index.max(col + 1);
            row.push((col, val));
        }
        rows.push(row);
    }
    let ncols = match format.feature_dim {
        Some(d) if d < max_index => {
            return Err(Error::DimensionMismatch(format!(
                "feature index {max_index} exceeds declared dimension {d}"
            )))
        }
        Some(d) => d,
        None => max_index,
    };
    let labels = if format.labels {
        Some(map_svmlight_labels(&raw_labels)?)
    } else {
        None
    };
    let csr = CsrMatrix::from_rows(rows, ncols)?;
    LabeledMatrix::from_features(Features::Sparse(csr), labels)
}

fn parse_label(tok: &str) -> Option<i64> {
    let v: f64 = tok.parse().ok()?;
    if v.fract() != 0.0 || !v.is_finite() {
        return None;
    }
    Some(v as i64)
}

// {-1, +1} binary files map onto classes {0, 1}; otherwise labels are the
// class indices themselves.
fn map_svmlight_labels(raw: &[i64]) -> Result<Vec<usize>> {
    if raw.contains(&-1) {
        if let Some(pos) = raw.iter().position(|&l| l != -1 && l != 1) {
            return Err(Error::Parse {
                line: pos + 1,
                message: format!("label {} mixed with -1 labels", raw[pos]),
            });
        }
        return Ok(raw.iter().map(|&l| usize::from(l == 1)).collect());
    }
    raw.iter()
        .enumerate()
        .map(|(i, &l)| {
            usize::try_from(l).map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("negative label {l}"),
            })
        })
        .collect()
}

/// Parses dense CSV with a header row from any reader.
pub fn read_csv<R: std::io::Read>(reader: R, format: DataFormat) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_col = headers.iter().position(|h| h.eq_ignore_ascii_case("label"));
    let ncols = headers.len() - usize::from(label_col.is_some());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut nrows = 0;
    for (i, record) in rdr.records().enumerate() {
        // header occupies line 1
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        for (j, field) in record.iter().enumerate() {
            if Some(j) == label_col {
                if format.labels {
                    let l = parse_label(field)
                        .and_then(|l| usize::try_from(l).ok())
                        .ok_or_else(|| Error::Parse {
                            line,
                            message: format!("invalid label {field:?}"),
                        })?;
                    labels.push(l);
                }
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid value {field:?}"),
            })?;
            values.push(v);
        }
        nrows += 1;
    }
    let values = Array2::from_shape_vec((nrows, ncols), values).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let labels = (format.labels && label_col.is_some()).then_some(labels);
    LabeledMatrix::new(values, labels)
}

/// Writes svmlight text with 1-based indices; zero entries are omitted.
pub fn write_svmlight(path: impl AsRef<Path>, m: &LabeledMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dense = m.dense();
    let write_err = |e| Error::io(path, e);
    for (r, row) in dense.outer_iter().enumerate() {
        let mut parts = Vec::new();
        if let Some(labels) = &m.labels {
            parts.push(labels[r].to_string());
        }
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                parts.push(format!("{}:{}", c + 1, v));
            }
        }
        writeln!(w, "{}", parts.join(" ")).map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

/// Writes dense CSV with a header (`label,f1,...,fd`).
pub fn write_csv(path: impl AsRef<Path>, m: &LabeledMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = Vec::new();
    if m.labels.is_some() {
        header.push("label".to_string());
    }
    header.extend((1..=m.feature_dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let dense = m.dense();
    for (r, row) in dense.outer_iter().enumerate() {
        let mut record = Vec::with_capacity(header.len());
        if let Some(labels) = &m.labels {
            record.push(labels[r].to_string());
        }
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Keeps the `k` columns with the largest total over all matrices.
///
/// Ties go to the lower original index. Kept columns stay in their original
/// order, and every matrix is projected onto the same columns. Returns the
/// projected matrices and the kept (0-based) column indices.
pub fn select_top_frequent_features(data: &[LabeledMatrix], k: usize) -> Result<(Vec<LabeledMatrix>, Vec<usize>)> {
    let d = data.first().map_or(0, LabeledMatrix::feature_dim);
    if let Some(m) = data.iter().find(|m| m.feature_dim() != d) {
        return Err(Error::DimensionMismatch(format!(
            "feature dims {d} and {}",
            m.feature_dim()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > d {
        return Err(Error::InvalidParameter(format!("cannot keep {k} of {d} features")));
    }
    let mut totals = vec![0.0; d];
    for m in data {
        for (t, s) in totals.iter_mut().zip(m.values.column_sums()) {
            *t += s;
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    let projected = data
        .iter()
        .map(|m| LabeledMatrix {
            values: m.values.project(&keep),
            labels: m.labels.clone(),
        })
        .collect();
    Ok((projected, keep))
}

/// Validated source/target pair. Target labels, when the file carried them,
/// sit in `held_out_target_labels` and are used for scoring only.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub source: LabeledMatrix,
    pub target: LabeledMatrix,
    pub held_out_target_labels: Option<Vec<usize>>,
    pub class_count: usize,
}

impl DomainPair {
    pub fn source_labels(&self) -> &[usize] {
        self.source.labels.as_deref().expect("validated pair has source labels")
    }

    pub fn feature_dim(&self) -> usize {
        self.source.feature_dim()
    }
}

pub fn make_domain_pair(source: LabeledMatrix, mut target: LabeledMatrix, class_count: usize) -> Result<DomainPair> {
    let labels = source.labels.as_ref().ok_or(Error::MissingLabels)?;
    if source.feature_dim() != target.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.feature_dim(),
            target.feature_dim()
        )));
    }
    if class_count == 0 {
        return Err(Error::InvalidParameter("class count must be positive".into()));
    }
    source.validate_labels(class_count)?;
    target.validate_labels(class_count)?;
    let mut present = vec![false; class_count];
    for &l in labels {
        present[l] = true;
    }
    if let Some(class) = present.iter().position(|&p| !p) {
        return Err(Error::MissingClass { class });
    }
    let held_out = target.labels.take();
    Ok(DomainPair {
        source,
        target,
        held_out_target_labels: held_out,
        class_count,
    })
}

/// Stacks source rows above target rows.
pub fn stack_rows(source: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<Array2<f64>> {
    ndarray::concatenate(Axis(0), &[source.view(), target.view()]).map_err(|e| Error::DimensionMismatch(e.to_string()))
}
