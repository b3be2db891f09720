//! Labeled data ingestion, splitting, corruption simulation and model
//! persistence.
//!
//! Samples are matrix columns. Images are vectorized column-major
//! (height-fastest): pixel `(r, c)` of an `h x w` image is entry `r + c * h`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A column-sample matrix with labels `1..=K`, sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub image_shape: Option<(usize, usize)>,
    pub value_max: f64,
    /// Position of each column in the data as originally supplied.
    pub original_index: Vec<usize>,
}

impl LabeledDataset {
    /// Validates and stably sorts the columns by label.
    pub fn new(
        x: Matrix,
        labels: Vec<usize>,
        image_shape: Option<(usize, usize)>,
        value_max: f64,
    ) -> Result<Self> {
        if labels.len() != x.ncols() {
            return Err(Error::Validation(format!(
                "{} labels for {} sample columns",
                labels.len(),
                x.ncols()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Validation("dataset has no samples".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("matrix contains NaN or Inf".into()));
        }
        if let Some((h, w)) = image_shape {
            if h * w != x.nrows() {
                return Err(Error::Validation(format!(
                    "image shape {h}x{w} does not match dimension {}",
                    x.nrows()
                )));
            }
        }
        if !(value_max.is_finite() && value_max > 0.0) {
            return Err(Error::Validation(format!(
                "value_max must be > 0, got {value_max}"
            )));
        }
        let k = *labels.iter().max().unwrap();
        let mut seen = vec![false; k + 1];
        for &l in &labels {
            if l == 0 {
                return Err(Error::Validation("labels must start at 1".into()));
            }
            seen[l] = true;
        }
        if let Some(missing) = (1..=k).find(|&l| !seen[l]) {
            return Err(Error::Validation(format!(
                "labels must cover 1..={k}; class {missing} has no samples"
            )));
        }

        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| labels[i]);
        let x = Matrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, order[c])]);
        let labels = order.iter().map(|&i| labels[i]).collect();
        Ok(LabeledDataset {
            x,
            labels,
            image_shape,
            value_max,
            original_index: order,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.last().copied().unwrap_or(0)
    }

    /// `K + 1` column offsets; class label `l` owns `offsets[l-1]..offsets[l]`.
    pub fn class_offsets(&self) -> Vec<usize> {
        let k = self.num_classes();
        let mut offsets = vec![0; k + 1];
        for &l in &self.labels {
            offsets[l] += 1;
        }
        for i in 1..=k {
            offsets[i] += offsets[i - 1];
        }
        offsets
    }

    /// Column range of label `label` (1-based).
    pub fn class_range(&self, label: usize) -> Range<usize> {
        let o = self.class_offsets();
        o[label - 1]..o[label]
    }

    pub fn class_ranges(&self) -> Vec<Range<usize>> {
        let o = self.class_offsets();
        o.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn class_matrix(&self, label: usize) -> Matrix {
        let r = self.class_range(label);
        self.x.columns(r.start, r.len()).into_owned()
    }

    /// Copy with every nonzero column scaled to unit l2 norm.
    pub fn with_unit_columns(&self) -> LabeledDataset {
        let mut out = self.clone();
        for mut col in out.x.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        out
    }

    fn subset(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: Matrix::from_fn(self.dim(), cols.len(), |r, c| self.x[(r, cols[c])]),
            labels: cols.iter().map(|&c| self.labels[c]).collect(),
            image_shape: self.image_shape,
            value_max: self.value_max,
            original_index: cols.iter().map(|&c| self.original_index[c]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    pub image_shape: Option<(usize, usize)>,
    /// Largest possible pixel value; defaults to 255.
    pub value_max: Option<f64>,
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_value(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

/// Reads a matrix: `.csv` files hold one comma-separated row per line;
/// anything else is the text format (`m N` header, then `m` rows).
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    if is_csv(path) {
        load_csv(path)
    } else {
        load_text(path)
    }
}

fn load_text(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file; expected `m N` header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(path, hline, format!("bad dimension {s:?}")))
    };
    if dims.len() != 2 {
        return Err(parse_err(path, hline, "header must be `m N`"));
    }
    let (m, n) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    if m == 0 || n == 0 {
        return Err(parse_err(path, hline, format!("empty matrix {m}x{n}")));
    }

    let mut out = Matrix::zeros(m, n);
    for r in 0..m {
        let (ln, line) = lines.next().ok_or_else(|| {
            parse_err(path, hline + r + 1, format!("expected {m} rows, found {r}"))
        })?;
        let line = line.map_err(|e| Error::io(path, e))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != n {
            return Err(parse_err(
                path,
                ln,
                format!("expected {n} values, found {}", toks.len()),
            ));
        }
        for (c, tok) in toks.iter().enumerate() {
            out[(r, c)] = parse_value(path, ln, tok)?;
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(path, ln, "trailing content after the last row"));
    }
    Ok(out)
}

fn load_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        let row = rec
            .iter()
            .map(|tok| parse_value(path, line, tok))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(parse_err(path, 1, "empty matrix"));
    }
    let n = rows[0].len();
    Ok(Matrix::from_fn(rows.len(), n, |r, c| rows[r][c]))
}

/// Writes `m` in the format implied by the extension. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    let sep = if is_csv(path) {
        ","
    } else {
        out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
        " "
    };
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(sep));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let l = t
            .parse::<usize>()
            .map_err(|_| parse_err(path, i + 1, format!("not a label: {t:?}")))?;
        labels.push(l);
    }
    Ok(labels)
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(
    matrix_path: &Path,
    labels_path: &Path,
    opts: LoadOptions,
) -> Result<LabeledDataset> {
    let x = load_matrix(matrix_path)?;
    let labels = load_labels(labels_path)?;
    LabeledDataset::new(x, labels, opts.image_shape, opts.value_max.unwrap_or(255.0))
}

/// Writes the (label-sorted) dataset as a matrix file plus a labels file.
pub fn save_dataset(ds: &LabeledDataset, matrix_path: &Path, labels_path: &Path) -> Result<()> {
    save_matrix(matrix_path, &ds.x)?;
    save_labels(labels_path, &ds.labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    /// Selected pixels set to the maximum value.
    Pixel,
    /// A square occluding patch at a random position.
    Block,
    /// Selected pixels replaced by uniform noise on `[0, value_max]`.
    Uniform,
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(CorruptionKind::Pixel),
            "block" => Ok(CorruptionKind::Block),
            "uniform" => Ok(CorruptionKind::Uniform),
            other => Err(Error::invalid(format!(
                "unknown corruption kind {other:?} (pixel|block|uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub fraction: f64,
    pub seed: u64,
}

/// Side of the square block covering `fraction` of an `h x w` image.
pub fn block_side(fraction: f64, h: usize, w: usize) -> usize {
    ((fraction * (h * w) as f64).sqrt().round() as usize)
        .min(h)
        .min(w)
}

fn random_texture(side: usize, value_max: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // A few random gratings plus noise, rescaled to [0, value_max].
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..1.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut tex: Vec<f64> = (0..side * side)
        .map(|i| {
            let (r, c) = ((i % side) as f64, (i / side) as f64);
            let wave: f64 = waves
                .iter()
                .map(|&(f, theta, phase)| (f * (r * theta.cos() + c * theta.sin()) + phase).sin())
                .sum();
            wave + rng.random_range(-0.5..0.5)
        })
        .collect();
    let lo = tex.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tex.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for v in &mut tex {
        *v = ((*v - lo) / span * value_max).clamp(0.0, value_max);
    }
    tex
}

/// Nearest-neighbor resample of a `ph x pw` patch (column-major) to `side x side`.
fn resample_patch(patch: &Matrix, side: usize) -> Vec<f64> {
    let (ph, pw) = patch.shape();
    (0..side * side)
        .map(|i| {
            let (r, c) = (i % side, i / side);
            patch[(r * ph / side, c * pw / side)]
        })
        .collect()
}

/// Simulated corruption; deterministic given the seed.
pub fn apply_corruption(ds: &LabeledDataset, spec: &CorruptionSpec) -> Result<LabeledDataset> {
    apply_corruption_with_patch(ds, spec, None)
}

/// As [`apply_corruption`]; block corruption uses `patch` (values clamped
/// to `[0, value_max]`) instead of a generated texture when given.
pub fn apply_corruption_with_patch(
    ds: &LabeledDataset,
    spec: &CorruptionSpec,
    patch: Option<&Matrix>,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::invalid(format!(
            "corruption fraction must lie in [0, 1], got {}",
            spec.fraction
        )));
    }
    if spec.kind == CorruptionKind::Block && ds.image_shape.is_none() {
        return Err(Error::invalid("block corruption requires an image shape"));
    }
    let mut out = ds.clone();
    if spec.fraction == 0.0 {
        return Ok(out);
    }
    let m = ds.dim();
    let vmax = ds.value_max;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        CorruptionKind::Pixel | CorruptionKind::Uniform => {
            let count = ((spec.fraction * m as f64).round() as usize).min(m);
            for c in 0..ds.len() {
                let picks = index::sample(&mut rng, m, count);
                for r in picks.iter() {
                    out.x[(r, c)] = match spec.kind {
                        CorruptionKind::Pixel => vmax,
                        _ => rng.random_range(0.0..=vmax),
                    };
                }
            }
        }
        CorruptionKind::Block => {
            let (h, w) = ds.image_shape.unwrap();
            let side = block_side(spec.fraction, h, w);
            if side == 0 {
                return Ok(out);
            }
            let fixed = patch.map(|p| {
                resample_patch(p, side)
                    .into_iter()
                    .map(|v| v.clamp(0.0, vmax))
                    .collect::<Vec<_>>()
            });
            for c in 0..ds.len() {
                let top = rng.random_range(0..=h - side);
                let left = rng.random_range(0..=w - side);
                let tex = match &fixed {
                    Some(t) => t.clone(),
                    None => random_texture(side, vmax, &mut rng),
                };
                for bc in 0..side {
                    for br in 0..side {
                        let pix = (top + br) + (left + bc) * h;
                        out.x[(pix, c)] = tex[br + bc * side];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Seeded per-class split: `per_class_train` random columns of every class
/// go to the training set, the rest to the test set (original order kept).
pub fn split(
    ds: &LabeledDataset,
    per_class_train: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let ranges = ds.class_ranges();
    let smallest = ranges.iter().map(|r| r.len()).min().unwrap_or(0);
    if per_class_train == 0 || per_class_train >= smallest {
        return Err(Error::invalid(format!(
            "per-class training size {per_class_train} must lie in 1..{smallest} (smallest class)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in ranges {
        let mut chosen = vec![false; r.len()];
        for i in index::sample(&mut rng, r.len(), per_class_train).iter() {
            chosen[i] = true;
        }
        for (i, col) in r.enumerate() {
            if chosen[i] {
                train.push(col);
            } else {
                test.push(col);
            }
        }
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

// ---------------------------------------------------------------------------
// Model container

use crate::config::TrainConfig;
use crate::dict_learn::StructuredDictionary;
use crate::pipeline::Model;
use crate::projection::Projection;

pub const MODEL_MAGIC: &[u8; 7] = b"JPLRDL1";
pub const MODEL_VERSION: u8 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.nrows());
        self.u64(m.ncols());
        for v in m.iter() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} too large: {v}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn matrix(&mut self, what: &str) -> Result<Matrix> {
        let rows = self.u64(what)?;
        let cols = self.u64(what)?;
        let len = rows
            .checked_mul(cols)
            .filter(|&n| {
                n.checked_mul(8)
                    .is_some_and(|b| b <= self.buf.len() - self.pos)
            })
            .ok_or_else(|| {
                Error::Format(format!("truncated while reading {what} ({rows}x{cols})"))
            })?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64(what)?);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

/// Serializes a model into the binary container.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.0.push(MODEL_VERSION);
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    w.u64(cfg.len());
    w.0.extend_from_slice(&cfg);
    w.matrix(&model.projection.p);
    w.matrix(&model.dictionary.atoms);
    w.u64(model.dictionary.class_offsets.len());
    for &o in &model.dictionary.class_offsets {
        w.u64(o);
    }
    w.matrix(&model.coefficients);
    w.matrix(&model.class_means);
    w.u64(model.objective_trace.len());
    for &v in &model.objective_trace {
        w.f64(v);
    }
    w.0
}

pub fn model_from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(7, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("bad magic; not a model file".into()));
    }
    let version = r.take(1, "version")?[0];
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version} (expected {MODEL_VERSION})"
        )));
    }
    let cfg_len = r.u64("config length")?;
    let cfg_bytes = r.take(cfg_len, "config")?;
    let config: TrainConfig = serde_json::from_slice(cfg_bytes)
        .map_err(|e| Error::Format(format!("config block: {e}")))?;
    let p = r.matrix("projection")?;
    let atoms = r.matrix("dictionary")?;
    let n_off = r.u64("offset count")?;
    if n_off > buf.len() / 8 {
        return Err(Error::Format("offset count exceeds file size".into()));
    }
    let offsets = (0..n_off)
        .map(|_| r.u64("class offset"))
        .collect::<Result<Vec<_>>>()?;
    let coefficients = r.matrix("coefficients")?;
    let class_means = r.matrix("class means")?;
    let n_trace = r.u64("trace length")?;
    if n_trace > buf.len() / 8 {
        return Err(Error::Format("trace length exceeds file size".into()));
    }
    let objective_trace = (0..n_trace)
        .map(|_| r.f64("objective trace"))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            buf.len() - r.pos
        )));
    }

    let dictionary =
        StructuredDictionary::new(atoms, offsets).map_err(|e| Error::Format(e.to_string()))?;
    let projection = Projection::new(p).map_err(|e| Error::Format(e.to_string()))?;
    if projection.output_dim() != dictionary.dim()
        || coefficients.nrows() != dictionary.num_atoms()
        || class_means.shape() != (dictionary.num_atoms(), dictionary.num_classes())
    {
        return Err(Error::Format("inconsistent matrix shapes".into()));
    }
    Ok(Model {
        projection,
        dictionary,
        coefficients,
        class_means,
        config,
        objective_trace,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
