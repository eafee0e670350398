//! Datasets, CSV ingestion, synthetic generators and the simulated oracle.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("dataset is empty")]
    Empty,
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("dataset has no ground-truth labels")]
    NoTruth,
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Copy the given rows into a new matrix, in order.
    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.cols, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub truth: Option<Vec<usize>>,
    pub num_classes: usize,
    pub render_hint: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        truth: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if features.rows() == 0 {
            return Err(DataError::Empty);
        }
        if num_classes < 2 {
            return Err(DataError::TooFewClasses(num_classes));
        }
        if let Some(truth) = &truth {
            if truth.len() != features.rows() {
                return Err(DataError::InvalidParameters(format!(
                    "{} labels for {} rows",
                    truth.len(),
                    features.rows()
                )));
            }
            if let Some((row, &c)) = truth.iter().enumerate().find(|(_, &c)| c >= num_classes) {
                return Err(DataError::Parse {
                    row,
                    message: format!("label {c} outside [0, {num_classes})"),
                });
            }
        }
        Ok(Self {
            features,
            truth,
            num_classes,
            render_hint: None,
        })
    }

    pub fn with_render_hint(mut self, hint: Option<(usize, usize)>) -> Self {
        self.render_hint = hint;
        self
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Restrict to the first `count` rows.
    pub fn head(&self, count: usize) -> Result<Dataset, DataError> {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        let truth = self.truth.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect());
        Ok(Dataset::new(self.features.select(&idx), truth, self.num_classes)?
            .with_render_hint(self.render_hint))
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub label_column: Option<String>,
    pub num_classes: Option<usize>,
    pub render_hint: Option<(usize, usize)>,
}

/// Load a headed numeric CSV, gzip-compressed when the name ends in `.gz`.
/// Row indices in errors are 0-based data rows.
pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    if path.extension().is_some_and(|ext| ext == "gz") {
        read_csv(GzDecoder::new(file), options)
    } else {
        read_csv(file, options)
    }
}

pub fn read_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let width = header.len();
    let label_idx = match &options.label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingLabelColumn(name.clone()))?,
        ),
        None => None,
    };

    let mut data = Vec::new();
    let mut truth = Vec::new();
    let mut rows = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataError::Parse {
                row,
                message: format!("expected {width} columns, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == label_idx {
                let label: usize = cell.parse().map_err(|_| DataError::Parse {
                    row,
                    message: format!("label {cell:?} is not a class index"),
                })?;
                if let Some(c) = options.num_classes {
                    if label >= c {
                        return Err(DataError::Parse {
                            row,
                            message: format!("label {label} outside [0, {c})"),
                        });
                    }
                }
                truth.push(label);
            } else {
                let value: f64 = cell.parse().map_err(|_| DataError::Parse {
                    row,
                    message: format!("column {col}: {cell:?} is not numeric"),
                })?;
                data.push(value);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Empty);
    }
    let cols = width - usize::from(label_idx.is_some());
    let features = Matrix::new(rows, cols, data);
    let (truth, inferred) = match label_idx {
        Some(_) => {
            let max = truth.iter().copied().max().unwrap_or(0);
            (Some(truth), max + 1)
        }
        None => (None, 0),
    };
    let num_classes = options.num_classes.unwrap_or(inferred.max(2));
    Ok(Dataset::new(features, truth, num_classes)?.with_render_hint(options.render_hint))
}

/// Write features (9 significant digits) and, when present, a trailing
/// `label` column.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| DataError::io(path, e);
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    if dataset.truth.is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (i, row) in dataset.features.iter_rows().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        if let Some(truth) = &dataset.truth {
            cells.push(truth[i].to_string());
        }
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw `count` class means in `[-10, 10]^dim` with pairwise distance at
/// least `min_gap` (relaxed geometrically if the box is too crowded).
fn spread_means(rng: &mut ChaCha8Rng, count: usize, dim: usize, mut min_gap: f64) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while means.len() < count {
        let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ok = means.iter().all(|m| {
            m.iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= min_gap
        });
        if ok {
            means.push(candidate);
        }
        attempts += 1;
        if attempts % 1000 == 0 {
            min_gap *= 0.8;
        }
    }
    means
}

/// `classes` isotropic Gaussian clusters with well separated means.
/// Example `i` belongs to class `i % classes`.
pub fn gen_blobs(
    seed: u64,
    count: usize,
    dim: usize,
    classes: usize,
    spread: f64,
) -> Result<Dataset, DataError> {
    if classes < 2 || count < classes || dim == 0 {
        return Err(DataError::InvalidParameters(format!(
            "blobs need count >= classes >= 2 and dim >= 1 (count={count}, classes={classes}, dim={dim})"
        )));
    }
    let mut rng = seeded(seed);
    let means = spread_means(&mut rng, classes, dim, 6.0);
    let mut data = Vec::with_capacity(count * dim);
    let mut truth = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        for mean in &means[class] {
            data.push(mean + spread * gaussian(&mut rng));
        }
        truth.push(class);
    }
    Dataset::new(Matrix::new(count, dim, data), Some(truth), classes)
}

/// Half-width of the uniform noise dimensions in [`gen_noise_dims`].
pub const NOISE_HALF_WIDTH: f64 = 6.0;

pub const SIGNAL_RADIUS: f64 = 3.0;

/// Class signal in the first `relevant` dimensions, followed by `noise`
/// dimensions drawn uniformly from `[-6, 6]` independently of the class.
/// Class means sit on a circle of radius [`SIGNAL_RADIUS`] in the first two
/// dimensions (on a line when `relevant == 1`) with per-dimension standard
/// deviation 0.6.
pub fn gen_noise_dims(
    seed: u64,
    count: usize,
    relevant: usize,
    noise: usize,
    classes: usize,
) -> Result<Dataset, DataError> {
    if relevant == 0 || classes < 2 || count < classes {
        return Err(DataError::InvalidParameters(format!(
            "noise dims need relevant >= 1 and count >= classes >= 2 (relevant={relevant}, classes={classes})"
        )));
    }
    let mut rng = seeded(seed);
    let means: Vec<Vec<f64>> = if relevant == 1 {
        (0..classes)
            .map(|k| vec![SIGNAL_RADIUS * (k as f64 - 0.5 * (classes - 1) as f64)])
            .collect()
    } else {
        (0..classes)
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / classes as f64;
                let mut mean = vec![0.0; relevant];
                mean[0] = SIGNAL_RADIUS * angle.cos();
                mean[1] = SIGNAL_RADIUS * angle.sin();
                mean
            })
            .collect()
    };
    let dim = relevant + noise;
    let mut data = Vec::with_capacity(count * dim);
    let mut truth = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        for mean in &means[class] {
            data.push(mean + 0.6 * gaussian(&mut rng));
        }
        for _ in 0..noise {
            data.push(rng.random_range(-NOISE_HALF_WIDTH..NOISE_HALF_WIDTH));
        }
        truth.push(class);
    }
    Dataset::new(Matrix::new(count, dim, data), Some(truth), classes)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle has no label for example {0}")]
    Unavailable(usize),
    #[error("oracle query for example {0} was cancelled")]
    Cancelled(usize),
}

/// Source of true labels. `query` returns only once a label is known and
/// must answer repeated queries for one example consistently.
pub trait Oracle {
    fn query(&mut self, example_id: usize, features: &[f64]) -> Result<usize, OracleError>;
}

/// Reveals ground truth from the dataset.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    truth: Vec<usize>,
    calls: usize,
}

impl SimulatedOracle {
    pub fn new(dataset: &Dataset) -> Result<Self, DataError> {
        let truth = dataset.truth.clone().ok_or(DataError::NoTruth)?;
        Ok(Self { truth, calls: 0 })
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Oracle for SimulatedOracle {
    fn query(&mut self, example_id: usize, _features: &[f64]) -> Result<usize, OracleError> {
        self.calls += 1;
        self.truth
            .get(example_id)
            .copied()
            .ok_or(OracleError::Unavailable(example_id))
    }
}

pub fn simulated_oracle(dataset: &Dataset) -> Result<SimulatedOracle, DataError> {
    SimulatedOracle::new(dataset)
}

/// Fraction of examples whose child's majority true class equals their own.
pub fn partition_purity(assignment: &[usize], truth: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&child, &class) in assignment.iter().zip(truth) {
        *counts.entry(child).or_default().entry(class).or_default() += 1;
    }
    let agree: usize = counts
        .values()
        .map(|per_class| per_class.values().copied().max().unwrap_or(0))
        .sum();
    agree as f64 / assignment.len().max(1) as f64
}
