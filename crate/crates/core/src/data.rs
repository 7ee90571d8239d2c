//! Spectral datasets: matrices, targets, splits and CSV ingestion.
//!
//! A dataset file is a UTF-8 CSV with a header row and one sample per row.
//! One named column holds the target; every other column is a spectral
//! channel. When every channel header parses as a number and the numbers are
//! strictly increasing they are kept as wavelengths.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{BenchmarkManifest, DatasetEntry, SplitEntry};
use crate::sampling;

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

/// Samples × channels absorbance matrix with optional wavelength axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraMatrix {
    values: Matrix,
    wavelengths: Option<Vec<f64>>,
}

impl SpectraMatrix {
    pub fn new(values: Matrix, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::degenerate(
                "spectra matrix must have at least one row and one column",
            ));
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if !values[(r, c)].is_finite() {
                    return Err(Error::NonFinite { row: r, col: c });
                }
            }
        }
        if let Some(w) = &wavelengths {
            if w.len() != values.ncols() {
                return Err(Error::LengthMismatch(format!(
                    "{} wavelengths for {} channels",
                    w.len(),
                    values.ncols()
                )));
            }
            if w.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::invalid("wavelengths must be strictly increasing"));
            }
        }
        Ok(Self { values, wavelengths })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Regression(Vec<f64>),
    Classification { ids: Vec<usize>, label_names: Vec<String> },
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Regression(v) => v.len(),
            Target::Classification { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Target::Regression(_) => Task::Regression,
            Target::Classification { .. } => Task::Classification,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Target::Regression(_) => 0,
            Target::Classification { label_names, .. } => label_names.len(),
        }
    }

    /// Numeric view: regression values, or label ids cast to reals.
    pub fn as_real(&self) -> Vec<f64> {
        match self {
            Target::Regression(v) => v.clone(),
            Target::Classification { ids, .. } => ids.iter().map(|&i| i as f64).collect(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Target {
        match self {
            Target::Regression(v) => Target::Regression(idx.iter().map(|&i| v[i]).collect()),
            Target::Classification { ids, label_names } => Target::Classification {
                ids: idx.iter().map(|&i| ids[i]).collect(),
                label_names: label_names.clone(),
            },
        }
    }

    /// Builds a classification target mapping labels to dense ids in
    /// first-occurrence order.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Target {
        let mut names: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let ids = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *lookup.entry(l.to_string()).or_insert_with(|| {
                    names.push(l.to_string());
                    names.len() - 1
                })
            })
            .collect();
        Target::Classification {
            ids,
            label_names: names,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMethod {
    Predefined { train: Vec<usize>, test: Vec<usize> },
    Spxy { test_fraction: f64 },
    SpxyStratified { test_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub method: SplitMethod,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match &self.method {
            SplitMethod::Predefined { train, test } => {
                if train.is_empty() || test.is_empty() {
                    return Err(Error::Split("predefined train and test must both be nonempty".into()));
                }
                let mut seen = BTreeSet::new();
                for &i in train.iter().chain(test) {
                    if i >= n {
                        return Err(Error::Split(format!("index {i} out of range for {n} samples")));
                    }
                    if !seen.insert(i) {
                        return Err(Error::Split(format!("index {i} appears more than once")));
                    }
                }
                Ok(())
            }
            SplitMethod::Spxy { test_fraction } | SplitMethod::SpxyStratified { test_fraction } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::Split(format!("test_fraction {test_fraction} outside (0, 1)")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub database: String,
    pub task: Task,
    pub x: SpectraMatrix,
    pub y: Target,
    pub split: SplitSpec,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        database: impl Into<String>,
        x: SpectraMatrix,
        y: Target,
        split: SplitSpec,
    ) -> Result<Self> {
        let name = name.into();
        let database = database.into();
        if database.is_empty() {
            return Err(Error::invalid(format!("dataset {name}: empty database key")));
        }
        if x.n_samples() != y.len() {
            return Err(Error::LengthMismatch(format!(
                "dataset {name}: {} spectra but {} targets",
                x.n_samples(),
                y.len()
            )));
        }
        if let Target::Regression(v) = &y {
            if let Some(i) = v.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFinite {
                    row: i,
                    col: x.n_features(),
                });
            }
        }
        split.validate(x.n_samples())?;
        Ok(Self {
            name,
            database,
            task: y.task(),
            x,
            y,
            split,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.n_samples()
    }

    pub fn n_features(&self) -> usize {
        self.x.n_features()
    }
}

pub fn select_rows(x: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Parsed CSV contents before a split is attached.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub x: SpectraMatrix,
    pub feature_names: Vec<String>,
    pub raw_targets: Vec<String>,
}

pub fn read_spectra_csv(path: &Path, target_column: &str) -> Result<CsvTable> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => csv_err(e.to_string()),
        })?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| csv_err(format!("target column {target_column:?} not found")))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != target_idx).collect();
    if feature_cols.is_empty() {
        return Err(csv_err("no spectral columns".into()));
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();

    let mut values = Vec::new();
    let mut raw_targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::LengthMismatch(format!(
                "row {row} has {} cells, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for &col in &feature_cols {
            let cell = &record[col];
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                col,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
        }
        raw_targets.push(record[target_idx].to_string());
    }
    if raw_targets.is_empty() {
        return Err(csv_err("no data rows".into()));
    }
    let n = raw_targets.len();
    let matrix = Matrix::from_row_slice(n, feature_cols.len(), &values);
    let wavelengths: Option<Vec<f64>> = feature_names
        .iter()
        .map(|h| h.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<f64>>>()
        .filter(|w| w.windows(2).all(|p| p[1] > p[0]));
    Ok(CsvTable {
        x: SpectraMatrix::new(matrix, wavelengths)?,
        feature_names,
        raw_targets,
    })
}

fn parse_targets(table: &CsvTable, task: Task, target_col: usize) -> Result<Target> {
    match task {
        Task::Regression => table
            .raw_targets
            .iter()
            .enumerate()
            .map(|(row, s)| {
                let v: f64 = s.parse().map_err(|_| Error::NonNumeric {
                    row,
                    col: target_col,
                    value: s.clone(),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { row, col: target_col })
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Target::Regression),
        Task::Classification => {
            if let Some(row) = table.raw_targets.iter().position(|s| s.is_empty()) {
                return Err(Error::NonFinite { row, col: target_col });
            }
            Ok(Target::from_labels(&table.raw_targets))
        }
    }
}

pub fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::Split(format!("{}:{}: not an index: {l:?}", path.display(), i + 1)))
        })
        .collect()
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates one manifest dataset entry; relative paths resolve
/// against `base_dir`.
pub fn load_dataset(entry: &DatasetEntry, base_dir: &Path) -> Result<Dataset> {
    let path = resolve_path(base_dir, &entry.path);
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let table = read_spectra_csv(&path, &entry.target)?;
    // target column position in the file, for error coordinates
    let target_col = {
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Csv {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let h = r.headers().map_err(|e| Error::Csv {
            path: path.clone(),
            message: e.to_string(),
        })?;
        h.iter().position(|c| c.trim() == entry.target).unwrap_or(0)
    };
    let y = parse_targets(&table, entry.task, target_col)?;
    let seed = entry.split.seed();
    let method = match &entry.split {
        SplitEntry::Predefined {
            train,
            test,
            train_file,
            test_file,
            ..
        } => {
            let train = match (train, train_file) {
                (Some(t), _) => t.clone(),
                (None, Some(f)) => read_index_file(&resolve_path(base_dir, f))?,
                (None, None) => return Err(Error::Split("predefined split needs train or train_file".into())),
            };
            let test = match (test, test_file) {
                (Some(t), _) => t.clone(),
                (None, Some(f)) => read_index_file(&resolve_path(base_dir, f))?,
                (None, None) => return Err(Error::Split("predefined split needs test or test_file".into())),
            };
            SplitMethod::Predefined { train, test }
        }
        SplitEntry::Spxy { test_fraction, .. } => SplitMethod::Spxy {
            test_fraction: *test_fraction,
        },
        SplitEntry::SpxyStratified { test_fraction, .. } => SplitMethod::SpxyStratified {
            test_fraction: *test_fraction,
        },
    };
    Dataset::new(
        entry.name.clone(),
        entry.database.clone(),
        table.x,
        y,
        SplitSpec { method, seed },
    )
}

/// Writes a dataset in the CSV contract. Values use 17 significant digits
/// so a reload is bit-exact.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path, target_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let p = dataset.n_features();
    let mut header: Vec<String> = match dataset.x.wavelengths() {
        Some(wl) => wl.iter().map(|v| format!("{v}")).collect(),
        None => (0..p).map(|j| format!("x{j}")).collect(),
    };
    header.push(target_column.to_string());
    let to_csv = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(to_csv)?;
    let x = dataset.x.values();
    for r in 0..dataset.n_samples() {
        let mut rec: Vec<String> = (0..p).map(|c| format!("{:.16e}", x[(r, c)])).collect();
        rec.push(match &dataset.y {
            Target::Regression(v) => format!("{:.16e}", v[r]),
            Target::Classification { ids, label_names } => label_names[ids[r]].clone(),
        });
        w.write_record(&rec).map_err(to_csv)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolves a dataset's split to (train, test) index lists.
pub fn resolve_split(dataset: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let (train, test) = match &dataset.split.method {
        SplitMethod::Predefined { train, test } => (train.clone(), test.clone()),
        SplitMethod::Spxy { test_fraction } => {
            sampling::spxy_split(dataset.x.values(), &dataset.y.as_real(), *test_fraction)?
        }
        SplitMethod::SpxyStratified { test_fraction } => match &dataset.y {
            Target::Classification { ids, .. } => {
                sampling::stratified_split(dataset.x.values(), ids, *test_fraction, dataset.split.seed)?
            }
            Target::Regression(_) => {
                return Err(Error::Split(format!(
                    "dataset {}: stratified split requires a classification target",
                    dataset.name
                )))
            }
        },
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "dataset {}: empty side after resolution",
            dataset.name
        )));
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub datasets: usize,
    pub median_n: f64,
    pub median_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub datasets: usize,
    pub databases: usize,
    pub per_task: BTreeMap<Task, TaskSummary>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

pub fn summarize_datasets(datasets: &[Dataset]) -> Result<BenchmarkSummary> {
    if datasets.is_empty() {
        return Err(Error::NoDatasets);
    }
    let databases: BTreeSet<&str> = datasets.iter().map(|d| d.database.as_str()).collect();
    let mut per_task = BTreeMap::new();
    for task in [Task::Regression, Task::Classification] {
        let group: Vec<&Dataset> = datasets.iter().filter(|d| d.task == task).collect();
        if group.is_empty() {
            continue;
        }
        let ns: Vec<f64> = group.iter().map(|d| d.n_samples() as f64).collect();
        let ps: Vec<f64> = group.iter().map(|d| d.n_features() as f64).collect();
        per_task.insert(
            task,
            TaskSummary {
                datasets: group.len(),
                median_n: median(&ns).unwrap_or(0.0),
                median_p: median(&ps).unwrap_or(0.0),
            },
        );
    }
    Ok(BenchmarkSummary {
        datasets: datasets.len(),
        databases: databases.len(),
        per_task,
    })
}

pub fn summarize_benchmark(manifest: &BenchmarkManifest) -> Result<BenchmarkSummary> {
    let datasets = manifest.load_datasets()?;
    summarize_datasets(&datasets)
}
