//! Dataset ingestion, age filtering, seeded train/test splits, min-max
//! normalization and the synthetic corruption masks used for training and
//! evaluation.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Number of design variables (everything except strength).
pub const N_DESIGN: usize = 8;
/// Design variables plus strength.
pub const N_COLUMNS: usize = 9;
/// Column index of compressive strength in a full row.
pub const STRENGTH: usize = 8;
/// Upper bound on masked variables per sample in the reference protocol.
pub const MAX_MASKED_LIMIT: usize = 5;

pub const DESIGN_VARS: [&str; N_DESIGN] = ["cement", "bfs", "pfa", "water", "sp", "ca", "fa", "age"];
pub const COLUMNS: [&str; N_COLUMNS] = [
    "cement", "bfs", "pfa", "water", "sp", "ca", "fa", "age", "strength",
];
pub const UNITS: [&str; N_COLUMNS] = [
    "kg/m3", "kg/m3", "kg/m3", "kg/m3", "kg/m3", "kg/m3", "kg/m3", "days", "MPa",
];

/// Index of a design variable by its canonical name.
pub fn design_index(name: &str) -> Option<usize> {
    DESIGN_VARS.iter().position(|v| *v == name)
}

/// One concrete specimen: eight mix variables and its measured strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixDesign {
    pub cement: f64,
    pub bfs: f64,
    pub pfa: f64,
    pub water: f64,
    pub sp: f64,
    pub ca: f64,
    pub fa: f64,
    pub age: f64,
    pub strength: f64,
}

impl MixDesign {
    pub fn from_values(v: [f64; N_COLUMNS]) -> Self {
        MixDesign {
            cement: v[0],
            bfs: v[1],
            pfa: v[2],
            water: v[3],
            sp: v[4],
            ca: v[5],
            fa: v[6],
            age: v[7],
            strength: v[8],
        }
    }

    pub fn values(&self) -> [f64; N_COLUMNS] {
        [
            self.cement,
            self.bfs,
            self.pfa,
            self.water,
            self.sp,
            self.ca,
            self.fa,
            self.age,
            self.strength,
        ]
    }

    pub fn design(&self) -> [f64; N_DESIGN] {
        let v = self.values();
        let mut d = [0.0; N_DESIGN];
        d.copy_from_slice(&v[..N_DESIGN]);
        d
    }

    /// Checks the row invariants; `row` is only used for the error message.
    pub fn validate(&self, row: usize) -> Result<()> {
        for (value, column) in self.values().iter().zip(COLUMNS) {
            let message = if !value.is_finite() {
                "value is not finite"
            } else if *value < 0.0 {
                "value is negative"
            } else {
                continue;
            };
            return Err(Error::Validation {
                row,
                column: column.to_string(),
                message: format!("{message} ({value})"),
            });
        }
        if self.age < 1.0 {
            return Err(Error::Validation {
                row,
                column: "age".into(),
                message: format!("age must be at least 1 day ({})", self.age),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<MixDesign>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(rows: Vec<MixDesign>, provenance: impl Into<String>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            r.validate(i + 1)?;
        }
        Ok(Dataset {
            rows,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as an `n x 9` matrix in raw units.
    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), N_COLUMNS));
        for (mut dst, r) in m.axis_iter_mut(Axis(0)).zip(&self.rows) {
            for (d, v) in dst.iter_mut().zip(r.values()) {
                *d = v;
            }
        }
        m
    }

    pub fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
            provenance: format!("{}#{}", self.provenance, tag),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.values().iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Reads the nine-column concrete CSV. The header must be exactly
/// `cement,bfs,pfa,water,sp,ca,fa,age,strength`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    check_header(&header)?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != N_COLUMNS {
            return Err(Error::Parse {
                row,
                column: COLUMNS.get(record.len()).unwrap_or(&"<extra>").to_string(),
                message: format!("expected {N_COLUMNS} fields, found {}", record.len()),
            });
        }
        let mut values = [0.0; N_COLUMNS];
        for (j, (cell, column)) in record.iter().zip(COLUMNS).enumerate() {
            values[j] = cell.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: column.to_string(),
                message: format!("`{cell}` is not a number"),
            })?;
        }
        let design = MixDesign::from_values(values);
        design.validate(row)?;
        rows.push(design);
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }
    Ok(Dataset {
        rows,
        provenance: path.display().to_string(),
    })
}

fn check_header(header: &[String]) -> Result<()> {
    if let Some(extra) = header.iter().find(|h| !COLUMNS.contains(&h.as_str())) {
        return Err(Error::Schema(format!("unexpected column `{extra}`")));
    }
    if let Some(missing) = COLUMNS.iter().find(|c| !header.iter().any(|h| h == *c)) {
        return Err(Error::Schema(format!("missing column `{missing}`")));
    }
    if header.len() != N_COLUMNS {
        return Err(Error::Schema("duplicated column in header".into()));
    }
    for (i, (h, expected)) in header.iter().zip(COLUMNS).enumerate() {
        if h != expected {
            return Err(Error::Schema(format!(
                "column `{h}` at position {}, expected `{expected}`",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Keeps rows cured for at most `max_age` days, in their original order.
pub fn filter_by_age(ds: &Dataset, max_age: f64) -> Result<Dataset> {
    if !(max_age >= 1.0) {
        return Err(Error::config("max_age", format!("must be >= 1, got {max_age}")));
    }
    Ok(Dataset {
        rows: ds.rows.iter().copied().filter(|r| r.age <= max_age).collect(),
        provenance: format!("{}[age<={max_age}]", ds.provenance),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn reference(seed: u64) -> Self {
        SplitSpec {
            seed,
            train_fraction: 0.8,
        }
    }

    /// `(train, test)` sizes for `n` rows. The test share is floored, so the
    /// 749-row reference set gives 600/149.
    pub fn sizes(&self, n: usize) -> (usize, usize) {
        let test = ((1.0 - self.train_fraction) * n as f64 + 1e-9).floor() as usize;
        let test = test.min(n.saturating_sub(1));
        (n - test, test)
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Split {
    /// Row indices per role as `seed,role,index` CSV.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seed", "role", "index"])?;
        for (role, idx) in [("train", &self.train_indices), ("test", &self.test_indices)] {
            for i in idx {
                w.write_record([self.seed.to_string(), role.to_string(), i.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config(
            "train_fraction",
            format!("must lie in (0, 1), got {}", spec.train_fraction),
        ));
    }
    if ds.len() < 2 {
        return Err(Error::Contract(format!(
            "cannot split a dataset of {} rows",
            ds.len()
        )));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut rng::derived_rng(spec.seed, &[rng::stream::SPLIT]));
    let (n_train, _) = spec.sizes(ds.len());
    let train_indices = perm[..n_train].to_vec();
    let test_indices = perm[n_train..].to_vec();
    Ok(Split {
        seed: spec.seed,
        train: ds.subset(&train_indices, &format!("train{}", spec.seed)),
        test: ds.subset(&test_indices, &format!("test{}", spec.seed)),
        train_indices,
        test_indices,
    })
}

/// Per-column min/max of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; N_COLUMNS],
    pub max: [f64; N_COLUMNS],
}

impl NormStats {
    fn span(&self, j: usize) -> Option<f64> {
        let s = self.max[j] - self.min[j];
        (s > 0.0).then_some(s)
    }

    /// Replaces the strength column statistics by the identity map, so the
    /// strength is carried in MPa through every model.
    pub fn with_raw_strength(mut self) -> Self {
        self.min[STRENGTH] = 0.0;
        self.max[STRENGTH] = 1.0;
        self
    }

    pub fn normalize_value(&self, j: usize, x: f64) -> f64 {
        match self.span(j) {
            Some(s) => (x - self.min[j]) / s,
            None => 0.0,
        }
    }

    pub fn denormalize_value(&self, j: usize, v: f64) -> f64 {
        match self.span(j) {
            Some(s) => self.min[j] + v * s,
            None => self.min[j],
        }
    }

    pub fn normalize(&self, x: &[f64; N_COLUMNS]) -> [f64; N_COLUMNS] {
        std::array::from_fn(|j| self.normalize_value(j, x[j]))
    }

    /// Inference-path normalization: values outside the training range are
    /// clamped into [0, 1].
    pub fn normalize_clamped(&self, x: &[f64; N_COLUMNS]) -> [f64; N_COLUMNS] {
        std::array::from_fn(|j| self.normalize_value(j, x[j]).clamp(0.0, 1.0))
    }

    pub fn denormalize(&self, v: &[f64; N_COLUMNS]) -> [f64; N_COLUMNS] {
        std::array::from_fn(|j| self.denormalize_value(j, v[j]))
    }

    /// Normalized `n x 9` matrix of a dataset (training path, no clamping).
    pub fn normalize_dataset(&self, ds: &Dataset) -> Array2<f64> {
        let mut m = ds.to_matrix();
        for mut row in m.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.normalize_value(j, *v);
            }
        }
        m
    }

    pub fn normalize_dataset_clamped(&self, ds: &Dataset) -> Array2<f64> {
        let mut m = self.normalize_dataset(ds);
        m.mapv_inplace(|v| v.clamp(0.0, 1.0));
        m
    }
}

pub fn fit_normalizer(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Contract("cannot fit normalizer on empty data".into()));
    }
    let mut min = [f64::INFINITY; N_COLUMNS];
    let mut max = [f64::NEG_INFINITY; N_COLUMNS];
    for r in &train.rows {
        for (j, v) in r.values().into_iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormStats { min, max })
}

/// Binary observed(1)/missing(0) indicators over the eight design variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    entries: Array2<f64>,
}

impl MaskMatrix {
    pub fn from_rows(rows: &[[bool; N_DESIGN]]) -> Self {
        let mut entries = Array2::zeros((rows.len(), N_DESIGN));
        for (i, r) in rows.iter().enumerate() {
            for (j, &observed) in r.iter().enumerate() {
                entries[[i, j]] = if observed { 1.0 } else { 0.0 };
            }
        }
        MaskMatrix { entries }
    }

    pub fn from_matrix(entries: Array2<f64>) -> Result<Self> {
        if entries.ncols() != N_DESIGN {
            return Err(Error::Contract(format!(
                "mask needs {N_DESIGN} columns, got {}",
                entries.ncols()
            )));
        }
        if entries.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("mask entries must be 0 or 1".into()));
        }
        Ok(MaskMatrix { entries })
    }

    pub fn all_observed(n: usize) -> Self {
        MaskMatrix {
            entries: Array2::ones((n, N_DESIGN)),
        }
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.entries[[i, j]] == 1.0
    }

    pub fn row(&self, i: usize) -> [bool; N_DESIGN] {
        std::array::from_fn(|j| self.is_observed(i, j))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn select(&self, rows: &[usize]) -> MaskMatrix {
        MaskMatrix {
            entries: self.entries.select(Axis(0), rows),
        }
    }

    pub fn masked_count(&self, i: usize) -> usize {
        self.entries.row(i).iter().filter(|&&v| v == 0.0).count()
    }
}

fn check_max_masked(max_masked: usize) -> Result<()> {
    if !(1..=MAX_MASKED_LIMIT).contains(&max_masked) {
        return Err(Error::config(
            "max_masked",
            format!("must lie in 1..={MAX_MASKED_LIMIT}, got {max_masked}"),
        ));
    }
    Ok(())
}

/// Draws `k ~ Uniform{1..max_masked}` per row, then masks `k` distinct
/// design positions chosen uniformly.
pub fn sample_masks(n_samples: usize, max_masked: usize, rng: &mut Rng) -> Result<MaskMatrix> {
    check_max_masked(max_masked)?;
    let mut entries = Array2::ones((n_samples, N_DESIGN));
    for mut row in entries.axis_iter_mut(Axis(0)) {
        let k = rng.random_range(1..=max_masked);
        for j in index::sample(rng, N_DESIGN, k) {
            row[j] = 0.0;
        }
    }
    Ok(MaskMatrix { entries })
}

/// Frozen evaluation masks; the same seed must be passed for every method
/// compared within one (split, difficulty) cell.
pub fn make_eval_masks(n_samples: usize, max_masked: usize, seed: u64) -> Result<MaskMatrix> {
    if n_samples == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let mut rng = rng::derived_rng(seed, &[rng::stream::EVAL_MASK, max_masked as u64]);
    sample_masks(n_samples, max_masked, &mut rng)
}

/// `MM ⊙ X` on the design columns; any further columns (strength) pass
/// through unchanged.
pub fn corrupt(x: ArrayView2<f64>, mm: &MaskMatrix) -> Result<Array2<f64>> {
    if x.nrows() != mm.nrows() || x.ncols() < N_DESIGN {
        return Err(Error::Contract(format!(
            "corrupt: data is {}x{}, mask is {}x{}",
            x.nrows(),
            x.ncols(),
            mm.nrows(),
            N_DESIGN
        )));
    }
    let mut dc = x.to_owned();
    for ((i, j), v) in dc.indexed_iter_mut() {
        if j < N_DESIGN {
            *v *= mm.entries[[i, j]];
        }
    }
    Ok(dc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub provenance: String,
    pub rows: usize,
    pub columns: Vec<ColumnSummary>,
}

pub fn summarize(ds: &Dataset) -> DatasetSummary {
    let n = ds.len().max(1) as f64;
    let columns = (0..N_COLUMNS)
        .map(|j| {
            let vals = ds.rows.iter().map(|r| r.values()[j]);
            ColumnSummary {
                column: COLUMNS[j].into(),
                unit: UNITS[j].into(),
                min: vals.clone().fold(f64::INFINITY, f64::min),
                max: vals.clone().fold(f64::NEG_INFINITY, f64::max),
                mean: vals.sum::<f64>() / n,
            }
        })
        .collect();
    DatasetSummary {
        provenance: ds.provenance.clone(),
        rows: ds.len(),
        columns,
    }
}

impl DatasetSummary {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "column,unit,min,max,mean")?;
        for c in &self.columns {
            writeln!(out, "{},{},{},{},{}", c.column, c.unit, c.min, c.max, c.mean)?;
        }
        Ok(())
    }
}
