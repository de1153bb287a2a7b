//! Tabular data: schema, cells, CSV ingestion, imputation + encoding, and
//! seeded 60/20/20 splits.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{QuailError, Result};
use crate::rng::{self, tag};

/// Tokens read as a missing cell.
pub const MISSING_TOKENS: [&str; 3] = ["", "NaN", "?"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl FromStr for Task {
    type Err = QuailError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(QuailError::invalid(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Ordered category labels; empty for numeric columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub task: Task,
    /// Class labels for classification targets, in index order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
    pub target: TargetSpec,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>, target: TargetSpec) -> Result<Self> {
        let schema = FeatureSchema { columns, target };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(QuailError::SchemaMismatch(format!(
                    "duplicate column name {:?}",
                    col.name
                )));
            }
            if col.kind == ColumnKind::Categorical {
                if col.categories.is_empty() {
                    return Err(QuailError::SchemaMismatch(format!(
                        "categorical column {:?} has no categories",
                        col.name
                    )));
                }
                let distinct: BTreeSet<_> = col.categories.iter().collect();
                if distinct.len() != col.categories.len() {
                    return Err(QuailError::SchemaMismatch(format!(
                        "categorical column {:?} has duplicate categories",
                        col.name
                    )));
                }
            }
        }
        if names.contains(self.target.name.as_str()) {
            return Err(QuailError::SchemaMismatch(format!(
                "target {:?} also listed as an input column",
                self.target.name
            )));
        }
        if self.target.task == Task::Classification && self.target.classes.is_empty() {
            return Err(QuailError::SchemaMismatch(
                "classification target without classes".into(),
            ));
        }
        Ok(())
    }

    /// Number of raw input columns (D).
    pub fn n_inputs(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.target.task {
            Task::Classification => Some(self.target.classes.len()),
            Task::Regression => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(u32),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match *self {
            Cell::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<u32> {
        match *self {
            Cell::Cat(c) => Some(c),
            _ => None,
        }
    }
}

/// Row-major grid of input cells plus one target value per row.
///
/// Targets are class indices (stored as `f64`) for classification and raw
/// values for regression. Targets are never missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: FeatureSchema,
    cells: Vec<Cell>,
    targets: Vec<f64>,
}

impl Table {
    pub fn new(schema: FeatureSchema, cells: Vec<Cell>, targets: Vec<f64>) -> Result<Self> {
        schema.validate()?;
        let d = schema.n_inputs();
        let n = targets.len();
        if cells.len() != n * d {
            return Err(QuailError::shape(format!(
                "{} cells for {n} rows x {d} columns",
                cells.len()
            )));
        }
        for (idx, cell) in cells.iter().enumerate() {
            let col = &schema.columns[idx % d];
            match (*cell, col.kind) {
                (Cell::Missing, _) => {}
                (Cell::Num(v), ColumnKind::Numeric) if v.is_finite() => {}
                (Cell::Num(v), ColumnKind::Numeric) => {
                    return Err(QuailError::NonFinite(format!(
                        "cell ({}, {:?}) = {v}",
                        idx / d,
                        col.name
                    )))
                }
                (Cell::Cat(c), ColumnKind::Categorical) if (c as usize) < col.categories.len() => {}
                _ => {
                    return Err(QuailError::SchemaMismatch(format!(
                        "cell ({}, {:?}) does not match column kind",
                        idx / d,
                        col.name
                    )))
                }
            }
        }
        if let Some(k) = schema.n_classes() {
            if let Some(bad) = targets.iter().find(|&&t| t < 0.0 || t.fract() != 0.0 || t as usize >= k) {
                return Err(QuailError::InvalidArgument(format!("class index {bad} out of range")));
            }
        } else if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(QuailError::NonFinite(format!("target {bad}")));
        }
        Ok(Table {
            schema,
            cells,
            targets,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.n_inputs()
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.n_cols() + col]
    }

    pub(crate) fn set_cell(&mut self, row: usize, col: usize, cell: Cell) {
        let d = self.n_cols();
        self.cells[row * d + col] = cell;
    }

    pub fn row(&self, row: usize) -> &[Cell] {
        let d = self.n_cols();
        &self.cells[row * d..(row + 1) * d]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_rows()).map(move |r| self.cell(r, col))
    }

    /// Non-missing numeric values of a column, in row order.
    pub fn numeric_values(&self, col: usize) -> Vec<f64> {
        self.column(col).filter_map(|c| c.as_num()).collect()
    }

    /// Copies the given rows, in the given order, into a new table.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let d = self.n_cols();
        let mut cells = Vec::with_capacity(rows.len() * d);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            cells.extend_from_slice(self.row(r));
            targets.push(self.targets[r]);
        }
        Table {
            schema: self.schema.clone(),
            cells,
            targets,
        }
    }

    /// Writes the table as CSV: input columns in schema order, target last.
    /// Missing cells are written as empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(&self.schema.target.name);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            for (j, col) in self.schema.columns.iter().enumerate() {
                record.push(match self.cell(r, j) {
                    Cell::Num(v) => format!("{v}"),
                    Cell::Cat(c) => col.categories[c as usize].clone(),
                    Cell::Missing => String::new(),
                });
            }
            let t = self.targets[r];
            record.push(match self.schema.target.task {
                Task::Classification => self.schema.target.classes[t as usize].clone(),
                Task::Regression => format!("{t}"),
            });
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| QuailError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| QuailError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn is_missing_token(s: &str) -> bool {
    MISSING_TOKENS.contains(&s)
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a CSV file with a header row. See [`read_csv`].
pub fn load_csv(
    path: &Path,
    target: &str,
    task: Task,
    schema_hint: Option<&FeatureSchema>,
) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| QuailError::io(path, e))?;
    read_csv(std::io::BufReader::new(file), target, task, schema_hint)
}

/// Parses CSV data into a [`Table`].
///
/// Without a hint, a column is numeric when every non-missing token parses as
/// a finite number and categorical otherwise; categories are sorted. With a
/// hint the column kinds and category lists are fixed, and any value outside
/// them is an error.
pub fn read_csv<R: Read>(
    reader: R,
    target: &str,
    task: Task,
    schema_hint: Option<&FeatureSchema>,
) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let target_pos = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| QuailError::SchemaMismatch(format!("target column {target:?} not in header")))?;
    let input_pos: Vec<usize> = (0..header.len()).filter(|&i| i != target_pos).collect();

    let mut raw: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(QuailError::Parse {
                row: i + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        raw.push(rec);
    }

    let schema = match schema_hint {
        Some(hint) => {
            let names: Vec<&str> = input_pos.iter().map(|&p| header[p].as_str()).collect();
            let hint_names: Vec<&str> = hint.columns.iter().map(|c| c.name.as_str()).collect();
            if names != hint_names || hint.target.name != target || hint.target.task != task {
                return Err(QuailError::SchemaMismatch(
                    "CSV header does not match the schema hint".into(),
                ));
            }
            hint.clone()
        }
        None => infer_schema(&header, &input_pos, target_pos, task, &raw)?,
    };

    let d = input_pos.len();
    let mut cells = Vec::with_capacity(raw.len() * d);
    let mut targets = Vec::with_capacity(raw.len());
    for (i, rec) in raw.iter().enumerate() {
        for (j, &p) in input_pos.iter().enumerate() {
            let tok = &rec[p];
            let col = &schema.columns[j];
            let cell = if is_missing_token(tok) {
                Cell::Missing
            } else {
                match col.kind {
                    ColumnKind::Numeric => Cell::Num(parse_number(tok).ok_or_else(|| {
                        QuailError::Parse {
                            row: i + 1,
                            message: format!("column {:?}: cannot parse {tok:?} as a number", col.name),
                        }
                    })?),
                    ColumnKind::Categorical => {
                        let idx = col.categories.iter().position(|c| c == tok).ok_or_else(|| {
                            QuailError::UnknownCategory {
                                column: col.name.clone(),
                                value: tok.to_owned(),
                            }
                        })?;
                        Cell::Cat(idx as u32)
                    }
                }
            };
            cells.push(cell);
        }
        let tok = &rec[target_pos];
        if is_missing_token(tok) {
            return Err(QuailError::Parse {
                row: i + 1,
                message: "missing target value".into(),
            });
        }
        targets.push(match task {
            Task::Regression => parse_number(tok).ok_or_else(|| QuailError::Parse {
                row: i + 1,
                message: format!("cannot parse target {tok:?} as a number"),
            })?,
            Task::Classification => schema
                .target
                .classes
                .iter()
                .position(|c| c == tok)
                .ok_or_else(|| QuailError::UnknownCategory {
                    column: target.to_owned(),
                    value: tok.to_owned(),
                })? as f64,
        });
    }
    Table::new(schema, cells, targets)
}

fn infer_schema(
    header: &[String],
    input_pos: &[usize],
    target_pos: usize,
    task: Task,
    raw: &[csv::StringRecord],
) -> Result<FeatureSchema> {
    let distinct = |p: usize| -> Vec<String> {
        let set: BTreeSet<&str> = raw
            .iter()
            .map(|r| &r[p])
            .filter(|t| !is_missing_token(t))
            .collect();
        set.into_iter().map(str::to_owned).collect()
    };
    let columns = input_pos
        .iter()
        .map(|&p| {
            let numeric = raw
                .iter()
                .map(|r| &r[p])
                .filter(|t| !is_missing_token(t))
                .all(|t| parse_number(t).is_some());
            if numeric {
                Column::numeric(&header[p])
            } else {
                Column::categorical(&header[p], distinct(p))
            }
        })
        .collect();
    let classes = match task {
        Task::Classification => distinct(target_pos),
        Task::Regression => Vec::new(),
    };
    FeatureSchema::new(
        columns,
        TargetSpec {
            name: header[target_pos].clone(),
            task,
            classes,
        },
    )
}

/// One seeded 60/20/20 partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Partition sizes for `n` rows: train and validation rounded to nearest,
/// test takes the remainder.
pub fn split_sizes(n_rows: usize) -> (usize, usize, usize) {
    let train = (0.6 * n_rows as f64).round() as usize;
    let val = (0.2 * n_rows as f64).round() as usize;
    (train, val, n_rows - train - val)
}

/// Builds `k` independent shuffle-and-partition splits.
pub fn make_bootstrap_splits(n_rows: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if n_rows < 10 {
        return Err(QuailError::invalid(format!(
            "need at least 10 rows to split, got {n_rows}"
        )));
    }
    if k == 0 {
        return Err(QuailError::invalid("number of splits must be at least 1"));
    }
    let (n_train, n_val, n_test) = split_sizes(n_rows);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(QuailError::invalid(format!("{n_rows} rows leave an empty partition")));
    }
    Ok((0..k)
        .map(|s| {
            let split_seed = rng::derive_seed(seed, tag::SPLIT, s as u64);
            let mut idx: Vec<usize> = (0..n_rows).collect();
            idx.shuffle(&mut rng::stream(split_seed, tag::SPLIT, 0));
            let test_idx = idx.split_off(n_train + n_val);
            let val_idx = idx.split_off(n_train);
            Split {
                train_idx: idx,
                val_idx,
                test_idx,
                seed: split_seed,
            }
        })
        .collect())
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnStats {
    Numeric { median: f64, mean: f64, std: f64 },
    Categorical { mode: u32, width: usize },
}

/// Imputation, standardization and one-hot layout fitted on a training
/// partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    schema: FeatureSchema,
    stats: Vec<ColumnStats>,
    /// Regression targets are standardized with these training statistics.
    target_scale: Option<(f64, f64)>,
}

impl Preprocessor {
    pub fn stats(&self) -> &[ColumnStats] {
        &self.stats
    }

    pub fn target_scale(&self) -> Option<(f64, f64)> {
        self.target_scale
    }

    /// Encoded width D'.
    pub fn encoded_width(&self) -> usize {
        self.stats
            .iter()
            .map(|s| match s {
                ColumnStats::Numeric { .. } => 1,
                ColumnStats::Categorical { width, .. } => *width,
            })
            .sum()
    }
}

const STD_FLOOR: f64 = 1e-12;

/// Fits imputation and scaling statistics on the training rows only.
pub fn fit_preprocessor(train: &Table) -> Result<Preprocessor> {
    if train.n_rows() == 0 {
        return Err(QuailError::invalid("cannot fit a preprocessor on zero rows"));
    }
    let schema = train.schema().clone();
    let mut stats = Vec::with_capacity(schema.n_inputs());
    for (j, col) in schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Numeric => {
                let mut present = train.numeric_values(j);
                if present.is_empty() {
                    return Err(QuailError::invalid(format!(
                        "column {:?} is entirely missing in the training partition",
                        col.name
                    )));
                }
                present.sort_by(f64::total_cmp);
                let median = quantile_sorted(&present, 0.5);
                // Sorted imputed values keep the statistics independent of row order.
                let missing = train.n_rows() - present.len();
                let mut imputed = present;
                imputed.extend(std::iter::repeat_n(median, missing));
                imputed.sort_by(f64::total_cmp);
                let mean = imputed.iter().sum::<f64>() / imputed.len() as f64;
                let std = sample_std_about(&imputed, mean);
                stats.push(ColumnStats::Numeric { median, mean, std });
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; col.categories.len()];
                for c in train.column(j).filter_map(|c| c.as_cat()) {
                    counts[c as usize] += 1;
                }
                if counts.iter().all(|&c| c == 0) {
                    return Err(QuailError::invalid(format!(
                        "column {:?} is entirely missing in the training partition",
                        col.name
                    )));
                }
                // Ties go to the lowest category index.
                let mode = counts
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
                stats.push(ColumnStats::Categorical {
                    mode: mode as u32,
                    width: col.categories.len(),
                });
            }
        }
    }
    let target_scale = match schema.target.task {
        Task::Regression => {
            let mut y = train.targets().to_vec();
            y.sort_by(f64::total_cmp);
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let std = sample_std_about(&y, mean);
            Some((mean, if std < STD_FLOOR { 1.0 } else { std }))
        }
        Task::Classification => None,
    };
    Ok(Preprocessor {
        schema,
        stats,
        target_scale,
    })
}

fn sample_std_about(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Dense model input produced by a [`Preprocessor`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub x: Array2<f64>,
    /// Class indices or standardized regression targets.
    pub y: Vec<f64>,
    pub task: Task,
    pub n_classes: Option<usize>,
    /// Encoded slice of each raw column.
    pub column_map: Vec<Range<usize>>,
    /// Raw column of each encoded column.
    pub feature_of_encoded: Vec<usize>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            x: self.x.select(ndarray::Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            task: self.task,
            n_classes: self.n_classes,
            column_map: self.column_map.clone(),
            feature_of_encoded: self.feature_of_encoded.clone(),
        }
    }
}

/// Imputes, standardizes and one-hot encodes `rows`.
pub fn apply_preprocessor(p: &Preprocessor, rows: &Table) -> Result<EncodedMatrix> {
    if rows.schema() != &p.schema {
        return Err(QuailError::SchemaMismatch(
            "table schema differs from the fitted preprocessor".into(),
        ));
    }
    let width = p.encoded_width();
    let mut column_map = Vec::with_capacity(p.stats.len());
    let mut feature_of_encoded = Vec::with_capacity(width);
    let mut offset = 0;
    for (j, s) in p.stats.iter().enumerate() {
        let w = match s {
            ColumnStats::Numeric { .. } => 1,
            ColumnStats::Categorical { width, .. } => *width,
        };
        column_map.push(offset..offset + w);
        feature_of_encoded.extend(std::iter::repeat_n(j, w));
        offset += w;
    }

    let n = rows.n_rows();
    let mut x = Array2::<f64>::zeros((n, width));
    for r in 0..n {
        for (j, s) in p.stats.iter().enumerate() {
            let start = column_map[j].start;
            match *s {
                ColumnStats::Numeric { median, mean, std } => {
                    let v = rows.cell(r, j).as_num().unwrap_or(median);
                    x[[r, start]] = if std < STD_FLOOR { 0.0 } else { (v - mean) / std };
                }
                ColumnStats::Categorical { mode, .. } => {
                    let c = rows.cell(r, j).as_cat().unwrap_or(mode);
                    x[[r, start + c as usize]] = 1.0;
                }
            }
        }
    }
    let y = match p.target_scale {
        Some((mean, std)) => rows.targets().iter().map(|t| (t - mean) / std).collect(),
        None => rows.targets().to_vec(),
    };
    Ok(EncodedMatrix {
        x,
        y,
        task: p.schema.target.task,
        n_classes: p.schema.n_classes(),
        column_map,
        feature_of_encoded,
    })
}
