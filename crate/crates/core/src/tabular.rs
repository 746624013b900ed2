//! Columnar tables with per-cell missingness, CSV ingestion, profiling and
//! the deletion-based treatments (listwise and pairwise).
//!
//! A [`Table`] is immutable once built: every imputer takes a table by
//! reference and returns a new one.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// Missing tokens used when the caller does not configure any.
pub const DEFAULT_MISSING_TOKENS: [&str; 3] = ["", "NA", "?"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("csv error: {0}")]
    Csv(String),
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {column:?} has {found} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("column {column:?} row {row}: numeric cells must be finite")]
    NonFinite { column: String, row: usize },
    #[error("column {column:?} row {row}: {value:?} is not a number")]
    NotNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column {column:?} is not {expected}")]
    KindMismatch { column: String, expected: ColumnKind },
    #[error("table has no rows or no columns")]
    Empty,
    #[error("insufficient data: need at least {needed} overlapping rows, found {found}")]
    InsufficientData { needed: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Nominal,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Numeric => f.write_str("numeric"),
            ColumnKind::Nominal => f.write_str("nominal"),
        }
    }
}

/// A present cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Cat(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            Value::Num(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

/// Cell storage; `None` is a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cells", rename_all = "lowercase")]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Nominal(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, cells: Vec<Option<f64>>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric(cells),
        }
    }

    pub fn nominal<S: Into<String>>(name: impl Into<String>, cells: Vec<Option<S>>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Nominal(cells.into_iter().map(|c| c.map(Into::into)).collect()),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Nominal(_) => ColumnKind::Nominal,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Nominal(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Nominal(v) => v[row].is_none(),
        }
    }

    pub fn get(&self, row: usize) -> Option<Value> {
        match &self.data {
            ColumnData::Numeric(v) => v[row].map(Value::Num),
            ColumnData::Nominal(v) => v[row].clone().map(Value::Cat),
        }
    }

    pub fn n_missing(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_missing(r)).count()
    }

    pub fn numeric_cells(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Nominal(_) => None,
        }
    }

    pub fn nominal_cells(&self) -> Option<&[Option<String>]> {
        match &self.data {
            ColumnData::Nominal(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }

    /// Present numeric values in row order.
    pub fn observed_f64(&self) -> Vec<f64> {
        self.numeric_cells()
            .map(|v| v.iter().flatten().copied().collect())
            .unwrap_or_default()
    }

    fn select(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Nominal(v) => {
                ColumnData::Nominal(rows.iter().map(|&r| v[r].clone()).collect())
            }
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }

    /// Writes `value` into `row`. Kind mismatches are a programming error.
    pub(crate) fn set(&mut self, row: usize, value: Value) {
        match (&mut self.data, value) {
            (ColumnData::Numeric(v), Value::Num(x)) => v[row] = Some(x),
            (ColumnData::Nominal(v), Value::Cat(s)) => v[row] = Some(s),
            (data, value) => unreachable!("kind mismatch writing {value:?} into {data:?}"),
        }
    }
}

/// An ordered set of equal-length, uniquely named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct Table {
    columns: Vec<Column>,
    n_rows: usize,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    n_rows: usize,
    columns: Vec<Column>,
}

impl TryFrom<RawTable> for Table {
    type Error = TableError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        let mut table = Table::new(raw.columns)?;
        if table.columns.is_empty() {
            table.n_rows = raw.n_rows;
        } else if table.n_rows != raw.n_rows {
            return Err(TableError::LengthMismatch {
                column: table.columns[0].name.clone(),
                expected: raw.n_rows,
                found: table.n_rows,
            });
        }
        Ok(table)
    }
}

impl From<Table> for RawTable {
    fn from(t: Table) -> Self {
        RawTable {
            n_rows: t.n_rows,
            columns: t.columns,
        }
    }
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self, TableError> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::DuplicateColumn(col.name.clone()));
            }
            if col.len() != n_rows {
                return Err(TableError::LengthMismatch {
                    column: col.name.clone(),
                    expected: n_rows,
                    found: col.len(),
                });
            }
            if let ColumnData::Numeric(v) = &col.data {
                if let Some(row) = v.iter().position(|c| matches!(c, Some(x) if !x.is_finite())) {
                    return Err(TableError::NonFinite {
                        column: col.name.clone(),
                        row,
                    });
                }
            }
        }
        Ok(Table { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&Column, TableError> {
        Ok(&self.columns[self.column_index(name)?])
    }

    /// Looks up a numeric column and returns its cells.
    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>], TableError> {
        self.column(name)?
            .numeric_cells()
            .ok_or_else(|| TableError::KindMismatch {
                column: name.to_string(),
                expected: ColumnKind::Numeric,
            })
    }

    pub fn row_has_missing(&self, row: usize) -> bool {
        self.columns.iter().any(|c| c.is_missing(row))
    }

    pub fn has_missing(&self) -> bool {
        (0..self.n_rows).any(|r| self.row_has_missing(r))
    }

    /// A new table with only `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Replaces the column of the same name. Kind and length must match.
    pub fn with_column(&self, column: Column) -> Result<Table, TableError> {
        let idx = self.column_index(&column.name)?;
        if column.len() != self.n_rows {
            return Err(TableError::LengthMismatch {
                found: column.len(),
                column: column.name,
                expected: self.n_rows,
            });
        }
        if column.kind() != self.columns[idx].kind() {
            return Err(TableError::KindMismatch {
                expected: self.columns[idx].kind(),
                column: column.name,
            });
        }
        let mut columns = self.columns.clone();
        columns[idx] = column;
        Ok(Table {
            columns,
            n_rows: self.n_rows,
        })
    }

    pub(crate) fn column_mut(&mut self, idx: usize) -> &mut Column {
        &mut self.columns[idx]
    }

    /// Renders the table as CSV with a header row; missing cells become
    /// `missing_token`.
    pub fn to_csv(&self, missing_token: &str) -> String {
        let mut out = String::new();
        write_record(&mut out, self.column_names());
        for row in 0..self.n_rows {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|c| c.get(row).map_or_else(|| missing_token.to_string(), |v| v.to_string()))
                .collect();
            write_record(&mut out, record.iter().map(String::as_str));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub missing_tokens: BTreeSet<String>,
    pub has_header: bool,
    pub kind_overrides: BTreeMap<String, ColumnKind>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing_tokens: DEFAULT_MISSING_TOKENS.iter().map(|s| s.to_string()).collect(),
            has_header: true,
            kind_overrides: BTreeMap::new(),
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Splits RFC-4180 text into records, each tagged with its starting line.
///
/// Unlike most CSV readers a blank line is a record holding one empty
/// field, so a single-column file can express a missing cell as an empty
/// line. A final line terminator does not start a new record.
fn read_records(text: &str) -> Result<Vec<(u64, Vec<String>)>, TableError> {
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut field = String::new();
    let mut line: u64 = 1;
    let mut start_line = 1;
    let mut in_quotes = false;
    let mut chars = text.chars().peekable();
    let mut pending = false;
    while let Some(c) = chars.next() {
        pending = true;
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => in_quotes = false,
                '\n' => {
                    line += 1;
                    field.push(c);
                }
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' if field.is_empty() => in_quotes = true,
            ',' => record.push(std::mem::take(&mut field)),
            '\r' if chars.peek() == Some(&'\n') => {}
            '\n' | '\r' => {
                record.push(std::mem::take(&mut field));
                records.push((start_line, std::mem::take(&mut record)));
                line += 1;
                start_line = line;
                pending = false;
            }
            _ => field.push(c),
        }
    }
    if in_quotes {
        return Err(TableError::Csv(format!("unterminated quoted field starting on line {start_line}")));
    }
    if pending {
        record.push(field);
        records.push((start_line, record));
    }
    Ok(records)
}

fn write_field(out: &mut String, field: &str) {
    if field.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&field.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(field);
    }
}

fn write_record<'a>(out: &mut String, fields: impl IntoIterator<Item = &'a str>) {
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_field(out, f);
    }
    out.push('\n');
}

/// Parses RFC-4180 CSV text into a [`Table`].
///
/// A column is numeric iff every present cell parses as a finite real,
/// unless `kind_overrides` says otherwise. Without a header, columns are
/// named `col0`, `col1`, ...
pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<Table, TableError> {
    let mut records = read_records(text)?.into_iter();
    let names: Vec<String> = if options.has_header {
        records.next().map(|(_, r)| r).unwrap_or_default()
    } else {
        Vec::new()
    };
    let mut names = (options.has_header || !names.is_empty()).then_some(names);

    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    for (line, record) in records {
        let width = names.as_ref().map_or(record.len(), Vec::len);
        if names.is_none() {
            names = Some((0..width).map(|i| format!("col{i}")).collect());
        }
        if record.len() != width {
            return Err(TableError::RaggedRow {
                row: line,
                expected: width,
                found: record.len(),
            });
        }
        raw.push(
            record
                .into_iter()
                .map(|f| (!options.missing_tokens.contains(&f)).then_some(f))
                .collect(),
        );
    }

    let names = names.unwrap_or_default();
    let mut columns = Vec::with_capacity(names.len());
    for (ci, name) in names.into_iter().enumerate() {
        let cells: Vec<Option<String>> = raw.iter_mut().map(|row| row[ci].take()).collect();
        let kind = match options.kind_overrides.get(&name) {
            Some(k) => *k,
            None if cells.iter().flatten().all(|s| parse_number(s).is_some()) => {
                ColumnKind::Numeric
            }
            None => ColumnKind::Nominal,
        };
        let column = match kind {
            ColumnKind::Nominal => Column::nominal(name, cells),
            ColumnKind::Numeric => {
                let mut values = Vec::with_capacity(cells.len());
                for (row, cell) in cells.into_iter().enumerate() {
                    values.push(match cell {
                        None => None,
                        Some(s) => Some(parse_number(&s).ok_or_else(|| TableError::NotNumeric {
                            column: name.clone(),
                            row,
                            value: s,
                        })?),
                    });
                }
                Column::numeric(name, values)
            }
        };
        columns.push(column);
    }
    Table::new(columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub kind: ColumnKind,
    pub n_observed: usize,
    pub missing_rate: f64,
    /// Numeric only; `None` when nothing is observed.
    pub mean: Option<f64>,
    /// Population variance over present cells.
    pub variance: Option<f64>,
    pub mode: Option<String>,
    /// Every category sharing the top count when there is a tie.
    pub mode_ties: Vec<String>,
    pub category_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub n_rows: usize,
    pub columns: Vec<ColumnProfile>,
}

/// Most frequent category; ties go to the lexicographically smallest.
/// Returns the mode and the full tie set (empty when there is no tie).
pub(crate) fn mode_of<'a>(values: impl IntoIterator<Item = &'a str>) -> Option<(String, Vec<String>)> {
    let counts = category_counts(values);
    let top = *counts.values().max()?;
    let tied: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| n == top)
        .map(|(k, _)| k.clone())
        .collect();
    let mode = tied[0].clone();
    Some((mode, if tied.len() > 1 { tied } else { Vec::new() }))
}

fn category_counts<'a>(values: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v.to_string()).or_insert(0) += 1;
    }
    counts
}

pub fn profile_column(column: &Column, n_rows: usize) -> ColumnProfile {
    let n_observed = n_rows - column.n_missing();
    let mut p = ColumnProfile {
        name: column.name.clone(),
        kind: column.kind(),
        n_observed,
        missing_rate: (n_rows - n_observed) as f64 / n_rows as f64,
        mean: None,
        variance: None,
        mode: None,
        mode_ties: Vec::new(),
        category_counts: BTreeMap::new(),
    };
    match &column.data {
        ColumnData::Numeric(_) => {
            if let Some((m, v)) = stats::mean_var(&column.observed_f64()) {
                p.mean = Some(m);
                p.variance = Some(v);
            }
        }
        ColumnData::Nominal(cells) => {
            let present = || cells.iter().flatten().map(String::as_str);
            p.category_counts = category_counts(present());
            if let Some((mode, ties)) = mode_of(present()) {
                p.mode = Some(mode);
                p.mode_ties = ties;
            }
        }
    }
    p
}

/// One profile per column, in column order.
pub fn profile(table: &Table) -> Result<ProfileReport, TableError> {
    if table.n_rows() == 0 || table.n_cols() == 0 {
        return Err(TableError::Empty);
    }
    Ok(ProfileReport {
        n_rows: table.n_rows(),
        columns: table
            .columns()
            .iter()
            .map(|c| profile_column(c, table.n_rows()))
            .collect(),
    })
}

/// Respondent (`A_R`) and nonrespondent (`A_m`) row indices for one column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexPartition {
    pub target_column: String,
    pub respondents: Vec<usize>,
    pub nonrespondents: Vec<usize>,
}

pub fn partition(table: &Table, target: &str) -> Result<IndexPartition, TableError> {
    let column = table.column(target)?;
    let (nonrespondents, respondents): (Vec<usize>, Vec<usize>) =
        (0..table.n_rows()).partition(|&r| column.is_missing(r));
    Ok(IndexPartition {
        target_column: target.to_string(),
        respondents,
        nonrespondents,
    })
}

/// Complete-case analysis: keeps rows with no missing cell, in order.
pub fn delete_listwise(table: &Table) -> Table {
    let keep: Vec<usize> = (0..table.n_rows())
        .filter(|&r| !table.row_has_missing(r))
        .collect();
    table.select_rows(&keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseStats {
    pub n_pairs: usize,
    /// Sample covariance (divisor `n_pairs - 1`).
    pub covariance: f64,
    /// `None` when either column is constant over the overlapping rows.
    pub correlation: Option<f64>,
}

/// Covariance and correlation over the rows where both columns are present.
pub fn delete_pairwise_stats(
    table: &Table,
    col_a: &str,
    col_b: &str,
) -> Result<PairwiseStats, TableError> {
    let a = table.numeric(col_a)?;
    let b = table.numeric(col_b)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    let n = xs.len();
    if n < 2 {
        return Err(TableError::InsufficientData { needed: 2, found: n });
    }
    let mx = stats::mean(&xs);
    let my = stats::mean(&ys);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let correlation = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok(PairwiseStats {
        n_pairs: n,
        covariance: sxy / (n - 1) as f64,
        correlation,
    })
}

/// Column names mapped to their positions; handy for callers building rows.
pub fn name_index(table: &Table) -> HashMap<&str, usize> {
    table.column_names().enumerate().map(|(i, n)| (n, i)).collect()
}
