//! CSV ingestion. Files are UTF-8 with a header row; every body cell used
//! in the analysis must be numeric. Row numbers in errors count data rows
//! from 1, not counting the header.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use eminp::numcore::linalg::Matrix;
use eminp::pvalues::TwoSampleData;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// An `n × k` sample with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub data: Matrix,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn k(&self) -> usize {
        self.data.cols()
    }

    pub fn means(&self) -> Vec<f64> {
        self.data.column_means()
    }
}

/// Two groups selected from one file, in the order given by the user.
#[derive(Debug, Clone)]
pub struct TwoSampleDataset {
    pub labels: Vec<String>,
    pub groups: (String, String),
    pub data: TwoSampleData,
    /// Rows of the selected groups dropped for empty cells.
    pub dropped: usize,
}

impl TwoSampleDataset {
    pub fn sizes(&self) -> (usize, usize) {
        self.data.sizes()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Drop rows with empty cells instead of failing with
    /// [`DataError::MissingValue`].
    pub drop_incomplete: bool,
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_error(e: csv::Error) -> DataError {
    DataError::Csv(e.to_string())
}

enum Cell {
    Value(f64),
    Empty,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Cell, DataError> {
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
        return Ok(Cell::Empty);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Cell::Value(v)),
        _ => Err(DataError::ParseError {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Parses the numeric columns of one record. `None` means the row had an
/// empty cell and `drop_incomplete` is set.
fn numeric_row(
    record: &csv::StringRecord,
    columns: &[(usize, String)],
    row: usize,
    opts: LoadOptions,
) -> Result<Option<Vec<f64>>, DataError> {
    let mut out = Vec::with_capacity(columns.len());
    for (idx, name) in columns {
        match parse_cell(record.get(*idx).unwrap_or(""), row, name)? {
            Cell::Value(v) => out.push(v),
            Cell::Empty if opts.drop_incomplete => return Ok(None),
            Cell::Empty => {
                return Err(DataError::MissingValue {
                    row,
                    column: name.clone(),
                })
            }
        }
    }
    Ok(Some(out))
}

pub fn load_one_sample(path: &Path) -> Result<Dataset, DataError> {
    read_one_sample(open(path)?)
}

/// Every column is a measure; at least two rows are required.
pub fn read_one_sample<R: Read>(input: R) -> Result<Dataset, DataError> {
    let mut rdr = reader(input);
    let labels: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if labels.is_empty() {
        return Err(DataError::NoNumericColumns);
    }
    let columns: Vec<(usize, String)> = labels.iter().cloned().enumerate().collect();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        if let Some(r) = numeric_row(&record, &columns, i + 1, LoadOptions::default())? {
            rows.push(r);
        }
    }
    if rows.len() < 2 {
        return Err(DataError::TooFewRows {
            group: None,
            found: rows.len(),
            needed: 2,
        });
    }
    Ok(Dataset {
        labels,
        data: Matrix::from_rows(&rows).map_err(|e| DataError::Csv(e.to_string()))?,
    })
}

pub fn load_two_sample(
    path: &Path,
    group_column: &str,
    order: (&str, &str),
    opts: LoadOptions,
) -> Result<TwoSampleDataset, DataError> {
    read_two_sample(open(path)?, group_column, order, opts)
}

/// Rows whose group label is `order.0` form the first sample and rows with
/// `order.1` the second; other labels are ignored. All remaining columns
/// are measures.
pub fn read_two_sample<R: Read>(
    input: R,
    group_column: &str,
    order: (&str, &str),
    opts: LoadOptions,
) -> Result<TwoSampleDataset, DataError> {
    let mut rdr = reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let gidx = header
        .iter()
        .position(|h| h == group_column)
        .ok_or_else(|| DataError::MissingColumn(group_column.to_string()))?;
    let columns: Vec<(usize, String)> = header.iter().cloned().enumerate().filter(|(i, _)| *i != gidx).collect();
    if columns.is_empty() {
        return Err(DataError::NoNumericColumns);
    }
    let mut seen = std::collections::BTreeSet::new();
    let (mut g1, mut g2, mut dropped) = (Vec::new(), Vec::new(), 0);
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let label = record.get(gidx).unwrap_or("");
        seen.insert(label.to_string());
        let target = if label == order.0 {
            &mut g1
        } else if label == order.1 {
            &mut g2
        } else {
            continue;
        };
        match numeric_row(&record, &columns, i + 1, opts)? {
            Some(r) => target.push(r),
            None => dropped += 1,
        }
    }
    for label in [order.0, order.1] {
        if !seen.contains(label) {
            return Err(DataError::UnknownGroupLabel {
                label: label.to_string(),
                available: seen.iter().cloned().collect(),
            });
        }
    }
    for (label, rows) in [(order.0, &g1), (order.1, &g2)] {
        if rows.len() < 2 {
            return Err(DataError::TooFewRows {
                group: Some(label.to_string()),
                found: rows.len(),
                needed: 2,
            });
        }
    }
    let to_matrix = |rows: &[Vec<f64>]| Matrix::from_rows(rows).map_err(|e| DataError::Csv(e.to_string()));
    let data = TwoSampleData::new(to_matrix(&g1)?, to_matrix(&g2)?).map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(TwoSampleDataset {
        labels: columns.into_iter().map(|(_, n)| n).collect(),
        groups: (order.0.to_string(), order.1.to_string()),
        data,
        dropped,
    })
}
