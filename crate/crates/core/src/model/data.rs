use std::io::Read;
use std::path::Path;

use crate::error::{EspError, Result};

/// An immutable T×p table of finite observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Requires at least two rows of equal
    /// positive length and finite entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let n_rows = rows.len();
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(EspError::InvalidInput(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    row.len()
                )));
            }
            values.extend(row);
        }
        Self::from_flat(values, n_rows, n_cols)
    }

    pub fn from_flat(values: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if n_rows < 2 {
            return Err(EspError::InvalidInput(format!(
                "a dataset needs at least 2 rows, got {n_rows}"
            )));
        }
        if n_cols == 0 || values.len() != n_rows * n_cols {
            return Err(EspError::InvalidInput(format!(
                "flat buffer of length {} does not match {n_rows}x{n_cols}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EspError::InvalidInput(format!(
                "non-finite entry at row {} column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(Self {
            values,
            n_rows,
            n_cols,
            column_names: None,
        })
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_cols {
            return Err(EspError::InvalidInput(format!(
                "{} column names for {} columns",
                names.len(),
                self.n_cols
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    /// Reads a comma-separated file whose first line holds column names.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| EspError::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(EspError::Parse {
                line: 1,
                message: "missing header line".into(),
            });
        }
        let mut values = Vec::new();
        let mut n_rows = 0;
        for record in rdr.records() {
            let record = record.map_err(|e| EspError::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != header.len() {
                return Err(EspError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            for (field, name) in record.iter().zip(&header) {
                let v: f64 = field.parse().map_err(|_| EspError::Parse {
                    line,
                    message: format!("cannot parse {field:?} in column {name:?}"),
                })?;
                if !v.is_finite() {
                    return Err(EspError::Parse {
                        line,
                        message: format!("non-finite value in column {name:?}"),
                    });
                }
                values.push(v);
            }
            n_rows += 1;
        }
        Self::from_flat(values, n_rows, header.len())?.with_column_names(header)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_cols..(t + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names
            .as_ref()
            .and_then(|names| names.iter().position(|n| n == name))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Copy with rows reordered by `order` (a permutation of `0..T`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_rows];
        if order.len() != self.n_rows {
            return Err(EspError::InvalidInput("permutation length mismatch".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            if i >= self.n_rows || std::mem::replace(&mut seen[i], true) {
                return Err(EspError::InvalidInput("not a permutation".into()));
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            values,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            column_names: self.column_names.clone(),
        })
    }
}
