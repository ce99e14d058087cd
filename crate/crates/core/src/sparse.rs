//! Row-major sparse real matrix with cached column supports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse `rows x cols` matrix. Each row keeps its nonzeros sorted by column;
/// `col_support[n]` is the sorted list of rows with a nonzero in column `n`.
///
/// Explicit zeros are never stored, so `col_support` is exactly the pattern
/// `{ m : a[m, n] != 0 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_entries: Vec<Vec<(usize, f64)>>,
    col_support: Vec<Vec<usize>>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_entries: vec![Vec::new(); rows],
            col_support: vec![Vec::new(); cols],
        }
    }

    /// Builds a matrix from per-row entry lists. Zero values are dropped and
    /// duplicate columns within a row are rejected.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let nrows = rows.len();
        let mut row_entries = Vec::with_capacity(nrows);
        let mut col_support = vec![Vec::new(); cols];
        for (m, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, v)| v != 0.0);
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidConfig(format!(
                        "duplicate entry at row {m}, column {}",
                        w[0].0
                    )));
                }
            }
            for &(c, _) in &row {
                if c >= cols {
                    return Err(Error::DimensionMismatch {
                        what: "column index",
                        expected: cols,
                        got: c,
                    });
                }
                col_support[c].push(m);
            }
            row_entries.push(row);
        }
        Ok(Self {
            rows: nrows,
            cols,
            row_entries,
            col_support,
        })
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let cols = dense.first().map_or(0, Vec::len);
        if let Some(bad) = dense.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                what: "dense row length",
                expected: cols,
                got: bad.len(),
            });
        }
        let rows = dense
            .iter()
            .map(|r| r.iter().copied().enumerate().collect())
            .collect();
        Self::from_rows(cols, rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.row_entries.iter().map(Vec::len).sum()
    }

    /// Nonzeros of row `m`, sorted by column.
    pub fn row(&self, m: usize) -> &[(usize, f64)] {
        &self.row_entries[m]
    }

    /// `C_n`: rows with a nonzero in column `n`, ascending.
    pub fn column_support(&self, n: usize) -> &[usize] {
        &self.col_support[n]
    }

    pub fn column_supports(&self) -> &[Vec<usize>] {
        &self.col_support
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        let row = &self.row_entries[m];
        match row.binary_search_by_key(&n, |&(c, _)| c) {
            Ok(pos) => row[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.row_entries
            .iter()
            .map(|row| {
                let mut d = vec![0.0; self.cols];
                for &(c, v) in row {
                    d[c] = v;
                }
                d
            })
            .collect()
    }

    /// Row-wise concatenation of matrices with a common column count.
    pub fn vstack<'a, I>(cols: usize, parts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SparseMatrix>,
    {
        let mut rows = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimensionMismatch {
                    what: "stacked matrix columns",
                    expected: cols,
                    got: p.cols,
                });
            }
            rows.extend(p.row_entries.iter().cloned());
        }
        Self::from_rows(cols, rows)
    }

    /// `A x` for a dense `x`, summing each row in ascending column order.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "vector length",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self
            .row_entries
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect())
    }
}

/// Wire form: dimensions plus `[row, col, value]` triplets in row-major order.
#[derive(Serialize, Deserialize)]
struct SparseWire {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Serialize for SparseMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self
            .row_entries
            .iter()
            .enumerate()
            .flat_map(|(m, row)| row.iter().map(move |&(c, v)| (m, c, v)))
            .collect();
        SparseWire {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparseMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = SparseWire::deserialize(d)?;
        let mut rows = vec![Vec::new(); wire.rows];
        for (m, c, v) in wire.entries {
            let row = rows
                .get_mut(m)
                .ok_or_else(|| serde::de::Error::custom(format!("row {m} out of range")))?;
            row.push((c, v));
        }
        SparseMatrix::from_rows(wire.cols, rows).map_err(serde::de::Error::custom)
    }
}
