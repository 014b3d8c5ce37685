use std::collections::HashSet;

use crate::error::{Error, Result};

/// Row-major `n x k` matrix of raw detector scores with unique detector names.
///
/// Every entry is finite; every constructor checks it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    rows: usize,
}

impl ScoreMatrix {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::Dimension("score matrix needs at least one detector".into()));
        }
        check_unique(&names)?;
        if !data.len().is_multiple_of(k) {
            return Err(Error::Dimension(format!("{} values do not fill rows of width {k}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite score at row {}, column {:?}", pos / k, names[pos % k])));
        }
        let rows = data.len() / k;
        Ok(Self { names, data, rows })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = names.len();
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension(format!("row {i} has {} values, expected {k}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Self::new(names, data)
    }

    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.len() != names.len() {
            return Err(Error::Dimension(format!("{} columns for {} names", columns.len(), names.len())));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("columns have different lengths".into()));
        }
        let k = columns.len();
        let mut data = vec![0.0; n * k];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * k + j] = v;
            }
        }
        Self::new(names, data)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_cols();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// New matrix holding the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let k = self.n_cols();
        if let Some(&bad) = cols.iter().find(|&&c| c >= k) {
            return Err(Error::Dimension(format!("column {bad} out of range for width {k}")));
        }
        let names = cols.iter().map(|&c| self.names[c].clone()).collect();
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for row in self.rows() {
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self::new(names, data)
    }

    /// Reorders columns to match `names`; errors if any name is missing.
    pub fn align_to(&self, names: &[String]) -> Result<Self> {
        if self.names == names {
            return Ok(self.clone());
        }
        let cols = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Option<Vec<_>>>()
            .filter(|_| names.len() == self.n_cols())
            .ok_or_else(|| Error::NameMismatch { expected: names.to_vec(), found: self.names.clone() })?;
        self.select_columns(&cols)
    }

    pub fn select_rows(&self, rows: std::ops::Range<usize>) -> Result<Self> {
        if rows.end > self.rows || rows.start > rows.end {
            return Err(Error::Dimension(format!("row range {rows:?} out of bounds for {} rows", self.rows)));
        }
        let k = self.n_cols();
        Self::new(self.names.clone(), self.data[rows.start * k..rows.end * k].to_vec())
    }

    /// Applies `f` to every entry of column `j`.
    pub fn map_column(&self, j: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let k = self.n_cols();
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(k) {
            row[j] = f(row[j]);
        }
        Self::new(self.names.clone(), data)
    }

    /// Stacks `other` below `self`; names must match exactly.
    pub fn vstack(&self, other: &ScoreMatrix) -> Result<Self> {
        if self.names != other.names {
            return Err(Error::NameMismatch { expected: self.names.clone(), found: other.names.clone() });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.names.clone(), data)
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn construction_checks() {
        assert!(ScoreMatrix::new(names(&["a", "a"]), vec![1.0, 2.0]).is_err());
        assert!(ScoreMatrix::new(names(&["a", "b"]), vec![1.0, 2.0, 3.0]).is_err());
        assert!(ScoreMatrix::new(names(&["a"]), vec![f64::NAN]).is_err());
        assert!(ScoreMatrix::new(vec![], vec![]).is_err());
        let m = ScoreMatrix::new(names(&["a", "b"]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.column(0), vec![1.0, 3.0]);
    }

    #[test]
    fn align_by_name() {
        let m = ScoreMatrix::new(names(&["a", "b", "c"]), vec![1.0, 2.0, 3.0]).unwrap();
        let a = m.align_to(&names(&["c", "a", "b"])).unwrap();
        assert_eq!(a.row(0), &[3.0, 1.0, 2.0]);
        assert!(m.align_to(&names(&["a", "b"])).is_err());
        assert!(m.align_to(&names(&["a", "b", "z"])).is_err());
    }

    #[test]
    fn columns_round_trip() {
        let m = ScoreMatrix::from_columns(names(&["x", "y"]), &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(0), &[1.0, 3.0]);
        assert_eq!(m.row(1), &[2.0, 4.0]);
    }
}
