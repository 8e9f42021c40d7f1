//! Row-major sparse matrix used for constraint data.

use serde::{Deserialize, Serialize};

/// Sparse matrix stored as one sorted `(column, value)` list per row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    /// Matrix with no rows.
    pub fn empty(ncols: usize) -> Self {
        Self::zeros(0, ncols)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            ncols: n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn from_dense(dense: &[Vec<f64>], ncols: usize) -> Self {
        let mut m = Self::empty(ncols);
        for row in dense {
            assert_eq!(row.len(), ncols, "ragged dense matrix");
            m.push_row(row.iter().copied().enumerate().filter(|&(_, v)| v != 0.0));
        }
        m
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet out of range");
            rows[r].push((c, v));
        }
        let mut m = Self { ncols, rows: Vec::with_capacity(nrows) };
        for row in rows {
            m.push_row(row);
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Appends a row; duplicate columns are summed and explicit zeros dropped.
    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        let mut row: Vec<(usize, f64)> = entries.into_iter().collect();
        row.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (c, v) in row {
            assert!(c < self.ncols, "column {c} out of range {}", self.ncols);
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        self.rows.push(merged);
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(c, v)| v * x[c]).sum()
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `out += A^T y`
    pub fn add_transpose_mul(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows());
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for &(c, v) in row {
                out[c] += v * yi;
            }
        }
    }

    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.add_transpose_mul(y, &mut out);
        out
    }

    /// Returns a copy with column `j` multiplied by `scale[j]`.
    pub fn scale_columns(&self, scale: &[f64]) -> Self {
        assert_eq!(scale.len(), self.ncols);
        Self {
            ncols: self.ncols,
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&(c, v)| (c, v * scale[c])).collect())
                .collect(),
        }
    }

    /// Returns a copy with `extra` zero columns appended on the right.
    pub fn widen(&self, extra: usize) -> Self {
        Self {
            ncols: self.ncols + extra,
            rows: self.rows.clone(),
        }
    }

    /// Embeds this matrix into a wider one, shifting column indices by `offset`.
    pub fn shifted(&self, offset: usize, ncols: usize) -> Self {
        assert!(offset + self.ncols <= ncols);
        Self {
            ncols,
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&(c, v)| (c + offset, v)).collect())
                .collect(),
        }
    }

    /// Appends all rows of `other`, which must have the same width.
    pub fn append_rows(&mut self, other: &SparseMatrix) {
        assert_eq!(self.ncols, other.ncols);
        self.rows.extend(other.rows.iter().cloned());
    }

    /// Columns in `range`, re-indexed from zero.
    pub fn column_slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            ncols: range.len(),
            rows: self
                .rows
                .iter()
                .map(|row| {
                    row.iter()
                        .filter(|(c, _)| range.contains(c))
                        .map(|&(c, v)| (c - range.start, v))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.ncols];
                for &(c, v) in row {
                    dense[c] = v;
                }
                dense
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, &(_, v)| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_row_merges_duplicates_and_drops_zeros() {
        let mut m = SparseMatrix::empty(3);
        m.push_row([(2, 1.0), (0, 2.0), (2, 3.0), (1, 0.0)]);
        assert_eq!(m.row(0), &[(0, 2.0), (2, 4.0)]);
    }

    #[test]
    fn products_match_dense() {
        let dense = vec![vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 3.0]];
        let m = SparseMatrix::from_dense(&dense, 3);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, 7.0]);
        assert_eq!(m.transpose_mul(&[1.0, 1.0]), vec![1.0, -1.0, 5.0]);
        assert_eq!(m.to_dense(), dense);
        let s = m.scale_columns(&[2.0, 1.0, 0.5]);
        assert_eq!(s.to_dense(), vec![vec![2.0, 0.0, 1.0], vec![0.0, -1.0, 1.5]]);
    }

    #[test]
    fn column_slice_and_shift_are_inverse() {
        let m = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]], 2);
        let wide = m.shifted(3, 6);
        assert_eq!(wide.column_slice(3..5), m);
    }
}
