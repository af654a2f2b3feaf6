//! Dense row-major matrices.
//!
//! Shapes are validated at public API boundaries; internal products treat
//! mismatches as programmer error and panic via `assert!`. All products are
//! deterministic: parallelism is over independent output rows, and every
//! accumulation runs in fixed index order regardless of the thread schedule.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Total-flop threshold below which products stay single-threaded.
const PAR_MIN_WORK: usize = 32_768;

/// Rough flops a single parallel task should carry.
const PAR_TASK_WORK: usize = 16_384;

fn min_rows_per_task(work_per_row: usize) -> usize {
    (PAR_TASK_WORK / work_per_row.max(1)).max(1)
}

/// A dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major values, rejecting shape mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::config("matrix contains non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Convenience constructor for literal test fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::config("ragged row lengths"));
        }
        Self::new(nrows, ncols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * rhs`, shape `(self.rows, rhs.cols)`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let body = |(r, out_row): (usize, &mut [f64])| {
            let a_row = self.row(r);
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = rhs.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        let work_per_row = self.cols * rhs.cols;
        if self.rows * work_per_row >= PAR_MIN_WORK {
            out.data
                .par_chunks_mut(rhs.cols)
                .with_min_len(min_rows_per_task(work_per_row))
                .enumerate()
                .for_each(body);
        } else {
            out.data.chunks_mut(rhs.cols).enumerate().for_each(body);
        }
        out
    }

    /// `self^T * rhs`, shape `(self.cols, rhs.cols)`. Accumulates over the
    /// shared row dimension in fixed order.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, rhs.rows,
            "matmul_tn shape mismatch: {}x{} ^T * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        let body = |(i, out_row): (usize, &mut [f64])| {
            for r in 0..self.rows {
                let a = self.data[r * self.cols + i];
                if a != 0.0 {
                    let b_row = rhs.row(r);
                    for (o, &b) in out_row.iter_mut().zip(b_row) {
                        *o += a * b;
                    }
                }
            }
        };
        let work_per_row = self.rows * rhs.cols;
        if self.cols * work_per_row >= PAR_MIN_WORK {
            out.data
                .par_chunks_mut(rhs.cols)
                .with_min_len(min_rows_per_task(work_per_row))
                .enumerate()
                .for_each(body);
        } else {
            out.data.chunks_mut(rhs.cols).enumerate().for_each(body);
        }
        out
    }

    /// `self * rhs^T`, shape `(self.rows, rhs.rows)`.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_nt shape mismatch: {}x{} * {}x{} ^T",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        let body = |(r, out_row): (usize, &mut [f64])| {
            let a_row = self.row(r);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        let work_per_row = self.cols * rhs.rows;
        if self.rows * work_per_row >= PAR_MIN_WORK {
            out.data
                .par_chunks_mut(rhs.rows)
                .with_min_len(min_rows_per_task(work_per_row))
                .enumerate()
                .for_each(body);
        } else {
            out.data.chunks_mut(rhs.rows).enumerate().for_each(body);
        }
        out
    }

    /// Column-wise concatenation in the given order.
    pub fn hconcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::protocol("hconcat of zero matrices"))?
            .rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::protocol("hconcat row-count mismatch"));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let out_row = out.row_mut(r);
            let mut offset = 0;
            for p in parts {
                out_row[offset..offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    /// Copy of columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix {
        assert!(
            start <= end && end <= self.cols,
            "column slice out of range"
        );
        let mut out = Matrix::zeros(self.rows, end - start);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (i, &r) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length_and_nonfinite() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Matrix::from_fn(7, 5, |r, c| (r * 5 + c) as f64 * 0.1 - 1.0);
        let b = Matrix::from_fn(7, 3, |r, c| (r + c) as f64 * 0.2);
        // a^T b via matmul_tn vs explicit transpose.
        let at = Matrix::from_fn(5, 7, |r, c| a.get(c, r));
        assert_eq!(a.matmul_tn(&b).data(), at.matmul(&b).data());
        // a b^T via matmul_nt.
        let c = Matrix::from_fn(4, 5, |r, cc| (r * 3 + cc) as f64 * 0.05);
        let ct = Matrix::from_fn(5, 4, |r, cc| c.get(cc, r));
        assert_eq!(a.matmul_nt(&c).data(), a.matmul(&ct).data());
    }

    #[test]
    fn hconcat_layout_and_slice_roundtrip() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = Matrix::hconcat(&[&a, &b]).unwrap();
        assert_eq!(c.cols(), 3);
        assert_eq!(c.row(0), &[1.0, 2.0, 5.0]);
        assert_eq!(c.slice_cols(0, 2).data(), a.data());
        assert_eq!(c.slice_cols(2, 3).data(), b.data());
    }

    #[test]
    fn hconcat_rejects_row_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(3, 1);
        assert!(Matrix::hconcat(&[&a, &b]).is_err());
    }

    #[test]
    fn parallel_and_serial_products_are_bitwise_equal() {
        // Above the parallel threshold, the result must not depend on the
        // thread schedule: compare against a sequential reference.
        let a = Matrix::from_fn(73, 17, |r, c| ((r * 31 + c * 7) % 13) as f64 * 0.37 - 1.5);
        let b = Matrix::from_fn(17, 11, |r, c| ((r * 5 + c) % 7) as f64 * 0.21 - 0.4);
        let fast = a.matmul(&b);
        let mut slow = Matrix::zeros(a.rows(), b.cols());
        for r in 0..a.rows() {
            for k in 0..a.cols() {
                let v = a.get(r, k);
                for j in 0..b.cols() {
                    let cur = slow.get(r, j);
                    slow.set(r, j, cur + v * b.get(k, j));
                }
            }
        }
        assert_eq!(fast.data(), slow.data());
    }
}
