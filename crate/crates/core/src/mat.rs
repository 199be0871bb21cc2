//! Small dense row-major matrices.
//!
//! Everything in this crate works on teams of at most a few hundred agents
//! and feature widths below 100, so a flat `Vec<f64>` with hand-written
//! kernels is all the linear algebra we need.

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major slice. Length must equal `rows * cols`.
    pub fn from_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "Mat::from_slice",
                format!("{} values", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(Mat {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dims(
                    "Mat::from_rows",
                    format!("{c} columns"),
                    format!("{}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    /// Fill a matrix entrywise from a generator called in row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`, (n x m) * (m x p) -> (n x p).
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::dims(
                "Mat::matmul",
                format!("inner dim {}", self.cols),
                format!("{}", other.rows),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        // ikj order keeps both inner accesses contiguous.
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`, (n x m)^T * (n x p) -> (m x p).
    pub fn transpose_matmul(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::dims(
                "Mat::transpose_matmul",
                format!("inner dim {}", self.rows),
                format!("{}", other.rows),
            ));
        }
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = &self.data[k * self.cols..(k + 1) * self.cols];
            let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`, (n x m) * (p x m)^T -> (n x p).
    pub fn matmul_transpose(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(Error::dims(
                "Mat::matmul_transpose",
                format!("inner dim {}", self.cols),
                format!("{}", other.cols),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let b_row = &other.data[j * other.cols..(j + 1) * other.cols];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn transposed(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) -> Result<()> {
        self.zip_assign(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.zip_assign(other, |a, b| a - b)?;
        Ok(out)
    }

    /// `self += scale * other`.
    pub fn add_scaled_assign(&mut self, other: &Mat, scale: f64) -> Result<()> {
        self.zip_assign(other, |a, b| a + scale * b)
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.zip_assign(other, |a, b| a * b)?;
        Ok(out)
    }

    fn zip_assign(&mut self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "Mat elementwise op",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = f(*a, b);
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `max |a - b| / max(max |a|, max |b|, 1)` over two matrices.
pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1.0);
    a.max_abs_diff(b) / scale
}
