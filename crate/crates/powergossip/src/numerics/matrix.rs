//! Dense row-major matrix with finite-entry enforcement.
//!
//! All simulator state lives in these matrices. They are deliberately plain:
//! `Vec<f64>` storage, explicit loops, no BLAS. Sizes are desk-scale (a few
//! hundred rows at most), so clarity and determinism win over throughput.
//! Every constructor rejects NaN and infinity so downstream code can assume
//! finite state.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.ensure_finite("matrix construction")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// Outer product `u * v'` of two vectors.
    pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(u.len(), v.len());
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                m.data[i * v.len() + j] = ui * vj;
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[f64]) -> Result<Matrix> {
        Matrix::new(v.len(), 1, v.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (i, &x) in v.iter().enumerate() {
            self.set(i, j, x);
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    fn check_same_shape(&self, other: &Matrix, context: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// `self += s * other`, shapes must already agree.
    pub fn add_scaled_in_place(&mut self, other: &Matrix, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                context: "mul".to_string(),
                expected: (self.cols, other.rows),
                got: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs = k * other.cols;
                let dst = i * other.cols;
                for j in 0..other.cols {
                    out.data[dst + j] += a * other.data[lhs + j];
                }
            }
        }
        Ok(out)
    }

    /// Product `self' * other`.
    pub fn t_mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                context: "t_mul".to_string(),
                expected: (self.rows, other.rows),
                got: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let lhs = k * other.cols;
                let dst = i * other.cols;
                for j in 0..other.cols {
                    out.data[dst + j] += a * other.data[lhs + j];
                }
            }
        }
        Ok(out)
    }

    /// Product `self * other'`.
    pub fn mul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                context: "mul_t".to_string(),
                expected: (other.rows, self.cols),
                got: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                let a = i * self.cols;
                let b = j * other.cols;
                for k in 0..self.cols {
                    acc += self.data[a + k] * other.data[b + k];
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * v`.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                context: "mat_vec".to_string(),
                expected: (self.cols, 1),
                got: (v.len(), 1),
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let base = i * self.cols;
            let mut acc = 0.0;
            for (k, &x) in v.iter().enumerate() {
                acc += self.data[base + k] * x;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Matrix-vector product `self' * v`.
    pub fn t_mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch {
                context: "t_mat_vec".to_string(),
                expected: (self.rows, 1),
                got: (v.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let base = i * self.cols;
            for j in 0..self.cols {
                out[j] += self.data[base + j] * x;
            }
        }
        Ok(out)
    }

    /// Scales column `j` by `s[j]`; used to apply a diagonal factor.
    pub fn scale_columns(&self, s: &[f64]) -> Result<Matrix> {
        if s.len() != self.cols {
            return Err(Error::invalid(format!(
                "scale_columns got {} factors for {} columns",
                s.len(),
                self.cols
            )));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= s[j];
            }
        }
        Ok(out)
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Entry-wise mean of a non-empty set of same-shaped matrices.
    pub fn mean_of(mats: &[Matrix]) -> Result<Matrix> {
        let first = mats
            .first()
            .ok_or_else(|| Error::invalid("mean of an empty set of matrices"))?;
        let mut acc = Matrix::zeros(first.rows, first.cols);
        for m in mats {
            first.check_same_shape(m, "mean_of")?;
            acc.add_scaled_in_place(m, 1.0);
        }
        Ok(acc.scaled(1.0 / mats.len() as f64))
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Writes the text format: a `rows cols` header line, then one line per
    /// row of space-separated decimals that round-trip exactly.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.rows, self.cols));
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads the text format written by [`Matrix::write_text`]. Any
    /// whitespace layout after the header is accepted.
    pub fn read_text(path: &Path) -> Result<Matrix> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid(format!("{}: empty matrix file", path.display())))?
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::invalid(format!("{}: bad header {header:?}", path.display())))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::invalid(format!(
                "{}: header must be `rows cols`, got {header:?}",
                path.display()
            )));
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for line in lines {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            for tok in line.split_whitespace() {
                let v = tok.parse::<f64>().map_err(|_| {
                    Error::invalid(format!("{}: bad number {tok:?}", path.display()))
                })?;
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{}: expected {} values, found {}",
                path.display(),
                rows * cols,
                data.len()
            )));
        }
        Matrix::new(rows, cols, data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = self.row(i).iter().take(8).map(|v| format!("{v:>12.5e}")).collect();
            writeln!(f, "  {}{}", row.join(" "), if self.cols > 8 { " ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Euclidean norm of a vector.
pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Dot product of two equal-length vectors.
pub fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Matrix::new(2, 3, vec![1.0; 5]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn product_matches_hand_computation() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.mul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        let d = a.t_mul(&a).unwrap();
        assert_eq!(d.get(0, 0), 17.0);
        assert_eq!(d.get(2, 1), 2.0 * 3.0 + 5.0 * 6.0);
        let e = a.mul_t(&a).unwrap();
        assert_eq!(e.get(0, 1), 1.0 * 4.0 + 2.0 * 5.0 + 3.0 * 6.0);
    }

    #[test]
    fn transpose_round_trip() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn text_io_round_trips_exactly() {
        let dir = std::env::temp_dir().join("powergossip-matrix-io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.txt");
        let a = Matrix::new(2, 3, vec![1.5, -2.25, 1.0 / 3.0, 4e-17, 5.0, -6.75e12]).unwrap();
        a.write_text(&path).unwrap();
        let b = Matrix::read_text(&path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn read_rejects_malformed() {
        let dir = std::env::temp_dir().join("powergossip-matrix-io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.txt");
        std::fs::write(&path, "2 2\n1 2 3\n").unwrap();
        assert!(Matrix::read_text(&path).is_err());
    }

    #[test]
    fn mean_of_matches_average() {
        let a = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(1, 2, vec![3.0, 6.0]).unwrap();
        let m = Matrix::mean_of(&[a, b]).unwrap();
        assert_eq!(m.data(), &[2.0, 4.0]);
    }
}
