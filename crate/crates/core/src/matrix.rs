//! Dense row-major `f32` matrices.
//!
//! Storage is 32-bit; every dot product accumulates in `f64` in a fixed
//! sequential order so results do not depend on thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Rejects length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Converts `f64` values, rejecting anything that is not finite in `f32`.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Vec::with_capacity(n * m);
        let mut acc = vec![0.0f64; m];
        for i in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for p in 0..k {
                let a = f64::from(self.data[i * k + p]);
                let brow = &other.data[p * m..(p + 1) * m];
                for (s, &b) in acc.iter_mut().zip(brow) {
                    *s += a * f64::from(b);
                }
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
        Matrix::new(n, m, out)
    }

    /// `self · otherᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_transposed",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for a in self.row_iter() {
            for b in other.row_iter() {
                out.push(dot(a, b) as f32);
            }
        }
        Matrix::new(self.rows, other.rows, out)
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "sub",
                format!("{:?} - {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f32) -> Result<Matrix> {
        Matrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * s).collect(),
        )
    }

    /// Euclidean norm of every row, in `f64`.
    pub fn row_norms(&self) -> Vec<f64> {
        self.row_iter().map(|r| dot(r, r).sqrt()).collect()
    }

    /// Largest absolute elementwise difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(0.0, f64::max))
    }

    /// Copies the listed rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    what: "matrix rows",
                    index: i,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Row-wise concatenation. `cols` fixes the width of the result when
    /// `parts` is empty.
    pub fn vstack(parts: &[&Matrix], cols: usize) -> Result<Matrix> {
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::shape(
                    "vstack",
                    format!("part has {} columns, expected {cols}", p.cols),
                ));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Mean of all entries in `f64`; errors on an empty matrix.
    pub fn mean(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Empty("mean of an empty matrix"));
        }
        Ok(self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64)
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f32>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            rows: usize,
            cols: usize,
            data: Vec<f32>,
        }
        let raw = Raw::deserialize(d)?;
        Matrix::new(raw.rows, raw.cols, raw.data).map_err(serde::de::Error::custom)
    }
}

/// Dot product with `f64` accumulation in index order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |s, (&x, &y)| s + f64::from(x) * f64::from(y))
}

/// Cosine cost `1 − cos(a_k, b_n)` between every row of `a` and every row
/// of `b`. A zero-norm row has cosine 0 against everything, so its cost is 1.
pub fn cosine_cost(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "cosine_cost",
            format!("{} vs {} columns", a.cols, b.cols),
        ));
    }
    if a.cols == 0 {
        return Err(Error::shape("cosine_cost", "zero-dimensional rows"));
    }
    let na = a.row_norms();
    let nb = b.row_norms();
    let mut out = Vec::with_capacity(a.rows * b.rows);
    for (ra, &xa) in a.row_iter().zip(&na) {
        for (rb, &xb) in b.row_iter().zip(&nb) {
            let cos = if xa == 0.0 || xb == 0.0 {
                0.0
            } else {
                (dot(ra, rb) / (xa * xb)).clamp(-1.0, 1.0)
            };
            out.push((1.0 - cos) as f32);
        }
    }
    Matrix::new(a.rows, b.rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_cost_basic_geometry() {
        let e1 = m(&[&[1.0, 0.0]]);
        assert_eq!(cosine_cost(&e1, &e1).unwrap().data(), &[0.0]);
        assert_eq!(cosine_cost(&e1, &m(&[&[0.0, 1.0]])).unwrap().data(), &[1.0]);
        assert_eq!(
            cosine_cost(&e1, &m(&[&[-1.0, 0.0]])).unwrap().data(),
            &[2.0]
        );
    }

    #[test]
    fn zero_row_costs_one() {
        let c = cosine_cost(&m(&[&[0.0, 0.0]]), &m(&[&[3.0, 1.0]])).unwrap();
        assert_eq!(c.data(), &[1.0]);
    }

    #[test]
    fn cosine_cost_rejects_width_mismatch() {
        let err = cosine_cost(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f32::NAN]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Matrix::new(1, 1, vec![f32::INFINITY]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(
            a.matmul_transposed(&b).unwrap().data(),
            &[17.0, 23.0, 39.0, 53.0]
        );
        assert!(a.matmul(&m(&[&[1.0, 2.0, 3.0]])).is_err());
    }

    #[test]
    fn vstack_and_select() {
        let a = m(&[&[1.0, 2.0]]);
        let b = m(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let s = Matrix::vstack(&[&a, &b], 2).unwrap();
        assert_eq!(s.shape(), (3, 2));
        assert_eq!(
            s.select_rows(&[2, 0]).unwrap().data(),
            &[5.0, 6.0, 1.0, 2.0]
        );
        assert_eq!(Matrix::vstack(&[], 7).unwrap().shape(), (0, 7));
        assert!(s.select_rows(&[3]).is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let a = m(&[&[1.5, -2.0]]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Matrix>(&json).unwrap(), a);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }
}
