//! Dense row-major linear algebra over `f64`.
//!
//! Everything here uses the row-vector convention: an affine map is applied
//! as `x W + b` with `W` of shape `(in, out)`.

use std::fmt;
use std::ops::{Deref, Index};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Vector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scale(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &Vector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape("add_scaled", self.dim(), other.dim()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        euclid_norm(self)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", cols, bad.len()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
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

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> Vector {
        Vector(self.row(i).to_vec())
    }

    pub fn row_vectors(&self) -> Vec<Vector> {
        (0..self.rows).map(|i| self.row_vector(i)).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
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

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a, b));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Row vector times matrix: `x W`.
pub fn vecmat(x: &[f64], w: &Matrix) -> Result<Vector> {
    if x.len() != w.rows {
        return Err(Error::shape("vecmat", format!("1x{}", x.len()), w));
    }
    let mut out = vec![0.0; w.cols];
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wkj) in out.iter_mut().zip(w.row(k)) {
            *o += xk * wkj;
        }
    }
    Ok(Vector(out))
}

/// `x W + b`.
pub fn affine(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vector> {
    if b.len() != w.cols {
        return Err(Error::shape("affine", w, format!("bias of dim {}", b.len())));
    }
    let mut out = vecmat(x, w)?;
    for (o, bj) in out.0.iter_mut().zip(b) {
        *o += bj;
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax over a score row.
pub fn softmax_row(scores: &[f64]) -> Result<Vector> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax_row"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("softmax_row"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Vector(exps.into_iter().map(|e| e / total).collect()))
}

pub fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Embed the affine map `x -> x W + b` as a linear map on homogeneous
/// coordinates `[x, 1]`. The result is `(in+1) x (out+1)`: `W` top-left,
/// `b` along the bottom row and `(0, ..., 0, 1)` in the last column.
pub fn affine_to_linear(w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if b.len() != w.cols {
        return Err(Error::shape(
            "affine_to_linear",
            w,
            format!("bias of dim {}", b.len()),
        ));
    }
    let (rows, cols) = (w.rows + 1, w.cols + 1);
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..w.rows {
        out.data[i * cols..i * cols + w.cols].copy_from_slice(w.row(i));
    }
    out.data[w.rows * cols..w.rows * cols + w.cols].copy_from_slice(b);
    out.data[rows * cols - 1] = 1.0;
    Ok(out)
}

const JACOBI_MAX_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-12;

/// Singular values in descending order via one-sided Jacobi rotations.
///
/// Columns of the (tall) working matrix are rotated pairwise until every
/// off-diagonal Gram entry falls below `1e-12 * ||M||_F^2`, or 60 sweeps.
pub fn singular_values(m: &Matrix) -> Result<Vector> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Empty("singular_values"));
    }
    let work = if m.rows < m.cols { m.transpose() } else { m.clone() };
    let n = work.cols;
    // column-major copy so rotations touch contiguous memory
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..work.rows).map(|i| work.get(i, j)).collect())
        .collect();

    let fro2: f64 = work.data.iter().map(|v| v * v).sum();
    let tol = JACOBI_TOL * fro2;
    if fro2 > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let gamma = dot(&cols[p], &cols[q]);
                    if gamma.abs() < tol {
                        continue;
                    }
                    let alpha = dot(&cols[p], &cols[p]);
                    let beta = dot(&cols[q], &cols[q]);
                    if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let (left, right) = cols.split_at_mut(q);
                    for (ap, aq) in left[p].iter_mut().zip(right[0].iter_mut()) {
                        let (x, y) = (*ap, *aq);
                        *ap = c * x - s * y;
                        *aq = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }

    let mut values: Vec<f64> = cols.iter().map(|c| euclid_norm(c)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(Vector(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        let b = m(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[17.0], &[39.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn affine_cases() {
        assert_eq!(
            affine(&[1.0, 1.0], &Matrix::identity(2), &[0.0, 0.0]).unwrap().as_slice(),
            &[1.0, 1.0]
        );
        let w = m(&[&[7.0, -1.0], &[0.5, 3.0]]);
        assert_eq!(affine(&[0.0, 0.0], &w, &[2.0, 3.0]).unwrap().as_slice(), &[2.0, 3.0]);
        let w = m(&[&[1.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(affine(&[1.0, 2.0], &w, &[1.0, 1.0]).unwrap().as_slice(), &[4.0, 3.0]);
        assert!(affine(&[1.0], &w, &[1.0, 1.0]).is_err());
        assert!(affine(&[1.0, 2.0], &w, &[1.0]).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_row(&[0.0, 0.0, 0.0]).unwrap();
        for v in s.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_row(&[0.0, 3f64.ln()]).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
        let s = softmax_row(&[1000.0, 1000.0]).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        assert!(matches!(softmax_row(&[]), Err(Error::Empty(_))));
        assert!(matches!(softmax_row(&[0.0, f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn norm_cases() {
        assert_eq!(euclid_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(euclid_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(euclid_norm(&[6.0, 8.0]), 10.0);
    }

    #[test]
    fn affine_to_linear_layout() {
        let id = affine_to_linear(&Matrix::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(id, Matrix::identity(3));
        let e = affine_to_linear(&Matrix::identity(2), &[5.0, 7.0]).unwrap();
        assert_eq!(e, m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[5.0, 7.0, 1.0]]));
        assert!(affine_to_linear(&Matrix::identity(2), &[1.0]).is_err());
    }

    #[test]
    fn singular_value_cases() {
        assert_eq!(singular_values(&Matrix::identity(3)).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(
            singular_values(&Matrix::diag(&[3.0, -2.0])).unwrap().as_slice(),
            &[3.0, 2.0]
        );
        let wide = m(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        assert_eq!(singular_values(&wide).unwrap().as_slice(), &[2.0, 1.0]);
        assert_eq!(singular_values(&Matrix::zeros(2, 3)).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(singular_values(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
