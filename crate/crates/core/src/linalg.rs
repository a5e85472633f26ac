//! Dense row-major matrices and Cholesky factorization for small instances.
//!
//! The slice kernels at the bottom of this module ([`matmul_into`],
//! [`cholesky_into`], [`cholesky_solve_into`], [`dot_slices`]) fix the exact
//! floating-point operation order. Both the reference solver and the kernel
//! interpreter go through them, which is what makes the two agree bitwise.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerances::{PIVOT_REL, SYMMETRY_REL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix data has length {len}, expected {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense real matrix in row-major order. Column vectors are `n x 1`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.data[r * self.cols + c])?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix, rejecting length mismatches and NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Matrix { rows, cols, data })
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

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Result<Self> {
        Matrix::new(values.len(), 1, values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(LinalgError::Shape {
                    op: "from_rows",
                    left: (i, row.len()),
                    right: (0, cols),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::new(rows.len(), cols, data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_column(&self) -> bool {
        self.cols == 1
    }

    /// Max-abs entry, 0 for an empty matrix.
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Appends the rows of `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(LinalgError::Shape {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    fn check_finite(self) -> Result<Matrix> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: i / self.cols.max(1),
                col: i % self.cols.max(1),
            });
        }
        Ok(self)
    }
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(LinalgError::Shape {
            op: "mat_mul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = vec![0.0; a.rows * b.cols];
    matmul_into(&a.data, &b.data, a.rows, a.cols, b.cols, &mut out);
    Matrix {
        rows: a.rows,
        cols: b.cols,
        data: out,
    }
    .check_finite()
}

pub fn mat_add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(LinalgError::Shape {
            op: "mat_add",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    }
    .check_finite()
}

pub fn mat_sub(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(LinalgError::Shape {
            op: "mat_sub",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    }
    .check_finite()
}

pub fn mat_scale(a: &Matrix, s: f64) -> Result<Matrix> {
    let data = a.data.iter().map(|x| s * x).collect();
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    }
    .check_finite()
}

pub fn transpose(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    out
}

/// Inner product of two vectors of equal length (any orientation).
pub fn dot(u: &Matrix, v: &Matrix) -> Result<f64> {
    if u.data.len() != v.data.len() || (u.rows != 1 && u.cols != 1) || (v.rows != 1 && v.cols != 1) {
        return Err(LinalgError::Shape {
            op: "dot",
            left: u.shape(),
            right: v.shape(),
        });
    }
    Ok(dot_slices(&u.data, &v.data))
}

/// Lower-triangular Cholesky factor `L` with `L * L^T = M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `dim x dim` storage; strict upper entries are zero.
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn lower_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.lower.clone(),
        }
    }

    /// `L * L^T`.
    pub fn reconstruct(&self) -> Matrix {
        let l = self.lower_matrix();
        mat_mul(&l, &transpose(&l)).expect("square factor")
    }
}

pub fn chol_factor(m: &Matrix) -> Result<CholFactor> {
    if m.rows != m.cols {
        return Err(LinalgError::Shape {
            op: "chol_factor",
            left: m.shape(),
            right: m.shape(),
        });
    }
    let n = m.rows;
    let scale = m.norm_inf().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (m.get(i, j), m.get(j, i));
            if (a - b).abs() > SYMMETRY_REL * scale {
                return Err(LinalgError::NotSymmetric { row: i, col: j });
            }
        }
    }
    let mut lower = vec![0.0; n * n];
    cholesky_into(&m.data, n, &mut lower)?;
    Ok(CholFactor { dim: n, lower })
}

/// Solves `(L L^T) Y = rhs` column by column.
pub fn chol_solve(f: &CholFactor, rhs: &Matrix) -> Result<Matrix> {
    if rhs.rows != f.dim {
        return Err(LinalgError::Shape {
            op: "chol_solve",
            left: (f.dim, f.dim),
            right: rhs.shape(),
        });
    }
    let mut out = rhs.clone();
    let mut col = vec![0.0; f.dim];
    let mut sol = vec![0.0; f.dim];
    for c in 0..rhs.cols {
        for (r, v) in col.iter_mut().enumerate() {
            *v = rhs.get(r, c);
        }
        cholesky_solve_into(&f.lower, f.dim, &col, &mut sol);
        for (r, &v) in sol.iter().enumerate() {
            out.set(r, c, v);
        }
    }
    out.check_finite()
}

// Slice kernels. The operation order below is part of the contract between
// the reference solver and generated kernels; keep it stable.

/// `out[m x n] = a[m x k] * b[k x n]`, each entry accumulated from `0.0`
/// in increasing `k`.
pub fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..k {
                acc += a[r * k + i] * b[i * n + c];
            }
            out[r * n + c] = acc;
        }
    }
}

pub fn dot_slices(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in u.iter().zip(v) {
        acc += x * y;
    }
    acc
}

/// Column-oriented Cholesky–Banachiewicz factorization of a symmetric
/// `n x n` matrix. Only the lower triangle of `a` is read.
pub fn cholesky_into(a: &[f64], n: usize, lower: &mut [f64]) -> Result<()> {
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(a[i * n + i].abs()));
    let threshold = PIVOT_REL * max_diag;
    for v in lower.iter_mut() {
        *v = 0.0;
    }
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= lower[j * n + k] * lower[j * n + k];
        }
        if !(s > threshold) {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: s });
        }
        let d = s.sqrt();
        lower[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= lower[i * n + k] * lower[j * n + k];
            }
            lower[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Forward then backward substitution against a factor from
/// [`cholesky_into`].
pub fn cholesky_solve_into(lower: &[f64], n: usize, rhs: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= lower[i * n + k] * out[k];
        }
        out[i] = s / lower[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = out[i];
        for k in (i + 1)..n {
            s -= lower[k * n + i] * out[k];
        }
        out[i] = s / lower[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_mul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(mat_mul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn hand_expanded_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let v = m(&[&[1.0], &[1.0]]);
        assert_eq!(mat_mul(&a, &v).unwrap(), m(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn product_matches_triple_loop() {
        let a = m(&[&[0.3, -1.2, 2.0], &[4.1, 0.0, -0.7], &[1.5, 2.5, 3.5]]);
        let b = m(&[&[-2.0, 0.5, 1.0], &[0.25, 3.0, -1.0], &[1.0, 1.0, 1.0]]);
        let got = mat_mul(&a, &b).unwrap();
        let want = naive_mul(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert_relative_eq!(g, w, max_relative = 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(mat_mul(&a, &a), Err(LinalgError::Shape { .. })));
        assert!(matches!(
            mat_add(&a, &Matrix::zeros(3, 2)),
            Err(LinalgError::Shape { .. })
        ));
        assert!(dot(&Matrix::zeros(2, 1), &Matrix::zeros(3, 1)).is_err());
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0]),
            Err(LinalgError::DataLength { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn add_scale_dot() {
        let a = m(&[&[1.0, -2.0], &[0.5, 4.0]]);
        assert_eq!(mat_add(&a, &Matrix::zeros(2, 2)).unwrap(), a);
        let neg = mat_scale(&a, -1.0).unwrap();
        assert_eq!(mat_add(&a, &neg).unwrap(), Matrix::zeros(2, 2));
        let u = Matrix::column(&[1.0, 2.0, 3.0]).unwrap();
        let v = Matrix::column(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(dot(&u, &v).unwrap(), 32.0);
    }

    #[test]
    fn factor_identity() {
        let f = chol_factor(&Matrix::identity(3)).unwrap();
        assert_eq!(f.lower_matrix(), Matrix::identity(3));
    }

    #[test]
    fn factor_reconstructs() {
        let a = m(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = chol_factor(&a).unwrap();
        let back = f.reconstruct();
        for (g, w) in back.data().iter().zip(a.data()) {
            assert_relative_eq!(g, w, max_relative = 1e-12);
        }
        assert_eq!(f.lower()[1], 0.0);
        assert!(f.lower()[0] > 0.0 && f.lower()[3] > 0.0);
    }

    #[test]
    fn indefinite_is_rejected() {
        // eigenvalues 3 and -1
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            chol_factor(&a),
            Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn asymmetric_is_rejected() {
        let a = m(&[&[4.0, 2.0], &[1.0, 3.0]]);
        assert!(matches!(chol_factor(&a), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn solve_identity_and_2x2() {
        let r = Matrix::column(&[1.0, -2.0, 3.5]).unwrap();
        let f = chol_factor(&Matrix::identity(3)).unwrap();
        assert_eq!(chol_solve(&f, &r).unwrap(), r);

        let f = chol_factor(&m(&[&[4.0, 2.0], &[2.0, 3.0]])).unwrap();
        let y = chol_solve(&f, &m(&[&[8.0], &[7.0]])).unwrap();
        // 4x+2y=8, 2x+3y=7
        assert_relative_eq!(y.get(0, 0), 1.25, max_relative = 1e-14);
        assert_relative_eq!(y.get(1, 0), 1.5, max_relative = 1e-14);
        assert!(chol_solve(&f, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn spd_4x4_residual() {
        let g = m(&[
            &[1.0, 0.2, -0.3, 0.4],
            &[0.0, 2.0, 0.5, -1.0],
            &[0.7, 0.1, 1.5, 0.2],
            &[-0.2, 0.3, 0.0, 1.1],
        ]);
        let spd = mat_add(&mat_mul(&g, &transpose(&g)).unwrap(), &Matrix::identity(4)).unwrap();
        let rhs = Matrix::column(&[1.0, -3.0, 0.25, 2.0]).unwrap();
        let y = chol_solve(&chol_factor(&spd).unwrap(), &rhs).unwrap();
        let resid = mat_sub(&mat_mul(&spd, &y).unwrap(), &rhs).unwrap();
        assert!(resid.norm_inf() <= 1e-9 * (1.0 + rhs.norm_inf()));
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn product_is_associative(a in arb_matrix(3, 2), b in arb_matrix(2, 4), c in arb_matrix(4, 2)) {
            let left = mat_mul(&mat_mul(&a, &b).unwrap(), &c).unwrap();
            let right = mat_mul(&a, &mat_mul(&b, &c).unwrap()).unwrap();
            let scale = 1.0 + left.norm_inf();
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn transpose_is_involutive(a in arb_matrix(3, 5)) {
            prop_assert_eq!(transpose(&transpose(&a)), a);
        }

        #[test]
        fn solve_recovers_rhs_preimage(g in arb_matrix(4, 4), y in arb_matrix(4, 1)) {
            let spd = mat_add(&mat_mul(&g, &transpose(&g)).unwrap(), &Matrix::identity(4)).unwrap();
            let rhs = mat_mul(&spd, &y).unwrap();
            let got = chol_solve(&chol_factor(&spd).unwrap(), &rhs).unwrap();
            let scale = 1.0 + y.norm_inf();
            for (a, b) in got.data().iter().zip(y.data()) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }
    }
}
