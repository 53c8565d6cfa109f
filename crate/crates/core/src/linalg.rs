//! Dense row-major matrices and the handful of kernels the factorization needs.
//!
//! Matrix products accumulate each output entry over the inner index in
//! ascending order starting from `0.0`, so results are reproducible bit for bit
//! by any naive triple loop using the same order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default stabilizer added to every denominator of a multiplicative update.
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged or empty input; meant
    /// for literals in code and tests.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        assert!(rows.iter().all(|r| r.as_ref().len() == cols), "ragged rows");
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Matrix::new(rows.len(), cols, data).expect("valid literal matrix")
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be at least 1x1");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be at least 1x1");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix made of the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::OutOfRange(format!(
                "column {bad} of a matrix with {} columns",
                self.cols
            )));
        }
        Matrix::new(
            self.rows,
            cols.len(),
            (0..self.rows)
                .flat_map(|i| cols.iter().map(move |&j| (i, j)))
                .map(|(i, j)| self.get(i, j))
                .collect(),
        )
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Writes one row per line, comma separated, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            write_csv_row(&mut out, self.row(i));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Matrix> {
        let rows = parse_csv_rows(text.lines().enumerate(), path)?;
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(Error::parse(path, 1, "empty matrix"));
        }
        let n_cols = rows[0].len();
        Matrix::new(n_rows, n_cols, rows.into_iter().flatten().collect())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Matrix> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Matrix::from_csv(&text, path)
    }
}

pub(crate) fn write_csv_row(out: &mut String, values: &[f64]) {
    for (j, v) in values.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        write!(out, "{v:.16e}").expect("write to string");
    }
    out.push('\n');
}

/// Parses CSV rows of floats. `lines` yields (0-based line index, text);
/// all rows must have the width of the first one.
pub(crate) fn parse_csv_rows<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    path: &Path,
) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row =
            line.split(',')
                .map(|field| {
                    field.trim().parse::<f64>().map_err(|e| {
                        Error::parse(path, idx + 1, format!("bad number {field:?}: {e}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * m..(k + 1) * m];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with("hadamard", b, |x, y| x * y)
}

/// Elementwise `numer / (denom + eps)`.
pub fn safe_divide(numer: &Matrix, denom: &Matrix, eps: f64) -> Result<Matrix> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "eps must be positive, got {eps}"
        )));
    }
    numer.zip_with("safe_divide", denom, |n, d| n / (d + eps))
}

pub fn frobenius_sq(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdSpectrum {
    pub singular_values: Vec<f64>,
    pub count_requested: usize,
}

/// The `top` largest singular values of `a`, descending.
///
/// Eigenvalues of the smaller Gram matrix (AᵀA or AAᵀ) via cyclic Jacobi
/// rotations; singular vectors are never formed.
pub fn singular_values(a: &Matrix, top: usize) -> Result<SvdSpectrum> {
    let max = a.rows.min(a.cols);
    if top == 0 || top > max {
        return Err(Error::OutOfRange(format!(
            "requested {top} singular values of a {}x{} matrix (1..={max} allowed)",
            a.rows, a.cols
        )));
    }
    let at = a.transpose();
    let gram = if a.cols <= a.rows {
        matmul(&at, a)?
    } else {
        matmul(a, &at)?
    };
    let mut eig = symmetric_eigenvalues(gram);
    eig.sort_by(|x, y| y.total_cmp(x));
    let singular_values = eig
        .into_iter()
        .take(top)
        .map(|v| v.max(0.0).sqrt())
        .collect();
    Ok(SvdSpectrum {
        singular_values,
        count_requested: top,
    })
}

fn symmetric_eigenvalues(mut g: Matrix) -> Vec<f64> {
    let n = g.rows;
    let scale = frobenius_sq(&g).sqrt();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += g.get(p, q) * g.get(p, q);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = g.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = g.get(p, p);
                let aqq = g.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let gkp = g.get(k, p);
                    let gkq = g.get(k, q);
                    g.set(k, p, c * gkp - s * gkq);
                    g.set(k, q, s * gkp + c * gkq);
                }
                for k in 0..n {
                    let gpk = g.get(p, k);
                    let gqk = g.get(q, k);
                    g.set(p, k, c * gpk - s * gqk);
                    g.set(q, k, s * gpk + c * gqk);
                }
            }
        }
    }
    (0..n).map(|i| g.get(i, i)).collect()
}
