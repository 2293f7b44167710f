use std::fmt;
use std::ops::Range;

use crate::error::{config_err, Result};
use crate::tensor::RngStream;

// Tile sizes for `matmul`. Blocking is over rows and columns of the output and
// over the shared dimension in ascending order, so every output entry still
// accumulates its products in k-ascending order.
const KC: usize = 256;
const MC: usize = 64;
const MR: usize = 4;
const NR: usize = 8;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return config_err(format!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return config_err(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return config_err("matrix needs at least one row");
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return config_err(format!("row {i} has {} entries, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Entries i.i.d. N(0, std²) by Box-Muller; each pair of samples consumes
    /// exactly two uniforms, and an odd trailing sample discards its partner.
    pub fn gaussian(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Self {
        debug_assert!(std > 0.0);
        let len = rows * cols;
        let mut data = Vec::with_capacity(len + 1);
        while data.len() < len {
            let (z0, z1) = rng.normal_pair();
            data.push(z0 * std);
            data.push(z1 * std);
        }
        data.truncate(len);
        Self { rows, cols, data }
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &x) in self.row(i).iter().enumerate() {
                t.data[j * self.rows + i] = x;
            }
        }
        t
    }

    /// Matrix product. Every output entry is accumulated from zero with the
    /// shared index ascending, so results are bit-identical to the textbook
    /// triple loop regardless of tiling.
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return config_err(format!(
                "matmul dimension mismatch: {}x{} times {}x{}",
                self.rows, self.cols, b.rows, b.cols
            ));
        }
        let mut c = Matrix::zeros(self.rows, b.cols);
        gemm_acc(self, b, &mut c);
        Ok(c)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return config_err(format!(
                "{op} shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return config_err(format!(
                "axpy shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        self.map(|x| alpha * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of each column, accumulated over rows in ascending order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, &x) in s.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        s
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Copy of the columns in `range`.
    pub fn columns(&self, range: Range<usize>) -> Matrix {
        assert!(range.end <= self.cols, "column range out of bounds");
        let w = range.len();
        let mut out = Matrix::zeros(self.rows, w);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[range.clone()]);
        }
        out
    }

    /// Copy of the rows in `range`.
    pub fn row_block(&self, range: Range<usize>) -> Matrix {
        assert!(range.end <= self.rows, "row range out of bounds");
        Matrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    /// Overwrite the block starting at (`row`, `col`) with `block`.
    pub fn set_block(&mut self, row: usize, col: usize, block: &Matrix) {
        assert!(row + block.rows <= self.rows && col + block.cols <= self.cols);
        for i in 0..block.rows {
            let dst = &mut self.row_mut(row + i)[col..col + block.cols];
            dst.copy_from_slice(block.row(i));
        }
    }

    /// Horizontal concatenation.
    pub fn hconcat(parts: &[Matrix]) -> Result<Matrix> {
        let Some(first) = parts.first() else {
            return config_err("hconcat of zero matrices");
        };
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return config_err(format!("hconcat row mismatch: {} vs {}", bad.rows, rows));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            out.set_block(0, at, p);
            at += p.cols;
        }
        Ok(out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&self) -> Matrix {
        let mut out = self.clone();
        out.row_softmax_in_place();
        out
    }

    pub fn row_softmax_in_place(&mut self) {
        for i in 0..self.rows {
            softmax_slice(self.row_mut(i));
        }
    }

    /// Induced ∞-norm: the largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub(crate) fn softmax_slice(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = 1.0 / total;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// `c += a * b`, tiled; per-entry products are added in k-ascending order.
fn gemm_acc(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    let (m, kdim, n) = (a.rows, a.cols, b.cols);
    let ad = &a.data;
    let bd = &b.data;
    let cd = &mut c.data;
    let panels = n / NR;
    let mut bpack = vec![0.0; KC.min(kdim) * panels * NR];
    let mut apack = vec![0.0; KC.min(kdim) * MC];
    for k0 in (0..kdim).step_by(KC) {
        let k1 = (k0 + KC).min(kdim);
        let kc = k1 - k0;
        // B panels: NR columns wide, k-major.
        for p in 0..panels {
            let dst = &mut bpack[p * kc * NR..(p + 1) * kc * NR];
            for (kk, k) in (k0..k1).enumerate() {
                dst[kk * NR..(kk + 1) * NR].copy_from_slice(&bd[k * n + p * NR..k * n + (p + 1) * NR]);
            }
        }
        for i0 in (0..m).step_by(MC) {
            let i1 = (i0 + MC).min(m);
            let groups = (i1 - i0) / MR;
            // A panels: MR rows tall, k-major.
            for g in 0..groups {
                let dst = &mut apack[g * kc * MR..(g + 1) * kc * MR];
                for r in 0..MR {
                    let row = &ad[(i0 + g * MR + r) * kdim + k0..(i0 + g * MR + r) * kdim + k1];
                    for (kk, &x) in row.iter().enumerate() {
                        dst[kk * MR + r] = x;
                    }
                }
            }
            for g in 0..groups {
                let i = i0 + g * MR;
                let ap = &apack[g * kc * MR..(g + 1) * kc * MR];
                for p in 0..panels {
                    micro_4x8(ap, &bpack[p * kc * NR..(p + 1) * kc * NR], cd, n, i, p * NR);
                }
                for r in i..i + MR {
                    edge(ad, bd, cd, kdim, n, r, panels * NR..n, k0, k1);
                }
            }
            for r in i0 + groups * MR..i1 {
                edge(ad, bd, cd, kdim, n, r, 0..n, k0, k1);
            }
        }
    }
}

#[inline(always)]
fn micro_4x8(ap: &[f64], bp: &[f64], c: &mut [f64], n: usize, i: usize, j: usize) {
    let mut acc = [[0.0f64; NR]; MR];
    for (r, acc_r) in acc.iter_mut().enumerate() {
        acc_r.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
    }
    for (a4, b8) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)) {
        for (acc_r, &av) in acc.iter_mut().zip(a4) {
            for (x, &bv) in acc_r.iter_mut().zip(b8) {
                *x += av * bv;
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(acc_r);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn edge(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    kdim: usize,
    n: usize,
    r: usize,
    cols: Range<usize>,
    k0: usize,
    k1: usize,
) {
    if cols.is_empty() {
        return;
    }
    let crow = &mut c[r * n + cols.start..r * n + cols.end];
    for k in k0..k1 {
        let av = a[r * kdim + k];
        let brow = &b[k * n + cols.start..k * n + cols.end];
        for (x, &bv) in crow.iter_mut().zip(brow) {
            *x += av * bv;
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        let show = self.rows.min(8);
        for i in 0..show {
            let row = self.row(i);
            let cells: Vec<String> = row.iter().take(8).map(|x| format!("{x:>11.4e}")).collect();
            let ellipsis = if self.cols > 8 { " ..." } else { "" };
            writeln!(f, "  {}{}", cells.join(" "), ellipsis)?;
        }
        if self.rows > show {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    #[test]
    fn identity_times_m_is_m() {
        let mut rng = RngStream::new(3);
        let m = Matrix::gaussian(&mut rng, 3, 5, 1.0);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matches_triple_loop_bitwise() {
        let mut rng = RngStream::new(11);
        for &(m, k, n) in &[(8, 8, 8), (1, 1, 1), (5, 300, 13), (67, 513, 19), (9, 3, 70)] {
            let a = Matrix::gaussian(&mut rng, m, k, 1.0);
            let b = Matrix::gaussian(&mut rng, k, n, 1.0);
            let fast = a.matmul(&b).unwrap();
            let slow = naive(&a, &b);
            assert!(
                fast.data()
                    .iter()
                    .zip(slow.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "{m}x{k}x{n} differs from the triple loop"
            );
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(crate::Error::Config(_))));
    }

    #[test]
    fn softmax_cases() {
        let s = Matrix::zeros(1, 4).row_softmax();
        assert_eq!(s.data(), &[0.25; 4]);
        let s = Matrix::from_rows(&[[1000.0, 1000.0]]).unwrap().row_softmax();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Matrix::from_rows(&[[0.0, 3f64.ln()]]).unwrap().row_softmax();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn norm_inf_cases() {
        assert_eq!(Matrix::zeros(3, 3).norm_inf(), 0.0);
        let a = Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap();
        assert_eq!(a.norm_inf(), 3.5);

        let mut rng = RngStream::new(5);
        let a = Matrix::gaussian(&mut rng, 16, 16, 1.0);
        let mut best = 0.0f64;
        for i in 0..16 {
            let mut s = 0.0;
            for j in 0..16 {
                s += a.get(i, j).abs();
            }
            best = best.max(s);
        }
        assert_eq!(a.norm_inf(), best);
    }

    #[test]
    fn from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn column_helpers_round_trip() {
        let mut rng = RngStream::new(9);
        let a = Matrix::gaussian(&mut rng, 4, 6, 1.0);
        let parts = [a.columns(0..2), a.columns(2..3), a.columns(3..6)];
        assert_eq!(Matrix::hconcat(&parts).unwrap(), a);
        assert_eq!(a.transpose().transpose(), a);
    }
}
