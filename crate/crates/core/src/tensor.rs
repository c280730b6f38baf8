//! Dense third-order tensors and the mode-n algebra built on them.
//!
//! A [`Cube`] is stored band-sequentially: every frontal slice (band) is a
//! contiguous row-major `rows × cols` block, and bands follow one another.
//! Element `(i, j, k)` lives at `k·rows·cols + i·cols + j`.
//!
//! Mode-n unfoldings place the mode-n fibers as columns, ordered
//! lexicographically over the remaining indices with the lower-numbered mode
//! varying fastest:
//!
//! | mode | shape            | column of `(·)`       |
//! |------|------------------|-----------------------|
//! | 1    | `n1 × (n2·n3)`   | `j + k·n2`            |
//! | 2    | `n2 × (n1·n3)`   | `i + k·n1`            |
//! | 3    | `n3 × (n1·n2)`   | `i + j·n1`            |

use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One of the three tensor modes (rows, columns, bands).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Rows,
    Cols,
    Bands,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Rows, Mode::Cols, Mode::Bands];

    /// 1-based mode number.
    pub fn number(self) -> usize {
        match self {
            Mode::Rows => 1,
            Mode::Cols => 2,
            Mode::Bands => 3,
        }
    }

    fn axis(self) -> usize {
        self.number() - 1
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::Rows),
            2 => Ok(Mode::Cols),
            3 => Ok(Mode::Bands),
            _ => Err(Error::arg(format!("mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// Shape of a cube: `(rows, cols, bands)`.
pub type Dims = (usize, usize, usize);

/// Dense real `rows × cols × bands` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    dims: Dims,
    data: Vec<f64>,
}

impl Cube {
    pub fn zeros(n1: usize, n2: usize, n3: usize) -> Self {
        Cube {
            dims: (n1, n2, n3),
            data: vec![0.0; n1 * n2 * n3],
        }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Cube {
            dims,
            data: vec![value; dims.0 * dims.1 * dims.2],
        }
    }

    /// Builds a cube from band-sequential data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::dims(format!(
                "cube {:?} needs {n} entries, got {}",
                dims,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Cube { dims, data })
    }

    /// Internal constructor for arithmetic results; finiteness is checked by
    /// the callers that care (the solver's NaN guard).
    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.0 * dims.1 * dims.2);
        Cube { dims, data }
    }

    pub fn from_fn(n1: usize, n2: usize, n3: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n1 * n2 * n3);
        for k in 0..n3 {
            for i in 0..n1 {
                for j in 0..n2 {
                    data.push(f(i, j, k));
                }
            }
        }
        Cube { dims: (n1, n2, n3), data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rows(&self) -> usize {
        self.dims.0
    }

    pub fn cols(&self) -> usize {
        self.dims.1
    }

    pub fn bands(&self) -> usize {
        self.dims.2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self, mode: Mode) -> usize {
        [self.dims.0, self.dims.1, self.dims.2][mode.axis()]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims.0 + i) * self.dims.1 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Frontal slice `k` as a row-major `rows × cols` slice.
    pub fn band(&self, k: usize) -> &[f64] {
        let sz = self.dims.0 * self.dims.1;
        &self.data[k * sz..(k + 1) * sz]
    }

    pub(crate) fn band_mut(&mut self, k: usize) -> &mut [f64] {
        let sz = self.dims.0 * self.dims.1;
        &mut self.data[k * sz..(k + 1) * sz]
    }

    /// The spectrum (mode-3 fiber) at pixel `(i, j)`.
    pub fn fiber(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.dims.2).map(|k| self.get(i, j, k)).collect()
    }

    /// Cube made of bands `start..start + count`.
    pub fn band_range(&self, start: usize, count: usize) -> Result<Cube> {
        if start + count > self.dims.2 || count == 0 {
            return Err(Error::arg(format!(
                "band range {start}..{} outside 0..{}",
                start + count,
                self.dims.2
            )));
        }
        let sz = self.dims.0 * self.dims.1;
        Ok(Cube::from_raw(
            (self.dims.0, self.dims.1, count),
            self.data[start * sz..(start + count) * sz].to_vec(),
        ))
    }

    /// Appends the bands of `other` (same spatial size) after those of `self`.
    pub fn concat_bands(&self, other: &Cube) -> Result<Cube> {
        if self.dims.0 != other.dims.0 || self.dims.1 != other.dims.1 {
            return Err(Error::dims(format!(
                "cannot stack {:?} with {:?} along bands",
                self.dims, other.dims
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Cube::from_raw(
            (self.dims.0, self.dims.1, self.dims.2 + other.dims.2),
            data,
        ))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Cube {
        Cube::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped cubes.
    pub fn zip_map(&self, other: &Cube, f: impl Fn(f64, f64) -> f64) -> Result<Cube> {
        self.check_same(other)?;
        Ok(Cube::from_raw(
            self.dims,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &Cube, b: f64) -> Result<Cube> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scale(&self, a: f64) -> Cube {
        self.map(|v| a * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, other: &Cube) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    /// Applies `f` to every fiber along `mode`, producing fibers of length
    /// `out_len` in a cube whose `mode` dimension becomes `out_len`.
    pub fn map_fibers(&self, mode: Mode, out_len: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Cube {
        let (n1, n2, n3) = self.dims;
        let in_len = self.dim(mode);
        let out_dims = match mode {
            Mode::Rows => (out_len, n2, n3),
            Mode::Cols => (n1, out_len, n3),
            Mode::Bands => (n1, n2, out_len),
        };
        let mut out = Cube::zeros(out_dims.0, out_dims.1, out_dims.2);
        let mut src = vec![0.0; in_len];
        let mut dst = vec![0.0; out_len];
        match mode {
            Mode::Rows => {
                for k in 0..n3 {
                    for j in 0..n2 {
                        for (i, s) in src.iter_mut().enumerate() {
                            *s = self.get(i, j, k);
                        }
                        f(&src, &mut dst);
                        for (i, &d) in dst.iter().enumerate() {
                            out.set(i, j, k, d);
                        }
                    }
                }
            }
            Mode::Cols => {
                for k in 0..n3 {
                    for i in 0..n1 {
                        let start = self.index(i, 0, k);
                        f(&self.data[start..start + n2], &mut dst);
                        let ostart = out.index(i, 0, k);
                        out.data[ostart..ostart + out_len].copy_from_slice(&dst);
                    }
                }
            }
            Mode::Bands => {
                for i in 0..n1 {
                    for j in 0..n2 {
                        for (k, s) in src.iter_mut().enumerate() {
                            *s = self.get(i, j, k);
                        }
                        f(&src, &mut dst);
                        for (k, &d) in dst.iter().enumerate() {
                            out.set(i, j, k, d);
                        }
                    }
                }
            }
        }
        out
    }

    /// All fibers along `mode`, in the same order `map_fibers` visits them.
    pub fn fibers(&self, mode: Mode) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.map_fibers(mode, 0, |src, _| out.push(src.to_vec()));
        out
    }

    /// Inverse of [`Cube::fibers`] for a cube of shape `dims`.
    pub fn from_fibers(dims: Dims, mode: Mode, fibers: &[Vec<f64>]) -> Result<Cube> {
        let probe = Cube::zeros(dims.0, dims.1, dims.2);
        let len = probe.dim(mode);
        if fibers.len() * len != probe.len() || fibers.iter().any(|f| f.len() != len) {
            return Err(Error::dims(format!("fibers do not tile a {dims:?} cube along mode {}", mode.number())));
        }
        let mut it = fibers.iter();
        let squeezed = match mode {
            Mode::Rows => (1, dims.1, dims.2),
            Mode::Cols => (dims.0, 1, dims.2),
            Mode::Bands => (dims.0, dims.1, 1),
        };
        let ones = Cube::zeros(squeezed.0, squeezed.1, squeezed.2);
        Ok(ones.map_fibers(mode, len, |_, dst| dst.copy_from_slice(it.next().expect("count checked"))))
    }
}

impl Add for &Cube {
    type Output = Cube;

    /// Panics on shape mismatch; use [`Cube::lincomb`] for a fallible version.
    fn add(self, rhs: &Cube) -> Cube {
        self.lincomb(1.0, rhs, 1.0).expect("cube shapes differ")
    }
}

impl Sub for &Cube {
    type Output = Cube;

    fn sub(self, rhs: &Cube) -> Cube {
        self.lincomb(1.0, rhs, -1.0).expect("cube shapes differ")
    }
}

impl Mul<f64> for &Cube {
    type Output = Cube;

    fn mul(self, rhs: f64) -> Cube {
        self.scale(rhs)
    }
}

/// Dense real matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{rows}×{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::dims(format!(
                "cannot multiply {}×{} by {}×{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[l * rhs.cols..(l + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, r) in orow.iter_mut().zip(row) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Mode-n unfolding (matricization) of `x`.
pub fn unfold(x: &Cube, mode: Mode) -> Mat {
    let (n1, n2, n3) = x.dims();
    match mode {
        Mode::Rows => Mat::from_fn(n1, n2 * n3, |i, c| x.get(i, c % n2, c / n2)),
        Mode::Cols => Mat::from_fn(n2, n1 * n3, |j, c| x.get(c % n1, j, c / n1)),
        Mode::Bands => Mat::from_fn(n3, n1 * n2, |k, c| x.get(c % n1, c / n1, k)),
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &Mat, mode: Mode, dims: Dims) -> Result<Cube> {
    let (n1, n2, n3) = dims;
    let expected = match mode {
        Mode::Rows => (n1, n2 * n3),
        Mode::Cols => (n2, n1 * n3),
        Mode::Bands => (n3, n1 * n2),
    };
    if (m.rows(), m.cols()) != expected {
        return Err(Error::dims(format!(
            "{}×{} matrix cannot fold as mode-{} of {:?}",
            m.rows(),
            m.cols(),
            mode.number(),
            dims
        )));
    }
    Ok(Cube::from_fn(n1, n2, n3, |i, j, k| match mode {
        Mode::Rows => m.get(i, j + k * n2),
        Mode::Cols => m.get(j, i + k * n1),
        Mode::Bands => m.get(k, i + j * n1),
    }))
}

/// `x ×ₙ a`: every mode-n fiber of `x` is multiplied by `a`.
pub fn mode_n_product(x: &Cube, a: &Mat, mode: Mode) -> Result<Cube> {
    if a.cols() != x.dim(mode) {
        return Err(Error::dims(format!(
            "mode-{} product needs {} columns, matrix is {}×{}",
            mode.number(),
            x.dim(mode),
            a.rows(),
            a.cols()
        )));
    }
    let rows = a.rows();
    Ok(x.map_fibers(mode, rows, |src, dst| {
        for (r, d) in dst.iter_mut().enumerate() {
            let row = &a.as_slice()[r * a.cols()..(r + 1) * a.cols()];
            *d = row.iter().zip(src).map(|(p, q)| p * q).sum();
        }
    }))
}

/// Sum of elementwise products.
pub fn inner(x: &Cube, y: &Cube) -> Result<f64> {
    x.check_same(y)?;
    Ok(x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum())
}

pub fn frob_norm(x: &Cube) -> f64 {
    x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}
