//! Unitary band-domain transforms and the transformed tubal nuclear norm.
//!
//! A [`Transform`] holds a unitary `n3 × n3` matrix Φ. Multiplying every
//! mode-3 fiber by Φ moves a cube into the transform domain, where each
//! frontal slice is an ordinary matrix. The transformed t-SVD, the TTNN and
//! its proximal operator are all slice-wise matrix operations there.
//!
//! Only the DFT kind is complex; identity, DCT and the data-driven SVD basis
//! keep the whole computation real.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Cube;

const UNITARITY_LIMIT: f64 = 1e-8;
const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    DataSvd,
    Dft,
    Dct,
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TransformKind::Identity),
            "data_svd" | "data-svd" | "svd" => Ok(TransformKind::DataSvd),
            "dft" => Ok(TransformKind::Dft),
            "dct" => Ok(TransformKind::Dct),
            other => Err(Error::arg(format!("unknown transform kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Phi {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

/// A unitary band-domain transform Φ.
#[derive(Clone, Debug)]
pub struct Transform {
    kind: TransformKind,
    phi: Phi,
}

/// Frontal slices of a cube in the transform domain.
#[derive(Clone, Debug)]
pub enum TransformedSlices {
    Real(Vec<DMatrix<f64>>),
    Complex(Vec<DMatrix<Complex64>>),
}

impl TransformedSlices {
    pub fn len(&self) -> usize {
        match self {
            TransformedSlices::Real(s) => s.len(),
            TransformedSlices::Complex(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slice `k` promoted to complex entries.
    pub fn slice_complex(&self, k: usize) -> DMatrix<Complex64> {
        match self {
            TransformedSlices::Real(s) => s[k].map(|v| Complex64::new(v, 0.0)),
            TransformedSlices::Complex(s) => s[k].clone(),
        }
    }
}

/// Transformed t-SVD: per transform-domain slice `k`,
/// `Ŷ⁽ᵏ⁾ = U⁽ᵏ⁾ · Diag(σ⁽ᵏ⁾) · V⁽ᵏ⁾ᴴ`.
///
/// Factors are kept in the transform domain and in thin form (`min(n1, n2)`
/// singular triplets per slice), which is all the reconstruction needs.
#[derive(Clone, Debug)]
pub struct TSvd {
    pub dims: (usize, usize, usize),
    pub u: Vec<DMatrix<Complex64>>,
    /// Nonnegative, nonincreasing singular values of each slice.
    pub sigma: Vec<DVector<f64>>,
    pub v_adjoint: Vec<DMatrix<Complex64>>,
}

impl TSvd {
    pub fn max_singular_value(&self) -> f64 {
        self.sigma
            .iter()
            .filter_map(|s| s.iter().cloned().reduce(f64::max))
            .fold(0.0, f64::max)
    }

    /// `U *Φ D *Φ Vᴴ`, mapped back to the band domain (real part).
    pub fn reconstruct(&self, t: &Transform) -> Result<Cube> {
        let slices = self
            .u
            .iter()
            .zip(&self.sigma)
            .zip(&self.v_adjoint)
            .map(|((u, s), vt)| {
                let ds = DMatrix::from_diagonal(&s.map(|v| Complex64::new(v, 0.0)));
                u * ds * vt
            })
            .collect();
        t.inverse_slices(&TransformedSlices::Complex(slices), self.dims)
    }
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn n3(&self) -> usize {
        match &self.phi {
            Phi::Real(m) => m.nrows(),
            Phi::Complex(m) => m.nrows(),
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self.phi, Phi::Real(_))
    }

    pub fn phi_complex(&self) -> DMatrix<Complex64> {
        match &self.phi {
            Phi::Real(m) => m.map(|v| Complex64::new(v, 0.0)),
            Phi::Complex(m) => m.clone(),
        }
    }

    /// Φ when it is real-valued.
    pub fn phi_real(&self) -> Option<&DMatrix<f64>> {
        match &self.phi {
            Phi::Real(m) => Some(m),
            Phi::Complex(_) => None,
        }
    }

    /// `max(‖ΦΦᴴ − I‖_F, ‖ΦᴴΦ − I‖_F)`.
    pub fn unitarity_residual(&self) -> f64 {
        let phi = self.phi_complex();
        let n = phi.nrows();
        let eye = DMatrix::<Complex64>::identity(n, n);
        let a = (&phi * phi.adjoint() - &eye).norm();
        let b = (phi.adjoint() * &phi - &eye).norm();
        a.max(b)
    }

    /// Moves `x` into the transform domain, one matrix per frontal slice.
    pub fn forward_slices(&self, x: &Cube) -> Result<TransformedSlices> {
        self.check_bands(x.bands())?;
        let (n1, n2, n3) = x.dims();
        let unfolded = DMatrix::from_row_slice(n3, n1 * n2, x.as_slice());
        Ok(match &self.phi {
            Phi::Real(phi) => TransformedSlices::Real(rows_to_slices(&(phi * unfolded), n1, n2)),
            Phi::Complex(phi) => {
                let uc = unfolded.map(|v| Complex64::new(v, 0.0));
                TransformedSlices::Complex(rows_to_slices(&(phi * uc), n1, n2))
            }
        })
    }

    /// Inverse of [`Transform::forward_slices`]; the imaginary part, which is
    /// round-off for conjugate-symmetric input, is dropped.
    pub fn inverse_slices(&self, slices: &TransformedSlices, dims: (usize, usize, usize)) -> Result<Cube> {
        let (n1, n2, n3) = dims;
        self.check_bands(n3)?;
        if slices.len() != n3 {
            return Err(Error::dims(format!("{} slices for {n3} bands", slices.len())));
        }
        let data: Vec<f64> = match (&self.phi, slices) {
            (Phi::Real(phi), TransformedSlices::Real(s)) => {
                let stacked = slices_to_rows(s, n1, n2);
                row_major(&(phi.transpose() * stacked))
            }
            (_, s) => {
                let cs: Vec<DMatrix<Complex64>> = (0..n3).map(|k| s.slice_complex(k)).collect();
                let stacked = slices_to_rows(&cs, n1, n2);
                row_major(&(self.phi_complex().adjoint() * stacked).map(|c| c.re))
            }
        };
        Ok(Cube::from_raw(dims, data))
    }

    fn check_bands(&self, bands: usize) -> Result<()> {
        if bands != self.n3() {
            return Err(Error::dims(format!(
                "transform is {0}×{0}, cube has {bands} bands",
                self.n3()
            )));
        }
        Ok(())
    }
}

fn rows_to_slices<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, n1: usize, n2: usize) -> Vec<DMatrix<T>> {
    (0..m.nrows())
        .map(|k| DMatrix::from_fn(n1, n2, |i, j| m[(k, i * n2 + j)]))
        .collect()
}

fn slices_to_rows<T: nalgebra::Scalar + Copy>(s: &[DMatrix<T>], n1: usize, n2: usize) -> DMatrix<T> {
    DMatrix::from_fn(s.len(), n1 * n2, |k, c| s[k][(c / n2, c % n2)])
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Builds a unitary transform of size `n3`.
///
/// `DataSvd` needs `source`: Φ is the conjugate transpose of the left
/// singular vectors of the source's mode-3 unfolding, so the rows of Φ are
/// ordered by nonincreasing spectral energy.
pub fn build_transform(kind: TransformKind, n3: usize, source: Option<&Cube>) -> Result<Transform> {
    if n3 == 0 {
        return Err(Error::arg("transform size must be positive"));
    }
    if let Some(src) = source {
        if src.bands() != n3 {
            return Err(Error::dims(format!("source has {} bands, expected {n3}", src.bands())));
        }
    }
    let phi = match kind {
        TransformKind::Identity => Phi::Real(DMatrix::identity(n3, n3)),
        TransformKind::Dct => Phi::Real(dct_matrix(n3)),
        TransformKind::Dft => Phi::Complex(dft_matrix(n3)),
        TransformKind::DataSvd => {
            let src = source.ok_or_else(|| Error::arg("data_svd transform needs a source cube"))?;
            Phi::Real(data_svd_basis(src)?)
        }
    };
    let t = Transform { kind, phi };
    let residual = t.unitarity_residual();
    if !(residual <= UNITARITY_LIMIT) {
        return Err(Error::numerical(
            "build_transform",
            format!("unitarity residual {residual:e} exceeds {UNITARITY_LIMIT:e}"),
        ));
    }
    Ok(t)
}

/// Normalized DFT matrix, `F[j,k] = e^{-2πi jk/n} / √n`.
pub fn dft_matrix(n: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |j, k| {
        let angle = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
        Complex64::from_polar(scale, angle)
    })
}

/// Orthonormal DCT-II matrix.
pub fn dct_matrix(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |k, j| {
        let c = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        c * (std::f64::consts::PI * (2 * j + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

fn data_svd_basis(src: &Cube) -> Result<DMatrix<f64>> {
    let (n1, n2, n3) = src.dims();
    let unfolded = DMatrix::from_row_slice(n3, n1 * n2, src.as_slice());
    let u = if n1 * n2 >= n3 {
        let svd = SVD::try_new(unfolded, true, false, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical("build_transform", "SVD did not converge"))?;
        svd.u.expect("left singular vectors requested")
    } else {
        // Fewer pixels than bands: the thin SVD cannot span R^n3, so use the
        // eigenvectors of the band Gram matrix, which complete the basis.
        let gram = &unfolded * unfolded.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        DMatrix::from_fn(n3, n3, |r, c| eig.eigenvectors[(r, order[c])])
    };
    Ok(u.transpose())
}

/// Applies Φ (or Φᴴ when `inverse`) to every mode-3 fiber of a cube.
///
/// Defined for real transforms. The DFT maps real cubes to complex ones; use
/// [`Transform::forward_slices`] for it.
pub fn apply_transform(x: &Cube, t: &Transform, inverse: bool) -> Result<Cube> {
    let phi = t.phi_real().ok_or_else(|| {
        Error::Unsupported("the DFT transform is complex-valued; use Transform::forward_slices".into())
    })?;
    if x.bands() != t.n3() {
        return Err(Error::dims(format!(
            "transform is {0}×{0}, cube has {1} bands",
            t.n3(),
            x.bands()
        )));
    }
    let (n1, n2, n3) = x.dims();
    let unfolded = DMatrix::from_row_slice(n3, n1 * n2, x.as_slice());
    let out = if inverse {
        phi.transpose() * unfolded
    } else {
        phi * unfolded
    };
    Ok(Cube::from_raw(x.dims(), row_major(&out)))
}

fn slice_svd<T>(m: DMatrix<T>) -> Result<(DMatrix<T>, DVector<f64>, DMatrix<T>)>
where
    T: ComplexField<RealField = f64>,
{
    let svd = SVD::try_new(m, true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::numerical("t_svd", "slice SVD did not converge"))?;
    Ok((
        svd.u.expect("u requested"),
        svd.singular_values,
        svd.v_t.expect("v requested"),
    ))
}

/// Transformed t-SVD of `x` under `t`.
pub fn t_svd(x: &Cube, t: &Transform) -> Result<TSvd> {
    let slices = t.forward_slices(x)?;
    let mut out = TSvd {
        dims: x.dims(),
        u: Vec::with_capacity(slices.len()),
        sigma: Vec::with_capacity(slices.len()),
        v_adjoint: Vec::with_capacity(slices.len()),
    };
    let to_c = |m: DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
    match slices {
        TransformedSlices::Real(s) => {
            for m in s {
                let (u, sv, vt) = slice_svd(m)?;
                out.u.push(to_c(u));
                out.sigma.push(sv);
                out.v_adjoint.push(to_c(vt));
            }
        }
        TransformedSlices::Complex(s) => {
            for m in s {
                let (u, sv, vt) = slice_svd(m)?;
                out.u.push(u);
                out.sigma.push(sv);
                out.v_adjoint.push(vt);
            }
        }
    }
    Ok(out)
}

/// Transformed tubal nuclear norm: the sum of nuclear norms of all
/// transform-domain frontal slices.
pub fn ttnn(x: &Cube, t: &Transform) -> Result<f64> {
    fn nuclear<T: ComplexField<RealField = f64>>(m: DMatrix<T>) -> Result<f64> {
        let svd = SVD::try_new(m, false, false, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical("ttnn", "slice SVD did not converge"))?;
        Ok(svd.singular_values.sum())
    }
    match t.forward_slices(x)? {
        TransformedSlices::Real(s) => s.into_iter().map(nuclear).sum(),
        TransformedSlices::Complex(s) => s.into_iter().map(nuclear).sum(),
    }
}

fn soft_threshold_slice<T>(m: DMatrix<T>, lambda: f64) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64>,
{
    let (u, sv, vt) = slice_svd(m)?;
    let kept: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > lambda).collect();
    let (r, c) = (u.nrows(), vt.ncols());
    if kept.is_empty() {
        return Ok(DMatrix::from_element(r, c, T::zero()));
    }
    let mut scaled_u = DMatrix::from_element(r, kept.len(), T::zero());
    let mut vt_kept = DMatrix::from_element(kept.len(), c, T::zero());
    for (col, &i) in kept.iter().enumerate() {
        let shrink = T::from_real(sv[i] - lambda);
        for row in 0..r {
            scaled_u[(row, col)] = u[(row, i)].clone() * shrink.clone();
        }
        for cc in 0..c {
            vt_kept[(col, cc)] = vt[(i, cc)].clone();
        }
    }
    Ok(scaled_u * vt_kept)
}

/// Proximal operator of `lambda·TTNN`: soft-thresholds the singular values
/// of every transform-domain slice by `lambda`.
pub fn prox_ttnn(y: &Cube, lambda: f64, t: &Transform) -> Result<Cube> {
    if !(lambda >= 0.0) {
        return Err(Error::arg(format!("prox weight must be nonnegative, got {lambda}")));
    }
    if !y.all_finite() {
        return Err(Error::numerical("prox_ttnn", "non-finite input"));
    }
    if lambda == 0.0 {
        return Ok(y.clone());
    }
    let out = match t.forward_slices(y)? {
        TransformedSlices::Real(s) => TransformedSlices::Real(
            s.into_iter()
                .map(|m| soft_threshold_slice(m, lambda))
                .collect::<Result<_>>()?,
        ),
        TransformedSlices::Complex(s) => TransformedSlices::Complex(
            s.into_iter()
                .map(|m| soft_threshold_slice(m, lambda))
                .collect::<Result<_>>()?,
        ),
    };
    t.inverse_slices(&out, y.dims())
}
