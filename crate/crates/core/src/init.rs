//! Starting point for the solver: regression-based sharpening for 𝒮⁰ and
//! Gaussian seeds for the blur kernels and spectral weights.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::degradation::{gaussian_kernel, BandWindow, SpatialOperator, SpectralBand, SpectralResponse};
use crate::error::{Error, Result};
use crate::tensor::{unfold, Cube, Mat, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Ridge weight.
    pub gamma: f64,
    /// Width of the spatial kernel seed.
    pub sigma_s: f64,
    /// Width of the spectral weight seed.
    pub sigma_lambda: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            gamma: 0.1,
            sigma_s: 1.0,
            sigma_lambda: 100.0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::arg(format!("gamma must be ≥ 0, got {}", self.gamma)));
        }
        if !(self.sigma_s > 0.0 && self.sigma_lambda > 0.0) {
            return Err(Error::arg("sigma_s and sigma_lambda must be positive"));
        }
        Ok(())
    }
}

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn keys_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Tap weights for one output sample: the Keys kernel stretched by `factor`
/// around `center`, indices clamped to `[0, n)`, normalized to sum 1.
fn bicubic_taps(n: usize, factor: usize, center: usize) -> Vec<(usize, f64)> {
    let d = factor as isize;
    let c = center as isize;
    let mut taps: Vec<(usize, f64)> = Vec::new();
    for t in (c - 2 * d)..=(c + 2 * d) {
        let w = keys_kernel((t - c) as f64 / factor as f64);
        if w == 0.0 {
            continue;
        }
        let idx = t.clamp(0, n as isize - 1) as usize;
        match taps.iter_mut().find(|(i, _)| *i == idx) {
            Some(e) => e.1 += w,
            None => taps.push((idx, w)),
        }
    }
    let sum: f64 = taps.iter().map(|(_, w)| w).sum();
    taps.iter_mut().for_each(|e| e.1 /= sum);
    taps
}

fn apply_taps(taps: &[Vec<(usize, f64)>], src: &[f64], dst: &mut [f64]) {
    for (o, t) in dst.iter_mut().zip(taps) {
        *o = t.iter().map(|&(i, w)| w * src[i]).sum();
    }
}

/// Antialiased bicubic downsampling by `factor` along both spatial modes.
/// Output sample `p` is centered on input index `p·factor + offset`.
pub fn bicubic_downsample(x: &Cube, factor: usize, offset: usize) -> Result<Cube> {
    if factor == 0 {
        return Err(Error::arg("factor must be ≥ 1"));
    }
    if x.rows() % factor != 0 || x.cols() % factor != 0 {
        return Err(Error::arg(format!(
            "spatial dims {}×{} are not divisible by factor {factor}",
            x.rows(),
            x.cols()
        )));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    if offset >= factor {
        return Err(Error::arg(format!("offset {offset} must be below factor {factor}")));
    }
    let down = |len: usize| -> Vec<Vec<(usize, f64)>> {
        (0..len / factor).map(|p| bicubic_taps(len, factor, p * factor + offset)).collect()
    };
    let rows = down(x.rows());
    let cols = down(x.cols());
    let y = x.map_fibers(Mode::Rows, rows.len(), |src, dst| apply_taps(&rows, src, dst));
    Ok(y.map_fibers(Mode::Cols, cols.len(), |src, dst| apply_taps(&cols, src, dst)))
}

fn append_ones(x: &Cube) -> Cube {
    let ones = Cube::filled((x.rows(), x.cols(), 1), 1.0);
    x.concat_bands(&ones).expect("spatial dims agree")
}

/// `(M⁺, M_d⁺)`: the MSI and its bicubic-downsampled version, each with an
/// appended all-ones band.
pub fn build_m_plus(m: &Cube, factor: usize) -> Result<(Cube, Cube)> {
    let md = bicubic_downsample(m, factor, factor / 2)?;
    Ok((append_ones(m), append_ones(&md)))
}

/// Ridge regression weights `W* = (M Mᵀ + γI)⁻¹ M Hᵀ` with `M = M_d⁺₍₃₎`
/// and `H = H₍₃₎`; shape `(K′+1) × K`.
pub fn regression_weights(h: &Cube, md_plus: &Cube, gamma: f64) -> Result<Mat> {
    if h.rows() != md_plus.rows() || h.cols() != md_plus.cols() {
        return Err(Error::dims(format!(
            "HSI is {}×{} but the downsampled MSI is {}×{}",
            h.rows(),
            h.cols(),
            md_plus.rows(),
            md_plus.cols()
        )));
    }
    let m = unfold(md_plus, Mode::Bands).to_dmatrix();
    let hh = unfold(h, Mode::Bands).to_dmatrix();
    let p = m.nrows();
    let gram = &m * m.transpose() + DMatrix::identity(p, p) * gamma;
    let rhs = &m * hh.transpose();
    let singular = || {
        Error::Solve(format!(
            "normal equations are singular with gamma = {gamma}; use gamma > 0"
        ))
    };
    let chol = Cholesky::new(gram.clone()).ok_or_else(singular)?;
    let w = chol.solve(&rhs);
    let resid = (&gram * &w - &rhs).norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    if !w.iter().all(|v| v.is_finite()) || resid > 1e-8 * scale {
        return Err(singular());
    }
    Ok(Mat::from_dmatrix(&w))
}

/// Initial high-resolution estimate `𝒮⁰ = M⁺ ×₃ (W*)ᵀ`.
pub fn init_hrhsi(h: &Cube, m: &Cube, factor: usize, cfg: &InitConfig) -> Result<Cube> {
    cfg.validate()?;
    if m.rows() != factor * h.rows() || m.cols() != factor * h.cols() {
        return Err(Error::dims(format!(
            "MSI is {}×{} but HSI {}×{} times factor {factor} is {}×{}",
            m.rows(),
            m.cols(),
            h.rows(),
            h.cols(),
            factor * h.rows(),
            factor * h.cols()
        )));
    }
    let (m_plus, md_plus) = build_m_plus(m, factor)?;
    let w = regression_weights(h, &md_plus, cfg.gamma)?;
    crate::tensor::mode_n_product(&m_plus, &w.transpose(), Mode::Bands)
}

/// Gaussian weights of width `sigma` at integer offsets from the center of a
/// length-`k` window, normalized to sum 1.
pub fn gaussian_weights(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..k).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Seed operators: Gaussian spatial kernels with `2·factor + 1` taps
/// (reduced to the largest odd length that fits) and Gaussian spectral
/// weights over each window.
pub fn init_kernels(
    n1: usize,
    n2: usize,
    factor: usize,
    windows: &[BandWindow],
    n_bands: usize,
    cfg: &InitConfig,
) -> Result<(SpatialOperator, SpatialOperator, SpectralResponse)> {
    cfg.validate()?;
    let spatial = |n: usize| -> Result<SpatialOperator> {
        let mut support = (2 * factor + 1).min(n);
        if support % 2 == 0 {
            support -= 1;
        }
        SpatialOperator::centered(n, factor, gaussian_kernel(n, cfg.sigma_s, support)?)
    };
    let bands = windows
        .iter()
        .map(|w| SpectralBand {
            window: *w,
            weights: gaussian_weights(w.len(), cfg.sigma_lambda),
        })
        .collect();
    Ok((spatial(n1)?, spatial(n2)?, SpectralResponse::new(n_bands, bands)?))
}
