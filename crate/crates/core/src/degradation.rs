//! Forward degradation model: circulant blur, uniform subsampling, windowed
//! spectral mixing and additive Gaussian noise.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::in_simplex;
use crate::tensor::{frob_norm, Cube, Dims, Mat, Mode};

/// Tolerance on simplex feasibility for kernels and spectral weights.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// FFT-diagonalized circulant matrix whose first column is a kernel `b`.
///
/// `B x` is the circular convolution `b ⊛ x`; `Bᵀ x` the circular
/// correlation. Eigenvalues are the unnormalized DFT of `b`.
#[derive(Clone)]
pub struct Circulant {
    n: usize,
    eig: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Circulant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Circulant").field("n", &self.n).finish()
    }
}

impl Circulant {
    pub fn new(b: &[f64]) -> Self {
        let n = b.len();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut eig: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd.process(&mut eig);
        Circulant { n, eig, fwd, inv }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Eigenvalues `√n·F b` in the negative-exponent DFT convention.
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eig
    }

    /// `out = B x` (or `Bᵀ x`). Returns the largest imaginary residual
    /// relative to the output scale.
    pub fn apply(&self, x: &[f64], adjoint: bool, out: &mut [f64]) -> f64 {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        for (v, e) in buf.iter_mut().zip(&self.eig) {
            *v *= if adjoint { e.conj() } else { *e };
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        let mut imag: f64 = 0.0;
        let mut real: f64 = 0.0;
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re * scale;
            imag = imag.max((v.im * scale).abs());
            real = real.max(o.abs());
        }
        if real > 0.0 {
            imag / real
        } else {
            imag
        }
    }
}

/// Largest relative imaginary residual tolerated from a real circulant product.
const IMAG_TOL: f64 = 1e-10;

/// `B·m` (or `Bᵀ·m`) for the circulant `B` with first column `b`, applied
/// to every column of `m`.
pub fn circulant_apply(b: &[f64], m: &Mat, adjoint: bool) -> Result<Mat> {
    if b.len() != m.rows() {
        return Err(Error::arg(format!(
            "kernel length {} does not match matrix rows {}",
            b.len(),
            m.rows()
        )));
    }
    let c = Circulant::new(b);
    let mut out = Mat::zeros(m.rows(), m.cols());
    let mut col = vec![0.0; m.rows()];
    for j in 0..m.cols() {
        let x = m.column(j);
        let resid = c.apply(&x, adjoint, &mut col);
        if resid > IMAG_TOL {
            return Err(Error::numerical("circulant_apply", format!("imaginary residual {resid:e}")));
        }
        for (i, &v) in col.iter().enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Dense circulant matrix with first column `b`: `B[p, q] = b[(p − q) mod n]`.
pub fn circulant_matrix(b: &[f64]) -> Mat {
    let n = b.len();
    Mat::from_fn(n, n, |p, q| b[(p + n - q) % n])
}

/// Centered Gaussian kernel of `support` taps, circularly shifted so its
/// center sits at index 0, normalized to sum 1.
pub fn gaussian_kernel(n: usize, sigma: f64, support: usize) -> Result<Vec<f64>> {
    if support == 0 || support % 2 == 0 {
        return Err(Error::arg(format!("kernel support must be odd, got {support}")));
    }
    if support > n {
        return Err(Error::arg(format!("kernel support {support} exceeds length {n}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("kernel sigma must be positive, got {sigma}")));
    }
    let half = (support / 2) as isize;
    let mut b = vec![0.0; n];
    for t in -half..=half {
        let idx = t.rem_euclid(n as isize) as usize;
        b[idx] = (-(t * t) as f64 / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = b.iter().sum();
    b.iter_mut().for_each(|v| *v /= sum);
    Ok(b)
}

/// The delta kernel of length `n`.
pub fn delta_kernel(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    if n > 0 {
        b[0] = 1.0;
    }
    b
}

/// Blur followed by uniform subsampling along one spatial mode, `P = D B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialOperator {
    pub n: usize,
    pub factor: usize,
    pub offset: usize,
    pub kernel: Vec<f64>,
}

impl SpatialOperator {
    pub fn new(n: usize, factor: usize, offset: usize, kernel: Vec<f64>) -> Result<Self> {
        let op = SpatialOperator {
            n,
            factor,
            offset,
            kernel,
        };
        op.validate()?;
        Ok(op)
    }

    /// Operator with offset `⌊d/2⌋`.
    pub fn centered(n: usize, factor: usize, kernel: Vec<f64>) -> Result<Self> {
        Self::new(n, factor, factor / 2, kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.factor == 0 {
            return Err(Error::arg("spatial operator needs n ≥ 1 and factor ≥ 1"));
        }
        if self.offset >= self.n {
            return Err(Error::arg(format!(
                "downsampling offset {} must be below n = {}",
                self.offset, self.n
            )));
        }
        if self.kernel.len() != self.n {
            return Err(Error::arg(format!(
                "kernel length {} does not match n = {}",
                self.kernel.len(),
                self.n
            )));
        }
        if !in_simplex(&self.kernel, SIMPLEX_TOL) {
            return Err(Error::arg("blur kernel must lie in the unit simplex"));
        }
        Ok(())
    }

    /// Number of kept samples, `⌈(n − offset)/d⌉`.
    pub fn out_len(&self) -> usize {
        (self.n - self.offset).div_ceil(self.factor)
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (self.offset..self.n).step_by(self.factor)
    }

    pub fn circulant(&self) -> Circulant {
        Circulant::new(&self.kernel)
    }

    /// Dense `D` (rows of the identity).
    pub fn downsampling_matrix(&self) -> Mat {
        let mut d = Mat::zeros(self.out_len(), self.n);
        for (r, c) in self.kept_indices().enumerate() {
            d.set(r, c, 1.0);
        }
        d
    }

    /// Dense `P = D B`.
    pub fn matrix(&self) -> Mat {
        self.downsampling_matrix()
            .matmul(&circulant_matrix(&self.kernel))
            .expect("shapes agree by construction")
    }

    /// `D y` for a full-length vector.
    pub fn subsample(&self, y: &[f64], out: &mut [f64]) {
        for (o, idx) in out.iter_mut().zip(self.kept_indices()) {
            *o = y[idx];
        }
    }

    /// `Dᵀ r`: zero-filled upsampling.
    pub fn upsample(&self, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&v, idx) in r.iter().zip(self.kept_indices()) {
            out[idx] = v;
        }
    }

    fn check_mode(&self, x: &Cube, mode: Mode, expected: usize) -> Result<()> {
        if x.dim(mode) != expected {
            return Err(Error::arg(format!(
                "mode-{} length {} does not match operator (expected {})",
                mode.number(),
                x.dim(mode),
                expected
            )));
        }
        Ok(())
    }

    /// `x ×_mode P`.
    pub fn apply_mode(&self, x: &Cube, mode: Mode) -> Result<Cube> {
        self.check_mode(x, mode, self.n)?;
        let c = self.circulant();
        let mut full = vec![0.0; self.n];
        Ok(x.map_fibers(mode, self.out_len(), |src, dst| {
            c.apply(src, false, &mut full);
            self.subsample(&full, dst);
        }))
    }

    /// `y ×_mode Pᵀ`.
    pub fn adjoint_mode(&self, y: &Cube, mode: Mode) -> Result<Cube> {
        self.check_mode(y, mode, self.out_len())?;
        let c = self.circulant();
        let mut up = vec![0.0; self.n];
        Ok(y.map_fibers(mode, self.n, |src, dst| {
            self.upsample(src, &mut up);
            c.apply(&up, true, dst);
        }))
    }

    /// `x ×_mode B` without subsampling.
    pub fn blur_mode(&self, x: &Cube, mode: Mode) -> Result<Cube> {
        self.check_mode(x, mode, self.n)?;
        let c = self.circulant();
        Ok(x.map_fibers(mode, self.n, |src, dst| {
            c.apply(src, false, dst);
        }))
    }
}

/// A 1-based inclusive band range `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandWindow {
    pub lo: usize,
    pub hi: usize,
}

impl BandWindow {
    pub fn new(lo: usize, hi: usize) -> Self {
        BandWindow { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi + 1 - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    /// 0-based first band.
    pub fn start(&self) -> usize {
        self.lo - 1
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        if self.lo == 0 || self.hi < self.lo || self.hi > bands {
            return Err(Error::arg(format!(
                "band window [{}, {}] outside 1..={bands}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Splits `1..=bands` into `parts` contiguous windows of near-equal size.
pub fn even_windows(bands: usize, parts: usize) -> Result<Vec<BandWindow>> {
    if parts == 0 || parts > bands {
        return Err(Error::arg(format!("cannot split {bands} bands into {parts} windows")));
    }
    Ok((0..parts)
        .map(|p| BandWindow::new(p * bands / parts + 1, (p + 1) * bands / parts))
        .collect())
}

/// Windows selecting the hyperspectral bands whose center wavelength falls
/// inside each multispectral band's `[lo_nm, hi_nm]` edges.
pub fn windows_from_wavelengths(wavelengths: &[f64], edges: &[(f64, f64)]) -> Result<Vec<BandWindow>> {
    edges
        .iter()
        .map(|&(lo_nm, hi_nm)| {
            let inside: Vec<usize> = wavelengths
                .iter()
                .enumerate()
                .filter(|(_, &w)| w >= lo_nm && w <= hi_nm)
                .map(|(k, _)| k + 1)
                .collect();
            match (inside.first(), inside.last()) {
                (Some(&lo), Some(&hi)) => Ok(BandWindow::new(lo, hi)),
                _ => Err(Error::arg(format!("no band falls inside [{lo_nm}, {hi_nm}] nm"))),
            }
        })
        .collect()
}

/// One multispectral band: a window into the hyperspectral bands plus its
/// simplex mixing weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBand {
    pub window: BandWindow,
    pub weights: Vec<f64>,
}

/// Row-wise spectral response `P₃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralResponse {
    /// Number of hyperspectral bands `K`.
    pub n_bands: usize,
    pub bands: Vec<SpectralBand>,
}

impl SpectralResponse {
    pub fn new(n_bands: usize, bands: Vec<SpectralBand>) -> Result<Self> {
        let sr = SpectralResponse { n_bands, bands };
        sr.validate()?;
        Ok(sr)
    }

    /// Uniform weights over each window.
    pub fn uniform(n_bands: usize, windows: &[BandWindow]) -> Result<Self> {
        let bands = windows
            .iter()
            .map(|w| SpectralBand {
                window: *w,
                weights: vec![1.0 / w.len().max(1) as f64; w.len()],
            })
            .collect();
        Self::new(n_bands, bands)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::arg("spectral response needs at least one band"));
        }
        for (i, b) in self.bands.iter().enumerate() {
            b.window.validate(self.n_bands)?;
            if b.weights.len() != b.window.len() {
                return Err(Error::arg(format!(
                    "band {}: {} weights for a window of {}",
                    i + 1,
                    b.weights.len(),
                    b.window.len()
                )));
            }
            if !in_simplex(&b.weights, SIMPLEX_TOL) {
                return Err(Error::arg(format!("band {}: weights must lie in the unit simplex", i + 1)));
            }
        }
        Ok(())
    }

    pub fn out_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn windows(&self) -> Vec<BandWindow> {
        self.bands.iter().map(|b| b.window).collect()
    }

    /// Dense `P₃` (`K′ × K`).
    pub fn matrix(&self) -> Mat {
        let mut p = Mat::zeros(self.bands.len(), self.n_bands);
        for (i, b) in self.bands.iter().enumerate() {
            for (k, &w) in b.weights.iter().enumerate() {
                p.set(i, b.window.start() + k, w);
            }
        }
        p
    }

    /// `s ×₃ P₃`.
    pub fn apply(&self, s: &Cube) -> Result<Cube> {
        if s.bands() != self.n_bands {
            return Err(Error::arg(format!(
                "cube has {} bands, spectral response expects {}",
                s.bands(),
                self.n_bands
            )));
        }
        let (n1, n2, _) = s.dims();
        let plane = n1 * n2;
        let mut out = Vec::with_capacity(plane * self.bands.len());
        for b in &self.bands {
            let mut acc = vec![0.0; plane];
            for (k, &w) in b.weights.iter().enumerate() {
                for (a, &v) in acc.iter_mut().zip(s.band(b.window.start() + k)) {
                    *a += w * v;
                }
            }
            out.extend(acc);
        }
        Cube::from_vec((n1, n2, self.bands.len()), out)
    }

    /// `r ×₃ P₃ᵀ`.
    pub fn adjoint(&self, r: &Cube) -> Result<Cube> {
        if r.bands() != self.bands.len() {
            return Err(Error::arg(format!(
                "cube has {} bands, spectral response has {}",
                r.bands(),
                self.bands.len()
            )));
        }
        let (n1, n2, _) = r.dims();
        let mut out = Cube::zeros(n1, n2, self.n_bands);
        for (i, b) in self.bands.iter().enumerate() {
            let src = r.band(i);
            for (k, &w) in b.weights.iter().enumerate() {
                for (o, &v) in out.band_mut(b.window.start() + k).iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

fn check_spatial(s: &Cube, op1: &SpatialOperator, op2: &SpatialOperator) -> Result<()> {
    if op1.n != s.rows() || op2.n != s.cols() {
        return Err(Error::arg(format!(
            "operators expect {}×{} but cube is {}×{}",
            op1.n,
            op2.n,
            s.rows(),
            s.cols()
        )));
    }
    Ok(())
}

/// `s ×₁ P₁ ×₂ P₂`.
pub fn spatial_degrade(s: &Cube, op1: &SpatialOperator, op2: &SpatialOperator) -> Result<Cube> {
    check_spatial(s, op1, op2)?;
    let x = op1.apply_mode(s, Mode::Rows)?;
    op2.apply_mode(&x, Mode::Cols)
}

/// `r ×₁ P₁ᵀ ×₂ P₂ᵀ`.
pub fn spatial_adjoint(r: &Cube, op1: &SpatialOperator, op2: &SpatialOperator) -> Result<Cube> {
    let x = op1.adjoint_mode(r, Mode::Rows)?;
    op2.adjoint_mode(&x, Mode::Cols)
}

/// `s ×₃ P₃`.
pub fn spectral_degrade(s: &Cube, sr: &SpectralResponse) -> Result<Cube> {
    sr.apply(s)
}

fn noise_into(x: &mut [f64], sd: f64, rng: &mut ChaCha8Rng) {
    for v in x.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sd * z;
    }
}

/// Adds i.i.d. Gaussian noise at a global SNR of `snr_db`. `+∞` returns `x`
/// unchanged.
pub fn add_noise(x: &Cube, snr_db: f64, seed: u64) -> Result<Cube> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::arg("SNR must not be NaN"));
    }
    let energy = frob_norm(x).powi(2);
    if energy == 0.0 {
        return Err(Error::arg("SNR is undefined for an all-zero cube"));
    }
    let var = energy / (x.len() as f64 * 10f64.powf(snr_db / 10.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    noise_into(out.as_mut_slice(), var.sqrt(), &mut rng);
    Ok(out)
}

/// Band-dependent noise: band `k` gets SNR `snr_db[k]` relative to its own
/// energy.
pub fn add_noise_per_band(x: &Cube, snr_db: &[f64], seed: u64) -> Result<Cube> {
    if snr_db.len() != x.bands() {
        return Err(Error::arg(format!(
            "{} SNR values for {} bands",
            snr_db.len(),
            x.bands()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    for (k, &snr) in snr_db.iter().enumerate() {
        if snr == f64::INFINITY {
            continue;
        }
        let band = out.band_mut(k);
        let energy: f64 = band.iter().map(|v| v * v).sum();
        if energy == 0.0 {
            return Err(Error::arg(format!("band {} is all zero; SNR undefined", k + 1)));
        }
        let var = energy / (band.len() as f64 * 10f64.powf(snr / 10.0));
        noise_into(band, var.sqrt(), &mut rng);
    }
    Ok(out)
}

/// Simulates the observed pair: `h` is noised with `seed`, `m` with `seed + 1`.
pub fn simulate_pair(
    truth: &Cube,
    op1: &SpatialOperator,
    op2: &SpatialOperator,
    sr: &SpectralResponse,
    snr_h: f64,
    snr_m: f64,
    seed: u64,
) -> Result<(Cube, Cube)> {
    let h = add_noise(&spatial_degrade(truth, op1, op2)?, snr_h, seed)?;
    let m = add_noise(&spectral_degrade(truth, sr)?, snr_m, seed.wrapping_add(1))?;
    Ok((h, m))
}

/// Random Tucker cube `G ×₁ U₁ ×₂ U₂ ×₃ U₃` with Gaussian core and factors,
/// min–max rescaled to `[0, 1]`.
///
/// Each factor column is white Gaussian noise circularly smoothed by a
/// Gaussian of width `smoothing` samples; `smoothing = 0` keeps it white.
pub fn synthetic_tucker(dims: Dims, ranks: Dims, smoothing: f64, seed: u64) -> Result<Cube> {
    let (n1, n2, n3) = dims;
    let (r1, r2, r3) = ranks;
    if [n1, n2, n3, r1, r2, r3].contains(&0) || r1 > n1 || r2 > n2 || r3 > n3 {
        return Err(Error::arg(format!("invalid Tucker shape {dims:?} with ranks {ranks:?}")));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::arg(format!("smoothing must be ≥ 0, got {smoothing}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |r, c| Mat::from_fn(r, c, |_, _| normal.sample(&mut rng));
    let core = draw(r1, r2 * r3);
    let core = Cube::from_fn(r1, r2, r3, |i, j, k| core.get(i, j + k * r2));
    let mut factor = |n: usize, r: usize| -> Result<Mat> {
        let u = draw(n, r);
        if smoothing == 0.0 {
            return Ok(u);
        }
        let support = if n % 2 == 1 { n } else { n - 1 };
        let blur = Circulant::new(&gaussian_kernel(n, smoothing, support)?);
        let mut out = Mat::zeros(n, r);
        let mut smoothed = vec![0.0; n];
        for c in 0..r {
            blur.apply(&u.column(c), false, &mut smoothed);
            for (t, v) in smoothed.iter().enumerate() {
                out.set(t, c, *v);
            }
        }
        Ok(out)
    };
    let u1 = factor(n1, r1)?;
    let u2 = factor(n2, r2)?;
    let u3 = factor(n3, r3)?;
    let x = crate::tensor::mode_n_product(&core, &u1, Mode::Rows)?;
    let x = crate::tensor::mode_n_product(&x, &u2, Mode::Cols)?;
    let x = crate::tensor::mode_n_product(&x, &u3, Mode::Bands)?;
    let (lo, hi) = x.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(x.map(|v| (v - lo) / span))
}
