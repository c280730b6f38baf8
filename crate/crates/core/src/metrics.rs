//! Full-reference and no-reference quality indices for fused cubes.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::bicubic_downsample;
use crate::tensor::{Cube, Mat};

/// Default PSNR peak.
pub const DEFAULT_PEAK: f64 = 255.0;
pub const DEFAULT_UIQI_WINDOW: usize = 32;
pub const DEFAULT_UIQI_STRIDE: usize = 32;

fn same_dims(x: &Cube, r: &Cube) -> Result<()> {
    if x.dims() != r.dims() {
        return Err(Error::arg(format!("cube is {:?}, reference is {:?}", x.dims(), r.dims())));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Per-band PSNR in dB and their mean. A band with zero error scores `+∞`.
pub fn psnr(x: &Cube, reference: &Cube, peak: f64) -> Result<(f64, Vec<f64>)> {
    same_dims(x, reference)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::arg(format!("peak must be positive, got {peak}")));
    }
    if x.is_empty() {
        return Err(Error::arg("empty cube"));
    }
    let per_band: Vec<f64> = (0..x.bands())
        .map(|k| {
            let e = mse(x.band(k), reference.band(k));
            if e == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (peak * peak / e).log10()
            }
        })
        .collect();
    let m = per_band.iter().sum::<f64>() / per_band.len() as f64;
    Ok((m, per_band))
}

/// Mean spectral angle in radians over pixels where both spectra are
/// nonzero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sam {
    pub value: f64,
    /// Pixels skipped because a spectrum was zero.
    pub skipped: usize,
}

pub fn sam(x: &Cube, reference: &Cube) -> Result<Sam> {
    same_dims(x, reference)?;
    let (n1, n2, n3) = x.dims();
    let npix = n1 * n2;
    let (mut total, mut counted) = (0.0, 0usize);
    let mut a = vec![0.0; n3];
    let mut b = vec![0.0; n3];
    for p in 0..npix {
        for k in 0..n3 {
            a[k] = x.as_slice()[k * npix + p];
            b[k] = reference.as_slice()[k * npix + p];
        }
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        // arccos of the cosine, evaluated as 2·atan2(‖â − b̂‖, ‖â + b̂‖).
        let (mut d2, mut s2) = (0.0, 0.0);
        for (u, v) in a.iter().zip(&b) {
            let (u, v) = (u / na, v / nb);
            d2 += (u - v) * (u - v);
            s2 += (u + v) * (u + v);
        }
        total += 2.0 * d2.sqrt().atan2(s2.sqrt());
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::arg("every pixel has a zero spectrum"));
    }
    Ok(Sam {
        value: total / counted as f64,
        skipped: npix - counted,
    })
}

/// Index of one image pair, `None` when the mean or variance denominator
/// vanishes.
fn q_index(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    let lum_den = mx * mx + my * my;
    let var_den = vx + vy;
    if lum_den == 0.0 || var_den == 0.0 {
        return None;
    }
    // The contrast and structure factors multiply to 2σxy/(σx²+σy²).
    Some((2.0 * mx * my / lum_den) * (2.0 * cxy / var_den))
}

/// Mean window index over one band pair and the number of degenerate
/// windows (scored 0).
fn q_band(x: &[f64], y: &[f64], rows: usize, cols: usize, window: usize, stride: usize) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut degenerate = 0usize;
    let mut wx = Vec::with_capacity(window * window);
    let mut wy = Vec::with_capacity(window * window);
    let mut i = 0;
    while i + window <= rows {
        let mut j = 0;
        while j + window <= cols {
            wx.clear();
            wy.clear();
            for r in i..i + window {
                wx.extend_from_slice(&x[r * cols + j..r * cols + j + window]);
                wy.extend_from_slice(&y[r * cols + j..r * cols + j + window]);
            }
            match q_index(&wx, &wy) {
                Some(q) => total += q,
                None => degenerate += 1,
            }
            count += 1;
            j += stride;
        }
        i += stride;
    }
    (total / count as f64, degenerate)
}

fn check_window(rows: usize, cols: usize, window: usize, stride: usize) -> Result<()> {
    if window == 0 || stride == 0 {
        return Err(Error::arg("UIQI window and stride must be ≥ 1"));
    }
    if window > rows || window > cols {
        return Err(Error::arg(format!(
            "UIQI window {window} exceeds the {rows}×{cols} image"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uiqi {
    pub value: f64,
    /// Windows where both images are constant (or both zero-mean), scored 0.
    pub degenerate_windows: usize,
}

/// Band-averaged universal image quality index over `window × window`
/// patches placed every `stride` pixels.
pub fn uiqi(x: &Cube, reference: &Cube, window: usize, stride: usize) -> Result<Uiqi> {
    same_dims(x, reference)?;
    let (n1, n2, n3) = x.dims();
    check_window(n1, n2, window, stride)?;
    let mut total = 0.0;
    let mut degenerate = 0;
    for k in 0..n3 {
        let (q, d) = q_band(x.band(k), reference.band(k), n1, n2, window, stride);
        total += q;
        degenerate += d;
    }
    Ok(Uiqi {
        value: total / n3 as f64,
        degenerate_windows: degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ergas {
    pub value: f64,
    /// Bands left out because their reference mean is zero.
    pub excluded_bands: Vec<usize>,
}

/// `d·sqrt(mean_k (RMSE_k/μ_k)²)` with `μ_k` the reference band mean.
pub fn ergas(x: &Cube, reference: &Cube, ratio: f64) -> Result<Ergas> {
    same_dims(x, reference)?;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::arg(format!("resolution ratio must be positive, got {ratio}")));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for k in 0..x.bands() {
        let mu = mean(reference.band(k));
        if mu == 0.0 {
            excluded.push(k);
            continue;
        }
        acc += mse(x.band(k), reference.band(k)) / (mu * mu);
        used += 1;
    }
    if used == 0 {
        return Err(Error::arg("every reference band has zero mean"));
    }
    Ok(Ergas {
        value: ratio * (acc / used as f64).sqrt(),
        excluded_bands: excluded,
    })
}

/// `(Dλ, Ds, QNR)` computed against the LR-HSI and a panchromatic image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoReference {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

/// Spectral and spatial distortion with the square-root forms:
/// `Dλ = sqrt(1/(K(K−1)) Σ_{i≠j} |Q(Hᵢ,Hⱼ) − Q(Sᵢ,Sⱼ)|)` and
/// `Ds = sqrt(1/K Σ_k |Q(S_k,P) − Q(H_k,P̃)|)`.
///
/// `window` and `stride` apply at the fused resolution; on the LR-HSI both
/// are divided by `factor` (at least 1) so the patches cover the same area.
pub fn no_reference(fused: &Cube, h: &Cube, pan: &Mat, factor: usize, window: usize, stride: usize) -> Result<NoReference> {
    let (n1, n2, k) = fused.dims();
    if h.bands() != k {
        return Err(Error::arg(format!("fused cube has {k} bands, HSI has {}", h.bands())));
    }
    if factor == 0 || h.rows() * factor != n1 || h.cols() * factor != n2 {
        return Err(Error::arg(format!(
            "HSI {}×{} times factor {factor} must equal fused {n1}×{n2}",
            h.rows(),
            h.cols()
        )));
    }
    if pan.rows() != n1 || pan.cols() != n2 {
        return Err(Error::arg(format!(
            "panchromatic image is {}×{}, fused is {n1}×{n2}",
            pan.rows(),
            pan.cols()
        )));
    }
    if k < 2 {
        return Err(Error::arg("spectral distortion needs at least two bands"));
    }
    let (lw, ls) = ((window / factor).max(1), (stride / factor).max(1));
    check_window(n1, n2, window, stride)?;
    check_window(h.rows(), h.cols(), lw, ls)?;
    let hi = |a: &[f64], b: &[f64]| q_band(a, b, n1, n2, window, stride).0;
    let lo = |a: &[f64], b: &[f64]| q_band(a, b, h.rows(), h.cols(), lw, ls).0;

    let mut dl = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                dl += (lo(h.band(i), h.band(j)) - hi(fused.band(i), fused.band(j))).abs();
            }
        }
    }
    let d_lambda = (dl / (k * (k - 1)) as f64).sqrt();

    let pan_cube = Cube::from_vec((n1, n2, 1), pan.as_slice().to_vec())?;
    let pan_lr = bicubic_downsample(&pan_cube, factor, factor / 2)?;
    let mut ds = 0.0;
    for b in 0..k {
        ds += (hi(fused.band(b), pan_cube.band(0)) - lo(h.band(b), pan_lr.band(0))).abs();
    }
    let d_s = (ds / k as f64).sqrt();
    Ok(NoReference {
        d_lambda,
        d_s,
        qnr: (1.0 - d_lambda) * (1.0 - d_s),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    pub value: f64,
    /// True when the normal equations were singular and a small ridge was
    /// added.
    pub ridge_fallback: bool,
}

/// Mean coefficient of determination of each fused band regressed (with
/// intercept) on all MSI bands.
pub fn r_squared(fused: &Cube, m: &Cube) -> Result<RSquared> {
    if fused.rows() != m.rows() || fused.cols() != m.cols() {
        return Err(Error::arg(format!(
            "fused is {}×{}, MSI is {}×{}",
            fused.rows(),
            fused.cols(),
            m.rows(),
            m.cols()
        )));
    }
    let npix = fused.rows() * fused.cols();
    let p = m.bands() + 1;
    let design = DMatrix::from_fn(npix, p, |r, c| if c == 0 { 1.0 } else { m.band(c - 1)[r] });
    let gram = design.transpose() * &design;
    let mut ridge_fallback = false;
    let chol = match Cholesky::new(gram.clone()) {
        Some(c) if c.l().diagonal().iter().all(|d| *d > 1e-10 * gram.diagonal().max().sqrt()) => c,
        _ => {
            ridge_fallback = true;
            let eps = 1e-8 * gram.trace().max(f64::MIN_POSITIVE) / p as f64;
            Cholesky::new(gram + DMatrix::identity(p, p) * eps)
                .ok_or_else(|| Error::numerical("r_squared", "regression matrix is not positive definite"))?
        }
    };
    let mut total = 0.0;
    for k in 0..fused.bands() {
        let y = nalgebra::DVector::from_column_slice(fused.band(k));
        let coef = chol.solve(&(design.transpose() * &y));
        let resid = &y - &design * coef;
        let my = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
        let ss_res = resid.norm_squared();
        total += if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    }
    Ok(RSquared {
        value: total / fused.bands() as f64,
        ridge_fallback,
    })
}

mod float_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number or inf, got {other:?}"))),
            },
        }
    }

    pub mod opt {
        use serde::{Deserialize, Deserializer, Serializer};

        #[derive(serde::Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => s.serialize_some(&Wrap(*x)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        #[derive(serde::Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&Wrap(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}

/// Metric bundle written by `eval`. Infinite PSNR is stored as `"inf"`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(with = "float_or_inf::opt", skip_serializing_if = "Option::is_none", default)]
    pub psnr_db: Option<f64>,
    #[serde(with = "float_or_inf::vec", skip_serializing_if = "Vec::is_empty", default)]
    pub psnr_per_band: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sam_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uiqi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ergas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<String>,
}

/// Options for [`full_reference`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullReferenceOptions {
    pub peak: f64,
    /// Rescale by `peak` when the reference lies in `[0, 1]`.
    pub rescale_unit_range: bool,
    pub ratio: f64,
    pub window: usize,
    pub stride: usize,
}

impl Default for FullReferenceOptions {
    fn default() -> Self {
        FullReferenceOptions {
            peak: DEFAULT_PEAK,
            rescale_unit_range: true,
            ratio: 4.0,
            window: DEFAULT_UIQI_WINDOW,
            stride: DEFAULT_UIQI_STRIDE,
        }
    }
}

/// PSNR, SAM, UIQI and ERGAS against a reference.
///
/// With `rescale_unit_range`, both cubes are multiplied by `peak` before
/// PSNR whenever the reference lies within `[0, 1]`. The UIQI window is
/// shrunk to the image size when the image is smaller than it, which is
/// noted in the diagnostics.
pub fn full_reference(x: &Cube, reference: &Cube, opts: &FullReferenceOptions) -> Result<MetricReport> {
    same_dims(x, reference)?;
    let mut diagnostics = Vec::new();
    let (lo, hi) = reference.min_max();
    let (px, pr) = if opts.rescale_unit_range && lo >= 0.0 && hi <= 1.0 {
        (x.scale(opts.peak), reference.scale(opts.peak))
    } else {
        (x.clone(), reference.clone())
    };
    let (psnr_db, per_band) = psnr(&px, &pr, opts.peak)?;
    let s = sam(x, reference)?;
    if s.skipped > 0 {
        diagnostics.push(format!("sam: {} zero-spectrum pixels skipped", s.skipped));
    }
    let side = x.rows().min(x.cols());
    let window = opts.window.min(side);
    if window != opts.window {
        diagnostics.push(format!("uiqi: window reduced from {} to {window}", opts.window));
    }
    let stride = if window != opts.window { window } else { opts.stride };
    let q = uiqi(x, reference, window, stride)?;
    if q.degenerate_windows > 0 {
        diagnostics.push(format!("uiqi: {} constant windows scored 0", q.degenerate_windows));
    }
    let e = ergas(x, reference, opts.ratio)?;
    if !e.excluded_bands.is_empty() {
        diagnostics.push(format!("ergas: zero-mean bands excluded {:?}", e.excluded_bands));
    }
    Ok(MetricReport {
        psnr_db: Some(psnr_db),
        psnr_per_band: per_band,
        sam_rad: Some(s.value),
        uiqi: Some(q.value),
        ergas: Some(e.value),
        diagnostics,
        ..Default::default()
    })
}
