//! Cube files (JSON header + raw samples), trace CSV and PGM/PPM export.
//!
//! A cube stored at `base` occupies `base.json` and `base.raw`. Samples are
//! band-sequential, row-major inside a band, little-endian.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::TraceRecord;
use crate::tensor::Cube;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Unsupported(format!("dtype {other:?} (expected f32 or f64)"))),
        }
    }
}

/// Contents of `base.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeHeader {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub dtype: Dtype,
    pub order: String,
    pub endianness: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wavelengths_nm: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub description: Option<String>,
}

impl CubeHeader {
    pub fn new(dims: (usize, usize, usize), dtype: Dtype) -> Self {
        CubeHeader {
            rows: dims.0,
            cols: dims.1,
            bands: dims.2,
            dtype,
            order: "bsq".into(),
            endianness: "little".into(),
            wavelengths_nm: None,
            description: None,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.bands)
    }

    /// Expected size of the raw file in bytes.
    pub fn raw_len(&self) -> Option<u64> {
        (self.rows as u64)
            .checked_mul(self.cols as u64)?
            .checked_mul(self.bands as u64)?
            .checked_mul(self.dtype.size() as u64)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |detail: String| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail,
        };
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(bad(format!("dimensions must be positive, got {:?}", self.dims())));
        }
        if self.order != "bsq" {
            return Err(Error::Unsupported(format!("order {:?} (only \"bsq\")", self.order)));
        }
        if self.endianness != "little" {
            return Err(Error::Unsupported(format!(
                "endianness {:?} (only \"little\")",
                self.endianness
            )));
        }
        if let Some(w) = &self.wavelengths_nm {
            if w.len() != self.bands {
                return Err(bad(format!("{} wavelengths for {} bands", w.len(), self.bands)));
            }
        }
        if self.raw_len().is_none() {
            return Err(bad("dimensions overflow".into()));
        }
        Ok(())
    }
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Paths of the header and raw file for `base`.
pub fn cube_paths(base: &Path) -> (PathBuf, PathBuf) {
    (with_suffix(base, "json"), with_suffix(base, "raw"))
}

/// Writes `x` with a default header.
pub fn write_cube(x: &Cube, base: &Path, dtype: Dtype) -> Result<()> {
    write_cube_with_header(x, base, &CubeHeader::new(x.dims(), dtype))
}

/// Writes `x` under `header`, whose dimensions must match.
pub fn write_cube_with_header(x: &Cube, base: &Path, header: &CubeHeader) -> Result<()> {
    let (json_path, raw_path) = cube_paths(base);
    header.validate(&json_path)?;
    if header.dims() != x.dims() {
        return Err(Error::arg(format!(
            "header is {:?}, cube is {:?}",
            header.dims(),
            x.dims()
        )));
    }
    let mut bytes = Vec::with_capacity(x.len() * header.dtype.size());
    match header.dtype {
        Dtype::F64 => x.as_slice().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => x
            .as_slice()
            .iter()
            .for_each(|v| bytes.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// Reads and validates only the header.
pub fn read_header(base: &Path) -> Result<CubeHeader> {
    let (json_path, _) = cube_paths(base);
    if !json_path.exists() {
        return Err(Error::MissingFile(json_path));
    }
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: CubeHeader = serde_json::from_str(&text).map_err(|e| {
        // Enumerated fields outside their set surface as unsupported.
        let msg = e.to_string();
        if msg.contains("unknown variant") {
            Error::Unsupported(msg)
        } else {
            Error::MalformedHeader {
                path: json_path.clone(),
                detail: msg,
            }
        }
    })?;
    header.validate(&json_path)?;
    Ok(header)
}

pub fn read_cube(base: &Path) -> Result<Cube> {
    Ok(read_cube_with_header(base)?.0)
}

pub fn read_cube_with_header(base: &Path) -> Result<(Cube, CubeHeader)> {
    let header = read_header(base)?;
    let (_, raw_path) = cube_paths(base);
    if !raw_path.exists() {
        return Err(Error::MissingFile(raw_path));
    }
    let expected = header.raw_len().expect("validated");
    let actual = fs::metadata(&raw_path).map_err(|e| Error::io(&raw_path, e))?.len();
    if actual != expected {
        return Err(Error::LengthMismatch {
            path: raw_path,
            expected,
            actual,
        });
    }
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let data: Vec<f64> = match header.dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "read_cube",
            format!("{}: non-finite sample at index {i}", raw_path.display()),
        ));
    }
    Ok((Cube::from_vec(header.dims(), data)?, header))
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) || !(hi - lo).is_finite() {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn check_band(x: &Cube, band: usize) -> Result<()> {
    if band >= x.bands() {
        return Err(Error::arg(format!("band {band} out of range for {} bands", x.bands())));
    }
    Ok(())
}

/// 8-bit binary PGM of one band, min–max normalized. A constant band is
/// written as mid-gray 128.
pub fn export_band_image(x: &Cube, band: usize, path: &Path) -> Result<()> {
    check_band(x, band)?;
    let mut out = format!("P5\n{} {}\n255\n", x.cols(), x.rows()).into_bytes();
    out.extend(to_bytes(x.band(band)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// 8-bit binary PPM false-color composite, each channel normalized on its
/// own.
pub fn export_false_color(x: &Cube, rgb: [usize; 3], path: &Path) -> Result<()> {
    for b in rgb {
        check_band(x, b)?;
    }
    let chans: Vec<Vec<u8>> = rgb.iter().map(|&b| to_bytes(x.band(b))).collect();
    let mut out = format!("P6\n{} {}\n255\n", x.cols(), x.rows()).into_bytes();
    for p in 0..x.rows() * x.cols() {
        out.extend([chans[0][p], chans[1][p], chans[2][p]]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "L1",
    "L2",
    "ttnn",
    "lagrangian",
    "primal_residual",
    "rel_change",
    "wall_ms",
];

/// One parsed trace row.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub ttnn: f64,
    pub lagrangian: f64,
    pub primal_residual: f64,
    pub rel_change: f64,
    pub wall_ms: f64,
}

/// Writes the trace with 12 significant digits per value.
pub fn write_trace_csv(trace: &[TraceRecord], path: &Path) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::arg("trace is empty"));
    }
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in trace {
        let f = |v: f64| format!("{v:.11e}");
        w.write_record([
            r.iter.to_string(),
            f(r.l1),
            f(r.l2),
            f(r.ttnn),
            f(r.lagrangian),
            f(r.primal_residual),
            f(r.rel_change),
            f(r.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let malformed = |detail: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let headers = r.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if headers.iter().ne(TRACE_HEADER) {
        return Err(malformed(format!("unexpected columns {headers:?}")));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()
        .map_err(|e| malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(seed: u64) -> Cube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Cube::from_fn(5, 7, 3, |_, _, _| rng.random_range(-10.0..10.0))
    }

    #[test]
    fn roundtrip_f64_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x.v1");
        let x = cube(1);
        write_cube(&x, &base, Dtype::F64).unwrap();
        assert!(dir.path().join("x.v1.json").exists() && dir.path().join("x.v1.raw").exists());
        let y = read_cube(&base).unwrap();
        assert!(x.as_slice().iter().zip(y.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn roundtrip_f32_is_quantization_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x");
        let x = cube(2);
        write_cube(&x, &base, Dtype::F32).unwrap();
        let y = read_cube(&base).unwrap();
        let bound = 10.0 * f32::EPSILON as f64 / 2.0;
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() <= bound * 1.0000001);
        }
        let (_, raw) = cube_paths(&base);
        assert_eq!(fs::metadata(raw).unwrap().len(), (x.len() * 4) as u64);
    }

    #[test]
    fn header_keys_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x");
        let x = cube(3);
        let mut h = CubeHeader::new(x.dims(), Dtype::F64);
        h.wavelengths_nm = Some(vec![450.0, 550.0, 650.0]);
        h.description = Some("test".into());
        write_cube_with_header(&x, &base, &h).unwrap();
        let text = fs::read_to_string(cube_paths(&base).0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["bands", "cols", "description", "dtype", "endianness", "order", "rows", "wavelengths_nm"]
        );
        assert_eq!(read_cube_with_header(&base).unwrap().1, h);
        let wrong = CubeHeader::new((1, 1, 1), Dtype::F64);
        assert!(write_cube_with_header(&x, &base, &wrong).is_err());
    }

    #[test]
    fn structured_read_errors() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x");
        assert!(matches!(read_cube(&base), Err(Error::MissingFile(_))));
        let x = cube(4);
        write_cube(&x, &base, Dtype::F64).unwrap();
        let (json, raw) = cube_paths(&base);

        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 3]).unwrap();
        match read_cube(&base) {
            Err(Error::LengthMismatch { expected, actual, .. }) => {
                assert_eq!((expected, actual), (bytes.len() as u64, bytes.len() as u64 - 3))
            }
            other => panic!("{other:?}"),
        }
        fs::remove_file(&raw).unwrap();
        assert!(matches!(read_cube(&base), Err(Error::MissingFile(_))));
        fs::write(&raw, &bytes).unwrap();

        let text = fs::read_to_string(&json).unwrap();
        fs::write(&json, text.replace("\"little\"", "\"big\"")).unwrap();
        assert!(matches!(read_cube(&base), Err(Error::Unsupported(_))));
        fs::write(&json, &text).unwrap();

        let mut nan = bytes.clone();
        nan[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&raw, nan).unwrap();
        match read_cube(&base) {
            Err(Error::Numerical { step, detail }) => assert!(step == "read_cube" && detail.contains("index 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_fuzz_never_panics() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("x");
        write_cube(&Cube::zeros(2, 2, 2), &base, Dtype::F64).unwrap();
        let (json, _) = cube_paths(&base);
        let good: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        let mutations: Vec<(&str, serde_json::Value)> = vec![
            ("rows", 0.into()),
            ("cols", 0.into()),
            ("bands", 0.into()),
            ("rows", (-1).into()),
            ("rows", "2".into()),
            ("dtype", "i16".into()),
            ("dtype", 3.into()),
            ("order", "bil".into()),
            ("order", "BSQ".into()),
            ("endianness", "big".into()),
            ("wavelengths_nm", vec![1.0].into()),
            ("extra", true.into()),
            ("rows", u64::MAX.into()),
        ];
        for (key, val) in mutations {
            let mut v = good.clone();
            v[key] = val;
            fs::write(&json, v.to_string()).unwrap();
            let err = read_cube(&base).unwrap_err();
            assert!(
                matches!(
                    err,
                    Error::MalformedHeader { .. } | Error::Unsupported(_) | Error::LengthMismatch { .. }
                ),
                "{key}: {err:?}"
            );
        }
        for key in ["rows", "dtype", "order", "endianness"] {
            let mut v = good.clone();
            v.as_object_mut().unwrap().remove(key);
            fs::write(&json, v.to_string()).unwrap();
            assert!(matches!(read_cube(&base), Err(Error::MalformedHeader { .. })), "{key}");
        }
        for text in ["", "{", "[]", "null", "{\"rows\":"] {
            fs::write(&json, text).unwrap();
            assert!(matches!(read_cube(&base), Err(Error::MalformedHeader { .. })));
        }
    }

    fn read_pnm(path: &Path) -> (String, usize, usize, Vec<u8>) {
        let bytes = fs::read(path).unwrap();
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            let start = pos;
            while !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
            pos += 1;
        }
        (
            fields[0].clone(),
            fields[1].parse().unwrap(),
            fields[2].parse().unwrap(),
            bytes[pos..].to_vec(),
        )
    }

    #[test]
    fn band_image_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let x = Cube::from_fn(3, 4, 2, |i, j, k| if k == 0 { (i * 4 + j) as f64 } else { 5.0 });
        export_band_image(&x, 0, &p).unwrap();
        let (magic, w, h, px) = read_pnm(&p);
        assert_eq!((magic.as_str(), w, h, px.len()), ("P5", 4, 3, 12));
        assert_eq!((px[0], px[11]), (0, 255));
        assert_eq!(px[5], (255.0 * 5.0 / 11.0_f64).round() as u8);
        export_band_image(&x, 1, &p).unwrap();
        assert!(read_pnm(&p).3.iter().all(|&v| v == 128));
        assert!(export_band_image(&x, 2, &p).is_err());

        let q = dir.path().join("c.ppm");
        export_false_color(&x, [0, 1, 0], &q).unwrap();
        let (magic, w, h, px) = read_pnm(&q);
        assert_eq!((magic.as_str(), w, h, px.len()), ("P6", 4, 3, 36));
        assert_eq!(&px[33..36], &[255, 128, 255]);
        assert!(export_false_color(&x, [0, 1, 3], &q).is_err());
    }

    fn record(i: usize, rng: &mut ChaCha8Rng) -> TraceRecord {
        TraceRecord {
            iter: i,
            l1: rng.random_range(0.0..1.0),
            l2: rng.random_range(0.0..1e-3),
            ttnn: rng.random_range(0.0..100.0),
            lagrangian: rng.random_range(-1.0..1.0) * 1e5,
            primal_residual: 1e-16,
            projected_residual: 0.0,
            rel_change: 0.5,
            alpha: 1.0,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn trace_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trace: Vec<_> = (1..=3).map(|i| record(i, &mut rng)).collect();
        write_trace_csv(&trace, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER.join(","));
        let back = read_trace_csv(&p).unwrap();
        for (a, b) in trace.iter().zip(&back) {
            assert_eq!(a.iter, b.iter);
            for (u, v) in [
                (a.l1, b.l1),
                (a.l2, b.l2),
                (a.ttnn, b.ttnn),
                (a.lagrangian, b.lagrangian),
                (a.primal_residual, b.primal_residual),
                (a.rel_change, b.rel_change),
            ] {
                assert!((u - v).abs() <= 1e-10 * u.abs().max(1e-300));
            }
        }
        assert!(write_trace_csv(&[], &p).is_err());
    }
}
