//! Writes a cube as JSON header + raw samples, reads it back, and exports a
//! band and a false-color composite.

use hsi_fusion::degradation::synthetic_tucker;
use hsi_fusion::io::{
    cube_paths, export_band_image, export_false_color, read_cube_with_header, write_cube_with_header, CubeHeader,
    Dtype,
};

fn main() -> hsi_fusion::Result<()> {
    let dir = std::env::temp_dir().join("hsi-fusion-cube-io");
    std::fs::create_dir_all(&dir).map_err(|e| hsi_fusion::Error::Io { path: dir.clone(), source: e })?;
    let x = synthetic_tucker((32, 32, 16), (4, 4, 3), 2.0, 1)?;

    let mut header = CubeHeader::new(x.dims(), Dtype::F32);
    header.wavelengths_nm = Some((0..16).map(|k| 400.0 + 20.0 * k as f64).collect());
    header.description = Some("synthetic".into());
    let base = dir.join("cube");
    write_cube_with_header(&x, &base, &header)?;
    let (json, raw) = cube_paths(&base);
    println!("{}:\n{}", json.display(), std::fs::read_to_string(&json).unwrap());
    println!("{}: {} bytes", raw.display(), std::fs::metadata(&raw).unwrap().len());

    let (y, back) = read_cube_with_header(&base)?;
    let err = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max f32 roundtrip error {err:.2e}, header preserved: {}", back == header);

    export_band_image(&x, 0, &dir.join("band1.pgm"))?;
    export_false_color(&x, [12, 7, 2], &dir.join("rgb.ppm"))?;
    println!("images written to {}", dir.display());
    Ok(())
}
