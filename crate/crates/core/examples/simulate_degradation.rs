//! Builds a spatial blur/decimation operator and a spectral response, then
//! simulates a noisy HSI/MSI pair from a synthetic truth.

use hsi_fusion::degradation::{
    even_windows, gaussian_kernel, simulate_pair, synthetic_tucker, SpatialOperator, SpectralResponse,
};

fn main() -> hsi_fusion::Result<()> {
    let truth = synthetic_tucker((32, 32, 16), (4, 4, 3), 2.0, 7)?;
    let op = SpatialOperator::centered(32, 4, gaussian_kernel(32, 1.0, 9)?)?;
    let windows = even_windows(16, 4)?;
    let sr = SpectralResponse::uniform(16, &windows)?;

    println!("kernel taps (index 0 is the center): {:?}", &op.kernel[..5]);
    println!("windows: {windows:?}");

    for snr in [f64::INFINITY, 35.0, 25.0] {
        let (h, m) = simulate_pair(&truth, &op, &op, &sr, snr, snr + 5.0, 1)?;
        let (lo, hi) = h.min_max();
        println!("snr {snr:>4}: hsi {:?} in [{lo:.3}, {hi:.3}], msi {:?}", h.dims(), m.dims());
    }
    Ok(())
}
