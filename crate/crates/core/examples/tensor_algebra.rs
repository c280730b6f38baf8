//! Mode-n unfolding, folding and mode-n products on a small cube.

use hsi_fusion::tensor::{fold, frob_norm, mode_n_product, unfold, Cube, Mat, Mode};

fn main() -> hsi_fusion::Result<()> {
    let x = Cube::from_fn(4, 3, 2, |i, j, k| (100 * i + 10 * j + k) as f64);

    for mode in [Mode::Rows, Mode::Cols, Mode::Bands] {
        let m = unfold(&x, mode);
        println!("mode-{} unfolding: {}×{}", mode.number(), m.rows(), m.cols());
        assert_eq!(fold(&m, mode, x.dims())?, x);
    }

    // Average pairs of rows: a 2×4 matrix applied along mode 1.
    let avg = Mat::from_fn(2, 4, |r, c| if c / 2 == r { 0.5 } else { 0.0 });
    let y = mode_n_product(&x, &avg, Mode::Rows)?;
    println!("after mode-1 product: {:?}", y.dims());
    println!("y[1, 2, 1] = {}", y.get(1, 2, 1));

    // Products along different modes commute.
    let b = Mat::from_fn(3, 2, |r, c| (r + c) as f64);
    let ab = mode_n_product(&mode_n_product(&x, &avg, Mode::Rows)?, &b, Mode::Bands)?;
    let ba = mode_n_product(&mode_n_product(&x, &b, Mode::Bands)?, &avg, Mode::Rows)?;
    println!("commutation error: {:.2e}", frob_norm(&(&ab - &ba)));
    Ok(())
}
