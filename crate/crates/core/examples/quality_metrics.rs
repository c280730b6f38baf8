//! Full-reference and no-reference quality indices.

use hsi_fusion::degradation::{add_noise, synthetic_tucker};
use hsi_fusion::init::bicubic_downsample;
use hsi_fusion::metrics::{full_reference, no_reference, FullReferenceOptions};
use hsi_fusion::tensor::Mat;

fn main() -> hsi_fusion::Result<()> {
    let truth = synthetic_tucker((32, 32, 8), (4, 4, 3), 2.0, 5)?;
    let opts = FullReferenceOptions {
        window: 16,
        stride: 16,
        ..Default::default()
    };

    println!("{:>6} {:>9} {:>8} {:>7} {:>7}", "snr", "psnr", "sam", "uiqi", "ergas");
    for snr in [f64::INFINITY, 40.0, 30.0, 20.0] {
        let x = add_noise(&truth, snr, 1)?;
        let r = full_reference(&x, &truth, &opts)?;
        println!(
            "{snr:>6} {:>9.3} {:>8.4} {:>7.4} {:>7.4}",
            r.psnr_db.unwrap(),
            r.sam_rad.unwrap(),
            r.uiqi.unwrap(),
            r.ergas.unwrap()
        );
    }

    // Pansharpening-style scoring: pan is the band mean of the truth.
    let pan = Mat::from_fn(32, 32, |i, j| (0..8).map(|k| truth.get(i, j, k)).sum::<f64>() / 8.0);
    let h = bicubic_downsample(&truth, 4, 2)?;
    let nr = no_reference(&truth, &h, &pan, 4, 16, 16)?;
    println!("D_lambda {:.4}  D_s {:.4}  QNR {:.4}", nr.d_lambda, nr.d_s, nr.qnr);
    Ok(())
}
