//! Transformed t-SVD, the tensor nuclear norm and its proximal operator.

use hsi_fusion::degradation::synthetic_tucker;
use hsi_fusion::tensor::frob_norm;
use hsi_fusion::transform::{build_transform, prox_ttnn, t_svd, ttnn, TransformKind};

fn main() -> hsi_fusion::Result<()> {
    let x = synthetic_tucker((12, 12, 8), (3, 3, 2), 1.0, 3)?;

    for kind in [TransformKind::Dft, TransformKind::Dct, TransformKind::DataSvd] {
        let t = build_transform(kind, x.bands(), Some(&x))?;
        let svd = t_svd(&x, &t)?;
        let back = svd.reconstruct(&t)?;
        println!(
            "{kind:?}: ttnn {:.4}  largest singular value {:.4}  reconstruction error {:.1e}",
            ttnn(&x, &t)?,
            svd.max_singular_value(),
            frob_norm(&(&back - &x))
        );
    }

    let t = build_transform(TransformKind::DataSvd, x.bands(), Some(&x))?;
    for lambda in [0.0, 0.1, 1.0, 10.0] {
        let p = prox_ttnn(&x, lambda, &t)?;
        println!(
            "lambda {lambda:>5}: ttnn {:.4}  distance to input {:.4}",
            ttnn(&p, &t)?,
            frob_norm(&(&p - &x))
        );
    }
    Ok(())
}
