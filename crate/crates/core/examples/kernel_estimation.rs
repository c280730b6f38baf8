//! Recovers a blur kernel with everything else held at the truth, by
//! repeating the projected-gradient kernel update.

use hsi_fusion::degradation::{
    even_windows, gaussian_kernel, simulate_pair, synthetic_tucker, SpatialOperator, SpectralResponse,
};
use hsi_fusion::init::init_kernels;
use hsi_fusion::solver::{update_b_spatial, update_b_spectral, FusionConfig, SolverState};
use hsi_fusion::tensor::Mode;
use hsi_fusion::transform::{build_transform, TransformKind};

fn main() -> hsi_fusion::Result<()> {
    let truth = synthetic_tucker((32, 32, 16), (4, 4, 3), 2.0, 11)?;
    let true_op = SpatialOperator::centered(32, 4, gaussian_kernel(32, 1.5, 9)?)?;
    let windows = even_windows(16, 4)?;
    let true_sr = SpectralResponse::uniform(16, &windows)?;
    let (h, m) = simulate_pair(&truth, &true_op, &true_op, &true_sr, f64::INFINITY, f64::INFINITY, 0)?;

    let cfg = FusionConfig::default();
    let (op1, op2, sr) = init_kernels(32, 32, 4, &windows, 16, &cfg.init)?;
    let t = build_transform(TransformKind::Identity, 16, None)?;
    let mut state = SolverState::new(truth.clone(), op1, op2, sr, t, cfg.mu)?;

    let err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    println!("start: kernel error {:.4}", err(&state.op1.kernel, &true_op.kernel));
    for round in 1..=400 {
        let upd = update_b_spatial(&state, &h, Mode::Rows, &cfg)?;
        state.op1 = upd.op;
        state.op2 = update_b_spatial(&state, &h, Mode::Cols, &cfg)?.op;
        state.sr = update_b_spectral(&state, &m, &cfg)?;
        if round % 100 == 0 {
            println!(
                "round {round}: objective {:.3e}  kernel error {:.4}",
                upd.objective.last().copied().unwrap_or(f64::NAN),
                err(&state.op1.kernel, &true_op.kernel)
            );
        }
    }
    let w = &state.sr.bands[0].weights;
    println!("spectral weights of band 1: {w:.3?}");
    Ok(())
}
