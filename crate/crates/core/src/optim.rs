//! Projection operators and matrix-free spectral-norm estimation.

use crate::error::{Error, Result};
use crate::tensor::{Cube, Mat};

/// Euclidean projection onto the unit simplex `{b : bᵢ ≥ 0, Σ bᵢ = 1}`.
///
/// Sort-based thresholding: find the largest `ρ` with
/// `u_ρ > (Σ_{i≤ρ} u_i − 1)/ρ` over the descending sort `u`, then shift
/// and clip.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::arg("cannot project an empty vector onto the simplex"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("simplex projection input must be finite"));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Elementwise `max(x, 0)`.
pub fn project_nonneg(x: &Cube) -> Cube {
    x.map(|v| v.max(0.0))
}

/// True when `b` lies in the unit simplex up to `tol`.
pub fn in_simplex(b: &[f64], tol: f64) -> bool {
    !b.is_empty() && b.iter().all(|&x| x >= -tol) && (b.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// A real linear map given by its action and the action of its adjoint.
pub trait LinearMap {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Closure-backed [`LinearMap`].
pub struct LinearMapHandle<F, G> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub forward: F,
    pub adjoint: G,
}

impl<F, G> LinearMapHandle<F, G>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(in_dim: usize, out_dim: usize, forward: F, adjoint: G) -> Self {
        LinearMapHandle {
            in_dim,
            out_dim,
            forward,
            adjoint,
        }
    }
}

impl<F, G> LinearMap for LinearMapHandle<F, G>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (self.forward)(x)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        (self.adjoint)(y)
    }
}

impl LinearMap for Mat {
    fn in_dim(&self) -> usize {
        self.cols()
    }

    fn out_dim(&self) -> usize {
        self.rows()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for i in 0..self.rows() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.get(i, j) * y[i];
            }
        }
        out
    }
}

/// The transpose of a map, swapping forward and adjoint.
pub struct Adjoint<'a, A: LinearMap + ?Sized>(pub &'a A);

impl<A: LinearMap + ?Sized> LinearMap for Adjoint<'_, A> {
    fn in_dim(&self) -> usize {
        self.0.out_dim()
    }

    fn out_dim(&self) -> usize {
        self.0.in_dim()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.0.adjoint(x)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.0.forward(y)
    }
}

/// Result of [`operator_norm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    /// Estimated largest singular value.
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iter` was reached before the tolerance was met; the
    /// value is then the best (lower-bound) estimate found.
    pub converged: bool,
}

pub const DEFAULT_NORM_TOL: f64 = 1e-6;
pub const DEFAULT_NORM_MAX_ITER: usize = 100;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest singular value of `a` by power iteration on `AᵀA`.
///
/// Starts from the normalized all-ones vector, so the result is
/// deterministic. Stops when the eigen-residual `‖AᵀAv − λv‖` falls below
/// `tol·λ`.
pub fn operator_norm(a: &dyn LinearMap, tol: f64, max_iter: usize) -> NormEstimate {
    let n = a.in_dim();
    if n == 0 || a.out_dim() == 0 {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for it in 1..=max_iter.max(1) {
        let av = a.forward(&v);
        let w = a.adjoint(&av);
        let rayleigh = dot(&av, &av);
        let wn = norm(&w);
        if wn == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        lambda = rayleigh.max(lambda);
        let residual: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - rayleigh * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * rayleigh {
            return NormEstimate {
                value: lambda.sqrt(),
                iterations: it,
                converged: true,
            };
        }
        v = w.iter().map(|x| x / wn).collect();
    }
    NormEstimate {
        value: lambda.sqrt(),
        iterations: max_iter,
        converged: false,
    }
}

/// `max |⟨Au, v⟩ − ⟨u, Aᵀv⟩|` relative to `‖Au‖‖v‖` over a few
/// deterministic probes; used to validate hand-written adjoints.
pub fn adjoint_mismatch(a: &dyn LinearMap, probes: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let u: Vec<f64> = (0..a.in_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..a.out_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let au = a.forward(&u);
        let atv = a.adjoint(&v);
        let scale = (norm(&au) * norm(&v)).max(norm(&u) * norm(&atv)).max(f64::MIN_POSITIVE);
        worst = worst.max((dot(&au, &v) - dot(&u, &atv)).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact projection by enumerating supports: for each support `S` the
    /// KKT point is `v_S − (Σ v_S − 1)/|S|`; keep the feasible closest one.
    fn simplex_oracle(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let shift = (idx.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / idx.len() as f64;
            let mut w = vec![0.0; n];
            let mut ok = true;
            for &i in &idx {
                w[i] = v[i] - shift;
                if w[i] < -1e-15 {
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            let d: f64 = w.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, w));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn simplex_fixed_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        let p = project_simplex(&[0.3, 0.3]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(project_simplex(&[]).is_err());
        assert_eq!(project_simplex(&[-3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn simplex_matches_support_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.5)).collect();
            let p = project_simplex(&v).unwrap();
            let o = simplex_oracle(&v);
            for (a, b) in p.iter().zip(&o) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!(in_simplex(&p, 1e-12));
        }
    }

    #[test]
    fn nonneg_projection() {
        let x = Cube::from_vec((1, 2, 2), vec![1.0, -2.0, 0.0, 3.0]).unwrap();
        assert_eq!(project_nonneg(&x).as_slice(), &[1.0, 0.0, 0.0, 3.0]);
        let pos = Cube::filled((2, 2, 2), 0.5);
        assert_eq!(project_nonneg(&pos), pos);
        let neg = Cube::filled((2, 2, 2), -0.5);
        assert_eq!(project_nonneg(&neg), Cube::zeros(2, 2, 2));
    }

    #[test]
    fn operator_norm_simple_maps() {
        let eye = Mat::identity(5);
        let e = operator_norm(&eye, DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER);
        assert!((e.value - 1.0).abs() < 1e-12 && e.converged);
        let d = Mat::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let e = operator_norm(&d, DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER);
        assert!((e.value - 3.0).abs() < 1e-6);
        assert_eq!(operator_norm(&Mat::zeros(3, 3), 1e-6, 10).value, 0.0);
    }

    #[test]
    fn operator_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Mat::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let oracle = a.to_dmatrix().singular_values().max();
        let e = operator_norm(&a, DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER);
        assert!(((e.value - oracle) / oracle).abs() < 1e-6, "{} vs {}", e.value, oracle);
        let t = operator_norm(&Adjoint(&a), DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER);
        assert!(((t.value - e.value) / e.value).abs() < 1e-6);
    }

    #[test]
    fn nonconvergence_is_flagged() {
        // Two equal top singular values with a nearby third slow the iteration.
        let d = Mat::from_fn(3, 3, |i, j| if i == j { [1.0, 0.999999, 0.5][i] } else { 0.0 });
        let e = operator_norm(&d, 1e-14, 3);
        assert!(!e.converged);
        assert!(e.value <= 1.0 + 1e-12);
    }

    #[test]
    fn closure_map_adjoint_consistency() {
        let a = Mat::from_fn(4, 6, |i, j| (i * 6 + j) as f64 * 0.1 - 1.0);
        let h = LinearMapHandle::new(6, 4, |x: &[f64]| a.forward(x), |y: &[f64]| a.adjoint(y));
        assert!(adjoint_mismatch(&h, 5, 3) < 1e-12);
    }
}
