//! Partially linearized ADMM with Moreau smoothing for blind fusion.
//!
//! One outer iteration runs `𝒮 → (𝒴, 𝒵) → Λ → b₁ → b₂ → {b₃ⁱ}` in
//! Gauss–Seidel order. The 𝒮 step is a linearized prox step on the TTNN,
//! the 𝒵 step is exact, and the kernel and weight steps are projected
//! gradient on simplex-constrained least squares.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::degradation::{spatial_adjoint, spatial_degrade, BandWindow, SpatialOperator, SpectralResponse};
use crate::error::{Error, Result};
use crate::init::{init_hrhsi, init_kernels, InitConfig};
use crate::optim::{operator_norm, project_nonneg, project_simplex, LinearMap, LinearMapHandle};
use crate::tensor::{frob_norm, inner, Cube, Mat, Mode};
use crate::transform::{build_transform, prox_ttnn, ttnn, Transform, TransformKind};

/// How the prox coefficient `α` of the 𝒮 step is derived from
/// `α̃ = ‖P₁ᵀP₁‖‖P₂ᵀP₂‖ + λ₁‖P₃ᵀP₃‖`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeRule {
    /// `α = max{1, α̃}`, which dominates the gradient's Lipschitz constant.
    Theory,
    /// `α = 1/max{1, α̃}`.
    Inverse,
}

impl FromStr for StepsizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "theory" => Ok(StepsizeRule::Theory),
            "inverse" | "literal" => Ok(StepsizeRule::Inverse),
            other => Err(Error::arg(format!(
                "unknown stepsize rule '{other}' (expected theory or inverse)"
            ))),
        }
    }
}

/// Which residual drives the multiplier update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierResidual {
    /// `Λ ← Λ + β(𝒮 − 𝒴)`.
    Projected,
    /// `Λ ← Λ + β(𝒮 − 𝒵)`.
    Consensus,
}

impl FromStr for MultiplierResidual {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "projected" | "y" => Ok(MultiplierResidual::Projected),
            "consensus" | "z" => Ok(MultiplierResidual::Consensus),
            other => Err(Error::arg(format!(
                "unknown multiplier residual '{other}' (expected projected or consensus)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight of the multispectral data term.
    pub lambda1: f64,
    /// Weight of the TTNN.
    pub lambda2: f64,
    /// Penalty parameter.
    pub beta: f64,
    /// Moreau smoothing parameter.
    pub mu: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub stepsize_rule: StepsizeRule,
    pub transform: TransformKind,
    /// Projected-gradient steps per kernel/weight update.
    pub inner_pg_steps: usize,
    /// Recorded for provenance; the solver itself draws no random numbers.
    pub seed: u64,
    pub multiplier: MultiplierResidual,
    /// When false, the kernels and spectral weights stay at their initial
    /// values.
    pub update_operators: bool,
    /// Reject `βμ ≤ √2` instead of warning.
    pub certify_descent: bool,
    pub init: InitConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda1: 10.0,
            lambda2: 0.1,
            beta: 100.0,
            mu: 0.05,
            max_iter: 100,
            rel_tol: 1e-4,
            stepsize_rule: StepsizeRule::Theory,
            transform: TransformKind::DataSvd,
            inner_pg_steps: 5,
            seed: 0,
            multiplier: MultiplierResidual::Projected,
            update_operators: true,
            certify_descent: false,
            init: InitConfig::default(),
        }
    }
}

impl FusionConfig {
    /// Checks positivity and returns warnings for conditions that void the
    /// descent guarantee.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("beta", self.beta),
            ("mu", self.mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("lambda2", self.lambda2), ("rel_tol", self.rel_tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be ≥ 0 and finite, got {v}")));
            }
        }
        self.init.validate()?;
        let mut warnings = Vec::new();
        if self.beta * self.mu <= std::f64::consts::SQRT_2 {
            let msg = format!(
                "beta·mu = {} ≤ √2: the augmented Lagrangian is not guaranteed to decrease",
                self.beta * self.mu
            );
            if self.certify_descent {
                return Err(Error::arg(msg));
            }
            warnings.push(msg);
        }
        if self.stepsize_rule == StepsizeRule::Inverse && self.certify_descent {
            return Err(Error::arg("descent certification requires stepsize_rule = theory"));
        }
        Ok(warnings)
    }
}

/// One row of the iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub l1: f64,
    pub l2: f64,
    pub ttnn: f64,
    pub lagrangian: f64,
    /// `‖𝒮 − 𝒵‖_F`.
    pub primal_residual: f64,
    /// `‖𝒮 − 𝒴‖_F`.
    pub projected_residual: f64,
    /// `‖𝒮ᵗ⁺¹ − 𝒮ᵗ‖_F / ‖𝒮ᵗ‖_F`.
    pub rel_change: f64,
    pub alpha: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub s: Cube,
    pub z: Cube,
    pub y: Cube,
    pub lambda_t: Cube,
    pub op1: SpatialOperator,
    pub op2: SpatialOperator,
    pub sr: SpectralResponse,
    pub transform: Transform,
    pub iter: usize,
    pub trace: Vec<TraceRecord>,
    /// `L_{β,μ}` at the starting point.
    pub initial_lagrangian: f64,
    /// Iterations at which `L_{β,μ}` rose by more than the slack.
    pub descent_violations: Vec<usize>,
    /// Kernel updates skipped because the Lipschitz estimate was zero.
    pub stalls: usize,
    pub warnings: Vec<String>,
}

/// Relative slack allowed when checking that `L_{β,μ}` does not increase.
pub const DESCENT_SLACK: f64 = 1e-8;

impl SolverState {
    /// Starts from `s0` with `𝒵⁰ = 𝒮⁰`, `𝒴⁰ = P_Ω(𝒮⁰)` and `Λ⁰` equal to
    /// the envelope gradient `(𝒵⁰ − P_Ω(𝒵⁰))/μ`.
    pub fn new(
        s0: Cube,
        op1: SpatialOperator,
        op2: SpatialOperator,
        sr: SpectralResponse,
        transform: Transform,
        mu: f64,
    ) -> Result<Self> {
        if op1.n != s0.rows() || op2.n != s0.cols() || sr.n_bands != s0.bands() || transform.n3() != s0.bands() {
            return Err(Error::arg(format!(
                "state operators do not match a {:?} cube",
                s0.dims()
            )));
        }
        let y = project_nonneg(&s0);
        let lambda_t = s0.map(|v| v.min(0.0) / mu);
        Ok(SolverState {
            z: s0.clone(),
            s: s0,
            y,
            lambda_t,
            op1,
            op2,
            sr,
            transform,
            iter: 0,
            trace: Vec::new(),
            initial_lagrangian: f64::NAN,
            descent_violations: Vec::new(),
            stalls: 0,
            warnings: Vec::new(),
        })
    }

    /// True when every recorded step kept `L_{β,μ}` nonincreasing.
    pub fn descent_holds(&self) -> bool {
        self.descent_violations.is_empty()
    }
}

fn check_observations(state: &SolverState, h: &Cube, m: &Cube) -> Result<()> {
    let want_h = (state.op1.out_len(), state.op2.out_len(), state.s.bands());
    if h.dims() != want_h {
        return Err(Error::arg(format!("HSI is {:?}, operators produce {:?}", h.dims(), want_h)));
    }
    let want_m = (state.s.rows(), state.s.cols(), state.sr.out_bands());
    if m.dims() != want_m {
        return Err(Error::arg(format!("MSI is {:?}, operators produce {:?}", m.dims(), want_m)));
    }
    Ok(())
}

/// `(L₁, L₂)` with `L₁ = ½‖H − 𝒮×₁P₁×₂P₂‖²` and `L₂ = (λ₁/2)‖M − 𝒮×₃P₃‖²`.
pub fn data_terms(state: &SolverState, h: &Cube, m: &Cube, lambda1: f64) -> Result<(f64, f64)> {
    let rh = &spatial_degrade(&state.s, &state.op1, &state.op2)? - h;
    let rm = &state.sr.apply(&state.s)? - m;
    Ok((0.5 * frob_norm(&rh).powi(2), 0.5 * lambda1 * frob_norm(&rm).powi(2)))
}

/// `∇_𝒮 (L₁ + L₂)`, applied matrix-free through the operator adjoints.
pub fn grad_s(state: &SolverState, h: &Cube, m: &Cube, lambda1: f64) -> Result<Cube> {
    check_observations(state, h, m)?;
    let rh = &spatial_degrade(&state.s, &state.op1, &state.op2)? - h;
    let gh = spatial_adjoint(&rh, &state.op1, &state.op2)?;
    if lambda1 == 0.0 {
        return Ok(gh);
    }
    let rm = &state.sr.apply(&state.s)? - m;
    let gm = state.sr.adjoint(&rm)?;
    gh.lincomb(1.0, &gm, lambda1)
}

const NORM_TOL: f64 = 1e-10;
const NORM_MAX_ITER: usize = 1000;

/// `‖Pᵀ P‖₂ = σmax(P)²` for one spatial operator.
pub fn spatial_norm_sq(op: &SpatialOperator) -> f64 {
    let c = op.circulant();
    let mut full = vec![0.0; op.n];
    let map = LinearMapHandle::new(
        op.n,
        op.out_len(),
        |x: &[f64]| {
            let mut full = vec![0.0; op.n];
            let mut out = vec![0.0; op.out_len()];
            c.apply(x, false, &mut full);
            op.subsample(&full, &mut out);
            out
        },
        |y: &[f64]| {
            let mut up = vec![0.0; op.n];
            let mut out = vec![0.0; op.n];
            op.upsample(y, &mut up);
            c.apply(&up, true, &mut out);
            out
        },
    );
    full.clear();
    operator_norm(&map, NORM_TOL, NORM_MAX_ITER).value.powi(2)
}

/// `‖P₃ᵀ P₃‖₂`.
pub fn spectral_norm_sq(sr: &SpectralResponse) -> f64 {
    operator_norm(&sr.matrix(), NORM_TOL, NORM_MAX_ITER).value.powi(2)
}

/// `α̃ = ‖P₁ᵀP₁‖‖P₂ᵀP₂‖ + λ₁‖P₃ᵀP₃‖`.
pub fn alpha_tilde(state: &SolverState, lambda1: f64) -> f64 {
    spatial_norm_sq(&state.op1) * spatial_norm_sq(&state.op2) + lambda1 * spectral_norm_sq(&state.sr)
}

/// Prox coefficient for the 𝒮 step under `rule`.
pub fn step_alpha(state: &SolverState, lambda1: f64, rule: StepsizeRule) -> f64 {
    let a = alpha_tilde(state, lambda1).max(1.0);
    match rule {
        StepsizeRule::Theory => a,
        StepsizeRule::Inverse => 1.0 / a,
    }
}

/// Linearized prox step:
/// `𝒮ᵗ⁺¹ = prox_{λ₂/(α+β)·TTNN}( α/(α+β)(𝒮 − ∇L/α) + β/(α+β)(𝒵 − Λ/β) )`.
pub fn update_s(state: &SolverState, h: &Cube, m: &Cube, cfg: &FusionConfig, alpha: f64) -> Result<Cube> {
    let g = grad_s(state, h, m, cfg.lambda1)?;
    let denom = alpha + cfg.beta;
    let s_tilde = state.s.lincomb(alpha / denom, &g, -1.0 / denom)?;
    let z_tilde = state.z.lincomb(cfg.beta / denom, &state.lambda_t, -1.0 / denom)?;
    let arg = &s_tilde + &z_tilde;
    prox_ttnn(&arg, cfg.lambda2 / denom, &state.transform)
}

/// Closed-form 𝒵 step: `𝒴 = P_Ω(𝒮 + Λ/β)`,
/// `𝒵 = μ/(1+μβ)·(𝒴/μ + Λ + β𝒮)`.
pub fn update_z(state: &SolverState, cfg: &FusionConfig) -> Result<(Cube, Cube)> {
    let (beta, mu) = (cfg.beta, cfg.mu);
    let y = project_nonneg(&state.s.lincomb(1.0, &state.lambda_t, 1.0 / beta)?);
    let c = mu / (1.0 + mu * beta);
    let mut z = state.lambda_t.lincomb(c, &state.s, c * beta)?;
    for (zi, &yi) in z.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *zi += c / mu * yi;
    }
    Ok((y, z))
}

/// `Λ + β(𝒮 − 𝒴)` or `Λ + β(𝒮 − 𝒵)` depending on `cfg.multiplier`.
pub fn update_multiplier(state: &SolverState, cfg: &FusionConfig) -> Result<Cube> {
    let other = match cfg.multiplier {
        MultiplierResidual::Projected => &state.y,
        MultiplierResidual::Consensus => &state.z,
    };
    state.s.check_same(other)?;
    let b = cfg.beta;
    let mut out = state.lambda_t.clone();
    for ((o, &s), &r) in out.as_mut_slice().iter_mut().zip(state.s.as_slice()).zip(other.as_slice()) {
        *o += b * (s - r);
    }
    Ok(out)
}

/// Simplex-constrained kernel least squares
/// `f(b) = ½ Σ_c ‖D (b ⊛ a_c) − w_c‖²` over the mode fibers `a_c` of `A`
/// and `w_c` of the target.
pub struct KernelProblem<'a> {
    op: &'a SpatialOperator,
    a_hat: Vec<Vec<Complex64>>,
    targets: Vec<Vec<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl<'a> KernelProblem<'a> {
    /// `a` has length `op.n` along `mode`; `target` has `op.out_len()`.
    pub fn new(op: &'a SpatialOperator, a: &Cube, target: &Cube, mode: Mode) -> Result<Self> {
        if a.dim(mode) != op.n || target.dim(mode) != op.out_len() {
            return Err(Error::arg(format!(
                "kernel problem along mode {}: lengths {} and {} do not match operator ({}, {})",
                mode.number(),
                a.dim(mode),
                target.dim(mode),
                op.n,
                op.out_len()
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(op.n);
        let inv = planner.plan_fft_inverse(op.n);
        let a_hat = a
            .fibers(mode)
            .into_iter()
            .map(|f| {
                let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fwd.process(&mut buf);
                buf
            })
            .collect::<Vec<_>>();
        let targets = target.fibers(mode);
        if targets.len() != a_hat.len() {
            return Err(Error::arg("kernel problem: fiber counts differ"));
        }
        Ok(KernelProblem {
            op,
            a_hat,
            targets,
            fwd,
            inv,
        })
    }

    fn spectrum(&self, b: &[f64]) -> Vec<Complex64> {
        let mut bh: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut bh);
        bh
    }

    /// `D (b ⊛ a_c)` for every fiber.
    fn predict(&self, b: &[f64]) -> Vec<Vec<f64>> {
        let bh = self.spectrum(b);
        let n = self.op.n as f64;
        let mut full = vec![0.0; self.op.n];
        self.a_hat
            .iter()
            .map(|ah| {
                let mut buf: Vec<Complex64> = ah.iter().zip(&bh).map(|(x, y)| x * y).collect();
                self.inv.process(&mut buf);
                for (f, v) in full.iter_mut().zip(&buf) {
                    *f = v.re / n;
                }
                let mut out = vec![0.0; self.op.out_len()];
                self.op.subsample(&full, &mut out);
                out
            })
            .collect()
    }

    /// `Σ_c a_c ⋆ Dᵀ r_c` (circular cross-correlation).
    fn correlate(&self, residuals: &[Vec<f64>]) -> Vec<f64> {
        let n = self.op.n;
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        let mut up = vec![0.0; n];
        for (ah, r) in self.a_hat.iter().zip(residuals) {
            self.op.upsample(r, &mut up);
            let mut buf: Vec<Complex64> = up.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            self.fwd.process(&mut buf);
            for ((a, u), x) in acc.iter_mut().zip(&buf).zip(ah) {
                *a += x.conj() * u;
            }
        }
        self.inv.process(&mut acc);
        acc.iter().map(|v| v.re / n as f64).collect()
    }

    fn residuals(&self, b: &[f64]) -> Vec<Vec<f64>> {
        let mut pred = self.predict(b);
        for (p, t) in pred.iter_mut().zip(&self.targets) {
            for (x, y) in p.iter_mut().zip(t) {
                *x -= y;
            }
        }
        pred
    }

    pub fn objective(&self, b: &[f64]) -> f64 {
        0.5 * self.residuals(b).iter().flatten().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, b: &[f64]) -> Vec<f64> {
        self.correlate(&self.residuals(b))
    }

    /// Lipschitz constant of the gradient, `σmax(J)²` for `J: b ↦ D(b ⊛ a_c)`.
    pub fn lipschitz(&self) -> f64 {
        operator_norm(self, crate::optim::DEFAULT_NORM_TOL, crate::optim::DEFAULT_NORM_MAX_ITER)
            .value
            .powi(2)
    }
}

impl LinearMap for KernelProblem<'_> {
    fn in_dim(&self) -> usize {
        self.op.n
    }

    fn out_dim(&self) -> usize {
        self.op.out_len() * self.a_hat.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.predict(x).concat()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let chunks: Vec<Vec<f64>> = y.chunks(self.op.out_len()).map(|c| c.to_vec()).collect();
        self.correlate(&chunks)
    }
}

/// Outcome of a kernel update.
#[derive(Clone, Debug)]
pub struct KernelUpdate {
    pub op: SpatialOperator,
    /// Objective before the first step and after each step.
    pub objective: Vec<f64>,
    pub lipschitz: f64,
    pub stalled: bool,
}

/// Projected gradient on the blur kernel of `mode` (1 or 2), holding the
/// other operator fixed. Mode 1 uses `𝒮 ×₂ P₂`, mode 2 uses `𝒮 ×₁ P₁`.
pub fn update_b_spatial(state: &SolverState, h: &Cube, mode: Mode, cfg: &FusionConfig) -> Result<KernelUpdate> {
    let (op, a) = match mode {
        Mode::Rows => (&state.op1, state.op2.apply_mode(&state.s, Mode::Cols)?),
        Mode::Cols => (&state.op2, state.op1.apply_mode(&state.s, Mode::Rows)?),
        Mode::Bands => return Err(Error::arg("spatial kernels exist for modes 1 and 2 only")),
    };
    let problem = KernelProblem::new(op, &a, h, mode)?;
    let lipschitz = problem.lipschitz();
    let mut b = op.kernel.clone();
    let mut objective = vec![problem.objective(&b)];
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Ok(KernelUpdate {
            op: op.clone(),
            objective,
            lipschitz,
            stalled: true,
        });
    }
    let tau = 1.0 / lipschitz;
    for _ in 0..cfg.inner_pg_steps {
        let g = problem.gradient(&b);
        let step: Vec<f64> = b.iter().zip(&g).map(|(x, gi)| x - tau * gi).collect();
        b = project_simplex(&step)?;
        objective.push(problem.objective(&b));
    }
    let mut new_op = op.clone();
    new_op.kernel = b;
    Ok(KernelUpdate {
        op: new_op,
        objective,
        lipschitz,
        stalled: false,
    })
}

/// Per-band quadratic `g(b) = ‖T b − mᵢ‖²` in Gram form.
struct BandProblem {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    target_sq: f64,
}

impl BandProblem {
    fn new(s: &Cube, window: &BandWindow, target: &[f64]) -> Self {
        let k = window.len();
        let cols: Vec<&[f64]> = (0..k).map(|j| s.band(window.start() + j)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let gram = DMatrix::from_fn(k, k, |p, q| dot(cols[p], cols[q]));
        let rhs = DVector::from_fn(k, |p, _| dot(cols[p], target));
        BandProblem {
            gram,
            rhs,
            target_sq: dot(target, target),
        }
    }

    fn objective(&self, b: &DVector<f64>) -> f64 {
        (b.dot(&(&self.gram * b)) - 2.0 * self.rhs.dot(b) + self.target_sq).max(0.0)
    }

    fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        (&self.gram * b - &self.rhs) * 2.0
    }

    fn lipschitz(&self) -> f64 {
        2.0 * SymmetricEigen::new(self.gram.clone()).eigenvalues.max()
    }
}

/// Objective of band `i`'s weight problem, `‖𝒮×₃D₃ⁱ b − Mⁱ‖²`.
pub fn spectral_band_objective(s: &Cube, m: &Cube, window: &BandWindow, i: usize, b: &[f64]) -> f64 {
    BandProblem::new(s, window, m.band(i)).objective(&DVector::from_column_slice(b))
}

/// Gradient of [`spectral_band_objective`].
pub fn spectral_band_gradient(s: &Cube, m: &Cube, window: &BandWindow, i: usize, b: &[f64]) -> Vec<f64> {
    BandProblem::new(s, window, m.band(i))
        .gradient(&DVector::from_column_slice(b))
        .iter()
        .copied()
        .collect()
}

/// Projected gradient on every band's spectral weights, bands independent.
pub fn update_b_spectral(state: &SolverState, m: &Cube, cfg: &FusionConfig) -> Result<SpectralResponse> {
    let mut sr = state.sr.clone();
    for (i, band) in sr.bands.iter_mut().enumerate() {
        if band.weights.len() == 1 {
            continue;
        }
        let p = BandProblem::new(&state.s, &band.window, m.band(i));
        let l = p.lipschitz();
        if !(l > 0.0 && l.is_finite()) {
            continue;
        }
        let mut b = DVector::from_vec(band.weights.clone());
        for _ in 0..cfg.inner_pg_steps {
            let step = &b - p.gradient(&b) / l;
            b = DVector::from_vec(project_simplex(step.as_slice())?);
        }
        band.weights = b.iter().copied().collect();
    }
    Ok(sr)
}

/// Individual terms of `L_{β,μ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianTerms {
    pub l1: f64,
    pub l2: f64,
    pub ttnn: f64,
    /// `(1/2μ)·dist²(𝒵, Ω)`.
    pub envelope: f64,
    /// `⟨Λ, 𝒮 − 𝒵⟩`.
    pub coupling: f64,
    /// `(β/2)‖𝒮 − 𝒵‖²`.
    pub penalty: f64,
    pub total: f64,
}

/// `L₁ + L₂ + λ₂·TTNN(𝒮) + (1/2μ)‖min(𝒵,0)‖² + ⟨Λ, 𝒮−𝒵⟩ + (β/2)‖𝒮−𝒵‖²`.
pub fn eval_lagrangian(state: &SolverState, h: &Cube, m: &Cube, cfg: &FusionConfig) -> Result<LagrangianTerms> {
    let (l1, l2) = data_terms(state, h, m, cfg.lambda1)?;
    let nuc = if cfg.lambda2 > 0.0 {
        ttnn(&state.s, &state.transform)?
    } else {
        0.0
    };
    let dist_sq: f64 = state.z.as_slice().iter().map(|v| v.min(0.0).powi(2)).sum();
    let diff = &state.s - &state.z;
    let coupling = inner(&state.lambda_t, &diff)?;
    let penalty = 0.5 * cfg.beta * frob_norm(&diff).powi(2);
    let envelope = dist_sq / (2.0 * cfg.mu);
    Ok(LagrangianTerms {
        l1,
        l2,
        ttnn: nuc,
        envelope,
        coupling,
        penalty,
        total: l1 + l2 + cfg.lambda2 * nuc + envelope + coupling + penalty,
    })
}

fn finite_or(step: &str, x: &Cube) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        let bad = x.as_slice().iter().filter(|v| !v.is_finite()).count();
        Err(Error::numerical(step, format!("{bad} non-finite entries")))
    }
}

/// Checks the observation pair against the factor and windows and returns
/// `(I, J, K)`, the high-resolution shape.
pub fn check_inputs(h: &Cube, m: &Cube, windows: &[BandWindow], factor: usize) -> Result<(usize, usize, usize)> {
    if factor == 0 {
        return Err(Error::arg("factor must be ≥ 1"));
    }
    if m.rows() != factor * h.rows() || m.cols() != factor * h.cols() {
        return Err(Error::arg(format!(
            "MSI spatial dims {}×{} must equal factor {factor} × HSI spatial dims {}×{}",
            m.rows(),
            m.cols(),
            h.rows(),
            h.cols()
        )));
    }
    if windows.len() != m.bands() {
        return Err(Error::arg(format!(
            "{} spectral windows for an MSI with {} bands",
            windows.len(),
            m.bands()
        )));
    }
    for w in windows {
        w.validate(h.bands())?;
    }
    Ok((m.rows(), m.cols(), h.bands()))
}

/// Builds the initial state: regression initializer, Gaussian operator
/// seeds, and the transform (data-SVD bases are taken from ℋ).
pub fn initial_state(h: &Cube, m: &Cube, windows: &[BandWindow], factor: usize, cfg: &FusionConfig) -> Result<SolverState> {
    let (n1, n2, k) = check_inputs(h, m, windows, factor)?;
    let s0 = init_hrhsi(h, m, factor, &cfg.init)?;
    let (op1, op2, sr) = init_kernels(n1, n2, factor, windows, k, &cfg.init)?;
    let transform = build_transform(cfg.transform, k, Some(h))?;
    SolverState::new(s0, op1, op2, sr, transform, cfg.mu)
}

/// Runs the full pipeline: initialization then [`fuse_from`].
pub fn fuse(h: &Cube, m: &Cube, windows: &[BandWindow], factor: usize, cfg: &FusionConfig) -> Result<(Cube, SolverState)> {
    let warnings = cfg.validate()?;
    let mut state = initial_state(h, m, windows, factor, cfg)?;
    state.warnings = warnings;
    fuse_from(h, m, state, cfg)
}

/// Iterates from an existing state until the relative change of 𝒮 drops to
/// `rel_tol` or `max_iter` iterations have run.
pub fn fuse_from(h: &Cube, m: &Cube, mut state: SolverState, cfg: &FusionConfig) -> Result<(Cube, SolverState)> {
    for w in cfg.validate()? {
        if !state.warnings.contains(&w) {
            state.warnings.push(w);
        }
    }
    check_observations(&state, h, m)?;
    let mut prev_l = eval_lagrangian(&state, h, m, cfg)?.total;
    if !prev_l.is_finite() {
        return Err(Error::numerical("eval_lagrangian", "non-finite objective at the starting point"));
    }
    if state.initial_lagrangian.is_nan() {
        state.initial_lagrangian = prev_l;
    }
    for _ in 0..cfg.max_iter {
        let start = Instant::now();
        let alpha = step_alpha(&state, cfg.lambda1, cfg.stepsize_rule);
        let s_new = update_s(&state, h, m, cfg, alpha)?;
        finite_or("update_s", &s_new)?;
        let s_old = std::mem::replace(&mut state.s, s_new);

        let (y, z) = update_z(&state, cfg)?;
        finite_or("update_z", &z)?;
        state.y = y;
        state.z = z;

        let lam = update_multiplier(&state, cfg)?;
        finite_or("update_multiplier", &lam)?;
        state.lambda_t = lam;

        if cfg.update_operators {
            let k1 = update_b_spatial(&state, h, Mode::Rows, cfg)?;
            if k1.stalled {
                state.stalls += 1;
            }
            state.op1 = k1.op;
            let k2 = update_b_spatial(&state, h, Mode::Cols, cfg)?;
            if k2.stalled {
                state.stalls += 1;
            }
            state.op2 = k2.op;
            if !state.op1.kernel.iter().chain(&state.op2.kernel).all(|v| v.is_finite()) {
                return Err(Error::numerical("update_b_spatial", "non-finite kernel"));
            }
            state.sr = update_b_spectral(&state, m, cfg)?;
            if !state.sr.bands.iter().flat_map(|b| &b.weights).all(|v| v.is_finite()) {
                return Err(Error::numerical("update_b_spectral", "non-finite weights"));
            }
        }

        state.iter += 1;
        let terms = eval_lagrangian(&state, h, m, cfg)?;
        if !terms.total.is_finite() {
            return Err(Error::numerical("eval_lagrangian", "non-finite objective"));
        }
        let old_norm = frob_norm(&s_old);
        let change = frob_norm(&(&state.s - &s_old));
        let rel_change = if old_norm > 0.0 { change / old_norm } else { change };
        if terms.total > prev_l + DESCENT_SLACK * prev_l.abs() {
            state.descent_violations.push(state.iter);
        }
        prev_l = terms.total;
        state.trace.push(TraceRecord {
            iter: state.iter,
            l1: terms.l1,
            l2: terms.l2,
            ttnn: terms.ttnn,
            lagrangian: terms.total,
            primal_residual: frob_norm(&(&state.s - &state.z)),
            projected_residual: frob_norm(&(&state.s - &state.y)),
            rel_change,
            alpha,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if rel_change <= cfg.rel_tol {
            break;
        }
    }
    Ok((state.s.clone(), state))
}

/// Dense `P` for a spatial operator, convenient for small checks.
pub fn dense_spatial(op: &SpatialOperator) -> Mat {
    op.matrix()
}
