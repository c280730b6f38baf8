//! Command-line front end: `simulate`, `fuse`, `eval` and `selftest`.
//!
//! Exit codes: 0 success, 2 usage or argument error, 3 data or format
//! error, 4 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::{
    circulant_matrix, even_windows, gaussian_kernel, simulate_pair, synthetic_tucker, windows_from_wavelengths,
    BandWindow, Circulant, SpatialOperator, SpectralResponse,
};
use crate::error::{Error, Result};
use crate::init::init_hrhsi;
use crate::io::{read_cube, read_cube_with_header, write_cube_with_header, write_trace_csv, CubeHeader, Dtype};
use crate::metrics::{full_reference, no_reference, r_squared, FullReferenceOptions, MetricReport, DEFAULT_UIQI_WINDOW};
use crate::optim::{in_simplex, project_simplex};
use crate::solver::{fuse, grad_s, initial_state, FusionConfig, MultiplierResidual, SolverState, StepsizeRule};
use crate::tensor::{frob_norm, inner, Cube, Mat, Mode};
use crate::transform::{build_transform, prox_ttnn, TransformKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) => EXIT_USAGE,
        Error::Numerical { .. } | Error::Solve(_) => EXIT_NUMERICAL,
        Error::Io { .. }
        | Error::MissingFile(_)
        | Error::MalformedHeader { .. }
        | Error::LengthMismatch { .. }
        | Error::Unsupported(_) => EXIT_DATA,
    }
}

#[derive(Parser, Debug)]
#[command(name = "hsi-fusion", version, about = "Blind hyperspectral/multispectral fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade a truth cube into an HSI/MSI pair.
    Simulate(SimulateArgs),
    /// Fuse an HSI/MSI pair.
    Fuse(FuseArgs),
    /// Score a fused cube.
    Eval(EvalArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Truth cube base path. Omit to use the built-in 32×32×16 synthetic cube.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    factor: usize,
    #[arg(long, default_value_t = 1.0)]
    kernel_sigma: f64,
    #[arg(long, default_value_t = 9)]
    kernel_taps: usize,
    /// JSON list of {"lo", "hi"} 1-based inclusive band ranges.
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Number of equal windows when no windows file is given.
    #[arg(long, default_value_t = 4)]
    n_windows: usize,
    /// HSI SNR in dB ("inf" for noiseless).
    #[arg(long, default_value_t = f64::INFINITY)]
    snr_h: f64,
    #[arg(long, default_value_t = f64::INFINITY)]
    snr_m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long)]
    hsi: PathBuf,
    #[arg(long)]
    msi: PathBuf,
    #[arg(long)]
    factor: usize,
    #[arg(long, conflicts_with = "windows_from_wavelengths")]
    windows: Option<PathBuf>,
    /// JSON list of [lo_nm, hi_nm] MSI band edges; needs HSI wavelengths.
    #[arg(long)]
    windows_from_wavelengths: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    stepsize_rule: Option<StepsizeRule>,
    #[arg(long)]
    transform: Option<TransformKind>,
    #[arg(long)]
    multiplier: Option<MultiplierResidual>,
    #[arg(long)]
    inner_pg_steps: Option<usize>,
    /// Keep the initial kernels and weights fixed.
    #[arg(long)]
    fixed_operators: bool,
    /// Fail instead of warning when beta·mu ≤ √2.
    #[arg(long)]
    certify_descent: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sweep the preset parameter grid instead of a single run.
    #[arg(long)]
    grid: bool,
    /// Record per-iteration wall time in the trace (otherwise written as 0).
    #[arg(long)]
    timing: bool,
    /// Optional truth cube, used only to report PSNR.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    fused: PathBuf,
    /// Reference cube for full-reference scoring.
    #[arg(long, conflicts_with_all = ["hsi", "pan"])]
    truth: Option<PathBuf>,
    /// Second cube scored against the same truth, e.g. the initializer.
    #[arg(long, requires = "truth")]
    baseline: Option<PathBuf>,
    #[arg(long, requires = "pan")]
    hsi: Option<PathBuf>,
    /// Single-band panchromatic cube.
    #[arg(long, requires = "hsi")]
    pan: Option<PathBuf>,
    /// MSI for the R² fit.
    #[arg(long)]
    msi: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    factor: usize,
    #[arg(long, default_value_t = DEFAULT_UIQI_WINDOW)]
    window: usize,
    /// Output JSON; defaults to `<fused>.metrics.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Written next to the simulated pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateProvenance {
    pub truth: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub factor: usize,
    pub kernel_sigma: f64,
    pub kernel_taps: usize,
    pub windows: Vec<BandWindow>,
    #[serde(with = "inf_str")]
    pub snr_h: f64,
    #[serde(with = "inf_str")]
    pub snr_m: f64,
    pub seed: u64,
    pub op1: SpatialOperator,
    pub op2: SpatialOperator,
    pub spectral: SpectralResponse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: (usize, usize, usize),
    pub ranks: (usize, usize, usize),
    pub smoothing: f64,
    pub seed: u64,
}

pub const SYNTHETIC: SyntheticSpec = SyntheticSpec {
    dims: (32, 32, 16),
    ranks: (4, 4, 3),
    smoothing: 2.0,
    seed: 0,
};

/// Everything needed to repeat a `fuse` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FuseRunConfig {
    pub hsi: PathBuf,
    pub msi: PathBuf,
    pub factor: usize,
    pub windows: Vec<BandWindow>,
    pub timing: bool,
    pub fusion: FusionConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatedOperators {
    pub op1: SpatialOperator,
    pub op2: SpatialOperator,
    pub spectral: SpectralResponse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub initial_lagrangian: f64,
    pub final_lagrangian: f64,
    pub descent_violations: Vec<usize>,
    pub stalls: usize,
    pub warnings: Vec<String>,
}

mod inf_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum V {
            N(f64),
            S(String),
        }
        match V::deserialize(d)? {
            V::N(v) => Ok(v),
            V::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Selftest(a) => return selftest(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| json_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_config<T: Serialize>(label: &str, value: &T) {
    println!("{label}:");
    println!("{}", serde_json::to_string_pretty(value).expect("config serializes"));
}

fn load_windows(path: &Path) -> Result<Vec<BandWindow>> {
    read_json(path)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (truth, wavelengths, synthetic) = match &a.truth {
        Some(p) => {
            let (cube, header) = read_cube_with_header(p)?;
            (cube, header.wavelengths_nm, None)
        }
        None => {
            let spec = SyntheticSpec {
                seed: a.seed,
                ..SYNTHETIC
            };
            (synthetic_tucker(spec.dims, spec.ranks, spec.smoothing, spec.seed)?, None, Some(spec))
        }
    };
    let (n1, n2, k) = truth.dims();
    if a.factor == 0 || n1 % a.factor != 0 || n2 % a.factor != 0 {
        return Err(Error::arg(format!(
            "factor {} must divide both spatial dims {n1}×{n2}",
            a.factor
        )));
    }
    let windows = match &a.windows {
        Some(p) => load_windows(p)?,
        None => even_windows(k, a.n_windows)?,
    };
    let op = |n| SpatialOperator::centered(n, a.factor, gaussian_kernel(n, a.kernel_sigma, a.kernel_taps)?);
    let (op1, op2) = (op(n1)?, op(n2)?);
    let sr = SpectralResponse::uniform(k, &windows)?;
    let (h, m) = simulate_pair(&truth, &op1, &op2, &sr, a.snr_h, a.snr_m, a.seed)?;

    let prov = SimulateProvenance {
        truth: a.truth.clone(),
        synthetic,
        factor: a.factor,
        kernel_sigma: a.kernel_sigma,
        kernel_taps: a.kernel_taps,
        windows: windows.clone(),
        snr_h: a.snr_h,
        snr_m: a.snr_m,
        seed: a.seed,
        op1,
        op2,
        spectral: sr,
    };
    print_config("simulate", &prov);
    make_dir(&a.out)?;
    let mut hh = CubeHeader::new(h.dims(), Dtype::F64);
    hh.wavelengths_nm = wavelengths;
    hh.description = Some("simulated HSI".into());
    write_cube_with_header(&h, &a.out.join("hsi"), &hh)?;
    let mut mh = CubeHeader::new(m.dims(), Dtype::F64);
    mh.description = Some("simulated MSI".into());
    write_cube_with_header(&m, &a.out.join("msi"), &mh)?;
    if a.truth.is_none() {
        let mut th = CubeHeader::new(truth.dims(), Dtype::F64);
        th.description = Some("synthetic truth".into());
        write_cube_with_header(&truth, &a.out.join("truth"), &th)?;
    }
    write_json(&a.out.join("windows.json"), &windows)?;
    write_json(&a.out.join("provenance.json"), &prov)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fusion_config(a: &FuseArgs) -> FusionConfig {
    let d = FusionConfig::default();
    FusionConfig {
        lambda1: a.lambda1.unwrap_or(d.lambda1),
        lambda2: a.lambda2.unwrap_or(d.lambda2),
        beta: a.beta.unwrap_or(d.beta),
        mu: a.mu.unwrap_or(d.mu),
        max_iter: a.max_iter.unwrap_or(d.max_iter),
        rel_tol: a.rel_tol.unwrap_or(d.rel_tol),
        stepsize_rule: a.stepsize_rule.unwrap_or(d.stepsize_rule),
        transform: a.transform.unwrap_or(d.transform),
        inner_pg_steps: a.inner_pg_steps.unwrap_or(d.inner_pg_steps),
        seed: a.seed,
        multiplier: a.multiplier.unwrap_or(d.multiplier),
        update_operators: !a.fixed_operators,
        certify_descent: a.certify_descent,
        init: d.init,
    }
}

fn psnr_against(x: &Cube, truth: &Cube) -> Result<f64> {
    let opts = FullReferenceOptions {
        window: x.rows().min(x.cols()),
        ..Default::default()
    };
    Ok(full_reference(x, truth, &opts)?.psnr_db.unwrap_or(f64::NAN))
}

struct RunOutputs {
    summary: SolverSummary,
    psnr: Option<(f64, f64)>,
}

fn write_run(
    dir: &Path,
    h: &Cube,
    m: &Cube,
    run: &FuseRunConfig,
    wavelengths: &Option<Vec<f64>>,
    truth: Option<&Cube>,
) -> Result<RunOutputs> {
    let cfg = &run.fusion;
    let s0 = init_hrhsi(h, m, run.factor, &cfg.init)?;
    let (s, mut state) = fuse(h, m, &run.windows, run.factor, cfg)?;
    make_dir(dir)?;
    for w in &state.warnings {
        eprintln!("warning: {w}");
    }
    if !run.timing {
        state.trace.iter_mut().for_each(|r| r.wall_ms = 0.0);
    }
    let header = |desc: &str| {
        let mut hd = CubeHeader::new(s.dims(), Dtype::F64);
        hd.wavelengths_nm = wavelengths.clone();
        hd.description = Some(desc.into());
        hd
    };
    write_cube_with_header(&s, &dir.join("fused"), &header("fused"))?;
    write_cube_with_header(&s0, &dir.join("init"), &header("initializer"))?;
    write_json(
        &dir.join("operators.json"),
        &EstimatedOperators {
            op1: state.op1.clone(),
            op2: state.op2.clone(),
            spectral: state.sr.clone(),
        },
    )?;
    if !state.trace.is_empty() {
        write_trace_csv(&state.trace, &dir.join("trace.csv"))?;
    }
    let summary = summarize(&state);
    write_json(&dir.join("solver.json"), &summary)?;
    write_json(&dir.join("config.json"), run)?;
    let psnr = match truth {
        Some(t) => Some((psnr_against(&s0, t)?, psnr_against(&s, t)?)),
        None => None,
    };
    Ok(RunOutputs { summary, psnr })
}

fn summarize(state: &SolverState) -> SolverSummary {
    SolverSummary {
        iterations: state.iter,
        initial_lagrangian: state.initial_lagrangian,
        final_lagrangian: state.trace.last().map_or(state.initial_lagrangian, |r| r.lagrangian),
        descent_violations: state.descent_violations.clone(),
        stalls: state.stalls,
        warnings: state.warnings.clone(),
    }
}

/// Values swept by `fuse --grid`.
pub const GRID_LAMBDA1: [f64; 4] = [0.1, 1.0, 10.0, 50.0];
pub const GRID_LAMBDA2: [f64; 3] = [0.01, 0.1, 1.0];
pub const GRID_MU: [f64; 4] = [1.0 / 20.0, 1.0 / 400.0, 1.0 / 8000.0, 1.0 / 160_000.0];
pub const GRID_BETA: [f64; 4] = [1.0, 10.0, 20.0, 100.0];

fn fuse_cmd(a: FuseArgs) -> Result<()> {
    let (h, hh) = read_cube_with_header(&a.hsi)?;
    let m = read_cube(&a.msi)?;
    let windows = match (&a.windows, &a.windows_from_wavelengths) {
        (Some(p), _) => load_windows(p)?,
        (None, Some(p)) => {
            let edges: Vec<(f64, f64)> = read_json(p)?;
            let wl = hh
                .wavelengths_nm
                .as_ref()
                .ok_or_else(|| Error::arg("--windows-from-wavelengths needs wavelengths_nm in the HSI header"))?;
            windows_from_wavelengths(wl, &edges)?
        }
        (None, None) => {
            return Err(Error::arg("one of --windows or --windows-from-wavelengths is required"));
        }
    };
    let truth = a.truth.as_deref().map(read_cube).transpose()?;
    let base = FuseRunConfig {
        hsi: a.hsi.clone(),
        msi: a.msi.clone(),
        factor: a.factor,
        windows,
        timing: a.timing,
        fusion: fusion_config(&a),
    };
    print_config("fuse", &base);
    if !a.grid {
        base.fusion.validate()?;
        let out = write_run(&a.out, &h, &m, &base, &hh.wavelengths_nm, truth.as_ref())?;
        report_run(&out);
        println!("wrote {}", a.out.display());
        return Ok(());
    }

    crate::solver::check_inputs(&h, &m, &base.windows, base.factor)?;
    make_dir(&a.out)?;
    let summary_path = a.out.join("grid_summary.csv");
    let csv_err = |e: csv::Error| Error::io(&summary_path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(&summary_path).map_err(csv_err)?;
    w.write_record([
        "run",
        "lambda1",
        "lambda2",
        "mu",
        "beta",
        "status",
        "iterations",
        "final_lagrangian",
        "descent_violations",
        "psnr_init_db",
        "psnr_fused_db",
    ])
    .map_err(csv_err)?;
    let mut idx = 0;
    for &l1 in &GRID_LAMBDA1 {
        for &l2 in &GRID_LAMBDA2 {
            for &mu in &GRID_MU {
                for &beta in &GRID_BETA {
                    let mut run = base.clone();
                    run.fusion.lambda1 = l1;
                    run.fusion.lambda2 = l2;
                    run.fusion.mu = mu;
                    run.fusion.beta = beta;
                    let name = format!("run_{idx:03}");
                    idx += 1;
                    let dir = a.out.join(&name);
                    let mut row = vec![name, l1.to_string(), l2.to_string(), mu.to_string(), beta.to_string()];
                    match run.fusion.validate().and_then(|_| write_run(&dir, &h, &m, &run, &hh.wavelengths_nm, truth.as_ref())) {
                        Ok(out) => {
                            let (p0, p1) = out.psnr.map_or((String::new(), String::new()), |(p0, p1)| {
                                (format!("{p0:.4}"), format!("{p1:.4}"))
                            });
                            row.extend([
                                "ok".into(),
                                out.summary.iterations.to_string(),
                                format!("{:.11e}", out.summary.final_lagrangian),
                                out.summary.descent_violations.len().to_string(),
                                p0,
                                p1,
                            ]);
                        }
                        Err(e) => {
                            eprintln!("{}: {e}", row[0]);
                            row.extend([format!("error: {e}"), String::new(), String::new(), String::new(), String::new(), String::new()]);
                        }
                    }
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    println!("grid: {idx} runs, summary in {}", summary_path.display());
    Ok(())
}

fn report_run(out: &RunOutputs) {
    let s = &out.summary;
    println!(
        "iterations {}  L(0) {:.6e}  L(end) {:.6e}  descent violations {}  stalls {}",
        s.iterations,
        s.initial_lagrangian,
        s.final_lagrangian,
        s.descent_violations.len(),
        s.stalls
    );
    if let Some((p0, p1)) = out.psnr {
        println!("psnr init {p0:.3} dB  fused {p1:.3} dB  gain {:.3} dB", p1 - p0);
    }
}

fn print_report(label: &str, r: &MetricReport) {
    println!("{label}");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for (name, v) in [
        ("PSNR (dB)", r.psnr_db),
        ("SAM (rad)", r.sam_rad),
        ("UIQI", r.uiqi),
        ("ERGAS", r.ergas),
        ("D_lambda", r.d_lambda),
        ("D_s", r.d_s),
        ("QNR", r.qnr),
        ("R^2", r.r_squared),
    ] {
        if v.is_some() {
            println!("  {name:<10} {:>14}", fmt(v));
        }
    }
    for d in &r.diagnostics {
        println!("  note: {d}");
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.truth.is_none() && (a.hsi.is_none() || a.pan.is_none()) {
        return Err(Error::arg("eval needs --truth, or --hsi with --pan"));
    }
    let fused = read_cube(&a.fused)?;
    let side = fused.rows().min(fused.cols());
    let window = a.window.min(side);
    let mut report = if let Some(t) = &a.truth {
        let truth = read_cube(t)?;
        let opts = FullReferenceOptions {
            ratio: a.factor as f64,
            window: a.window,
            stride: a.window,
            ..Default::default()
        };
        let report = full_reference(&fused, &truth, &opts)?;
        if let Some(b) = &a.baseline {
            let base = full_reference(&read_cube(b)?, &truth, &opts)?;
            print_report("baseline", &base);
            let (p0, p1) = (base.psnr_db.unwrap_or(f64::NAN), report.psnr_db.unwrap_or(f64::NAN));
            println!("psnr gain over baseline: {:.3} dB", p1 - p0);
        }
        report
    } else if let (Some(hp), Some(pp)) = (&a.hsi, &a.pan) {
        let h = read_cube(hp)?;
        let pan = read_cube(pp)?;
        if pan.bands() != 1 {
            return Err(Error::arg(format!("pan must have one band, got {}", pan.bands())));
        }
        let pan = Mat::from_vec(pan.rows(), pan.cols(), pan.band(0).to_vec())?;
        let nr = no_reference(&fused, &h, &pan, a.factor, window, window)?;
        let mut r = MetricReport {
            d_lambda: Some(nr.d_lambda),
            d_s: Some(nr.d_s),
            qnr: Some(nr.qnr),
            ..Default::default()
        };
        if window != a.window {
            r.diagnostics.push(format!("window reduced from {} to {window}", a.window));
        }
        r
    } else {
        return Err(Error::arg("eval needs --truth, or --hsi with --pan"));
    };
    if let Some(mp) = &a.msi {
        let fit = r_squared(&fused, &read_cube(mp)?)?;
        report.r_squared = Some(fit.value);
        if fit.ridge_fallback {
            report.diagnostics.push("r_squared: ridge fallback used".into());
        }
    }
    print_report("fused", &report);
    let out = a.out.clone().unwrap_or_else(|| {
        let mut s = a.fused.clone().into_os_string();
        s.push(".metrics.json");
        PathBuf::from(s)
    });
    write_json(&out, &report)?;
    println!("wrote {}", out.display());
    Ok(())
}

type Check = (&'static str, fn(&mut ChaCha8Rng) -> Result<bool>);

fn rand_cube(d: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Cube {
    Cube::from_fn(d.0, d.1, d.2, |_, _, _| rng.random_range(0.0..1.0))
}

fn check_simplex(rng: &mut ChaCha8Rng) -> Result<bool> {
    for _ in 0..50 {
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (pv, pu) = (project_simplex(&v)?, project_simplex(&u)?);
        let d_in: f64 = v.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum();
        let d_out: f64 = pv.iter().zip(&pu).map(|(a, b)| (a - b).powi(2)).sum();
        if !in_simplex(&pv, 1e-12) || d_out > d_in + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_circulant(rng: &mut ChaCha8Rng) -> Result<bool> {
    for n in [4, 8, 16] {
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = circulant_matrix(&b);
        let mut y = vec![0.0; n];
        Circulant::new(&b).apply(&x, false, &mut y);
        for (i, yi) in y.iter().enumerate() {
            let want: f64 = (0..n).map(|j| dense.get(i, j) * x[j]).sum();
            if (want - yi).abs() > 1e-10 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn check_adjoint(rng: &mut ChaCha8Rng) -> Result<bool> {
    let op = SpatialOperator::centered(16, 4, gaussian_kernel(16, 1.0, 5)?)?;
    let x = rand_cube((16, 6, 3), rng);
    let y = rand_cube((4, 6, 3), rng);
    let lhs = inner(&op.apply_mode(&x, Mode::Rows)?, &y)?;
    let rhs = inner(&x, &op.adjoint_mode(&y, Mode::Rows)?)?;
    Ok((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0))
}

fn check_prox(rng: &mut ChaCha8Rng) -> Result<bool> {
    let t = build_transform(TransformKind::Dft, 5, None)?;
    for _ in 0..5 {
        let (x, y) = (rand_cube((6, 5, 5), rng), rand_cube((6, 5, 5), rng));
        let d_out = frob_norm(&(&prox_ttnn(&x, 0.5, &t)? - &prox_ttnn(&y, 0.5, &t)?));
        if d_out > frob_norm(&(&x - &y)) + 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn small_problem(rng: &mut ChaCha8Rng) -> Result<(Cube, Cube, Vec<BandWindow>, SolverState)> {
    let truth = synthetic_tucker((16, 16, 8), (3, 3, 2), 2.0, rng.random())?;
    let op = SpatialOperator::centered(16, 4, gaussian_kernel(16, 1.0, 7)?)?;
    let windows = even_windows(8, 2)?;
    let sr = SpectralResponse::uniform(8, &windows)?;
    let (h, m) = simulate_pair(&truth, &op, &op, &sr, f64::INFINITY, f64::INFINITY, 0)?;
    let state = initial_state(&h, &m, &windows, 4, &FusionConfig::default())?;
    Ok((h, m, windows, state))
}

fn check_gradient(rng: &mut ChaCha8Rng) -> Result<bool> {
    let (h, m, _, mut state) = small_problem(rng)?;
    let lambda1 = 10.0;
    let g = grad_s(&state, &h, &m, lambda1)?;
    let dir = rand_cube(state.s.dims(), rng);
    let eps = 1e-5;
    let f = |st: &SolverState| -> Result<f64> {
        let (l1, l2) = crate::solver::data_terms(st, &h, &m, lambda1)?;
        Ok(l1 + l2)
    };
    let s0 = state.s.clone();
    state.s = s0.lincomb(1.0, &dir, eps)?;
    let fp = f(&state)?;
    state.s = s0.lincomb(1.0, &dir, -eps)?;
    let fm = f(&state)?;
    let fd = (fp - fm) / (2.0 * eps);
    let an = inner(&g, &dir)?;
    Ok((fd - an).abs() <= 1e-5 * an.abs().max(1.0))
}

fn check_descent(rng: &mut ChaCha8Rng) -> Result<bool> {
    let (h, m, windows, _) = small_problem(rng)?;
    let cfg = FusionConfig {
        max_iter: 10,
        rel_tol: 0.0,
        ..Default::default()
    };
    let (_, state) = fuse(&h, &m, &windows, 4, &cfg)?;
    let feasible = in_simplex(&state.op1.kernel, 1e-10)
        && in_simplex(&state.op2.kernel, 1e-10)
        && state.sr.bands.iter().all(|b| in_simplex(&b.weights, 1e-10));
    Ok(state.descent_holds() && feasible)
}

fn check_metrics(rng: &mut ChaCha8Rng) -> Result<bool> {
    let x = rand_cube((8, 8, 3), rng).map(|v| v + 0.1);
    let opts = FullReferenceOptions {
        window: 8,
        stride: 8,
        ..Default::default()
    };
    let r = full_reference(&x, &x, &opts)?;
    Ok(r.psnr_db == Some(f64::INFINITY) && r.sam_rad == Some(0.0) && r.ergas == Some(0.0) && r.uiqi == Some(1.0))
}

fn check_io(rng: &mut ChaCha8Rng) -> Result<bool> {
    let x = rand_cube((4, 5, 3), rng);
    let dir = std::env::temp_dir().join(format!("hsi-fusion-selftest-{}", std::process::id()));
    make_dir(&dir)?;
    let base = dir.join("cube");
    let res = write_cube_with_header(&x, &base, &CubeHeader::new(x.dims(), Dtype::F64)).and_then(|_| read_cube(&base));
    let _ = fs::remove_dir_all(&dir);
    Ok(res? == x)
}

const CHECKS: [Check; 8] = [
    ("simplex projection is feasible and nonexpansive", check_simplex),
    ("circulant FFT product matches dense matrix", check_circulant),
    ("spatial operator adjoint", check_adjoint),
    ("TTNN prox is nonexpansive", check_prox),
    ("data gradient matches finite differences", check_gradient),
    ("small fusion run descends and stays feasible", check_descent),
    ("metric identities on identical cubes", check_metrics),
    ("cube file roundtrip", check_io),
];

fn selftest(a: SelftestArgs) -> i32 {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut failed = 0;
    for (name, check) in CHECKS {
        let (ok, note) = match check(&mut rng) {
            Ok(ok) => (ok, String::new()),
            Err(e) => (false, format!(" ({e})")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {name}{note}", if ok { "PASS" } else { "FAIL" });
    }
    println!("selftest: {} passed, {failed} failed", CHECKS.len() - failed);
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    }
}
