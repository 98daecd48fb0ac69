//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numeric or convergence failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::dataset::{
    load_samples, make_dataset, DatasetOptions, Manifest, PairRecord, Protocol, Sample, Split,
};
use crate::degrade::{degrade, synthesize_psf, DegradeConfig, Noise, PsfSpec};
use crate::error::{Error, Result};
use crate::gradients::{check_wiener_gradients, GradInstance, FD_STEP};
use crate::io::{read_bank, read_field, read_image, write_atomic, write_bank, write_image};
use crate::iterative::{iterate, BuiltinPrior, IterConfig};
use crate::metrics::{psnr, ssim};
use crate::rng::ALGORITHM;
use crate::spatial_cg::{solve_sa, CgConfig};
use crate::trainer::{evaluate, input_quality, train_wfk, Adam, Pipeline, TrainConfig};
use crate::vst::{anscombe, exact_unbiased_inverse};
use crate::wiener::{wiener_solve, KernelBank, WienerPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "WIENERLAB_THREADS";

/// Gradient-check tolerance used for the exit status.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "wienerlab", version, about = "Wiener-Kolmogorov deconvolution with learnable kernel banks")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur and add noise to one image, or build a paired dataset from a directory.
    Degrade(DegradeArgs),
    /// Restore a degraded image.
    Restore(RestoreArgs),
    /// Train a kernel bank on a dataset manifest.
    Train(TrainArgs),
    /// Per-noise-level PSNR / SSIM table for a bank on a dataset split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseKind {
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Gaussian,
    Poisson,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Treat INPUT as a directory of sources and OUTPUT as the dataset directory.
    #[arg(long)]
    pub dataset: bool,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub noise: NoiseKind,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    pub std: f64,
    /// Poisson peak intensity.
    #[arg(long, default_value_t = 10.0)]
    pub peak: f64,
    /// PSF as family:size[:param], e.g. gaussian:7:1.0, airy:9:2.0, box:5.
    #[arg(long, default_value = "gaussian:7:1.0")]
    pub psf: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset mode: degradation protocol.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub protocol: ProtocolArg,
    /// Dataset mode: patch side.
    #[arg(long, default_value_t = 256)]
    pub patch: usize,
    /// Dataset mode: comma-separated noise levels to draw from.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Dataset mode: keep at most this many pairs.
    #[arg(long)]
    pub max_pairs: Option<usize>,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Closed-form Wiener filter with a kernel bank.
    Wf,
    /// Spatially adaptive regularizer solved by conjugate gradient.
    Sa,
    /// Gradient descent with a pluggable prior.
    Iter,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long, value_enum, default_value = "wf")]
    pub method: Method,
    /// Kernel bank file (required for wf).
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Per-pixel kernel field file (required for sa).
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long, default_value = "gaussian:7:1.0")]
    pub psf: String,
    /// Log regularization weight; overrides the bank's value for wf.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Prior for iter: none, tv or tikhonov:<bankfile>.
    #[arg(long, default_value = "none")]
    pub prior: String,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Restore in the Anscombe domain. The input holds Poisson counts
    /// (PGM inputs are multiplied by --peak first).
    #[arg(long)]
    pub vst: bool,
    /// Peak intensity; with --vst the result is divided by it.
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Ground truth; prints a psnr/ssim line.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the unclamped result as WKIMG.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// Iter: write the per-step trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub abs_tol: f64,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial bank; defaults to eight 3x3 DCT modes.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Adam state to resume from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Weight of the gradient term of the loss.
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub vst: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub vst: bool,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 12)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

/// Outcome of a subcommand that may finish with a failure status but no error.
pub struct Report {
    pub code: i32,
    pub stdout: String,
}

impl Report {
    fn ok(stdout: String) -> Self {
        Self {
            code: EXIT_OK,
            stdout,
        }
    }
}

fn parse_psf(s: &str) -> Result<PsfSpec> {
    s.parse()
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} does not exist", path.display())))
    }
}

fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

pub fn cmd_degrade(a: &DegradeArgs) -> Result<Report> {
    require(&a.input)?;
    if a.dataset {
        let protocol = match a.protocol {
            ProtocolArg::Gaussian => Protocol::Gaussian,
            ProtocolArg::Poisson => Protocol::Poisson,
        };
        let opts = DatasetOptions {
            patch: a.patch,
            levels: a.levels.clone(),
            max_pairs: a.max_pairs,
            ..Default::default()
        };
        let m = make_dataset(&a.input, &a.output, protocol, a.seed, &opts)?;
        return Ok(Report::ok(format!(
            "wrote {} pairs to {}\n",
            m.records.len(),
            a.output.display()
        )));
    }
    let spec = parse_psf(&a.psf)?;
    let noise = match a.noise {
        NoiseKind::Gaussian => Noise::Gaussian { std: a.std },
        NoiseKind::Poisson => Noise::Poisson { peak: a.peak },
    };
    let x = read_image(&a.input)?;
    let cfg = DegradeConfig {
        psf: spec,
        noise,
        seed: a.seed,
    };
    let y = degrade(&x, &cfg)?;
    // PGM holds [0, 1]; Poisson counts are stored divided by the peak there.
    let stored = match noise {
        Noise::Poisson { peak } if is_pgm(&a.output) => y.scale(1.0 / peak),
        _ => y,
    };
    let record = PairRecord {
        id: "single".into(),
        split: Split::Test,
        psf: spec,
        noise,
        peak: match noise {
            Noise::Poisson { peak } => Some(peak),
            Noise::Gaussian { .. } => None,
        },
        seed: a.seed,
        rng: ALGORITHM.into(),
        truth: a.input.display().to_string(),
        degraded: a
            .output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let manifest = Manifest {
        records: vec![record],
    };
    write_image(&a.output, &stored)?;
    manifest.save(&sidecar(&a.output, ".manifest.jsonl"))?;
    Ok(Report::ok(String::new()))
}

pub fn cmd_restore(a: &RestoreArgs) -> Result<Report> {
    require(&a.input)?;
    for p in [&a.bank, &a.field, &a.truth].into_iter().flatten() {
        require(p)?;
    }
    let psf = synthesize_psf(&parse_psf(&a.psf)?)?;
    let observed = read_image(&a.input)?;
    if a.vst && !(a.peak > 0.0) {
        return Err(Error::invalid("--peak must be positive"));
    }
    let y = if a.vst {
        let counts = if is_pgm(&a.input) {
            observed.scale(a.peak)
        } else {
            observed
        };
        anscombe(&counts)?
    } else {
        observed
    };
    let (h, w) = y.dims();
    let mut stdout = String::new();

    let restored = match a.method {
        Method::Wf => {
            let path = a
                .bank
                .as_ref()
                .ok_or_else(|| Error::invalid("--method wf needs --bank"))?;
            let mut bank = read_bank(path)?;
            if let Some(alpha) = a.alpha {
                bank.set_alpha(alpha);
            }
            wiener_solve(&y, &WienerPlan::new(&psf, &bank, h, w)?)?
        }
        Method::Sa => {
            let path = a
                .field
                .as_ref()
                .ok_or_else(|| Error::invalid("--method sa needs --field"))?;
            let field = read_field(path)?;
            let cfg = CgConfig {
                max_iter: a.max_iter,
                rel_tol: a.rel_tol,
                abs_tol: a.abs_tol,
            };
            let sol = solve_sa(&y, &psf, &field, a.alpha.unwrap_or(0.0), &cfg)?;
            let r = &sol.report;
            if !r.converged {
                return Ok(Report {
                    code: EXIT_NUMERIC,
                    stdout: format!(
                        "cg did not converge: residual {:e} above threshold {:e} after {} iterations\n",
                        r.residual, r.threshold, r.iterations
                    ),
                });
            }
            let _ = writeln!(
                stdout,
                "cg converged in {} iterations, residual {:e}",
                r.iterations, r.residual
            );
            sol.x
        }
        Method::Iter => {
            let prior = BuiltinPrior::parse(&a.prior, |p| read_bank(Path::new(p)))?;
            let cfg = IterConfig {
                steps: a.steps,
                beta: a.beta,
                alpha: a.alpha.unwrap_or(0.0),
            };
            let out = iterate(&y, &psf, &prior, &cfg)?;
            if let Some(t) = &a.trace {
                write_atomic(t, out.trace_csv().as_bytes())?;
            }
            out.x
        }
    };

    let result = if a.vst {
        exact_unbiased_inverse(&restored.map(|z| z.max(f64::MIN_POSITIVE)))?.scale(1.0 / a.peak)
    } else {
        restored
    };
    if !result.is_finite() {
        return Err(Error::NumericFailure("restored image is not finite".into()));
    }
    if let Some(t) = &a.truth {
        let truth = read_image(t)?;
        let _ = writeln!(
            stdout,
            "psnr={} ssim={:.6}",
            psnr(&result, &truth, 1.0)?,
            ssim(&result, &truth)?
        );
    }
    if let Some(raw) = &a.raw {
        write_image(&raw.with_extension("wkimg"), &result)?;
    }
    write_image(&a.output, &result)?;
    Ok(Report::ok(stdout))
}

pub fn cmd_train(a: &TrainArgs) -> Result<Report> {
    require(&a.manifest)?;
    let manifest = Manifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let init = match &a.init {
        Some(p) => read_bank(p)?,
        None => KernelBank::default_bank(),
    };
    let cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        weight: a.weight,
        seed: a.seed,
        patience: a.patience,
        pipeline: if a.vst { Pipeline::Vst } else { Pipeline::Direct },
        ..Default::default()
    };
    cfg.validate()?;
    let adam = match &a.resume {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Some(Adam::from_bytes(&bytes, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)?)
        }
        None => None,
    };
    let out = train_wfk(&manifest, base, &init, &cfg, adam)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_bank(&a.out.join("final.wkb"), &out.bank)?;
    write_atomic(&a.out.join("final.adam"), &out.adam.to_bytes())?;
    if let Some((epoch, best)) = &out.best {
        write_bank(&a.out.join("best.wkb"), best)?;
        info!("best validation epoch {epoch}");
    }
    write_atomic(&a.out.join("history.csv"), out.history_csv().as_bytes())?;
    let msg = format!("{:?}; alpha {:.6}\n", out.stop, out.bank.alpha());
    match out.stop {
        crate::trainer::StopReason::NonFinite { .. } => Ok(Report {
            code: EXIT_NUMERIC,
            stdout: msg,
        }),
        _ => Ok(Report::ok(msg)),
    }
}

/// Rows `noise,level,pairs,input_psnr,input_ssim,psnr,ssim`, one per noise level.
pub fn eval_table(samples: &[Sample], bank: &KernelBank, pipeline: Pipeline) -> Result<String> {
    let mut levels: Vec<(&'static str, f64)> = samples
        .iter()
        .map(|s| (s.noise.kind(), s.noise.level()))
        .collect();
    levels.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
    levels.dedup();
    let mut out = String::from("noise,level,pairs,input_psnr,input_ssim,psnr,ssim\n");
    for (kind, level) in levels {
        let group: Vec<Sample> = samples
            .iter()
            .filter(|s| s.noise.kind() == kind && s.noise.level() == level)
            .cloned()
            .collect();
        let input = input_quality(&group)?;
        let restored = evaluate(&group, bank, pipeline)?;
        let _ = writeln!(
            out,
            "{kind},{level},{},{},{:.6},{},{:.6}",
            group.len(),
            input.psnr,
            input.ssim,
            restored.psnr,
            restored.ssim
        );
    }
    Ok(out)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report> {
    require(&a.manifest)?;
    require(&a.bank)?;
    let manifest = Manifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let bank = read_bank(&a.bank)?;
    let split: Split = a.split.parse()?;
    let samples = load_samples(&manifest, base, Some(split))?;
    let pipeline = if a.vst { Pipeline::Vst } else { Pipeline::Direct };
    let table = eval_table(&samples, &bank, pipeline)?;
    match &a.out {
        Some(p) => {
            write_atomic(p, table.as_bytes())?;
            Ok(Report::ok(String::new()))
        }
        None => Ok(Report::ok(table)),
    }
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Report> {
    let inst = GradInstance::random(a.size, a.d, a.k, a.seed)?;
    let summary = check_wiener_gradients(&inst, FD_STEP)?;
    let mut out = String::from("parameter,max_rel_error\n");
    for (name, v) in summary.rows() {
        let _ = writeln!(out, "{name},{v:e}");
    }
    let pass = summary.max() < GRADCHECK_TOLERANCE;
    Ok(Report {
        code: if pass { EXIT_OK } else { EXIT_NUMERIC },
        stdout: out,
    })
}

/// Runs a parsed command line; returns the exit code and what to print.
pub fn run(cli: &Cli) -> (i32, String) {
    let result = match &cli.command {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Restore(a) => cmd_restore(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(r) => (r.code, r.stdout),
        Err(e) => (exit_code(&e), format!("error: {e}\n")),
    }
}

/// Reads the thread cap from the environment and sizes the global pool.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Entry point shared by the binary: parses `args`, runs, prints, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let (code, text) = run(&cli);
    if code == EXIT_OK || !text.starts_with("error:") {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    code
}
