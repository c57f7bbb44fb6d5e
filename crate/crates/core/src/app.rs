//! Command-line frontend.
//!
//! Exit codes: 0 ok, 2 format/parse/shape error, 3 empty support mask,
//! 4 iteration cap reached without convergence, 5 contraction condition
//! violated, 6 dense benchmark over the size cap.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_bench, BenchMode, BenchOptions};
use crate::config::{Similarity, SolverConfig};
use crate::error::{Error, Result};
use crate::graph::build_transfer;
use crate::io::{read_mask_pgm, read_tensor, write_mask_pgm, write_tensor};
use crate::metrics::{fb_iou, iou};
use crate::pipeline::{run_episode, EpisodeSpec};
use crate::prior_init::initial_prior;
use crate::solver::solve_fixed_point;
use crate::tensor::{FeatureMap, Prior};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_EMPTY_MASK: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_CERTIFICATION: i32 = 5;
pub const EXIT_BENCH_CAP: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "cmprior", version, about = "Contraction-mapping position priors for few-shot segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the initial prior of a query from one support shot
    Prior(PriorArgs),
    /// Refine a prior by fixed-point iteration over the query's structure graph
    Propagate(PropagateArgs),
    /// Run a full K-shot episode: priors, refinement, fusion, binarization, evaluation
    Pipeline(PipelineArgs),
    /// Time sparse and dense graph construction and refinement steps
    Bench(BenchArgs),
    /// Score a predicted mask against ground truth
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Support features (CMPT, C x H x W)
    #[arg(long)]
    pub support_feat: PathBuf,
    /// Support mask (PGM P5)
    #[arg(long)]
    pub support_mask: PathBuf,
    /// Query features (CMPT, C x H x W)
    #[arg(long)]
    pub query_feat: PathBuf,
    /// Output prior (CMPT, 1 x H x W)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    #[arg(long, default_value_t = 0.03)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 8)]
    pub top_k: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Pair similarity: dot or cosine
    #[arg(long, default_value = "dot")]
    pub similarity: String,
}

impl SolverFlags {
    fn to_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            alpha: self.alpha,
            delta: self.delta,
            epsilon: self.epsilon,
            temperature: self.temperature,
            top_k: self.top_k,
            max_iters: self.max_iters,
            tol: self.tol,
            similarity: self.similarity.parse()?,
            ..SolverConfig::default()
        };
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    /// Query features (CMPT, C x H x W)
    #[arg(long)]
    pub query_feat: PathBuf,
    /// Initial prior (CMPT, 1 x H x W)
    #[arg(long)]
    pub prior: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Trace CSV (iter,residual,range,ratio)
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Refined prior (CMPT, 1 x H x W)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Episode file (support=<feat>,<mask> lines, query=, gt=, class=)
    #[arg(long)]
    pub episode: PathBuf,
    /// key=value solver config; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for mask.pgm, prior.cmpt, traces and report.txt
    #[arg(long)]
    pub out_dir: PathBuf,
    /// [default: 0.03]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [default: 0.2]
    #[arg(long)]
    pub delta: Option<f64>,
    /// [default: 1e-8]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// [default: 0.1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub top_k: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Binarization threshold [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// dot or cosine [default: dot]
    #[arg(long)]
    pub similarity: Option<String>,
}

impl PipelineArgs {
    fn to_config(&self) -> Result<SolverConfig> {
        let mut cfg = match &self.config {
            Some(path) => SolverConfig::load(path)?,
            None => SolverConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(alpha, delta, epsilon, temperature, top_k, max_iters, tol, threshold);
        if let Some(s) = &self.similarity {
            cfg.similarity = s.parse::<Similarity>()?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Feature-map side lengths, comma separated
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub top_k: usize,
    /// sparse, dense or both
    #[arg(long, default_value = "sparse")]
    pub mode: String,
    /// Output CSV (mode,n,build_ms,iter_ms,total_ms); stdout when omitted
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Refinement steps timed per repetition
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Repetitions per cell (median reported)
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = crate::synth::DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mask (PGM P5)
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask (PGM P5)
    #[arg(long)]
    pub gt: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::EmptySupportMask | Error::ZeroPrototype => EXIT_EMPTY_MASK,
        Error::ContractionViolated { .. } => EXIT_CERTIFICATION,
        Error::OracleLimit { .. } => EXIT_BENCH_CAP,
        _ => EXIT_FORMAT,
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FORMAT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Prior(a) => cmd_prior(&a),
        Command::Propagate(a) => cmd_propagate(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn read_features(path: &std::path::Path) -> Result<FeatureMap<f32>> {
    FeatureMap::from_tensor(read_tensor(path)?)
}

pub fn cmd_prior(a: &PriorArgs) -> Result<i32> {
    let support = read_features(&a.support_feat)?;
    let mask = read_mask_pgm(&a.support_mask)?;
    let query = read_features(&a.query_feat)?;
    let m0 = initial_prior(&support, &mask.to_prior(), &query)?;
    write_tensor(&m0.to_tensor(), &a.out)?;
    Ok(EXIT_OK)
}

pub fn cmd_propagate(a: &PropagateArgs) -> Result<i32> {
    let cfg = a.solver.to_config()?;
    cfg.certify()?;
    let query = read_features(&a.query_feat)?;
    let m0 = Prior::from_tensor(&read_tensor(&a.prior)?)?;
    if m0.shape() != (query.height(), query.width()) {
        return Err(Error::shape((query.height(), query.width()), m0.shape()));
    }
    let transfer = build_transfer(&query, cfg.top_k, cfg.temperature, cfg.similarity)?;
    let solved = solve_fixed_point(&m0, &transfer, &cfg, None)?;
    write_tensor(&solved.prior.to_tensor(), &a.out)?;
    if let Some(path) = &a.trace_out {
        solved.trace.write_csv(path)?;
    }
    if solved.trace.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: not converged after {} iterations (last residual {})",
            solved.trace.iterations,
            solved.trace.last_residual().unwrap_or(f64::NAN)
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cmd_pipeline(a: &PipelineArgs) -> Result<i32> {
    let cfg = a.to_config()?;
    cfg.certify()?;
    let spec = EpisodeSpec::load(&a.episode)?;
    let data = spec.read()?;
    let out = run_episode(&data, &cfg)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    write_mask_pgm(&out.mask, a.out_dir.join("mask.pgm"))?;
    write_tensor(&out.fused.to_tensor(), a.out_dir.join("prior.cmpt"))?;
    for (k, s) in out.solved.iter().enumerate() {
        s.trace.write_csv(a.out_dir.join(format!("trace_{k}.csv")))?;
    }
    if let Some(report) = &out.report {
        let path = a.out_dir.join("report.txt");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::Io { path: path.clone(), source: e })?;
        file.write_all(report.to_string().as_bytes())
            .map_err(|e| Error::Io { path, source: e })?;
        print!("{report}");
    }
    if !out.converged() {
        eprintln!("warning: at least one shot hit the iteration cap without converging");
    }
    Ok(EXIT_OK)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let opts = BenchOptions {
        sizes: a.sizes.clone(),
        top_k: a.top_k,
        mode: a.mode.parse::<BenchMode>()?,
        channels: a.channels,
        iters: a.iters,
        reps: a.reps,
        seed: a.seed,
        temperature: a.temperature,
    };
    let report = run_bench(&opts)?;
    let csv = report.to_csv();
    match &a.csv_out {
        Some(path) => std::fs::write(path, &csv).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => print!("{csv}"),
    }
    for ag in &report.agreements {
        eprintln!(
            "agreement n={} matrix_max_diff={:e} iterate_max_diff={:e}",
            ag.n, ag.matrix_diff, ag.iterate_diff
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let pred = read_mask_pgm(&a.pred)?;
    let gt = read_mask_pgm(&a.gt)?;
    println!("iou={} fbiou={}", iou(&pred, &gt)?, fb_iou(&pred, &gt)?);
    Ok(EXIT_OK)
}
