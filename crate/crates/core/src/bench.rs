//! Sparse-versus-dense timing harness for graph construction and
//! refinement steps.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::config::{Similarity, SolverConfig};
use crate::error::{Error, Result};
use crate::graph::{build_transfer, dense_transfer_oracle, DenseTransfer, Propagate, TransferMatrix, DENSE_ORACLE_LIMIT};
use crate::scalar::Scalar;
use crate::solver::{iterate_once, solve_fixed_point_with};
use crate::synth;
use crate::tensor::{FeatureMap, Prior};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Sparse,
    Dense,
    Both,
}

impl BenchMode {
    fn sparse(self) -> bool {
        matches!(self, BenchMode::Sparse | BenchMode::Both)
    }

    fn dense(self) -> bool {
        matches!(self, BenchMode::Dense | BenchMode::Both)
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(BenchMode::Sparse),
            "dense" => Ok(BenchMode::Dense),
            "both" => Ok(BenchMode::Both),
            other => Err(Error::InvalidParameter(format!("unknown bench mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Feature-map side lengths; each case has `side * side` pixels.
    pub sizes: Vec<usize>,
    pub top_k: usize,
    pub mode: BenchMode,
    pub channels: usize,
    /// Refinement steps timed per repetition.
    pub iters: usize,
    /// Repetitions per cell; the median is reported.
    pub reps: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64],
            top_k: 8,
            mode: BenchMode::Sparse,
            channels: 32,
            iters: 20,
            reps: 5,
            seed: synth::DEFAULT_SEED,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: &'static str,
    /// Pixel count.
    pub n: usize,
    pub build_ms: f64,
    /// Median wall time of one refinement step.
    pub iter_ms: f64,
    /// `build_ms + iters * iter_ms`.
    pub total_ms: f64,
}

/// Sparse/dense agreement at one size (only in `Both` mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub n: usize,
    /// Max elementwise difference of the transfer matrices.
    pub matrix_diff: f64,
    /// Max difference between corresponding solver iterates.
    pub iterate_diff: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub agreements: Vec<Agreement>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,n,build_ms,iter_ms,total_ms\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.6},{:.6},{:.6}", r.mode, r.n, r.build_ms, r.iter_ms, r.total_ms)
                .expect("writing to a String");
        }
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Median wall time of one refinement step over `reps` runs of `iters` steps.
pub fn time_iterations<P: Propagate<f32>>(p: &P, m0: &Prior<f32>, cfg: &SolverConfig, iters: usize, reps: usize) -> Result<f64> {
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let mut m = m0.clone();
        let start = Instant::now();
        for _ in 0..iters.max(1) {
            m = iterate_once(&m, m0, p, cfg)?.prior;
        }
        samples.push(elapsed_ms(start) / iters.max(1) as f64);
        std::hint::black_box(&m);
    }
    Ok(median(samples))
}

fn time_build<P>(reps: usize, mut build: impl FnMut() -> Result<P>) -> Result<(P, f64)> {
    let mut samples = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let p = build()?;
        samples.push(elapsed_ms(start));
        last = Some(p);
    }
    Ok((last.expect("at least one repetition"), median(samples)))
}

/// Benchmark case inputs for one side length.
pub fn bench_case(side: usize, channels: usize, seed: u64) -> (FeatureMap<f32>, Prior<f32>) {
    let features = synth::random_features(channels, side, side, seed);
    let m0 = synth::random_prior(side, side, seed.wrapping_add(1));
    (features, m0)
}

/// Runs every requested cell. Dense cases over the oracle limit are
/// rejected before anything is timed.
pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.sizes.is_empty() {
        return Err(Error::EmptyInput("bench sizes"));
    }
    if let Some(&side) = opts.sizes.iter().find(|&&s| s == 0) {
        return Err(Error::InvalidParameter(format!("bench size must be positive, got {side}")));
    }
    if opts.mode.dense() {
        if let Some(&side) = opts.sizes.iter().find(|&&s| s * s > DENSE_ORACLE_LIMIT) {
            return Err(Error::OracleLimit {
                n: side * side,
                limit: DENSE_ORACLE_LIMIT,
            });
        }
    }
    let cfg = SolverConfig {
        top_k: opts.top_k,
        temperature: opts.temperature,
        ..SolverConfig::default()
    };
    cfg.certify()?;

    let mut report = BenchReport::default();
    for &side in &opts.sizes {
        let (features, m0) = bench_case(side, opts.channels, opts.seed);
        let n = side * side;
        let sparse = if opts.mode.sparse() {
            let (p, build_ms) = time_build(opts.reps, || build_transfer(&features, opts.top_k, opts.temperature, Similarity::Dot))?;
            let iter_ms = time_iterations(&p, &m0, &cfg, opts.iters, opts.reps)?;
            report.rows.push(row("sparse", n, build_ms, iter_ms, opts.iters));
            Some(p)
        } else {
            None
        };
        if opts.mode.dense() {
            let (d, build_ms) =
                time_build(opts.reps, || dense_transfer_oracle(&features, opts.top_k, opts.temperature, Similarity::Dot))?;
            let iter_ms = time_iterations(&d, &m0, &cfg, opts.iters, opts.reps)?;
            report.rows.push(row("dense", n, build_ms, iter_ms, opts.iters));
            if let Some(p) = &sparse {
                report.agreements.push(agreement(p, &d, &m0, &cfg)?);
            }
        }
    }
    Ok(report)
}

fn row(mode: &'static str, n: usize, build_ms: f64, iter_ms: f64, iters: usize) -> BenchRow {
    BenchRow {
        mode,
        n,
        build_ms,
        iter_ms,
        total_ms: build_ms + iters as f64 * iter_ms,
    }
}

/// Compares a sparse matrix with its dense counterpart, elementwise and
/// through a full solve, iterate by iterate.
pub fn agreement<T: Scalar>(
    sparse: &TransferMatrix<T>,
    dense: &DenseTransfer<T>,
    m0: &Prior<T>,
    cfg: &SolverConfig,
) -> Result<Agreement> {
    let matrix_diff = sparse.to_dense()?.max_abs_diff(dense);
    let mut sparse_iterates = Vec::new();
    solve_fixed_point_with(m0, sparse, cfg, None, |_, m| sparse_iterates.push(m.clone()))?;
    let mut iterate_diff: f64 = 0.0;
    let dense_final = solve_fixed_point_with(m0, dense, cfg, None, |t, m| {
        if let Some(s) = sparse_iterates.get(t - 1) {
            iterate_diff = iterate_diff.max(crate::scalar::max_abs_diff(s.values(), m.values()));
        }
    })?;
    // the two runs may stop one step apart when a residual lands near tol
    if let Some(last) = sparse_iterates.last() {
        iterate_diff = iterate_diff.max(crate::scalar::max_abs_diff(last.values(), dense_final.prior.values()));
    }
    Ok(Agreement {
        n: sparse.n(),
        matrix_diff,
        iterate_diff,
    })
}
