//! Anchored fixed-point refinement of a position prior.
//!
//! One step maps `M` to `g(alpha * g(P M) + (1 - alpha) * M0)`, where `g` is
//! min-max normalization with a dynamic-range floor `delta`. When
//! `alpha / (delta + epsilon)^2 < 1` the step is a contraction in the
//! sup-norm on `[0, 1]^N`, so iteration from any start reaches the same
//! fixed prior. The solver refuses configurations that fail that check and
//! records residuals, ranges and empirical contraction ratios as it goes.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::graph::Propagate;
use crate::scalar::{min_max, Scalar};
use crate::tensor::Prior;

/// Guarded min-max normalization:
/// `(v - min v) / (max(max v - min v, delta) + epsilon)`.
///
/// Output lies in `[0, 1)`. Inputs spanning less than `delta` are
/// compressed rather than stretched; a constant input maps to zeros.
pub fn normalize_g(v: &[f64], delta: f64, epsilon: f64) -> Vec<f64> {
    let Some((lo, hi)) = min_max(v) else {
        return Vec::new();
    };
    let denom = (hi - lo).max(delta) + epsilon;
    v.iter().map(|x| (x - lo) / denom).collect()
}

/// Result of one refinement step.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub prior: Prior<T>,
    /// `||out - m_t||_inf`.
    pub residual: f64,
    /// Dynamic range of the combination term before the outer normalization.
    pub range: f64,
}

fn check_shapes<T: Scalar, P: Propagate<T>>(m: &Prior<T>, m0: &Prior<T>, p: &P) -> Result<()> {
    m.check_same_shape(m0)?;
    if p.size() != m0.len() {
        return Err(Error::shape(format!("{} pixels", m0.len()), format!("{} pixels", p.size())));
    }
    Ok(())
}

/// One application of the refinement map to `m_t`.
pub fn iterate_once<T: Scalar, P: Propagate<T>>(
    m_t: &Prior<T>,
    m0: &Prior<T>,
    p: &P,
    cfg: &SolverConfig,
) -> Result<Step<T>> {
    check_shapes(m_t, m0, p)?;
    Ok(step(m_t, m0, p, cfg, &mut vec![0.0; m0.len()]))
}

fn step<T: Scalar, P: Propagate<T>>(m_t: &Prior<T>, m0: &Prior<T>, p: &P, cfg: &SolverConfig, scratch: &mut [f64]) -> Step<T> {
    p.propagate_into(m_t.values(), scratch);
    let propagated = normalize_g(scratch, cfg.delta, cfg.epsilon);
    let combined: Vec<f64> = propagated
        .iter()
        .zip(m0.values())
        .map(|(g, a)| cfg.alpha * g + (1.0 - cfg.alpha) * a.wide())
        .collect();
    let range = min_max(&combined).map_or(0.0, |(lo, hi)| hi - lo);
    let out: Vec<T> = normalize_g(&combined, cfg.delta, cfg.epsilon)
        .into_iter()
        .map(|v| T::narrow(v.clamp(0.0, 1.0)))
        .collect();
    let residual = crate::scalar::max_abs_diff(&out, m_t.values());
    Step {
        prior: Prior::from_raw(m0.height(), m0.width(), out),
        residual,
        range,
    }
}

/// Per-iteration record of a solve; doubles as its convergence certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub iterations: usize,
    /// `residuals[t]` is `||M(t+1) - M(t)||_inf`.
    pub residuals: Vec<f64>,
    /// Dynamic range of the combination term at each iteration.
    pub ranges: Vec<f64>,
    /// `alpha / (delta + epsilon)^2`.
    pub lipschitz_bound: f64,
    pub converged: bool,
    /// `contraction_ratios[t - 1] = residuals[t] / residuals[t - 1]`, `t >= 1`.
    pub contraction_ratios: Vec<f64>,
}

impl SolverTrace {
    fn new(lipschitz_bound: f64) -> Self {
        Self {
            iterations: 0,
            residuals: Vec::new(),
            ranges: Vec::new(),
            lipschitz_bound,
            converged: false,
            contraction_ratios: Vec::new(),
        }
    }

    fn record(&mut self, residual: f64, range: f64) {
        if let Some(&prev) = self.residuals.last() {
            self.contraction_ratios.push(if prev > 0.0 { residual / prev } else { 0.0 });
        }
        self.residuals.push(residual);
        self.ranges.push(range);
        self.iterations += 1;
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    /// Contraction ratio observed at 1-based iteration `iter`, if any.
    pub fn ratio_at(&self, iter: usize) -> Option<f64> {
        iter.checked_sub(2).and_then(|i| self.contraction_ratios.get(i)).copied()
    }

    /// CSV with header `iter,residual,range,ratio`; iterations are 1-based
    /// and the first row's ratio is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,residual,range,ratio\n");
        for (i, (res, range)) in self.residuals.iter().zip(&self.ranges).enumerate() {
            let iter = i + 1;
            let ratio = self.ratio_at(iter).map(|r| r.to_string()).unwrap_or_default();
            writeln!(out, "{iter},{res},{range},{ratio}").expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Converged (or iteration-capped) prior together with its trace.
#[derive(Debug, Clone)]
pub struct FixedPrior<T> {
    pub prior: Prior<T>,
    pub trace: SolverTrace,
}

/// Iterates from `start` (default `m0`) until the residual drops below
/// `cfg.tol` or `cfg.max_iters` steps have run. Hitting the cap is reported
/// through `trace.converged`, not as an error.
pub fn solve_fixed_point<T: Scalar, P: Propagate<T>>(
    m0: &Prior<T>,
    p: &P,
    cfg: &SolverConfig,
    start: Option<&Prior<T>>,
) -> Result<FixedPrior<T>> {
    solve_fixed_point_with(m0, p, cfg, start, |_, _| {})
}

/// [`solve_fixed_point`] with a callback receiving each iterate and its
/// 1-based iteration number.
pub fn solve_fixed_point_with<T: Scalar, P: Propagate<T>>(
    m0: &Prior<T>,
    p: &P,
    cfg: &SolverConfig,
    start: Option<&Prior<T>>,
    mut on_iterate: impl FnMut(usize, &Prior<T>),
) -> Result<FixedPrior<T>> {
    let bound = cfg.certify()?;
    let mut current = start.unwrap_or(m0).clone();
    check_shapes(&current, m0, p)?;

    let mut trace = SolverTrace::new(bound);
    let mut scratch = vec![0.0; m0.len()];
    for iter in 1..=cfg.max_iters {
        let Step { prior, residual, range } = step(&current, m0, p, cfg, &mut scratch);
        trace.record(residual, range);
        on_iterate(iter, &prior);
        current = prior;
        if residual < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    Ok(FixedPrior { prior: current, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TransferMatrix;

    #[test]
    fn normalize_g_full_range() {
        let out = normalize_g(&[0.0, 1.0], 0.2, 1e-8);
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn normalize_g_compresses_narrow_range() {
        let out = normalize_g(&[0.0, 0.1], 0.2, 1e-8);
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.1 / (0.2 + 1e-8)).abs() < 1e-15);
        assert!((out[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn normalize_g_constant_is_zero() {
        assert_eq!(normalize_g(&[0.3; 4], 0.2, 1e-8), vec![0.0; 4]);
        assert!(normalize_g(&[], 0.2, 1e-8).is_empty());
    }

    #[test]
    fn identity_transfer_fixes_full_range_anchor() {
        let m0 = Prior::new(1, 4, vec![0.0, 0.25, 0.6, 1.0]).unwrap();
        let id = TransferMatrix::<f64>::identity(4).unwrap();
        let step = iterate_once(&m0, &m0, &id, &SolverConfig::default()).unwrap();
        assert!(step.residual < 1e-7);
        let solved = solve_fixed_point(&m0, &id, &SolverConfig::default(), None).unwrap();
        assert!(solved.trace.converged);
        assert!(crate::scalar::max_abs_diff(solved.prior.values(), m0.values()) < 1e-6);
    }

    #[test]
    fn uniform_transfer_returns_anchor() {
        let m0 = Prior::new(2, 2, vec![1.0, 0.0, 0.3, 0.8]).unwrap();
        let mt = Prior::new(2, 2, vec![0.9, 0.1, 0.5, 0.5]).unwrap();
        let u = TransferMatrix::<f64>::uniform(4).unwrap();
        let step = iterate_once(&mt, &m0, &u, &SolverConfig::default()).unwrap();
        assert!(crate::scalar::max_abs_diff(step.prior.values(), m0.values()) < 1e-7);
        // range of (1 - alpha) * m0
        assert!((step.range - 0.97).abs() < 1e-12);
    }

    #[test]
    fn uncertified_config_is_refused() {
        let m0 = Prior::new(1, 2, vec![0.0, 1.0]).unwrap();
        let id = TransferMatrix::<f64>::identity(2).unwrap();
        let cfg = SolverConfig {
            alpha: 0.05,
            ..Default::default()
        };
        match solve_fixed_point(&m0, &id, &cfg, None) {
            Err(Error::ContractionViolated { bound }) => assert!((bound - 1.25).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m0 = Prior::new(1, 2, vec![0.0, 1.0]).unwrap();
        let id = TransferMatrix::<f64>::identity(3).unwrap();
        assert!(matches!(iterate_once(&m0, &m0, &id, &SolverConfig::default()), Err(Error::ShapeMismatch { .. })));
        let other = Prior::new(2, 1, vec![0.0, 1.0]).unwrap();
        let id2 = TransferMatrix::<f64>::identity(2).unwrap();
        assert!(solve_fixed_point(&m0, &id2, &SolverConfig::default(), Some(&other)).is_err());
    }

    #[test]
    fn iteration_cap_is_not_an_error() {
        let m0 = Prior::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let start = Prior::new(1, 3, vec![1.0, 0.0, 0.2]).unwrap();
        let u = TransferMatrix::<f64>::uniform(3).unwrap();
        let cfg = SolverConfig {
            max_iters: 1,
            ..Default::default()
        };
        let out = solve_fixed_point(&m0, &u, &cfg, Some(&start)).unwrap();
        assert!(!out.trace.converged);
        assert_eq!(out.trace.iterations, 1);
        assert!(out.trace.contraction_ratios.is_empty());
    }

    #[test]
    fn trace_csv_layout() {
        let mut trace = SolverTrace::new(0.75);
        trace.record(0.5, 0.9);
        trace.record(0.25, 0.95);
        assert_eq!(trace.contraction_ratios, vec![0.5]);
        assert_eq!(trace.ratio_at(2), Some(0.5));
        assert_eq!(trace.ratio_at(1), None);
        assert_eq!(trace.to_csv(), "iter,residual,range,ratio\n1,0.5,0.9,\n2,0.25,0.95,0.5\n");
    }
}
