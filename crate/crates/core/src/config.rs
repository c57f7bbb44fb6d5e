//! Solver configuration and its `key=value` file form.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Pairwise similarity used to score pixel pairs in the structure graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// Raw inner product of feature vectors.
    #[default]
    Dot,
    /// Inner product of L2-normalized feature vectors.
    Cosine,
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Similarity::Dot),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity {other:?} (expected dot or cosine)"
            ))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Similarity::Dot => "dot",
            Similarity::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Weight of the propagation term, in `(0, 1]`.
    pub alpha: f64,
    /// Dynamic-range floor of the guarded normalization.
    pub delta: f64,
    pub epsilon: f64,
    /// Softmax temperature applied to pair scores.
    pub temperature: f64,
    /// Neighbours kept per row of the transfer matrix.
    pub top_k: usize,
    pub max_iters: usize,
    /// Stop once `||M(t+1) - M(t)||_inf < tol`.
    pub tol: f64,
    /// Strict binarization threshold.
    pub threshold: f64,
    pub similarity: Similarity,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.03,
            delta: 0.2,
            epsilon: 1e-8,
            temperature: 0.1,
            top_k: 8,
            max_iters: 200,
            tol: 1e-6,
            threshold: 0.5,
            similarity: Similarity::Dot,
        }
    }
}

impl SolverConfig {
    /// `alpha / (delta + epsilon)^2`, the Lipschitz bound of one iteration.
    pub fn lipschitz_bound(&self) -> f64 {
        self.alpha / ((self.delta + self.epsilon) * (self.delta + self.epsilon))
    }

    /// Range checks on every field; does not check the contraction condition.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be > 0, got {}", self.delta));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.top_k == 0 {
            return bad("top_k must be >= 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }

    /// Validates and checks the contraction condition; returns the bound.
    pub fn certify(&self) -> Result<f64> {
        self.validate()?;
        let bound = self.lipschitz_bound();
        if bound < 1.0 {
            Ok(bound)
        } else {
            Err(Error::ContractionViolated { bound })
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad value {value:?} for {key}")))
        }
        match key {
            "alpha" => self.alpha = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "top_k" | "top-k" => self.top_k = num(key, value)?,
            "max_iters" | "max-iters" => self.max_iters = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "similarity" => self.similarity = value.parse()?,
            other => return Err(Error::InvalidParameter(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }
}

pub(crate) fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head).trim()
}
