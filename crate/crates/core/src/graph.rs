//! Structure transfer matrix: temperature-scaled pixel similarities, exact
//! per-row top-k, row softmax. Stored as compressed sparse rows.
//!
//! [`dense_transfer_oracle`] computes the same matrix literally, with an
//! `N x N` score array and `-inf` masking, for tests and benchmarks.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::config::Similarity;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Prior, Tensor};

/// Largest pixel count the dense oracle accepts.
pub const DENSE_ORACLE_LIMIT: usize = 4096;

/// Allowed deviation of a row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

const PAR_MIN_ROWS: usize = 256;

/// A row-stochastic operator applied to a prior. Output accumulates in `f64`.
pub trait Propagate<T: Scalar>: Sync {
    /// Number of rows (and columns).
    fn size(&self) -> usize;

    fn propagate_into(&self, v: &[T], out: &mut [f64]);

    fn propagate(&self, v: &[T]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.propagate_into(v, &mut out);
        out
    }
}

/// Sparse row-stochastic `N x N` matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix<T> {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    weights: Vec<T>,
}

impl<T: Scalar> TransferMatrix<T> {
    /// Validated constructor: every row non-empty with strictly increasing
    /// in-range columns, positive finite weights summing to 1 within
    /// [`ROW_SUM_TOLERANCE`].
    pub fn from_csr(n: usize, row_offsets: Vec<usize>, col_indices: Vec<u32>, weights: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("transfer matrix"));
        }
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 || row_offsets[n] != col_indices.len() {
            return Err(Error::InvalidParameter("row offsets do not describe the column array".into()));
        }
        if col_indices.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: col_indices.len(),
                actual: weights.len(),
            });
        }
        if u32::try_from(n).is_err() {
            return Err(Error::InvalidParameter(format!("{n} rows exceed u32 column ids")));
        }
        for i in 0..n {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if hi <= lo {
                return Err(Error::InvalidParameter(format!("row {i} is empty")));
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols[cols.len() - 1] as usize >= n {
                return Err(Error::InvalidParameter(format!(
                    "row {i} columns are not strictly increasing and in range"
                )));
            }
            let mut sum = 0.0;
            for w in &weights[lo..hi] {
                if !(w.is_finite() && *w > T::zero()) {
                    return Err(Error::InvalidParameter(format!("row {i} has a non-positive weight")));
                }
                sum += w.wide();
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            weights,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_csr(n, (0..=n).collect(), (0..n as u32).collect(), vec![T::one(); n])
    }

    /// Every row is `1/n` everywhere.
    pub fn uniform(n: usize) -> Result<Self> {
        let w = T::narrow(1.0 / n as f64);
        Self::from_csr(
            n,
            (0..=n).map(|i| i * n).collect(),
            (0..n).flat_map(|_| 0..n as u32).collect(),
            vec![w; n * n],
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `(columns, weights)` of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[T]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.weights[lo..hi])
    }

    pub fn max_row_len(&self) -> usize {
        self.row_offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|w| w.wide()).sum())
            .collect()
    }

    /// Expands to a dense matrix; test scale only.
    pub fn to_dense(&self) -> Result<DenseTransfer<T>> {
        if self.n > DENSE_ORACLE_LIMIT {
            return Err(Error::OracleLimit {
                n: self.n,
                limit: DENSE_ORACLE_LIMIT,
            });
        }
        let mut data = vec![T::zero(); self.n * self.n];
        for i in 0..self.n {
            let (cols, ws) = self.row(i);
            for (&j, &w) in cols.iter().zip(ws) {
                data[i * self.n + j as usize] = w;
            }
        }
        Ok(DenseTransfer { n: self.n, data })
    }
}

impl<T: Scalar> Propagate<T> for TransferMatrix<T> {
    fn size(&self) -> usize {
        self.n
    }

    fn propagate_into(&self, v: &[T], out: &mut [f64]) {
        assert_eq!(v.len(), self.n, "vector length must equal matrix size");
        assert_eq!(out.len(), self.n, "output length must equal matrix size");
        out.par_iter_mut()
            .with_min_len(PAR_MIN_ROWS)
            .enumerate()
            .for_each(|(i, o)| {
                let (cols, ws) = self.row(i);
                *o = cols
                    .iter()
                    .zip(ws)
                    .map(|(&j, w)| w.wide() * v[j as usize].wide())
                    .sum();
            });
    }
}

/// Dense row-major `N x N` transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTransfer<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseTransfer<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.n, self.n], self.data.clone()).expect("dense transfer entries are finite")
    }

    pub fn max_abs_diff(&self, other: &DenseTransfer<T>) -> f64 {
        crate::scalar::max_abs_diff(&self.data, &other.data)
    }
}

impl<T: Scalar> Propagate<T> for DenseTransfer<T> {
    fn size(&self) -> usize {
        self.n
    }

    fn propagate_into(&self, v: &[T], out: &mut [f64]) {
        assert_eq!(v.len(), self.n, "vector length must equal matrix size");
        assert_eq!(out.len(), self.n, "output length must equal matrix size");
        out.par_iter_mut()
            .with_min_len(16)
            .enumerate()
            .for_each(|(i, o)| {
                *o = self.row(i).iter().zip(v).map(|(w, x)| w.wide() * x.wide()).sum();
            });
    }
}

/// `P m` for a prior; the result stays in `[0, 1]`.
pub fn spmv<T: Scalar, P: Propagate<T>>(p: &P, m: &Prior<T>) -> Result<Prior<T>> {
    if p.size() != m.len() {
        return Err(Error::shape(format!("{} pixels", p.size()), format!("{} pixels", m.len())));
    }
    let out = p
        .propagate(m.values())
        .into_iter()
        .map(|v| T::narrow(v.clamp(0.0, 1.0)))
        .collect();
    Ok(Prior::from_raw(m.height(), m.width(), out))
}

/// Pixel-major feature rows used for scoring, normalized for cosine.
fn scoring_rows<T: Scalar>(features: &FeatureMap<T>, similarity: Similarity) -> Vec<f64> {
    let mut rows = features.pixel_major();
    if similarity == Similarity::Cosine {
        for row in rows.chunks_exact_mut(features.channels()) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    rows
}

fn check_graph_args(n: usize, k: usize, temperature: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::KExceedsPixelCount { k, n });
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Higher score first; equal scores by ascending column.
#[inline]
fn rank_order(scores: &[f64], a: u32, b: u32) -> Ordering {
    scores[b as usize]
        .total_cmp(&scores[a as usize])
        .then(a.cmp(&b))
}

/// Sparse structure transfer matrix of the query features.
///
/// Row `i` scores every column `j` by `sim(f_i, f_j) / temperature`, keeps
/// the `k` best (ties to the lower column), and softmaxes the kept scores.
/// The diagonal competes like any other column. Entries whose weight
/// underflows to zero in `T` are dropped, so a row may hold fewer than `k`.
pub fn build_transfer<T: Scalar>(
    features: &FeatureMap<T>,
    k: usize,
    temperature: f64,
    similarity: Similarity,
) -> Result<TransferMatrix<T>> {
    let n = features.pixels();
    check_graph_args(n, k, temperature)?;
    if u32::try_from(n).is_err() {
        return Err(Error::InvalidParameter(format!("{n} pixels exceed u32 column ids")));
    }
    let c = features.channels();
    let rows = scoring_rows(features, similarity);

    let per_row: Vec<Vec<(u32, T)>> = (0..n)
        .into_par_iter()
        .with_min_len(16)
        .map_init(
            || (vec![0.0f64; n], Vec::<u32>::with_capacity(n)),
            |(scores, order), i| {
                let fi = &rows[i * c..(i + 1) * c];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(fi, &rows[j * c..(j + 1) * c]) / temperature;
                }
                order.clear();
                order.extend(0..n as u32);
                if k < n {
                    order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
                    order.truncate(k);
                }
                order.sort_unstable();
                softmax_row(scores, order)
            },
        )
        .collect();

    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::with_capacity(n * k);
    let mut weights = Vec::with_capacity(n * k);
    for row in per_row {
        for (j, w) in row {
            col_indices.push(j);
            weights.push(w);
        }
        row_offsets.push(col_indices.len());
    }
    Ok(TransferMatrix {
        n,
        row_offsets,
        col_indices,
        weights,
    })
}

fn softmax_row<T: Scalar>(scores: &[f64], kept: &[u32]) -> Vec<(u32, T)> {
    let max = kept.iter().map(|&j| scores[j as usize]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = kept.iter().map(|&j| (scores[j as usize] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    kept.iter()
        .zip(exps)
        .map(|(&j, e)| (j, T::narrow(e / total)))
        .filter(|(_, w)| *w > T::zero())
        .collect()
}

/// Literal dense evaluation: full score matrix, non-top-k entries set to
/// `-inf`, row softmax. Refuses more than [`DENSE_ORACLE_LIMIT`] pixels.
pub fn dense_transfer_oracle<T: Scalar>(
    features: &FeatureMap<T>,
    k: usize,
    temperature: f64,
    similarity: Similarity,
) -> Result<DenseTransfer<T>> {
    let n = features.pixels();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::OracleLimit {
            n,
            limit: DENSE_ORACLE_LIMIT,
        });
    }
    check_graph_args(n, k, temperature)?;
    let c = features.channels();
    let rows = scoring_rows(features, similarity);

    let data: Vec<T> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let fi = &rows[i * c..(i + 1) * c];
            let mut scores: Vec<f64> = (0..n).map(|j| dot(fi, &rows[j * c..(j + 1) * c]) / temperature).collect();
            // full sort, best first, ties to the lower column
            let mut ranked: Vec<usize> = (0..n).collect();
            ranked.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            for &j in &ranked[k..] {
                scores[j] = f64::NEG_INFINITY;
            }
            let max = scores[ranked[0]];
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(move |e| T::narrow(e / total))
        })
        .collect();
    Ok(DenseTransfer { n, data })
}
