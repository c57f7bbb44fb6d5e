//! Initial semantic prior: masked-average prototype, cosine similarity
//! against the query, min-max normalization.

use crate::error::{Error, Result};
use crate::scalar::{min_max, Scalar};
use crate::tensor::{FeatureMap, Prior, Tensor};

/// Support masks whose total weight is at or below this are treated as empty.
pub const EMPTY_MASK_EPS: f64 = 1e-12;

/// Below this spread a raw prior is treated as constant.
pub const CONSTANT_RANGE_EPS: f64 = 1e-12;

/// Mask-weighted mean feature vector of the target class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<T> {
    channels: Vec<T>,
}

impl<T: Scalar> Prototype<T> {
    pub fn new(channels: Vec<T>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptyInput("prototype channels"));
        }
        if let Some(index) = channels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if channels.iter().all(|v| v.is_zero()) {
            return Err(Error::ZeroPrototype);
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[T] {
        &self.channels
    }

    pub fn norm(&self) -> f64 {
        self.channels.iter().map(|v| v.wide() * v.wide()).sum::<f64>().sqrt()
    }
}

/// `proto[c] = sum_hw f[c,h,w] m[h,w] / sum_hw m[h,w]`.
pub fn masked_average_pool<T: Scalar>(features: &FeatureMap<T>, mask: &Prior<T>) -> Result<Prototype<T>> {
    if (features.height(), features.width()) != mask.shape() {
        return Err(Error::shape((features.height(), features.width()), mask.shape()));
    }
    let weights: Vec<f64> = mask.values().iter().map(|v| v.wide()).collect();
    let total: f64 = weights.iter().sum();
    if total <= EMPTY_MASK_EPS {
        return Err(Error::EmptySupportMask);
    }
    let n = features.pixels();
    let channels = features
        .data()
        .chunks_exact(n)
        .map(|plane| {
            let acc: f64 = plane.iter().zip(&weights).map(|(f, w)| f.wide() * w).sum();
            T::narrow(acc / total)
        })
        .collect();
    Prototype::new(channels)
}

/// Per-pixel cosine similarity to the prototype, an `H x W` tensor in
/// `[-1, 1]`. Zero-norm query pixels score 0.
pub fn cosine_prior<T: Scalar>(query: &FeatureMap<T>, proto: &Prototype<T>) -> Result<Tensor<T>> {
    if query.channels() != proto.channels().len() {
        return Err(Error::shape(
            format!("{} channels", proto.channels().len()),
            format!("{} channels", query.channels()),
        ));
    }
    let p: Vec<f64> = proto.channels().iter().map(|v| v.wide()).collect();
    let p_norm = proto.norm();
    let n = query.pixels();
    let mut dot = vec![0.0f64; n];
    let mut sq = vec![0.0f64; n];
    for (plane, &pc) in query.data().chunks_exact(n).zip(&p) {
        for (i, f) in plane.iter().enumerate() {
            let f = f.wide();
            dot[i] += f * pc;
            sq[i] += f * f;
        }
    }
    let out = dot
        .iter()
        .zip(&sq)
        .map(|(&d, &s)| {
            let denom = s.sqrt() * p_norm;
            if denom > 0.0 {
                T::narrow((d / denom).clamp(-1.0, 1.0))
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(vec![query.height(), query.width()], out)
}

/// `(raw - min) / (max - min)`; a constant input maps to all zeros.
pub fn minmax_normalize<T: Scalar>(raw: &Tensor<T>) -> Result<Prior<T>> {
    let (h, w) = raw.spatial_dims()?;
    let (lo, hi) = min_max(raw.data()).ok_or(Error::EmptyInput("raw prior"))?;
    let range = hi - lo;
    let values = if range > CONSTANT_RANGE_EPS {
        raw.data()
            .iter()
            .map(|v| T::narrow(((v.wide() - lo) / range).clamp(0.0, 1.0)))
            .collect()
    } else {
        vec![T::zero(); raw.len()]
    };
    Ok(Prior::from_raw(h, w, values))
}

/// Prototype from `(support, mask)`, matched against `query`, normalized.
/// The mask is area-resampled to the support feature resolution first.
pub fn initial_prior<T: Scalar>(
    support: &FeatureMap<T>,
    support_mask: &Prior<T>,
    query: &FeatureMap<T>,
) -> Result<Prior<T>> {
    let mask = support_mask.resample_area(support.height(), support.width())?;
    let proto = masked_average_pool(support, &mask)?;
    minmax_normalize(&cosine_prior(query, &proto)?)
}
