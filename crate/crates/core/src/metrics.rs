//! Dual priors, binarization, K-shot fusion and IoU-based evaluation.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BinaryMask, Prior, Tensor};

/// Foreground prior paired with a background prior of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrior<T> {
    pub foreground: Prior<T>,
    pub background: Prior<T>,
}

impl<T: Scalar> DualPrior<T> {
    /// Channel-stacked `2 x H x W` tensor, foreground first.
    pub fn to_tensor(&self) -> Tensor<T> {
        let mut data = self.foreground.values().to_vec();
        data.extend_from_slice(self.background.values());
        Tensor::new(vec![2, self.foreground.height(), self.foreground.width()], data)
            .expect("priors are finite")
    }
}

/// Pairs `m_star` with `m_bg`, or with its complement `1 - m_star` when no
/// background prior is supplied.
pub fn make_dual_prior<T: Scalar>(m_star: &Prior<T>, m_bg: Option<&Prior<T>>) -> Result<DualPrior<T>> {
    let background = match m_bg {
        Some(bg) => {
            m_star.check_same_shape(bg)?;
            bg.clone()
        }
        None => m_star.complement(),
    };
    Ok(DualPrior {
        foreground: m_star.clone(),
        background,
    })
}

/// 1 where `m > threshold` (strict), else 0.
pub fn binarize<T: Scalar>(m: &Prior<T>, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold must be in (0, 1), got {threshold}")));
    }
    BinaryMask::from_bools(m.height(), m.width(), m.values().iter().map(|v| v.wide() > threshold))
}

/// Pixelwise mean of K priors.
pub fn kshot_fuse<T: Scalar>(priors: &[Prior<T>]) -> Result<Prior<T>> {
    let first = priors.first().ok_or(Error::EmptyInput("k-shot prior list"))?;
    for p in &priors[1..] {
        first.check_same_shape(p)?;
    }
    let k = priors.len() as f64;
    let values = (0..first.len())
        .map(|i| {
            let sum: f64 = priors.iter().map(|p| p.values()[i].wide()).sum();
            T::narrow((sum / k).clamp(0.0, 1.0))
        })
        .collect();
    Ok(Prior::from_raw(first.height(), first.width(), values))
}

/// `(|a & b|, |a | b|)`.
fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> (u64, u64) {
    pred.values().iter().zip(gt.values()).fold((0, 0), |(i, u), (&a, &b)| {
        (i + u64::from(a & b), u + u64::from(a | b))
    })
}

fn ratio(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (i, u) = overlap(pred, gt);
    Ok(ratio(i, u))
}

/// Mean of foreground IoU and background (complement) IoU.
pub fn fb_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (fi, fu) = overlap(pred, gt);
    let n = pred.len() as u64;
    // background: both zero = n - |p | g|; either zero = n - |p & g|
    let (bi, bu) = (n - fu, n - fi);
    Ok((ratio(fi, fu) + ratio(bi, bu)) / 2.0)
}

/// One evaluated episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub pred: BinaryMask,
    pub gt: BinaryMask,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class_iou: BTreeMap<u32, f64>,
    pub miou: f64,
    pub fb_iou: f64,
}

/// Per-class IoU from intersections and unions summed over that class's
/// episodes; mIoU is the unweighted class mean; FB-IoU the episode mean.
pub fn evaluate_episodes(episodes: &[Episode]) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("episodes"));
    }
    let mut totals: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    let mut fb_sum = 0.0;
    for ep in episodes {
        ep.pred.check_same_shape(&ep.gt)?;
        let (i, u) = overlap(&ep.pred, &ep.gt);
        let entry = totals.entry(ep.class_id).or_default();
        entry.0 += i;
        entry.1 += u;
        fb_sum += fb_iou(&ep.pred, &ep.gt)?;
    }
    let per_class_iou: BTreeMap<u32, f64> = totals.into_iter().map(|(c, (i, u))| (c, ratio(i, u))).collect();
    let miou = per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64;
    Ok(EvalReport {
        per_class_iou,
        miou,
        fb_iou: fb_sum / episodes.len() as f64,
    })
}

impl fmt::Display for EvalReport {
    /// `class=<id> iou=<v>` per class, then `miou=<v>` and `fbiou=<v>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (class, v) in &self.per_class_iou {
            writeln!(f, "class={class} iou={v}")?;
        }
        writeln!(f, "miou={}", self.miou)?;
        writeln!(f, "fbiou={}", self.fb_iou)
    }
}
