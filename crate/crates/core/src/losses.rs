//! Dice and binary cross-entropy losses with analytic gradients, and the
//! two-stage weighted total.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BinaryMask, Prior};

/// Added to the Dice denominator. Two empty maps therefore score a loss of 1.
pub const DICE_GUARD: f64 = 1e-8;

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the logs.
pub const BCE_CLAMP: f64 = 1e-7;

pub const DEFAULT_INIT_WEIGHT: f64 = 0.3;
pub const DEFAULT_REFINE_WEIGHT: f64 = 0.7;

/// Loss value with its gradient with respect to each predicted pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Graded {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check<T: Scalar>(pred: &Prior<T>, gt: &BinaryMask) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(gt.shape(), pred.shape()));
    }
    Ok(())
}

/// `1 - 2 sum(y p) / (sum(y^2) + sum(p^2) + guard)`.
pub fn dice_loss<T: Scalar>(pred: &Prior<T>, gt: &BinaryMask) -> Result<Graded> {
    check(pred, gt)?;
    let (mut inter, mut denom) = (0.0, DICE_GUARD);
    for (p, &y) in pred.values().iter().zip(gt.values()) {
        let (p, y) = (p.wide(), f64::from(y));
        inter += y * p;
        denom += y * y + p * p;
    }
    let value = 1.0 - 2.0 * inter / denom;
    // d/dp_k = (4 I p_k - 2 y_k S) / S^2
    let grad = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, &y)| (4.0 * inter * p.wide() - 2.0 * f64::from(y) * denom) / (denom * denom))
        .collect();
    Ok(Graded { value, grad })
}

/// Mean binary cross-entropy over all pixels. The gradient is taken with
/// respect to the unclamped prediction and is zero where the clamp binds.
pub fn bce_loss<T: Scalar>(pred: &Prior<T>, gt: &BinaryMask) -> Result<Graded> {
    check(pred, gt)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, &y) in pred.values().iter().zip(gt.values()) {
        let raw = p.wide();
        let c = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = f64::from(y);
        sum += y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        let inside = raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP;
        grad.push(if inside { -(y / c - (1.0 - y) / (1.0 - c)) / n } else { 0.0 });
    }
    Ok(Graded { value: -sum / n, grad })
}

/// Dice plus BCE for one prediction, summed without weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub dice: f64,
    pub bce: f64,
    /// d total / d pred.
    pub grad: Vec<f64>,
}

pub fn stage_loss<T: Scalar>(pred: &Prior<T>, gt: &BinaryMask) -> Result<LossValue> {
    let dice = dice_loss(pred, gt)?;
    let bce = bce_loss(pred, gt)?;
    Ok(LossValue {
        total: dice.value + bce.value,
        dice: dice.value,
        bce: bce.value,
        grad: dice.grad.iter().zip(&bce.grad).map(|(a, b)| a + b).collect(),
    })
}

/// Weighted two-stage loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    /// `w_init * initial.total + w_refine * refined.total`.
    pub total: f64,
    pub initial: LossValue,
    pub refined: LossValue,
    /// d total / d initial_pred.
    pub grad_initial: Vec<f64>,
    /// d total / d refined_pred.
    pub grad_refined: Vec<f64>,
}

pub fn total_loss<T: Scalar>(
    initial_pred: &Prior<T>,
    refined_pred: &Prior<T>,
    gt: &BinaryMask,
    w_init: f64,
    w_refine: f64,
) -> Result<TotalLoss> {
    if !(w_init >= 0.0 && w_refine >= 0.0 && w_init.is_finite() && w_refine.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "stage weights must be finite and >= 0, got {w_init} and {w_refine}"
        )));
    }
    let initial = stage_loss(initial_pred, gt)?;
    let refined = stage_loss(refined_pred, gt)?;
    Ok(TotalLoss {
        total: w_init * initial.total + w_refine * refined.total,
        grad_initial: initial.grad.iter().map(|g| w_init * g).collect(),
        grad_refined: refined.grad.iter().map(|g| w_refine * g).collect(),
        initial,
        refined,
    })
}

/// [`total_loss`] with the default 0.3 / 0.7 stage weights.
pub fn default_total_loss<T: Scalar>(initial_pred: &Prior<T>, refined_pred: &Prior<T>, gt: &BinaryMask) -> Result<TotalLoss> {
    total_loss(initial_pred, refined_pred, gt, DEFAULT_INIT_WEIGHT, DEFAULT_REFINE_WEIGHT)
}
