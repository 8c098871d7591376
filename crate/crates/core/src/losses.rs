//! Training objectives: plain BCE for edges, boundary-weighted BCE and IoU
//! for masks, and the deep-supervision total.
//!
//! Every loss comes as a value function over `[N, 1, H, W]` logits and a
//! `_with_grad` variant returning the gradient with respect to the logits,
//! which is what the tape records.

use std::collections::BTreeMap;

use crate::autograd::{sigmoid, Tape, Var};
use crate::error::{Result, TvnetError};
use crate::model::{PredictionSet, PredictionVars};
use crate::tensor::{self, Tensor};

/// Side length of the box filter in the boundary weighting.
pub const WEIGHT_POOL: usize = 15;
/// Boundary emphasis factor in `1 + 5 * |pool(gt) - gt|`.
pub const WEIGHT_GAIN: f64 = 5.0;

fn check_same(logits: &Tensor, gt: &Tensor) -> Result<()> {
    if logits.shape() != gt.shape() {
        return Err(TvnetError::Shape(format!(
            "logits {:?} and ground truth {:?} differ",
            logits.shape(),
            gt.shape()
        )));
    }
    if logits.channels() != 1 {
        return Err(TvnetError::Shape(format!(
            "losses take single-channel maps, got {} channels",
            logits.channels()
        )));
    }
    Ok(())
}

fn check_binary(gt: &Tensor) -> Result<()> {
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(TvnetError::InvalidInput(
            "ground truth must be binary".into(),
        ));
    }
    Ok(())
}

/// `-[y ln s(x) + (1-y) ln(1-s(x))]` without overflow.
#[inline]
pub fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Resamples a binary map to `(height, width)` bilinearly and thresholds
/// at 0.5.
pub fn resample_binary(gt: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let t = tensor::resize_bilinear(gt, height, width)?;
    Ok(t.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

/// Mean binary cross-entropy over every pixel.
pub fn edge_bce(logits: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(edge_bce_with_grad(logits, gt)?.0)
}

pub fn edge_bce_with_grad(logits: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    check_same(logits, gt)?;
    check_binary(gt)?;
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(gt.data()) {
        total += bce_with_logits(x, y);
        *g = (sigmoid(x) - y) / n;
    }
    Ok((total / n, grad))
}

/// Per-pixel weights `1 + 5 * |mean15(gt) - gt|`, where the 15x15 box mean
/// counts zero padding.
pub fn pixel_weights(gt: &Tensor) -> Result<Tensor> {
    let pooled = tensor::avg_pool(gt, WEIGHT_POOL, 1, WEIGHT_POOL / 2)?;
    let mut w = pooled;
    for (v, &g) in w.data_mut().iter_mut().zip(gt.data()) {
        *v = 1.0 + WEIGHT_GAIN * (*v - g).abs();
    }
    Ok(w)
}

/// Boundary-weighted BCE: per image `sum(w * bce) / sum(w)`, averaged over
/// the batch.
pub fn weighted_bce(logits: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(weighted_bce_with_grad(logits, gt)?.0)
}

pub fn weighted_bce_with_grad(logits: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    check_same(logits, gt)?;
    let weights = pixel_weights(gt)?;
    let [n, _, h, w] = logits.shape();
    let hw = h * w;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for b in 0..n {
        let range = b * hw..(b + 1) * hw;
        let (x, y, wt) = (
            &logits.data()[range.clone()],
            &gt.data()[range.clone()],
            &weights.data()[range.clone()],
        );
        let wsum: f64 = wt.iter().sum();
        let mut acc = 0.0;
        for i in 0..hw {
            acc += wt[i] * bce_with_logits(x[i], y[i]);
        }
        total += acc / wsum;
        let g = &mut grad.data_mut()[range];
        for i in 0..hw {
            g[i] = wt[i] * (sigmoid(x[i]) - y[i]) / wsum / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Boundary-weighted soft IoU loss `1 - (I + 1) / (U - I + 1)` with
/// `I = sum(w p y)` and `U = sum(w (p + y))`, averaged over the batch.
pub fn weighted_iou(logits: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(weighted_iou_with_grad(logits, gt)?.0)
}

pub fn weighted_iou_with_grad(logits: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    check_same(logits, gt)?;
    let weights = pixel_weights(gt)?;
    let [n, _, h, w] = logits.shape();
    let hw = h * w;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for b in 0..n {
        let range = b * hw..(b + 1) * hw;
        let (x, y, wt) = (
            &logits.data()[range.clone()],
            &gt.data()[range.clone()],
            &weights.data()[range.clone()],
        );
        let p: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
        let mut inter = 0.0;
        let mut union = 0.0;
        for i in 0..hw {
            inter += wt[i] * p[i] * y[i];
            union += wt[i] * (p[i] + y[i]);
        }
        let num = inter + 1.0;
        let den = union - inter + 1.0;
        total += 1.0 - num / den;
        let g = &mut grad.data_mut()[range];
        for i in 0..hw {
            let d_ratio = wt[i] * (y[i] * den - num * (1.0 - y[i])) / (den * den);
            g[i] = -d_ratio * p[i] * (1.0 - p[i]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Records `loss(logits)` on the tape.
pub fn record(
    tape: &mut Tape,
    logits: Var,
    gt: &Tensor,
    loss: fn(&Tensor, &Tensor) -> Result<(f64, Tensor)>,
) -> Result<Var> {
    let (value, grad) = loss(tape.value(logits), gt)?;
    tape.scalar_fn(logits, value, grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub edge: f64,
    /// Weight of each supervised level, keyed 6, 5, 4, 3.
    pub levels: BTreeMap<u8, f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            edge: 1.0,
            levels: [(6, 1.0), (5, 1.0), (4, 1.0), (3, 1.0)]
                .into_iter()
                .collect(),
        }
    }
}

impl LossWeights {
    pub fn level(&self, level: u8) -> f64 {
        self.levels.get(&level).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub edge_loss: f64,
    /// Weighted BCE + weighted IoU per supervised level.
    pub per_level: BTreeMap<u8, f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn level(&self, level: u8) -> Option<f64> {
        self.per_level.get(&level).copied()
    }
}

/// Deep-supervision objective on the tape. Each prediction is resized up
/// to the mask size before the structure loss; edge ground truth is
/// resampled down to the edge logits.
pub fn total_loss(
    tape: &mut Tape,
    preds: &PredictionVars,
    mask_gt: &Tensor,
    edge_gt: &Tensor,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    check_binary(mask_gt)?;
    let (h, w) = mask_gt.spatial();
    let mut terms = Vec::new();
    let mut per_level = BTreeMap::new();
    for (level, p) in preds.levels() {
        let up = tape.resize(p, h, w)?;
        let bce = record(tape, up, mask_gt, weighted_bce_with_grad)?;
        let iou = record(tape, up, mask_gt, weighted_iou_with_grad)?;
        let value = tape.value(bce).data()[0] + tape.value(iou).data()[0];
        per_level.insert(level, value);
        let wl = weights.level(level);
        terms.push((bce, wl));
        terms.push((iou, wl));
    }
    let mut edge_loss = 0.0;
    if let Some(e) = preds.edge_logits {
        let (eh, ew) = tape.value(e).spatial();
        let target = resample_binary(edge_gt, eh, ew)?;
        let v = record(tape, e, &target, edge_bce_with_grad)?;
        edge_loss = tape.value(v).data()[0];
        terms.push((v, weights.edge));
    }
    let total = tape.linear_combination(&terms)?;
    let breakdown = LossBreakdown {
        edge_loss,
        per_level,
        total: tape.value(total).data()[0],
    };
    Ok((total, breakdown))
}

/// [`total_loss`] evaluated on stored predictions.
pub fn total_loss_values(
    preds: &PredictionSet,
    mask_gt: &Tensor,
    edge_gt: &Tensor,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let mut leaf = |t: &Option<Tensor>| t.as_ref().map(|t| tape.leaf(t.clone()));
    let edge_logits = leaf(&preds.edge_logits);
    let p5 = leaf(&preds.p5);
    let p4 = leaf(&preds.p4);
    let p3 = leaf(&preds.p3);
    let p6 = tape.leaf(preds.p6.clone());
    let final_prob = tape.leaf(preds.final_prob.clone());
    let vars = PredictionVars {
        edge_logits,
        p6,
        p5,
        p4,
        p3,
        final_logits: final_prob,
        final_prob,
    };
    Ok(total_loss(&mut tape, &vars, mask_gt, edge_gt, weights)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec([1, 1, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::zeros([2, 1, 3, 3]);
        let gt = Tensor::from_fn([2, 1, 3, 3], |i| (i % 2) as f64);
        let v = edge_bce(&logits, &gt).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_predictions_give_zero_loss() {
        let gt = map(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let logits = gt.map(|y| if y > 0.5 { 1e3 } else { -1e3 });
        assert!(edge_bce(&logits, &gt).unwrap() < 1e-12);
        assert!(weighted_bce(&logits, &gt).unwrap() < 1e-12);
        assert!(weighted_iou(&logits, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn all_background_with_negative_logits_is_zero() {
        let gt = Tensor::zeros([1, 1, 4, 4]);
        let logits = Tensor::full([1, 1, 4, 4], -1e3);
        assert_eq!(weighted_bce(&logits, &gt).unwrap(), 0.0);
    }

    #[test]
    fn non_binary_edge_target_is_rejected() {
        let gt = map(1, 2, &[0.5, 1.0]);
        assert!(edge_bce(&Tensor::zeros([1, 1, 1, 2]), &gt).is_err());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let gt = Tensor::zeros([1, 1, 4, 4]);
        assert!(weighted_bce(&Tensor::zeros([1, 1, 2, 2]), &gt).is_err());
        assert!(weighted_iou(&Tensor::zeros([1, 1, 4, 2]), &gt).is_err());
    }

    #[test]
    fn boundary_weights_exceed_interior() {
        let mut gt = Tensor::zeros([1, 1, 40, 40]);
        for y in 5..35 {
            for x in 5..35 {
                let i = gt.index(0, 0, y, x);
                gt.data_mut()[i] = 1.0;
            }
        }
        let w = pixel_weights(&gt).unwrap();
        let interior = w.at(0, 0, 20, 20);
        let boundary = w.at(0, 0, 5, 20);
        assert_eq!(interior, 1.0);
        assert!(boundary > interior);
    }

    #[test]
    fn resample_binary_keeps_values_binary() {
        let gt = Tensor::from_fn([1, 1, 8, 8], |i| ((i / 3) % 2) as f64);
        let r = resample_binary(&gt, 3, 5).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
