//! Pixel error and overlap measures.

use super::threshold::{sweep, Confusion};
use crate::map::Map;

pub fn mae(pred: &Map, gt: &Map) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n
}

/// `(dice, iou)` of one binarized prediction. An empty ground truth scores
/// `(1, 1)` when nothing is predicted and `(0, 0)` otherwise.
pub fn dice_iou_from_counts(c: &Confusion) -> (f64, f64) {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        return (1.0, 1.0);
    }
    let dice = 2.0 * c.tp as f64 / (c.predicted() + c.actual()) as f64;
    let iou = c.tp as f64 / union as f64;
    (dice, iou)
}

/// Dice and IoU at every cut.
pub fn dice_iou_curve(pred: &Map, gt: &Map) -> Vec<(f64, f64)> {
    sweep(pred, gt).iter().map(dice_iou_from_counts).collect()
}

/// Dice and IoU averaged over the 256 cuts.
pub fn m_dice_iou(pred: &Map, gt: &Map) -> (f64, f64) {
    let curve = dice_iou_curve(pred, gt);
    let n = curve.len() as f64;
    let (d, i) = curve
        .iter()
        .fold((0.0, 0.0), |(a, b), &(d, i)| (a + d, b + i));
    (d / n, i / n)
}

/// Dice and IoU at the adaptive cut `min(2 * mean(pred), 1)`.
pub fn dice_iou_adaptive(pred: &Map, gt: &Map) -> (f64, f64) {
    let t = (2.0 * pred.mean()).min(1.0);
    dice_iou_from_counts(&Confusion::at(pred, gt, t))
}
