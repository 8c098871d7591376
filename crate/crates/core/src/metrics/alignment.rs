//! Enhanced alignment measure.

use super::threshold::{sweep, Confusion};
use crate::map::Map;

/// Alignment score of a binarized prediction summarized by `c`.
///
/// Each pixel contributes `(1 + 2ab / (a^2 + b^2))^2 / 4`, where `a` and
/// `b` are the prediction and ground truth minus their means. Pixels fall
/// into four classes (tp, fp, fn, tn), so the sum needs only counts.
pub fn e_measure_from_counts(c: &Confusion) -> f64 {
    let n = c.total() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let gt_fg = c.actual();
    if gt_fg == 0 {
        return if c.predicted() == 0 { 1.0 } else { 0.0 };
    }
    if gt_fg == c.total() {
        return c.predicted() as f64 / n;
    }
    let mu_pred = c.predicted() as f64 / n;
    let mu_gt = gt_fg as f64 / n;
    let part = |count: usize, pred: f64, gt: f64| {
        if count == 0 {
            return 0.0;
        }
        let a = pred - mu_pred;
        let b = gt - mu_gt;
        let align = 2.0 * a * b / (a * a + b * b);
        count as f64 * (align + 1.0).powi(2) / 4.0
    };
    let sum =
        part(c.tp, 1.0, 1.0) + part(c.fp, 1.0, 0.0) + part(c.fn_, 0.0, 1.0) + part(c.tn, 0.0, 0.0);
    sum / n
}

/// Alignment score at every cut.
pub fn e_measure_curve(pred: &Map, gt: &Map) -> Vec<f64> {
    sweep(pred, gt).iter().map(e_measure_from_counts).collect()
}

/// Maximum alignment score over the 256 cuts.
pub fn e_measure_max(pred: &Map, gt: &Map) -> f64 {
    e_measure_curve(pred, gt).into_iter().fold(0.0, f64::max)
}

/// Alignment at the adaptive cut `min(2 * mean(pred), 1)`.
pub fn e_measure_adaptive(pred: &Map, gt: &Map) -> f64 {
    let t = (2.0 * pred.mean()).min(1.0);
    e_measure_from_counts(&Confusion::at(pred, gt, t))
}
