//! Precision-recall based measures: mean F over cuts and the
//! distance-weighted F.

use super::threshold::{sweep, Confusion};
use crate::map::Map;

/// beta^2 for the swept and adaptive F measures.
pub const BETA2: f64 = 0.3;
/// beta^2 for the weighted F measure.
pub const WEIGHTED_BETA2: f64 = 1.0;

/// F score of one binarized prediction. An empty ground truth scores 1
/// when nothing is predicted and 0 otherwise.
pub fn f_beta_from_counts(c: &Confusion, beta2: f64) -> f64 {
    if c.actual() == 0 {
        return if c.predicted() == 0 { 1.0 } else { 0.0 };
    }
    if c.tp == 0 {
        return 0.0;
    }
    let precision = c.tp as f64 / c.predicted() as f64;
    let recall = c.tp as f64 / c.actual() as f64;
    (1.0 + beta2) * precision * recall / (beta2 * precision + recall)
}

pub fn f_beta_curve(pred: &Map, gt: &Map) -> Vec<f64> {
    sweep(pred, gt)
        .iter()
        .map(|c| f_beta_from_counts(c, BETA2))
        .collect()
}

/// F score averaged over the 256 cuts.
pub fn f_beta_mean(pred: &Map, gt: &Map) -> f64 {
    let curve = f_beta_curve(pred, gt);
    curve.iter().sum::<f64>() / curve.len() as f64
}

/// F score at the adaptive cut `min(2 * mean(pred), 1)`.
pub fn f_beta_adaptive(pred: &Map, gt: &Map) -> f64 {
    let t = (2.0 * pred.mean()).min(1.0);
    f_beta_from_counts(&Confusion::at(pred, gt, t), BETA2)
}

/// Euclidean distance to the nearest foreground pixel and that pixel's
/// flat index, for every pixel. Among equidistant candidates the one with
/// the smallest `(row, column)` wins. Requires a non-empty foreground.
pub fn nearest_foreground(gt: &Map) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = (gt.height(), gt.width());
    // Per column: nearest foreground row, preferring the upper one on ties.
    let mut col_row: Vec<Option<usize>> = vec![None; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if gt.get(y, x) > 0.5 {
                last = Some(y);
            }
            col_row[y * w + x] = last;
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if gt.get(y, x) > 0.5 {
                next = Some(y);
            }
            let up = col_row[y * w + x];
            col_row[y * w + x] = match (up, next) {
                (Some(u), Some(d)) => Some(if y - u <= d - y { u } else { d }),
                (u, d) => u.or(d),
            };
        }
    }
    // Per row: minimise (d^2, row, column) over the column candidates.
    let mut dist = vec![0.0; h * w];
    let mut index = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, usize, usize)> = None;
            for cx in 0..w {
                if let Some(ry) = col_row[y * w + cx] {
                    let dy = ry.abs_diff(y);
                    let dx = cx.abs_diff(x);
                    let key = (dy * dy + dx * dx, ry, cx);
                    if best.is_none_or(|b| key < b) {
                        best = Some(key);
                    }
                }
            }
            let (d2, ry, cx) = best.expect("foreground is non-empty");
            dist[y * w + x] = (d2 as f64).sqrt();
            index[y * w + x] = ry * w + cx;
        }
    }
    (dist, index)
}

/// Normalized 7x7 Gaussian with sigma 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let sigma2 = 2.0 * 5.0f64 * 5.0;
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / sigma2).exp();
            sum += *v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= sum;
        }
    }
    k
}

/// Weighted F measure: errors are propagated from each background pixel's
/// nearest foreground pixel, smoothed, and background errors are weighted
/// up with distance from the object.
pub fn f_beta_weighted(pred: &Map, gt: &Map) -> f64 {
    let fg_count = gt.data().iter().filter(|&&g| g > 0.5).count();
    if fg_count == 0 {
        return if pred.data().iter().all(|&p| p == 0.0) {
            1.0
        } else {
            0.0
        };
    }
    let (h, w) = (gt.height(), gt.width());
    let is_fg: Vec<bool> = gt.data().iter().map(|&g| g > 0.5).collect();
    let err: Vec<f64> = pred
        .data()
        .iter()
        .zip(&is_fg)
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .collect();
    let (dist, nearest) = nearest_foreground(gt);
    let propagated: Vec<f64> = (0..h * w)
        .map(|i| if is_fg[i] { err[i] } else { err[nearest[i]] })
        .collect();

    let kernel = gaussian_kernel();
    let mut weighted_err = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let min_err = if is_fg[i] {
                let mut smoothed = 0.0;
                for (ky, krow) in kernel.iter().enumerate() {
                    let sy = y as isize + ky as isize - 3;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for (kx, kv) in krow.iter().enumerate() {
                        let sx = x as isize + kx as isize - 3;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        smoothed += kv * propagated[sy as usize * w + sx as usize];
                    }
                }
                smoothed.min(err[i])
            } else {
                err[i]
            };
            let importance = if is_fg[i] {
                1.0
            } else {
                2.0 - (0.5f64.ln() / 5.0 * dist[i]).exp()
            };
            weighted_err[i] = min_err * importance;
        }
    }

    let fg_err: f64 = (0..h * w)
        .filter(|&i| is_fg[i])
        .map(|i| weighted_err[i])
        .sum();
    let bg_err: f64 = (0..h * w)
        .filter(|&i| !is_fg[i])
        .map(|i| weighted_err[i])
        .sum();
    let tp = fg_count as f64 - fg_err;
    let recall = 1.0 - fg_err / fg_count as f64;
    let precision = if tp + bg_err > 0.0 {
        tp / (tp + bg_err)
    } else {
        0.0
    };
    let denom = WEIGHTED_BETA2 * precision + recall;
    if denom <= 0.0 {
        return 0.0;
    }
    (1.0 + WEIGHTED_BETA2) * precision * recall / denom
}
