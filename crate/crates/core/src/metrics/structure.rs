//! Structure measure: object-aware plus region-aware similarity.

use crate::map::Map;

pub const DEFAULT_ALPHA: f64 = 0.5;

/// `alpha * object + (1 - alpha) * region`, clamped at zero. An empty
/// ground truth scores `1 - mean(pred)`, a full one `mean(pred)`.
pub fn s_measure(pred: &Map, gt: &Map, alpha: f64) -> f64 {
    let y = gt.mean();
    if y == 0.0 {
        return 1.0 - pred.mean();
    }
    if y == 1.0 {
        return pred.mean();
    }
    let score = alpha * object_score(pred, gt) + (1.0 - alpha) * region_score(pred, gt);
    score.max(0.0)
}

fn object_similarity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std)
}

fn object_score(pred: &Map, gt: &Map) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g > 0.5 {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = gt.mean();
    u * object_similarity(&fg) + (1.0 - u) * object_similarity(&bg)
}

/// Ground-truth centroid as 1-based `(column, row)`, rounded half away
/// from zero.
fn centroid(gt: &Map) -> (usize, usize) {
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0.0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if gt.get(y, x) > 0.5 {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
                count += 1.0;
            }
        }
    }
    if count == 0.0 {
        return (
            (gt.width() as f64 / 2.0).round() as usize,
            (gt.height() as f64 / 2.0).round() as usize,
        );
    }
    ((sx / count).round() as usize, (sy / count).round() as usize)
}

/// Block `rows x cols` of `m`.
fn block(m: &Map, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for y in rows {
        for x in cols.clone() {
            out.push(m.get(y, x));
        }
    }
    out
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    if n > 1 {
        for (&p, &g) in pred.iter().zip(gt) {
            sxx += (p - x) * (p - x);
            syy += (g - y) * (g - y);
            sxy += (p - x) * (g - y);
        }
        let d = nf - 1.0;
        sxx /= d;
        syy /= d;
        sxy /= d;
    }
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pred: &Map, gt: &Map) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let (cx, cy) = centroid(gt);
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let quads = [
        (0..cy, 0..cx, w1),
        (0..cy, cx..w, w2),
        (cy..h, 0..cx, w3),
        (cy..h, cx..w, w4),
    ];
    quads
        .into_iter()
        .map(|(rows, cols, weight)| {
            let p = block(pred, rows.clone(), cols.clone());
            let g = block(gt, rows, cols);
            weight * ssim(&p, &g)
        })
        .sum()
}
