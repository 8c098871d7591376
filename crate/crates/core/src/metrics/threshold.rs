//! Threshold sweeps and per-threshold confusion counts.

use crate::map::Map;

/// Number of binarization cuts in every swept metric.
pub const NUM_THRESHOLDS: usize = 256;

/// Cut `k` sits at `(k + 0.5) / 256`, so no cut coincides with 0 or 1 and
/// a binary prediction binarizes to itself at every cut.
pub fn threshold(k: usize) -> f64 {
    (k as f64 + 0.5) / NUM_THRESHOLDS as f64
}

pub fn thresholds() -> [f64; NUM_THRESHOLDS] {
    std::array::from_fn(threshold)
}

/// Pixel counts of a binarized prediction against a binary ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// Counts at a single cut `pred >= t`.
    pub fn at(pred: &Map, gt: &Map, t: f64) -> Confusion {
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p >= t, g > 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }

    pub fn actual(&self) -> usize {
        self.tp + self.fn_
    }
}

/// Confusion counts at every cut in one pass: each pixel is bucketed by how
/// many cuts it clears.
pub fn sweep(pred: &Map, gt: &Map) -> Vec<Confusion> {
    let cuts = thresholds();
    let mut fg_hist = [0usize; NUM_THRESHOLDS + 1];
    let mut bg_hist = [0usize; NUM_THRESHOLDS + 1];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let passed = cuts.partition_point(|&t| t <= p);
        if g > 0.5 {
            fg_hist[passed] += 1;
        } else {
            bg_hist[passed] += 1;
        }
    }
    let fg_total: usize = fg_hist.iter().sum();
    let bg_total: usize = bg_hist.iter().sum();
    // Pixels positive at cut k are those that cleared more than k cuts.
    let mut out = vec![Confusion::default(); NUM_THRESHOLDS];
    let (mut fg_above, mut bg_above) = (0, 0);
    for k in (0..NUM_THRESHOLDS).rev() {
        fg_above += fg_hist[k + 1];
        bg_above += bg_hist[k + 1];
        out[k] = Confusion {
            tp: fg_above,
            fp: bg_above,
            fn_: fg_total - fg_above,
            tn: bg_total - bg_above,
        };
    }
    out
}
