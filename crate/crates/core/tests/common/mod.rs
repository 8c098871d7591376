//! Shared test support: brute-force metric and loss oracles written
//! straight from their definitions, a finite-difference gradient checker,
//! and small fixtures.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvnet::autograd::{Tape, Var};
use tvnet::data::SynthConfig;
use tvnet::model::{BackboneSpec, Bound, ParamStore};
use tvnet::training::{OptimizerKind, TrainConfig};
use tvnet::{Map, Tensor};

const EPS: f64 = f64::EPSILON;

// ---------------------------------------------------------------- metrics

pub fn cuts() -> Vec<f64> {
    (0..256).map(|k| (k as f64 + 0.5) / 256.0).collect()
}

fn binarize(pred: &Map, t: f64) -> Vec<bool> {
    pred.data().iter().map(|&p| p >= t).collect()
}

fn fg(gt: &Map) -> Vec<bool> {
    gt.data().iter().map(|&g| g > 0.5).collect()
}

pub fn mae(pred: &Map, gt: &Map) -> f64 {
    let mut s = 0.0;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            s += (pred.get(y, x) - gt.get(y, x)).abs();
        }
    }
    s / (gt.height() * gt.width()) as f64
}

/// Dice and IoU of one cut, straight from the set definitions.
pub fn dice_iou_at(pred: &Map, gt: &Map, t: f64) -> (f64, f64) {
    let p = binarize(pred, t);
    let g = fg(gt);
    let inter = p.iter().zip(&g).filter(|(a, b)| **a && **b).count() as f64;
    let union = p.iter().zip(&g).filter(|(a, b)| **a || **b).count() as f64;
    let sizes = (p.iter().filter(|a| **a).count() + g.iter().filter(|b| **b).count()) as f64;
    if union == 0.0 {
        (1.0, 1.0)
    } else {
        (2.0 * inter / sizes, inter / union)
    }
}

pub fn m_dice_iou(pred: &Map, gt: &Map) -> (f64, f64) {
    let curve: Vec<_> = cuts()
        .into_iter()
        .map(|t| dice_iou_at(pred, gt, t))
        .collect();
    let n = curve.len() as f64;
    (
        curve.iter().map(|c| c.0).sum::<f64>() / n,
        curve.iter().map(|c| c.1).sum::<f64>() / n,
    )
}

pub fn f_beta_at(pred: &Map, gt: &Map, t: f64) -> f64 {
    let p = binarize(pred, t);
    let g = fg(gt);
    let tp = p.iter().zip(&g).filter(|(a, b)| **a && **b).count() as f64;
    let predicted = p.iter().filter(|a| **a).count() as f64;
    let actual = g.iter().filter(|b| **b).count() as f64;
    if actual == 0.0 {
        return if predicted == 0.0 { 1.0 } else { 0.0 };
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (precision, recall) = (tp / predicted, tp / actual);
    1.3 * precision * recall / (0.3 * precision + recall)
}

pub fn f_beta_mean(pred: &Map, gt: &Map) -> f64 {
    cuts()
        .into_iter()
        .map(|t| f_beta_at(pred, gt, t))
        .sum::<f64>()
        / 256.0
}

/// Per-pixel alignment matrix of one binarized prediction.
pub fn e_measure_at(pred: &Map, gt: &Map, t: f64) -> f64 {
    let p: Vec<f64> = binarize(pred, t)
        .into_iter()
        .map(|b| b as u8 as f64)
        .collect();
    let g: Vec<f64> = fg(gt).into_iter().map(|b| b as u8 as f64).collect();
    let n = p.len() as f64;
    let gt_sum: f64 = g.iter().sum();
    let pred_sum: f64 = p.iter().sum();
    if gt_sum == 0.0 {
        return if pred_sum == 0.0 { 1.0 } else { 0.0 };
    }
    if gt_sum == n {
        return pred_sum / n;
    }
    let (mp, mg) = (pred_sum / n, gt_sum / n);
    let mut total = 0.0;
    for (a, b) in p.iter().zip(&g) {
        let (a, b) = (a - mp, b - mg);
        let align = 2.0 * a * b / (a * a + b * b);
        total += (1.0 + align).powi(2) / 4.0;
    }
    total / n
}

pub fn e_measure_max(pred: &Map, gt: &Map) -> f64 {
    cuts()
        .into_iter()
        .map(|t| e_measure_at(pred, gt, t))
        .fold(0.0, f64::max)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for i in 0..p.len() {
        sx += (p[i] - x).powi(2);
        sy += (g[i] - y).powi(2);
        sxy += (p[i] - x) * (g[i] - y);
    }
    let d = (n - 1.0).max(1.0);
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure written as the reference toolbox computes it.
pub fn s_measure(pred: &Map, gt: &Map) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let g = fg(gt);
    let y = g.iter().filter(|b| **b).count() as f64 / (h * w) as f64;
    if y == 0.0 {
        return 1.0 - pred.mean();
    }
    if y == 1.0 {
        return pred.mean();
    }
    // Object part.
    let fg_vals: Vec<f64> = (0..h * w)
        .filter(|&i| g[i])
        .map(|i| pred.data()[i])
        .collect();
    let bg_vals: Vec<f64> = (0..h * w)
        .filter(|&i| !g[i])
        .map(|i| 1.0 - pred.data()[i])
        .collect();
    let obj = |v: &[f64]| {
        let (m, s) = mean_std(v);
        2.0 * m / (m * m + 1.0 + s + EPS)
    };
    let so = y * obj(&fg_vals) + (1.0 - y) * obj(&bg_vals);
    // Region part: split at the 1-based rounded centroid.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut cnt = 0.0;
    for r in 0..h {
        for c in 0..w {
            if g[r * w + c] {
                sx += (c + 1) as f64;
                sy += (r + 1) as f64;
                cnt += 1.0;
            }
        }
    }
    let cx = (sx / cnt).round() as usize;
    let cy = (sy / cnt).round() as usize;
    let area = (h * w) as f64;
    let quads = [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ];
    let weights = [
        (cx * cy) as f64 / area,
        ((w - cx) * cy) as f64 / area,
        (cx * (h - cy)) as f64 / area,
        ((w - cx) * (h - cy)) as f64 / area,
    ];
    let mut sr = 0.0;
    for ((r0, r1, c0, c1), wt) in quads.into_iter().zip(weights) {
        if r1 <= r0 || c1 <= c0 {
            continue;
        }
        let mut p = Vec::new();
        let mut q = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pred.get(r, c));
                q.push(gt.get(r, c));
            }
        }
        sr += wt * ssim(&p, &q);
    }
    (0.5 * so + 0.5 * sr).max(0.0)
}

/// Weighted F measure with exhaustive nearest-foreground search (ties go
/// to the smallest `(row, column)`) and a direct zero-padded 7x7 Gaussian.
pub fn f_beta_weighted(pred: &Map, gt: &Map) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let g = fg(gt);
    let fg_px: Vec<(usize, usize)> = (0..h * w)
        .filter(|&i| g[i])
        .map(|i| (i / w, i % w))
        .collect();
    if fg_px.is_empty() {
        return if pred.data().iter().all(|&p| p == 0.0) {
            1.0
        } else {
            0.0
        };
    }
    let e: Vec<f64> = (0..h * w)
        .map(|i| (pred.data()[i] - g[i] as u8 as f64).abs())
        .collect();
    let mut dist = vec![0.0; h * w];
    let mut et = e.clone();
    for i in 0..h * w {
        if g[i] {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let best = fg_px
            .iter()
            .map(|&(fy, fx)| (fy.abs_diff(y).pow(2) + fx.abs_diff(x).pow(2), fy, fx))
            .min()
            .unwrap();
        dist[i] = (best.0 as f64).sqrt();
        et[i] = e[best.1 * w + best.2];
    }
    let mut k = [[0.0; 7]; 7];
    let mut ksum = 0.0;
    for (a, row) in k.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (a as f64 - 3.0, b as f64 - 3.0);
            *v = (-(dy * dy + dx * dx) / 50.0).exp();
            ksum += *v;
        }
    }
    let mut ew = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut ea = 0.0;
            for (a, row) in k.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    let (sy, sx) = (y as i64 + a as i64 - 3, x as i64 + b as i64 - 3);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        ea += v / ksum * et[sy as usize * w + sx as usize];
                    }
                }
            }
            let min_e = if g[i] && ea < e[i] { ea } else { e[i] };
            let b = if g[i] {
                1.0
            } else {
                2.0 - ((0.5f64).ln() / 5.0 * dist[i]).exp()
            };
            ew[i] = min_e * b;
        }
    }
    let n_fg = fg_px.len() as f64;
    let fg_err: f64 = (0..h * w).filter(|&i| g[i]).map(|i| ew[i]).sum();
    let fp: f64 = (0..h * w).filter(|&i| !g[i]).map(|i| ew[i]).sum();
    let tp = n_fg - fg_err;
    let r = 1.0 - fg_err / n_fg;
    let p = tp / (EPS + tp + fp);
    2.0 * r * p / (EPS + r + p)
}

/// All seven measures in report column order.
pub fn all_metrics(pred: &Map, gt: &Map) -> [f64; 7] {
    let (d, i) = m_dice_iou(pred, gt);
    [
        s_measure(pred, gt),
        e_measure_max(pred, gt),
        f_beta_weighted(pred, gt),
        f_beta_mean(pred, gt),
        mae(pred, gt),
        d,
        i,
    ]
}

/// A random `(prediction, ground truth)` pair: smooth-ish or noisy
/// predictions, blob or scattered ground truth.
pub fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Map, Map) {
    let kind = rng.gen_range(0..4);
    let gt = match kind {
        0 => {
            let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
            let r = rng.gen_range(1.0..4.0);
            Map::from_fn(h, w, |y, x| {
                ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r) as u8 as f64
            })
        }
        _ => {
            let density = rng.gen_range(0.05..0.6);
            Map::from_fn(h, w, |_, _| (rng.gen::<f64>() < density) as u8 as f64)
        }
    };
    let pred = match rng.gen_range(0..3) {
        0 => Map::from_fn(h, w, |_, _| rng.gen::<f64>()),
        1 => {
            let noise = rng.gen_range(0.0..0.5);
            let g = gt.clone();
            Map::from_fn(h, w, |y, x| {
                (g.get(y, x) * (1.0 - noise) + rng.gen::<f64>() * noise).clamp(0.0, 1.0)
            })
        }
        // Quantized to 8 bits, as predictions read from disk are.
        _ => Map::from_fn(h, w, |_, _| rng.gen_range(0..=255u32) as f64 / 255.0),
    };
    (pred, gt)
}

// ----------------------------------------------------------------- losses

/// Boundary weights from an explicit 15x15 window sum (zero padding,
/// divisor 225).
pub fn pixel_weights(gt: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -7i64..=7 {
                for dx in -7i64..=7 {
                    let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        s += gt[sy as usize * w + sx as usize];
                    }
                }
            }
            out[y * w + x] = 1.0 + 5.0 * (s / 225.0 - gt[y * w + x]).abs();
        }
    }
    out
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weighted BCE of a single `[H, W]` map using `ln` of the probabilities.
pub fn weighted_bce(logits: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let wt = pixel_weights(gt, h, w);
    let mut num = 0.0;
    for i in 0..h * w {
        let p = sig(logits[i]);
        num += wt[i] * -(gt[i] * p.ln() + (1.0 - gt[i]) * (1.0 - p).ln());
    }
    num / wt.iter().sum::<f64>()
}

pub fn weighted_iou(logits: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let wt = pixel_weights(gt, h, w);
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..h * w {
        let p = sig(logits[i]);
        inter += wt[i] * p * gt[i];
        union += wt[i] * (p + gt[i]);
    }
    1.0 - (inter + 1.0) / (union - inter + 1.0)
}

// -------------------------------------------------------------- gradients

/// Fixed, non-symmetric projection weights for reducing an output to a
/// scalar.
pub fn ramp(shape: [usize; 4], scale: f64, offset: f64) -> Tensor {
    Tensor::from_fn(shape, |i| (i as f64 * 0.7919).sin() * scale + offset)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

#[derive(Debug)]
pub struct GradCheck {
    /// Largest per-tensor `|a - n| / max(|a|, |n|)` (norms over checked
    /// elements; tensors with both norms under 1e-7 are skipped).
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares tape gradients of `dot(build(...), r)` with central finite
/// differences, for every parameter of `store` and every input tensor. At
/// most `per_tensor` evenly spaced elements of each tensor are perturbed.
pub fn grad_check(
    store: &ParamStore,
    inputs: &[Tensor],
    per_tensor: usize,
    build: impl Fn(&mut Tape, &Bound, &[Var]) -> Var,
) -> GradCheck {
    let eval = |store: &ParamStore, inputs: &[Tensor], r: Option<&Tensor>| {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = build(&mut tape, &bound, &xs);
        let r = r.cloned().unwrap_or_else(|| ramp(tape.shape(y), 0.5, 0.25));
        let out = tape.dot(y, &r).unwrap();
        (tape, bound, xs, out, r)
    };
    let (tape, bound, xs, out, r) = eval(store, inputs, None);
    let grads = tape.backward(out).unwrap();

    let mut slots: Vec<(String, Tensor, Tensor)> = Vec::new();
    for (p, v) in store.iter().zip(bound.vars()) {
        let g = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        slots.push((p.name.clone(), p.value.clone(), g));
    }
    for (i, (t, v)) in inputs.iter().zip(&xs).enumerate() {
        let g = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        slots.push((format!("input{i}"), t.clone(), g));
    }

    let value = |store: &ParamStore, inputs: &[Tensor]| {
        let (tape, _, _, out, _) = eval(store, inputs, Some(&r));
        tape.value(out).data()[0]
    };
    let h = 1e-6;
    let n_params = store.len();
    let mut report = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (slot, (name, base, analytic)) in slots.iter().enumerate() {
        let len = base.len();
        let step = len.div_ceil(per_tensor.max(1)).max(1);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in (0..len).step_by(step) {
            let perturbed = |delta: f64| {
                let mut s = store.clone();
                let mut xs = inputs.to_vec();
                if slot < n_params {
                    s.iter_mut().nth(slot).unwrap().value.data_mut()[j] += delta;
                } else {
                    xs[slot - n_params].data_mut()[j] += delta;
                }
                value(&s, &xs)
            };
            let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale < 1e-7 {
            continue;
        }
        let rel = diff2.sqrt() / scale;
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst = name.clone();
        }
    }
    report
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// --------------------------------------------------------------- fixtures

/// Seed of the overfit fixture.
pub const OVERFIT_SEED: u64 = 1;

/// Eight 64x64 synthetic images with one to three well-sized objects and
/// no background or occluded frames.
pub fn overfit_synth() -> SynthConfig {
    SynthConfig {
        n: 8,
        size: 64,
        min_objects: 1,
        max_objects: 3,
        mean_objects: 2.0,
        min_area_ratio: 0.04,
        max_area_ratio: 0.12,
        p_occlusion: 0.0,
        background_fraction: 0.0,
        test_fraction: 0.0,
        ..SynthConfig::default()
    }
}

pub fn overfit_train() -> TrainConfig {
    TrainConfig {
        input_size: 64,
        batch_size: 8,
        epochs: 100_000,
        max_iters: 200,
        optimizer: OptimizerKind::Adam,
        lr: 3e-3,
        weight_decay: 0.0,
        hflip_prob: 0.0,
        vflip_prob: 0.0,
        backbone: BackboneSpec::toy(8),
        channels: 16,
        ..TrainConfig::toy()
    }
}

/// A small but real training configuration for end-to-end tests.
pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        input_size: 64,
        batch_size: 2,
        epochs: 2,
        backbone: BackboneSpec::toy(4),
        channels: 8,
        ..TrainConfig::toy()
    }
}

pub fn tiny_synth(n: usize) -> SynthConfig {
    SynthConfig {
        n,
        size: 64,
        cases: 2,
        ..SynthConfig::default()
    }
}

// --------------------------------------------------------------- ablation

/// Module groups owned by each toggle: `(present when on, present when off)`.
pub const HRF_MODULES: (&[&str], &[&str]) = (
    &["edge_head", "hrf3", "hrf4", "hrf5"],
    &["reduce3", "reduce4", "reduce5"],
);
pub const FBA_MODULES: (&[&str], &[&str]) = (&["fba3", "fba4", "fba5"], &[]);

/// Checks that flipping one toggle between `off` and `on` changes exactly
/// that toggle's modules, and the total by exactly their sizes.
pub fn check_toggle_delta(
    off: &std::collections::BTreeMap<String, usize>,
    on: &std::collections::BTreeMap<String, usize>,
    owned: (&[&str], &[&str]),
) -> Result<(), String> {
    let (added, removed) = owned;
    for m in added {
        if off.contains_key(*m) || !on.contains_key(*m) {
            return Err(format!(
                "module {m} should appear only when the toggle is on"
            ));
        }
    }
    for m in removed {
        if !off.contains_key(*m) || on.contains_key(*m) {
            return Err(format!(
                "module {m} should appear only when the toggle is off"
            ));
        }
    }
    for (m, n) in off {
        if removed.contains(&m.as_str()) {
            continue;
        }
        if on.get(m) != Some(n) {
            return Err(format!(
                "shared module {m} changed size: {n} vs {:?}",
                on.get(m)
            ));
        }
    }
    for m in on.keys() {
        if !added.contains(&m.as_str()) && !off.contains_key(m) {
            return Err(format!("unexpected module {m}"));
        }
    }
    let total = |m: &std::collections::BTreeMap<String, usize>| m.values().sum::<usize>() as i64;
    let expected: i64 = added.iter().map(|m| on[*m] as i64).sum::<i64>()
        - removed.iter().map(|m| off[*m] as i64).sum::<i64>();
    if total(on) - total(off) != expected {
        return Err("total parameter delta does not match the toggled modules".into());
    }
    Ok(())
}
