//! Synthetic phase-contrast-like micro-blob datasets.
//!
//! Each image has a dark, slowly varying background with sensor noise,
//! bright elliptical bodies (optionally with flagella, blur, occlusion,
//! border clipping or squeezing) and leukocyte-like distractor cells that
//! are left out of the masks. Objects never touch each other and each one
//! stays a single 8-connected component, so the generator's ledger is an
//! exact oracle for component statistics.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::edge::derive_edge;
use super::index::{Layout, Split};
use super::{format_attributes, io, Attribute, Sample};
use crate::config::Config;
use crate::error::{Result, TvnetError};
use crate::map::Map;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of images.
    pub n: usize,
    /// Side length of the square images.
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Mean object count before truncation to `[min_objects, max_objects]`.
    pub mean_objects: f64,
    /// Body area as a fraction of the image, drawn log-uniformly.
    pub min_area_ratio: f64,
    pub max_area_ratio: f64,
    pub p_flagella: f64,
    pub p_blur: f64,
    pub p_occlusion: f64,
    pub p_out_of_view: f64,
    pub p_squeeze: f64,
    /// Fraction of distractor-only images.
    pub background_fraction: f64,
    pub max_distractors: usize,
    /// Number of pseudo acquisition cases.
    pub cases: usize,
    /// Latest fraction of each case that goes to the test split.
    pub test_fraction: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 16,
            size: 64,
            min_objects: 1,
            max_objects: 17,
            mean_objects: 3.0,
            min_area_ratio: 0.0003,
            max_area_ratio: 0.012,
            p_flagella: 0.5,
            p_blur: 0.2,
            p_occlusion: 0.2,
            p_out_of_view: 0.15,
            p_squeeze: 0.15,
            background_fraction: 0.1,
            max_distractors: 3,
            cases: 4,
            test_fraction: 0.25,
            noise_std: 0.02,
        }
    }
}

impl SynthConfig {
    pub const KEYS: [&'static str; 17] = [
        "n",
        "size",
        "min_objects",
        "max_objects",
        "mean_objects",
        "min_area_ratio",
        "max_area_ratio",
        "p_flagella",
        "p_blur",
        "p_occlusion",
        "p_out_of_view",
        "p_squeeze",
        "background_fraction",
        "max_distractors",
        "cases",
        "test_fraction",
        "noise_std",
    ];

    /// Applies the generator keys of `cfg` on top of `self`.
    pub fn apply(&self, cfg: &Config) -> Result<Self> {
        let mut c = self.clone();
        c.n = cfg.get_or("n", c.n)?;
        c.size = cfg.get_or("size", c.size)?;
        c.min_objects = cfg.get_or("min_objects", c.min_objects)?;
        c.max_objects = cfg.get_or("max_objects", c.max_objects)?;
        c.mean_objects = cfg.get_or("mean_objects", c.mean_objects)?;
        c.min_area_ratio = cfg.get_or("min_area_ratio", c.min_area_ratio)?;
        c.max_area_ratio = cfg.get_or("max_area_ratio", c.max_area_ratio)?;
        c.p_flagella = cfg.get_or("p_flagella", c.p_flagella)?;
        c.p_blur = cfg.get_or("p_blur", c.p_blur)?;
        c.p_occlusion = cfg.get_or("p_occlusion", c.p_occlusion)?;
        c.p_out_of_view = cfg.get_or("p_out_of_view", c.p_out_of_view)?;
        c.p_squeeze = cfg.get_or("p_squeeze", c.p_squeeze)?;
        c.background_fraction = cfg.get_or("background_fraction", c.background_fraction)?;
        c.max_distractors = cfg.get_or("max_distractors", c.max_distractors)?;
        c.cases = cfg.get_or("cases", c.cases)?;
        c.test_fraction = cfg.get_or("test_fraction", c.test_fraction)?;
        c.noise_std = cfg.get_or("noise_std", c.noise_std)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_config(&self) -> Config {
        let mut cfg = Config::new();
        let entries: [(&str, String); 17] = [
            ("n", self.n.to_string()),
            ("size", self.size.to_string()),
            ("min_objects", self.min_objects.to_string()),
            ("max_objects", self.max_objects.to_string()),
            ("mean_objects", self.mean_objects.to_string()),
            ("min_area_ratio", self.min_area_ratio.to_string()),
            ("max_area_ratio", self.max_area_ratio.to_string()),
            ("p_flagella", self.p_flagella.to_string()),
            ("p_blur", self.p_blur.to_string()),
            ("p_occlusion", self.p_occlusion.to_string()),
            ("p_out_of_view", self.p_out_of_view.to_string()),
            ("p_squeeze", self.p_squeeze.to_string()),
            ("background_fraction", self.background_fraction.to_string()),
            ("max_distractors", self.max_distractors.to_string()),
            ("cases", self.cases.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("noise_std", self.noise_std.to_string()),
        ];
        for (k, v) in entries {
            cfg.set(k, v).expect("static keys are valid");
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TvnetError::Config(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.size < 16 {
            return bad(format!("size must be at least 16, got {}", self.size));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad(format!(
                "object count range [{}, {}] is empty or starts at zero",
                self.min_objects, self.max_objects
            ));
        }
        if !(self.min_area_ratio > 0.0 && self.min_area_ratio <= self.max_area_ratio) {
            return bad(format!(
                "area ratio range [{}, {}] is invalid",
                self.min_area_ratio, self.max_area_ratio
            ));
        }
        // Separated objects need room: demand a 4x slack over the bodies.
        if self.max_area_ratio > 0.25 || 4.0 * self.min_objects as f64 * self.min_area_ratio > 1.0 {
            return bad(format!(
                "{} objects of at least {:.4} of the canvas cannot be placed apart",
                self.min_objects, self.min_area_ratio
            ));
        }
        for (name, p) in [
            ("p_flagella", self.p_flagella),
            ("p_blur", self.p_blur),
            ("p_occlusion", self.p_occlusion),
            ("p_out_of_view", self.p_out_of_view),
            ("p_squeeze", self.p_squeeze),
            ("background_fraction", self.background_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.cases == 0 {
            return bad("cases must be positive".into());
        }
        if self.mean_objects < self.min_objects as f64 {
            return bad("mean_objects must be at least min_objects".into());
        }
        if !(0.0..).contains(&self.noise_std) {
            return bad("noise_std must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    /// Body centre `(row, col)`, possibly outside the canvas.
    pub center: (f64, f64),
    /// Final mask pixel count.
    pub area: usize,
    pub flagella: usize,
    pub clipped: bool,
    pub occluded: bool,
    pub blurred: bool,
    pub squeezed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    pub split: Split,
    pub case: usize,
    pub frame: usize,
    pub background: bool,
    pub attributes: Vec<Attribute>,
    pub objects: Vec<ObjectRecord>,
    pub distractors: usize,
}

/// Exact ground truth of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub seed: u64,
    pub config: SynthConfig,
    pub images: Vec<ImageRecord>,
}

impl Ledger {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.split == split)
    }
}

/// Pixel set of one object on the canvas, as a flat-index list.
type Pixels = Vec<usize>;

struct Canvas {
    h: usize,
    w: usize,
}

impl Canvas {
    fn idx(&self, y: isize, x: isize) -> Option<usize> {
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w)
            .then(|| y as usize * self.w + x as usize)
    }
}

#[derive(Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    /// Semi-axes along and across `angle`.
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Pixels with centres inside, plus whether any fell off the canvas.
    fn raster(&self, canvas: &Canvas) -> (Vec<usize>, bool) {
        let r = self.a.max(self.b).ceil() as isize + 1;
        let (cy, cx) = (self.cy.round() as isize, self.cx.round() as isize);
        let mut out = Vec::new();
        let mut clipped = false;
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                let hit = self.contains(y as f64, x as f64) || (y == cy && x == cx);
                if hit {
                    match canvas.idx(y, x) {
                        Some(i) => out.push(i),
                        None => clipped = true,
                    }
                }
            }
        }
        (out, clipped)
    }

    fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (self.cy + u * s + v * c, self.cx + u * c - v * s)
    }
}

/// Cubic Bezier from a body boundary point, sampled densely enough to be
/// 8-connected.
fn flagellum(body: &Ellipse, rng: &mut ChaCha8Rng, canvas: &Canvas) -> (Vec<usize>, bool) {
    let t0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p0 = body.boundary_point(t0);
    let (oy, ox) = (p0.0 - body.cy, p0.1 - body.cx);
    let norm = (oy * oy + ox * ox).sqrt().max(1e-9);
    let (dy, dx) = (oy / norm, ox / norm);
    let len = body.a * rng.gen_range(1.2..2.2) + 2.0;
    let bend = |rng: &mut ChaCha8Rng| rng.gen_range(-0.6..0.6) * len;
    let (b1, b2) = (bend(rng), bend(rng));
    let ctrl = [
        p0,
        (
            p0.0 + dy * len / 3.0 - dx * b1,
            p0.1 + dx * len / 3.0 + dy * b1,
        ),
        (
            p0.0 + dy * 2.0 * len / 3.0 - dx * b2,
            p0.1 + dx * 2.0 * len / 3.0 + dy * b2,
        ),
        (p0.0 + dy * len, p0.1 + dx * len),
    ];
    let steps = (len * 8.0).ceil() as usize + 8;
    let mut out = Vec::new();
    let mut clipped = false;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let m = 1.0 - t;
        let c = [m * m * m, 3.0 * m * m * t, 3.0 * m * t * t, t * t * t];
        let y: f64 = (0..4).map(|i| c[i] * ctrl[i].0).sum();
        let x: f64 = (0..4).map(|i| c[i] * ctrl[i].1).sum();
        match canvas.idx(y.round() as isize, x.round() as isize) {
            Some(i) => out.push(i),
            None => clipped = true,
        }
    }
    (out, clipped)
}

/// Largest 8-connected subset of `pixels` (the earliest on ties), sorted.
fn largest_component(pixels: &[usize], canvas: &Canvas) -> Pixels {
    let mut member = vec![false; canvas.h * canvas.w];
    for &i in pixels {
        member[i] = true;
    }
    let mut best: Pixels = Vec::new();
    for start in 0..member.len() {
        if !member[start] {
            continue;
        }
        member[start] = false;
        let mut comp = Vec::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (y, x) = ((i / canvas.w) as isize, (i % canvas.w) as isize);
            for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if let Some(j) = canvas.idx(ny, nx) {
                        if member[j] {
                            member[j] = false;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Marks `pixels` and their 8-neighbours in `occupied`.
fn occupy(occupied: &mut [bool], pixels: &[usize], canvas: &Canvas) {
    for &i in pixels {
        let (y, x) = ((i / canvas.w) as isize, (i % canvas.w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if let Some(j) = canvas.idx(ny, nx) {
                    occupied[j] = true;
                }
            }
        }
    }
}

fn gaussian_blur(layer: &[f64], canvas: &Canvas, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = (canvas.h as isize, canvas.w as isize);
    let pass = |src: &[f64], horizontal: bool| {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let d = k as isize - r;
                    let (sy, sx) = if horizontal {
                        (y, (x + d).clamp(0, w - 1))
                    } else {
                        ((y + d).clamp(0, h - 1), x)
                    };
                    acc += kv * src[(sy * w + sx) as usize];
                }
                dst[(y * w + x) as usize] = acc / norm;
            }
        }
        dst
    };
    pass(&pass(layer, true), false)
}

struct Layer {
    intensity: Vec<f64>,
    alpha: Vec<f64>,
}

impl Layer {
    fn new(len: usize) -> Self {
        Layer {
            intensity: vec![0.0; len],
            alpha: vec![0.0; len],
        }
    }

    fn paint(&mut self, pixels: &[usize], value: f64, alpha: f64) {
        for &i in pixels {
            self.intensity[i] = value;
            self.alpha[i] = alpha;
        }
    }

    fn blur(&mut self, canvas: &Canvas, sigma: f64) {
        let premult: Vec<f64> = self
            .intensity
            .iter()
            .zip(&self.alpha)
            .map(|(v, a)| v * a)
            .collect();
        let premult = gaussian_blur(&premult, canvas, sigma);
        self.alpha = gaussian_blur(&self.alpha, canvas, sigma);
        self.intensity = premult
            .iter()
            .zip(&self.alpha)
            .map(|(p, a)| if *a > 1e-12 { p / a } else { 0.0 })
            .collect();
    }

    fn composite(&self, base: &mut [f64]) {
        for (i, b) in base.iter_mut().enumerate() {
            let a = self.alpha[i];
            *b = *b * (1.0 - a) + self.intensity[i] * a;
        }
    }
}

/// Granular round cell that is not a target.
fn distractor(rng: &mut ChaCha8Rng, canvas: &Canvas, radius: f64) -> (Ellipse, Pixels) {
    let e = Ellipse {
        cy: rng.gen_range(0.0..canvas.h as f64),
        cx: rng.gen_range(0.0..canvas.w as f64),
        a: radius,
        b: radius * rng.gen_range(0.85..1.0),
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    };
    (e, e.raster(canvas).0)
}

fn draw_count(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> usize {
    // Shifted geometric with the configured mean, truncated by rejection.
    let extra_mean = cfg.mean_objects - cfg.min_objects as f64;
    if extra_mean <= 0.0 || cfg.min_objects == cfg.max_objects {
        return cfg.min_objects;
    }
    let p = 1.0 / (1.0 + extra_mean);
    loop {
        let mut k = 0;
        while !rng.gen_bool(p) {
            k += 1;
        }
        let count = cfg.min_objects + k;
        if count <= cfg.max_objects {
            return count;
        }
    }
}

struct Rendered {
    image: Tensor,
    mask: Map,
    objects: Vec<ObjectRecord>,
    distractors: usize,
}

fn render(rng: &mut ChaCha8Rng, cfg: &SynthConfig, background_only: bool) -> Result<Rendered> {
    let canvas = Canvas {
        h: cfg.size,
        w: cfg.size,
    };
    let n_px = canvas.h * canvas.w;
    let noise = Normal::new(0.0, cfg.noise_std.max(1e-12)).expect("valid std");

    // Slowly varying dark background.
    let (fy, fx, phase): (f64, f64, f64) = (
        rng.gen_range(0.5..2.0),
        rng.gen_range(0.5..2.0),
        rng.gen_range(0.0..6.3),
    );
    let level = rng.gen_range(0.12..0.22);
    let mut base: Vec<f64> = (0..n_px)
        .map(|i| {
            let (y, x) = (
                (i / canvas.w) as f64 / canvas.h as f64,
                (i % canvas.w) as f64 / canvas.w as f64,
            );
            level + 0.03 * (std::f64::consts::TAU * (fy * y + fx * x) + phase).sin()
        })
        .collect();

    let mut occupied = vec![false; n_px];
    let mut mask_objects: Vec<(Pixels, ObjectRecord, Layer)> = Vec::new();
    let count = if background_only {
        0
    } else {
        draw_count(rng, cfg)
    };
    let area = (n_px) as f64;
    let mut attempts = 0;
    while mask_objects.len() < count {
        attempts += 1;
        if attempts > 400 {
            if mask_objects.len() >= cfg.min_objects {
                break;
            }
            return Err(TvnetError::Config(format!(
                "could not place {} separated objects on a {}x{} canvas",
                cfg.min_objects, cfg.size, cfg.size
            )));
        }
        let ratio = (rng.gen_range(cfg.min_area_ratio.ln()..=cfg.max_area_ratio.ln())).exp();
        let squeezed = rng.gen_bool(cfg.p_squeeze);
        let aspect = if squeezed {
            rng.gen_range(0.3..0.45)
        } else {
            rng.gen_range(0.6..0.95)
        };
        let a = (ratio * area / (std::f64::consts::PI * aspect))
            .sqrt()
            .max(0.6);
        let b = (a * aspect).max(0.5);
        let out_of_view = rng.gen_bool(cfg.p_out_of_view);
        let (cy, cx) = if out_of_view {
            // Centre within a body radius of a random border.
            let along = rng.gen_range(0.0..cfg.size as f64);
            let depth = rng.gen_range(-0.5 * a..0.5 * a);
            match rng.gen_range(0..4) {
                0 => (depth, along),
                1 => (cfg.size as f64 - 1.0 - depth, along),
                2 => (along, depth),
                _ => (along, cfg.size as f64 - 1.0 - depth),
            }
        } else {
            let margin = a.min(cfg.size as f64 / 4.0);
            (
                rng.gen_range(margin..cfg.size as f64 - margin),
                rng.gen_range(margin..cfg.size as f64 - margin),
            )
        };
        let body = Ellipse {
            cy,
            cx,
            a,
            b,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        };
        let (mut pixels, mut clipped) = body.raster(&canvas);
        let n_flagella = if rng.gen_bool(cfg.p_flagella) {
            rng.gen_range(1..=4)
        } else {
            0
        };
        let mut tail = Vec::new();
        for _ in 0..n_flagella {
            let (f, c) = flagellum(&body, rng, &canvas);
            clipped |= c;
            tail.extend(f);
        }
        pixels.extend_from_slice(&tail);
        let pixels = largest_component(&pixels, &canvas);
        if pixels.is_empty() || pixels.iter().any(|&i| occupied[i]) {
            continue;
        }
        occupy(&mut occupied, &pixels, &canvas);

        let mut layer = Layer::new(n_px);
        let brightness = rng.gen_range(0.62..0.85);
        layer.paint(&pixels, brightness, 1.0);
        let tail_set: std::collections::BTreeSet<usize> = tail.into_iter().collect();
        for &i in &pixels {
            if tail_set.contains(&i) && !body.contains((i / canvas.w) as f64, (i % canvas.w) as f64)
            {
                layer.intensity[i] = brightness * 0.8;
                layer.alpha[i] = 0.85;
            } else {
                layer.intensity[i] += rng.gen_range(-0.05..0.05);
            }
        }
        let blurred = rng.gen_bool(cfg.p_blur);
        if blurred {
            layer.blur(&canvas, rng.gen_range(0.8..1.6));
        }
        let record = ObjectRecord {
            center: (cy, cx),
            area: pixels.len(),
            flagella: n_flagella,
            clipped,
            occluded: false,
            blurred,
            squeezed,
        };
        mask_objects.push((pixels, record, layer));
    }

    // Occluders: distractor-like cells laid over part of an object.
    let mut occluders = Vec::new();
    for (pixels, record, _) in &mut mask_objects {
        if pixels.len() < 4 || !rng.gen_bool(cfg.p_occlusion) {
            continue;
        }
        let r_obj = (pixels.len() as f64 / std::f64::consts::PI).sqrt();
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let radius = (r_obj * rng.gen_range(0.5..0.8)).max(1.0);
        let dist = r_obj + radius * 0.4;
        let occ = Ellipse {
            cy: record.center.0 + dist * theta.sin(),
            cx: record.center.1 + dist * theta.cos(),
            a: radius,
            b: radius,
            angle: 0.0,
        };
        let covered: std::collections::BTreeSet<usize> =
            occ.raster(&canvas).0.into_iter().collect();
        let remaining: Vec<usize> = pixels
            .iter()
            .copied()
            .filter(|i| !covered.contains(i))
            .collect();
        if remaining.is_empty() || remaining.len() == pixels.len() {
            continue;
        }
        *pixels = largest_component(&remaining, &canvas);
        record.area = pixels.len();
        record.occluded = true;
        occluders.push(occ);
    }

    let mut distractor_count = 0;
    let n_distractors = if background_only {
        rng.gen_range(1..=cfg.max_distractors.max(1))
    } else {
        rng.gen_range(0..=cfg.max_distractors)
    };
    let typical = (cfg.max_area_ratio * area / std::f64::consts::PI)
        .sqrt()
        .max(1.5);
    let mut distractor_layers = Vec::new();
    for _ in 0..n_distractors {
        let radius = typical * rng.gen_range(0.8..1.4);
        let (e, px) = distractor(rng, &canvas, radius);
        if px.iter().any(|&i| occupied[i]) {
            continue;
        }
        distractor_count += 1;
        let mut layer = Layer::new(n_px);
        layer.paint(&px, rng.gen_range(0.5..0.7), 1.0);
        // Darker granular nucleus.
        for &i in &px {
            let (y, x) = ((i / canvas.w) as f64, (i % canvas.w) as f64);
            if ((y - e.cy).powi(2) + (x - e.cx).powi(2)).sqrt() < 0.5 * e.a {
                layer.intensity[i] = 0.35 + rng.gen_range(0.0..0.1);
            }
        }
        distractor_layers.push(layer);
    }

    for (_, _, layer) in &mask_objects {
        layer.composite(&mut base);
    }
    for layer in &distractor_layers {
        layer.composite(&mut base);
    }
    for occ in &occluders {
        let mut layer = Layer::new(n_px);
        layer.paint(&occ.raster(&canvas).0, rng.gen_range(0.45..0.6), 1.0);
        layer.composite(&mut base);
    }

    let mut mask = Map::zeros(canvas.h, canvas.w);
    for (pixels, _, _) in &mask_objects {
        for &i in pixels {
            mask.data_mut()[i] = 1.0;
        }
    }

    let tint = [1.0, 0.97, 0.92];
    let mut data = vec![0.0; 3 * n_px];
    for (i, &v) in base.iter().enumerate() {
        let v = v + noise.sample(rng);
        for (c, t) in tint.iter().enumerate() {
            data[c * n_px + i] = io::to_u8(v * t) as f64 / 255.0;
        }
    }
    Ok(Rendered {
        image: Tensor::from_vec([1, 3, canvas.h, canvas.w], data)?,
        mask,
        objects: mask_objects.into_iter().map(|(_, r, _)| r).collect(),
        distractors: distractor_count,
    })
}

fn image_attributes(objects: &[ObjectRecord], size: usize) -> Vec<Attribute> {
    let mut out = Vec::new();
    if objects.is_empty() {
        return out;
    }
    if objects.len() >= 2 {
        out.push(Attribute::MO);
    }
    let mean_ratio = objects.iter().map(|o| o.area as f64).sum::<f64>()
        / objects.len() as f64
        / (size * size) as f64;
    if mean_ratio <= 0.001 {
        out.push(Attribute::SO);
    }
    let any = |f: fn(&ObjectRecord) -> bool| objects.iter().any(f);
    if any(|o| o.clipped) {
        out.push(Attribute::OV);
    }
    if any(|o| o.flagella > 0) {
        out.push(Attribute::CS);
    }
    if any(|o| o.occluded) {
        out.push(Attribute::OC);
    }
    if any(|o| o.blurred) {
        out.push(Attribute::OF);
    }
    if any(|o| o.squeezed) {
        out.push(Attribute::SQ);
    }
    out
}

/// Generates the dataset in memory: samples with their split, plus the
/// ledger. Images are already quantised to 8 bits.
pub fn generate_samples(cfg: &SynthConfig, seed: u64) -> Result<(Vec<(Split, Sample)>, Ledger)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Pseudo-cases: each image belongs to a case; frames are numbered in
    // acquisition order and the latest frames of every case form the test set.
    let cases: Vec<usize> = (0..cfg.n).map(|_| rng.gen_range(0..cfg.cases)).collect();
    let mut per_case = vec![0usize; cfg.cases];
    for &c in &cases {
        per_case[c] += 1;
    }
    let mut frame_of = vec![0usize; cfg.cases];
    let mut samples = Vec::with_capacity(cfg.n);
    let mut images = Vec::with_capacity(cfg.n);
    for &case in &cases {
        let frame = frame_of[case];
        frame_of[case] += 1;
        let n_train = per_case[case] - (per_case[case] as f64 * cfg.test_fraction).round() as usize;
        let split = if frame < n_train {
            Split::Train
        } else {
            Split::Test
        };
        let background = rng.gen_bool(cfg.background_fraction);
        let r = render(&mut rng, cfg, background)?;
        let name = format!("case{case:02}_frame{frame:04}");
        let attributes = image_attributes(&r.objects, cfg.size);
        let edge = derive_edge(&r.mask, 1);
        samples.push((
            split,
            Sample::new(name.clone(), r.image, r.mask, edge, attributes.clone())?,
        ));
        images.push(ImageRecord {
            name,
            split,
            case,
            frame,
            background: r.objects.is_empty(),
            attributes,
            objects: r.objects,
            distractors: r.distractors,
        });
    }
    Ok((
        samples,
        Ledger {
            seed,
            config: cfg.clone(),
            images,
        },
    ))
}

/// Writes a generated dataset under `out` in the default [`Layout`] and
/// returns its ledger, also saved as `ledger.json`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64, out: &Path) -> Result<Ledger> {
    let (samples, ledger) = generate_samples(cfg, seed)?;
    let layout = Layout::default();
    for split in [Split::Train, Split::Test] {
        let dir = layout.split_dir(out, split);
        for sub in [&layout.images, &layout.masks, &layout.edges] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| TvnetError::io(&d, e))?;
        }
        let attr_path = dir.join(&layout.attributes);
        let mut csv_text = String::from("filename,attributes\n");
        for (s, sample) in samples.iter().filter(|(s, _)| *s == split) {
            debug_assert_eq!(*s, split);
            let file = format!("{}.png", sample.name);
            io::write_rgb(&dir.join(&layout.images).join(&file), &sample.image)?;
            io::write_gray(&dir.join(&layout.masks).join(&file), &sample.mask)?;
            io::write_gray(&dir.join(&layout.edges).join(&file), &sample.edge)?;
            csv_text.push_str(&format!(
                "{file},{}\n",
                format_attributes(&sample.attributes)
            ));
        }
        std::fs::write(&attr_path, csv_text).map_err(|e| TvnetError::io(&attr_path, e))?;
    }
    let ledger_path = out.join("ledger.json");
    let json = serde_json::to_string_pretty(&ledger).expect("ledger serialises");
    std::fs::write(&ledger_path, json).map_err(|e| TvnetError::io(&ledger_path, e))?;
    log::info!(
        "generated {} images ({} train, {} test) under {}",
        ledger.images.len(),
        ledger.split(Split::Train).count(),
        ledger.split(Split::Test).count(),
        out.display()
    );
    Ok(ledger)
}
