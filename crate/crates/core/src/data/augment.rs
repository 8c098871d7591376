//! Geometric augmentation applied identically to image, mask and edge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::Result;
use crate::map::Map;
use crate::tensor::{resize_bilinear, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Square output size; `None` keeps the input size.
    pub size: Option<usize>,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            size: Some(352),
            hflip_prob: 0.5,
            vflip_prob: 0.5,
        }
    }
}

fn flip_image(image: &Tensor, horizontal: bool) -> Tensor {
    let [n, c, h, w] = image.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = if horizontal {
                        (y, w - 1 - x)
                    } else {
                        (h - 1 - y, x)
                    };
                    let dst = out.index(b, ch, y, x);
                    out.data_mut()[dst] = image.at(b, ch, sy, sx);
                }
            }
        }
    }
    out
}

pub fn flip_horizontal(s: &Sample) -> Sample {
    Sample {
        image: flip_image(&s.image, true),
        mask: s.mask.flip_horizontal(),
        edge: s.edge.flip_horizontal(),
        ..s.clone()
    }
}

pub fn flip_vertical(s: &Sample) -> Sample {
    Sample {
        image: flip_image(&s.image, false),
        mask: s.mask.flip_vertical(),
        edge: s.edge.flip_vertical(),
        ..s.clone()
    }
}

fn resize_binary(m: &Map, h: usize, w: usize) -> Result<Map> {
    Ok(m.resize(h, w)?.binarize(0.5))
}

/// Bilinear resize; mask and edge are re-binarised at 0.5.
pub fn resize_sample(s: &Sample, h: usize, w: usize) -> Result<Sample> {
    if s.size() == (h, w) {
        return Ok(s.clone());
    }
    Ok(Sample {
        image: resize_bilinear(&s.image, h, w)?,
        mask: resize_binary(&s.mask, h, w)?,
        edge: resize_binary(&s.edge, h, w)?,
        ..s.clone()
    })
}

/// Resize, then random flips drawn from `rng`.
pub fn augment(s: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    let mut out = match cfg.size {
        Some(size) => resize_sample(s, size, size)?,
        None => s.clone(),
    };
    if rng.gen_bool(cfg.hflip_prob) {
        out = flip_horizontal(&out);
    }
    if rng.gen_bool(cfg.vflip_prob) {
        out = flip_vertical(&out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::derive_edge;

    fn sample() -> Sample {
        let mask = Map::from_fn(8, 6, |y, x| (y < 3 && x > 1) as u8 as f64);
        let edge = derive_edge(&mask, 1);
        let image = Tensor::from_fn([1, 3, 8, 6], |i| i as f64 / 144.0);
        Sample::new("s".into(), image, mask, edge, vec![]).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let s = sample();
        assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
        assert_eq!(flip_vertical(&flip_vertical(&s)), s);
    }

    #[test]
    fn flip_moves_image_and_mask_together() {
        let s = sample();
        let f = flip_horizontal(&s);
        assert_eq!(f.image.at(0, 1, 2, 0), s.image.at(0, 1, 2, 5));
        assert_eq!(f.mask.get(2, 0), s.mask.get(2, 5));
        assert_eq!(f.edge.get(2, 0), s.edge.get(2, 5));
    }

    #[test]
    fn resize_keeps_masks_binary() {
        let r = resize_sample(&sample(), 13, 11).unwrap();
        assert!(r.mask.is_binary() && r.edge.is_binary());
        assert_eq!(r.size(), (13, 11));
    }
}
