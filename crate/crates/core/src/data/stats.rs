//! Dataset statistics: object counts, object sizes, attribute tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::index::{load_masks, DatasetIndex};
use super::Attribute;
use crate::error::Result;
use crate::map::Map;

/// Pixel counts of the 8-connected foreground components, in raster order
/// of each component's first pixel.
pub fn component_areas(mask: &Map) -> Vec<usize> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data()[start] <= 0.5 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (y, x) = (i / w, i % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && mask.data()[j] > 0.5 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    areas
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub images: usize,
    pub background_images: usize,
    /// Object count of every image, in index order.
    pub objects_per_image: Vec<usize>,
    /// Mean object count over images with at least one object.
    pub mean_objects: f64,
    pub max_objects: usize,
    /// Area / image area of every object.
    pub size_ratios: Vec<f64>,
    pub min_size_ratio: f64,
    pub mean_size_ratio: f64,
    pub max_size_ratio: f64,
    pub attribute_histogram: BTreeMap<Attribute, usize>,
    /// Images carrying both attributes, keyed `"A+B"` with `A <= B`;
    /// the diagonal counts single attributes.
    pub co_attributes: BTreeMap<String, usize>,
}

impl StatsReport {
    pub fn from_masks(masks: &[Map], attributes: &[Vec<Attribute>]) -> Self {
        let mut objects_per_image = Vec::with_capacity(masks.len());
        let mut size_ratios = Vec::new();
        let mut background_images = 0;
        for mask in masks {
            let areas = component_areas(mask);
            if areas.is_empty() {
                background_images += 1;
            }
            let total = mask.len() as f64;
            size_ratios.extend(areas.iter().map(|&a| a as f64 / total));
            objects_per_image.push(areas.len());
        }
        let with_objects = masks.len() - background_images;
        let mean_objects = if with_objects > 0 {
            objects_per_image.iter().sum::<usize>() as f64 / with_objects as f64
        } else {
            0.0
        };
        let (min_size_ratio, max_size_ratio, mean_size_ratio) = if size_ratios.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                size_ratios.iter().copied().fold(f64::INFINITY, f64::min),
                size_ratios.iter().copied().fold(0.0, f64::max),
                size_ratios.iter().sum::<f64>() / size_ratios.len() as f64,
            )
        };
        let mut attribute_histogram = BTreeMap::new();
        let mut co_attributes = BTreeMap::new();
        for attrs in attributes {
            for (i, &a) in attrs.iter().enumerate() {
                *attribute_histogram.entry(a).or_insert(0) += 1;
                for &b in &attrs[i..] {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    *co_attributes.entry(format!("{lo}+{hi}")).or_insert(0) += 1;
                }
            }
        }
        StatsReport {
            images: masks.len(),
            background_images,
            max_objects: objects_per_image.iter().copied().max().unwrap_or(0),
            objects_per_image,
            mean_objects,
            size_ratios,
            min_size_ratio,
            mean_size_ratio,
            max_size_ratio,
            attribute_histogram,
            co_attributes,
        }
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "images: {} ({} background)\nobjects/image: mean {:.3}, max {}\n\
             object size ratio: min {:.4}%, mean {:.4}%, max {:.4}%\n",
            self.images,
            self.background_images,
            self.mean_objects,
            self.max_objects,
            self.min_size_ratio * 100.0,
            self.mean_size_ratio * 100.0,
            self.max_size_ratio * 100.0,
        );
        s.push_str("attributes:");
        for (a, n) in &self.attribute_histogram {
            s.push_str(&format!(" {a}={n}"));
        }
        s.push('\n');
        s
    }
}

/// Statistics of every mask and attribute list in `index`.
pub fn dataset_stats(index: &DatasetIndex) -> Result<StatsReport> {
    let masks = load_masks(index)?;
    let attrs: Vec<_> = index.records.iter().map(|r| r.attributes.clone()).collect();
    Ok(StatsReport::from_masks(&masks, &attrs))
}
