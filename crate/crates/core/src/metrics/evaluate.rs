use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_pair, MetricsReport, ThresholdMode};
use crate::data::index::{file_stem, list_images};
use crate::data::io::{read_binary, read_gray};
use crate::error::{Result, TvnetError};
use crate::map::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: ThresholdMode,
    /// Skip images whose ground truth is empty.
    pub exclude_background: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: ThresholdMode::Sweep,
            exclude_background: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectoryReport {
    /// Sorted by name.
    pub per_image: Vec<ImageScore>,
    pub mean: MetricsReport,
    /// Background images left out of the mean.
    pub excluded: usize,
}

impl DirectoryReport {
    /// Per-image rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("image,{}\n", MetricsReport::csv_header());
        for img in &self.per_image {
            s.push_str(&format!("{},{}\n", img.name, img.report.csv_row()));
        }
        s.push_str(&format!("mean,{}\n", self.mean.csv_row()));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Scores named `(prediction, ground truth)` pairs and averages them. The
/// mean is taken in name order, so input order does not matter.
pub fn evaluate_pairs(
    pairs: Vec<(String, Map, Map)>,
    opts: &EvalOptions,
) -> Result<DirectoryReport> {
    let total = pairs.len();
    let mut kept: Vec<(String, Map, Map)> = pairs
        .into_iter()
        .filter(|(_, _, gt)| !(opts.exclude_background && gt.count_nonzero() == 0))
        .collect();
    let excluded = total - kept.len();
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    if kept.is_empty() {
        return Err(TvnetError::Data("no images left to evaluate".into()));
    }
    let per_image = kept
        .into_par_iter()
        .map(|(name, pred, gt)| {
            let report = evaluate_pair(&pred, &gt, opts.mode)
                .map_err(|e| TvnetError::Data(format!("{name}: {e}")))?;
            Ok(ImageScore { name, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<_> = per_image.iter().map(|s| s.report).collect();
    Ok(DirectoryReport {
        mean: MetricsReport::mean(&reports).expect("non-empty"),
        per_image,
        excluded,
    })
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    if !dir.is_dir() {
        return Err(TvnetError::Data(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut out = BTreeMap::new();
    for path in list_images(dir)? {
        let stem = file_stem(&path);
        if let Some(prev) = out.insert(stem.clone(), path) {
            return Err(TvnetError::Data(format!(
                "{stem} appears twice in {} ({})",
                dir.display(),
                prev.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs prediction and ground-truth images by file stem and scores them.
/// Predictions are read as 8-bit gray scaled to `[0, 1]` (and resized to
/// the ground truth if needed); ground truth is binarised at 128.
pub fn evaluate_directory(
    pred_dir: &Path,
    gt_dir: &Path,
    opts: &EvalOptions,
) -> Result<DirectoryReport> {
    let preds = by_stem(pred_dir)?;
    let gts = by_stem(gt_dir)?;
    let missing: Vec<_> = gts
        .keys()
        .filter(|k| !preds.contains_key(*k))
        .cloned()
        .collect();
    let extra: Vec<_> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(TvnetError::Data(format!(
            "unmatched filenames: no prediction for {missing:?}, no ground truth for {extra:?}"
        )));
    }
    let pairs = gts
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, gt_path)| {
            let gt = read_binary(&gt_path)?;
            let mut pred = read_gray(&preds[&name])?;
            if !pred.same_size(&gt) {
                pred = pred
                    .resize(gt.height(), gt.width())?
                    .map(|v| v.clamp(0.0, 1.0));
            }
            Ok((name, pred, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(pairs, opts)
}
