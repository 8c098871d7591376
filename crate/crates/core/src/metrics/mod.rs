//! Evaluation measures for probability maps against binary ground truth.
//!
//! Swept measures binarize the prediction at 256 cuts
//! ([`threshold::threshold`]); the mean F, Dice and IoU average over the
//! cuts and the alignment measure takes the maximum.

pub mod alignment;
mod evaluate;
pub mod fmeasure;
pub mod overlap;
pub mod structure;
pub mod threshold;

use serde::{Deserialize, Serialize};

pub use alignment::{e_measure_adaptive, e_measure_max};
pub use evaluate::{evaluate_directory, evaluate_pairs, DirectoryReport, EvalOptions, ImageScore};
pub use fmeasure::{f_beta_adaptive, f_beta_mean, f_beta_weighted};
pub use overlap::{dice_iou_adaptive, m_dice_iou, mae};
pub use structure::s_measure;

use crate::error::{Result, TvnetError};
use crate::map::Map;

/// The seven measures, in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "S_alpha")]
    pub s_alpha: f64,
    #[serde(rename = "E_phi_max")]
    pub e_phi_max: f64,
    #[serde(rename = "F_beta_w")]
    pub f_beta_w: f64,
    #[serde(rename = "F_beta_mean")]
    pub f_beta_mean: f64,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "mDice")]
    pub m_dice: f64,
    #[serde(rename = "mIoU")]
    pub m_iou: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 7] = [
        "S_alpha",
        "E_phi_max",
        "F_beta_w",
        "F_beta_mean",
        "MAE",
        "mDice",
        "mIoU",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.s_alpha,
            self.e_phi_max,
            self.f_beta_w,
            self.f_beta_mean,
            self.mae,
            self.m_dice,
            self.m_iou,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        MetricsReport {
            s_alpha: v[0],
            e_phi_max: v[1],
            f_beta_w: v[2],
            f_beta_mean: v[3],
            mae: v[4],
            m_dice: v[5],
            m_iou: v[6],
        }
    }

    /// Elementwise mean of several reports.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Some(Self::from_values(acc.map(|a| a / reports.len() as f64)))
    }

    pub fn csv_header() -> String {
        Self::COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Which binarization scheme the F, Dice and IoU columns use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// Average over the 256 cuts.
    #[default]
    Sweep,
    /// Single cut at `min(2 * mean(pred), 1)`.
    Adaptive,
}

/// All seven measures for one prediction.
pub fn evaluate_pair(pred: &Map, gt: &Map, mode: ThresholdMode) -> Result<MetricsReport> {
    if !pred.same_size(gt) {
        return Err(TvnetError::Shape(format!(
            "prediction {}x{} and ground truth {}x{} differ",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if pred.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(TvnetError::InvalidInput(
            "prediction values must lie in [0, 1]".into(),
        ));
    }
    let gt = gt.binarize(0.5);
    let (f_mean, (dice, iou)) = match mode {
        ThresholdMode::Sweep => (f_beta_mean(pred, &gt), m_dice_iou(pred, &gt)),
        ThresholdMode::Adaptive => (f_beta_adaptive(pred, &gt), dice_iou_adaptive(pred, &gt)),
    };
    Ok(MetricsReport {
        s_alpha: s_measure(pred, &gt, structure::DEFAULT_ALPHA),
        e_phi_max: e_measure_max(pred, &gt),
        f_beta_w: f_beta_weighted(pred, &gt),
        f_beta_mean: f_mean,
        mae: mae(pred, &gt),
        m_dice: dice,
        m_iou: iou,
    })
}
