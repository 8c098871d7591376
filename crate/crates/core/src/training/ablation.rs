use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{evaluate_model, train};
use super::TrainConfig;
use crate::data::Sample;
use crate::error::{Result, TvnetError};
use crate::metrics::{EvalOptions, MetricsReport};

/// `(label, use_hrf, use_fba)` for rows a-d.
pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("a: baseline", false, false),
    ("b: +HRF", true, false),
    ("c: +FBA", false, true),
    ("d: +HRF +FBA", true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub use_hrf: bool,
    pub use_fba: bool,
    pub parameters: usize,
    /// Scalar parameter count per top-level module.
    pub modules: BTreeMap<String, usize>,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "row,use_hrf,use_fba,parameters,{}\n",
            MetricsReport::csv_header()
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.label,
                r.use_hrf,
                r.use_fba,
                r.parameters,
                r.metrics.csv_row()
            ));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let cols = MetricsReport::COLUMNS;
        let mut s = format!("| Row | HRF | FBA | {} |\n", cols.join(" | "));
        s.push_str(&format!("|---|:-:|:-:|{}\n", "---:|".repeat(cols.len())));
        let mark = |b: bool| if b { "✓" } else { "" };
        for r in &self.rows {
            let vals: Vec<String> = r
                .metrics
                .values()
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect();
            s.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.label,
                mark(r.use_hrf),
                mark(r.use_fba),
                vals.join(" | ")
            ));
        }
        s
    }

    pub fn row(&self, use_hrf: bool, use_fba: bool) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.use_hrf == use_hrf && r.use_fba == use_fba)
    }
}

/// Trains and evaluates the four module combinations with the same seed
/// and schedule. Each row's run goes to `<out_dir>/row_<a..d>` when given.
pub fn ablation_suite(
    base: &TrainConfig,
    train_samples: &[Sample],
    test_samples: &[Sample],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if test_samples.is_empty() {
        return Err(TvnetError::Data("ablation needs evaluation samples".into()));
    }
    let mut rows = Vec::with_capacity(4);
    for (label, use_hrf, use_fba) in ABLATION_ROWS {
        let cfg = TrainConfig {
            use_hrf,
            use_fba,
            ..base.clone()
        };
        log::info!("ablation row {label}");
        let dir = out_dir.map(|d| d.join(format!("row_{}", &label[..1])));
        let outcome = train(&cfg, train_samples, &[], dir.as_deref(), None)?;
        let (net, params) = outcome.checkpoint.model()?;
        let report = evaluate_model(
            &net,
            &params,
            test_samples,
            cfg.input_size,
            &EvalOptions::default(),
        )?;
        rows.push(AblationRow {
            label: label.to_string(),
            use_hrf,
            use_fba,
            parameters: params.num_scalars(),
            modules: params.counts_by_module(),
            metrics: report.mean,
        });
    }
    let report = AblationReport { rows };
    if let Some(dir) = out_dir {
        for (name, text) in [
            ("ablation.csv", report.to_csv()),
            ("ablation.md", report.to_markdown()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| TvnetError::io(&path, e))?;
        }
    }
    Ok(report)
}
