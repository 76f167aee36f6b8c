use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use senet_core::data::write_text;
use senet_core::metrics::{score, MetricsReport};
use senet_core::{Error, Result};

/// One line of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_beta: f64,
    pub mae: f64,
    pub score: f64,
}

impl ReportRow {
    pub fn new(dataset: &str, s_alpha: f64, e_phi: f64, f_beta: f64, mae: f64) -> Self {
        ReportRow {
            dataset: dataset.into(),
            s_alpha,
            e_phi,
            f_beta,
            mae,
            score: score(s_alpha, e_phi, f_beta, mae),
        }
    }
}

impl From<&MetricsReport> for ReportRow {
    fn from(r: &MetricsReport) -> Self {
        ReportRow::new(&r.dataset, r.s_alpha, r.e_phi, r.f_beta, r.mae)
    }
}

pub const REPORT_HEADER: &str = "dataset,s_alpha,e_phi,f_beta,mae,score";

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `report.csv` and its JSON mirror `report.json` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(Error::Contract("report needs at least one row".into()));
    }
    let mut csv = format!("{REPORT_HEADER}\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.dataset),
            r.s_alpha,
            r.e_phi,
            r.f_beta,
            r.mae,
            r.score
        ));
    }
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::Format(e.to_string()))?;
    let (c, j) = (dir.join("report.csv"), dir.join("report.json"));
    write_text(&c, &csv)?;
    write_text(&j, &(json + "\n"))?;
    Ok((c, j))
}
