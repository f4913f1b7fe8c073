//! Evaluation reports: schema-versioned JSON with the effective config,
//! its hash, and one entry per evaluated model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tclap_core::eval::{RetrievalResult, TClassifyResult, ZeroShotResult};

use crate::config::RunConfig;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalPair {
    pub t2a: RetrievalResult,
    pub a2t: RetrievalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelReport {
    pub label: String,
    pub checkpoint_id: String,
    pub t_classify: Option<TClassifyResult>,
    pub retrieval: Option<RetrievalPair>,
    pub zero_shot: Option<ZeroShotResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub models: Vec<ModelReport>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig, models: Vec<ModelReport>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            models,
        }
    }

    pub fn model(&self, label: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.label == label)
    }

    /// Fixed-width comparison table, one row per model.
    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map(|v| format!("{v:>7.1}")).unwrap_or_else(|| format!("{:>7}", "-"));
        let mut out = format!(
            "{:<24} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "model", "T2A", "A2T", "R@1", "R@5", "R@10", "ZS"
        );
        for m in &self.models {
            let tc = m.t_classify.as_ref();
            let r = |k: usize| m.retrieval.as_ref().and_then(|r| r.t2a.recall_at.get(&k).copied());
            out.push_str(&format!(
                "{:<24} {} {} {} {} {} {}\n",
                m.label,
                pct(tc.map(|t| t.t2a_accuracy)),
                pct(tc.and_then(|t| t.a2t_accuracy)),
                pct(r(1)),
                pct(r(5)),
                pct(r(10)),
                pct(m.zero_shot.as_ref().map(|z| z.accuracy)),
            ));
        }
        out
    }
}

pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| Error::format(path, Some(e.line()), e.to_string()))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::format(
            path,
            None,
            format!(
                "report schema version {}, expected {REPORT_SCHEMA_VERSION}",
                report.schema_version
            ),
        ));
    }
    Ok(report)
}
