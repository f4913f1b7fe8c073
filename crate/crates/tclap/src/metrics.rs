//! Per-step metrics log: one JSON object per line,
//! `{step, lr, l_c, l_t, l_train, temporal_count}`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tclap_core::trainer::StepMetrics;

use crate::{Error, Result};

pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Starts a fresh log, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    /// Keeps the entries before `step` and appends after them, so a
    /// resumed run writes the same file as an uninterrupted one.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        let kept: Vec<StepMetrics> = if path.exists() {
            read_metrics(path)?.into_iter().filter(|m| m.step < step).collect()
        } else {
            Vec::new()
        };
        if kept.len() as u64 != step {
            return Err(Error::format(
                path,
                None,
                format!("log holds {} entries before step {step}; cannot resume", kept.len()),
            ));
        }
        let mut log = Self::create(path)?;
        for m in &kept {
            log.append(m)?;
        }
        Ok(log)
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, Some(i + 1), e.to_string())))
        .collect()
}
