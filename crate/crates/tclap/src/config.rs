//! Run configuration: one TOML document with `corpus`, `train`, `model`,
//! `loss` and `eval` sections. Every field is optional; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tclap_core::encoders::ModelDims;
use tclap_core::losses::LossConfig;
use tclap_core::rng::{derive_seed, mix64, Stream};
use tclap_core::trainer::{Ratio, TrainConfig};

use crate::manifest::ClipStorage;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_classes: usize,
    pub frame_dim: usize,
    pub frames_per_event: usize,
    pub noise_sigma: f64,
    pub events_per_clip: usize,
    /// Single-event training records (the primary pool).
    pub n_train_primary: usize,
    /// Mixed training records with negatives (the temporal pool).
    pub n_train_temporal: usize,
    /// Held-out mixed records for retrieval and T-Classify.
    pub n_test: usize,
    /// Held-out single-event clips for zero-shot classification.
    pub n_test_single: usize,
    pub clip_storage: ClipStorage,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            n_classes: 20,
            frame_dim: 16,
            frames_per_event: 4,
            noise_sigma: 0.15,
            events_per_clip: 2,
            n_train_primary: 2000,
            n_train_temporal: 2000,
            n_test: 500,
            n_test_single: 500,
            clip_storage: ClipStorage::Files,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub temporal_fraction: Ratio,
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            batch_size: d.batch_size,
            base_lr: d.base_lr,
            warmup_steps: d.warmup_steps,
            temporal_fraction: d.temporal_fraction,
            checkpoint_every: d.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub recall_ks: Vec<usize>,
    pub gradcheck_eps: f64,
    pub gradcheck_coords: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            recall_ks: vec![1, 5, 10],
            gradcheck_eps: 1e-6,
            gradcheck_coords: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; catalog, corpus, initialization and batching streams are
    /// derived from it.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub train: TrainSection,
    pub model: ModelDims,
    pub loss: LossConfig,
    pub eval: EvalSection,
}

/// The four manifests a corpus consists of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusPart {
    TrainPrimary,
    TrainTemporal,
    TestTemporal,
    TestSingle,
}

impl CorpusPart {
    pub const ALL: [CorpusPart; 4] = [
        CorpusPart::TrainPrimary,
        CorpusPart::TrainTemporal,
        CorpusPart::TestTemporal,
        CorpusPart::TestSingle,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            CorpusPart::TrainPrimary => "train_primary.jsonl",
            CorpusPart::TrainTemporal => "train_temporal.jsonl",
            CorpusPart::TestTemporal => "test_temporal.jsonl",
            CorpusPart::TestSingle => "test_single.jsonl",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if !(c.noise_sigma.is_finite() && c.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("corpus.noise_sigma must be >= 0, got {}", c.noise_sigma)));
        }
        if c.frames_per_event == 0 {
            return Err(Error::Config("corpus.frames_per_event must be at least 1".into()));
        }
        let max_k = self.eval.recall_ks.iter().copied().max().unwrap_or(0);
        if self.eval.recall_ks.is_empty() || self.eval.recall_ks.contains(&0) {
            return Err(Error::Config("eval.recall_ks must be non-empty positive integers".into()));
        }
        if c.n_test < max_k {
            return Err(Error::Config(format!(
                "corpus.n_test ({}) must be at least the largest recall k ({max_k})",
                c.n_test
            )));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            warmup_steps: t.warmup_steps,
            temporal_fraction: t.temporal_fraction,
            seed: self.seed,
            checkpoint_every: t.checkpoint_every,
            model: self.model,
            loss: self.loss,
        }
    }

    pub fn catalog_seed(&self) -> u64 {
        derive_seed(self.seed, Stream::Catalog)
    }

    pub fn corpus_seed(&self, part: CorpusPart) -> u64 {
        mix64(derive_seed(self.seed, Stream::Corpus) ^ part.index())
    }

    /// Compact JSON of the effective configuration; field order is fixed.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
