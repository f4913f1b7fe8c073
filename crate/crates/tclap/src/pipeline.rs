//! End-to-end workflow: synthesize a corpus, train with checkpoints and
//! resume, evaluate, gradient-check, and the full reproduction run.

use std::fs;
use std::path::{Path, PathBuf};

use tclap_core::corpus::{
    build_catalog, build_mixed_dataset, build_single_event_dataset, AudioClip, DatasetManifest, EventCatalog,
    MixedCorpusConfig, SingleEventCorpusConfig, Split,
};
use tclap_core::encoders::{build_vocab, BatchItem, EncodedRecord, EncoderConfig, TextVocab};
use tclap_core::eval::{retrieval, t_classify, zero_shot_classify};
use tclap_core::rng::{derive_seed, Stream};
use tclap_core::tensor::FdReport;
use tclap_core::trainer::{gradcheck_pipeline, Ratio, StepMetrics, TrainState, Trainer};

use crate::checkpoint::{checkpoint_id, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{CorpusPart, RunConfig};
use crate::manifest::{load_manifest, manifest_catalog, save_manifest};
use crate::metrics::MetricsLog;
use crate::report::{emit_report, ModelReport, Report, RetrievalPair};
use crate::{Error, Result};

/// Gradient-check pass threshold on the maximum relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-3;

/// All four manifests of a corpus plus their shared catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusData {
    pub catalog: EventCatalog,
    pub train_primary: DatasetManifest,
    pub train_temporal: DatasetManifest,
    pub test_temporal: DatasetManifest,
    pub test_single: DatasetManifest,
}

impl CorpusData {
    pub fn part(&self, part: CorpusPart) -> &DatasetManifest {
        match part {
            CorpusPart::TrainPrimary => &self.train_primary,
            CorpusPart::TrainTemporal => &self.train_temporal,
            CorpusPart::TestTemporal => &self.test_temporal,
            CorpusPart::TestSingle => &self.test_single,
        }
    }

    /// Vocabulary over both training pools, negatives included.
    pub fn vocab(&self) -> Result<TextVocab> {
        Ok(build_vocab(&[&self.train_primary, &self.train_temporal])?)
    }
}

pub fn synth_corpus(cfg: &RunConfig) -> Result<CorpusData> {
    let c = &cfg.corpus;
    let catalog = build_catalog(c.n_classes, c.frame_dim, cfg.catalog_seed())?;
    let mixed = |part, n_records, split| {
        build_mixed_dataset(
            &catalog,
            &MixedCorpusConfig {
                n_records,
                events_per_clip: c.events_per_clip,
                frames_per_event: c.frames_per_event,
                noise_sigma: c.noise_sigma,
                with_negative_clips: true,
                seed: cfg.corpus_seed(part),
                split,
            },
        )
    };
    let single = |part, n_records, split| {
        build_single_event_dataset(
            &catalog,
            &SingleEventCorpusConfig {
                n_records,
                frames_per_event: c.frames_per_event,
                noise_sigma: c.noise_sigma,
                seed: cfg.corpus_seed(part),
                split,
            },
        )
    };
    Ok(CorpusData {
        train_primary: single(CorpusPart::TrainPrimary, c.n_train_primary, Split::Train)?,
        train_temporal: mixed(CorpusPart::TrainTemporal, c.n_train_temporal, Split::Train)?,
        test_temporal: mixed(CorpusPart::TestTemporal, c.n_test, Split::Test)?,
        test_single: single(CorpusPart::TestSingle, c.n_test_single, Split::Test)?,
        catalog,
    })
}

pub fn write_corpus(cfg: &RunConfig, data: &CorpusData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for part in CorpusPart::ALL {
        save_manifest(data.part(part), &dir.join(part.file_name()), cfg.corpus.clip_storage)?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<CorpusData> {
    let load = |part: CorpusPart| load_manifest(&dir.join(part.file_name()));
    let train_primary = load(CorpusPart::TrainPrimary)?;
    let data = CorpusData {
        catalog: manifest_catalog(&train_primary)?,
        train_primary,
        train_temporal: load(CorpusPart::TrainTemporal)?,
        test_temporal: load(CorpusPart::TestTemporal)?,
        test_single: load(CorpusPart::TestSingle)?,
    };
    for part in CorpusPart::ALL {
        if data.part(part).catalog != data.catalog.params() {
            return Err(Error::format(
                &dir.join(part.file_name()),
                Some(1),
                "catalog differs from the other manifests",
            ));
        }
    }
    Ok(data)
}

/// Record counts per manifest, in [`CorpusPart::ALL`] order.
pub fn corpus_counts(data: &CorpusData) -> Vec<(&'static str, usize)> {
    CorpusPart::ALL
        .iter()
        .map(|&p| (p.file_name(), data.part(p).records.len()))
        .collect()
}

fn encoder_for(cfg: &RunConfig, data: &CorpusData, vocab: &TextVocab) -> Result<EncoderConfig> {
    Ok(cfg.model.encoder_config(data.catalog.frame_dim(), vocab.len())?)
}

/// Initial (untrained) checkpoint for `cfg` on `data`.
pub fn initial_checkpoint(cfg: &RunConfig, data: &CorpusData) -> Result<Checkpoint> {
    let vocab = data.vocab()?;
    let encoder = encoder_for(cfg, data, &vocab)?;
    Ok(Checkpoint {
        train: cfg.train_config(),
        state: TrainState::init(&encoder, cfg.seed)?,
        encoder,
        vocab,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Continue from the newest checkpoint in the output directory.
    pub resume: bool,
    /// Stop once this many steps are complete, as if interrupted.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Final checkpoint path; absent when stopped early.
    pub checkpoint_path: Option<PathBuf>,
    pub last: Option<StepMetrics>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.tckp";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn periodic_checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("step-{step:010}.tckp"))
}

fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>> {
    let dir = out.join(CHECKPOINT_DIR);
    if !dir.exists() {
        return Ok(None);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tckp"))
        .collect();
    paths.sort();
    Ok(paths.pop())
}

/// Trains on the corpus, logging every step and checkpointing every
/// `checkpoint_every` steps and at the end.
pub fn train(cfg: &RunConfig, data: &CorpusData, out: &Path, opts: TrainOptions) -> Result<TrainOutcome> {
    fs::create_dir_all(out.join(CHECKPOINT_DIR)).map_err(|e| Error::io(out, e))?;
    let init = initial_checkpoint(cfg, data)?;
    let primary = EncodedRecord::encode_all(&data.train_primary, &init.vocab);
    let temporal = EncodedRecord::encode_all(&data.train_temporal, &init.vocab);
    let metrics_path = out.join(METRICS_FILE);

    let resumed = match opts.resume {
        true => latest_checkpoint(out)?,
        false => None,
    };
    let (mut trainer, mut log) = match resumed {
        Some(path) => {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.train != init.train || ckpt.encoder != init.encoder || ckpt.vocab != init.vocab {
                return Err(Error::Config(format!(
                    "{} was written by a different configuration or corpus",
                    path.display()
                )));
            }
            let log = MetricsLog::resume(&metrics_path, ckpt.state.step)?;
            (Trainer::resume(ckpt.train, ckpt.encoder, ckpt.state)?, log)
        }
        None => (
            Trainer::new(init.train, init.encoder)?,
            MetricsLog::create(&metrics_path)?,
        ),
    };
    let snapshot = |t: &Trainer| Checkpoint {
        train: *t.config(),
        encoder: *t.encoder(),
        vocab: init.vocab.clone(),
        state: t.state().clone(),
    };

    let every = trainer.config().checkpoint_every;
    let mut last = None;
    let mut last_good: Option<PathBuf> = None;
    while !trainer.is_done() {
        if opts.stop_after.is_some_and(|k| trainer.state().step >= k) {
            log.flush()?;
            return Ok(TrainOutcome {
                checkpoint: snapshot(&trainer),
                checkpoint_path: None,
                last,
            });
        }
        let m = trainer.step(&primary, &temporal).map_err(|e| match e {
            tclap_core::Error::Numeric(msg) => Error::Core(tclap_core::Error::Numeric(format!(
                "{msg} at step {}; last good checkpoint: {}",
                trainer.state().step,
                last_good
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into())
            ))),
            other => other.into(),
        })?;
        log.append(&m)?;
        last = Some(m);
        let step = trainer.state().step;
        if step % every == 0 {
            log.flush()?;
            let path = periodic_checkpoint_path(out, step);
            save_checkpoint(&snapshot(&trainer), &path)?;
            last_good = Some(path);
        }
    }
    log.flush()?;
    let checkpoint = snapshot(&trainer);
    let path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &path)?;
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path: Some(path),
        last,
    })
}

/// Which metric groups to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSelection {
    pub retrieval: bool,
    pub zero_shot: bool,
    pub t_classify: bool,
}

impl EvalSelection {
    pub const ALL: Self = Self {
        retrieval: true,
        zero_shot: true,
        t_classify: true,
    };
}

pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    data: &CorpusData,
    label: &str,
    which: EvalSelection,
) -> Result<ModelReport> {
    if ckpt.encoder.frame_dim != data.catalog.frame_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {}-dimensional frames, corpus has {}",
            ckpt.encoder.frame_dim,
            data.catalog.frame_dim()
        )));
    }
    let params = &ckpt.state.params;
    let enc = &ckpt.encoder;
    let test = EncodedRecord::encode_all(&data.test_temporal, &ckpt.vocab);
    let retrieval = which
        .retrieval
        .then(|| retrieval(params, enc, &test, &cfg.eval.recall_ks).map(|(t2a, a2t)| RetrievalPair { t2a, a2t }))
        .transpose()?;
    let t_classify = which.t_classify.then(|| t_classify(params, enc, &test)).transpose()?;
    let zero_shot = if which.zero_shot {
        let clips: Vec<(&AudioClip, u32)> = data
            .test_single
            .records
            .iter()
            .map(|r| (&r.clip, r.spec.event_ids[0]))
            .collect();
        let labels: Vec<u32> = (0..data.catalog.len() as u32).collect();
        Some(zero_shot_classify(params, enc, &ckpt.vocab, &data.catalog, &clips, &labels)?)
    } else {
        None
    };
    Ok(ModelReport {
        label: label.to_string(),
        checkpoint_id: checkpoint_id(&encode_checkpoint(ckpt)),
        t_classify,
        retrieval,
        zero_shot,
    })
}

/// Central-difference check of `L_train` through both towers on a small
/// seeded batch: one temporal record and three single-event records.
pub fn gradcheck(cfg: &RunConfig) -> Result<FdReport> {
    let seed = derive_seed(cfg.seed, Stream::GradCheck);
    let c = &cfg.corpus;
    let catalog = build_catalog(c.n_classes, c.frame_dim, cfg.catalog_seed())?;
    let mixed = build_mixed_dataset(
        &catalog,
        &MixedCorpusConfig {
            n_records: 1,
            events_per_clip: c.events_per_clip,
            frames_per_event: c.frames_per_event,
            noise_sigma: c.noise_sigma,
            with_negative_clips: false,
            seed,
            split: Split::Train,
        },
    )?;
    let single = build_single_event_dataset(
        &catalog,
        &SingleEventCorpusConfig {
            n_records: 3,
            frames_per_event: c.frames_per_event,
            noise_sigma: c.noise_sigma,
            seed: seed ^ 1,
            split: Split::Train,
        },
    )?;
    let vocab = build_vocab(&[&single, &mixed])?;
    let encoder = cfg.model.encoder_config(c.frame_dim, vocab.len())?;
    let state = TrainState::init(&encoder, cfg.seed)?;
    let temporal = EncodedRecord::encode_all(&mixed, &vocab);
    let primary = EncodedRecord::encode_all(&single, &vocab);
    let batch: Vec<BatchItem> = std::iter::once(BatchItem::from_record(&temporal[0], true))
        .chain(primary.iter().map(|r| BatchItem::from_record(r, false)))
        .collect();
    Ok(gradcheck_pipeline(
        &state.params,
        &encoder,
        &batch,
        &cfg.loss,
        cfg.eval.gradcheck_eps,
        cfg.eval.gradcheck_coords,
        seed,
    )?)
}

/// Fails with [`Error::GradCheck`] unless the report is under threshold.
pub fn require_gradcheck(report: &FdReport) -> Result<()> {
    if report.max_rel_error < GRADCHECK_THRESHOLD {
        return Ok(());
    }
    Err(Error::GradCheck {
        max_rel_error: report.max_rel_error,
        threshold: GRADCHECK_THRESHOLD,
        worst: report
            .worst
            .as_ref()
            .map(|(n, k)| format!("{n}[{k}]"))
            .unwrap_or_default(),
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const UNTRAINED_LABEL: &str = "untrained";
pub const CONTROL_LABEL: &str = "control (lambda_l=0)";

/// Report label of the model trained with the configured `lambda_l`.
pub fn trained_label(lambda: f64) -> String {
    format!("temporal (lambda_l={lambda})")
}

/// Synthesizes the corpus under `out/data`, trains the configured model
/// and a `lambda_l = 0` control from the same seed, evaluates both and the
/// untrained initialization, and writes `out/report.json`.
pub fn repro(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let data = synth_corpus(cfg)?;
    let data_dir = out.join("data");
    write_corpus(cfg, &data, &data_dir)?;
    let data = load_corpus(&data_dir)?;

    let mut control_cfg = cfg.clone();
    control_cfg.loss.lambda_l = 0.0;
    let main = train(cfg, &data, &out.join("tclap"), TrainOptions::default())?;
    let control = train(&control_cfg, &data, &out.join("control"), TrainOptions::default())?;
    let untrained = initial_checkpoint(cfg, &data)?;

    let models = vec![
        evaluate_checkpoint(cfg, &untrained, &data, UNTRAINED_LABEL, EvalSelection::ALL)?,
        evaluate_checkpoint(cfg, &control.checkpoint, &data, CONTROL_LABEL, EvalSelection::ALL)?,
        evaluate_checkpoint(cfg, &main.checkpoint, &data, &trained_label(cfg.loss.lambda_l), EvalSelection::ALL)?,
    ];
    let report = Report::new("repro", cfg, models);
    emit_report(&report, &out.join(REPORT_FILE))?;
    Ok(report)
}

/// A small configuration that exercises every stage in a few seconds.
pub fn smoke_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus.n_classes = 6;
    cfg.corpus.frame_dim = 8;
    cfg.corpus.frames_per_event = 2;
    cfg.corpus.n_train_primary = 60;
    cfg.corpus.n_train_temporal = 60;
    cfg.corpus.n_test = 20;
    cfg.corpus.n_test_single = 12;
    cfg.train.steps = 40;
    cfg.train.warmup_steps = 10;
    cfg.train.batch_size = 10;
    cfg.train.checkpoint_every = 10;
    cfg.train.temporal_fraction = Ratio::new(1, 5).expect("valid fraction");
    cfg.model.token_embed_dim = 8;
    cfg.model.hidden_dim = 12;
    cfg.model.shared_dim = 8;
    cfg.model.max_positions = 16;
    cfg
}
