use std::path::Path;

use tclap::checkpoint::{
    checkpoint_id, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
use tclap::clipfile::{decode_clip, encode_clip, read_clip, write_clip, CLIP_HEADER_LEN};
use tclap::config::RunConfig;
use tclap::manifest::{load_manifest, manifest_catalog, save_manifest, ClipStorage};
use tclap::metrics::{read_metrics, MetricsLog};
use tclap::pipeline::{self, smoke_config};
use tclap::report::{emit_report, read_report, Report};
use tclap::Error;
use tclap_core::corpus::AudioClip;
use tclap_core::trainer::StepMetrics;

fn corpus() -> pipeline::CorpusData {
    pipeline::synth_corpus(&smoke_config()).unwrap()
}

#[test]
fn clip_round_trip_is_exact() {
    let clip = AudioClip::new(3, 2, vec![0.0, -1.5, 1e-30, f32::MAX, 0.25, -0.0]).unwrap();
    let bytes = encode_clip(&clip);
    assert_eq!(&bytes[..4], b"TCLP");
    assert_eq!(bytes.len(), CLIP_HEADER_LEN + 6 * 4);
    assert_eq!(decode_clip(&bytes, Path::new("x")).unwrap(), clip);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.tclp");
    write_clip(&path, &clip).unwrap();
    assert_eq!(read_clip(&path).unwrap(), clip);
}

#[test]
fn truncated_clip_is_a_format_error() {
    let clip = AudioClip::new(2, 2, vec![1.0; 4]).unwrap();
    let bytes = encode_clip(&clip);
    let err = decode_clip(&bytes[..bytes.len() - 1], Path::new("c.tclp")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn manifests_round_trip_in_both_storage_modes() {
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    for storage in [ClipStorage::Files, ClipStorage::Inline] {
        for part in [&data.train_primary, &data.train_temporal] {
            let path = dir.path().join(format!("{storage:?}-{:?}.jsonl", part.split));
            save_manifest(part, &path, storage).unwrap();
            let back = load_manifest(&path).unwrap();
            assert_eq!(&back, part);
            assert_eq!(manifest_catalog(&back).unwrap(), data.catalog);
        }
    }
}

#[test]
fn truncated_manifest_names_the_line() {
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    save_manifest(&data.train_temporal, &path, ClipStorage::Inline).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let third_line_end = text.match_indices('\n').nth(2).unwrap().0;
    std::fs::write(&path, &text[..third_line_end - 10]).unwrap();
    match load_manifest(&path).unwrap_err() {
        Error::Format { line, .. } => assert_eq!(line, Some(3)),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn manifest_with_missing_records_is_rejected() {
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    save_manifest(&data.train_primary, &path, ClipStorage::Inline).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().take(5).collect();
    std::fs::write(&path, kept.join("\n")).unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(err.to_string().contains("header promises"), "{err}");
}

#[test]
fn manifest_without_catalog_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, "{\"schema_version\":1,\"split\":\"train\",\"seed\":1,\"n_records\":0}\n").unwrap();
    match load_manifest(&path).unwrap_err() {
        Error::Format { line, msg, .. } => {
            assert_eq!(line, Some(1));
            assert!(msg.contains("catalog"), "{msg}");
        }
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn missing_clip_file_is_an_io_error() {
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    save_manifest(&data.test_single, &path, ClipStorage::Files).unwrap();
    std::fs::remove_file(dir.path().join("m_clips").join("000000.tclp")).unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let cfg = smoke_config();
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline::train(&cfg, &data, dir.path(), Default::default()).unwrap();
    let path = out.checkpoint_path.unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);

    let loaded = load_checkpoint(&path).unwrap();
    let again = dir.path().join("again.tckp");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);
    assert_eq!(encode_checkpoint(&out.checkpoint), bytes);
    assert_eq!(checkpoint_id(&bytes).len(), 64);
}

#[test]
fn corrupted_checkpoint_is_detected() {
    let cfg = smoke_config();
    let data = corpus();
    let bytes = encode_checkpoint(&pipeline::initial_checkpoint(&cfg, &data).unwrap());
    for at in [20, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        let err = decode_checkpoint(&bad, Path::new("c.tckp")).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
    let err = decode_checkpoint(&bytes[..bytes.len() - 7], Path::new("c.tckp")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

#[test]
fn future_checkpoint_version_is_refused() {
    let cfg = smoke_config();
    let data = corpus();
    let mut bytes = encode_checkpoint(&pipeline::initial_checkpoint(&cfg, &data).unwrap());
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    let err = decode_checkpoint(&bytes, Path::new("c.tckp")).unwrap_err();
    assert!(err.to_string().contains("version 2"), "{err}");
}

#[test]
fn unknown_config_key_is_named() {
    let err = RunConfig::from_toml_str("[train]\nstepz = 5\n").unwrap_err();
    assert!(err.to_string().contains("stepz"), "{err}");
    assert_eq!(err.exit_code(), 1);
    let err = RunConfig::from_toml_str("colour = 1\n").unwrap_err();
    assert!(err.to_string().contains("colour"), "{err}");
}

#[test]
fn config_defaults_fill_omitted_fields() {
    let cfg = RunConfig::from_toml_str("seed = 9\n[train]\nsteps = 12\nwarmup_steps = 3\n").unwrap();
    let mut want = RunConfig {
        seed: 9,
        ..RunConfig::default()
    };
    want.train.steps = 12;
    want.train.warmup_steps = 3;
    assert_eq!(cfg, want);
    assert_ne!(cfg.hash(), RunConfig::default().hash());
    assert_eq!(cfg.hash(), want.hash());
}

#[test]
fn invalid_config_values_are_config_errors() {
    for text in ["[train]\nwarmup_steps = 999999\n", "[loss]\nlambda_l = -1.0\n", "[train]\ntemporal_fraction = \"3/2\"\n"] {
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{text}: {err}");
    }
}

fn metric(step: u64) -> StepMetrics {
    StepMetrics {
        step,
        lr: 1e-3 * (step as f64 + 1.0) / 7.0,
        l_c: 1.0 / (step as f64 + 3.0),
        l_t: 0.1,
        l_train: 0.3,
        temporal_count: 2,
    }
}

#[test]
fn metrics_resume_truncates_to_the_checkpoint_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let mut log = MetricsLog::create(&path).unwrap();
    for s in 0..8 {
        log.append(&metric(s)).unwrap();
    }
    log.flush().unwrap();
    drop(log);
    assert_eq!(read_metrics(&path).unwrap(), (0..8).map(metric).collect::<Vec<_>>());

    let mut log = MetricsLog::resume(&path, 5).unwrap();
    log.append(&metric(5)).unwrap();
    log.flush().unwrap();
    assert_eq!(read_metrics(&path).unwrap(), (0..6).map(metric).collect::<Vec<_>>());
    assert!(MetricsLog::resume(&path, 9).is_err());
}

#[test]
fn report_round_trips_and_lists_each_metric_once() {
    let cfg = smoke_config();
    let data = corpus();
    let ckpt = pipeline::initial_checkpoint(&cfg, &data).unwrap();
    let model = pipeline::evaluate_checkpoint(&cfg, &ckpt, &data, "init", pipeline::EvalSelection::ALL).unwrap();
    let report = Report::new("eval", &cfg, vec![model]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    emit_report(&report, &path).unwrap();
    assert_eq!(read_report(&path).unwrap(), report);

    let text = std::fs::read_to_string(&path).unwrap();
    for key in ["\"t_classify\"", "\"retrieval\"", "\"zero_shot\"", "\"config_hash\"", "\"checkpoint_id\""] {
        assert_eq!(text.matches(key).count(), 1, "{key}");
    }
    assert!(report.summary().contains("init"));
}

#[test]
fn unwritable_report_path_is_an_io_error() {
    let report = Report::new("eval", &smoke_config(), vec![]);
    let err = emit_report(&report, Path::new("/nonexistent-dir/report.json")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}
