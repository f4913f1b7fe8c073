//! Line-delimited JSON manifests.
//!
//! Line 1 is a header with the schema version, catalog parameters, split,
//! seed and record count; every further line is one record. Clip frames
//! live in `.tclp` files next to the manifest (paths relative to the
//! manifest's directory) or inline as base64 of the same bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tclap_core::corpus::{
    build_catalog, AudioClip, Caption, CatalogParams, ClipSpec, Connector, DatasetManifest, DatasetRecord,
    EventCatalog, Segment, Split,
};

use crate::clipfile::{decode_clip, encode_clip};
use crate::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Where clip frames are stored when saving.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipStorage {
    /// One `.tclp` file per clip.
    #[default]
    Files,
    /// Base64 inside the manifest line.
    Inline,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    catalog: CatalogParams,
    split: Split,
    seed: u64,
    n_records: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionLine {
    tokens: Vec<String>,
    segments: Vec<Segment>,
    connectors: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum ClipRef {
    Path(String),
    Base64(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: u64,
    spec: ClipSpec,
    caption_pos: CaptionLine,
    caption_neg: Option<CaptionLine>,
    clip: ClipRef,
    clip_neg: Option<ClipRef>,
}

fn caption_line(c: &Caption) -> CaptionLine {
    CaptionLine {
        tokens: c.tokens().to_vec(),
        segments: c.segments().to_vec(),
        connectors: c.connectors().iter().map(|k| k.phrase().to_string()).collect(),
    }
}

fn caption_from_line(line: CaptionLine, catalog: &EventCatalog) -> tclap_core::Result<Caption> {
    let connectors = line
        .connectors
        .iter()
        .map(|p| Connector::from_phrase(p).ok_or_else(|| tclap_core::Error::UnknownConnector(p.clone())))
        .collect::<tclap_core::Result<Vec<_>>>()?;
    Caption::from_parts(line.tokens, line.segments, connectors, catalog)
}

/// Directory holding a manifest's clip files, relative to the manifest.
fn clip_dir_name(manifest_path: &Path) -> String {
    let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    format!("{stem}_clips")
}

/// Writes `manifest` to `path`, creating clip files as needed.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path, storage: ClipStorage) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let clip_dir = clip_dir_name(path);
    if storage == ClipStorage::Files {
        let dir = base.join(&clip_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let store = |clip: &AudioClip, name: String| -> Result<ClipRef> {
        let bytes = encode_clip(clip);
        Ok(match storage {
            ClipStorage::Inline => ClipRef::Base64(B64.encode(bytes)),
            ClipStorage::Files => {
                let rel = format!("{clip_dir}/{name}");
                let full = base.join(&rel);
                fs::write(&full, bytes).map_err(|e| Error::io(&full, e))?;
                ClipRef::Path(rel)
            }
        })
    };

    let mut out = String::new();
    let header = Header {
        schema_version: MANIFEST_SCHEMA_VERSION,
        catalog: manifest.catalog,
        split: manifest.split,
        seed: manifest.seed,
        n_records: manifest.records.len(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for r in &manifest.records {
        let line = RecordLine {
            id: r.id,
            spec: r.spec.clone(),
            caption_pos: caption_line(&r.caption_pos),
            caption_neg: r.caption_neg.as_ref().map(caption_line),
            clip: store(&r.clip, format!("{:06}.tclp", r.id))?,
            clip_neg: r
                .clip_neg
                .as_ref()
                .map(|c| store(c, format!("{:06}.neg.tclp", r.id)))
                .transpose()?,
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and checks it against the catalog its header names.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, first) = lines.next().ok_or_else(|| Error::format(path, Some(1), "empty manifest"))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| Error::format(path, Some(1), format!("bad header: {e}")))?;
    if header.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::format(
            path,
            Some(1),
            format!(
                "manifest schema version {} is not the supported version {}",
                header.schema_version, MANIFEST_SCHEMA_VERSION
            ),
        ));
    }
    let catalog = build_catalog(header.catalog.n_classes, header.catalog.frame_dim, header.catalog.seed)
        .map_err(|e| Error::format(path, Some(1), format!("catalog: {e}")))?;

    let load_clip = |r: ClipRef, line: usize| -> Result<AudioClip> {
        match r {
            ClipRef::Base64(s) => {
                let bytes = B64
                    .decode(s)
                    .map_err(|e| Error::format(path, Some(line), format!("bad base64 clip: {e}")))?;
                decode_clip(&bytes, path).map_err(|e| Error::format(path, Some(line), e.to_string()))
            }
            ClipRef::Path(rel) => {
                let full = base.join(&rel);
                let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
                decode_clip(&bytes, &full)
            }
        }
    };

    let mut records = Vec::with_capacity(header.n_records);
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: String| Error::format(path, Some(n), e);
        let rec: RecordLine = serde_json::from_str(line).map_err(|e| at(format!("bad record: {e}")))?;
        let caption_pos = caption_from_line(rec.caption_pos, &catalog).map_err(|e| at(e.to_string()))?;
        let caption_neg = rec
            .caption_neg
            .map(|c| caption_from_line(c, &catalog))
            .transpose()
            .map_err(|e| at(e.to_string()))?;
        records.push(DatasetRecord {
            id: rec.id,
            spec: rec.spec,
            clip: load_clip(rec.clip, n)?,
            caption_pos,
            caption_neg,
            clip_neg: rec.clip_neg.map(|c| load_clip(c, n)).transpose()?,
        });
    }
    if records.len() != header.n_records {
        return Err(Error::format(
            path,
            None,
            format!("header promises {} records, found {}", header.n_records, records.len()),
        ));
    }
    let manifest = DatasetManifest {
        catalog: header.catalog,
        split: header.split,
        seed: header.seed,
        records,
    };
    manifest
        .validate(&catalog)
        .map_err(|e| Error::format(path, None, e.to_string()))?;
    Ok(manifest)
}

/// Rebuilds the catalog a manifest was generated from.
pub fn manifest_catalog(manifest: &DatasetManifest) -> Result<EventCatalog> {
    let p = manifest.catalog;
    Ok(build_catalog(p.n_classes, p.frame_dim, p.seed)?)
}
