//! `.tckp` checkpoints.
//!
//! Layout: `"TCKP"`, u32 format version, then named sections, each a u32
//! name length, the name, a u64 payload length and the payload, in the
//! fixed order `config`, `vocab`, `params`, `optimizer`, `progress`,
//! `rng`. A SHA-256 of everything before it closes the file. Integers and
//! floats are little-endian; tensors are name, u32 rows, u32 cols and f64
//! values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tclap_core::encoders::{EncoderConfig, ModelParams, TextVocab};
use tclap_core::rng::{rng_from_state_bytes, rng_state_bytes};
use tclap_core::tensor::Tensor;
use tclap_core::trainer::{OptimizerState, TrainConfig, TrainState};

use crate::config::hex;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const SECTIONS: [&str; 6] = ["config", "vocab", "params", "optimizer", "progress", "rng"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub vocab: TextVocab,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSection {
    encoder: EncoderConfig,
    train: TrainConfig,
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.str(name);
        self.u32(t.rows() as u32);
        self.u32(t.cols() as u32);
        for &x in t.data() {
            self.f64(x);
        }
    }

    fn section(&mut self, name: &str, payload: Buf) {
        self.str(name);
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, None, format!("checkpoint byte {}: {}", self.pos, msg.into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.err(format!("needs {n} more bytes")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("string is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.str()?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| self.err("tensor shape overflows"))?;
        if n.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(self.err(format!("tensor {name} ({rows}x{cols}) runs past the end")));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok((name, Tensor::from_vec(rows, cols, data)?))
    }

    fn section(&mut self, expected: &str) -> Result<Cursor<'a>> {
        let name = self.str()?;
        if name != expected {
            return Err(self.err(format!("expected section {expected:?}, found {name:?}")));
        }
        let len = self.u64()? as usize;
        Ok(Cursor {
            bytes: self.take(len)?,
            pos: 0,
            path: self.path,
        })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Serializes a checkpoint; equal checkpoints give identical bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Buf::default();
    out.0.extend_from_slice(CHECKPOINT_MAGIC);
    out.u32(CHECKPOINT_VERSION);

    let config = ConfigSection {
        encoder: ckpt.encoder,
        train: ckpt.train,
    };
    out.section(
        SECTIONS[0],
        Buf(serde_json::to_vec(&config).expect("config serializes")),
    );

    let mut vocab = Buf::default();
    vocab.u32(ckpt.vocab.len() as u32);
    for t in ckpt.vocab.tokens() {
        vocab.str(t);
    }
    out.section(SECTIONS[1], vocab);

    let params = ckpt.state.params.params();
    let mut p = Buf::default();
    p.u32(params.len() as u32);
    for param in params {
        p.tensor(&param.name, &param.tensor);
    }
    out.section(SECTIONS[2], p);

    let opt = &ckpt.state.optimizer;
    let mut o = Buf::default();
    o.u64(opt.step);
    o.f64(opt.beta1);
    o.f64(opt.beta2);
    o.f64(opt.eps);
    o.u32(opt.m.len() as u32);
    for (param, (m, v)) in params.iter().zip(opt.m.iter().zip(&opt.v)) {
        o.tensor(&param.name, m);
        o.tensor(&param.name, v);
    }
    out.section(SECTIONS[3], o);

    let mut progress = Buf::default();
    progress.u64(ckpt.state.step);
    out.section(SECTIONS[4], progress);

    out.section(SECTIONS[5], Buf(rng_state_bytes(&ckpt.state.rng).to_vec()));

    let digest = Sha256::digest(&out.0);
    out.0.extend_from_slice(&digest);
    out.0
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::format(path, None, msg);
    if bytes.len() < 8 + 32 {
        return Err(bad(format!("{} bytes is too short for a checkpoint", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a TCKP checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch; the file is corrupted or truncated".into()));
    }

    let mut cur = Cursor { bytes: body, pos: 8, path };
    let config: ConfigSection = {
        let s = cur.section(SECTIONS[0])?;
        serde_json::from_slice(s.bytes).map_err(|e| bad(format!("config section: {e}")))?
    };
    let vocab = {
        let mut s = cur.section(SECTIONS[1])?;
        let n = s.u32()?;
        let tokens = (0..n).map(|_| s.str()).collect::<Result<Vec<_>>>()?;
        s.finish()?;
        TextVocab::from_tokens(tokens)?
    };
    if vocab.len() != config.encoder.vocab_size {
        return Err(bad(format!(
            "vocabulary has {} tokens but the encoder expects {}",
            vocab.len(),
            config.encoder.vocab_size
        )));
    }
    let params = {
        let mut s = cur.section(SECTIONS[2])?;
        let n = s.u32()?;
        let mut named = BTreeMap::new();
        for _ in 0..n {
            let (name, t) = s.tensor()?;
            if named.insert(name.clone(), t).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
        }
        s.finish()?;
        ModelParams::from_named(&config.encoder, named)?
    };
    let optimizer = {
        let mut s = cur.section(SECTIONS[3])?;
        let step = s.u64()?;
        let (beta1, beta2, eps) = (s.f64()?, s.f64()?, s.f64()?);
        let n = s.u32()? as usize;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for p in params.params().iter().take(n) {
            for dst in [&mut m, &mut v] {
                let (name, t) = s.tensor()?;
                if name != p.name {
                    return Err(bad(format!("optimizer moment for {name}, expected {}", p.name)));
                }
                dst.push(t);
            }
        }
        s.finish()?;
        let opt = OptimizerState {
            step,
            beta1,
            beta2,
            eps,
            m,
            v,
        };
        opt.check_matches(params.params())?;
        opt
    };
    let step = {
        let mut s = cur.section(SECTIONS[4])?;
        let step = s.u64()?;
        s.finish()?;
        step
    };
    let rng = {
        let s = cur.section(SECTIONS[5])?;
        rng_from_state_bytes(s.bytes).ok_or_else(|| bad("rng section is not a generator state".into()))?
    };
    cur.finish()?;
    Ok(Checkpoint {
        train: config.train,
        encoder: config.encoder,
        vocab,
        state: TrainState {
            params,
            optimizer,
            rng,
            step,
        },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    // Write to a sibling and rename so an interrupted save never clobbers
    // the last good checkpoint.
    let tmp = path.with_extension("tckp.tmp");
    std::fs::write(&tmp, encode_checkpoint(ckpt)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Content id of a checkpoint: hex of its trailing SHA-256.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex(&bytes[bytes.len().saturating_sub(32)..])
}
