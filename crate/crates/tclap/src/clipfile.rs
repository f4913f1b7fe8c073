//! `.tclp` clip files: a 16-byte header (`"TCLP"`, u32 frames, u32 frame
//! width, u32 reserved = 0) followed by little-endian f32 frames, row-major.

use std::path::Path;

use tclap_core::corpus::AudioClip;

use crate::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"TCLP";
pub const CLIP_HEADER_LEN: usize = 16;

pub fn encode_clip(clip: &AudioClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLIP_HEADER_LEN + 4 * clip.data().len());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&(clip.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(clip.frame_dim() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for x in clip.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Decodes clip bytes; `path` only labels errors.
pub fn decode_clip(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    let bad = |msg: String| Error::format(path, None, msg);
    if bytes.len() < CLIP_HEADER_LEN {
        return Err(bad(format!("clip is {} bytes, shorter than its header", bytes.len())));
    }
    if &bytes[..4] != CLIP_MAGIC {
        return Err(bad("not a TCLP clip (bad magic)".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (frames, width, reserved) = (word(1), word(2), word(3));
    if reserved != 0 {
        return Err(bad(format!("reserved header field is {reserved}, expected 0")));
    }
    let expected = frames
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("clip dimensions overflow".into()))?;
    let payload = &bytes[CLIP_HEADER_LEN..];
    if payload.len() != expected {
        return Err(bad(format!(
            "{frames}x{width} clip needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    AudioClip::new(frames, width, data).map_err(|e| bad(e.to_string()))
}

pub fn write_clip(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_clip(clip)).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes, path)
}
