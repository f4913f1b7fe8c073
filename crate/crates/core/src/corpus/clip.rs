use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EventCatalog, EventClass};
use crate::rng::Rng;
use crate::{Error, Result};

/// Ordered events to concatenate into one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub event_ids: Vec<u32>,
    pub frames_per_event: usize,
    pub noise_sigma: f64,
}

impl ClipSpec {
    fn validate(&self) -> Result<()> {
        if self.event_ids.is_empty() {
            return Err(Error::InvalidConfig("clip spec has no events".into()));
        }
        if self.frames_per_event == 0 {
            return Err(Error::InvalidConfig("frames_per_event must be at least 1".into()));
        }
        check_sigma(self.noise_sigma)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise_sigma must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// Frame matrix, `n_frames` rows of `frame_dim` values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    n_frames: usize,
    frame_dim: usize,
    data: Vec<f32>,
}

impl AudioClip {
    pub fn new(n_frames: usize, frame_dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_frames * frame_dim {
            return Err(Error::InvalidConfig(format!(
                "clip of {n_frames}x{frame_dim} needs {} values, got {}",
                n_frames * frame_dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("clip frames".into()));
        }
        Ok(Self {
            n_frames,
            frame_dim,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.frame_dim..(t + 1) * self.frame_dim]
    }

    /// Clip with its frame order reversed.
    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.n_frames).rev() {
            data.extend_from_slice(self.frame(t));
        }
        Self { data, ..*self }
    }

    fn concat<'a>(blocks: impl Iterator<Item = &'a AudioClip>, frame_dim: usize) -> Self {
        let mut data = Vec::new();
        let mut n_frames = 0;
        for b in blocks {
            data.extend_from_slice(&b.data);
            n_frames += b.n_frames;
        }
        Self {
            n_frames,
            frame_dim,
            data,
        }
    }
}

/// `n_frames` noisy copies of the class prototype.
pub fn synth_event_frames(class: &EventClass, n_frames: usize, noise_sigma: f64, rng: &mut Rng) -> Result<AudioClip> {
    if n_frames == 0 {
        return Err(Error::InvalidConfig("n_frames must be at least 1".into()));
    }
    check_sigma(noise_sigma)?;
    let dim = class.prototype.len();
    let mut data = Vec::with_capacity(n_frames * dim);
    for _ in 0..n_frames {
        for &p in &class.prototype {
            if noise_sigma == 0.0 {
                data.push(p);
            } else {
                let z: f64 = StandardNormal.sample(rng);
                data.push((p as f64 + noise_sigma * z) as f32);
            }
        }
    }
    Ok(AudioClip {
        n_frames,
        frame_dim: dim,
        data,
    })
}

fn event_blocks(spec: &ClipSpec, catalog: &EventCatalog, rng: &mut Rng) -> Result<Vec<AudioClip>> {
    spec.validate()?;
    let classes = spec
        .event_ids
        .iter()
        .map(|&id| catalog.class(id))
        .collect::<Result<Vec<_>>>()?;
    classes
        .into_iter()
        .map(|c| synth_event_frames(c, spec.frames_per_event, spec.noise_sigma, rng))
        .collect()
}

/// Concatenates per-event frame blocks in spec order.
pub fn compose_clip(spec: &ClipSpec, catalog: &EventCatalog, rng: &mut Rng) -> Result<AudioClip> {
    let blocks = event_blocks(spec, catalog, rng)?;
    Ok(AudioClip::concat(blocks.iter(), catalog.frame_dim()))
}

/// The clip for `spec` together with the clip for the reversed event order,
/// both built from the same per-event noise draws.
pub fn compose_clip_pair(spec: &ClipSpec, catalog: &EventCatalog, rng: &mut Rng) -> Result<(AudioClip, AudioClip)> {
    let blocks = event_blocks(spec, catalog, rng)?;
    let forward = AudioClip::concat(blocks.iter(), catalog.frame_dim());
    let reversed = AudioClip::concat(blocks.iter().rev(), catalog.frame_dim());
    Ok((forward, reversed))
}
