//! Text and audio towers.
//!
//! Both towers share one layout: per-position input vector (token
//! embedding or projected frame) plus a learned positional embedding, a
//! ReLU hidden layer applied at every position, mean pooling over
//! positions, a linear projection into the shared dimension `D` and L2
//! normalization. The hidden nonlinearity sits before the pool: pooling
//! `embed + pos` directly would reduce to a bag of tokens plus a
//! length-only term, which cannot tell `[a, b]` from `[b, a]`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{AudioClip, DatasetManifest, DatasetRecord};
use crate::rng::rng_from_seed;
use crate::tensor::{NodeId, Parameter, Tape, Tensor, NORM_EPS};
use crate::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Standard deviation of every initial weight.
pub const INIT_STD: f64 = 0.02;

/// Initial `log_temperature`, `ln(1 / 0.07)`.
pub fn initial_log_temperature() -> f64 {
    libm::log(1.0 / 0.07)
}

/// Bounds `log_temperature` is clamped to after each optimizer step.
pub fn log_temperature_bounds() -> (f64, f64) {
    (libm::log(1.0 / 100.0), libm::log(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub frame_dim: usize,
    pub vocab_size: usize,
    pub token_embed_dim: usize,
    pub max_positions: usize,
    pub hidden_dim: usize,
    pub shared_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("frame_dim", self.frame_dim),
            ("vocab_size", self.vocab_size),
            ("token_embed_dim", self.token_embed_dim),
            ("max_positions", self.max_positions),
            ("hidden_dim", self.hidden_dim),
            ("shared_dim", self.shared_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Data-independent tower sizes; frame and vocabulary sizes come from
/// the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub token_embed_dim: usize,
    pub max_positions: usize,
    pub hidden_dim: usize,
    pub shared_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            token_embed_dim: 32,
            max_positions: 64,
            hidden_dim: 64,
            shared_dim: 32,
        }
    }
}

impl ModelDims {
    pub fn encoder_config(&self, frame_dim: usize, vocab_size: usize) -> Result<EncoderConfig> {
        let config = EncoderConfig {
            frame_dim,
            vocab_size,
            token_embed_dim: self.token_embed_dim,
            max_positions: self.max_positions,
            hidden_dim: self.hidden_dim,
            shared_dim: self.shared_dim,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Token to id map; id 0 is reserved for unknown tokens, the rest follow
/// first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl TextVocab {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::InvalidConfig(format!("vocabulary must start with {UNK_TOKEN}")));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Collects every caption token (positive and negative) across the
/// manifests, in order of first appearance.
pub fn build_vocab(manifests: &[&DatasetManifest]) -> Result<TextVocab> {
    let mut tokens = alloc::vec![UNK_TOKEN.to_string()];
    let mut index = BTreeMap::new();
    index.insert(UNK_TOKEN.to_string(), UNK_ID);
    for m in manifests {
        for r in &m.records {
            let captions = core::iter::once(&r.caption_pos).chain(r.caption_neg.as_ref());
            for tok in captions.flat_map(|c| c.tokens()) {
                if !index.contains_key(tok) {
                    index.insert(tok.clone(), tokens.len() as u32);
                    tokens.push(tok.clone());
                }
            }
        }
    }
    if tokens.len() == 1 {
        return Err(Error::InvalidConfig("cannot build a vocabulary from an empty corpus".into()));
    }
    Ok(TextVocab { tokens, index })
}

/// Parameter order inside [`ModelParams`].
pub const PARAM_NAMES: [&str; 13] = [
    "text.embed",
    "text.pos",
    "text.mlp.w1",
    "text.mlp.b1",
    "text.mlp.w2",
    "text.mlp.b2",
    "audio.frame_proj",
    "audio.pos",
    "audio.mlp.w1",
    "audio.mlp.b1",
    "audio.mlp.w2",
    "audio.mlp.b2",
    "log_temperature",
];

/// Named parameters of both towers plus the contrastive temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    params: Vec<Parameter>,
}

impl ModelParams {
    fn shapes(config: &EncoderConfig) -> [(usize, usize); 13] {
        let EncoderConfig {
            frame_dim: f,
            vocab_size: v,
            token_embed_dim: e,
            max_positions: p,
            hidden_dim: h,
            shared_dim: d,
        } = *config;
        [
            (v, e),
            (p, e),
            (e, h),
            (1, h),
            (h, d),
            (1, d),
            (f, e),
            (p, e),
            (e, h),
            (1, h),
            (h, d),
            (1, d),
            (1, 1),
        ]
    }

    /// Weights and positional embeddings ~ N(0, 0.02^2), biases zero,
    /// `log_temperature = ln(1/0.07)`.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = PARAM_NAMES
            .iter()
            .zip(Self::shapes(config))
            .map(|(&name, (r, c))| {
                let tensor = if name == "log_temperature" {
                    Tensor::scalar(initial_log_temperature())
                } else if name.ends_with(".b1") || name.ends_with(".b2") {
                    Tensor::zeros(r, c)
                } else {
                    let data = (0..r * c).map(|_| normal.sample(&mut rng)).collect();
                    Tensor::from_vec(r, c, data).expect("shape")
                };
                Parameter::new(name, tensor)
            })
            .collect();
        Ok(Self { params })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against `config`.
    pub fn from_named(config: &EncoderConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        for (&name, shape) in PARAM_NAMES.iter().zip(Self::shapes(config)) {
            let tensor = named
                .remove(name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))?;
            if tensor.shape() != shape {
                return Err(Error::Shape {
                    op: "ModelParams::from_named",
                    left: tensor.shape(),
                    right: shape,
                });
            }
            if !tensor.is_finite() {
                return Err(Error::Numeric(format!("parameter {name}")));
            }
            params.push(Parameter::new(name, tensor));
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::InvalidConfig(format!("unexpected parameter {extra}")));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn log_temperature(&self) -> f64 {
        self.params[12].tensor.item()
    }

    pub fn set_log_temperature(&mut self, value: f64) {
        self.params[12].tensor = Tensor::scalar(value);
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter on `tape`.
    pub fn register(&self, tape: &mut Tape) -> Result<ModelNodes> {
        let ids = tape.params(&self.params)?;
        Ok(ModelNodes::from_ids(&ids))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TowerNodes {
    /// Token embedding table (text) or frame projection (audio).
    pub input: NodeId,
    pub pos: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// Tape handles for every model parameter.
#[derive(Debug, Clone, Copy)]
pub struct ModelNodes {
    pub text: TowerNodes,
    pub audio: TowerNodes,
    pub log_temperature: NodeId,
}

impl ModelNodes {
    /// Maps ids registered in [`PARAM_NAMES`] order.
    pub fn from_ids(ids: &[NodeId]) -> Self {
        assert_eq!(ids.len(), PARAM_NAMES.len(), "one node per model parameter");
        let tower = |o: usize| TowerNodes {
            input: ids[o],
            pos: ids[o + 1],
            w1: ids[o + 2],
            b1: ids[o + 3],
            w2: ids[o + 4],
            b2: ids[o + 5],
        };
        Self {
            text: tower(0),
            audio: tower(6),
            log_temperature: ids[12],
        }
    }
}

fn check_length(len: usize, config: &EncoderConfig) -> Result<()> {
    if len == 0 {
        return Err(Error::EmptyInput);
    }
    if len > config.max_positions {
        return Err(Error::SequenceTooLong {
            len,
            max: config.max_positions,
        });
    }
    Ok(())
}

fn offsets_and_positions(lengths: impl Iterator<Item = usize>) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = alloc::vec![0];
    let mut positions = Vec::new();
    for len in lengths {
        positions.extend(0..len);
        offsets.push(offsets.last().unwrap() + len);
    }
    (offsets, positions)
}

// Shared tail: add positions, per-position ReLU layer, pool, project,
// normalize.
fn tower_tail(tape: &mut Tape, tower: &TowerNodes, inputs: NodeId, positions: &[usize], offsets: &[usize]) -> Result<NodeId> {
    let pos = tape.gather_rows(tower.pos, positions)?;
    let h = tape.add(inputs, pos)?;
    let h = tape.matmul(h, tower.w1)?;
    let h = tape.add_bias(h, tower.b1)?;
    let h = tape.relu(h)?;
    let pooled = tape.segment_mean_rows(h, offsets)?;
    let out = tape.matmul(pooled, tower.w2)?;
    let out = tape.add_bias(out, tower.b2)?;
    tape.row_l2_normalize(out, NORM_EPS)
}

/// Text embeddings for a batch of token-id sequences, `N x D`.
pub fn encode_texts(tape: &mut Tape, nodes: &ModelNodes, config: &EncoderConfig, seqs: &[&[u32]]) -> Result<NodeId> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput);
    }
    for s in seqs {
        check_length(s.len(), config)?;
        if let Some(&bad) = s.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::InvalidConfig(format!(
                "token id {bad} outside vocabulary of {}",
                config.vocab_size
            )));
        }
    }
    let (offsets, positions) = offsets_and_positions(seqs.iter().map(|s| s.len()));
    let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
    let embedded = tape.gather_rows(nodes.text.input, &ids)?;
    tower_tail(tape, &nodes.text, embedded, &positions, &offsets)
}

/// Audio embeddings for a batch of clips, `N x D`.
pub fn encode_audios(tape: &mut Tape, nodes: &ModelNodes, config: &EncoderConfig, clips: &[&AudioClip]) -> Result<NodeId> {
    if clips.is_empty() {
        return Err(Error::EmptyInput);
    }
    for c in clips {
        check_length(c.n_frames(), config)?;
        if c.frame_dim() != config.frame_dim {
            return Err(Error::Shape {
                op: "encode_audios",
                left: (c.n_frames(), c.frame_dim()),
                right: (c.n_frames(), config.frame_dim),
            });
        }
    }
    let (offsets, positions) = offsets_and_positions(clips.iter().map(|c| c.n_frames()));
    let data: Vec<f64> = clips.iter().flat_map(|c| c.data().iter().map(|&x| x as f64)).collect();
    let frames = tape.constant(Tensor::from_vec(positions.len(), config.frame_dim, data)?);
    let projected = tape.matmul(frames, nodes.audio.input)?;
    tower_tail(tape, &nodes.audio, projected, &positions, &offsets)
}

/// Unit-norm text embedding of one sequence.
pub fn encode_text(params: &ModelParams, config: &EncoderConfig, tokens: &[u32]) -> Result<Vec<f64>> {
    Ok(embed_texts(params, config, &[tokens])?.into_data())
}

/// Unit-norm audio embedding of one clip.
pub fn encode_audio(params: &ModelParams, config: &EncoderConfig, clip: &AudioClip) -> Result<Vec<f64>> {
    Ok(embed_audios(params, config, &[clip])?.into_data())
}

/// Inference-only batch text embedding.
pub fn embed_texts(params: &ModelParams, config: &EncoderConfig, seqs: &[&[u32]]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape)?;
    let out = encode_texts(&mut tape, &nodes, config, seqs)?;
    Ok(tape.value(out).clone())
}

/// Inference-only batch audio embedding.
pub fn embed_audios(params: &ModelParams, config: &EncoderConfig, clips: &[&AudioClip]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape)?;
    let out = encode_audios(&mut tape, &nodes, config, clips)?;
    Ok(tape.value(out).clone())
}

/// A dataset record with its captions mapped to token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub id: u64,
    pub clip: AudioClip,
    pub tokens: Vec<u32>,
    pub neg_tokens: Option<Vec<u32>>,
    pub clip_neg: Option<AudioClip>,
}

impl EncodedRecord {
    pub fn new(record: &DatasetRecord, vocab: &TextVocab) -> Self {
        Self {
            id: record.id,
            clip: record.clip.clone(),
            tokens: vocab.encode(record.caption_pos.tokens()),
            neg_tokens: record.caption_neg.as_ref().map(|c| vocab.encode(c.tokens())),
            clip_neg: record.clip_neg.clone(),
        }
    }

    pub fn encode_all(manifest: &DatasetManifest, vocab: &TextVocab) -> Vec<Self> {
        manifest.records.iter().map(|r| Self::new(r, vocab)).collect()
    }
}

/// One row of a training batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub clip: &'a AudioClip,
    pub tokens: &'a [u32],
    pub neg_tokens: Option<&'a [u32]>,
    /// Whether the temporal loss applies to this row.
    pub temporal: bool,
}

impl<'a> BatchItem<'a> {
    pub fn from_record(record: &'a EncodedRecord, temporal: bool) -> Self {
        Self {
            clip: &record.clip,
            tokens: &record.tokens,
            neg_tokens: record.neg_tokens.as_deref(),
            temporal,
        }
    }
}

/// Embeddings of a batch: audio and positive text (`N x D` each) and the
/// negative captions of the temporal rows (`M x D`, aligned with
/// `temporal_rows`).
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub audio: NodeId,
    pub text: NodeId,
    pub text_neg: Option<NodeId>,
    pub temporal_mask: Vec<bool>,
    pub temporal_rows: Vec<usize>,
}

impl BatchEmbeddings {
    pub fn batch_size(&self) -> usize {
        self.temporal_mask.len()
    }

    pub fn temporal_count(&self) -> usize {
        self.temporal_rows.len()
    }
}

pub fn forward_batch(tape: &mut Tape, nodes: &ModelNodes, config: &EncoderConfig, batch: &[BatchItem<'_>]) -> Result<BatchEmbeddings> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut neg = Vec::new();
    let mut temporal_rows = Vec::new();
    for (i, item) in batch.iter().enumerate() {
        if item.temporal {
            neg.push(item.neg_tokens.ok_or(Error::MissingNegative(i))?);
            temporal_rows.push(i);
        }
    }
    let clips: Vec<&AudioClip> = batch.iter().map(|b| b.clip).collect();
    let texts: Vec<&[u32]> = batch.iter().map(|b| b.tokens).collect();
    let audio = encode_audios(tape, nodes, config, &clips)?;
    let text = encode_texts(tape, nodes, config, &texts)?;
    let text_neg = if neg.is_empty() {
        None
    } else {
        Some(encode_texts(tape, nodes, config, &neg)?)
    };
    Ok(BatchEmbeddings {
        audio,
        text,
        text_neg,
        temporal_mask: batch.iter().map(|b| b.temporal).collect(),
        temporal_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_catalog, build_mixed_dataset, MixedCorpusConfig, Split};
    use crate::rng::Rng;
    use rand::seq::SliceRandom;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn config() -> EncoderConfig {
        EncoderConfig {
            frame_dim: 6,
            vocab_size: 12,
            token_embed_dim: 8,
            max_positions: 10,
            hidden_dim: 16,
            shared_dim: 5,
        }
    }

    fn norm(v: &[f64]) -> f64 {
        libm::sqrt(v.iter().map(|x| x * x).sum())
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    fn random_clip(t: usize, f: usize, rng: &mut Rng) -> AudioClip {
        let data = (0..t * f)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z as f32
            })
            .collect();
        AudioClip::new(t, f, data).unwrap()
    }

    fn corpus() -> DatasetManifest {
        let cat = build_catalog(6, 4, 1).unwrap();
        let cfg = MixedCorpusConfig {
            n_records: 8,
            events_per_clip: 2,
            frames_per_event: 2,
            noise_sigma: 0.1,
            with_negative_clips: true,
            seed: 4,
            split: Split::Train,
        };
        build_mixed_dataset(&cat, &cfg).unwrap()
    }

    #[test]
    fn vocab_from_a_two_token_corpus() {
        let mut m = corpus();
        m.records.truncate(1);
        let vocab = build_vocab(&[&m]).unwrap();
        let expected = m.records[0].caption_pos.tokens().len() + 1;
        assert_eq!(vocab.len(), expected);
        assert_eq!(vocab.tokens()[0], UNK_TOKEN);
        assert_eq!(vocab.id("zebra"), UNK_ID);
        assert_eq!(build_vocab(&[&m]).unwrap(), vocab);
        assert_eq!(TextVocab::from_tokens(vocab.tokens().to_vec()).unwrap(), vocab);
    }

    #[test]
    fn vocab_is_first_occurrence_ordered() {
        let mut m = corpus();
        m.records.truncate(1);
        let vocab = build_vocab(&[&m]).unwrap();
        let first = &m.records[0].caption_pos.tokens()[0];
        assert_eq!(vocab.id(first), 1);
    }

    #[test]
    fn vocab_errors() {
        let mut m = corpus();
        m.records.clear();
        assert!(build_vocab(&[&m]).is_err());
        assert!(TextVocab::from_tokens(alloc::vec!["a".into()]).is_err());
        assert!(TextVocab::from_tokens(alloc::vec![UNK_TOKEN.into(), "a".into(), "a".into()]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = config();
        let a = ModelParams::init(&cfg, 3).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
        assert_eq!(a.get("text.embed").unwrap().shape(), (12, 8));
        assert_eq!(a.get("audio.frame_proj").unwrap().shape(), (6, 8));
        assert_eq!(a.get("audio.mlp.w2").unwrap().shape(), (16, 5));
        assert!(a.get("text.mlp.b1").unwrap().data().iter().all(|&x| x == 0.0));
        assert!((a.log_temperature() - 2.659260).abs() < 1e-6);
        let named = a.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        assert_eq!(ModelParams::from_named(&cfg, named).unwrap(), a);
    }

    #[test]
    fn from_named_rejects_missing_and_misshaped() {
        let cfg = config();
        let a = ModelParams::init(&cfg, 3).unwrap();
        let mut named: BTreeMap<String, Tensor> =
            a.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        named.remove("text.pos");
        assert!(ModelParams::from_named(&cfg, named.clone()).is_err());
        named.insert("text.pos".into(), Tensor::zeros(3, 3));
        assert!(ModelParams::from_named(&cfg, named).is_err());
    }

    #[test]
    fn outputs_are_unit_norm() {
        let cfg = config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut rng = rng_from_seed(2);
        for len in 1..=cfg.max_positions {
            let toks: Vec<u32> = (0..len).map(|_| rng.random_range(0..12)).collect();
            let t = encode_text(&params, &cfg, &toks).unwrap();
            assert_eq!(t.len(), cfg.shared_dim);
            assert!((norm(&t) - 1.0).abs() < 1e-9);
            let a = encode_audio(&params, &cfg, &random_clip(len, 6, &mut rng)).unwrap();
            assert!((norm(&a) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn length_errors() {
        let cfg = config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(encode_text(&params, &cfg, &[]), Err(Error::EmptyInput));
        assert_eq!(
            encode_text(&params, &cfg, &[1; 11]),
            Err(Error::SequenceTooLong { len: 11, max: 10 })
        );
        let empty = AudioClip::new(0, 6, alloc::vec![]).unwrap();
        assert_eq!(encode_audio(&params, &cfg, &empty), Err(Error::EmptyInput));
        let mut rng = rng_from_seed(0);
        assert!(encode_audio(&params, &cfg, &random_clip(3, 5, &mut rng)).is_err());
        assert!(encode_text(&params, &cfg, &[99]).is_err());
    }

    // Order sensitivity at random initialization, over 100 seeds.
    #[test]
    fn reversing_the_input_changes_the_embedding() {
        let cfg = config();
        for seed in 0..100u64 {
            let params = ModelParams::init(&cfg, seed).unwrap();
            let mut rng = rng_from_seed(seed + 1000);
            let a = rng.random_range(1..12u32);
            let b = (a + rng.random_range(1..11u32)) % 12;
            let ab = encode_text(&params, &cfg, &[a, b]).unwrap();
            let ba = encode_text(&params, &cfg, &[b, a]).unwrap();
            assert!(dist(&ab, &ba) > 1e-6, "seed {seed}");

            let clip = random_clip(4, 6, &mut rng);
            let fwd = encode_audio(&params, &cfg, &clip).unwrap();
            let rev = encode_audio(&params, &cfg, &clip.reversed()).unwrap();
            assert!(dist(&fwd, &rev) > 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn batch_rows_do_not_interact() {
        let cfg = config();
        let params = ModelParams::init(&cfg, 7).unwrap();
        let mut rng = rng_from_seed(8);
        let seqs: Vec<Vec<u32>> = (0..6)
            .map(|i| (0..(i % 4 + 1)).map(|_| rng.random_range(0..12)).collect())
            .collect();
        let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        let all = embed_texts(&params, &cfg, &refs).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<&[u32]> = perm.iter().map(|&i| refs[i]).collect();
        let shuffled = embed_texts(&params, &cfg, &permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(shuffled.row(k), all.row(i));
            assert_eq!(encode_text(&params, &cfg, refs[i]).unwrap(), all.row(i));
        }
    }

    #[test]
    fn forward_batch_shapes() {
        let m = corpus();
        let vocab = build_vocab(&[&m]).unwrap();
        let cfg = EncoderConfig {
            frame_dim: 4,
            vocab_size: vocab.len(),
            ..config()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let recs = EncodedRecord::encode_all(&m, &vocab);
        let items: Vec<BatchItem> = recs
            .iter()
            .enumerate()
            .map(|(i, r)| BatchItem::from_record(r, i == 2 || i == 5))
            .collect();
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape).unwrap();
        let emb = forward_batch(&mut tape, &nodes, &cfg, &items).unwrap();
        assert_eq!(tape.shape(emb.audio), (8, 5));
        assert_eq!(tape.shape(emb.text), (8, 5));
        assert_eq!(tape.shape(emb.text_neg.unwrap()), (2, 5));
        assert_eq!(emb.temporal_rows, [2, 5]);

        let plain: Vec<BatchItem> = recs.iter().map(|r| BatchItem::from_record(r, false)).collect();
        let emb = forward_batch(&mut tape, &nodes, &cfg, &plain).unwrap();
        assert!(emb.text_neg.is_none());
        assert_eq!(emb.temporal_count(), 0);

        let mut missing = items.clone();
        missing[2].neg_tokens = None;
        assert_eq!(
            forward_batch(&mut tape, &nodes, &cfg, &missing).unwrap_err(),
            Error::MissingNegative(2)
        );
    }
}
