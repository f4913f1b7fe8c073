//! Retrieval recall@k, T-Classify in both directions and zero-shot
//! classification.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{AudioClip, EventCatalog};
use crate::encoders::{embed_audios, embed_texts, EncodedRecord, EncoderConfig, ModelParams, TextVocab};
use crate::losses::{cosine, cosine_matrix, SimilarityMatrix};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Default recall cut-offs.
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    T2A,
    A2T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalResult {
    pub direction: Direction,
    /// k -> percentage of queries whose match ranks within the top k.
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

/// 1-based rank of `target` among `n` candidates scored by `score`,
/// sorting descending with ties going to the lower index.
pub fn rank_of(n: usize, target: usize, score: impl Fn(usize) -> f64) -> usize {
    let s = score(target);
    1 + (0..n)
        .filter(|&j| {
            let v = score(j);
            v > s || (v == s && j < target)
        })
        .count()
}

/// Recall@k in both directions with the diagonal as ground truth.
/// Returns `(text-to-audio, audio-to-text)`.
pub fn recall_at_k(s: &SimilarityMatrix, ks: &[usize]) -> Result<(RetrievalResult, RetrievalResult)> {
    let n = s.n();
    let max_k = ks.iter().copied().max().ok_or_else(|| Error::InvalidConfig("no recall cut-offs".into()))?;
    if ks.contains(&0) {
        return Err(Error::InvalidConfig("recall cut-off k must be at least 1".into()));
    }
    if n < max_k {
        return Err(Error::InvalidConfig(format!("{n} items cannot be ranked at k = {max_k}")));
    }
    // T2A: text query j ranks audio candidates i in column j.
    let t2a: Vec<usize> = (0..n).map(|j| rank_of(n, j, |i| s.get(i, j))).collect();
    let a2t: Vec<usize> = (0..n).map(|i| rank_of(n, i, |j| s.get(i, j))).collect();
    let result = |direction, ranks: &[usize]| RetrievalResult {
        direction,
        recall_at: ks
            .iter()
            .map(|&k| (k, percentage(ranks.iter().filter(|&&r| r <= k).count(), n)))
            .collect(),
        n_queries: n,
    };
    Ok((result(Direction::T2A, &t2a), result(Direction::A2T, &a2t)))
}

fn percentage(hits: usize, n: usize) -> f64 {
    100.0 * hits as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TClassifyResult {
    pub t2a_accuracy: f64,
    /// Absent when no record carries a reversed clip.
    pub a2t_accuracy: Option<f64>,
    pub n_t2a: usize,
    pub n_a2t: usize,
}

/// Share of pairs with `pos > neg` strictly; ties fail.
pub fn strict_win_rate(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::InvalidConfig("T-Classify needs at least one record".into()));
    }
    if pos.len() != neg.len() {
        return Err(Error::Shape {
            op: "strict_win_rate",
            left: (pos.len(), 1),
            right: (neg.len(), 1),
        });
    }
    let wins = pos.iter().zip(neg).filter(|(p, n)| p > n).count();
    Ok(percentage(wins, pos.len()))
}

fn row_cosines(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "row_cosines",
            left: a.shape(),
            right: b.shape(),
        });
    }
    (0..a.rows()).map(|i| cosine(a.row(i), b.row(i))).collect()
}

/// Text-to-audio T-Classify on embeddings: row i succeeds iff
/// `cos(a_i, t_i) > cos(a_i, t_neg_i)`.
pub fn t_classify_t2a_embeddings(audio: &Tensor, text: &Tensor, text_neg: &Tensor) -> Result<f64> {
    strict_win_rate(&row_cosines(audio, text)?, &row_cosines(audio, text_neg)?)
}

/// Audio-to-text T-Classify on embeddings: row j succeeds iff
/// `cos(a_j, t_j) > cos(a_neg_j, t_j)`.
pub fn t_classify_a2t_embeddings(audio: &Tensor, audio_neg: &Tensor, text: &Tensor) -> Result<f64> {
    strict_win_rate(&row_cosines(audio, text)?, &row_cosines(audio_neg, text)?)
}

/// Tower outputs for a record set. Negative embeddings are present only
/// when every record has the corresponding negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordEmbeddings {
    pub audio: Tensor,
    pub text: Tensor,
    pub text_neg: Option<Tensor>,
    pub audio_neg: Option<Tensor>,
}

pub fn embed_records(params: &ModelParams, config: &EncoderConfig, records: &[EncodedRecord]) -> Result<RecordEmbeddings> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let clips: Vec<&AudioClip> = records.iter().map(|r| &r.clip).collect();
    let texts: Vec<&[u32]> = records.iter().map(|r| r.tokens.as_slice()).collect();
    let negs: Option<Vec<&[u32]>> = records.iter().map(|r| r.neg_tokens.as_deref()).collect();
    let clip_negs: Option<Vec<&AudioClip>> = records.iter().map(|r| r.clip_neg.as_ref()).collect();
    Ok(RecordEmbeddings {
        audio: embed_audios(params, config, &clips)?,
        text: embed_texts(params, config, &texts)?,
        text_neg: negs.map(|n| embed_texts(params, config, &n)).transpose()?,
        audio_neg: clip_negs.map(|c| embed_audios(params, config, &c)).transpose()?,
    })
}

/// T-Classify T2A over records that all carry a negative caption.
pub fn t_classify_t2a(params: &ModelParams, config: &EncoderConfig, records: &[EncodedRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("T-Classify needs at least one record".into()));
    }
    if let Some(i) = records.iter().position(|r| r.neg_tokens.is_none()) {
        return Err(Error::MissingNegative(i));
    }
    let e = embed_records(params, config, records)?;
    t_classify_t2a_embeddings(&e.audio, &e.text, e.text_neg.as_ref().expect("checked above"))
}

/// T-Classify A2T over records that all carry a reversed clip.
pub fn t_classify_a2t(params: &ModelParams, config: &EncoderConfig, records: &[EncodedRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("T-Classify needs at least one record".into()));
    }
    if let Some(i) = records.iter().position(|r| r.clip_neg.is_none()) {
        return Err(Error::MissingNegative(i));
    }
    let e = embed_records(params, config, records)?;
    t_classify_a2t_embeddings(&e.audio, e.audio_neg.as_ref().expect("checked above"), &e.text)
}

/// Both directions; A2T is computed on the records that have a reversed
/// clip and omitted when none do.
pub fn t_classify(params: &ModelParams, config: &EncoderConfig, records: &[EncodedRecord]) -> Result<TClassifyResult> {
    let t2a = t_classify_t2a(params, config, records)?;
    let with_clip: Vec<EncodedRecord> = records.iter().filter(|r| r.clip_neg.is_some()).cloned().collect();
    let a2t = if with_clip.is_empty() {
        None
    } else {
        Some(t_classify_a2t(params, config, &with_clip)?)
    };
    Ok(TClassifyResult {
        t2a_accuracy: t2a,
        a2t_accuracy: a2t,
        n_t2a: records.len(),
        n_a2t: with_clip.len(),
    })
}

/// Retrieval over a paired record set.
pub fn retrieval(
    params: &ModelParams,
    config: &EncoderConfig,
    records: &[EncodedRecord],
    ks: &[usize],
) -> Result<(RetrievalResult, RetrievalResult)> {
    let audio: Vec<&AudioClip> = records.iter().map(|r| &r.clip).collect();
    let texts: Vec<&[u32]> = records.iter().map(|r| r.tokens.as_slice()).collect();
    let s = SimilarityMatrix::from_tensor(cosine_matrix(
        &embed_audios(params, config, &audio)?,
        &embed_texts(params, config, &texts)?,
    )?)?;
    recall_at_k(&s, ks)
}

pub const PROMPT_PREFIX: [&str; 3] = ["a", "sound", "of"];

/// `a sound of {label}` as tokens.
pub fn zero_shot_prompt(label: &str) -> Vec<String> {
    PROMPT_PREFIX
        .iter()
        .map(|s| s.to_string())
        .chain(crate::corpus::tokenize(label))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShotResult {
    pub accuracy: f64,
    pub n_samples: usize,
    pub label_set: Vec<u32>,
    pub predictions: Vec<u32>,
    /// Prompt tokens that fell back to `<unk>`.
    pub unknown_tokens: Vec<String>,
}

/// Index into `label_set` of the best-scoring prompt per audio row;
/// ties go to the earlier label.
pub fn zero_shot_predict(audio: &Tensor, prompts: &Tensor) -> Result<Vec<usize>> {
    let s = cosine_matrix(audio, prompts)?;
    Ok((0..s.rows())
        .map(|i| {
            let row = s.row(i);
            (1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Classifies each clip by its nearest `a sound of {label}` prompt.
pub fn zero_shot_classify(
    params: &ModelParams,
    config: &EncoderConfig,
    vocab: &TextVocab,
    catalog: &EventCatalog,
    clips: &[(&AudioClip, u32)],
    label_set: &[u32],
) -> Result<ZeroShotResult> {
    if label_set.is_empty() {
        return Err(Error::InvalidConfig("zero-shot label set is empty".into()));
    }
    if clips.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some((_, bad)) = clips.iter().find(|(_, l)| !label_set.contains(l)) {
        return Err(Error::InvalidConfig(format!("label {bad} is not in the label set")));
    }
    let mut unknown_tokens = Vec::new();
    let mut prompts = Vec::with_capacity(label_set.len());
    for &label in label_set {
        let tokens = zero_shot_prompt(&catalog.class(label)?.name);
        for t in &tokens {
            if !vocab.contains(t) && !unknown_tokens.contains(t) {
                unknown_tokens.push(t.clone());
            }
        }
        prompts.push(vocab.encode(&tokens));
    }
    let prompt_refs: Vec<&[u32]> = prompts.iter().map(Vec::as_slice).collect();
    let audio_refs: Vec<&AudioClip> = clips.iter().map(|(c, _)| *c).collect();
    let picks = zero_shot_predict(
        &embed_audios(params, config, &audio_refs)?,
        &embed_texts(params, config, &prompt_refs)?,
    )?;
    let predictions: Vec<u32> = picks.iter().map(|&k| label_set[k]).collect();
    let hits = predictions.iter().zip(clips).filter(|(p, (_, l))| *p == l).count();
    Ok(ZeroShotResult {
        accuracy: percentage(hits, clips.len()),
        n_samples: clips.len(),
        label_set: label_set.to_vec(),
        predictions,
        unknown_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::vec;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    fn scaled(t: &Tensor, c: f64) -> Tensor {
        Tensor::from_vec(t.rows(), t.cols(), t.data().iter().map(|x| x * c).collect()).unwrap()
    }

    fn sim(data: Vec<f64>, n: usize) -> SimilarityMatrix {
        SimilarityMatrix::from_tensor(Tensor::from_vec(n, n, data).unwrap()).unwrap()
    }

    // Full stable sort by (score descending, index ascending).
    fn sort_rank(scores: &[f64], target: usize) -> usize {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        order.iter().position(|&i| i == target).unwrap() + 1
    }

    fn oracle_recall(s: &SimilarityMatrix, k: usize, dir: Direction) -> f64 {
        let n = s.n();
        let hits = (0..n)
            .filter(|&q| {
                let scores: Vec<f64> = (0..n)
                    .map(|c| match dir {
                        Direction::T2A => s.get(c, q),
                        Direction::A2T => s.get(q, c),
                    })
                    .collect();
                sort_rank(&scores, q) <= k
            })
            .count();
        100.0 * hits as f64 / n as f64
    }

    #[test]
    fn diagonal_dominant_is_perfect() {
        let s = SimilarityMatrix::from_tensor(Tensor::identity(12)).unwrap();
        let (t2a, a2t) = recall_at_k(&s, &RECALL_KS).unwrap();
        for r in [t2a, a2t] {
            assert!(r.recall_at.values().all(|&v| v == 100.0));
            assert_eq!(r.n_queries, 12);
        }
    }

    #[test]
    fn every_match_second() {
        // The item after each query's own index scores highest.
        let n = 6;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 0.5;
            d[i * n + (i + 1) % n] = 0.9;
        }
        let s = sim(d, n);
        let (_, a2t) = recall_at_k(&s, &[1, 5]).unwrap();
        assert_eq!(a2t.recall_at[&1], 0.0);
        assert_eq!(a2t.recall_at[&5], 100.0);
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        let s = sim(vec![1.0; 9], 3);
        let (t2a, _) = recall_at_k(&s, &[1, 2, 3]).unwrap();
        assert!((t2a.recall_at[&1] - 100.0 / 3.0).abs() < 1e-12);
        assert!((t2a.recall_at[&2] - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(t2a.recall_at[&3], 100.0);
    }

    #[test]
    fn recall_matches_full_sort_oracle() {
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed);
            // Coarse values force plenty of ties.
            let data = (0..400).map(|_| rng.random_range(0..7) as f64 / 7.0).collect();
            let s = sim(data, 20);
            let ks = [1, 3, 5, 10, 20];
            let (t2a, a2t) = recall_at_k(&s, &ks).unwrap();
            for &k in &ks {
                assert_eq!(t2a.recall_at[&k], oracle_recall(&s, k, Direction::T2A));
                assert_eq!(a2t.recall_at[&k], oracle_recall(&s, k, Direction::A2T));
            }
            let vals: Vec<f64> = t2a.recall_at.values().copied().collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(t2a.recall_at[&20], 100.0);
        }
    }

    #[test]
    fn recall_errors() {
        let s = SimilarityMatrix::from_tensor(Tensor::identity(4)).unwrap();
        assert!(recall_at_k(&s, &[5]).is_err());
        assert!(recall_at_k(&s, &[]).is_err());
        assert!(recall_at_k(&s, &[0]).is_err());
    }

    #[test]
    fn t_classify_constructed_cases() {
        let a = Tensor::from_vec(4, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let good = Tensor::from_vec(4, 2, vec![1.0, 0.1, 1.0, 0.1, 1.0, 0.1, 1.0, 0.1]).unwrap();
        let bad = Tensor::from_vec(4, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(t_classify_t2a_embeddings(&a, &good, &bad).unwrap(), 100.0);
        let half = Tensor::from_vec(4, 2, vec![1.0, 0.1, 0.0, 1.0, 1.0, 0.1, 0.0, 1.0]).unwrap();
        assert_eq!(t_classify_t2a_embeddings(&a, &half, &good).unwrap(), 0.0);
        assert_eq!(t_classify_t2a_embeddings(&a, &good, &half).unwrap(), 50.0);
        // A reversed clip identical to the clip ties every comparison.
        assert_eq!(t_classify_a2t_embeddings(&a, &a, &good).unwrap(), 0.0);
        assert_eq!(t_classify_a2t_embeddings(&a, &bad, &good).unwrap(), 100.0);
        assert!(strict_win_rate(&[], &[]).is_err());
    }

    #[test]
    fn decisions_are_scale_and_order_invariant() {
        let a = random(50, 8, 1);
        let t = random(50, 8, 2);
        let n = random(50, 8, 3);
        let base = t_classify_t2a_embeddings(&a, &t, &n).unwrap();
        let s0 = SimilarityMatrix::from_tensor(cosine_matrix(&a, &t).unwrap()).unwrap();
        let r0 = recall_at_k(&s0, &RECALL_KS).unwrap();
        let z0 = zero_shot_predict(&a, &t).unwrap();
        for c in [0.25, 4.0, 3.7, 1e-3] {
            let (a, t, n) = (scaled(&a, c), scaled(&t, c), scaled(&n, c));
            assert_eq!(t_classify_t2a_embeddings(&a, &t, &n).unwrap(), base);
            let s = SimilarityMatrix::from_tensor(cosine_matrix(&a, &t).unwrap()).unwrap();
            assert_eq!(recall_at_k(&s, &RECALL_KS).unwrap(), r0);
            assert_eq!(zero_shot_predict(&a, &t).unwrap(), z0);
        }
        let mut perm: Vec<usize> = (0..50).collect();
        perm.shuffle(&mut rng_from_seed(4));
        let pick = |x: &Tensor| {
            let data = perm.iter().flat_map(|&i| x.row(i).to_vec()).collect();
            Tensor::from_vec(50, 8, data).unwrap()
        };
        assert_eq!(t_classify_t2a_embeddings(&pick(&a), &pick(&t), &pick(&n)).unwrap(), base);
    }

    #[test]
    fn random_embeddings_score_near_chance() {
        let a = random(10_000, 8, 10);
        let t = random(10_000, 8, 11);
        let n = random(10_000, 8, 12);
        let acc = t_classify_t2a_embeddings(&a, &t, &n).unwrap();
        assert!((acc - 50.0).abs() < 2.0, "{acc}");
    }

    #[test]
    fn zero_shot_prompt_tokens() {
        assert_eq!(zero_shot_prompt("dog barking"), ["a", "sound", "of", "dog", "barking"]);
    }

    #[test]
    fn zero_shot_argmax_ties_pick_the_first_label() {
        let a = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let p = Tensor::from_vec(3, 2, vec![0.0, 1.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(zero_shot_predict(&a, &p).unwrap(), [1]);
    }
}
