//! Cosine similarity, the symmetric contrastive loss `L_c`, the temporal
//! loss `L_t` and their weighted sum `L_train = L_c + lambda * L_t`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::BatchEmbeddings;
use crate::tensor::{softplus, NodeId, Tape, Tensor, NORM_EPS};
use crate::{Error, Result};

/// `N x N` cosine similarities, `s[i][j] = cos(audio_i, text_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    s: Tensor,
}

impl SimilarityMatrix {
    /// Wraps precomputed similarities; the matrix must be square.
    pub fn from_tensor(s: Tensor) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::Shape {
                op: "SimilarityMatrix",
                left: s.shape(),
                right: (s.cols(), s.rows()),
            });
        }
        Ok(Self { s })
    }

    pub fn n(&self) -> usize {
        self.s.rows()
    }

    pub fn get(&self, audio: usize, text: usize) -> f64 {
        self.s.get(audio, text)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.s
    }
}

fn unit_rows(x: &Tensor, what: &str) -> Result<Tensor> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let norm = libm::sqrt(x.row(r).iter().map(|v| v * v).sum());
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Numeric(format!("{what} row {r} has norm {norm}")));
        }
        let c = x.cols();
        for v in &mut out.data_mut()[r * c..(r + 1) * c] {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Cosine similarity between every audio row and every text row. Rows
/// need not be normalized; a zero row is a numeric error.
pub fn cosine_matrix(audio: &Tensor, text: &Tensor) -> Result<Tensor> {
    if audio.cols() != text.cols() {
        return Err(Error::Shape {
            op: "cosine_matrix",
            left: audio.shape(),
            right: text.shape(),
        });
    }
    let a = unit_rows(audio, "audio")?;
    let t = unit_rows(text, "text")?;
    let mut data = Vec::with_capacity(a.rows() * t.rows());
    for i in 0..a.rows() {
        for j in 0..t.rows() {
            data.push(dot(a.row(i), t.row(j)));
        }
    }
    Tensor::from_vec(a.rows(), t.rows(), data)
}

/// Square similarity matrix of a paired batch.
pub fn similarity_matrix(audio: &Tensor, text: &Tensor) -> Result<SimilarityMatrix> {
    if audio.shape() != text.shape() {
        return Err(Error::Shape {
            op: "similarity_matrix",
            left: audio.shape(),
            right: text.shape(),
        });
    }
    SimilarityMatrix::from_tensor(cosine_matrix(audio, text)?)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of two vectors; a zero vector is a numeric error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = libm::sqrt(dot(a, a));
    let nb = libm::sqrt(dot(b, b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Numeric("cosine of a zero vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// How per-sample temporal terms are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LtReduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_l: f64,
    /// Scales the temporal margin by `exp(log_temperature)`.
    pub use_temperature_in_lt: bool,
    pub lt_reduction: LtReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_l: 0.5,
            use_temperature_in_lt: false,
            lt_reduction: LtReduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l.is_finite() && self.lambda_l >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_l must be finite and >= 0, got {}",
                self.lambda_l
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_t: f64,
    pub l_train: f64,
    pub batch_size: usize,
    pub temporal_count: usize,
}

/// Cosine similarity node for row-normalized (or raw) embeddings.
pub fn similarity_node(tape: &mut Tape, audio: NodeId, text: NodeId) -> Result<NodeId> {
    let a = tape.row_l2_normalize(audio, NORM_EPS)?;
    let t = tape.row_l2_normalize(text, NORM_EPS)?;
    tape.matmul_nt(a, t)
}

/// Symmetric softmax cross-entropy over `logits = S * exp(log_temperature)`
/// with the diagonal as targets, averaged over the row and column
/// directions.
pub fn contrastive_loss_node(tape: &mut Tape, s: NodeId, log_temperature: NodeId) -> Result<NodeId> {
    let (n, m) = tape.shape(s);
    if n != m || n == 0 {
        return Err(Error::Shape {
            op: "contrastive_loss",
            left: (n, m),
            right: (m, n),
        });
    }
    let scale = tape.exp(log_temperature)?;
    let logits = tape.scale_by(s, scale)?;
    let diag = tape.diag(logits)?;
    let by_row = tape.log_sum_exp_rows(logits)?;
    let by_row = tape.sub(by_row, diag)?;
    let by_row = tape.mean(by_row)?;
    let cols = tape.transpose(logits)?;
    let by_col = tape.log_sum_exp_rows(cols)?;
    let by_col = tape.sub(by_col, diag)?;
    let by_col = tape.mean(by_col)?;
    let both = tape.add(by_row, by_col)?;
    tape.scale(both, 0.5)
}

/// `L_c` of a precomputed similarity matrix.
pub fn contrastive_loss(s: &SimilarityMatrix, log_temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let sn = tape.constant(s.tensor().clone());
    let lt = tape.constant(Tensor::scalar(log_temperature));
    let loss = contrastive_loss_node(&mut tape, sn, lt)?;
    Ok(tape.value(loss).item())
}

/// One temporal term, `-ln(e^dp / (e^dp + e^dn)) = softplus(dn - dp)`.
pub fn temporal_term(d_pos: f64, d_neg: f64) -> f64 {
    softplus(d_neg - d_pos)
}

/// `L_t` over row-aligned audio, positive and negative text rows; the
/// dot products are taken as given (tower outputs are unit-norm). Returns
/// 0 for an empty batch.
pub fn temporal_loss(audio: &Tensor, text_pos: &Tensor, text_neg: &Tensor, reduction: LtReduction) -> Result<f64> {
    if audio.shape() != text_pos.shape() || audio.shape() != text_neg.shape() {
        return Err(Error::Shape {
            op: "temporal_loss",
            left: audio.shape(),
            right: text_neg.shape(),
        });
    }
    let n = audio.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..n)
        .map(|i| temporal_term(dot(audio.row(i), text_pos.row(i)), dot(audio.row(i), text_neg.row(i))))
        .sum();
    Ok(match reduction {
        LtReduction::Sum => total,
        LtReduction::Mean => total / n as f64,
    })
}

/// `L_t` on the tape; `temperature` optionally scales the margin.
pub fn temporal_loss_node(
    tape: &mut Tape,
    audio: NodeId,
    text_pos: NodeId,
    text_neg: NodeId,
    temperature: Option<NodeId>,
    reduction: LtReduction,
) -> Result<NodeId> {
    let d_pos = tape.row_dot(audio, text_pos)?;
    let d_neg = tape.row_dot(audio, text_neg)?;
    let mut margin = tape.sub(d_neg, d_pos)?;
    if let Some(lt) = temperature {
        let scale = tape.exp(lt)?;
        margin = tape.scale_by(margin, scale)?;
    }
    let terms = tape.softplus(margin)?;
    match reduction {
        LtReduction::Sum => tape.sum(terms),
        LtReduction::Mean => tape.mean(terms),
    }
}

/// Records `L_train` for a forward batch: `L_c` over all rows, `L_t` over
/// the temporal rows only. Returns the loss node and its breakdown.
pub fn train_loss(
    tape: &mut Tape,
    batch: &BatchEmbeddings,
    log_temperature: NodeId,
    config: &LossConfig,
) -> Result<(NodeId, LossBreakdown)> {
    config.validate()?;
    let s = similarity_node(tape, batch.audio, batch.text)?;
    let l_c = contrastive_loss_node(tape, s, log_temperature)?;
    let l_c_value = tape.value(l_c).item();
    let mut breakdown = LossBreakdown {
        l_c: l_c_value,
        l_t: 0.0,
        l_train: l_c_value,
        batch_size: batch.batch_size(),
        temporal_count: batch.temporal_count(),
    };
    let Some(text_neg) = batch.text_neg else {
        return Ok((l_c, breakdown));
    };
    let audio = tape.gather_rows(batch.audio, &batch.temporal_rows)?;
    let text_pos = tape.gather_rows(batch.text, &batch.temporal_rows)?;
    let temperature = config.use_temperature_in_lt.then_some(log_temperature);
    let l_t = temporal_loss_node(tape, audio, text_pos, text_neg, temperature, config.lt_reduction)?;
    let weighted = tape.scale(l_t, config.lambda_l)?;
    let total = tape.add(l_c, weighted)?;
    breakdown.l_t = tape.value(l_t).item();
    breakdown.l_train = tape.value(total).item();
    Ok((total, breakdown))
}
