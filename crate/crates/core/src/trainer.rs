//! Batch composition, learning-rate schedule, Adam and the single
//! training step. File IO and the outer loop live in the std crate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::{index::sample, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::encoders::{forward_batch, BatchItem, EncodedRecord, EncoderConfig, ModelDims, ModelParams};
use crate::losses::{train_loss, LossBreakdown, LossConfig};
use crate::rng::{derive_seed, rng_from_seed, Rng, Stream};
use crate::tensor::{finite_diff_check, FdReport, Gradients, Parameter, Tape, Tensor};
use crate::{Error, Result};

/// A fraction `num / den` in `[0, 1]`, written `"1/5"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    num: u32,
    den: u32,
}

impl Ratio {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::InvalidConfig(format!("fraction {num}/{den} is not in [0, 1]")));
        }
        Ok(Self { num, den })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    /// `floor(n * num / den)`.
    pub fn floor_mul(self, n: usize) -> usize {
        (n as u64 * self.num as u64 / self.den as u64) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse fraction {s:?}; expected \"num/den\""));
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Self::new(num, den)
    }
}

impl TryFrom<String> for Ratio {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    /// Share of each batch drawn from the temporal pool.
    pub temporal_fraction: Ratio,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub model: ModelDims,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 64,
            base_lr: 1e-3,
            warmup_steps: 300,
            temporal_fraction: Ratio { num: 1, den: 5 },
            seed: 0,
            checkpoint_every: 1000,
            model: ModelDims::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The full-scale recipe: 30K steps, batch 512, lr 1e-4 with 10K
    /// warm-up steps, lambda 0.5, 1:4 temporal to primary.
    pub fn reference() -> Self {
        Self {
            steps: 30_000,
            batch_size: 512,
            base_lr: 1e-4,
            warmup_steps: 10_000,
            checkpoint_every: 5_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be finite and > 0, got {}", self.base_lr));
        }
        if self.warmup_steps > self.steps {
            return bad(format!(
                "warmup_steps ({}) must not exceed steps ({})",
                self.warmup_steps, self.steps
            ));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        self.loss.validate()
    }

    pub fn temporal_per_batch(&self) -> usize {
        self.temporal_fraction.floor_mul(self.batch_size)
    }
}

/// `base_lr * min(1, (step + 1) / warmup_steps)`; no decay afterwards.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    if config.warmup_steps == 0 {
        return config.base_lr;
    }
    let ramp = (step as f64 + 1.0) / config.warmup_steps as f64;
    config.base_lr * ramp.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Primary,
    Temporal,
}

/// One batch row: which pool, which record, and whether `L_t` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSlot {
    pub pool: Pool,
    pub index: usize,
    pub temporal: bool,
}

/// Draws `floor(batch_size * fraction)` temporal records and fills the
/// rest from the primary pool, without replacement inside the batch, then
/// shuffles the rows.
pub fn compose_batch(
    primary_len: usize,
    temporal_len: usize,
    batch_size: usize,
    fraction: Ratio,
    rng: &mut Rng,
) -> Result<Vec<BatchSlot>> {
    let n_temporal = fraction.floor_mul(batch_size);
    let n_primary = batch_size - n_temporal;
    let mut slots = Vec::with_capacity(batch_size);
    for (pool, len, want, name) in [
        (Pool::Temporal, temporal_len, n_temporal, "temporal"),
        (Pool::Primary, primary_len, n_primary, "primary"),
    ] {
        if want == 0 {
            continue;
        }
        if len == 0 {
            return Err(Error::EmptyPool(name));
        }
        if want > len {
            return Err(Error::InvalidConfig(format!(
                "{name} pool has {len} records but each batch needs {want}"
            )));
        }
        slots.extend(sample(rng, len, want).into_iter().map(|index| BatchSlot {
            pool,
            index,
            temporal: pool == Pool::Temporal,
        }));
    }
    slots.shuffle(rng);
    Ok(slots)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, aligned with the parameter list they were created for.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[Parameter]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.tensor.rows(), p.tensor.cols())).collect();
        Self {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check_matches(&self, params: &[Parameter]) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if m.shape() != p.tensor.shape() || v.shape() != p.tensor.shape() {
                return Err(Error::Shape {
                    op: "optimizer moments",
                    left: m.shape(),
                    right: p.tensor.shape(),
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update, then `log_temperature` is clamped to
/// its bounds. Nothing is modified if any gradient is missing, misshaped
/// or non-finite.
pub fn adam_step(params: &mut [Parameter], grads: &Gradients, state: &mut OptimizerState, lr: f64) -> Result<()> {
    state.check_matches(params)?;
    for p in params.iter().filter(|p| p.requires_grad) {
        let g = grads
            .get(&p.name)
            .ok_or_else(|| Error::InvalidConfig(format!("no gradient for {}", p.name)))?;
        if g.shape() != p.tensor.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: g.shape(),
                right: p.tensor.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {}", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(state.beta1, t as f64);
    let c2 = 1.0 - libm::pow(state.beta2, t as f64);
    let (lo, hi) = crate::encoders::log_temperature_bounds();
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if !p.requires_grad {
            continue;
        }
        let g = &grads[&p.name];
        let (pd, md, vd) = (p.tensor.data_mut(), m.data_mut(), v.data_mut());
        for k in 0..pd.len() {
            let gk = g.data()[k];
            md[k] = state.beta1 * md[k] + (1.0 - state.beta1) * gk;
            vd[k] = state.beta2 * vd[k] + (1.0 - state.beta2) * gk * gk;
            let m_hat = md[k] / c1;
            let v_hat = vd[k] / c2;
            pd[k] -= lr * m_hat / (libm::sqrt(v_hat) + state.eps);
        }
        if p.name == "log_temperature" {
            for x in pd.iter_mut() {
                *x = x.clamp(lo, hi);
            }
        }
    }
    Ok(())
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub rng: Rng,
    /// Completed optimizer steps.
    pub step: u64,
}

impl TrainState {
    /// Parameters from the `Init` stream, batching RNG from the
    /// `Batching` stream of `seed`.
    pub fn init(encoder: &EncoderConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(encoder, derive_seed(seed, Stream::Init))?;
        let optimizer = OptimizerState::new(params.params());
        Ok(Self {
            params,
            optimizer,
            rng: rng_from_seed(derive_seed(seed, Stream::Batching)),
            step: 0,
        })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub l_c: f64,
    pub l_t: f64,
    pub l_train: f64,
    pub temporal_count: usize,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    encoder: EncoderConfig,
    state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, encoder: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let state = TrainState::init(&encoder, config.seed)?;
        Ok(Self { config, encoder, state })
    }

    /// Continues from a saved state.
    pub fn resume(config: TrainConfig, encoder: EncoderConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        state.optimizer.check_matches(state.params.params())?;
        Ok(Self { config, encoder, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config.steps
    }

    /// compose → forward → loss → backward → Adam. The state is left
    /// untouched when any stage fails.
    pub fn step(&mut self, primary: &[EncodedRecord], temporal: &[EncodedRecord]) -> Result<StepMetrics> {
        let mut rng = self.state.rng.clone();
        let slots = compose_batch(
            primary.len(),
            temporal.len(),
            self.config.batch_size,
            self.config.temporal_fraction,
            &mut rng,
        )?;
        let items: Vec<BatchItem> = slots
            .iter()
            .map(|s| {
                let pool = if s.pool == Pool::Temporal { temporal } else { primary };
                BatchItem::from_record(&pool[s.index], s.temporal)
            })
            .collect();
        let (grads, loss) = loss_and_gradients(&self.state.params, &self.encoder, &items, &self.config.loss)?;
        let lr = lr_schedule(self.state.step, &self.config);
        let mut params = self.state.params.clone();
        let mut optimizer = self.state.optimizer.clone();
        adam_step(params.params_mut(), &grads, &mut optimizer, lr)?;

        let metrics = StepMetrics {
            step: self.state.step,
            lr,
            l_c: loss.l_c,
            l_t: loss.l_t,
            l_train: loss.l_train,
            temporal_count: loss.temporal_count,
        };
        self.state = TrainState {
            params,
            optimizer,
            rng,
            step: self.state.step + 1,
        };
        Ok(metrics)
    }
}

/// `L_train` and its gradients for one batch.
pub fn loss_and_gradients(
    params: &ModelParams,
    encoder: &EncoderConfig,
    batch: &[BatchItem<'_>],
    loss: &LossConfig,
) -> Result<(Gradients, LossBreakdown)> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape)?;
    let emb = forward_batch(&mut tape, &nodes, encoder, batch)?;
    let (node, breakdown) = train_loss(&mut tape, &emb, nodes.log_temperature, loss)?;
    Ok((tape.backward(node)?, breakdown))
}

/// Central-difference check of the full encoder + `L_train` graph.
pub fn gradcheck_pipeline(
    params: &ModelParams,
    encoder: &EncoderConfig,
    batch: &[BatchItem<'_>],
    loss: &LossConfig,
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<FdReport> {
    finite_diff_check(
        params.params(),
        |tape, ids| {
            let nodes = crate::encoders::ModelNodes::from_ids(ids);
            let emb = forward_batch(tape, &nodes, encoder, batch)?;
            Ok(train_loss(tape, &emb, nodes.log_temperature, loss)?.0)
        },
        eps,
        n_coords,
        seed,
    )
}
