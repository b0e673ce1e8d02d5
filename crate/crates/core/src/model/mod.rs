//! Shared encoder, five task heads and the masked multi-task loss.

mod batch;
mod checkpoint;
mod encoder;
mod heads;
mod layers;
mod params;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

pub use batch::{Batch, BatchLabels, MASK_VALUE};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use encoder::{parse_dtype, Encoder, EncoderConfig, EncoderOutput, ToyTransformerEncoder};
pub use heads::{ClassificationHead, HeadActivationOrder, HeadSet, HEAD_PREFIXES};
pub use layers::{dropout, DropoutRng, LayerNorm, Linear};
pub use params::ParamStore;

use crate::error::Result;
use crate::qa::QAExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head_order: HeadActivationOrder,
    /// `"f32"` for training, `"f64"` for gradient checks.
    pub dtype: String,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_order: HeadActivationOrder::default(),
            dtype: "f32".into(),
            seed: 42,
        }
    }
}

/// Raw scores of every head for every example in a batch.
pub struct ModelOutput {
    /// `[batch, 2]`
    pub intent: Tensor,
    /// `[batch, 2]`
    pub requested: Tensor,
    /// `[batch, 3]` in none/dontcare/active order
    pub status: Tensor,
    /// `[batch, 2]`
    pub cat_value: Tensor,
    /// `[batch, seq]`, padded positions at [`MASK_VALUE`]
    pub start: Tensor,
    /// `[batch, seq]`, padded positions at [`MASK_VALUE`]
    pub end: Tensor,
}

pub struct NluModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Box<dyn Encoder>,
    heads: HeadSet,
    pad_id: u32,
    vocab_size: usize,
}

impl NluModel {
    /// Builds the default transformer encoder plus heads.
    pub fn new(config: ModelConfig, pad_id: u32) -> Result<Self> {
        let mut params = ParamStore::new(parse_dtype(&config.dtype)?, config.seed);
        let encoder = ToyTransformerEncoder::new(config.encoder.clone(), &mut params)?;
        Self::assemble(config, params, Box::new(encoder), pad_id)
    }

    /// Builds the heads on top of any encoder. `build_encoder` registers its
    /// trainable tensors (if any) in the shared store.
    pub fn with_encoder(
        config: ModelConfig,
        pad_id: u32,
        build_encoder: impl FnOnce(&mut ParamStore) -> Result<Box<dyn Encoder>>,
    ) -> Result<Self> {
        let mut params = ParamStore::new(parse_dtype(&config.dtype)?, config.seed);
        let encoder = build_encoder(&mut params)?;
        Self::assemble(config, params, encoder, pad_id)
    }

    fn assemble(
        config: ModelConfig,
        mut params: ParamStore,
        encoder: Box<dyn Encoder>,
        pad_id: u32,
    ) -> Result<Self> {
        let heads = HeadSet::new(
            &mut params,
            encoder.hidden_size(),
            config.head_order,
            config.encoder.init_std,
        )?;
        let vocab_size = config.encoder.vocab_size;
        Ok(Self {
            config,
            params,
            encoder,
            heads,
            pad_id,
            vocab_size,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    pub fn batch(&self, examples: &[&QAExample], pad_to: Option<usize>) -> Result<Batch> {
        Batch::new(
            examples,
            self.vocab_size,
            self.pad_id,
            pad_to,
            self.dtype(),
            self.params.device(),
        )
    }

    /// Runs the encoder once and every head on its output. Task selection
    /// happens in the loss, not here.
    pub fn forward(&self, batch: &Batch, rng: Option<&mut DropoutRng>) -> Result<ModelOutput> {
        let enc = self.encoder.encode(batch, rng)?;
        let h = &self.heads;
        let span = |lin: &Linear| -> Result<Tensor> {
            Ok(lin
                .forward(&enc.token_states)?
                .squeeze(D::Minus1)?
                .add(&batch.key_bias)?)
        };
        Ok(ModelOutput {
            intent: h.intent.forward(&enc.pooled)?,
            requested: h.requested.forward(&enc.pooled)?,
            status: h.status.forward(&enc.pooled)?,
            cat_value: h.cat_value.forward(&enc.pooled)?,
            start: span(&h.span_start)?,
            end: span(&h.span_end)?,
        })
    }
}

fn cross_entropy_rows(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    Ok(log_probs
        .gather(&targets.unsqueeze(1)?, 1)?
        .squeeze(1)?
        .neg()?)
}

/// Per-example cross-entropy of every head, `[batch, 5]` in task order. The
/// span column is the mean of the start and end cross-entropies.
pub fn per_head_losses(out: &ModelOutput, labels: &BatchLabels) -> Result<Tensor> {
    let intent = cross_entropy_rows(&out.intent, &labels.binary)?;
    let requested = cross_entropy_rows(&out.requested, &labels.binary)?;
    let status = cross_entropy_rows(&out.status, &labels.status)?;
    let cat_value = cross_entropy_rows(&out.cat_value, &labels.binary)?;
    let span = ((cross_entropy_rows(&out.start, &labels.span_start)?
        + cross_entropy_rows(&out.end, &labels.span_end)?)?
        * 0.5)?;
    Ok(Tensor::stack(
        &[intent, requested, status, cat_value, span],
        1,
    )?)
}

/// Masked multi-task loss: each example contributes the loss of its own task
/// only; the batch loss is the mean over examples.
pub fn compute_loss(out: &ModelOutput, labels: &BatchLabels) -> Result<Tensor> {
    let per_head = per_head_losses(out, labels)?;
    Ok(per_head.mul(&labels.loss_mask)?.sum(1)?.mean_all()?)
}

/// Softmax over the last dimension, as nested vectors.
pub fn probabilities(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    let p = candle_nn::ops::softmax(logits, D::Minus1)?.to_dtype(DType::F64)?;
    Ok(p.to_vec2::<f64>()?)
}
