//! The shared encoder behind a trait, so a pretrained transformer can stand in
//! for the small default one.

use std::collections::HashSet;

use candle_core::{DType, IndexOp, Tensor};
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::layers::{dropout, DropoutRng, LayerNorm, Linear};
use super::params::ParamStore;
use crate::error::{Error, Result};

pub struct EncoderOutput {
    /// `[batch, seq, hidden]`
    pub token_states: Tensor,
    /// `[batch, hidden]`, the `[CLS]` summary.
    pub pooled: Tensor,
}

/// Contract every encoder fulfils: token states for every input position and
/// a pooled `[CLS]` state, deterministic when `rng` is `None`.
pub trait Encoder: Send + Sync {
    fn hidden_size(&self) -> usize;
    fn encode(&self, batch: &Batch, rng: Option<&mut DropoutRng>) -> Result<EncoderOutput>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub feed_forward: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub layer_norm_eps: f64,
    /// Adds a learned embedding marking tokens that occur in both sequences.
    pub match_feature: bool,
    /// Mixes each token with its neighbours up to this distance before the
    /// attention layers; 0 disables the mixing.
    pub local_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            max_positions: 128,
            hidden: 64,
            layers: 2,
            heads: 4,
            feed_forward: 256,
            dropout: 0.1,
            init_std: 0.02,
            layer_norm_eps: 1e-12,
            match_feature: true,
            local_window: 2,
        }
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    attn_norm: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    ff_norm: LayerNorm,
}

/// Post-norm BERT-style transformer with learned token, position and segment embeddings.
pub struct ToyTransformerEncoder {
    config: EncoderConfig,
    token_emb: Tensor,
    position_emb: Tensor,
    segment_emb: Tensor,
    match_emb: Option<Tensor>,
    emb_norm: LayerNorm,
    local: Option<(Linear, LayerNorm)>,
    layers: Vec<Layer>,
}

impl ToyTransformerEncoder {
    pub fn new(config: EncoderConfig, params: &mut ParamStore) -> Result<Self> {
        let c = &config;
        if c.vocab_size == 0 {
            return Err(Error::Config("encoder vocab_size must be set".into()));
        }
        if c.heads == 0 || !c.hidden.is_multiple_of(c.heads) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                c.hidden, c.heads
            )));
        }
        let std = c.init_std;
        let token_emb = params.normal("encoder.token_emb", &[c.vocab_size, c.hidden], std)?;
        let position_emb =
            params.normal("encoder.position_emb", &[c.max_positions, c.hidden], std)?;
        let segment_emb = params.normal("encoder.segment_emb", &[2, c.hidden], std)?;
        let match_emb = if c.match_feature {
            Some(params.normal("encoder.match_emb", &[2, c.hidden], std)?)
        } else {
            None
        };
        let emb_norm = LayerNorm::new(params, "encoder.emb_norm", c.hidden, c.layer_norm_eps)?;
        let local = if c.local_window > 0 {
            Some((
                Linear::new(
                    params,
                    "encoder.local_mix",
                    2 * c.local_window * c.hidden,
                    c.hidden,
                    std,
                )?,
                LayerNorm::new(params, "encoder.local_norm", c.hidden, c.layer_norm_eps)?,
            ))
        } else {
            None
        };
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = format!("encoder.layer{l}");
            layers.push(Layer {
                query: Linear::new(params, &format!("{p}.query"), c.hidden, c.hidden, std)?,
                key: Linear::new(params, &format!("{p}.key"), c.hidden, c.hidden, std)?,
                value: Linear::new(params, &format!("{p}.value"), c.hidden, c.hidden, std)?,
                output: Linear::new(params, &format!("{p}.attn_out"), c.hidden, c.hidden, std)?,
                attn_norm: LayerNorm::new(
                    params,
                    &format!("{p}.attn_norm"),
                    c.hidden,
                    c.layer_norm_eps,
                )?,
                ff_in: Linear::new(params, &format!("{p}.ff_in"), c.hidden, c.feed_forward, std)?,
                ff_out: Linear::new(
                    params,
                    &format!("{p}.ff_out"),
                    c.feed_forward,
                    c.hidden,
                    std,
                )?,
                ff_norm: LayerNorm::new(
                    params,
                    &format!("{p}.ff_norm"),
                    c.hidden,
                    c.layer_norm_eps,
                )?,
            });
        }
        Ok(Self {
            config,
            token_emb,
            position_emb,
            segment_emb,
            match_emb,
            emb_norm,
            local,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `[batch, seq, 2w * hidden]`: the states at offsets -w..=w except 0,
    /// zero where the offset leaves the valid tokens.
    fn neighbours(&self, x: &Tensor, batch: &Batch) -> Result<Tensor> {
        let t = batch.seq_len;
        let valid = batch.key_bias.ge(-1.0)?.to_dtype(x.dtype())?.unsqueeze(2)?;
        let x = x.broadcast_mul(&valid)?;
        let w = self.config.local_window;
        let mut parts = Vec::with_capacity(2 * w);
        for k in 1..=w {
            parts.push(x.pad_with_zeros(1, k, 0)?.narrow(1, 0, t)?);
            parts.push(x.pad_with_zeros(1, 0, k)?.narrow(1, k, t)?);
        }
        Ok(Tensor::cat(&parts, 2)?)
    }

    fn attention(
        &self,
        layer: &Layer,
        x: &Tensor,
        bias: &Tensor,
        mut rng: Option<&mut DropoutRng>,
    ) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let h = self.config.heads;
        let dh = d / h;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, h, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(layer.query.forward(x)?)?;
        let k = split(layer.key.forward(x)?)?;
        let v = split(layer.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?.broadcast_add(bias)?;
        let probs = candle_nn::ops::softmax(&scores, candle_core::D::Minus1)?;
        let probs = dropout(&probs, self.config.dropout, rng.as_deref_mut())?;
        let ctx = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, d))?;
        let out = dropout(&layer.output.forward(&ctx)?, self.config.dropout, rng)?;
        layer.attn_norm.forward(&(x + out)?)
    }
}

impl Encoder for ToyTransformerEncoder {
    fn hidden_size(&self) -> usize {
        self.config.hidden
    }

    fn encode(&self, batch: &Batch, mut rng: Option<&mut DropoutRng>) -> Result<EncoderOutput> {
        let (b, t) = batch.token_ids.dims2()?;
        if t > self.config.max_positions {
            return Err(Error::Input(format!(
                "sequence length {t} exceeds max positions {}",
                self.config.max_positions
            )));
        }
        let d = self.config.hidden;
        let tokens = self
            .token_emb
            .index_select(&batch.token_ids.flatten_all()?, 0)?
            .reshape((b, t, d))?;
        let segments = self
            .segment_emb
            .index_select(&batch.segment_ids.flatten_all()?, 0)?
            .reshape((b, t, d))?;
        let positions = self.position_emb.narrow(0, 0, t)?.unsqueeze(0)?;
        let mut x = tokens.add(&segments)?.broadcast_add(&positions)?;
        if let Some(emb) = &self.match_emb {
            let flags = match_flags(batch)?;
            x = x.add(
                &emb.index_select(&flags.flatten_all()?, 0)?
                    .reshape((b, t, d))?,
            )?;
        }
        let mut x = dropout(
            &self.emb_norm.forward(&x)?,
            self.config.dropout,
            rng.as_deref_mut(),
        )?;
        if let Some((mix, norm)) = &self.local {
            let neighbours = self.neighbours(&x, batch)?;
            let mixed = dropout(
                &mix.forward(&neighbours)?.gelu_erf()?,
                self.config.dropout,
                rng.as_deref_mut(),
            )?;
            x = norm.forward(&(x + mixed)?)?;
        }

        // [batch, 1, 1, seq] additive key mask
        let bias = batch.key_bias.unsqueeze(1)?.unsqueeze(1)?;
        for layer in &self.layers {
            x = self.attention(layer, &x, &bias, rng.as_deref_mut())?;
            let ff = layer
                .ff_out
                .forward(&layer.ff_in.forward(&x)?.gelu_erf()?)?;
            let ff = dropout(&ff, self.config.dropout, rng.as_deref_mut())?;
            x = layer.ff_norm.forward(&(x + ff)?)?;
        }
        let pooled = x.i((.., 0))?.contiguous()?;
        Ok(EncoderOutput {
            token_states: x,
            pooled,
        })
    }
}

/// 1 where a token id of one sequence also occurs in the other sequence of
/// the same example, 0 elsewhere (including padding).
fn match_flags(batch: &Batch) -> Result<Tensor> {
    let ids = batch.token_ids.to_vec2::<u32>()?;
    let segs = batch.segment_ids.to_vec2::<u32>()?;
    let t = batch.seq_len;
    let mut flags = vec![0u32; ids.len() * t];
    for (row, (ids, segs)) in ids.iter().zip(&segs).enumerate() {
        let n = batch.valid_lengths[row];
        let mut in_seq: [HashSet<u32>; 2] = [HashSet::new(), HashSet::new()];
        for j in 1..n {
            in_seq[segs[j].min(1) as usize].insert(ids[j]);
        }
        for j in 1..n {
            let other = 1 - segs[j].min(1) as usize;
            flags[row * t + j] = in_seq[other].contains(&ids[j]) as u32;
        }
    }
    Ok(Tensor::from_vec(
        flags,
        (ids.len(), t),
        batch.token_ids.device(),
    )?)
}

/// Parses `"f32"`/`"f64"`.
pub fn parse_dtype(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Config(format!("unsupported dtype {other}"))),
    }
}
