use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::qa::{LabelPayload, QAExample, NUM_TASKS};

/// Added to logits and attention scores at padded positions.
pub const MASK_VALUE: f64 = -1e9;

/// Padded encoder inputs for a group of examples.
pub struct Batch {
    /// `[batch, seq]` u32
    pub token_ids: Tensor,
    /// `[batch, seq]` u32
    pub segment_ids: Tensor,
    /// `[batch, seq]`, 0 at real tokens and [`MASK_VALUE`] at padding.
    pub key_bias: Tensor,
    pub valid_lengths: Vec<usize>,
    pub seq_len: usize,
}

impl Batch {
    /// Pads to the longest example, or to `pad_to` when it is longer.
    pub fn new(
        examples: &[&QAExample],
        vocab_size: usize,
        pad_id: u32,
        pad_to: Option<usize>,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let longest = examples.iter().map(|e| e.valid_length()).max().unwrap_or(0);
        let t = pad_to.unwrap_or(0).max(longest);
        let b = examples.len();
        let mut ids = vec![pad_id; b * t];
        let mut segs = vec![0u32; b * t];
        let mut bias = vec![MASK_VALUE; b * t];
        let mut valid_lengths = Vec::with_capacity(b);
        for (row, ex) in examples.iter().enumerate() {
            if ex.token_ids.len() != ex.segment_ids.len() {
                return Err(Error::Input(format!(
                    "{:?}: token/segment length mismatch",
                    ex.keys
                )));
            }
            for (col, (&id, &seg)) in ex.token_ids.iter().zip(&ex.segment_ids).enumerate() {
                if id as usize >= vocab_size {
                    return Err(Error::Input(format!(
                        "token id {id} outside vocabulary of size {vocab_size}"
                    )));
                }
                ids[row * t + col] = id;
                segs[row * t + col] = seg as u32;
                bias[row * t + col] = 0.0;
            }
            valid_lengths.push(ex.valid_length());
        }
        Ok(Self {
            token_ids: Tensor::from_vec(ids, (b, t), device)?,
            segment_ids: Tensor::from_vec(segs, (b, t), device)?,
            key_bias: Tensor::from_vec(bias, (b, t), device)?.to_dtype(dtype)?,
            valid_lengths,
            seq_len: t,
        })
    }

    pub fn len(&self) -> usize {
        self.valid_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_lengths.is_empty()
    }
}

/// Targets for every head; entries of heads an example does not train are 0
/// and removed by the loss mask.
pub struct BatchLabels {
    pub binary: Tensor,
    pub status: Tensor,
    pub span_start: Tensor,
    pub span_end: Tensor,
    /// `[batch, 5]`
    pub loss_mask: Tensor,
}

impl BatchLabels {
    pub fn new(examples: &[&QAExample], dtype: DType, device: &Device) -> Result<Self> {
        let b = examples.len();
        let mut binary = vec![0u32; b];
        let mut status = vec![0u32; b];
        let mut start = vec![0u32; b];
        let mut end = vec![0u32; b];
        let mut mask = Vec::with_capacity(b * NUM_TASKS);
        for (i, ex) in examples.iter().enumerate() {
            if ex.loss_mask.iter().all(|&m| m == 0) {
                return Err(Error::InvalidExample(format!(
                    "{:?}: all-zero loss mask",
                    ex.keys
                )));
            }
            match ex.label {
                LabelPayload::Binary(v) => binary[i] = v as u32,
                LabelPayload::Status(s) => status[i] = s.index() as u32,
                LabelPayload::Span(s, e) => {
                    start[i] = s as u32;
                    end[i] = e as u32;
                }
            }
            mask.extend(ex.loss_mask.iter().map(|&m| m as f64));
        }
        Ok(Self {
            binary: Tensor::from_vec(binary, b, device)?,
            status: Tensor::from_vec(status, b, device)?,
            span_start: Tensor::from_vec(start, b, device)?,
            span_end: Tensor::from_vec(end, b, device)?,
            loss_mask: Tensor::from_vec(mask, (b, NUM_TASKS), device)?.to_dtype(dtype)?,
        })
    }
}
