use candle_core::{Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::error::Result;

/// RNG driving dropout. `None` everywhere means evaluation mode.
pub type DropoutRng = ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// Weight stored as `[in, out]`.
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        std: f64,
    ) -> Result<Self> {
        Ok(Self {
            weight: params.normal(&format!("{name}.weight"), &[input, output], std)?,
            bias: params.constant(&format!("{name}.bias"), &[output], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, input))?
            .matmul(&self.weight)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(params: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: params.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: params.constant(&format!("{name}.beta"), &[dim], 0.0)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

/// Inverted dropout with a caller-supplied RNG.
pub fn dropout(x: &Tensor, rate: f64, rng: Option<&mut DropoutRng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                scale as f32
            }
        })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}
