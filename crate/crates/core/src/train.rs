//! Optimisation loop: Adam, linear warmup then polynomial decay, global
//! gradient-norm clipping, dev-loss model selection.

use std::collections::BTreeMap;
use std::io::Write;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_loss, per_head_losses, BatchLabels, DropoutRng, NluModel};
use crate::qa::QAExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub decay_power: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Restore the parameters of the epoch with the lowest dev loss. When off,
    /// the dev loss is still logged and the final parameters are kept.
    pub select_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-4,
            warmup_ratio: 0.1,
            decay_power: 1.0,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            select_best: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup_ratio {} outside [0, 1)",
                self.warmup_ratio
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.decay_power > 0.0) {
            return Err(Error::Config(
                "learning_rate and decay_power must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate as a function of the optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub power: f64,
}

impl LrSchedule {
    pub fn new(max_lr: f64, warmup_ratio: f64, total_steps: usize, power: f64) -> Self {
        Self {
            max_lr,
            warmup_steps: (warmup_ratio * total_steps as f64).floor() as usize,
            total_steps,
            power,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let remaining =
            (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.max_lr * remaining.powf(self.power)
    }
}

/// Scales the gradients of `vars` so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[&Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g
                .sqr()?
                .sum_all()?
                .to_dtype(candle_core::DType::F64)?
                .to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_dev_loss: Option<f64>,
}

/// Mean per-example loss over `examples`, without dropout.
pub fn evaluate_loss(model: &NluModel, examples: &[QAExample], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&QAExample> = chunk.iter().collect();
        let batch = model.batch(&refs, None)?;
        let labels = BatchLabels::new(&refs, model.dtype(), model.params().device())?;
        let out = model.forward(&batch, None)?;
        let per = per_head_losses(&out, &labels)?
            .mul(&labels.loss_mask)?
            .sum_all()?;
        total += per.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(total / examples.len() as f64)
}

fn batch_keys(batch: &[&QAExample]) -> String {
    batch
        .iter()
        .take(8)
        .map(|e| {
            format!(
                "{}/{}/{}/{}",
                e.keys.dialogue_id, e.keys.turn_index, e.keys.service, e.keys.element
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Trains `model` in place. With a dev set and `select_best`, the parameters
/// of the epoch with the lowest dev loss are restored at the end. Step and epoch records are
/// written to `log` as JSON lines.
pub fn train(
    model: &NluModel,
    config: &TrainConfig,
    train_examples: &[QAExample],
    dev_examples: &[QAExample],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    if train_examples.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    let vars: Vec<&Var> = model.params().vars().map(|(_, v)| v).collect();
    let mut opt = AdamW::new(
        vars.iter().map(|v| (*v).clone()).collect(),
        ParamsAdamW {
            lr: 0.0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: 0.0,
        },
    )?;
    let steps_per_epoch = train_examples.len().div_ceil(config.batch_size);
    let schedule = LrSchedule::new(
        config.learning_rate,
        config.warmup_ratio,
        steps_per_epoch * config.epochs,
        config.decay_power,
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = DropoutRng::seed_from_u64(config.seed.wrapping_add(1));
    let mut report = TrainReport::default();
    let mut best: Option<BTreeMap<String, Tensor>> = None;
    let write_line = |log: &mut Option<&mut dyn Write>, value: serde_json::Value| -> Result<()> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{value}").map_err(|e| Error::io("<train log>", e))?;
        }
        Ok(())
    };

    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_examples.len()).collect();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&QAExample> = idx.iter().map(|&i| &train_examples[i]).collect();
            let batch = model.batch(&refs, None)?;
            let labels = BatchLabels::new(&refs, model.dtype(), model.params().device())?;
            let out = model.forward(&batch, Some(&mut dropout_rng))?;
            let loss = compute_loss(&out, &labels)?;
            let lr = schedule.lr_at(step);
            let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    lr,
                    loss: value,
                    batch_keys: batch_keys(&refs),
                });
            }
            let mut grads = loss.backward()?;
            let grad_norm = clip_grad_norm(&mut grads, &vars, config.clip_norm)?;
            opt.set_learning_rate(lr);
            opt.step(&grads)?;
            epoch_loss += value * refs.len() as f64;
            let entry = StepLog {
                epoch,
                step,
                lr,
                loss: value,
                grad_norm,
            };
            write_line(&mut log, serde_json::json!({"step": &entry}))?;
            report.steps.push(entry);
            step += 1;
        }
        let dev_loss = if dev_examples.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, dev_examples, config.batch_size * 2)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / train_examples.len() as f64,
            dev_loss,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev loss {}",
            entry.train_loss,
            dev_loss.map_or("n/a".into(), |d| format!("{d:.4}"))
        );
        write_line(&mut log, serde_json::json!({"epoch": &entry}))?;
        report.epochs.push(entry);
        if let Some(d) = dev_loss {
            if report.best_dev_loss.is_none_or(|b| d < b) {
                report.best_dev_loss = Some(d);
                report.best_epoch = Some(epoch);
                if config.select_best {
                    best = Some(model.params().tensors());
                }
            }
        }
    }
    if let Some(best) = best {
        model.params().assign(&best)?;
    }
    Ok(report)
}
