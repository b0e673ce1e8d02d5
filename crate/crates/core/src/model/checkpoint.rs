//! Checkpoint directory layout:
//!
//! ```text
//! manifest.json      format name, version, model config, file names
//! vocab.txt          tokenizer vocabulary, one token per line
//! model.safetensors  every parameter, stored in the model dtype
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, NluModel};
use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, WordPiece};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "schema-dst-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    model: ModelConfig,
    pad_id: u32,
    vocab_file: String,
    lowercase: bool,
    tensors_file: String,
    num_parameters: usize,
}

pub fn save_checkpoint(dir: &Path, model: &NluModel, tokenizer: &WordPiece) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.config().clone(),
        pad_id: model.pad_id(),
        vocab_file: "vocab.txt".into(),
        lowercase: tokenizer.lowercase(),
        tensors_file: "model.safetensors".into(),
        num_parameters: model.num_parameters(),
    };
    let path = dir.join("manifest.json");
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    tokenizer.vocab().save(&dir.join(&manifest.vocab_file))?;
    let tensors: HashMap<String, candle_core::Tensor> =
        model.params().tensors().into_iter().collect();
    candle_core::safetensors::save(&tensors, dir.join(&manifest.tensors_file))?;
    Ok(())
}

/// Restores the default-encoder model and its tokenizer.
pub fn load_checkpoint(dir: &Path) -> Result<(NluModel, WordPiece)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, &e))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint: format {}",
            manifest.format
        )));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let vocab = Vocab::load(&dir.join(&manifest.vocab_file))?;
    if vocab.len() != manifest.model.encoder.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            manifest.model.encoder.vocab_size
        )));
    }
    let model = NluModel::new(manifest.model, manifest.pad_id)?;
    let tensors =
        candle_core::safetensors::load(dir.join(&manifest.tensors_file), model.params().device())?;
    let tensors: BTreeMap<_, _> = tensors.into_iter().collect();
    model.params().assign(&tensors)?;
    Ok((model, WordPiece::new(vocab, manifest.lowercase)))
}
