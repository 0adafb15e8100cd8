//! Single-file model archive.
//!
//! A checkpoint is one JSON document holding the model config, the run config
//! echo, the vocabulary and every parameter tensor under its stable name. Tensor
//! values are stored as base64 of little-endian `f64` bytes, so a save/load
//! round trip is bit-exact.

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, Vocabulary};
use crate::error::{io_err, Error, Result};
use crate::model::{build_model, Model, ModelConfig};

const FORMAT: &str = "rationalift-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    model: ModelConfig,
    #[serde(default)]
    run: serde_json::Value,
    vocab: Vocabulary,
    tensors: Vec<Tensor>,
}

/// What a checkpoint restores.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    /// Whatever the writer passed as run configuration, `null` if nothing.
    pub run: serde_json::Value,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn to_json(model: &Model, vocab: &Vocabulary, run: &serde_json::Value) -> Result<String> {
    let tensors = model
        .params
        .tensors()
        .into_iter()
        .map(|(name, shape, data)| Tensor { name, shape, data: encode(data) })
        .collect();
    let archive = Archive {
        format: FORMAT.into(),
        version: VERSION,
        model: model.config.clone(),
        run: run.clone(),
        vocab: vocab.clone(),
        tensors,
    };
    Ok(serde_json::to_string(&archive)?)
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let archive: Archive = serde_json::from_str(text)?;
    if archive.format != FORMAT || archive.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?} version {}",
            archive.format, archive.version
        )));
    }
    let cfg = archive.model;
    let blank = EmbeddingTable { matrix: Array2::zeros((archive.vocab.len(), cfg.embedding_dim)) };
    let mut model = build_model(&cfg, &archive.vocab, &blank, 0)?;
    let mut stored: HashMap<String, Tensor> = archive.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let shapes: HashMap<String, Vec<usize>> =
        model.params.tensors().into_iter().map(|(name, shape, _)| (name, shape)).collect();
    for (name, slot) in model.params.tensors_mut() {
        let tensor = stored
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if tensor.shape != shapes[&name] {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?}, model expects {:?}",
                tensor.shape, shapes[&name]
            )));
        }
        slot.copy_from_slice(&decode(&name, &tensor.data, slot.len())?);
    }
    if let Some(name) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint { model, vocab: archive.vocab, run: archive.run })
}

pub fn save(path: &Path, model: &Model, vocab: &Vocabulary, run: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_json(model, vocab, run)?).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    from_json(&text)
}
