//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MLCCKPT\0"
//! version    u32
//! header_len u64
//! header     JSON: model config, loss settings, label names, array table
//! payload    f64 little-endian values of every array, in table order
//! ```
//!
//! The array table lists every model parameter plus `embeddings.current` and
//! `embeddings.anchors`, each with its shape. Values are stored as raw bits,
//! so a save/load cycle is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::embeddings::LabelEmbeddings;
use crate::losses::LossSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MLCCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const CURRENT: &str = "embeddings.current";
const ANCHORS: &str = "embeddings.anchors";

/// Everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub embeddings: LabelEmbeddings,
    pub loss: LossSpec,
    pub label_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    loss: LossSpec,
    label_names: Option<Vec<String>>,
    arrays: Vec<ArrayEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let mut arrays: Vec<(String, Vec<usize>, Vec<f64>)> = ckpt
        .params
        .arrays()
        .into_iter()
        .map(|a| (a.name, a.data.shape().to_vec(), a.data.iter().copied().collect()))
        .collect();
    for (name, m) in [
        (CURRENT, &ckpt.embeddings.current),
        (ANCHORS, ckpt.embeddings.anchors()),
    ] {
        arrays.push((name.into(), m.shape().to_vec(), m.iter().copied().collect()));
    }
    let header = Header {
        config: ckpt.config,
        loss: ckpt.loss,
        label_names: ckpt.label_names.clone(),
        arrays: arrays
            .iter()
            .map(|(name, shape, _)| ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, _, values) in &arrays {
        for v in values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| bad(format!("truncated payload: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;

    let mut params = ModelParams::init(&header.config, 0)?;
    let mut current = None;
    let mut anchors = None;
    {
        let mut slots = params.arrays_mut();
        let param_count = slots.len();
        if header.arrays.len() != param_count + 2 {
            return Err(bad(format!(
                "array table has {} entries, expected {}",
                header.arrays.len(),
                param_count + 2
            )));
        }
        for (entry, slot) in header.arrays.iter().zip(slots.iter_mut()) {
            if entry.name != slot.name || entry.shape != slot.data.shape() {
                return Err(bad(format!(
                    "array {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    slot.name,
                    slot.data.shape()
                )));
            }
            let values = read_f64s(&mut input, slot.data.len())?;
            for (dst, v) in slot.data.iter_mut().zip(values) {
                *dst = v;
            }
        }
        for entry in &header.arrays[param_count..] {
            let [rows, cols] = entry.shape[..] else {
                return Err(bad(format!("{} must be two-dimensional", entry.name)));
            };
            let m = Array2::from_shape_vec((rows, cols), read_f64s(&mut input, rows * cols)?)
                .map_err(|e| bad(e.to_string()))?;
            match entry.name.as_str() {
                CURRENT => current = Some(m),
                ANCHORS => anchors = Some(m),
                other => return Err(bad(format!("unexpected array {other}"))),
            }
        }
    }
    let (Some(current), Some(anchors)) = (current, anchors) else {
        return Err(bad("label embeddings missing"));
    };
    if current.dim() != (header.config.num_labels, header.config.label_dim) {
        return Err(bad("label embedding shape disagrees with the model configuration"));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        embeddings: LabelEmbeddings::from_parts(current, anchors)?,
        loss: header.loss,
        label_names: header.label_names,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
