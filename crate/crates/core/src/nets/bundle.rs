//! Model bundle directories.
//!
//! `architecture.json` holds the [`ArchitectureSpec`], `weights.bin` the
//! tensors, `classes.txt` one label per output column and `history.csv` the
//! learning curves when present.
//!
//! `weights.bin` layout, little-endian: magic `GAWT`, format version (u32),
//! tensor count (u32), then per tensor its element count (u64) and f32 values.
//! Tensors are written layer by layer in [`LayerParams::tensors`] order.

use std::fs;
use std::path::Path;

use super::network::{LayerParams, Network, TrainedModel, Weights};
use super::spec::{ArchitectureSpec, ARCHITECTURE_SCHEMA_VERSION};
use super::train::TrainingHistory;
use crate::dataset::GenderLabel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GAWT";
const WEIGHTS_VERSION: u32 = 1;

pub const ARCHITECTURE_FILE: &str = "architecture.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CLASSES_FILE: &str = "classes.txt";
pub const HISTORY_FILE: &str = "history.csv";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_weights(weights: &Weights) -> Vec<u8> {
    let tensors: Vec<&[f32]> = weights.layers.iter().flat_map(|l| l.tensors().into_iter().map(|(_, t)| t)).collect();
    let mut out = Vec::with_capacity(12 + tensors.iter().map(|t| 8 + 4 * t.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes `bytes` into weights shaped for `spec`.
pub fn decode_weights(bytes: &[u8], spec: &ArchitectureSpec) -> Result<Weights> {
    let bad = |m: String| Error::Schema(format!("weights file: {m}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap_or_default());
    let version = u32_at(take(4)?);
    if version != WEIGHTS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut weights = Weights::init_zeros(spec)?;
    let expected: usize = weights.layers.iter().map(|l| l.tensors().len()).sum();
    if count != expected {
        return Err(bad(format!("{count} tensors, architecture needs {expected}")));
    }
    for (i, layer) in weights.layers.iter_mut().enumerate() {
        let slots: Vec<&mut Vec<f32>> = match layer {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                vec![gamma, beta, running_mean, running_var]
            }
        };
        for slot in slots {
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap_or_default()) as usize;
            if len != slot.len() {
                return Err(bad(format!("layer {i}: tensor has {len} values, expected {}", slot.len())));
            }
            let raw = take(4 * len)?;
            for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap_or_default());
            }
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(weights)
}

/// Writes `architecture.json` and `weights.bin`.
pub fn save_network(net: &Network, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(ARCHITECTURE_FILE), serde_json::to_string_pretty(&net.spec)?)?;
    write(&dir.join(WEIGHTS_FILE), encode_weights(&net.weights))
}

pub fn load_network(dir: &Path) -> Result<Network> {
    let arch_path = dir.join(ARCHITECTURE_FILE);
    let text = fs::read_to_string(&arch_path).map_err(|e| Error::io(&arch_path, e))?;
    let spec: ArchitectureSpec = serde_json::from_str(&text)?;
    if spec.schema_version != ARCHITECTURE_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: schema_version {} is not supported (expected {ARCHITECTURE_SCHEMA_VERSION})",
            arch_path.display(),
            spec.schema_version
        )));
    }
    spec.validate()?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    Network::new(spec.clone(), decode_weights(&bytes, &spec)?)
}

/// Writes a full model bundle; `history.csv` only when a history is given.
pub fn save_model(model: &TrainedModel, history: Option<&TrainingHistory>, dir: &Path) -> Result<()> {
    save_network(&model.network, dir)?;
    let classes: String = model.class_order.iter().map(|c| format!("{c}\n")).collect();
    write(&dir.join(CLASSES_FILE), classes)?;
    if let Some(h) = history {
        write(&dir.join(HISTORY_FILE), h.to_csv())?;
    }
    Ok(())
}

/// Reads a model bundle and its history if one was saved.
pub fn load_model(dir: &Path) -> Result<(TrainedModel, Option<TrainingHistory>)> {
    let network = load_network(dir)?;
    let cpath = dir.join(CLASSES_FILE);
    let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
    let classes = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<GenderLabel>())
        .collect::<Result<Vec<_>>>()?;
    let hpath = dir.join(HISTORY_FILE);
    let history = if hpath.is_file() { Some(TrainingHistory::load(&hpath)?) } else { None };
    Ok((TrainedModel::new(network, classes)?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::build_baseline;

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = TrainedModel::init(build_baseline(32, 3).unwrap(), 7).unwrap();
        let h = TrainingHistory {
            train_loss: vec![1.0],
            train_accuracy: vec![0.5],
            val_loss: vec![1.1],
            val_accuracy: vec![0.4],
        };
        save_model(&m, Some(&h), dir.path()).unwrap();
        let (back, hist) = load_model(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(hist, Some(h));
    }

    #[test]
    fn truncated_weights_rejected() {
        let spec = build_baseline(32, 2).unwrap();
        let w = Weights::init(&spec, 0).unwrap();
        let bytes = encode_weights(&w);
        assert!(decode_weights(&bytes[..bytes.len() - 1], &spec).is_err());
        assert!(decode_weights(b"XXXX", &spec).is_err());
        assert_eq!(decode_weights(&bytes, &spec).unwrap(), w);
    }
}
