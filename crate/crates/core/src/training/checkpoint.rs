//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"MOLFUSE\0"
//! version u32 (= 1)
//! header  u64 byte length, then UTF-8 JSON {config, label_shift, label_scale, vocab}
//! count   u32 number of tensors
//! tensor  u32 name length, name bytes, u32 rank, rank × u64 dims, numel × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::integration::{Model, ModelConfig};
use crate::smiles::Vocabulary;

const MAGIC: &[u8; 8] = b"MOLFUSE\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("parameter {name}: {reason}")]
    Param { name: String, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    label_shift: f64,
    label_scale: f64,
    vocab: Vec<String>,
}

pub fn write_checkpoint(w: &mut impl Write, model: &Model, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    let header = Header {
        config: model.config.clone(),
        label_shift: model.label_shift,
        label_scale: model.label_scale,
        vocab: vocab.tokens().to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_of(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_of(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Model, Vocabulary), CheckpointError> {
    let mut magic = [0; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32_of(r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = u64_of(r)? as usize;
    let mut json = vec![0; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let vocab = Vocabulary::from_tokens(header.vocab.iter().skip(4).cloned());
    if vocab.tokens() != header.vocab.as_slice() {
        return Err(CheckpointError::Header("vocabulary is not in canonical order".into()));
    }
    let mut model = Model::new(header.config, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;
    model.label_shift = header.label_shift;
    model.label_scale = header.label_scale;

    let count = u32_of(r)? as usize;
    if count != model.params.len() {
        return Err(CheckpointError::Header(format!(
            "{count} tensors stored, model has {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let n = u32_of(r)? as usize;
        let mut name = vec![0; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let rank = u32_of(r)? as usize;
        let shape = (0..rank).map(|_| u64_of(r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let slot = model.params.get_mut(&name).ok_or_else(|| CheckpointError::Param {
            name: name.clone(),
            reason: "not a parameter of this model".into(),
        })?;
        if slot.shape() != shape.as_slice() {
            return Err(CheckpointError::Param {
                reason: format!("stored shape {shape:?}, expected {:?}", slot.shape()),
                name,
            });
        }
        *slot = Tensor::new(shape, data).map_err(|e| CheckpointError::Param {
            name: name.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok((model, vocab))
}

pub fn save_checkpoint(path: &Path, model: &Model, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, model, vocab)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Vocabulary), CheckpointError> {
    read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TaskKind;
    use crate::integration::{FusionOp, Strategy};
    use crate::smiles::corpus_smiles;

    #[test]
    fn round_trip_is_exact() {
        let vocab = Vocabulary::build(corpus_smiles());
        let mut cfg = ModelConfig::tiny(Strategy::LateFusion, TaskKind::Regression, vocab.len());
        cfg.fusion = FusionOp::Gate;
        let mut m = Model::new(cfg, 5).unwrap();
        m.fit_labels(&[1.0, 2.0, 4.0]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &vocab).unwrap();
        let (back, v2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(v2, vocab);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_checkpoint(&mut &b"NOTACKPTxxxx"[..]), Err(CheckpointError::BadMagic)));
        assert!(read_checkpoint(&mut &b"MOL"[..]).is_err());
    }
}
