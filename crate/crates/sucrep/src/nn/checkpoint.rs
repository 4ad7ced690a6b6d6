//! Versioned binary checkpoints: a magic string, a JSON descriptor, then
//! flat little-endian `f64` payloads per named tensor (column-major).
//! Round-trips are bitwise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"SUCREPCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: BTreeMap<String, String>,
    tensors: Vec<TensorMeta>,
}

/// An in-memory checkpoint: a flat string config plus named tensors in a
/// fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<(String, DMatrix<f64>)>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let header = Header {
        config: checkpoint.config.clone(),
        tensors: checkpoint
            .tensors
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for (_, tensor) in &checkpoint.tensors {
        for v in tensor.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut long = [0u8; 8];
    file.read_exact(&mut long)?;
    let header_len = u64::from_le_bytes(long) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let mut data = vec![0.0f64; meta.rows * meta.cols];
        for slot in data.iter_mut() {
            file.read_exact(&mut long)?;
            *slot = f64::from_le_bytes(long);
        }
        tensors.push((meta.name, DMatrix::from_vec(meta.rows, meta.cols, data)));
    }
    Ok(Checkpoint {
        config: header.config,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::stream;
    use rand::Rng;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut rng = stream(51, "ckpt");
        let mut config = BTreeMap::new();
        config.insert("method".to_string(), "byol_gamma".to_string());
        config.insert("alpha".to_string(), "6".to_string());
        let tensors = vec![
            (
                "enc0.w0".to_string(),
                DMatrix::from_fn(7, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            ),
            ("enc0.b0".to_string(), DMatrix::zeros(7, 1)),
            (
                "odd".to_string(),
                DMatrix::from_fn(1, 5, |_, _| rng.random::<f64>() * 1e-17),
            ),
        ];
        let ck = Checkpoint { config, tensors };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ck, back);
        // and the files themselves are identical on re-save
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    }
}
