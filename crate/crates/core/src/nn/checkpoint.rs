//! Binary checkpoint container: `PCLCKPT\0`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then raw little-endian
//! `f32` payload (parameters, then Adam first and second moments if present).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelConfig, ParamStore, PclModel};
use super::optim::AdamState;
use super::tensor::Tensor;
use super::train::TrainConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PCLCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: PclModel<f32>,
    pub adam: Option<AdamState>,
    pub train: Option<TrainConfig>,
    /// Number of completed epochs.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    config_hash: String,
    epoch: usize,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Hex SHA-256 of the canonical JSON of the model and training configs.
pub fn config_hash(model: &ModelConfig, train: Option<&TrainConfig>) -> String {
    let json = serde_json::to_string(&(model, train)).expect("configs serialize");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn put(buf: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes through a temporary file and renames, so a crash never leaves a
/// truncated checkpoint behind.
pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        version: FORMAT_VERSION,
        model: ck.model.config.clone(),
        train: ck.train.clone(),
        config_hash: config_hash(&ck.model.config, ck.train.as_ref()),
        epoch: ck.epoch,
        adam_step: ck.adam.as_ref().map(|a| a.step),
        tensors: ck
            .model
            .params
            .names()
            .iter()
            .zip(ck.model.params.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in ck.model.params.tensors() {
        put(&mut buf, t.data());
    }
    if let Some(a) = &ck.adam {
        for m in a.m.iter().chain(&a.v) {
            put(&mut buf, m);
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Data(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    if header.config_hash != config_hash(&header.model, header.train.as_ref()) {
        return Err(Error::Data("checkpoint config hash does not match its header".into()));
    }
    let mut params = ParamStore::default();
    for e in &header.tensors {
        let n = e.shape.iter().product();
        params.push(e.name.clone(), Tensor::new(e.shape.clone(), r.floats(n)?)?);
    }
    let model = PclModel::from_params(header.model, params)?;
    let adam = match header.adam_step {
        Some(step) => {
            let sizes: Vec<usize> = model.params.tensors().iter().map(Tensor::numel).collect();
            let m = sizes.iter().map(|&n| r.floats(n)).collect::<Result<Vec<_>>>()?;
            let v = sizes.iter().map(|&n| r.floats(n)).collect::<Result<Vec<_>>>()?;
            Some(AdamState { step, m, v })
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::Data("trailing bytes after checkpoint payload".into()));
    }
    Ok(Checkpoint {
        model,
        adam,
        train: header.train,
        epoch: header.epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = PclModel::new(ModelConfig {
            widths: [2, 3, 4, 4],
            embed_dim: None,
            init_seed: 9,
            input_size: 32,
        })
        .unwrap();
        let mut adam = AdamState::new(&model.params);
        adam.step = 7;
        adam.m[0][0] = 0.25;
        adam.v[1][0] = 0.5;
        Checkpoint {
            model,
            adam: Some(adam),
            train: Some(TrainConfig::default()),
            epoch: 3,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = sample();
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.model, ck.model);
        assert_eq!(back.adam, ck.adam);
        assert_eq!(back.train, ck.train);
        assert_eq!(back.epoch, 3);
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Data(_))));
        std::fs::write(&p, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Data(_))));
    }

    #[test]
    fn hash_tracks_config() {
        let a = config_hash(&ModelConfig::default(), None);
        let mut cfg = TrainConfig::default();
        assert_ne!(a, config_hash(&ModelConfig::default(), Some(&cfg)));
        let b = config_hash(&ModelConfig::default(), Some(&cfg));
        cfg.lambda = 0.0;
        assert_ne!(b, config_hash(&ModelConfig::default(), Some(&cfg)));
        assert_eq!(a.len(), 64);
    }
}
