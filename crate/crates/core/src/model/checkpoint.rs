//! Checkpoint layout: the 8-byte magic `AOACKPT\0`, a little-endian `u32`
//! format version, a little-endian `u64` header length, a JSON header, then
//! every tensor as little-endian `f64` in header order (parameters, then
//! Adam first moments, then Adam second moments).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::corpus::Vocabulary;

use super::{init_params, ModelConfig, ModelError, ModelParams, Reader};

const MAGIC: &[u8; 8] = b"AOACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct AdamInfo {
    step: u64,
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    epoch: usize,
    tensors: Vec<TensorInfo>,
    adam: Option<AdamInfo>,
}

fn format_err(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

impl Checkpoint {
    pub fn reader(&self) -> Reader {
        Reader { config: self.config.clone(), vocab: self.vocab.clone(), params: self.params.clone() }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        let tensors = self.params.tensors();
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            epoch: self.epoch,
            tensors: tensors.iter().map(|p| TensorInfo { name: p.name.clone(), shape: p.value.shape() }).collect(),
            adam: self.adam.as_ref().map(|a| AdamInfo { step: a.step, config: a.config }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut blobs: Vec<&Tensor> = tensors.iter().map(|p| &p.value).collect();
        if let Some(a) = &self.adam {
            blobs.extend(&a.first_moment);
            blobs.extend(&a.second_moment);
        }
        let mut buf = Vec::new();
        for t in blobs {
            buf.clear();
            buf.extend(t.data().iter().flat_map(|x| x.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a reader checkpoint"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| format_err(e.to_string()))?;
        let mut params = init_params(&ModelConfig { embed_dim: 1, hidden_dim: 1, ..header.config.clone() }, 1);
        let slots = params.tensors().len();
        if header.tensors.len() != slots {
            return Err(format_err(format!("expected {slots} tensors, header lists {}", header.tensors.len())));
        }
        let mut read_tensor = |shape: [usize; 2]| -> Result<Tensor, ModelError> {
            let mut bytes = vec![0u8; shape[0] * shape[1] * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(Tensor::new(shape[0], shape[1], data)?)
        };
        for (p, info) in params.tensors_mut().into_iter().zip(&header.tensors) {
            if p.name != info.name {
                return Err(format_err(format!("tensor {} where {} was expected", info.name, p.name)));
            }
            p.value = read_tensor(info.shape)?;
            p.grad = Tensor::zeros(info.shape[0], info.shape[1]);
        }
        let adam = match header.adam {
            None => None,
            Some(info) => {
                let shapes: Vec<[usize; 2]> = header.tensors.iter().map(|t| t.shape).collect();
                let first_moment = shapes.iter().map(|s| read_tensor(*s)).collect::<Result<_, _>>()?;
                let second_moment = shapes.iter().map(|s| read_tensor(*s)).collect::<Result<_, _>>()?;
                Some(AdamState { config: info.config, step: info.step, first_moment, second_moment })
            }
        };
        let ckpt = Checkpoint { config: header.config, vocab: header.vocab, params, adam, epoch: header.epoch };
        ckpt.check()?;
        Ok(ckpt)
    }

    fn check(&self) -> Result<(), ModelError> {
        let (v, e, d) = (self.vocab.len(), self.config.embed_dim, self.config.hidden_dim);
        if self.params.embedding.value.shape() != [v, e] {
            return Err(format_err(format!("embedding is {:?}, expected [{v}, {e}]", self.params.embedding.value.shape())));
        }
        for p in self.params.tensors().into_iter().skip(1) {
            let expected = match p.name.rsplit('.').next().unwrap_or("").as_bytes()[0] {
                b'w' => [e, d],
                b'u' => [d, d],
                _ => [1, d],
            };
            if p.value.shape() != expected {
                return Err(format_err(format!("{} is {:?}, expected {expected:?}", p.name, p.value.shape())));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn checkpoint(with_adam: bool) -> Checkpoint {
        let config = ModelConfig { embed_dim: 3, hidden_dim: 2, seed: 5, ..ModelConfig::default() };
        let vocab = Vocabulary::from_words(vec!["a".into(), "b".into()]);
        let params = init_params(&config, vocab.len());
        let adam = with_adam.then(|| {
            let mut a = AdamState::new(&params.tensors(), config.adam());
            a.step = 4;
            a.first_moment[0].set(0, 0, 0.25);
            a
        });
        Checkpoint { config, vocab, params, adam, epoch: 2 }
    }

    #[test]
    fn round_trip() {
        for with_adam in [false, true] {
            let c = checkpoint(with_adam);
            let back = Checkpoint::read_from(c.to_bytes().unwrap().as_slice()).unwrap();
            assert_eq!(c, back);
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::read_from(&b"nonsense-bytes-here"[..]).is_err());
        let bytes = checkpoint(true).to_bytes().unwrap();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(Checkpoint::read_from(wrong_version.as_slice()), Err(ModelError::Format(_))));
    }
}
