//! Binary checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "NNCKPT1\0"
//! tensor count
//! per tensor: name length, UTF-8 name, rank, dims..., f32 data
//! ```
//!
//! The JSON header (kind, config, epoch, optimizer settings) travels as the
//! first tensor, `header.json`: rank 1, one float per UTF-8 byte.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detect::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::numeric::{seeded, RmsProp, RmsPropConfig, Tensor};
use crate::recog::{Recognizer, RecognizerConfig};

const MAGIC: &[u8; 8] = b"NNCKPT1\0";
const HEADER_TENSOR: &str = "header.json";
const OPT_PREFIX: &str = "opt.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `Null` when the file carries no `header.json` tensor.
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn u32_of(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| fail(format!("{n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| fail(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| fail(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        let header = serde_json::to_string(&self.header).map_err(|e| fail(e.to_string()))?;
        let header = Tensor::new(vec![header.len()], header.bytes().map(f32::from).collect())?;
        out.extend(u32_of(self.tensors.len() + 1)?);
        for (name, t) in
            std::iter::once((HEADER_TENSOR, &header)).chain(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))
        {
            out.extend(u32_of(name.len())?);
            out.extend(name.as_bytes());
            out.extend(u32_of(t.rank())?);
            for &d in t.shape() {
                out.extend(u32_of(d)?);
            }
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(fail("not a checkpoint (bad magic)"));
        }
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?.to_string();
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| fail(format!("{name}: shape overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| fail("size overflow"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut ckpt = Self {
            header: serde_json::Value::Null,
            tensors,
        };
        if let Some(t) = ckpt.take_tensor(HEADER_TENSOR) {
            let bytes: Vec<u8> = t
                .data()
                .iter()
                .map(|&v| (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8))
                .collect::<Option<_>>()
                .ok_or_else(|| fail("header: not a byte tensor"))?;
            ckpt.header = serde_json::from_slice(&bytes).map_err(|e| fail(format!("header: {e}")))?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    fn take_tensor(&mut self, name: &str) -> Option<Tensor<f32>> {
        let i = self.tensors.iter().position(|(n, _)| n == name)?;
        Some(self.tensors.remove(i).1)
    }
}

/// Networks that can be rebuilt from their configuration.
pub trait Model: Sized {
    type Config: Serialize + DeserializeOwned;
    const KIND: &'static str;

    fn config(&self) -> &Self::Config;
    fn build(config: Self::Config) -> Result<Self>;
    fn named_params(&self) -> Vec<(String, &Tensor<f32>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>>;
}

impl Model for Detector<f32> {
    type Config = DetectorConfig;
    const KIND: &'static str = "detector";

    fn config(&self) -> &DetectorConfig {
        &self.config
    }

    fn build(config: DetectorConfig) -> Result<Self> {
        Detector::new(config, &mut seeded(0))
    }

    fn named_params(&self) -> Vec<(String, &Tensor<f32>)> {
        self.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        Detector::params_mut(self)
    }
}

impl Model for Recognizer<f32> {
    type Config = RecognizerConfig;
    const KIND: &'static str = "recognizer";

    fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    fn build(config: RecognizerConfig) -> Result<Self> {
        Recognizer::new(config, &mut seeded(0))
    }

    fn named_params(&self) -> Vec<(String, &Tensor<f32>)> {
        self.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        Recognizer::params_mut(self)
    }
}

#[derive(Serialize, Deserialize)]
struct Header<C> {
    kind: String,
    config: C,
    epoch: usize,
    rmsprop: [f64; 3],
    #[serde(default)]
    extra: serde_json::Value,
}

/// Model, optimizer and progress: everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState<M> {
    pub model: M,
    pub optimizer: RmsProp<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Free-form metadata stored alongside (crop mode, margin, ...).
    pub extra: serde_json::Value,
}

impl<M: Model> TrainingState<M> {
    pub fn new(model: M, optimizer: RmsPropConfig) -> Self {
        let optimizer = RmsProp::new(optimizer, model.named_params().into_iter().map(|p| p.1));
        Self {
            model,
            optimizer,
            epoch: 0,
            extra: serde_json::Value::Null,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = self.optimizer.config;
        let header = Header {
            kind: M::KIND.to_string(),
            config: self.model.config(),
            epoch: self.epoch,
            rmsprop: [c.learning_rate, c.decay, c.epsilon],
            extra: self.extra.clone(),
        };
        let params = self.model.named_params();
        let mut tensors: Vec<(String, Tensor<f32>)> = params.iter().map(|(n, t)| (n.clone(), (*t).clone())).collect();
        for ((n, _), acc) in params.iter().zip(&self.optimizer.accumulators) {
            tensors.push((format!("{OPT_PREFIX}{n}"), acc.clone()));
        }
        Ok(Checkpoint {
            header: serde_json::to_value(header).map_err(|e| fail(e.to_string()))?,
            tensors,
        })
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        let header: Header<M::Config> =
            serde_json::from_value(ckpt.header.clone()).map_err(|e| fail(format!("header: {e}")))?;
        if header.kind != M::KIND {
            return Err(fail(format!(
                "expected a {} checkpoint, found {}",
                M::KIND,
                header.kind
            )));
        }
        let mut model = M::build(header.config)?;
        let names: Vec<String> = model.named_params().into_iter().map(|p| p.0).collect();
        let mut accumulators = Vec::with_capacity(names.len());
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t = ckpt
                .take_tensor(name)
                .ok_or_else(|| fail(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(fail(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
            let acc = ckpt
                .take_tensor(&format!("{OPT_PREFIX}{name}"))
                .unwrap_or_else(|| Tensor::zeros(slot.shape()));
            if acc.shape() != slot.shape() {
                return Err(fail(format!("optimizer state for {name} has the wrong shape")));
            }
            accumulators.push(acc);
        }
        if let Some((name, _)) = ckpt.tensors.first() {
            return Err(fail(format!("unexpected tensor {name}")));
        }
        let [learning_rate, decay, epsilon] = header.rmsprop;
        Ok(Self {
            model,
            optimizer: RmsProp {
                config: RmsPropConfig {
                    learning_rate,
                    decay,
                    epsilon,
                },
                accumulators,
            },
            epoch: header.epoch,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn noisy<M: Model>(mut state: TrainingState<M>) -> TrainingState<M> {
        let mut rng = seeded(8);
        for acc in &mut state.optimizer.accumulators {
            acc.data_mut().iter_mut().for_each(|v| *v = rng.random());
        }
        state.epoch = 3;
        state.extra = serde_json::json!({"crop_mode": "reference"});
        state
    }

    #[test]
    fn detector_round_trip_is_bit_exact() {
        let det = Detector::<f32>::new(DetectorConfig::miniature(), &mut seeded(1)).unwrap();
        let state = noisy(TrainingState::new(det, RmsPropConfig::default()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        state.save(&path).unwrap();
        let back = TrainingState::<Detector<f32>>::load(&path).unwrap();
        assert_eq!(back, state);
        let bits = |s: &TrainingState<Detector<f32>>| -> Vec<u32> {
            s.model
                .params()
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&back), bits(&state));
        assert_eq!(
            back.to_checkpoint().unwrap().to_bytes().unwrap(),
            std::fs::read(&path).unwrap()
        );
    }

    #[test]
    fn recognizer_round_trip() {
        let rec = Recognizer::<f32>::new(RecognizerConfig::default(), &mut seeded(2)).unwrap();
        let state = noisy(TrainingState::new(rec, RmsPropConfig::default()));
        let bytes = state.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = TrainingState::<Recognizer<f32>>::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn byte_layout() {
        let ckpt = Checkpoint {
            header: serde_json::json!({"k": 1}),
            tensors: vec![("w".into(), Tensor::new(vec![2], vec![1.5f32, -2.0]).unwrap())],
        };
        let bytes = ckpt.to_bytes().unwrap();
        let mut want = b"NNCKPT1\0".to_vec();
        want.extend(2u32.to_le_bytes());
        want.extend(11u32.to_le_bytes());
        want.extend(b"header.json");
        want.extend(1u32.to_le_bytes());
        want.extend(7u32.to_le_bytes());
        for b in br#"{"k":1}"# {
            want.extend(f32::from(*b).to_le_bytes());
        }
        want.extend(1u32.to_le_bytes());
        want.extend(b"w");
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1.5f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);

        // A plain tensor file without a header still parses.
        let mut plain = b"NNCKPT1\0".to_vec();
        plain.extend(0u32.to_le_bytes());
        assert_eq!(Checkpoint::from_bytes(&plain).unwrap().header, serde_json::Value::Null);
    }

    #[test]
    fn wrong_kind_and_corruption_are_rejected() {
        let rec = Recognizer::<f32>::new(RecognizerConfig::default(), &mut seeded(2)).unwrap();
        let ckpt = TrainingState::new(rec, RmsPropConfig::default())
            .to_checkpoint()
            .unwrap();
        assert!(TrainingState::<Detector<f32>>::from_checkpoint(ckpt.clone()).is_err());
        let bytes = ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut missing = ckpt;
        missing.tensors.remove(0);
        assert!(TrainingState::<Recognizer<f32>>::from_checkpoint(missing).is_err());
    }
}
