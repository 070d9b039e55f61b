//! Versioned binary checkpoint format.
//!
//! Layout: magic `MSNN`, format version, a JSON header (model config,
//! optimizer scalars, RNG position, section sizes), then named tensor
//! records — parameters, Adam first/second moments, class centers — each as
//! `name, ndim, dims, f64 little-endian data`. Serialization is fully
//! deterministic (sorted tensor names, fixed header field order), so
//! save → load → save reproduces the file byte for byte.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MalsiamError, Result};
use crate::model::adam::Adam;
use crate::model::losses::ClassCenters;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MSNN";
const VERSION: u32 = 1;

/// Complete training state: everything needed to resume a run and produce
/// the same trajectory as an uninterrupted one.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub centers: ClassCenters,
    pub rng_seed: Vec<u8>,
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub epochs_done: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    lr_main: f64,
    lr_meta: f64,
    adam_t: u64,
    centers_alpha: f64,
    rng_seed: Vec<u8>,
    rng_stream: u64,
    rng_word_pos_lo: u64,
    rng_word_pos_hi: u64,
    epochs_done: u64,
    n_params: u32,
    n_adam_m: u32,
    n_adam_v: u32,
}

fn write_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    let name_bytes = name.as_bytes();
    buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(name_bytes);
    buf.push(t.shape.len() as u8);
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(MalsiamError::Data("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| MalsiamError::Data("checkpoint tensor name is not UTF-8".into()))?;
        let ndim = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor { data, shape }))
    }
}

impl Checkpoint {
    /// Capture a sampler RNG's exact position so a resumed run continues
    /// the identical random sequence.
    pub fn capture_rng(&mut self, rng: &ChaCha8Rng) {
        self.rng_seed = rng.get_seed().to_vec();
        self.rng_stream = rng.get_stream();
        self.rng_word_pos = rng.get_word_pos();
    }

    /// Reconstruct the sampler RNG at its saved position.
    pub fn restore_rng(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .rng_seed
            .as_slice()
            .try_into()
            .map_err(|_| MalsiamError::Data("checkpoint RNG seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        Ok(rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.params.config.clone(),
            lr_main: self.optimizer.lr_main,
            lr_meta: self.optimizer.lr_meta,
            adam_t: self.optimizer.t,
            centers_alpha: self.centers.alpha,
            rng_seed: self.rng_seed.clone(),
            rng_stream: self.rng_stream,
            rng_word_pos_lo: self.rng_word_pos as u64,
            rng_word_pos_hi: (self.rng_word_pos >> 64) as u64,
            epochs_done: self.epochs_done,
            n_params: self.params.tensors.len() as u32,
            n_adam_m: self.optimizer.first_moment.len() as u32,
            n_adam_v: self.optimizer.second_moment.len() as u32,
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for (name, t) in &self.params.tensors {
            write_tensor(&mut buf, name, t);
        }
        for (name, t) in &self.optimizer.first_moment {
            write_tensor(&mut buf, name, t);
        }
        for (name, t) in &self.optimizer.second_moment {
            write_tensor(&mut buf, name, t);
        }
        write_tensor(&mut buf, "centers", &self.centers.centers);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(MalsiamError::Data(
                "not a model checkpoint (bad magic)".into(),
            ));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(MalsiamError::Data(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len = cur.u32()? as usize;
        let header: Header = serde_json::from_slice(cur.take(header_len)?)?;
        header.config.validate()?;

        let mut read_section = |n: u32| -> Result<std::collections::BTreeMap<String, Tensor>> {
            let mut map = std::collections::BTreeMap::new();
            for _ in 0..n {
                let (name, t) = cur.tensor()?;
                map.insert(name, t);
            }
            Ok(map)
        };
        let tensors = read_section(header.n_params)?;
        let first_moment = read_section(header.n_adam_m)?;
        let second_moment = read_section(header.n_adam_v)?;
        let (_, centers_tensor) = cur.tensor()?;
        if cur.pos != bytes.len() {
            return Err(MalsiamError::Data(
                "trailing bytes after checkpoint payload".into(),
            ));
        }
        if centers_tensor.shape.len() != 2 {
            return Err(MalsiamError::Data("centers tensor must be 2-D".into()));
        }

        Ok(Checkpoint {
            params: ModelParams {
                config: header.config,
                tensors,
            },
            optimizer: Adam {
                lr_main: header.lr_main,
                lr_meta: header.lr_meta,
                t: header.adam_t,
                first_moment,
                second_moment,
            },
            centers: ClassCenters {
                centers: centers_tensor,
                alpha: header.centers_alpha,
            },
            rng_seed: header.rng_seed,
            rng_stream: header.rng_stream,
            rng_word_pos: (header.rng_word_pos_lo as u128)
                | ((header.rng_word_pos_hi as u128) << 64),
            epochs_done: header.epochs_done,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
