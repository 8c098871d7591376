//! Binary checkpoints.
//!
//! Layout: the magic `TVNETCKP`, a little-endian `u32` format version, a
//! `u64` header length, a JSON header (config echo, counters, RNG state,
//! tensor names and shapes) and then every tensor as little-endian `f64`:
//! parameters first, then optimizer buffers. Values survive bit for bit.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Optimizer, OptimizerKind, TrainConfig};
use crate::config::Config;
use crate::error::{Result, TvnetError};
use crate::model::{architecture_summary, ParamStore, TvNet};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TVNETCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations.
    pub iteration: usize,
    pub params: ParamStore,
    pub optimizer: Optimizer,
    /// Data-order and augmentation stream, positioned after `iteration`.
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    epoch: usize,
    iteration: usize,
    rng_seed: [u8; 32],
    rng_stream: u64,
    /// `u128` word position, as a decimal string.
    rng_word_pos: String,
    optimizer: OptimizerKind,
    optimizer_step: u64,
    params: Vec<TensorInfo>,
    first: Vec<[usize; 4]>,
    second: Vec<[usize; 4]>,
}

fn corrupt(msg: impl Into<String>) -> TvnetError {
    TvnetError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("checkpoint is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn tensor(&mut self, shape: [usize; 4]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| corrupt("tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.to_config().to_string(),
            epoch: self.epoch,
            iteration: self.iteration,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            optimizer: self.optimizer.kind,
            optimizer_step: self.optimizer.step,
            params: self
                .params
                .iter()
                .map(|p| TensorInfo {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                })
                .collect(),
            first: self.optimizer.first.iter().map(Tensor::shape).collect(),
            second: self.optimizer.second.iter().map(Tensor::shape).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = self
            .params
            .iter()
            .map(|p| &p.value)
            .chain(&self.optimizer.first)
            .chain(&self.optimizer.second);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| corrupt(format!("bad checkpoint header: {e}")))?;
        let config = TrainConfig::from_config(&Config::parse(&header.config)?)?;
        let mut params = ParamStore::new();
        for info in &header.params {
            params.add(info.name.clone(), r.tensor(info.shape)?);
        }
        let first = header
            .first
            .iter()
            .map(|&s| r.tensor(s))
            .collect::<Result<Vec<_>>>()?;
        let second = header
            .second
            .iter()
            .map(|&s| r.tensor(s))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after checkpoint payload"));
        }
        let mut optimizer = Optimizer::new(&config);
        optimizer.kind = header.optimizer;
        optimizer.step = header.optimizer_step;
        optimizer.first = first;
        optimizer.second = second;
        let mut rng = ChaCha8Rng::from_seed(header.rng_seed);
        rng.set_stream(header.rng_stream);
        rng.set_word_pos(
            header
                .rng_word_pos
                .parse()
                .map_err(|_| corrupt("bad RNG position"))?,
        );
        Ok(Checkpoint {
            config,
            epoch: header.epoch,
            iteration: header.iteration,
            params,
            optimizer,
            rng,
        })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let fail = |e: std::io::Error| {
            TvnetError::Checkpoint(format!("cannot write {}: {e}", path.display()))
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(fail)?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(fail)?;
        f.write_all(&self.to_bytes()).map_err(fail)?;
        f.sync_all().map_err(fail)?;
        std::fs::rename(&tmp, path).map_err(fail)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TvnetError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            TvnetError::Checkpoint(m) => TvnetError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuilds the network and loads the stored weights into it.
    pub fn model(&self) -> Result<(TvNet, ParamStore)> {
        let (net, mut params) = TvNet::new(&self.config.model_config(), self.config.seed)?;
        params.load_from(&self.params)?;
        Ok((net, params))
    }

    pub fn summary(&self) -> String {
        format!(
            "epoch: {}\niteration: {}\noptimizer: {} (step {})\n{}",
            self.epoch,
            self.iteration,
            self.optimizer.kind,
            self.optimizer.step,
            architecture_summary(&self.config.model_config(), &self.params)
        )
    }
}
