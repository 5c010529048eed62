//! Checkpoint files.
//!
//! ```text
//! magic        4 bytes "SAEC"
//! version      u16     1
//! header_len   u32
//! header       JSON: architecture, training config, parameter layout
//! parameters   f32 little-endian, declaration order
//! bn stats     f32 little-endian, per batch norm: running mean then running variance
//! optimizer    optional, f64 little-endian: first moments then second moments
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::model::SaeModel;
use super::optim::AdamState;
use super::train::TrainConfig;
use super::SaeError;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: [u8; 4] = *b"SAEC";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SaeModel,
    pub optimizer: Option<AdamState>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchSpec,
    seed: u64,
    #[serde(default)]
    train_config: Option<TrainConfig>,
    param_lengths: Vec<usize>,
    bn_channels: Vec<usize>,
    #[serde(default)]
    optimizer_step: Option<u64>,
}

pub fn checkpoint_bytes(model: &SaeModel, optimizer: Option<&AdamState>, train_config: Option<&TrainConfig>) -> Vec<u8> {
    let header = Header {
        arch: model.arch.clone(),
        seed: model.seed,
        train_config: train_config.copied(),
        param_lengths: model.params().iter().map(|p| p.len()).collect(),
        bn_channels: model.batchnorms().map(|bn| bn.channels).collect(),
        optimizer_step: optimizer.map(|o| o.step),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(10 + json.len() + 4 * model.param_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for &v in p {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for bn in model.batchnorms() {
        for &v in bn.running_mean.iter().chain(&bn.running_var) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(opt) = optimizer {
        for &v in opt.m.iter().chain(&opt.v).flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    model: &SaeModel,
    optimizer: Option<&AdamState>,
    train_config: Option<&TrainConfig>,
    path: &Path,
) -> Result<(), SaeError> {
    fs::write(path, checkpoint_bytes(model, optimizer, train_config)).map_err(|source| SaeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SaeError> {
        let end = self.pos.saturating_add(n);
        if end > self.buf.len() {
            return Err(SaeError::TruncatedFile {
                needed: end,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s(&mut self, out: &mut [f64]) -> Result<(), SaeError> {
        let bytes = self.take(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        Ok(())
    }

    fn f64s(&mut self, out: &mut [f64]) -> Result<(), SaeError> {
        let bytes = self.take(out.len() * 8)?;
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn read_checkpoint_bytes(buf: &[u8]) -> Result<Checkpoint, SaeError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(SaeError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(SaeError::VersionMismatch(version));
    }
    let header_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;

    let mut model = SaeModel::zeroed(&header.arch)?;
    model.seed = header.seed;
    let lengths: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if lengths != header.param_lengths {
        return Err(SaeError::ArchMismatch(
            "parameter layout in header does not match the architecture".into(),
        ));
    }
    let channels: Vec<usize> = model.batchnorms().map(|bn| bn.channels).collect();
    if channels != header.bn_channels {
        return Err(SaeError::ArchMismatch(
            "batch-norm layout in header does not match the architecture".into(),
        ));
    }
    for p in model.params_mut() {
        r.f32s(p)?;
    }
    for bn in model.batchnorms_mut() {
        r.f32s(&mut bn.running_mean)?;
        r.f32s(&mut bn.running_var)?;
    }
    let optimizer = match header.optimizer_step {
        Some(step) => {
            let mut state = AdamState::new(&model);
            state.step = step;
            for m in state.m.iter_mut() {
                r.f64s(m)?;
            }
            for v in state.v.iter_mut() {
                r.f64s(v)?;
            }
            Some(state)
        }
        None => None,
    };
    if r.pos != buf.len() {
        return Err(SaeError::ArchMismatch(format!(
            "{} unexpected trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        train_config: header.train_config,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, SaeError> {
    let buf = fs::read(path).map_err(|source| SaeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint_bytes(&buf)
}
