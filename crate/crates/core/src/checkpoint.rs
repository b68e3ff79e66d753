//! Binary checkpoint format.
//!
//! Layout: 8-byte magic `D2NNCKPT`, `u32` version, `u32` metadata length,
//! UTF-8 JSON metadata, then every layer's α array followed by every layer's β
//! array as little-endian `f64`, row-major. An optional electronic section
//! follows: `u32` header length, JSON header, then its `f64` values. All
//! integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{D2nnError, Result};
use crate::layer::{D2nnModel, LayerParams, ModulationMode, Parameterization, Spacing};
use crate::optics::GridSpec;

pub const MAGIC: &[u8; 8] = b"D2NNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub grid: GridSpec,
    pub n_layers: usize,
    pub modulation: ModulationMode,
    pub parameterization: Parameterization,
    pub spacing: Spacing,
    pub padding_factor: usize,
    pub seed: u64,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub batch_size: usize,
    pub config_hash: String,
    /// Run configuration the checkpoint was produced with, verbatim.
    pub config: Option<serde_json::Value>,
}

/// Parameters of an electronic back-end, described by a JSON header.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectronicSection {
    pub descriptor: serde_json::Value,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionHeader {
    values: usize,
    descriptor: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub layers: Vec<LayerParams>,
    pub electronic: Option<ElectronicSection>,
}

impl Checkpoint {
    /// Builds a checkpoint from a model; metadata fields other than geometry are left to the caller.
    pub fn from_model(model: &D2nnModel, meta: CheckpointMeta) -> Self {
        let mut meta = meta;
        meta.grid = model.grid;
        meta.n_layers = model.n_layers();
        meta.modulation = model.modulation;
        meta.parameterization = model.parameterization;
        meta.spacing = model.spacing;
        meta.padding_factor = model.padding_factor;
        Checkpoint {
            meta,
            layers: model.layers.clone(),
            electronic: None,
        }
    }

    pub fn model(&self) -> Result<D2nnModel> {
        let m = &self.meta;
        let model = D2nnModel {
            grid: m.grid,
            layers: self.layers.clone(),
            modulation: m.modulation,
            parameterization: m.parameterization,
            spacing: m.spacing,
            padding_factor: m.padding_factor,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.layers.len() != self.meta.n_layers {
            return Err(D2nnError::Checkpoint(format!(
                "metadata declares {} layers but {} are present",
                self.meta.n_layers,
                self.layers.len()
            )));
        }
        let len = self.meta.grid.len();
        if self.layers.iter().any(|l| l.alpha.len() != len || l.beta.len() != len) {
            return Err(D2nnError::Checkpoint("layer arrays do not match the grid".into()));
        }
        let meta = serde_json::to_vec(&self.meta).map_err(|e| D2nnError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + meta.len() + 16 * len * self.layers.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for layer in &self.layers {
            push_f64s(&mut out, &layer.alpha);
        }
        for layer in &self.layers {
            push_f64s(&mut out, &layer.beta);
        }
        if let Some(section) = &self.electronic {
            let header = SectionHeader {
                values: section.values.len(),
                descriptor: section.descriptor.clone(),
            };
            let header = serde_json::to_vec(&header).map_err(|e| D2nnError::Checkpoint(e.to_string()))?;
            out.extend_from_slice(&(header.len() as u32).to_le_bytes());
            out.extend_from_slice(&header);
            push_f64s(&mut out, &section.values);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(D2nnError::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(D2nnError::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| D2nnError::Checkpoint(format!("metadata: {e}")))?;
        meta.grid.validate()?;
        let len = meta.grid.len();
        let n = meta.n_layers;
        let alphas: Vec<Vec<f64>> = (0..n).map(|_| r.f64s(len, "alpha arrays")).collect::<Result<_>>()?;
        let betas: Vec<Vec<f64>> = (0..n).map(|_| r.f64s(len, "beta arrays")).collect::<Result<_>>()?;
        let layers = alphas
            .into_iter()
            .zip(betas)
            .map(|(alpha, beta)| LayerParams { alpha, beta })
            .collect();

        let electronic = if r.at < bytes.len() {
            let header_len = r.u32("electronic header length")? as usize;
            let header: SectionHeader = serde_json::from_slice(r.take(header_len, "electronic header")?)
                .map_err(|e| D2nnError::Checkpoint(format!("electronic header: {e}")))?;
            Some(ElectronicSection {
                values: r.f64s(header.values, "electronic values")?,
                descriptor: header.descriptor,
            })
        } else {
            None
        };
        if r.at != bytes.len() {
            return Err(D2nnError::Checkpoint(format!(
                "{} trailing bytes after the last section",
                bytes.len() - r.at
            )));
        }
        Ok(Checkpoint {
            meta,
            layers,
            electronic,
        })
    }
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            D2nnError::Checkpoint(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| D2nnError::Checkpoint(format!("{what}: length overflow")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| D2nnError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_bytes(&std::fs::read(path).map_err(|e| D2nnError::io(path, e))?)
}
