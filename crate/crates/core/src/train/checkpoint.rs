//! Little-endian checkpoint format:
//!
//! ```text
//! "SSAN" | u32 version | u8 variant
//! u32 profile | u32 base_channels | u32 input_channels | u32 batch_norm | u32 n_stages
//! u32 blocks[n_stages]
//! per parameter: u16 name_len | name | u8 rank | u32 dims[rank] | f64 values
//! u64 step | u64 seed
//! ```
//!
//! The parameter count is implied by the architecture in the header.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::arch::{build_variant, check_parameters, ArchConfig, NetworkSpec, Profile, VariantId};
use crate::engine::{ParamKind, ParameterSet, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"SSAN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint config mismatch: file holds {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
}

/// Trained (or freshly initialized) network state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: VariantId,
    pub config: ArchConfig,
    pub params: ParameterSet,
    /// SGD steps taken.
    pub step: u64,
    pub seed: u64,
}

fn describe(variant: VariantId, cfg: &ArchConfig) -> String {
    format!(
        "{variant} {:?} base {} blocks {:?} input {} bn {}",
        cfg.profile, cfg.base_channels, cfg.blocks_per_stage, cfg.input_channels, cfg.batch_norm
    )
}

impl Checkpoint {
    pub fn spec(&self) -> Result<NetworkSpec, crate::arch::ArchError> {
        build_variant(self.variant, &self.config)
    }

    /// Fails unless the checkpoint was built with exactly `expected`.
    pub fn ensure_config(&self, expected: &ArchConfig) -> Result<(), CheckpointError> {
        if &self.config != expected {
            return Err(CheckpointError::ConfigMismatch {
                expected: describe(self.variant, expected),
                found: describe(self.variant, &self.config),
            });
        }
        Ok(())
    }

    /// Raw parameter values by name.
    pub fn blobs(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(name, p)| (name.to_string(), p.value.data().to_vec()))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.variant.code());
        let cfg = &self.config;
        for v in [
            cfg.profile.code(),
            cfg.base_channels as u32,
            cfg.input_channels as u32,
            u32::from(cfg.batch_norm),
            cfg.blocks_per_stage.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &b in &cfg.blocks_per_stage {
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let dims = p.value.shape().dims();
            let rank = dims.iter().rposition(|&d| d != 1).map_or(1, |i| i + 1);
            out.push(rank as u8);
            for &d in &dims[..rank] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let code = r.take(1, "variant")?[0];
        let variant = VariantId::from_code(code)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown variant code {code}")))?;
        let profile_code = r.u32("config")?;
        let profile = Profile::from_code(profile_code).ok_or_else(|| {
            CheckpointError::Malformed(format!("unknown profile code {profile_code}"))
        })?;
        let base_channels = r.u32("config")? as usize;
        let input_channels = r.u32("config")? as usize;
        let batch_norm = match r.u32("config")? {
            0 => false,
            1 => true,
            other => {
                return Err(CheckpointError::Malformed(format!(
                    "batch_norm flag {other}"
                )))
            }
        };
        let n_stages = r.u32("config")? as usize;
        if n_stages > 64 {
            return Err(CheckpointError::Malformed(format!("{n_stages} stages")));
        }
        let blocks_per_stage = (0..n_stages)
            .map(|_| r.u32("config").map(|b| b as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let config = ArchConfig {
            profile,
            base_channels,
            blocks_per_stage,
            input_channels,
            batch_norm,
        };
        let spec = build_variant(variant, &config)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let decls = spec.parameters();
        let kinds: BTreeMap<&str, ParamKind> =
            decls.iter().map(|d| (d.name.as_str(), d.kind)).collect();

        let mut params = ParameterSet::new();
        for _ in 0..decls.len() {
            let len = u16::from_le_bytes(r.take(2, "parameter name")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len, "parameter name")?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1, "parameter rank")?[0] as usize;
            if !(1..=4).contains(&rank) {
                return Err(CheckpointError::Malformed(format!("{name}: rank {rank}")));
            }
            let mut dims = [1usize; 4];
            for d in dims.iter_mut().take(rank) {
                *d = r.u32("parameter dims")? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            if shape.numel() > bytes.len() / 8 {
                return Err(CheckpointError::Truncated("parameter values"));
            }
            let raw = r.take(shape.numel() * 8, "parameter values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let value = Tensor::from_vec(shape, data);
            let inserted = match kinds.get(name.as_str()) {
                Some(ParamKind::Trainable) => params.insert(&name, value),
                Some(ParamKind::Buffer) => params.insert_buffer(&name, value),
                None => {
                    return Err(CheckpointError::Malformed(format!(
                        "parameter {name} does not belong to {variant}"
                    )))
                }
            };
            inserted.map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        check_parameters(&spec, &params).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let step = r.u64("step counter")?;
        let seed = r.u64("seed")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            variant,
            config,
            params,
            step,
            seed,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
