//! Versioned checkpoint archive.
//!
//! Layout: the 8-byte magic `AMIRCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then
//! every tensor as little-endian `f32` in header order. Header keys:
//! `format_version`, `config`, `config_hash`, `stage`, `epoch`,
//! `built_levels`, `assignments` (sample id → tree path), `optimizer`
//! (hyperparameters and step count) and `tensors` (key, shape, offset and
//! length in elements). Tensor keys are `drn/<param>`, `rn/<param>` and
//! `opt/<group>/<param>/{m,v}`.

use std::io::Write;
use std::path::{Path, PathBuf};

use amirnet_core::autonn::{NnError, ParamStore, Tensor};
use amirnet_core::hierarchy::TreeAssignment;
use amirnet_core::optim::{AdamW, AdamWConfig, Moments};
use amirnet_core::{Drn, Restorer};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;

pub const MAGIC: &[u8; 8] = b"AMIRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {0}")]
    Missing(PathBuf),
    #[error("checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} is not a checkpoint (bad magic)")]
    BadMagic(PathBuf),
    #[error("checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("config hash mismatch: checkpoint {stored}, config {given}; refusing to resume with a different model definition")]
    ConfigMismatch { stored: String, given: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    key: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    cfg: AdamWConfig,
    step: u64,
    group_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    config_hash: String,
    stage: u8,
    epoch: usize,
    built_levels: usize,
    assignments: Vec<(String, TreeAssignment)>,
    optimizer: Option<OptimizerMeta>,
    tensors: Vec<TensorEntry>,
}

/// Full training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// 1 or 2.
    pub stage: u8,
    /// Epochs completed in `stage`.
    pub epoch: usize,
    pub built_levels: usize,
    pub assignments: Vec<(String, TreeAssignment)>,
    pub drn: Drn<f32>,
    pub rn: Restorer<f32>,
    pub optimizer: Option<AdamW>,
}

fn push_tensor(entries: &mut Vec<TensorEntry>, blob: &mut Vec<f32>, key: String, shape: &[usize], data: &[f32]) {
    entries.push(TensorEntry {
        key,
        shape: shape.to_vec(),
        offset: blob.len() as u64,
        len: data.len() as u64,
    });
    blob.extend_from_slice(data);
}

fn restore_store(
    store: &mut ParamStore<f32>,
    prefix: &str,
    lookup: &dyn Fn(&str) -> Option<(Vec<usize>, Vec<f32>)>,
) -> Result<(), NnError> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let key = format!("{prefix}/{}", store.name(id));
        let (shape, data) = lookup(&key).ok_or_else(|| NnError::UnknownParam(key.clone()))?;
        store.set(id, Tensor::from_vec(&shape, data)?)?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        self.config.model_hash()
    }

    /// Refuses a config whose model definition differs from the stored one.
    pub fn check_compatible(&self, cfg: &TrainConfig) -> Result<(), CheckpointError> {
        let (stored, given) = (self.config_hash(), cfg.model_hash());
        if stored != given {
            return Err(CheckpointError::ConfigMismatch { stored, given });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        for (prefix, store) in [("drn", &self.drn.params), ("rn", &self.rn.params)] {
            for (_, p) in store.iter() {
                push_tensor(&mut entries, &mut blob, format!("{prefix}/{}", p.name), p.value.shape(), p.value.data());
            }
        }
        let optimizer = self.optimizer.as_ref().map(|opt| {
            for (g, group) in opt.groups.iter().enumerate() {
                for (i, m) in group.iter().enumerate() {
                    push_tensor(&mut entries, &mut blob, format!("opt/{g}/{i}/m"), &[m.m.len()], &m.m);
                    push_tensor(&mut entries, &mut blob, format!("opt/{g}/{i}/v"), &[m.v.len()], &m.v);
                }
            }
            OptimizerMeta {
                cfg: opt.cfg,
                step: opt.step,
                group_sizes: opt.groups.iter().map(Vec::len).collect(),
            }
        });
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            config_hash: self.config_hash(),
            stage: self.stage,
            epoch: self.epoch,
            built_levels: self.built_levels,
            assignments: self.assignments.clone(),
            optimizer,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + blob.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let corrupt = |reason: String| CheckpointError::Corrupt { path: path.to_path_buf(), reason };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic(path.to_path_buf()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| corrupt("truncated".into()))?;
        if body.len() < hlen {
            return Err(corrupt("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
        let data = &body[hlen..];
        if data.len() % 4 != 0 {
            return Err(corrupt("tensor data is not a whole number of f32 values".into()));
        }
        let floats: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut table = std::collections::HashMap::new();
        for e in &header.tensors {
            let (start, len) = (e.offset as usize, e.len as usize);
            let slice = floats.get(start..start + len).ok_or_else(|| corrupt(format!("tensor {} out of bounds", e.key)))?;
            if e.shape.iter().product::<usize>() != len {
                return Err(corrupt(format!("tensor {} shape/length mismatch", e.key)));
            }
            table.insert(e.key.clone(), (e.shape.clone(), slice.to_vec()));
        }
        let lookup = |k: &str| table.get(k).cloned();

        let config = header.config;
        if config.model_hash() != header.config_hash {
            return Err(CheckpointError::ConfigMismatch { stored: header.config_hash, given: config.model_hash() });
        }
        let mut drn = Drn::new(config.drn_config(), config.seed)?;
        let mut rn = Restorer::new(config.rn_config(), config.seed)?;
        restore_store(&mut drn.params, "drn", &lookup)?;
        restore_store(&mut rn.params, "rn", &lookup)?;
        let param_count = drn.params.len() + rn.params.len();
        let optimizer = match header.optimizer {
            None => None,
            Some(meta) => {
                let mut groups = Vec::new();
                for (g, &n) in meta.group_sizes.iter().enumerate() {
                    let mut group = Vec::with_capacity(n);
                    for i in 0..n {
                        let get = |s: &str| {
                            lookup(&format!("opt/{g}/{i}/{s}"))
                                .map(|(_, d)| d)
                                .ok_or_else(|| corrupt(format!("missing optimizer state {g}/{i}")))
                        };
                        group.push(Moments { m: get("m")?, v: get("v")? });
                    }
                    groups.push(group);
                }
                Some(AdamW { cfg: meta.cfg, step: meta.step, groups })
            }
        };
        let expected = param_count + optimizer.as_ref().map_or(0, |o| o.groups.iter().map(|g| 2 * g.len()).sum());
        if header.tensors.len() != expected {
            return Err(corrupt(format!("{} tensors stored, {expected} expected", header.tensors.len())));
        }
        Ok(Self {
            config,
            stage: header.stage,
            epoch: header.epoch,
            built_levels: header.built_levels,
            assignments: header.assignments,
            drn,
            rn,
            optimizer,
        })
    }

    /// Writes to a temporary file beside `path`, then renames over it.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
        tmp.write_all(&self.to_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CheckpointError::Missing(path.to_path_buf()),
            _ => CheckpointError::Io { path: path.to_path_buf(), source: e },
        })?;
        Self::from_bytes(&bytes, path)
    }
}
