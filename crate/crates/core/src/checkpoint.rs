//! Checkpoint directories: a JSON manifest plus one binary tensor file per
//! parameter, batch-norm buffer and optimizer moment.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/params/<name>.sosd
//! <dir>/buffers/<name>.mean.sosd, <name>.var.sosd
//! <dir>/adam/<name>.m.sosd, <name>.v.sosd
//! ```
//!
//! Parameter names are hierarchical (`backbone/stem/conv/weight`) and map
//! directly to relative paths, so they are validated before use.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::RunningStats;
use crate::error::{Error, Result};
use crate::model::{build_model, Group, NetConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::tensor_io;
use crate::train::{AdamState, EmState, TrainConfig, Trainer};

pub const CHECKPOINT_FORMAT: &str = "sosd-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub shape: Vec<usize>,
    /// Adam step count of this parameter.
    pub adam_t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferEntry {
    pub name: String,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub seed: u64,
    pub em: EmState,
    pub params: Vec<ParamEntry>,
    pub buffers: Vec<BufferEntry>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.split('/').all(|part| {
            !part.is_empty()
                && part != "."
                && part != ".."
                && part.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.')
        })
}

impl CheckpointManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
        if m.format != CHECKPOINT_FORMAT || m.version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", m.format, m.version)));
        }
        for name in m.params.iter().map(|p| &p.name).chain(m.buffers.iter().map(|b| &b.name)) {
            if !valid_name(name) {
                return Err(Error::Format(format!("invalid tensor name {name:?}")));
            }
        }
        Ok(m)
    }
}

fn tensor_path(dir: &Path, kind: &str, name: &str, suffix: &str) -> PathBuf {
    dir.join(kind).join(format!("{name}{suffix}.sosd"))
}

fn vector(data: &[f64]) -> Tensor {
    Tensor::new(vec![data.len()], data.to_vec()).expect("rank-1 tensor of its own length")
}

fn read_shaped(path: &Path, shape: &[usize]) -> Result<Tensor> {
    let t = tensor_io::read(path)?;
    if t.shape() != shape {
        return Err(Error::Format(format!("{} has shape {:?}, manifest says {:?}", path.display(), t.shape(), shape)));
    }
    Ok(t)
}

/// Writes the trainer state to `dir`, replacing any previous checkpoint
/// there. The directory is assembled next to `dir` and renamed into place.
pub fn save(dir: &Path, trainer: &Trainer) -> Result<()> {
    let store = &trainer.model.store;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        net: trainer.model.config.clone(),
        train: trainer.config.clone(),
        step: trainer.step,
        seed: trainer.config.seed,
        em: trainer.em,
        params: store
            .params
            .iter()
            .zip(&trainer.adam.t)
            .map(|(p, &t)| ParamEntry {
                name: p.name.clone(),
                group: p.group,
                shape: p.tensor.shape().to_vec(),
                adam_t: t,
            })
            .collect(),
        buffers: store
            .buffers
            .iter()
            .map(|b| BufferEntry { name: b.name.clone(), channels: b.stats.mean.len() })
            .collect(),
    };

    let file_name =
        dir.file_name().ok_or_else(|| Error::Validation(format!("bad checkpoint path {}", dir.display())))?;
    let staging = dir.with_file_name(format!(".{}.partial", file_name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    for (i, p) in store.params.iter().enumerate() {
        tensor_io::write(&tensor_path(&staging, "params", &p.name, ""), &p.tensor)?;
        tensor_io::write(&tensor_path(&staging, "adam", &p.name, ".m"), &vector(&trainer.adam.m[i]))?;
        tensor_io::write(&tensor_path(&staging, "adam", &p.name, ".v"), &vector(&trainer.adam.v[i]))?;
    }
    for b in &store.buffers {
        tensor_io::write(&tensor_path(&staging, "buffers", &b.name, ".mean"), &vector(&b.stats.mean))?;
        tensor_io::write(&tensor_path(&staging, "buffers", &b.name, ".var"), &vector(&b.stats.var))?;
    }
    let path = staging.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

/// Restores a trainer from `dir`. The network is rebuilt from the stored
/// configuration and its structure must match the manifest exactly.
pub fn load(dir: &Path) -> Result<Trainer> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = CheckpointManifest::parse(&text)?;
    m.train.validate()?;
    let mut model = build_model(&m.net, &mut Rng::new(0))?;
    let store = &mut model.store;
    if store.params.len() != m.params.len() || store.buffers.len() != m.buffers.len() {
        return Err(Error::Format("checkpoint does not match the network it describes".into()));
    }
    let mut adam = AdamState::new(store);
    for (i, (p, e)) in store.params.iter_mut().zip(&m.params).enumerate() {
        if p.name != e.name || p.group != e.group || p.tensor.shape() != e.shape.as_slice() {
            return Err(Error::Format(format!("checkpoint parameter {} does not match {}", e.name, p.name)));
        }
        p.tensor = read_shaped(&tensor_path(dir, "params", &e.name, ""), &e.shape)?;
        let n = [p.tensor.len()];
        adam.m[i] = read_shaped(&tensor_path(dir, "adam", &e.name, ".m"), &n)?.into_data();
        adam.v[i] = read_shaped(&tensor_path(dir, "adam", &e.name, ".v"), &n)?.into_data();
        adam.t[i] = e.adam_t;
    }
    for (b, e) in store.buffers.iter_mut().zip(&m.buffers) {
        if b.name != e.name || b.stats.mean.len() != e.channels {
            return Err(Error::Format(format!("checkpoint buffer {} does not match {}", e.name, b.name)));
        }
        let n = [e.channels];
        b.stats = RunningStats {
            mean: read_shaped(&tensor_path(dir, "buffers", &e.name, ".mean"), &n)?.into_data(),
            var: read_shaped(&tensor_path(dir, "buffers", &e.name, ".var"), &n)?.into_data(),
        };
    }
    let mut train = m.train;
    train.seed = m.seed;
    Ok(Trainer { model, adam, em: m.em, step: m.step, config: train })
}

/// SHA-256 over the manifest and every tensor file, in manifest order.
pub fn fingerprint(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = CheckpointManifest::parse(&text)?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let mut files = Vec::new();
    for p in &m.params {
        files.push(tensor_path(dir, "params", &p.name, ""));
        files.push(tensor_path(dir, "adam", &p.name, ".m"));
        files.push(tensor_path(dir, "adam", &p.name, ".v"));
    }
    for b in &m.buffers {
        files.push(tensor_path(dir, "buffers", &b.name, ".mean"));
        files.push(tensor_path(dir, "buffers", &b.name, ".var"));
    }
    for f in files {
        h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(format!("{:x}", h.finalize()))
}
