//! Checkpoints: `checkpoint.toml` plus one raw `f32` blob per tensor under `params/`.

use std::fs;
use std::path::Path;

use cvcp_numerics::{Moments, OneCycleAdam, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::scene::{f32_bytes, f32_from_bytes, parse_toml, read_blob, write_file};
use crate::error::{Error, Result};
use crate::pipeline::param_specs;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST: &str = "checkpoint.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    first_moment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    second_moment: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerEntry {
    step: usize,
    total_steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: Config,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerEntry>,
    params: Vec<ParamEntry>,
}

/// Optimizer progress restored from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub total_steps: usize,
    pub moments: Vec<Option<Moments>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(config: Config, params: ParamStore, optimizer: Option<&OneCycleAdam>) -> Self {
        let optimizer = optimizer.map(|o| OptimizerState {
            step: o.step,
            total_steps: o.schedule.total_steps,
            moments: o.moments.clone(),
        });
        Checkpoint { config, params, optimizer }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let pdir = dir.join("params");
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut entries = Vec::new();
        for (i, (name, t)) in self.params.iter().enumerate() {
            let file = format!("params/{name}.bin");
            let bytes = f32_bytes(t.data());
            write_file(&dir.join(&file), &bytes)?;
            let mut entry = ParamEntry { name: name.to_string(), shape: t.shape().to_vec(), file, bytes: bytes.len() as u64, first_moment: None, second_moment: None };
            if let Some(Some(m)) = self.optimizer.as_ref().map(|o| &o.moments[i]) {
                let (f1, f2) = (format!("params/{name}.m1.bin"), format!("params/{name}.m2.bin"));
                write_file(&dir.join(&f1), &f32_bytes(&m.first))?;
                write_file(&dir.join(&f2), &f32_bytes(&m.second))?;
                entry.first_moment = Some(f1);
                entry.second_moment = Some(f2);
            }
            entries.push(entry);
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerEntry { step: o.step, total_steps: o.total_steps }),
            params: entries,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Usage(format!("cannot serialize checkpoint: {e}")))?;
        write_file(&dir.join(MANIFEST), text.as_bytes())
    }

    /// Loads from a checkpoint directory or its manifest path.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, mpath) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST))
        } else {
            (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
        };
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = parse_toml(&text, &mpath)?;
        if m.version != CHECKPOINT_VERSION {
            return Err(Error::parse(&mpath, 1, format!("unsupported checkpoint version {}", m.version)));
        }
        m.config.validate()?;
        let mut params = ParamStore::default();
        let mut moments = Vec::new();
        for e in &m.params {
            let n: usize = e.shape.iter().product();
            let data = f32_from_bytes(&read_param_blob(&dir, &e.file, e.bytes)?);
            let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::parse(dir.join(&e.file), 0, err.to_string()))?;
            params.insert(&e.name, t)?;
            moments.push(match (&e.first_moment, &e.second_moment) {
                (Some(f1), Some(f2)) => Some(Moments {
                    first: f32_from_bytes(&read_param_blob(&dir, f1, 4 * n as u64)?),
                    second: f32_from_bytes(&read_param_blob(&dir, f2, 4 * n as u64)?),
                }),
                _ => None,
            });
        }
        check_architecture(&m.config, &params)?;
        let optimizer = m.optimizer.map(|o| OptimizerState { step: o.step, total_steps: o.total_steps, moments });
        Ok(Checkpoint { config: m.config, params, optimizer })
    }
}

fn read_param_blob(dir: &Path, file: &str, bytes: u64) -> Result<Vec<u8>> {
    let name = file.strip_prefix("params/").ok_or_else(|| Error::parse(dir.join(MANIFEST), 0, format!("parameter blob {file:?} must live under params/")))?;
    read_blob(&dir.join("params"), name, bytes)
}

/// Errors listing every name/shape disagreement between `params` and the
/// architecture `config` describes.
pub fn check_architecture(config: &Config, params: &ParamStore) -> Result<()> {
    let specs = param_specs(&config.model);
    let mut diffs = Vec::new();
    for s in &specs {
        match params.get(&s.name) {
            None => diffs.push(format!("missing {} {:?}", s.name, s.shape)),
            Some(t) if t.shape() != s.shape.as_slice() => diffs.push(format!("{} is {:?}, expected {:?}", s.name, t.shape(), s.shape)),
            _ => {}
        }
    }
    for name in params.names() {
        if !specs.iter().any(|s| &s.name == name) {
            diffs.push(format!("unexpected {name}"));
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Mismatch(diffs.join("; ")))
    }
}
