//! Checkpoint directory: `manifest.json` plus `params.bin` (all parameter
//! values, little-endian f64, concatenated in manifest order) and, when the
//! optimizer state is saved, `optimizer.bin` (Adam first moments followed by
//! second moments in the same order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::params::ParamStore;
use crate::binio::{read_f64s, write_f64s};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
    /// Free-form run configuration (model and training sections).
    pub config: serde_json::Value,
    pub seed: u64,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    /// Completed training epochs.
    pub epoch: usize,
    pub has_optimizer_state: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub values: Vec<f64>,
    pub moments: Option<(Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    /// Copies the saved values into `store`, which must have the same
    /// parameter names and shapes in the same order.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.manifest.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.manifest.params.len(),
                store.len()
            )));
        }
        for (entry, p) in self.manifest.params.iter().zip(store.iter()) {
            let shape = [p.value.nrows(), p.value.ncols()];
            if entry.name != p.name || entry.shape != shape {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                    entry.name, entry.shape, p.name, shape
                )));
            }
        }
        store.load_flat_values(&self.values)
    }

    /// Restores the saved optimizer moments into `adam`.
    pub fn restore_optimizer(&self, store: &ParamStore, adam: &mut Adam) -> Result<()> {
        match &self.moments {
            Some((m, v)) if adam.restore(store, self.manifest.step, m, v) => Ok(()),
            Some(_) => Err(Error::CheckpointMismatch("optimizer state size mismatch".into())),
            None => Err(Error::CheckpointMismatch("checkpoint has no optimizer state".into())),
        }
    }
}

pub fn save_checkpoint(
    dir: &Path,
    store: &ParamStore,
    adam: Option<&Adam>,
    config: serde_json::Value,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: "f64le".into(),
        params: store
            .iter()
            .map(|p| ParamEntry { name: p.name.clone(), shape: [p.value.nrows(), p.value.ncols()] })
            .collect(),
        config,
        seed,
        step: adam.map_or(0, Adam::step_count),
        epoch,
        has_optimizer_state: adam.is_some(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    write_f64s(&dir.join("params.bin"), &store.flat_values())?;
    if let Some(adam) = adam {
        let (m, v) = adam.moments();
        let mut both = m;
        both.extend(v);
        write_f64s(&dir.join("optimizer.bin"), &both)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION || manifest.dtype != "f64le" {
        return Err(Error::CheckpointMismatch(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    let n: usize = manifest.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
    let values = read_f64s(&dir.join("params.bin"), n)?;
    let moments = if manifest.has_optimizer_state {
        let mut both = read_f64s(&dir.join("optimizer.bin"), 2 * n)?;
        let v = both.split_off(n);
        Some((both, v))
    } else {
        None
    };
    Ok(Checkpoint { manifest, values, moments })
}
