//! Checkpoint directory: `manifest.json` plus one MVST file per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::mvst;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub group: ParamGroup,
    pub trainable: bool,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    /// Epoch the weights were taken from, when written by training.
    #[serde(default)]
    pub epoch: Option<usize>,
}

pub fn save(model: &Model, dir: &Path, epoch: Option<usize>) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut entries = Vec::with_capacity(model.params.len());
    for p in model.params.params() {
        let file = format!("params/{}.mvst", p.name);
        mvst::write_tensor(&dir.join(&file), &p.value)?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            file,
            group: p.group,
            trainable: p.trainable,
            shape: p.value.shape().to_vec(),
        });
    }
    let manifest = CheckpointManifest {
        config: model.config.clone(),
        params: entries,
        epoch,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load(dir: &Path) -> Result<Model> {
    let manifest = read_manifest(dir)?;
    manifest.config.validate()?;
    let mut params = ParamStore::new();
    for e in &manifest.params {
        let path = dir.join(&e.file);
        let t = mvst::read_tensor(&path)?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Format {
                path,
                detail: format!("shape {:?} does not match manifest {:?}", t.shape(), e.shape),
            });
        }
        let i = params.insert(e.name.clone(), t, e.group)?;
        params.params_mut()[i].trainable = e.trainable;
    }
    // Structural check against a freshly assembled model of the same config.
    let reference = Model::new(manifest.config.clone(), 0)?;
    for p in reference.params.params() {
        let got = params.get(&p.name)?;
        if got.shape() != p.value.shape() {
            return Err(Error::Format {
                path: dir.join(MANIFEST),
                detail: format!("parameter {} has shape {:?}, expected {:?}", p.name, got.shape(), p.value.shape()),
            });
        }
    }
    if reference.params.len() != params.len() {
        return Err(Error::Format {
            path: dir.join(MANIFEST),
            detail: format!("{} parameters, expected {}", params.len(), reference.params.len()),
        });
    }
    Ok(Model {
        config: manifest.config,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::new(ModelConfig::default(), 3).unwrap();
        m.params.freeze_backbone();
        save(&m, dir.path(), Some(2)).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(read_manifest(dir.path()).unwrap().epoch, Some(2));
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::new(ModelConfig::default(), 3).unwrap();
        save(&m, dir.path(), None).unwrap();
        fs::remove_file(dir.path().join("params/pos.mvst")).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
