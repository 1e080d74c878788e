//! Checkpoint directories: `model.toml`, `manifest.txt` listing parameters
//! in order, and one `params/<name>.tpt` file per parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor, write_tensor, DType};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamSet, TpMvcc};

const FORMAT: &str = "tpmvcc-checkpoint-1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    param: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(dir: &Path, model: &TpMvcc) -> Result<()> {
    let mut entries = Vec::with_capacity(model.params().len());
    for (name, t) in model.params().iter() {
        let file = format!("params/{name}.tpt");
        write_tensor(&dir.join(&file), t, DType::F64)?;
        entries.push(Entry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        param: entries,
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    super::write_bytes(&dir.join("manifest.txt"), text.as_bytes())?;
    super::write_bytes(&dir.join("model.toml"), model.config().to_toml().as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<TpMvcc> {
    let manifest_path = dir.join("manifest.txt");
    if !manifest_path.is_file() {
        return Err(Error::Checkpoint(format!("missing {}", manifest_path.display())));
    }
    let manifest: Manifest = toml::from_str(&super::read_text(&manifest_path)?)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::format(&manifest_path, format!("unsupported format {}", manifest.format)));
    }
    let config_path = dir.join("model.toml");
    let config = ModelConfig::from_toml(&super::read_text(&config_path)?)
        .map_err(|e| Error::format(&config_path, e.to_string()))?;
    let mut pairs = Vec::with_capacity(manifest.param.len());
    for e in manifest.param {
        let path = dir.join(&e.file);
        let t = read_tensor(&path)?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::format(&path, format!("shape {:?} disagrees with manifest {:?}", t.shape(), e.shape)));
        }
        pairs.push((e.name, t));
    }
    TpMvcc::from_params(config, ParamSet::from_pairs(pairs))
}
