//! On-disk checkpoints: `checkpoint.json` plus one little-endian blob per
//! parameter.

use std::fs;
use std::path::Path;

use geomsign_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::network::Model;

pub const MANIFEST_NAME: &str = "checkpoint.json";
const FORMAT: &str = "geomsign-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub step: u64,
    pub config: ModelConfig,
    pub params: Vec<TensorEntry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `model` into `dir`, creating it if needed.
pub fn save<F: Real>(model: &Model<F>, step: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    let mut params = Vec::new();
    for (spec, value) in model.specs().iter().zip(model.params()) {
        let file = format!("{}.bin", spec.name);
        let mut bytes = Vec::with_capacity(value.len() * F::BYTES);
        for &v in value.data() {
            v.write_le(&mut bytes);
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| ModelError::io(&path, e))?;
        params.push(TensorEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        dtype: F::DTYPE.into(),
        step,
        config: model.config().clone(),
        params,
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| ModelError::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| ModelError::io(&path, e))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?;
    if m.format != FORMAT {
        return Err(bad(&path, format!("unknown format {:?}", m.format)));
    }
    Ok(m)
}

fn read_blob<S: Real, F: Real>(path: &Path, len: usize) -> Result<Vec<F>> {
    let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
    if bytes.len() != len * S::BYTES {
        return Err(bad(
            path,
            format!("expected {} bytes, found {}", len * S::BYTES, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(S::BYTES)
        .map(|c| F::from_f64(S::read_le(c).as_f64()))
        .collect())
}

/// Loads a checkpoint, converting stored values to `F` if the stored dtype
/// differs. Returns the model and its training step.
pub fn load<F: Real>(dir: &Path) -> Result<(Model<F>, u64)> {
    let m = read_manifest(dir)?;
    let mut params = Vec::with_capacity(m.params.len());
    for entry in &m.params {
        let path = dir.join(&entry.file);
        let len = entry.shape.iter().product();
        let data = match m.dtype.as_str() {
            "f32" => read_blob::<f32, F>(&path, len)?,
            "f64" => read_blob::<f64, F>(&path, len)?,
            other => return Err(bad(&path, format!("unsupported dtype {other:?}"))),
        };
        params.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let model = Model::from_params(m.config.clone(), params)?;
    for (spec, entry) in model.specs().iter().zip(&m.params) {
        if spec.name != entry.name {
            return Err(bad(
                dir,
                format!("parameter {} stored as {}", spec.name, entry.name),
            ));
        }
    }
    Ok((model, m.step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            hidden_dim: 4,
            num_layers: 1,
            basis_dim: 8,
            num_classes: 3,
            ..Default::default()
        };
        let model = Model::<f32>::init(cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&model, 42, dir.path()).unwrap();
        let (back, step) = load::<f32>(dir.path()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());
        let (wide, _) = load::<f64>(dir.path()).unwrap();
        assert_eq!(
            wide.params()[0].data()[0],
            model.params()[0].data()[0] as f64
        );
    }

    #[test]
    fn truncated_blob_rejected() {
        let cfg = ModelConfig {
            hidden_dim: 4,
            num_layers: 1,
            basis_dim: 8,
            num_classes: 3,
            ..Default::default()
        };
        let model = Model::<f32>::init(cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&model, 0, dir.path()).unwrap();
        fs::write(dir.path().join("head.bias.bin"), [0u8; 3]).unwrap();
        assert!(matches!(
            load::<f32>(dir.path()),
            Err(ModelError::Checkpoint { .. })
        ));
    }
}
