//! Checkpoint directories: `manifest.json` plus one tensor blob per tensor.
//!
//! The manifest echoes the training config, the selected epoch and its
//! validation metrics, and indexes every blob with its SHA-256 digest.
//! The frozen co-occurrence matrix and pooled modality table are stored
//! alongside the trainable tensors so a checkpoint scores sessions on its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::TrainedModel;
use crate::numcore::{decode_tensor, encode_tensor, NumError, Scalar, Tensor};
use crate::sessionmodel::{ModelError, ModelParams, ModelShape};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ADJACENCY_TENSOR: &str = "frozen.adjacency";
pub const MODALITY_TENSOR: &str = "frozen.modality_pooled";
const BLOB_EXT: &str = "tnsr";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: digest mismatch")]
    Digest { path: PathBuf },
    #[error("{path}: {source}")]
    Blob { path: PathBuf, source: NumError },
    #[error("{path}: blob holds tensor `{found}`, manifest expects `{expected}`")]
    BlobName {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub shape: ModelShape,
    pub epoch: usize,
    pub val_prec20: Option<f64>,
    pub val_mrr20: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the checkpoint into `dir`, creating it if needed. The manifest is
/// written last.
pub fn save_checkpoint<T: Scalar>(dir: &Path, model: &TrainedModel<T>) -> Result<Manifest, CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut named: Vec<(String, &Tensor<T>)> = model.params.named();
    named.push((ADJACENCY_TENSOR.to_string(), &model.adjacency));
    named.push((MODALITY_TENSOR.to_string(), &model.modality_pooled));
    let mut tensors = Vec::with_capacity(named.len());
    for (name, t) in named {
        let bytes = encode_tensor(&name, t);
        let file = format!("{name}.{BLOB_EXT}");
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        tensors.push(TensorEntry {
            name,
            file,
            shape: t.shape().to_vec(),
            sha256: digest(&bytes),
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config.clone(),
        shape: model.params.shape,
        epoch: model.epoch,
        val_prec20: model.val_prec20,
        val_mrr20: model.val_mrr20,
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: manifest.format_version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

/// Loads and verifies every blob; nothing is returned unless all of them pass.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<TrainedModel<T>, CheckpointError> {
    let manifest = read_manifest(dir)?;
    let mut tensors: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    for entry in &manifest.tensors {
        let path = dir.join(&entry.file);
        if Path::new(&entry.file).components().count() != 1 {
            return Err(CheckpointError::Manifest {
                path,
                message: "tensor file must be a plain file name".into(),
            });
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if digest(&bytes) != entry.sha256 {
            return Err(CheckpointError::Digest { path });
        }
        let (name, t) = decode_tensor::<T>(&bytes).map_err(|source| CheckpointError::Blob {
            path: path.clone(),
            source,
        })?;
        if name != entry.name {
            return Err(CheckpointError::BlobName {
                path,
                found: name,
                expected: entry.name.clone(),
            });
        }
        tensors.insert(name, t);
    }
    let mut take = |name: &str| tensors.remove(name);
    let params = ModelParams::from_named(manifest.shape, &mut take)?;
    let n = manifest.shape.n_items;
    let adjacency = take(ADJACENCY_TENSOR).ok_or_else(|| ModelError::MissingTensor(ADJACENCY_TENSOR.into()))?;
    let modality_pooled = take(MODALITY_TENSOR).ok_or_else(|| ModelError::MissingTensor(MODALITY_TENSOR.into()))?;
    for (name, t, want) in [
        (ADJACENCY_TENSOR, &adjacency, vec![n, n]),
        (MODALITY_TENSOR, &modality_pooled, vec![n, manifest.shape.encoder_dim]),
    ] {
        if t.shape() != want.as_slice() {
            return Err(ModelError::TensorShape {
                name: name.into(),
                found: t.shape().to_vec(),
                expected: want,
            }
            .into());
        }
    }
    Ok(TrainedModel {
        config: manifest.config,
        params,
        adjacency,
        modality_pooled,
        epoch: manifest.epoch,
        val_prec20: manifest.val_prec20,
        val_mrr20: manifest.val_mrr20,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_tensor, rng};

    fn model() -> TrainedModel<f64> {
        let config = TrainConfig {
            dim: 4,
            encoder_dim: 3,
            max_len: 5,
            ..TrainConfig::default()
        };
        let mut r = rng(8);
        TrainedModel {
            params: ModelParams::init(config.shape(5), &mut r).unwrap(),
            config,
            adjacency: random_tensor(&mut r, &[5, 5]),
            modality_pooled: random_tensor(&mut r, &[5, 3]),
            epoch: 7,
            val_prec20: Some(0.25),
            val_mrr20: Some(0.125),
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_checkpoint(dir.path(), &m).unwrap();
        let back: TrainedModel<f64> = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, m);
        for ((_, a), (_, b)) in back.params.named().into_iter().zip(m.params.named()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let man = read_manifest(dir.path()).unwrap();
        assert_eq!((man.epoch, man.val_prec20), (7, Some(0.25)));
    }

    #[test]
    fn f32_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            dim: 4,
            encoder_dim: 3,
            max_len: 5,
            ..TrainConfig::default()
        };
        let mut r = rng(8);
        let m = TrainedModel::<f32> {
            params: ModelParams::init(config.shape(2), &mut r).unwrap(),
            config,
            adjacency: Tensor::identity(2),
            modality_pooled: Tensor::full(&[2, 3], 0.5),
            epoch: 1,
            val_prec20: None,
            val_mrr20: None,
        };
        save_checkpoint(dir.path(), &m).unwrap();
        assert_eq!(load_checkpoint::<f32>(dir.path()).unwrap(), m);
    }

    #[test]
    fn saving_twice_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_checkpoint(a.path(), &model()).unwrap();
        save_checkpoint(b.path(), &model()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for n in names {
            assert_eq!(
                fs::read(a.path().join(&n)).unwrap(),
                fs::read(b.path().join(&n)).unwrap()
            );
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model()).unwrap();
        let blob = dir.path().join("proxy.w3.tnsr");
        let mut bytes = fs::read(&blob).unwrap();
        bytes.extend_from_slice(&[0, 1, 2]);
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(dir.path()),
            Err(CheckpointError::Digest { .. })
        ));

        // a matching digest does not rescue a malformed blob
        let mut man = read_manifest(dir.path()).unwrap();
        let entry = man.tensors.iter_mut().find(|e| e.name == "proxy.w3").unwrap();
        entry.sha256 = digest(&bytes);
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&man).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(dir.path()),
            Err(CheckpointError::Blob { .. })
        ));
    }

    #[test]
    fn truncated_blob_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model()).unwrap();
        let blob = dir.path().join("id_table.tnsr");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint::<f64>(dir.path()).is_err());
        fs::remove_file(&blob).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(dir.path()),
            Err(CheckpointError::Io { .. })
        ));
        fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(dir.path()),
            Err(CheckpointError::Io { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model()).unwrap();
        let mut man = read_manifest(dir.path()).unwrap();
        man.format_version = 99;
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&man).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(dir.path()),
            Err(CheckpointError::Version { found: 99, .. })
        ));
    }

    #[test]
    fn blob_version_byte_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model()).unwrap();
        let blob = dir.path().join("projection.tnsr");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[4] = 9;
        fs::write(&blob, &bytes).unwrap();
        let mut man = read_manifest(dir.path()).unwrap();
        man.tensors.iter_mut().find(|e| e.name == "projection").unwrap().sha256 = digest(&bytes);
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&man).unwrap()).unwrap();
        let err = load_checkpoint::<f64>(dir.path()).unwrap_err();
        assert!(matches!(
            err,
            CheckpointError::Blob {
                source: NumError::Version { found: 9, .. },
                ..
            }
        ));
    }
}
