use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Parameterized, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{read_real, write_real};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON side of a checkpoint; the tensors live in the sibling `.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
    pub model_config: serde_json::Value,
    pub train_config: Option<TrainConfig>,
    /// sha256 of the `.bin` file.
    pub weights_sha256: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` (one tensor record per parameter, in order) and
/// `<stem>.json`.
pub fn save_checkpoint<T: Scalar, M: Parameterized<T>>(
    stem: &Path,
    model: &M,
    kind: &str,
    model_config: serde_json::Value,
    train_config: Option<&TrainConfig>,
) -> Result<CheckpointManifest> {
    let (bin, json) = paths(stem);
    let mut bytes = Vec::new();
    for p in model.params() {
        write_real(&mut bytes, p.shape(), p.data()).map_err(|e| Error::io(&bin, e))?;
    }
    std::fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let manifest = CheckpointManifest {
        format_version: 1,
        kind: kind.to_string(),
        dtype: T::DTYPE.to_string(),
        params: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, p)| ParamEntry {
                name,
                shape: p.shape().to_vec(),
            })
            .collect(),
        model_config,
        train_config: train_config.cloned(),
        weights_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let mut w = BufWriter::new(File::create(&json).map_err(|e| Error::io(&json, e))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n").map_err(|e| Error::io(&json, e))?;
    w.flush().map_err(|e| Error::io(&json, e))?;
    Ok(manifest)
}

/// Reads only the manifest, e.g. to construct a matching model.
pub fn read_manifest(stem: &Path) -> Result<CheckpointManifest> {
    let (_, json) = paths(stem);
    let f = File::open(&json).map_err(|e| Error::io(&json, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Loads weights into `model`, which must already have the saved structure.
pub fn load_checkpoint<T: Scalar, M: Parameterized<T>>(stem: &Path, model: &mut M) -> Result<CheckpointManifest> {
    let manifest = read_manifest(stem)?;
    let (bin, _) = paths(stem);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.weights_sha256 {
        return Err(Error::Format(format!("{}: checksum mismatch", bin.display())));
    }
    let names = model.param_names();
    if names.len() != manifest.params.len() {
        return Err(Error::Format("checkpoint parameter count differs from the model".into()));
    }
    let mut r = &bytes[..];
    for ((p, name), entry) in model.params_mut().into_iter().zip(names).zip(&manifest.params) {
        if entry.name != name || entry.shape != p.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter {} {:?} does not match model {} {:?}",
                entry.name,
                entry.shape,
                name,
                p.shape()
            )));
        }
        let (shape, data) = read_real::<_, T>(&mut r)?.ok_or_else(|| Error::Format("checkpoint ends early".into()))?;
        if shape != p.shape() {
            return Err(Error::Format(format!("record shape {shape:?} differs from manifest")));
        }
        p.data_mut().copy_from_slice(&data);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::super::{Dense, Lstm};
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let l = Lstm::<f64>::new(3, 5, &mut stream_rng(1, 0, 0));
        let cfg = TrainConfig::txid_default();
        let man = save_checkpoint(&stem, &l, "lstm", serde_json::json!({"h": 5}), Some(&cfg)).unwrap();
        assert_eq!(man.dtype, "f64");
        let mut back = Lstm::<f64>::zeros(3, 5);
        let man2 = load_checkpoint(&stem, &mut back).unwrap();
        assert_eq!(back, l);
        assert_eq!(man2.train_config, Some(cfg));

        let mut wrong = Lstm::<f64>::zeros(3, 4);
        assert!(matches!(load_checkpoint(&stem, &mut wrong), Err(Error::Format(_))));
        let mut dense = Dense::<f64>::zeros(3, 4);
        assert!(load_checkpoint(&stem, &mut dense).is_err());
    }

    #[test]
    fn tampered_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("d");
        let d = Dense::<f32>::new(2, 2, &mut stream_rng(1, 0, 0));
        save_checkpoint(&stem, &d, "dense", serde_json::Value::Null, None).unwrap();
        let bin = stem.with_extension("bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&bin, bytes).unwrap();
        let mut back = Dense::<f32>::zeros(2, 2);
        assert!(matches!(load_checkpoint(&stem, &mut back), Err(Error::Format(_))));
    }
}
