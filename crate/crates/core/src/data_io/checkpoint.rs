use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A model kind tag, its configuration, and parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: ParamSet,
}

/// Manifest and blob paths for a checkpoint name. A trailing `.json` or
/// `.bin` extension on `base` is ignored.
pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("json" | "bin") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut bin = stem.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

/// Writes `<base>.json` and `<base>.bin`; values are stored as little-endian
/// `f32` in manifest order.
pub fn save_checkpoint(base: &Path, kind: &str, config: serde_json::Value, params: &ParamSet) -> Result<()> {
    let (json_path, bin_path) = checkpoint_paths(base);
    let manifest = Manifest {
        kind: kind.to_string(),
        config,
        tensors: params
            .iter()
            .map(|(_, name, m)| TensorEntry {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
            })
            .collect(),
    };
    let mut blob = Vec::with_capacity(params.num_values() * 4);
    for t in params.tensors() {
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&bin_path, blob).map_err(|e| Error::io(&bin_path, e))
}

pub fn load_checkpoint(base: &Path) -> Result<Checkpoint> {
    let (json_path, bin_path) = checkpoint_paths(base);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: json_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 4).sum();
    if blob.len() != expected {
        return Err(Error::Config(format!(
            "{} holds {} bytes but the manifest describes {expected}",
            bin_path.display(),
            blob.len()
        )));
    }
    let mut params = ParamSet::new();
    let mut values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    for t in &manifest.tensors {
        let data: Vec<f64> = values.by_ref().take(t.shape[0] * t.shape[1]).collect();
        params.add(t.name.clone(), Matrix::from_vec(t.shape[0], t.shape[1], data)?)?;
    }
    Ok(Checkpoint {
        kind: manifest.kind,
        config: manifest.config,
        params,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample_params() -> ParamSet {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        ps.add("a.w", Matrix::gaussian(3, 4, 1.0, &mut r)).unwrap();
        ps.add("a.b", Matrix::column(&[1e-40, -0.0, 1.0 / 3.0])).unwrap();
        ps
    }

    #[test]
    fn round_trip_is_exact_at_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("model");
        let ps = sample_params();
        let config = serde_json::json!({"hidden": [3, 4]});
        save_checkpoint(&base, "classifier", config.clone(), &ps).unwrap();
        let ck = load_checkpoint(&base).unwrap();
        assert_eq!(ck.kind, "classifier");
        assert_eq!(ck.config, config);
        for ((_, n1, a), (_, n2, b)) in ps.iter().zip(ck.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
                assert_eq!(*y, (*x as f32) as f64);
            }
        }
        let blob = fs::read(dir.path().join("model.bin")).unwrap();
        assert_eq!(blob.len(), ps.num_values() * 4);

        // Saving the restored values reproduces the files byte for byte.
        let again = dir.path().join("again.json");
        save_checkpoint(&again, "classifier", config, &ck.params).unwrap();
        assert_eq!(fs::read(dir.path().join("again.bin")).unwrap(), blob);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        save_checkpoint(&base, "x", serde_json::Value::Null, &sample_params()).unwrap();
        let bin = dir.path().join("m.bin");
        let mut blob = fs::read(&bin).unwrap();
        blob.pop();
        fs::write(&bin, blob).unwrap();
        assert!(matches!(load_checkpoint(&base), Err(Error::Config(_))));
    }

    #[test]
    fn paths_accept_either_extension() {
        let (j, b) = checkpoint_paths(Path::new("out/net.json"));
        assert_eq!(j, PathBuf::from("out/net.json"));
        assert_eq!(b, PathBuf::from("out/net.bin"));
        let (j, _) = checkpoint_paths(Path::new("out/net.v2"));
        assert_eq!(j, PathBuf::from("out/net.v2.json"));
    }
}
