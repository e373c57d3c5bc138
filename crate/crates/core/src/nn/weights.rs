//! Portable weight files.
//!
//! A weight file is a single JSON object:
//!
//! ```text
//! {
//!   "version": 1,
//!   "mode": "twr" | "tdoa",
//!   "layer_dims": [d_in, 50, 50, 1],
//!   "normalizer": { "mean": [d_in floats], "std": [d_in floats] },
//!   "weights": [[out*in floats, row-major], ...one per layer],
//!   "biases":  [[out floats], ...one per layer]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is bitwise
//! exact. A deployed forward pass computes, per layer,
//! `a' = relu(W a + b)` (no ReLU on the last layer) starting from
//! `a = (x - mean) / std`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpModel, Normalizer};
use crate::error::{Error, Result};
use crate::geometry::RangingMode;

pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerFile {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    version: u32,
    mode: RangingMode,
    layer_dims: Vec<usize>,
    normalizer: NormalizerFile,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

pub fn weights_to_string(model: &MlpModel) -> String {
    let net = model.net();
    let (weights, biases) = (0..net.num_layers())
        .map(|l| {
            let (w, b) = net.layer(l);
            (w.to_vec(), b.to_vec())
        })
        .unzip();
    let file = WeightFile {
        version: WEIGHTS_VERSION,
        mode: model.mode(),
        layer_dims: net.dims().to_vec(),
        normalizer: NormalizerFile {
            mean: model.normalizer().mean.clone(),
            std: model.normalizer().std.clone(),
        },
        weights,
        biases,
    };
    serde_json::to_string(&file).expect("weight file serializes")
}

fn parse(text: &str, path: &Path) -> Result<MlpModel> {
    let file: WeightFile = serde_json::from_str(text).map_err(|e| Error::format("weight", path, e))?;
    if file.version != WEIGHTS_VERSION {
        return Err(Error::Version {
            expected: WEIGHTS_VERSION,
            found: file.version,
        });
    }
    let net = Mlp::from_layers(&file.layer_dims, &file.weights, &file.biases)?;
    let normalizer = Normalizer {
        mean: file.normalizer.mean,
        std: file.normalizer.std,
    };
    MlpModel::new(file.mode, normalizer, net)
}

pub fn weights_from_str(text: &str) -> Result<MlpModel> {
    parse(text, Path::new("<string>"))
}

/// Writes the model atomically (temp file + rename in the same directory).
pub fn save_weights(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), weights_to_string(model).as_bytes())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

/// Loads a model and checks it was trained for `mode`.
pub fn load_weights_for(path: impl AsRef<Path>, mode: RangingMode) -> Result<MlpModel> {
    let model = load_weights(path)?;
    if model.mode() != mode {
        return Err(Error::ModeMismatch {
            expected: mode,
            found: model.mode(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::default_dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(mode: RangingMode) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::he_uniform(&default_dims(mode), &mut rng).unwrap();
        let d = mode.feature_len();
        let n = Normalizer {
            mean: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            std: (0..d).map(|_| rng.random_range(0.1..3.0)).collect(),
        };
        MlpModel::new(mode, n, net).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model(RangingMode::Tdoa);
        save_weights(&m, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert!(m
            .net()
            .params()
            .iter()
            .zip(back.net().params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(m.normalizer(), back.normalizer());
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let text = weights_to_string(&model(RangingMode::Twr));
        let cut = &text[..text.len() / 2];
        assert!(matches!(weights_from_str(cut), Err(Error::Format { .. })));
    }

    #[test]
    fn mode_mismatch_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("twr.json");
        save_weights(&model(RangingMode::Twr), &path).unwrap();
        assert!(matches!(
            load_weights_for(&path, RangingMode::Tdoa),
            Err(Error::ModeMismatch { .. })
        ));
        assert!(load_weights_for(&path, RangingMode::Twr).is_ok());
    }

    #[test]
    fn dimension_and_version_checks() {
        let text = weights_to_string(&model(RangingMode::Twr));
        let relabelled = text.replace("\"mode\":\"twr\"", "\"mode\":\"tdoa\"");
        assert!(matches!(
            weights_from_str(&relabelled),
            Err(Error::DimensionMismatch { .. })
        ));
        let v2 = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(weights_from_str(&v2), Err(Error::Version { found: 2, .. })));
    }
}
