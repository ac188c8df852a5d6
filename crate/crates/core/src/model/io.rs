//! `.c2m` files: one line of JSON header (spec, training metadata, weight
//! manifest) followed by the weights as little-endian `f64`, concatenated
//! in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelSpec, Network, TrainedModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::tensor::{LayerParams, Tensor};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "c2m";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    layer: usize,
    tensor: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: ModelSpec,
    meta: TrainingMeta,
    manifest: Vec<ManifestEntry>,
    blob_bytes: usize,
}

fn file_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::ModelFile {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn write_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut blob = Vec::new();
    for (layer, p) in model.network.parametric_layers() {
        for (name, t) in [("weight", &p.weight), ("bias", &p.bias)] {
            manifest.push(ManifestEntry {
                layer,
                tensor: name.to_string(),
                shape: t.shape().to_vec(),
                offset: blob.len() / 8,
                count: t.len(),
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: MODEL_FORMAT_VERSION,
        spec: model.network.spec.clone(),
        meta: model.meta.clone(),
        manifest,
        blob_bytes: blob.len(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn read_model(bytes: &[u8]) -> Result<TrainedModel> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| file_err("header", "no newline terminating the JSON header"))?;
    let (head, blob) = (&bytes[..nl], &bytes[nl + 1..]);

    let raw: serde_json::Value = serde_json::from_slice(head).map_err(|e| {
        file_err(
            "header",
            format!(
                "malformed JSON at line {} column {}: {e}",
                e.line(),
                e.column()
            ),
        )
    })?;
    match raw.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT_TAG) => {}
        other => {
            return Err(file_err(
                "format",
                format!("expected \"{FORMAT_TAG}\", found {other:?}"),
            ))
        }
    }
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        other => {
            return Err(file_err(
                "version",
                format!(
                "unsupported version {other:?}, this build reads version {MODEL_FORMAT_VERSION}"
            ),
            ))
        }
    }
    for field in ["spec", "meta", "manifest"] {
        if let Some(v) = raw.get(field) {
            let check: std::result::Result<(), serde_json::Error> = match field {
                "spec" => ModelSpec::deserialize(v).map(|_| ()),
                "meta" => TrainingMeta::deserialize(v).map(|_| ()),
                _ => Vec::<ManifestEntry>::deserialize(v).map(|_| ()),
            };
            check.map_err(|e| file_err(field, e.to_string()))?;
        }
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| file_err("header", e.to_string()))?;
    header
        .spec
        .validate()
        .map_err(|e| file_err("spec", e.to_string()))?;

    if blob.len() != header.blob_bytes {
        return Err(file_err(
            "weights",
            format!(
                "expected {} bytes of weights, got {}",
                header.blob_bytes,
                blob.len()
            ),
        ));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let shapes = header.spec.layer_shapes()?;
    let mut params: Vec<Option<LayerParams>> = vec![None; header.spec.layers.len()];
    let mut entries = header.manifest.iter();
    for (i, layer) in header.spec.layers.iter().enumerate() {
        let Some((ws, bs)) = layer.param_shapes(&shapes[i]) else {
            continue;
        };
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let e = entries
                .next()
                .ok_or_else(|| file_err("manifest", format!("missing {name} for layer {i}")))?;
            if e.layer != i
                || e.tensor != name
                || e.shape != shape
                || e.count != shape.iter().product::<usize>()
            {
                return Err(file_err(
                    format!("manifest[layer {i}].{name}"),
                    format!(
                        "expected shape {shape:?}, found layer {} {} {:?}",
                        e.layer, e.tensor, e.shape
                    ),
                ));
            }
            let slice = values.get(e.offset..e.offset + e.count).ok_or_else(|| {
                file_err(
                    format!("manifest[layer {i}].{name}"),
                    "offset past end of weights",
                )
            })?;
            Tensor::new(shape.to_vec(), slice.to_vec())
        };
        let weight = take("weight", &ws)?;
        let bias = take("bias", &bs)?;
        params[i] = Some(LayerParams { weight, bias });
    }
    if entries.next().is_some() {
        return Err(file_err("manifest", "more entries than parametric layers"));
    }
    Ok(TrainedModel {
        network: Network {
            spec: header.spec,
            params,
        },
        meta: header.meta,
    })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    crate::artifact::write_atomic(path, &write_model(model)?)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    read_model(&std::fs::read(path)?)
}

/// SHA-256 of the serialized model, hex encoded.
pub fn model_hash(model: &TrainedModel) -> Result<String> {
    Ok(hex::encode(Sha256::digest(write_model(model)?)))
}

/// SHA-256 over the architecture and weights only, ignoring training
/// metadata.
pub fn network_hash(network: &Network) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&network.spec)?);
    for p in network.params.iter().flatten() {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::zoo;

    fn model() -> TrainedModel {
        let spec = zoo::simple_cnn([3, 8, 8], 3, 4).unwrap();
        TrainedModel {
            network: spec.init(5).unwrap(),
            meta: TrainingMeta {
                seed: 5,
                epochs: 0,
                batch_size: 32,
                learning_rate: 0.01,
                momentum: 0.9,
                epoch_losses: vec![1.0986122886681098, 0.1 + 0.2],
                final_accuracy: Some(1.0 / 3.0),
            },
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let m = model();
        let bytes = write_model(&m).unwrap();
        let back = read_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_model(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_blob_reports_byte_counts() {
        let bytes = write_model(&model()).unwrap();
        let err = read_model(&bytes[..bytes.len() - 5])
            .unwrap_err()
            .to_string();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let full = bytes.len() - nl - 1;
        assert!(
            err.contains(&format!("expected {full} bytes"))
                && err.contains(&format!("got {}", full - 5)),
            "{err}"
        );
    }

    #[test]
    fn unknown_layer_kind_is_named() {
        let bytes = write_model(&model()).unwrap();
        let text =
            String::from_utf8_lossy(&bytes).replacen("\"kind\":\"relu\"", "\"kind\":\"swish\"", 1);
        let err = read_model(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("swish") && err.contains("spec"), "{err}");
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let bytes = write_model(&model()).unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("\"version\":1", "\"version\":7", 1);
        let err = read_model(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("version") && err.contains('7'), "{err}");
    }

    #[test]
    fn malformed_header_names_position() {
        let err = read_model(b"{\"format\": \"c2m\",,}\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1 column"), "{err}");
    }
}
