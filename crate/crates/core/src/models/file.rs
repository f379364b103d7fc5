//! `.mgm` model files.
//!
//! A file is a JSON manifest on one line followed by the raw little-endian
//! `f64` payload of every tensor, in the order given by `tensorIndex`:
//!
//! ```text
//! {"formatVersion":1,"kind":"vae","trained":true,"layerSpecs":[...],"tensorIndex":[...]}\n
//! <bytes>
//! ```
//!
//! Tensor names are `<component>.<layer>.weight` and `<component>.<layer>.bias`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::layers::{Activation, Dense, Mlp};
use super::vae::Vae;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const FORMAT: &str = "mgm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vae,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerSpec {
    pub component: String,
    pub index: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub trained: bool,
    pub layer_specs: Vec<LayerSpec>,
    pub tensor_index: Vec<TensorEntry>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        format: FORMAT,
        reason: reason.into(),
    }
}

fn encode(kind: ModelKind, trained: bool, components: &[(&str, &Mlp)]) -> Result<Vec<u8>> {
    let mut layer_specs = Vec::new();
    let mut tensor_index = Vec::new();
    let mut payload = Vec::new();
    for (name, net) in components {
        for (i, layer) in net.layers().iter().enumerate() {
            layer_specs.push(LayerSpec {
                component: name.to_string(),
                index: i,
                inputs: layer.inputs(),
                outputs: layer.outputs(),
                activation: layer.activation,
            });
            for (suffix, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                let offset = payload.len() as u64;
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                tensor_index.push(TensorEntry {
                    name: format!("{name}.{i}.{suffix}"),
                    shape: t.shape().to_vec(),
                    byte_offset: offset,
                    byte_length: payload.len() as u64 - offset,
                });
            }
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind,
        trained,
        layer_specs,
        tensor_index,
    };
    let mut bytes = serde_json::to_vec(&manifest)?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    Ok(bytes)
}

/// Parsed model file: manifest plus one network per component, in file order.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub manifest: Manifest,
    pub components: Vec<(String, Mlp)>,
}

impl ModelFile {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing manifest terminator"))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let version = value.get("formatVersion").cloned().unwrap_or(serde_json::Value::Null);
        if version.as_u64() != Some(FORMAT_VERSION as u64) {
            return Err(Error::FormatVersion {
                format: FORMAT,
                found: version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let payload = &bytes[newline + 1..];

        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensor_index.len());
        for entry in &manifest.tensor_index {
            let count: usize = entry.shape.iter().product();
            if entry.byte_length != 8 * count as u64 || entry.byte_offset != expected_offset {
                return Err(corrupt(format!("bad index entry for {}", entry.name)));
            }
            let start = entry.byte_offset as usize;
            let end = start + entry.byte_length as usize;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| corrupt(format!("payload truncated at {}", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::new(entry.shape.clone(), data).map_err(|e| corrupt(e.to_string()))?);
            expected_offset = end as u64;
        }
        if expected_offset != payload.len() as u64 {
            return Err(corrupt(format!(
                "payload is {} bytes, index covers {expected_offset}",
                payload.len()
            )));
        }
        if tensors.len() != 2 * manifest.layer_specs.len() {
            return Err(corrupt("tensor count does not match layer count"));
        }

        let mut components: Vec<(String, Vec<Dense>)> = Vec::new();
        let mut it = tensors.into_iter();
        for spec in &manifest.layer_specs {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != [spec.inputs, spec.outputs] {
                return Err(corrupt(format!("{}.{} weight shape {:?}", spec.component, spec.index, w.shape())));
            }
            let dense = Dense::new(w, b, spec.activation).map_err(|e| corrupt(e.to_string()))?;
            match components.last_mut() {
                Some((name, layers)) if *name == spec.component && layers.len() == spec.index => layers.push(dense),
                _ if spec.index == 0 => components.push((spec.component.clone(), vec![dense])),
                _ => return Err(corrupt(format!("layer {}.{} out of order", spec.component, spec.index))),
            }
        }
        let components = components
            .into_iter()
            .map(|(name, layers)| Ok((name, Mlp::new(layers).map_err(|e| corrupt(e.to_string()))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelFile { manifest, components })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelFile::from_bytes(&bytes)
    }

    fn take(&mut self, name: &str) -> Result<Mlp> {
        let pos = self
            .components
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| corrupt(format!("missing component {name}")))?;
        Ok(self.components.remove(pos).1)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(corrupt(format!("expected a {kind:?} model, found {:?}", self.manifest.kind)));
        }
        Ok(())
    }

    pub fn into_vae(mut self) -> Result<Vae> {
        self.expect_kind(ModelKind::Vae)?;
        let trained = self.manifest.trained;
        let encoder = self.take("encoder")?;
        let mu = self.take("mu")?;
        let logvar = self.take("logvar")?;
        let decoder = self.take("decoder")?;
        Vae::from_parts(encoder, mu, logvar, decoder, trained)
    }

    pub fn into_classifier(mut self) -> Result<Classifier> {
        self.expect_kind(ModelKind::Classifier)?;
        let trained = self.manifest.trained;
        Classifier::from_net(self.take("classifier")?, trained)
    }
}

pub fn vae_to_bytes(vae: &Vae) -> Result<Vec<u8>> {
    encode(ModelKind::Vae, vae.is_trained(), &vae.components())
}

pub fn classifier_to_bytes(clf: &Classifier) -> Result<Vec<u8>> {
    encode(ModelKind::Classifier, clf.is_trained(), &[("classifier", clf.net())])
}

pub fn save_vae(path: impl AsRef<Path>, vae: &Vae) -> Result<()> {
    write_atomic(path, &vae_to_bytes(vae)?)
}

pub fn load_vae(path: impl AsRef<Path>) -> Result<Vae> {
    ModelFile::read(path)?.into_vae()
}

pub fn save_classifier(path: impl AsRef<Path>, clf: &Classifier) -> Result<()> {
    write_atomic(path, &classifier_to_bytes(clf)?)
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<Classifier> {
    ModelFile::read(path)?.into_classifier()
}
