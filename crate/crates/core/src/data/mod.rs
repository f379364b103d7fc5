//! Procedural datasets and analytic test manifolds.

mod manifolds;
mod shapes;

pub use manifolds::{IdentityDecoder, LinearDecoder, SphereDecoder, SwissRollDecoder};
pub use shapes::{gen_shapes, render_shape, Shape, SHAPE_SIZE};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ntf_read, ntf_write, write_atomic};
use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
    pub baseline_fraction: f64,
}

/// Row-major images `[n, height*width]` in `[-1, 1]` with integer labels.
/// Label `num_classes` is reserved for black and white baseline images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DatasetMeta {
    format_version: u32,
    num_classes: usize,
    baseline_label: usize,
    height: usize,
    width: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn baseline_label(&self) -> usize {
        self.num_classes
    }

    /// Selected rows as a `[rows.len(), dim]` batch.
    pub fn rows(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.dim());
        for &i in rows {
            data.extend_from_slice(self.inputs.row(i));
        }
        Tensor::from_parts(vec![rows.len(), self.dim()], data)
    }

    /// Row `i` as a `[height, width]` image.
    pub fn image(&self, i: usize) -> Tensor {
        Tensor::from_parts(vec![self.height, self.width], self.inputs.row(i).to_vec())
    }

    /// Indices of rows that carry a real class label.
    pub fn class_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] < self.num_classes).collect()
    }

    /// Rebuilds a dataset from its provenance record.
    pub fn regenerate(provenance: &Provenance) -> Result<Dataset> {
        match provenance.generator.as_str() {
            "shapes" => {
                let base = gen_shapes(provenance.n, provenance.classes, provenance.seed)?;
                augment_baselines(&base, provenance.baseline_fraction)
            }
            other => Err(Error::InvalidArgument(format!("unknown generator {other}"))),
        }
    }

    /// Writes `inputs.ntf`, `labels.ntf` and `dataset.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        ntf_write(dir.join("inputs.ntf"), &self.inputs)?;
        let labels = Tensor::vector(self.labels.iter().map(|&l| l as f64).collect());
        ntf_write(dir.join("labels.ntf"), &labels)?;
        let meta = DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            num_classes: self.num_classes,
            baseline_label: self.baseline_label(),
            height: self.height,
            width: self.width,
            provenance: self.provenance.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&meta)?;
        json.push(b'\n');
        write_atomic(dir.join("dataset.json"), &json)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let meta_path = dir.join("dataset.json");
        let raw = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&raw)?;
        let version = value.get("formatVersion").cloned().unwrap_or_default();
        if version.as_u64() != Some(DATASET_FORMAT_VERSION as u64) {
            return Err(Error::FormatVersion {
                format: "dataset",
                found: version.to_string(),
                expected: DATASET_FORMAT_VERSION.to_string(),
            });
        }
        let meta: DatasetMeta = serde_json::from_value(value)?;
        let inputs = ntf_read(dir.join("inputs.ntf"))?;
        let labels = ntf_read(dir.join("labels.ntf"))?;
        let corrupt = |reason: String| Error::Corrupt {
            format: "dataset",
            reason,
        };
        let (n, d) = inputs.dims2("dataset")?;
        if d != meta.height * meta.width || labels.numel() != n {
            return Err(corrupt(format!("inputs {:?} and {} labels disagree", inputs.shape(), labels.numel())));
        }
        let labels = labels
            .data()
            .iter()
            .map(|&l| {
                if l.fract() == 0.0 && l >= 0.0 && l <= meta.num_classes as f64 {
                    Ok(l as usize)
                } else {
                    Err(corrupt(format!("invalid label {l}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            inputs,
            labels,
            num_classes: meta.num_classes,
            height: meta.height,
            width: meta.width,
            provenance: meta.provenance,
        })
    }
}

/// Appends `round(fraction * n)` constant baseline images, alternating
/// black (-1) and white (+1), labelled with the reserved baseline label.
pub fn augment_baselines(data: &Dataset, fraction: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("baseline fraction {fraction} outside [0, 1]")));
    }
    let extra = (fraction * data.len() as f64).round() as usize;
    if extra == 0 {
        return Ok(data.clone());
    }
    let d = data.dim();
    let mut inputs = data.inputs.data().to_vec();
    let mut labels = data.labels.clone();
    for k in 0..extra {
        let level = if k % 2 == 0 { -1.0 } else { 1.0 };
        inputs.extend(std::iter::repeat(level).take(d));
        labels.push(data.baseline_label());
    }
    let mut provenance = data.provenance.clone();
    provenance.baseline_fraction = fraction;
    Ok(Dataset {
        inputs: Tensor::from_parts(vec![labels.len(), d], inputs),
        labels,
        num_classes: data.num_classes,
        height: data.height,
        width: data.width,
        provenance,
    })
}

/// Constant image of the given level, flattened.
pub fn constant_image(height: usize, width: usize, level: f64) -> Tensor {
    Tensor::full(&[height * width], level)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fraction_is_identity() {
        let d = gen_shapes(8, 4, 1).unwrap();
        assert_eq!(augment_baselines(&d, 0.0).unwrap(), d);
    }

    #[test]
    fn baselines_are_constant() {
        let d = augment_baselines(&gen_shapes(10, 4, 1).unwrap(), 0.2).unwrap();
        assert_eq!(d.len(), 12);
        assert!(d.inputs.row(10).iter().all(|&v| v == -1.0));
        assert!(d.inputs.row(11).iter().all(|&v| v == 1.0));
        assert_eq!(d.labels[10], d.baseline_label());
        assert_eq!(d.class_indices().len(), 10);
    }

    #[test]
    fn save_load_and_regenerate() {
        let dir = tempfile::tempdir().unwrap();
        let d = augment_baselines(&gen_shapes(12, 3, 7).unwrap(), 0.25).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
        assert_eq!(Dataset::regenerate(&d.provenance).unwrap(), d);
    }
}
