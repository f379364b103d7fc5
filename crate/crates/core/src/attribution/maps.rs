use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Attribution method identifiers as used on the command line and in CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ig,
    Mig,
    Eig,
    BlurIg,
    SmoothIg,
    Saliency,
    Ixg,
    Gbp,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ig,
        Method::Mig,
        Method::Eig,
        Method::BlurIg,
        Method::SmoothIg,
        Method::Saliency,
        Method::Ixg,
        Method::Gbp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ig => "ig",
            Method::Mig => "mig",
            Method::Eig => "eig",
            Method::BlurIg => "blurig",
            Method::SmoothIg => "smoothig",
            Method::Saliency => "saliency",
            Method::Ixg => "ixg",
            Method::Gbp => "gbp",
        }
    }

    /// Methods that integrate gradients along a path.
    pub fn is_path_method(self) -> bool {
        matches!(self, Method::Ig | Method::Mig | Method::Eig | Method::BlurIg | Method::SmoothIg)
    }

    /// Methods that need the generative model.
    pub fn needs_generator(self) -> bool {
        matches!(self, Method::Mig | Method::Eig)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attribution method '{s}'")))
    }
}

/// Kind of path a path method integrated along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Straight,
    Geodesic,
    LatentLinear,
    Blur,
    NoisyStraight,
}

/// Attribution scores in the input's shape plus how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub scores: Tensor,
    pub method: Method,
    pub class: usize,
    pub baseline: String,
    pub steps: Option<usize>,
    pub path: Option<PathKind>,
}

impl AttributionMap {
    /// Sum of all scores.
    pub fn total(&self) -> f64 {
        self.scores.sum()
    }

    pub fn normalized(&self) -> Tensor {
        normalize_map(&self.scores)
    }

    /// Everything but the scores, for sidecar files.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "class": self.class,
            "baseline": self.baseline,
            "steps": self.steps,
            "path": self.path,
            "shape": self.scores.shape(),
            "total": self.total(),
        })
    }
}

/// `q`-th percentile (`0 <= q <= 100`) with linear interpolation between
/// order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Visualization normalization: `|map|` clipped at its 99th percentile and
/// scaled to `[0, 1]`. An all-zero map stays zero.
pub fn normalize_map(map: &Tensor) -> Tensor {
    let abs: Vec<f64> = map.data().iter().map(|v| v.abs()).collect();
    let cap = percentile(&abs, 99.0);
    if !(cap > 0.0) {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| v.abs().min(cap) / cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("lime".parse::<Method>().is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[1.0, 3.0], 50.0), 2.0);
    }

    #[test]
    fn normalization_range() {
        let mut data: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) * 0.01).collect();
        data[7] = 1e6;
        let n = normalize_map(&Tensor::vector(data));
        assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(n.data()[7], 1.0);
        assert_eq!(normalize_map(&Tensor::zeros(&[3, 3])), Tensor::zeros(&[3, 3]));
    }
}
