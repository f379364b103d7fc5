//! File formats: `.ntf` tensors, binary `.pgm` images, CSV tables.
//!
//! Every writer goes through [`write_atomic`], which writes a sibling
//! temporary file and renames it over the target.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NTF_MAGIC: &[u8] = b"NTF1\n";

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct NtfHeader {
    dtype: String,
    shape: Vec<usize>,
}

fn ntf_corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        format: "ntf",
        reason: reason.into(),
    }
}

pub fn ntf_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let header = NtfHeader {
        dtype: "f64".into(),
        shape: t.shape().to_vec(),
    };
    let mut out = NTF_MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header)?);
    out.push(b'\n');
    out.reserve(8 * t.numel());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn ntf_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let rest = bytes.strip_prefix(NTF_MAGIC).ok_or_else(|| {
        if bytes.starts_with(b"NTF") {
            Error::FormatVersion {
                format: "ntf",
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
                expected: "NTF1".into(),
            }
        } else {
            ntf_corrupt("bad magic")
        }
    })?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ntf_corrupt("missing header terminator"))?;
    let header: NtfHeader =
        serde_json::from_slice(&rest[..newline]).map_err(|e| ntf_corrupt(format!("header: {e}")))?;
    if header.dtype != "f64" {
        return Err(ntf_corrupt(format!("unsupported dtype {}", header.dtype)));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(ntf_corrupt(format!("empty shape {:?}", header.shape)));
    }
    let payload = &rest[newline + 1..];
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| ntf_corrupt("shape overflows"))?;
    if payload.len() != count.saturating_mul(8) {
        return Err(ntf_corrupt(format!(
            "shape {:?} needs {} payload bytes, found {}",
            header.shape,
            count.saturating_mul(8),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(header.shape, data)
}

pub fn ntf_write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path, &ntf_to_bytes(t)?)
}

pub fn ntf_read(path: impl AsRef<Path>) -> Result<Tensor> {
    ntf_from_bytes(&read_file(path.as_ref())?)
}

/// Binary P5 image of a `[height, width]` tensor. Values are mapped linearly
/// from `[lo, hi]` to `0..=255`, clamping outside the range.
pub fn pgm_to_bytes(image: &Tensor, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let (h, w) = image.dims2("pgm")?;
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty pgm range [{lo}, {hi}]")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        let u = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        if u.is_nan() {
            0
        } else {
            (u * 255.0).round() as u8
        }
    }));
    Ok(out)
}

pub fn pgm_write(path: impl AsRef<Path>, image: &Tensor, lo: f64, hi: f64) -> Result<()> {
    write_atomic(path, &pgm_to_bytes(image, lo, hi)?)
}

/// Reads a P5 file as `[height, width]` gray levels in `[0, 1]`.
pub fn pgm_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let corrupt = |r: &str| Error::Corrupt {
        format: "pgm",
        reason: r.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("header"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(corrupt("only P5 with maxval 255 is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| corrupt("width"))?;
    let h: usize = fields[2].parse().map_err(|_| corrupt("height"))?;
    let pixels = bytes.get(pos + 1..).ok_or_else(|| corrupt("missing pixels"))?;
    if pixels.len() != w * h {
        return Err(corrupt("pixel count does not match header"));
    }
    Tensor::new(vec![h, w], pixels.iter().map(|&p| p as f64 / 255.0).collect())
}

pub fn pgm_read(path: impl AsRef<Path>) -> Result<Tensor> {
    pgm_from_bytes(&read_file(path.as_ref())?)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Corrupt {
        format: "csv",
        reason: format!("{}: {e}", path.display()),
    }
}

/// Serializes a header and rows as CSV.
pub fn csv_to_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Corrupt {
        format: "csv",
        reason: e.to_string(),
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Error::Corrupt {
        format: "csv",
        reason: e.to_string(),
    })
}

/// Appends one row, writing `header` first if the file is new or empty.
/// An existing file must carry the same header.
pub fn csv_append(path: impl AsRef<Path>, header: &[&str], row: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.is_empty() {
        bytes = csv_to_bytes(header, &[])?;
    } else {
        let (found, _) = csv_read_bytes(&bytes, path)?;
        if found != header {
            return Err(Error::Corrupt {
                format: "csv",
                reason: format!("{}: header {found:?} differs from {header:?}", path.display()),
            });
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(row).map_err(|e| csv_err(path, e))?;
    bytes.extend(w.into_inner().map_err(|e| Error::io(path, e.into_error()))?);
    write_atomic(path, &bytes)
}

fn csv_read_bytes(bytes: &[u8], path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

/// Header and rows of a CSV file.
pub fn csv_read(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let path = path.as_ref();
    csv_read_bytes(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ntf_round_trip_is_bit_exact() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 3.0]).unwrap();
        let back = ntf_from_bytes(&ntf_to_bytes(&t).unwrap()).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn ntf_header_layout() {
        let bytes = ntf_to_bytes(&Tensor::vector(vec![1.0])).unwrap();
        assert!(bytes.starts_with(b"NTF1\n{\"dtype\":\"f64\",\"shape\":[1]}\n"));
        assert_eq!(&bytes[bytes.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn ntf_rejects_empty_shape_and_bad_length() {
        let empty = b"NTF1\n{\"dtype\":\"f64\",\"shape\":[]}\n".to_vec();
        assert!(matches!(ntf_from_bytes(&empty), Err(Error::Corrupt { .. })));
        let mut short = ntf_to_bytes(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        short.pop();
        assert!(matches!(ntf_from_bytes(&short), Err(Error::Corrupt { .. })));
        let future = b"NTF2\n{}\n".to_vec();
        assert!(matches!(ntf_from_bytes(&future), Err(Error::FormatVersion { .. })));
    }

    #[test]
    fn pgm_round_trip() {
        let img = Tensor::new(vec![2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let bytes = pgm_to_bytes(&img, 0.0, 1.0).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = pgm_from_bytes(&bytes).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn atomic_write_and_csv_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        csv_append(&path, &["a", "b"], &["1".into(), "x,y".into()]).unwrap();
        csv_append(&path, &["a", "b"], &["2".into(), "z".into()]).unwrap();
        let (header, rows) = csv_read(&path).unwrap();
        assert_eq!(header, ["a", "b"]);
        assert_eq!(rows, vec![vec!["1", "x,y"], vec!["2", "z"]]);
        assert!(csv_append(&path, &["a", "c"], &["3".into(), "w".into()]).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
