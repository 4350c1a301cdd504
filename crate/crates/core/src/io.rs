//! On-disk format for volumes, masks and distance fields.
//!
//! Each dataset is a raw little-endian binary file plus a JSON sidecar that
//! carries the shape. The sidecar lives next to the data file with its
//! extension replaced by `.json`, so `liver.raw` pairs with `liver.json`.
//! Payloads are written in the in-memory x-fastest order, which makes
//! round-trips bit-exact.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    dtype: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
}

fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

fn read_sidecar(data: &Path, want_dtype: &str) -> Result<Sidecar> {
    let path = sidecar_path(data);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::format(format!("missing or unreadable sidecar {}: {e}", path.display()))
    })?;
    let sc: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("bad sidecar {}: {e}", path.display())))?;
    if sc.dtype != want_dtype {
        return Err(Error::format(format!(
            "sidecar {} has dtype {:?}, expected {:?}",
            path.display(),
            sc.dtype,
            want_dtype
        )));
    }
    if sc.dims.iter().any(|&d| d == 0) {
        return Err(Error::format(format!("sidecar {} has zero dim", path.display())));
    }
    Ok(sc)
}

fn write_sidecar(data: &Path, sc: &Sidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sc)
        .map_err(|e| Error::format(format!("sidecar serialization: {e}")))?;
    fs::write(sidecar_path(data), text)?;
    Ok(())
}

fn read_payload(data: &Path, expect_bytes: usize) -> Result<Vec<u8>> {
    let mut file = fs::File::open(data)?;
    let mut buf = Vec::with_capacity(expect_bytes);
    file.read_to_end(&mut buf)?;
    if buf.len() != expect_bytes {
        return Err(Error::format(format!(
            "payload {} is {} bytes, sidecar dims require {}",
            data.display(),
            buf.len(),
            expect_bytes
        )));
    }
    Ok(buf)
}

fn f32s_to_bytes(vals: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&f32s_to_bytes(vol.data()))?;
    w.flush()?;
    write_sidecar(path, &Sidecar { dims: vol.dims(), dtype: "f32".into(), tau: None })
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let sc = read_sidecar(path, "f32")?;
    let n = sc.dims[0] * sc.dims[1] * sc.dims[2];
    let bytes = read_payload(path, n * 4)?;
    Volume::from_vec(sc.dims, bytes_to_f32s(&bytes))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(mask.data())?;
    w.flush()?;
    write_sidecar(path, &Sidecar { dims: mask.dims(), dtype: "u8".into(), tau: None })
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let sc = read_sidecar(path, "u8")?;
    let n = sc.dims[0] * sc.dims[1] * sc.dims[2];
    let bytes = read_payload(path, n)?;
    Mask::from_vec(sc.dims, bytes)
}

/// The field sidecar also records the truncation radius so a reader can
/// interpret clamped values without the producing config.
pub fn write_field(path: &Path, field: &DistanceField) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&f32s_to_bytes(field.values().data()))?;
    w.flush()?;
    write_sidecar(
        path,
        &Sidecar { dims: field.values().dims(), dtype: "f32".into(), tau: Some(field.tau()) },
    )
}

pub fn read_field(path: &Path) -> Result<DistanceField> {
    let sc = read_sidecar(path, "f32")?;
    let tau = sc
        .tau
        .ok_or_else(|| Error::format(format!("sidecar for {} lacks tau", path.display())))?;
    let n = sc.dims[0] * sc.dims[1] * sc.dims[2];
    let bytes = read_payload(path, n * 4)?;
    DistanceField::from_values(Volume::from_vec(sc.dims, bytes_to_f32s(&bytes))?, tau)
}
