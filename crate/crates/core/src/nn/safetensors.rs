//! Reader and writer for the safetensors checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F64,
    F32,
    F16,
    BF16,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn f16_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = i32::from((bits >> 10) & 0x1f);
    let frac = f64::from(bits & 0x3ff);
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    }
}

/// Reads every tensor in a safetensors file, widening to `f64`.
pub fn read(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("file too short for a safetensors header"));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8usize.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("header length exceeds file size"))?;
    let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&bytes[8..body_start])?;
    let body = &bytes[body_start..];
    let mut out = Vec::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let e: Entry = serde_json::from_value(value)?;
        let [start, end] = e.data_offsets;
        let count: usize = e.shape.iter().product();
        if end < start || end > body.len() || end - start != count * e.dtype.width() {
            return Err(bad(&format!("tensor `{name}` has inconsistent offsets")));
        }
        let raw = &body[start..end];
        let data = match e.dtype {
            Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            Dtype::F16 => raw.chunks_exact(2).map(|c| f16_to_f64(u16::from_le_bytes([c[0], c[1]]))).collect(),
            Dtype::BF16 => raw
                .chunks_exact(2)
                .map(|c| f64::from(f32::from_bits(u32::from(u16::from_le_bytes([c[0], c[1]])) << 16)))
                .collect(),
        };
        out.push(NamedTensor { name, shape: e.shape, data });
    }
    Ok(out)
}

/// Writes all parameters as `F64` tensors.
pub fn write(path: &Path, params: &ParamSet) -> Result<()> {
    let mut header = BTreeMap::new();
    let mut body = Vec::with_capacity(params.num_scalars() * 8);
    for (_, name, t) in params.iter() {
        let start = body.len();
        for v in &t.data {
            body.extend_from_slice(&v.to_le_bytes());
        }
        header.insert(
            name.to_string(),
            serde_json::to_value(Entry {
                dtype: Dtype::F64,
                shape: t.shape.clone(),
                data_offsets: [start, body.len()],
            })?,
        );
    }
    let mut json = serde_json::to_vec(&header)?;
    while json.len() % 8 != 0 {
        json.push(b' ');
    }
    let mut bytes = Vec::with_capacity(8 + json.len() + body.len());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&body);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Copies checkpoint tensors into `params`.
///
/// Names are matched exactly, then with a leading `bert.` added or removed,
/// and legacy `gamma`/`beta` suffixes are mapped to `weight`/`bias`. Returns
/// the names of parameters the checkpoint did not provide.
pub fn load_into(params: &mut ParamSet, tensors: Vec<NamedTensor>) -> Result<Vec<String>> {
    let mut filled = vec![false; params.len()];
    for t in tensors {
        let name = t
            .name
            .replace("LayerNorm.gamma", "LayerNorm.weight")
            .replace("LayerNorm.beta", "LayerNorm.bias");
        let candidates = [
            name.clone(),
            format!("bert.{name}"),
            name.strip_prefix("bert.").unwrap_or(&name).to_string(),
        ];
        if let Some(id) = candidates.iter().find_map(|c| params.id(c)) {
            let target = params.name(id).to_string();
            params.assign(&target, &t.shape, t.data)?;
            filled[id.0] = true;
        }
    }
    Ok(params
        .iter()
        .filter(|(id, _, _)| !filled[id.0])
        .map(|(_, n, _)| n.to_string())
        .collect())
}
