//! The `RGWB` weights blob.
//!
//! ```text
//! magic  b"RGWB"
//! count  u32
//! count records, sorted by name:
//!   name_len u32, name (UTF-8), dtype u8 (0 = f32), rank u32, dims rank x u32,
//!   payload product(dims) x f32
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;

use super::GraphError;
use crate::tensor::{Cursor, TensorError};

pub const RGWB_MAGIC: &[u8; 4] = b"RGWB";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(WeightTensor { shape, data })
    }
}

/// Named weight tensors, kept sorted so serialization is deterministic.
pub type Weights = BTreeMap<String, WeightTensor>;

pub fn render_weights(weights: &Weights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RGWB_MAGIC);
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for (name, w) in weights {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(w.shape.len() as u32).to_le_bytes());
        for &d in &w.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &w.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn parse_weights(buf: &[u8]) -> Result<Weights, GraphError> {
    let bad = |e: TensorError| GraphError::Weights(e.to_string());
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4).map_err(bad)? != RGWB_MAGIC {
        return Err(GraphError::Weights("missing RGWB magic".into()));
    }
    let count = cur.u32().map_err(bad)?;
    let mut weights = Weights::new();
    for _ in 0..count {
        let name_len = cur.u32().map_err(bad)? as usize;
        let name = std::str::from_utf8(cur.take(name_len).map_err(bad)?)
            .map_err(|_| GraphError::Weights("weight name is not UTF-8".into()))?
            .to_string();
        let dtype = cur.take(1).map_err(bad)?[0];
        if dtype != DTYPE_F32 {
            return Err(GraphError::Weights(format!("'{name}': unsupported dtype tag {dtype}")));
        }
        let rank = cur.u32().map_err(bad)? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()
            .map_err(bad)?;
        let n: usize = shape.iter().product();
        let payload = cur
            .take(n.checked_mul(4).ok_or_else(|| GraphError::Weights("size overflow".into()))?)
            .map_err(bad)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if weights.insert(name.clone(), WeightTensor { shape, data }).is_some() {
            return Err(GraphError::Weights(format!("duplicate entry '{name}'")));
        }
    }
    if cur.pos != buf.len() {
        return Err(GraphError::Weights("trailing bytes after last record".into()));
    }
    Ok(weights)
}
