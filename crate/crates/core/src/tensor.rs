//! Dense tensors and the `RGTN` binary container.
//!
//! `RGTN` layout (little-endian):
//!
//! ```text
//! magic  b"RGTN"
//! dtype  u8      0 = f32, 1 = u8, 2 = i32
//! rank   u32
//! dims   rank x u32
//! data   product(dims) elements of dtype
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numerics::NumericFormat;

pub const RGTN_MAGIC: &[u8; 4] = b"RGTN";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {got} values were given")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("bad tensor container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A dense row-major tensor whose values sit on the grid of `format`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    format: NumericFormat,
    values: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, quantizing every value onto `format` (saturating).
    pub fn new(shape: Vec<usize>, format: NumericFormat, values: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                got: values.len(),
            });
        }
        let values = values.into_iter().map(|v| format.quantize(v)).collect();
        Ok(Tensor {
            shape,
            format,
            values,
        })
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self, TensorError> {
        Tensor::new(
            shape,
            NumericFormat::Float32,
            values.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn zeros(shape: Vec<usize>, format: NumericFormat) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            format,
            values: vec![0.0; n],
        }
    }

    /// Values already known to lie on the format grid.
    pub(crate) fn from_quantized(shape: Vec<usize>, format: NumericFormat, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            shape,
            format,
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn format(&self) -> NumericFormat {
        self.format
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Re-quantizes into another format.
    pub fn to_format(&self, format: NumericFormat) -> Tensor {
        if format == self.format {
            return self.clone();
        }
        Tensor {
            shape: self.shape.clone(),
            format,
            values: self.values.iter().map(|&v| format.quantize(v)).collect(),
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.values.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                got: self.values.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Index of the largest element; ties go to the lowest index. NaN never wins.
    pub fn argmax(&self) -> Option<usize> {
        top_k(&self.values, 1).first().copied()
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bit-level equality (distinguishes NaN payloads and signed zeros).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Indices of the `k` largest values, ties broken toward the lowest index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Element type tag of an `RGTN` payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgtnDtype {
    F32 = 0,
    U8 = 1,
    I32 = 2,
}

impl RgtnDtype {
    fn from_tag(tag: u8) -> Result<Self, TensorError> {
        match tag {
            0 => Ok(RgtnDtype::F32),
            1 => Ok(RgtnDtype::U8),
            2 => Ok(RgtnDtype::I32),
            t => Err(TensorError::Format(format!("unknown dtype tag {t}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            RgtnDtype::U8 => 1,
            RgtnDtype::F32 | RgtnDtype::I32 => 4,
        }
    }
}

/// Raw contents of an `RGTN` file, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dtype: RgtnDtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_rgtn<W: Write>(mut w: W, dtype: RgtnDtype, shape: &[usize], data: &[f64]) -> Result<(), TensorError> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(TensorError::ElementCount {
            shape: shape.to_vec(),
            expected,
            got: data.len(),
        });
    }
    w.write_all(RGTN_MAGIC)?;
    w.write_all(&[dtype as u8])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        match dtype {
            RgtnDtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            RgtnDtype::U8 => w.write_all(&[v.clamp(0.0, 255.0) as u8])?,
            RgtnDtype::I32 => w.write_all(&(v as i32).to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn read_rgtn<R: Read>(mut r: R) -> Result<RawTensor, TensorError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_rgtn(&buf)
}

pub fn parse_rgtn(buf: &[u8]) -> Result<RawTensor, TensorError> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != RGTN_MAGIC {
        return Err(TensorError::Format("missing RGTN magic".into()));
    }
    let dtype = RgtnDtype::from_tag(cur.take(1)?[0])?;
    let rank = cur.u32()? as usize;
    let shape = (0..rank)
        .map(|_| cur.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let payload = cur.take(n * dtype.size())?;
    let data = match dtype {
        RgtnDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
        RgtnDtype::U8 => payload.iter().map(|&b| f64::from(b)).collect(),
        RgtnDtype::I32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    };
    if cur.pos != buf.len() {
        return Err(TensorError::Format(format!(
            "{} trailing bytes after payload",
            buf.len() - cur.pos
        )));
    }
    Ok(RawTensor { dtype, shape, data })
}

pub fn save_rgtn(path: &Path, dtype: RgtnDtype, shape: &[usize], data: &[f64]) -> Result<(), TensorError> {
    let mut bytes = Vec::new();
    write_rgtn(&mut bytes, dtype, shape, data)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_rgtn(path: &Path) -> Result<RawTensor, TensorError> {
    parse_rgtn(&fs::read(path)?)
}

pub(crate) struct Cursor<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TensorError::Format("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, TensorError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 2], NumericFormat::Float32, vec![0.0; 3]).is_err());
        let t = Tensor::new(vec![1, 3], NumericFormat::fixed16(), vec![0.1, 2.75, 1e9]).unwrap();
        assert_eq!(t.values(), &[0.0, 2.75, 8191.75]);
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::from_f32(vec![4], &[1.0, 3.0, 3.0, f32::NAN]).unwrap();
        assert_eq!(t.argmax(), Some(1));
        assert_eq!(top_k(&[0.5, 2.0, 1.0, 2.0], 3), vec![1, 3, 2]);
    }

    #[test]
    fn rgtn_round_trip() {
        let data = vec![1.5, -2.0, 0.25, 7.0, 8.0, 9.0];
        let mut bytes = Vec::new();
        write_rgtn(&mut bytes, RgtnDtype::F32, &[2, 3], &data).unwrap();
        assert_eq!(&bytes[..4], RGTN_MAGIC);
        let raw = parse_rgtn(&bytes).unwrap();
        assert_eq!(raw.shape, vec![2, 3]);
        assert_eq!(raw.data, data);
    }

    #[test]
    fn rgtn_rejects_truncation_and_trailing_bytes() {
        let mut bytes = Vec::new();
        write_rgtn(&mut bytes, RgtnDtype::U8, &[3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(parse_rgtn(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(parse_rgtn(&bytes).is_err());
        assert!(parse_rgtn(b"NOPE").is_err());
    }
}
