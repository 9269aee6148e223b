//! Dataset files and synthetic generators.
//!
//! IDX files follow the MNIST layout: big-endian magic `0x00000803` for a
//! `[n, rows, cols]` u8 image array and `0x00000801` for a `[n]` u8 label
//! array. Pixels are scaled to `[0, 1]`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Dataset, Target};
use crate::tensor::{parse_rgtn, save_rgtn, RawTensor, RgtnDtype, Tensor, TensorError, RGTN_MAGIC};

/// Bumped whenever a generator's output changes for a given seed.
pub const SYNTHETIC_VERSION: u32 = 1;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX file: {0}")]
    Idx(String),
    #[error("dataset: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(buf: &[u8]) -> Result<IdxArray, DataError> {
    if buf.len() < 4 || buf[0] != 0 || buf[1] != 0 {
        return Err(DataError::Idx("missing magic".into()));
    }
    if buf[2] != 0x08 {
        return Err(DataError::Idx(format!("unsupported element type 0x{:02x}", buf[2])));
    }
    let rank = buf[3] as usize;
    let header = 4 + 4 * rank;
    if buf.len() < header {
        return Err(DataError::Idx("truncated header".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let len: usize = dims.iter().product();
    if buf.len() != header + len {
        return Err(DataError::Idx(format!(
            "payload is {} bytes, dims {dims:?} need {len}",
            buf.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: buf[header..].to_vec(),
    })
}

pub fn render_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn magic(buf: &[u8]) -> u32 {
    buf.get(..4).map_or(0, |m| u32::from_be_bytes(m.try_into().unwrap()))
}

pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    load_dataset(images, labels)
}

/// Loads inputs and targets from IDX or `RGTN` files, detected by magic.
///
/// `RGTN` inputs are `[n, ...]` and each sample becomes a `[1, ...]` tensor;
/// u8 payloads are scaled by 1/255. Integer targets are class labels, float
/// targets regression values.
pub fn load_dataset(inputs: &Path, targets: &Path) -> Result<Dataset, DataError> {
    let xs = read(inputs)?;
    let ys = read(targets)?;
    let inputs = if xs.starts_with(RGTN_MAGIC) {
        split_samples(parse_rgtn(&xs)?)?
    } else if magic(&xs) == IDX_IMAGES {
        let a = parse_idx(&xs)?;
        let raw = RawTensor {
            dtype: RgtnDtype::U8,
            shape: vec![a.dims[0], a.dims[1], a.dims[2], 1],
            data: a.data.iter().map(|&b| f64::from(b)).collect(),
        };
        split_samples(raw)?
    } else {
        return Err(DataError::Idx(format!("{}: unrecognized input file", inputs.display())));
    };
    let targets: Vec<Target> = if ys.starts_with(RGTN_MAGIC) {
        let t = parse_rgtn(&ys)?;
        t.data
            .iter()
            .map(|&v| match t.dtype {
                RgtnDtype::F32 => Target::Value(v),
                _ => Target::Class(v as usize),
            })
            .collect()
    } else if magic(&ys) == IDX_LABELS {
        parse_idx(&ys)?.data.iter().map(|&b| Target::Class(b as usize)).collect()
    } else {
        return Err(DataError::Idx(format!("{}: unrecognized target file", targets.display())));
    };
    if inputs.len() != targets.len() {
        return Err(DataError::Mismatch(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    Ok(Dataset::new(inputs, targets))
}

fn split_samples(raw: RawTensor) -> Result<Vec<Tensor>, DataError> {
    let Some((&n, rest)) = raw.shape.split_first() else {
        return Err(DataError::Mismatch("scalar input tensor".into()));
    };
    let per: usize = rest.iter().product();
    let scale = if raw.dtype == RgtnDtype::U8 { 1.0 / 255.0 } else { 1.0 };
    let mut shape = vec![1];
    shape.extend_from_slice(rest);
    (0..n)
        .map(|i| {
            let v: Vec<f32> = raw.data[i * per..(i + 1) * per].iter().map(|&x| (x * scale) as f32).collect();
            Ok(Tensor::from_f32(shape.clone(), &v)?)
        })
        .collect()
}

/// Writes `inputs` as one f32 `RGTN` tensor `[n, ...]` and targets as i32
/// labels or f32 values.
pub fn save_rgtn_dataset(data: &Dataset, inputs: &Path, targets: &Path) -> Result<(), DataError> {
    let Some(first) = data.inputs.first() else {
        return Err(DataError::Mismatch("empty dataset".into()));
    };
    let mut shape = vec![data.len()];
    shape.extend_from_slice(&first.shape()[1..]);
    let xs: Vec<f64> = data.inputs.iter().flat_map(|t| t.values().iter().copied()).collect();
    save_rgtn(inputs, RgtnDtype::F32, &shape, &xs)?;
    let classes = data.targets.iter().all(|t| matches!(t, Target::Class(_)));
    let ys: Vec<f64> = data
        .targets
        .iter()
        .map(|t| match t {
            Target::Class(c) => *c as f64,
            Target::Value(v) => *v,
        })
        .collect();
    let dtype = if classes { RgtnDtype::I32 } else { RgtnDtype::F32 };
    save_rgtn(targets, dtype, &[data.len()], &ys)?;
    Ok(())
}

/// Two classes in 64 dimensions, split by the sign of
/// `sum(x[..32]) - sum(x[32..])` with a margin of 2.
pub fn separable_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::default();
    while data.len() < n {
        let x: Vec<f32> = (0..64).map(|_| rng.gen::<f32>()).collect();
        let score: f32 = x[..32].iter().sum::<f32>() - x[32..].iter().sum::<f32>();
        if score.abs() < 2.0 {
            continue;
        }
        data.inputs.push(Tensor::from_f32(vec![1, 64], &x).expect("shape"));
        data.targets.push(Target::Class(usize::from(score > 0.0)));
    }
    data
}

/// Grayscale `size x size` images of a line leaving the bottom centre at a
/// steering angle in `[-60, 60]` degrees (0 is straight up, positive to the
/// right), with light uniform noise. Targets are the angle in degrees.
pub fn steering_dataset(n: usize, seed: u64, size: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::default();
    let (cx, cy) = ((size as f64 - 1.0) / 2.0, size as f64 - 1.0);
    for _ in 0..n {
        let deg = f64::from(rng.gen_range(-60.0f32..60.0));
        let (s, c) = (deg * PI / 180.0).sin_cos();
        let (dx, dy) = (s, -c);
        let mut img = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 - cx, y as f64 - cy);
                let t = (px * dx + py * dy).max(0.0);
                let d2 = (px - t * dx).powi(2) + (py - t * dy).powi(2);
                let v = (-d2 / (2.0 * 0.7 * 0.7)).exp() + 0.05 * rng.gen::<f64>();
                img.push(v.min(1.0) as f32);
            }
        }
        data.inputs.push(Tensor::from_f32(vec![1, size, size, 1], &img).expect("shape"));
        data.targets.push(Target::Value(deg));
    }
    data
}
