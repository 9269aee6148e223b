//! Reference kernels. Layout is NHWC with batch 1 (larger batches loop).
//!
//! Multiply-accumulate kernels run in native `f32` for the float datapath and
//! in `f64` for fixed point, accumulating row-major with no reassociation.
//! Every kernel returns unquantized values; the caller rounds them onto the
//! output format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, Padding, WeightTensor};
use crate::numerics::{clip_unchecked, CorrectionPolicy};

/// Scalar type a MAC loop accumulates in.
pub(crate) trait Lane: Copy {
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn zero() -> Self;
    fn mac(self, a: Self, b: Self) -> Self;
    fn to_f64(self) -> f64;
}

impl Lane for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn mac(self, a: Self, b: Self) -> Self {
        self + a * b
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Lane for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn mac(self, a: Self, b: Self) -> Self {
        self + a * b
    }
    fn to_f64(self) -> f64 {
        self
    }
}

pub(crate) fn conv2d<L: Lane>(
    x: &[f64],
    in_shape: &[usize],
    kernel: &WeightTensor,
    stride: usize,
    padding: Padding,
    out_shape: &[usize],
) -> Vec<f64> {
    let (batch, h, w, cin) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (kh, kw, cout) = (kernel.shape[0], kernel.shape[1], kernel.shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (pad_top, pad_left) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => {
            let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
            let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
            (pad_h / 2, pad_w / 2)
        }
    };
    let xs: Vec<L> = x.iter().map(|&v| L::from_f64(v)).collect();
    let ks: Vec<L> = kernel.data.iter().map(|&v| L::from_f32(v)).collect();
    let mut out = Vec::with_capacity(batch * oh * ow * cout);
    // every output channel accumulates over (ky, kx, ci) in ascending order;
    // only the channel loop is innermost
    let mut acc = vec![L::zero(); cout];
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                acc.fill(L::zero());
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xbase = ((n * h + iy as usize) * w + ix as usize) * cin;
                        let kbase = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = xs[xbase + ci];
                            let row = &ks[kbase + ci * cout..kbase + (ci + 1) * cout];
                            for (a, &k) in acc.iter_mut().zip(row) {
                                *a = a.mac(xv, k);
                            }
                        }
                    }
                }
                out.extend(acc.iter().map(|a| a.to_f64()));
            }
        }
    }
    out
}

pub(crate) fn fully_connected<L: Lane>(x: &[f64], in_shape: &[usize], weights: &WeightTensor) -> Vec<f64> {
    let (batch, fan_in) = (in_shape[0], in_shape[1]);
    let fan_out = weights.shape[1];
    let ws: Vec<L> = weights.data.iter().map(|&v| L::from_f32(v)).collect();
    let mut out = Vec::with_capacity(batch * fan_out);
    let mut acc = vec![L::zero(); fan_out];
    for n in 0..batch {
        acc.fill(L::zero());
        for (i, &v) in x[n * fan_in..(n + 1) * fan_in].iter().enumerate() {
            let xi = L::from_f64(v);
            for (a, &w) in acc.iter_mut().zip(&ws[i * fan_out..(i + 1) * fan_out]) {
                *a = a.mac(xi, w);
            }
        }
        out.extend(acc.iter().map(|a| a.to_f64()));
    }
    out
}

pub(crate) fn bias_add(x: &[f64], bias: &WeightTensor, float32: bool) -> Vec<f64> {
    let c = bias.data.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let b = bias.data[i % c];
            if float32 {
                f64::from(v as f32 + b)
            } else {
                v + f64::from(b)
            }
        })
        .collect()
}

/// NaN-propagating rectifier.
pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect()
}

pub(crate) fn map(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

pub(crate) fn pool(x: &[f64], in_shape: &[usize], out_shape: &[usize], window: usize, stride: usize, max: bool) -> Vec<f64> {
    let (batch, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(batch * oh * ow * c);
    let count = (window * window) as f64;
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
                    for ky in 0..window {
                        for kx in 0..window {
                            let v = x[((n * h + oy * stride + ky) * w + ox * stride + kx) * c + ch];
                            if max {
                                if v.is_nan() || v > acc {
                                    acc = v;
                                    if v.is_nan() {
                                        break;
                                    }
                                }
                            } else {
                                acc += v;
                            }
                        }
                        if acc.is_nan() {
                            break;
                        }
                    }
                    out.push(if max { acc } else { acc / count });
                }
            }
        }
    }
    out
}

pub(crate) fn concat(parts: &[(&[f64], &[usize])], axis: usize) -> Vec<f64> {
    let outer: usize = parts[0].1[..axis].iter().product();
    let total: usize = parts.iter().map(|(v, _)| v.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (values, shape) in parts {
            let chunk: usize = shape[axis..].iter().product();
            out.extend_from_slice(&values[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

/// Softmax over the last axis.
pub(crate) fn softmax(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let inner = *shape.last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(inner.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

pub(crate) fn clip(x: &[f64], low: f64, up: f64, policy: CorrectionPolicy, node: NodeId) -> Vec<f64> {
    let seed = match policy {
        CorrectionPolicy::RandomInRange { seed } => crate::campaign::mix_seed(seed, u64::from(node)),
        _ => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.iter().map(|&v| clip_unchecked(v, low, up, policy, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        assert_eq!(relu(&[-1.0, 0.0, 3.0]), vec![0.0, 0.0, 3.0]);
        assert!(relu(&[f64::NAN])[0].is_nan());
    }

    #[test]
    fn identity_1x1_conv_copies_channels() {
        // one input channel, n = 3 output channels, all weights 1
        let k = WeightTensor::new(vec![1, 1, 1, 3], vec![1.0; 3]).unwrap();
        let out = conv2d::<f32>(&[2.0], &[1, 1, 1, 1], &k, 1, Padding::Same, &[1, 1, 1, 3]);
        assert_eq!(out, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn same_padding_3x3_sums_neighbourhood() {
        let k = WeightTensor::new(vec![3, 3, 1, 1], vec![1.0; 9]).unwrap();
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let out = conv2d::<f64>(&x, &[1, 3, 3, 1], &k, 1, Padding::Same, &[1, 3, 3, 1]);
        assert_eq!(out[4], 45.0);
        assert_eq!(out[0], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn pools() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let shape = [1, 4, 4, 1];
        assert_eq!(pool(&x, &shape, &[1, 2, 2, 1], 2, 2, true), vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(pool(&x, &shape, &[1, 2, 2, 1], 2, 2, false), vec![2.5, 4.5, 10.5, 12.5]);
        let mut with_nan = x.clone();
        with_nan[0] = f64::NAN;
        assert!(pool(&with_nan, &shape, &[1, 2, 2, 1], 2, 2, true)[0].is_nan());
    }

    #[test]
    fn concat_interleaves_along_axis() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [9.0, 8.0];
        let out = concat(&[(&a, &[2, 2]), (&b, &[2, 1])], 1);
        assert_eq!(out, vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        assert_eq!(concat(&[(&a, &[2, 2]), (&b, &[1, 2])], 0), vec![1.0, 2.0, 3.0, 4.0, 9.0, 8.0]);
    }

    #[test]
    fn softmax_normalizes() {
        let out = softmax(&[1.0, 2.0, 3.0, -50.0], &[1, 4]);
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fc_small() {
        let w = WeightTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(fully_connected::<f32>(&[1.0, 1.0], &[1, 2], &w), vec![4.0, 6.0]);
    }
}
