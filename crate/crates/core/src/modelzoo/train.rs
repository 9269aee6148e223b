//! Mini-batch gradient descent with graph backpropagation.
//!
//! The forward pass reuses the float32 engine kernels; gradients are computed
//! in `f64`. Per-sample gradients may be computed on any number of threads
//! but are summed in sample order, so weights depend only on the spec and
//! the data.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Architecture, Dataset, Target};
use crate::campaign::mix_seed;
use crate::engine::kernels;
use crate::graph::{Graph, GraphError, Node, OpKind, Padding, TaskSpec, Weights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (loss {loss}) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("empty training set")]
    NoData,
    #[error("target does not match the task at sample {0}")]
    Target(usize),
    #[error("invalid train spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainSpec {
    /// Hyperparameters that train each shipped architecture to a usable model.
    pub fn defaults(architecture: Architecture) -> Self {
        let (epochs, learning_rate, batch_size) = match architecture {
            Architecture::TinyMlp => (20, 0.05, 16),
            Architecture::LenetMini | Architecture::LenetMiniTanh => (6, 0.05, 16),
            Architecture::SteerMini | Architecture::SteerMiniRad => (20, 0.02, 16),
            Architecture::ToyChain => (0, 0.0, 1),
        };
        TrainSpec {
            architecture,
            epochs,
            learning_rate,
            batch_size,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub graph: Graph,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn train(spec: &TrainSpec, data: &Dataset) -> Result<TrainReport, TrainError> {
    let initial = spec.architecture.build(spec.seed);
    if !spec.architecture.is_trainable() || spec.epochs == 0 {
        return Ok(TrainReport {
            graph: initial,
            epoch_loss: Vec::new(),
        });
    }
    if data.is_empty() {
        return Err(TrainError::NoData);
    }
    if spec.batch_size == 0 || !(spec.learning_rate > 0.0) {
        return Err(TrainError::Spec("batch size and learning rate must be positive".into()));
    }
    let loss = Loss::for_task(initial.task(), data)?;
    let mut params: Weights = (**initial.weights()).clone();
    let names: Vec<String> = params.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, u64::MAX));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(spec.batch_size).enumerate() {
            let per_sample: Vec<(f64, Grads)> = batch
                .par_iter()
                .map(|&i| sample_gradient(&initial, &params, &data.inputs[i].values().to_vec(), &loss, i, data))
                .collect();
            let mut sum: Grads = BTreeMap::new();
            let mut batch_loss = 0.0;
            for (l, g) in per_sample {
                batch_loss += l;
                for (name, grad) in g {
                    let acc = sum.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
                    for (a, v) in acc.iter_mut().zip(grad) {
                        *a += v;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            total += batch_loss;
            let scale = spec.learning_rate / batch.len() as f64;
            for name in &names {
                let Some(g) = sum.get(name) else { continue };
                let w = params.get_mut(name).expect("known parameter");
                for (p, d) in w.data.iter_mut().zip(g) {
                    *p = (f64::from(*p) - scale * d) as f32;
                }
            }
        }
        epoch_loss.push(total / data.len() as f64);
    }
    let graph = Graph::new(initial.specs(), initial.output_id(), initial.task().clone(), Arc::new(params))?;
    Ok(TrainReport { graph, epoch_loss })
}

type Grads = BTreeMap<String, Vec<f64>>;

enum Loss {
    /// Softmax cross-entropy on the logits feeding the output (or the output
    /// itself when it is not a softmax).
    CrossEntropy,
    /// Squared error divided by `scale^2`.
    Squared { scale: f64 },
}

impl Loss {
    fn for_task(task: &TaskSpec, data: &Dataset) -> Result<Self, TrainError> {
        match task {
            TaskSpec::Classification { .. } => Ok(Loss::CrossEntropy),
            TaskSpec::Regression { .. } => {
                let vals: Vec<f64> = data
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| match t {
                        Target::Value(v) => Ok(*v),
                        Target::Class(_) => Err(TrainError::Target(i)),
                    })
                    .collect::<Result<_, _>>()?;
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                Ok(Loss::Squared {
                    scale: var.sqrt().max(1e-6),
                })
            }
        }
    }
}

fn sample_gradient(graph: &Graph, params: &Weights, x: &[f64], loss: &Loss, index: usize, data: &Dataset) -> (f64, Grads) {
    let nodes = graph.nodes();
    let pos = |id| graph.position(id).expect("validated");
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(nodes.len());
    for node in nodes {
        let ins: Vec<&[f64]> = node.inputs.iter().map(|&i| outs[pos(i)].as_slice()).collect();
        let y = forward(graph, node, params, &ins, x);
        outs.push(y);
    }
    let mut start = pos(graph.output_id());
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    let l = match (loss, data.targets[index]) {
        (Loss::CrossEntropy, Target::Class(c)) => {
            if matches!(nodes[start].kind, OpKind::Softmax) {
                start = pos(nodes[start].inputs[0]);
            }
            let z = &outs[start];
            let p = kernels::softmax(z, &[1, z.len()]);
            let mut g = p.clone();
            if c < g.len() {
                g[c] -= 1.0;
            }
            grads[start] = Some(g);
            match p.get(c) {
                Some(pc) if !pc.is_nan() => -pc.max(1e-300).ln(),
                _ => f64::NAN,
            }
        }
        (Loss::Squared { scale }, Target::Value(t)) => {
            let y = outs[start][0];
            let mut g = vec![0.0; outs[start].len()];
            g[0] = 2.0 * (y - t) / (scale * scale);
            grads[start] = Some(g);
            ((y - t) / scale).powi(2)
        }
        _ => f64::NAN,
    };
    let mut pgrads = Grads::new();
    for p in (0..=start).rev() {
        let Some(g) = grads[p].take() else { continue };
        let node = &nodes[p];
        let in_pos: Vec<usize> = node.inputs.iter().map(|&i| pos(i)).collect();
        let needs_dx: Vec<bool> = in_pos
            .iter()
            .map(|&q| !matches!(nodes[q].kind, OpKind::Input { .. } | OpKind::Constant))
            .collect();
        let ins: Vec<&[f64]> = in_pos.iter().map(|&q| outs[q].as_slice()).collect();
        let in_shapes: Vec<&[usize]> = in_pos.iter().map(|&q| nodes[q].output_shape.as_slice()).collect();
        let dxs = backward(node, params, &ins, &in_shapes, &outs[p], &g, needs_dx[0], &mut pgrads);
        for ((q, dx), need) in in_pos.into_iter().zip(dxs).zip(needs_dx) {
            if !need {
                continue;
            }
            match &mut grads[q] {
                Some(acc) => acc.iter_mut().zip(dx).for_each(|(a, v)| *a += v),
                slot => *slot = Some(dx),
            }
        }
    }
    (l, pgrads)
}

fn weights_of<'a>(node: &Node, params: &'a Weights) -> &'a crate::graph::WeightTensor {
    &params[node.weights_ref.as_ref().expect("validated weights")]
}

fn forward(graph: &Graph, node: &Node, params: &Weights, ins: &[&[f64]], input: &[f64]) -> Vec<f64> {
    let in_shape = || graph.node(node.inputs[0]).expect("validated").output_shape.as_slice();
    let x = || ins[0];
    match &node.kind {
        OpKind::Input { .. } => input.iter().map(|&v| f64::from(v as f32)).collect(),
        OpKind::Constant => weights_of(node, params).data.iter().map(|&v| f64::from(v)).collect(),
        OpKind::Conv2D { stride, padding } => kernels::conv2d::<f32>(
            x(),
            in_shape(),
            weights_of(node, params),
            *stride,
            *padding,
            &node.output_shape,
        ),
        OpKind::FullyConnected => kernels::fully_connected::<f32>(x(), in_shape(), weights_of(node, params)),
        OpKind::BiasAdd => kernels::bias_add(x(), weights_of(node, params), true),
        OpKind::ReLU => kernels::relu(x()),
        OpKind::Tanh => kernels::map(x(), |v| f64::from((v as f32).tanh())),
        OpKind::Atan => kernels::map(x(), |v| f64::from((v as f32).atan())),
        OpKind::MaxPool { window, stride } => kernels::pool(x(), in_shape(), &node.output_shape, *window, *stride, true),
        OpKind::AvgPool { window, stride } => kernels::pool(x(), in_shape(), &node.output_shape, *window, *stride, false),
        OpKind::Reshape { .. } => x().to_vec(),
        OpKind::Concat { axis } => {
            let parts: Vec<(&[f64], &[usize])> = node
                .inputs
                .iter()
                .zip(ins)
                .map(|(&i, v)| (*v, graph.node(i).expect("validated").output_shape.as_slice()))
                .collect();
            kernels::concat(&parts, *axis)
        }
        OpKind::Softmax => kernels::softmax(x(), in_shape()),
        OpKind::Clip { low, up, .. } => kernels::map(x(), |v| v.clamp(*low, *up)),
    }
}

/// Returns the gradient for each input and accumulates parameter gradients.
#[allow(clippy::too_many_arguments)]
fn backward(
    node: &Node,
    params: &Weights,
    ins: &[&[f64]],
    in_shapes: &[&[usize]],
    y: &[f64],
    g: &[f64],
    needs_dx: bool,
    pgrads: &mut Grads,
) -> Vec<Vec<f64>> {
    let x = ins.first().copied().unwrap_or(&[]);
    match &node.kind {
        OpKind::Input { .. } | OpKind::Constant => Vec::new(),
        OpKind::Conv2D { stride, padding } => {
            let k = weights_of(node, params);
            let dk = param_grad(pgrads, node, k.data.len());
            vec![conv_backward(x, in_shapes[0], k, *stride, *padding, &node.output_shape, g, dk, needs_dx)]
        }
        OpKind::FullyConnected => {
            let w = weights_of(node, params);
            let (fan_in, fan_out) = (w.shape[0], w.shape[1]);
            let dw = param_grad(pgrads, node, w.data.len());
            let mut dx = vec![0.0; x.len()];
            for i in 0..fan_in {
                let mut acc = 0.0;
                for o in 0..fan_out {
                    dw[i * fan_out + o] += x[i] * g[o];
                    acc += f64::from(w.data[i * fan_out + o]) * g[o];
                }
                dx[i] = acc;
            }
            vec![dx]
        }
        OpKind::BiasAdd => {
            let c = weights_of(node, params).data.len();
            let db = param_grad(pgrads, node, c);
            for (i, v) in g.iter().enumerate() {
                db[i % c] += v;
            }
            vec![g.to_vec()]
        }
        OpKind::ReLU => vec![x.iter().zip(g).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()],
        OpKind::Tanh => vec![y.iter().zip(g).map(|(&t, &d)| d * (1.0 - t * t)).collect()],
        OpKind::Atan => vec![x.iter().zip(g).map(|(&v, &d)| d / (1.0 + v * v)).collect()],
        OpKind::MaxPool { window, stride } | OpKind::AvgPool { window, stride } => {
            let max = matches!(node.kind, OpKind::MaxPool { .. });
            vec![pool_backward(x, in_shapes[0], &node.output_shape, *window, *stride, max, g)]
        }
        OpKind::Reshape { .. } => vec![g.to_vec()],
        OpKind::Concat { axis } => {
            let outer: usize = in_shapes[0][..*axis].iter().product();
            let mut dxs: Vec<Vec<f64>> = ins.iter().map(|v| Vec::with_capacity(v.len())).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (dx, shape) in dxs.iter_mut().zip(in_shapes) {
                    let chunk: usize = shape[*axis..].iter().product();
                    dx.extend_from_slice(&g[off..off + chunk]);
                    off += chunk;
                }
            }
            dxs
        }
        OpKind::Softmax => {
            let inner = *node.output_shape.last().unwrap_or(&1);
            let mut dx = Vec::with_capacity(g.len());
            for (yr, gr) in y.chunks(inner).zip(g.chunks(inner)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                dx.extend(yr.iter().zip(gr).map(|(a, b)| a * (b - dot)));
            }
            vec![dx]
        }
        OpKind::Clip { low, up, .. } => vec![x
            .iter()
            .zip(g)
            .map(|(&v, &d)| if v >= *low && v <= *up { d } else { 0.0 })
            .collect()],
    }
}

fn param_grad<'a>(pgrads: &'a mut Grads, node: &Node, len: usize) -> &'a mut Vec<f64> {
    let name = node.weights_ref.clone().expect("validated weights");
    pgrads.entry(name).or_insert_with(|| vec![0.0; len])
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    in_shape: &[usize],
    k: &crate::graph::WeightTensor,
    stride: usize,
    padding: Padding,
    out_shape: &[usize],
    g: &[f64],
    dk: &mut [f64],
    needs_dx: bool,
) -> Vec<f64> {
    let (h, w, cin) = (in_shape[1], in_shape[2], in_shape[3]);
    let (kh, kw, cout) = (k.shape[0], k.shape[1], k.shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (pad_top, pad_left) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (
            ((oh - 1) * stride + kh).saturating_sub(h) / 2,
            ((ow - 1) * stride + kw).saturating_sub(w) / 2,
        ),
    };
    let kd: Vec<f64> = k.data.iter().map(|&v| f64::from(v)).collect();
    let mut dx = vec![0.0; if needs_dx { x.len() } else { 0 }];
    for oy in 0..oh {
        for ox in 0..ow {
            let gbase = (oy * ow + ox) * cout;
            let gs = &g[gbase..gbase + cout];
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
                    let xbase = (iy as usize * w + ix as usize) * cin;
                    let kbase = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xbase + ci];
                        let row = kbase + ci * cout;
                        let dkr = &mut dk[row..row + cout];
                        for (d, &gv) in dkr.iter_mut().zip(gs) {
                            *d += gv * xv;
                        }
                        if needs_dx {
                            let kr = &kd[row..row + cout];
                            dx[xbase + ci] += kr.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_backward(
    x: &[f64],
    in_shape: &[usize],
    out_shape: &[usize],
    window: usize,
    stride: usize,
    max: bool,
    g: &[f64],
) -> Vec<f64> {
    let (w, c) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut dx = vec![0.0; x.len()];
    let count = (window * window) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let gv = g[(oy * ow + ox) * c + ch];
                let idx = |ky: usize, kx: usize| ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                if max {
                    let mut best = idx(0, 0);
                    for ky in 0..window {
                        for kx in 0..window {
                            if x[idx(ky, kx)] > x[best] {
                                best = idx(ky, kx);
                            }
                        }
                    }
                    dx[best] += gv;
                } else {
                    for ky in 0..window {
                        for kx in 0..window {
                            dx[idx(ky, kx)] += gv / count;
                        }
                    }
                }
            }
        }
    }
    dx
}
