use std::collections::HashMap;

use super::{Graph, GraphError, NodeId, NodeSpec, OpKind, Padding, Weights};

/// Recomputes every output shape of `graph` and returns the re-validated graph.
pub fn infer_shapes(graph: &Graph) -> Result<Graph, GraphError> {
    Graph::new(
        graph.specs(),
        graph.output_id(),
        graph.task().clone(),
        graph.weights().clone(),
    )
}

pub(super) fn compute_shapes(
    specs: &[NodeSpec],
    index: &HashMap<NodeId, usize>,
    weights: &Weights,
) -> Result<Vec<Vec<usize>>, GraphError> {
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(specs.len());
    for spec in specs {
        let inputs: Vec<&[usize]> = spec.inputs.iter().map(|i| shapes[index[i]].as_slice()).collect();
        let weight_shape = spec
            .weights_ref
            .as_ref()
            .and_then(|w| weights.get(w))
            .map(|w| w.shape.as_slice());
        let shape = output_shape(&spec.kind, &inputs, weight_shape).map_err(|reason| match reason {
            ShapeFault::Mismatch(reason) => GraphError::ShapeMismatch { node: spec.id, reason },
            ShapeFault::Attr(reason) => GraphError::InvalidAttr { node: spec.id, reason },
        })?;
        shapes.push(shape);
    }
    Ok(shapes)
}

pub(super) enum ShapeFault {
    Mismatch(String),
    Attr(String),
}

fn mismatch<T>(msg: String) -> Result<T, ShapeFault> {
    Err(ShapeFault::Mismatch(msg))
}

fn attr<T>(msg: String) -> Result<T, ShapeFault> {
    Err(ShapeFault::Attr(msg))
}

fn rank4(input: &[usize], what: &str) -> Result<(), ShapeFault> {
    if input.len() != 4 {
        return mismatch(format!("{what} expects an NHWC rank-4 input, got {input:?}"));
    }
    Ok(())
}

fn pooled(extent: usize, window: usize, stride: usize) -> Result<usize, ShapeFault> {
    if window == 0 || stride == 0 {
        return attr("window and stride must be positive".into());
    }
    if extent < window {
        return mismatch(format!("window {window} exceeds spatial extent {extent}"));
    }
    Ok((extent - window) / stride + 1)
}

pub(super) fn output_shape(
    kind: &OpKind,
    inputs: &[&[usize]],
    weights: Option<&[usize]>,
) -> Result<Vec<usize>, ShapeFault> {
    match kind {
        OpKind::Input { shape } => {
            if shape.is_empty() || shape.contains(&0) {
                return attr(format!("input shape {shape:?} must be non-empty"));
            }
            Ok(shape.clone())
        }
        OpKind::Constant => Ok(weights.unwrap_or(&[]).to_vec()),
        OpKind::Conv2D { stride, padding } => {
            let x = inputs[0];
            rank4(x, "Conv2D")?;
            let Some(&[kh, kw, cin, cout]) = weights else {
                return mismatch(format!("Conv2D kernel must be rank 4, got {weights:?}"));
            };
            if cin != x[3] {
                return mismatch(format!("kernel expects {cin} input channels, input has {}", x[3]));
            }
            if *stride == 0 {
                return attr("stride must be positive".into());
            }
            let (h, w) = match padding {
                Padding::Same => (x[1].div_ceil(*stride), x[2].div_ceil(*stride)),
                Padding::Valid => (pooled(x[1], kh, *stride)?, pooled(x[2], kw, *stride)?),
            };
            Ok(vec![x[0], h, w, cout])
        }
        OpKind::FullyConnected => {
            let x = inputs[0];
            let Some(&[fan_in, fan_out]) = weights else {
                return mismatch(format!("FullyConnected weights must be rank 2, got {weights:?}"));
            };
            if x.len() != 2 || x[1] != fan_in {
                return mismatch(format!("FullyConnected expects [batch, {fan_in}], got {x:?}"));
            }
            Ok(vec![x[0], fan_out])
        }
        OpKind::BiasAdd => {
            let x = inputs[0];
            let Some(&[c]) = weights else {
                return mismatch(format!("bias must be rank 1, got {weights:?}"));
            };
            if x.last() != Some(&c) {
                return mismatch(format!("bias of length {c} does not match last axis of {x:?}"));
            }
            Ok(x.to_vec())
        }
        OpKind::ReLU | OpKind::Tanh | OpKind::Atan | OpKind::Softmax | OpKind::Clip { .. } => {
            if let OpKind::Clip { low, up, .. } = kind {
                if !(low <= up) {
                    return attr(format!("clip bounds inverted: {low} > {up}"));
                }
            }
            Ok(inputs[0].to_vec())
        }
        OpKind::MaxPool { window, stride } | OpKind::AvgPool { window, stride } => {
            let x = inputs[0];
            rank4(x, kind.name())?;
            Ok(vec![
                x[0],
                pooled(x[1], *window, *stride)?,
                pooled(x[2], *window, *stride)?,
                x[3],
            ])
        }
        OpKind::Reshape { target_shape } => {
            let from: usize = inputs[0].iter().product();
            let to: usize = target_shape.iter().product();
            if from != to {
                return mismatch(format!(
                    "cannot reshape {:?} ({from} elements) to {target_shape:?} ({to} elements)",
                    inputs[0]
                ));
            }
            Ok(target_shape.clone())
        }
        OpKind::Concat { axis } => {
            let first = inputs[0];
            if *axis >= first.len() {
                return attr(format!("axis {axis} out of range for rank {}", first.len()));
            }
            let mut out = first.to_vec();
            for other in &inputs[1..] {
                let compatible = other.len() == first.len()
                    && other
                        .iter()
                        .zip(first)
                        .enumerate()
                        .all(|(d, (a, b))| d == *axis || a == b);
                if !compatible {
                    return mismatch(format!("cannot concatenate {first:?} and {other:?} along axis {axis}"));
                }
                out[*axis] += other[*axis];
            }
            Ok(out)
        }
    }
}
