//! Graph execution with optional single-fault hooks, plus FLOP accounting.
//!
//! The engine is re-entrant: a [`Graph`] is only ever borrowed immutably and
//! every execution owns its activation buffers, so concurrent campaign workers
//! can share one graph.

mod flops;
pub(crate) mod kernels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, Node, NodeId, OpKind};
use crate::numerics::{flip_value, NumericError, NumericFormat};
use crate::tensor::Tensor;

pub use flops::{count_flops, node_flops, FlopCount};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("input shape {got:?} does not match graph input {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("node {0}: weights missing")]
    MissingWeights(NodeId),
    #[error("fault target {node}: {reason}")]
    InvalidTarget { node: NodeId, reason: String },
    #[error("fault target {node}: element {index} out of range for {len} elements")]
    ElementOutOfRange { node: NodeId, index: usize, len: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// How the bits of a multi-bit fault are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiBitMode {
    /// All bits land in one value.
    #[default]
    SingleValue,
    /// Bit `i` lands in element `element_index + i` (wrapping), i.e. one bit
    /// in each of `k` adjacent values.
    AdjacentValues,
}

/// One injected fault.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub target_op: NodeId,
    pub element_index: usize,
    pub bit_positions: Vec<u32>,
    pub trial_index: u64,
    #[serde(default)]
    pub mode: MultiBitMode,
}

impl FaultSpec {
    pub fn single(target_op: NodeId, element_index: usize, bit: u32) -> Self {
        FaultSpec {
            target_op,
            element_index,
            bit_positions: vec![bit],
            trial_index: 0,
            mode: MultiBitMode::SingleValue,
        }
    }
}

/// Which nodes a fault may land on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultOptions {
    /// Nodes that must not be targeted (e.g. the last FC layer).
    pub excluded: Vec<NodeId>,
    /// Permit faults on range-restriction nodes themselves.
    pub allow_clip_targets: bool,
}

impl FaultOptions {
    /// Excludes the graph's final fully-connected layer.
    pub fn excluding_last_fc(graph: &Graph) -> Self {
        FaultOptions {
            excluded: graph.last_fc_layer(),
            allow_clip_targets: false,
        }
    }

    pub fn is_eligible(&self, node: &Node) -> bool {
        node.kind.is_operator()
            && (self.allow_clip_targets || !node.kind.is_clip())
            && !self.excluded.contains(&node.id)
    }
}

/// Per-node record of one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    /// Output of every node, in topological order.
    pub outputs: Vec<Tensor>,
    pub fault_applied: Option<FaultSpec>,
    pub flops: Vec<u64>,
}

impl ExecutionTrace {
    pub fn output_of(&self, graph: &Graph, id: NodeId) -> Option<&Tensor> {
        graph.position(id).map(|p| &self.outputs[p])
    }

    pub fn final_output(&self, graph: &Graph) -> &Tensor {
        &self.outputs[graph.position(graph.output_id()).expect("validated output")]
    }
}

/// Fault-free inference.
pub fn infer(graph: &Graph, input: &Tensor, format: NumericFormat) -> Result<Tensor, EngineError> {
    let trace = run(graph, input, format)?;
    Ok(trace.final_output(graph).clone())
}

/// Fault-free execution retaining every node output.
pub fn run(graph: &Graph, input: &Tensor, format: NumericFormat) -> Result<ExecutionTrace, EngineError> {
    execute(graph, input, format, None)
}

/// Execution with one fault applied to the target node's output before any
/// consumer reads it.
pub fn infer_with_fault(
    graph: &Graph,
    input: &Tensor,
    fault: &FaultSpec,
    format: NumericFormat,
    options: &FaultOptions,
) -> Result<(Tensor, ExecutionTrace), EngineError> {
    check_fault(graph, fault, format, options)?;
    let trace = execute(graph, input, format, Some(fault))?;
    Ok((trace.final_output(graph).clone(), trace))
}

/// Faulty execution that reuses a golden trace for every node the fault
/// cannot reach. Equivalent to [`infer_with_fault`] but only recomputes the
/// fault's downstream cone.
pub fn replay_with_fault(
    graph: &Graph,
    golden: &ExecutionTrace,
    fault: &FaultSpec,
    format: NumericFormat,
    options: &FaultOptions,
) -> Result<Tensor, EngineError> {
    check_fault(graph, fault, format, options)?;
    let nodes = graph.nodes();
    let target = graph.position(fault.target_op).expect("checked target");
    let mut local: Vec<Option<Tensor>> = vec![None; nodes.len()];
    let mut faulty = golden.outputs[target].clone();
    apply_fault(&mut faulty, fault, format)?;
    local[target] = Some(faulty);
    for pos in target + 1..nodes.len() {
        let node = &nodes[pos];
        let input_pos: Vec<usize> = node
            .inputs
            .iter()
            .map(|i| graph.position(*i).expect("validated"))
            .collect();
        if input_pos.iter().all(|&p| local[p].is_none()) {
            continue;
        }
        let inputs: Vec<&Tensor> = input_pos
            .iter()
            .map(|&p| local[p].as_ref().unwrap_or(&golden.outputs[p]))
            .collect();
        local[pos] = Some(eval_node(graph, node, &inputs, format)?);
    }
    let out = graph.position(graph.output_id()).expect("validated");
    Ok(local[out].take().unwrap_or_else(|| golden.outputs[out].clone()))
}

pub fn check_fault(
    graph: &Graph,
    fault: &FaultSpec,
    format: NumericFormat,
    options: &FaultOptions,
) -> Result<(), EngineError> {
    let invalid = |reason: &str| EngineError::InvalidTarget {
        node: fault.target_op,
        reason: reason.to_string(),
    };
    let node = graph.node(fault.target_op).ok_or_else(|| invalid("no such node"))?;
    if !node.kind.is_operator() {
        return Err(invalid("graph sources are not operator outputs"));
    }
    if node.kind.is_clip() && !options.allow_clip_targets {
        return Err(invalid("range-restriction nodes are not fault targets"));
    }
    if options.excluded.contains(&node.id) {
        return Err(invalid("node is excluded from injection"));
    }
    if fault.bit_positions.is_empty() {
        return Err(invalid("no bit positions"));
    }
    let len = node.num_elements();
    if fault.element_index >= len {
        return Err(EngineError::ElementOutOfRange {
            node: node.id,
            index: fault.element_index,
            len,
        });
    }
    if fault.mode == MultiBitMode::AdjacentValues && fault.bit_positions.len() > len {
        return Err(invalid("more adjacent values than elements"));
    }
    // validates widths and duplicates
    crate::numerics::flip_bits(0, &fault.bit_positions, format)?;
    Ok(())
}

fn apply_fault(tensor: &mut Tensor, fault: &FaultSpec, format: NumericFormat) -> Result<(), EngineError> {
    let values = tensor.values_mut();
    let len = values.len();
    match fault.mode {
        MultiBitMode::SingleValue => {
            let v = &mut values[fault.element_index];
            *v = flip_value(*v, &fault.bit_positions, format)?;
        }
        MultiBitMode::AdjacentValues => {
            for (i, &bit) in fault.bit_positions.iter().enumerate() {
                let v = &mut values[(fault.element_index + i) % len];
                *v = flip_value(*v, &[bit], format)?;
            }
        }
    }
    Ok(())
}

fn execute(
    graph: &Graph,
    input: &Tensor,
    format: NumericFormat,
    fault: Option<&FaultSpec>,
) -> Result<ExecutionTrace, EngineError> {
    let input_node = graph.input_node();
    if input.shape() != input_node.output_shape.as_slice() {
        return Err(EngineError::InputShape {
            expected: input_node.output_shape.clone(),
            got: input.shape().to_vec(),
        });
    }
    let mut outputs: Vec<Tensor> = Vec::with_capacity(graph.len());
    let mut flops = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let mut out = if let OpKind::Input { .. } = node.kind {
            input.to_format(format)
        } else {
            let inputs: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|i| &outputs[graph.position(*i).expect("validated")])
                .collect();
            eval_node(graph, node, &inputs, format)?
        };
        if let Some(f) = fault.filter(|f| f.target_op == node.id) {
            apply_fault(&mut out, f, format)?;
        }
        flops.push(node_flops(graph, node));
        outputs.push(out);
    }
    Ok(ExecutionTrace {
        outputs,
        fault_applied: fault.cloned(),
        flops,
    })
}

fn eval_node(graph: &Graph, node: &Node, inputs: &[&Tensor], format: NumericFormat) -> Result<Tensor, EngineError> {
    let weights = || {
        node.weights_ref
            .as_ref()
            .and_then(|w| graph.weights().get(w))
            .ok_or(EngineError::MissingWeights(node.id))
    };
    let float32 = format == NumericFormat::Float32;
    let x = || inputs[0].values();
    let xs = || inputs[0].shape();
    let raw: Vec<f64> = match &node.kind {
        OpKind::Input { .. } => unreachable!("inputs are bound before evaluation"),
        OpKind::Constant => weights()?.data.iter().map(|&v| f64::from(v)).collect(),
        OpKind::Conv2D { stride, padding } => {
            let k = weights()?;
            if float32 {
                kernels::conv2d::<f32>(x(), xs(), k, *stride, *padding, &node.output_shape)
            } else {
                kernels::conv2d::<f64>(x(), xs(), k, *stride, *padding, &node.output_shape)
            }
        }
        OpKind::FullyConnected => {
            let w = weights()?;
            if float32 {
                kernels::fully_connected::<f32>(x(), xs(), w)
            } else {
                kernels::fully_connected::<f64>(x(), xs(), w)
            }
        }
        OpKind::BiasAdd => kernels::bias_add(x(), weights()?, float32),
        OpKind::ReLU => kernels::relu(x()),
        OpKind::Tanh => kernels::map(x(), f64::tanh),
        OpKind::Atan => kernels::map(x(), f64::atan),
        OpKind::MaxPool { window, stride } => kernels::pool(x(), xs(), &node.output_shape, *window, *stride, true),
        OpKind::AvgPool { window, stride } => kernels::pool(x(), xs(), &node.output_shape, *window, *stride, false),
        OpKind::Reshape { .. } => x().to_vec(),
        OpKind::Concat { axis } => {
            let parts: Vec<(&[f64], &[usize])> = inputs.iter().map(|t| (t.values(), t.shape())).collect();
            kernels::concat(&parts, *axis)
        }
        OpKind::Softmax => kernels::softmax(x(), xs()),
        OpKind::Clip { low, up, policy } => kernels::clip(x(), *low, *up, *policy, node.id),
    };
    let values = raw.into_iter().map(|v| format.quantize(v)).collect();
    Ok(Tensor::from_quantized(node.output_shape.clone(), format, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, TaskSpec, WeightTensor};
    use crate::numerics::CorrectionPolicy;

    fn relu_graph() -> crate::graph::Graph {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 3] }, &[]);
        let r = b.add(OpKind::ReLU, &[x]);
        b.finish(r, TaskSpec::classification(3)).unwrap()
    }

    #[test]
    fn relu_inference() {
        let g = relu_graph();
        let out = infer(&g, &Tensor::from_f32(vec![1, 3], &[-1.0, 0.0, 3.0]).unwrap(), NumericFormat::Float32).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn input_shape_checked() {
        let g = relu_graph();
        let err = infer(&g, &Tensor::from_f32(vec![1, 2], &[1.0, 2.0]).unwrap(), NumericFormat::Float32).unwrap_err();
        assert!(matches!(err, EngineError::InputShape { .. }));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 5] }, &[]);
        let s = b.add(OpKind::Softmax, &[x]);
        let g = b.finish(s, TaskSpec::classification(5)).unwrap();
        let out = infer(
            &g,
            &Tensor::from_f32(vec![1, 5], &[0.3, -2.0, 7.5, 1.0, 0.0]).unwrap(),
            NumericFormat::Float32,
        )
        .unwrap();
        let total: f64 = out.values().iter().sum();
        assert!((total - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn fault_target_validation() {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 2] }, &[]);
        let fc = b.add_weighted(
            OpKind::FullyConnected,
            &[x],
            "w",
            WeightTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let c = b.add(OpKind::Clip { low: 0.0, up: 1.0, policy: CorrectionPolicy::ToBound }, &[fc]);
        let g = b.finish(c, TaskSpec::classification(2)).unwrap();
        let f32 = NumericFormat::Float32;
        let opts = FaultOptions::default();
        assert!(check_fault(&g, &FaultSpec::single(fc, 1, 3), f32, &opts).is_ok());
        assert!(matches!(
            check_fault(&g, &FaultSpec::single(c, 0, 3), f32, &opts),
            Err(EngineError::InvalidTarget { .. })
        ));
        let with_clip = FaultOptions { allow_clip_targets: true, ..Default::default() };
        assert!(check_fault(&g, &FaultSpec::single(c, 0, 3), f32, &with_clip).is_ok());
        assert!(matches!(
            check_fault(&g, &FaultSpec::single(fc, 2, 3), f32, &opts),
            Err(EngineError::ElementOutOfRange { .. })
        ));
        assert!(check_fault(&g, &FaultSpec::single(x, 0, 3), f32, &opts).is_err());
        assert!(check_fault(&g, &FaultSpec::single(fc, 0, 40), f32, &opts).is_err());
        let last_fc = FaultOptions::excluding_last_fc(&g);
        assert!(check_fault(&g, &FaultSpec::single(fc, 0, 3), f32, &last_fc).is_err());
    }
}
