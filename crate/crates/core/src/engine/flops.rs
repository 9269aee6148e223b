//! FLOP accounting.
//!
//! Conventions: a multiply-accumulate counts 2; a range restriction counts 2
//! per element (one min, one max); other element-wise ops count 1 per element;
//! pooling counts one op per window element; data movement counts 0.

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Node, NodeId, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub per_node: Vec<(NodeId, u64)>,
    pub total: u64,
}

pub fn node_flops(graph: &Graph, node: &Node) -> u64 {
    let n = node.num_elements() as u64;
    let input_shape = |i: usize| {
        graph
            .node(node.inputs[i])
            .map(|p| p.output_shape.as_slice())
            .unwrap_or(&[])
    };
    let weight_shape = || {
        node.weights_ref
            .as_ref()
            .and_then(|w| graph.weights().get(w))
            .map(|w| w.shape.as_slice())
            .unwrap_or(&[])
    };
    match &node.kind {
        OpKind::Input { .. } | OpKind::Constant | OpKind::Reshape { .. } | OpKind::Concat { .. } => 0,
        OpKind::Conv2D { .. } => {
            // 2 * K * K * Cin * Hout * Wout * Cout; n already holds Hout * Wout * Cout
            let w = weight_shape();
            2 * (w[0] * w[1] * w[2]) as u64 * n
        }
        OpKind::FullyConnected => {
            let w = weight_shape();
            2 * (w[0] * w[1]) as u64 * input_shape(0)[0] as u64
        }
        OpKind::Clip { .. } => 2 * n,
        OpKind::MaxPool { window, .. } | OpKind::AvgPool { window, .. } => (window * window) as u64 * n,
        OpKind::BiasAdd | OpKind::ReLU | OpKind::Tanh | OpKind::Atan | OpKind::Softmax => n,
    }
}

pub fn count_flops(graph: &Graph) -> FlopCount {
    let per_node: Vec<(NodeId, u64)> = graph.nodes().iter().map(|n| (n.id, node_flops(graph, n))).collect();
    let total = per_node.iter().map(|(_, f)| f).sum();
    FlopCount { per_node, total }
}
