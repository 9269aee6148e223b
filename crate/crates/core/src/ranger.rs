//! The range-restriction rewrite and the activation-swap baseline.
//!
//! [`insert_ranger`] walks the graph once in topological order. Every ACT
//! node gets a `Clip(low, up)` behind it. Pooling and reshape nodes fed by a
//! bounded value inherit that bound and are clipped as well, and a `Concat`
//! of bounded branches is clipped to the union `(min low, max up)` of its
//! bounded inputs. Consumers are rewired to read the clipped value.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ActKind, Graph, GraphError, NodeId, NodeSpec, OpKind};
use crate::numerics::CorrectionPolicy;
use crate::profiler::BoundSet;

#[derive(Debug, Error)]
pub enum RangerError {
    #[error("no bound for ACT node {0}")]
    MissingBound(NodeId),
    #[error("graph already instrumented: ACT node {act} feeds Clip node {clip}")]
    AlreadyInstrumented { act: NodeId, clip: NodeId },
    #[error("bound for node {node} is inverted: ({low}, {up})")]
    InvertedBound { node: NodeId, low: f64, up: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How far an ACT bound propagates through bound-preserving operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extension {
    /// Only the ACT node's immediate successors inherit its bound.
    OneHop,
    /// Bounds flow along any chain of pooling/reshape/concat operators.
    #[default]
    Transitive,
}

/// Inserted clips, keyed by the node they restrict.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrumentation {
    pub graph: Graph,
    /// `(protected node, clip node, low, up)` in insertion order.
    pub clips: Vec<(NodeId, NodeId, f64, f64)>,
}

pub fn insert_ranger(graph: &Graph, bounds: &BoundSet, policy: CorrectionPolicy) -> Result<Graph, RangerError> {
    Ok(instrument(graph, bounds, policy, Extension::Transitive)?.graph)
}

/// Full form of [`insert_ranger`] reporting every inserted clip.
pub fn instrument(
    graph: &Graph,
    bounds: &BoundSet,
    policy: CorrectionPolicy,
    extension: Extension,
) -> Result<Instrumentation, RangerError> {
    let consumers = graph.consumers();
    for act in graph.act_nodes() {
        if let Some(c) = consumers
            .get(&act.id)
            .into_iter()
            .flatten()
            .find(|c| graph.node(**c).is_some_and(|n| n.kind.is_clip()))
        {
            return Err(RangerError::AlreadyInstrumented { act: act.id, clip: *c });
        }
    }

    // bound carried by each node's output, and whether it came straight from an ACT
    let mut bound_of: HashMap<NodeId, (f64, f64, bool)> = HashMap::new();
    let mut specs: Vec<NodeSpec> = Vec::with_capacity(graph.len() * 2);
    let mut clips = Vec::new();
    let mut redirect: HashMap<NodeId, NodeId> = HashMap::new();
    let mut next_id = graph.max_id() + 1;

    for node in graph.nodes() {
        let carried = if node.kind.is_act() {
            let (low, up) = bounds.get(node.id).ok_or(RangerError::MissingBound(node.id))?;
            if !(low <= up) {
                return Err(RangerError::InvertedBound { node: node.id, low, up });
            }
            Some((low, up))
        } else if node.kind.extends_bound() {
            let inherited: Vec<(f64, f64)> = node
                .inputs
                .iter()
                .filter_map(|i| bound_of.get(i))
                .filter(|(_, _, from_act)| extension == Extension::Transitive || *from_act)
                .map(|&(l, u, _)| (l, u))
                .collect();
            inherited.into_iter().reduce(|(l1, u1), (l2, u2)| (l1.min(l2), u1.max(u2)))
        } else {
            None
        };

        let mut spec = NodeSpec::from(node);
        for input in &mut spec.inputs {
            if let Some(&r) = redirect.get(input) {
                *input = r;
            }
        }
        specs.push(spec);

        if let Some((low, up)) = carried {
            bound_of.insert(node.id, (low, up, node.kind.is_act()));
            let clip_id = next_id;
            next_id += 1;
            specs.push(NodeSpec {
                id: clip_id,
                kind: OpKind::Clip { low, up, policy },
                inputs: vec![node.id],
                weights_ref: None,
            });
            redirect.insert(node.id, clip_id);
            clips.push((node.id, clip_id, low, up));
        }
    }

    let output = redirect.get(&graph.output_id()).copied().unwrap_or(graph.output_id());
    let instrumented = Graph::new(specs, output, graph.task().clone(), graph.weights().clone())?;
    Ok(Instrumentation {
        graph: instrumented,
        clips,
    })
}

/// Replaces every `from` activation with `to`, leaving weights untouched.
pub fn act_swap(graph: &Graph, from: ActKind, to: ActKind) -> Graph {
    if from == to {
        return graph.clone();
    }
    let specs = graph
        .specs()
        .into_iter()
        .map(|mut s| {
            if s.kind.act_kind() == Some(from) {
                s.kind = to.op();
            }
            s
        })
        .collect();
    Graph::new(specs, graph.output_id(), graph.task().clone(), graph.weights().clone())
        .expect("swapping shape-preserving activations keeps the graph valid")
}
