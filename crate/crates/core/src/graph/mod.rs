//! Dataflow-graph IR: operator vocabulary, validation and shape inference.
//!
//! A [`Graph`] is a list of [`Node`]s in topological order. Inputs may only
//! name nodes that appear earlier in the list, so every valid graph is acyclic
//! and evaluating nodes front to back never reads an undefined value.
//! Graphs are validated on construction and immutable afterward; passes build
//! a new graph rather than editing one in place.

mod manifest;
mod shapes;
mod weights;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::CorrectionPolicy;
use crate::tensor::TensorError;

pub use manifest::{load_model, parse_manifest, render_manifest, save_model};
pub use shapes::infer_shapes;
pub use weights::{parse_weights, render_weights, WeightTensor, Weights, RGWB_MAGIC};

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("node {node}: forward reference to node {input}")]
    ForwardReference { node: NodeId, input: NodeId },
    #[error("node {node}: dangling reference to unknown node {input}")]
    DanglingReference { node: NodeId, input: NodeId },
    #[error("node {0}: duplicate node id")]
    DuplicateId(NodeId),
    #[error("node {node}: {kind} expects {expected} inputs, got {got}")]
    Arity {
        node: NodeId,
        kind: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("node {node}: weights '{name}' not found")]
    MissingWeights { node: NodeId, name: String },
    #[error("node {node}: {kind} requires a weights reference")]
    WeightsRequired { node: NodeId, kind: &'static str },
    #[error("node {node}: shape mismatch: {reason}")]
    ShapeMismatch { node: NodeId, reason: String },
    #[error("node {node}: invalid attribute: {reason}")]
    InvalidAttr { node: NodeId, reason: String },
    #[error("no output node")]
    NoOutput,
    #[error("output node {0} does not exist")]
    UnknownOutput(NodeId),
    #[error("graph must have exactly one Input node, found {0}")]
    InputCount(usize),
    #[error("invalid task: {0}")]
    Task(String),
    #[error("bad weights blob: {0}")]
    Weights(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// Operator vocabulary. Serialized adjacently tagged as `"kind"` + `"attrs"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "attrs")]
pub enum OpKind {
    /// Graph input; `shape` includes the batch dimension.
    Input { shape: Vec<usize> },
    Constant,
    /// NHWC convolution with kernel weights `[kh, kw, cin, cout]`.
    Conv2D { stride: usize, padding: Padding },
    /// `[1, in] x [in, out]`.
    FullyConnected,
    /// Adds a per-channel bias along the last axis.
    BiasAdd,
    ReLU,
    Tanh,
    Atan,
    MaxPool { window: usize, stride: usize },
    AvgPool { window: usize, stride: usize },
    Reshape { target_shape: Vec<usize> },
    Concat { axis: usize },
    Softmax,
    /// Range-restriction operator.
    Clip {
        low: f64,
        up: f64,
        #[serde(default)]
        policy: CorrectionPolicy,
    },
}

/// Activation kinds that anchor range restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActKind {
    ReLU,
    Tanh,
}

impl ActKind {
    pub fn op(self) -> OpKind {
        match self {
            ActKind::ReLU => OpKind::ReLU,
            ActKind::Tanh => OpKind::Tanh,
        }
    }
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input { .. } => "Input",
            OpKind::Constant => "Constant",
            OpKind::Conv2D { .. } => "Conv2D",
            OpKind::FullyConnected => "FullyConnected",
            OpKind::BiasAdd => "BiasAdd",
            OpKind::ReLU => "ReLU",
            OpKind::Tanh => "Tanh",
            OpKind::Atan => "Atan",
            OpKind::MaxPool { .. } => "MaxPool",
            OpKind::AvgPool { .. } => "AvgPool",
            OpKind::Reshape { .. } => "Reshape",
            OpKind::Concat { .. } => "Concat",
            OpKind::Softmax => "Softmax",
            OpKind::Clip { .. } => "Clip",
        }
    }

    pub fn act_kind(&self) -> Option<ActKind> {
        match self {
            OpKind::ReLU => Some(ActKind::ReLU),
            OpKind::Tanh => Some(ActKind::Tanh),
            _ => None,
        }
    }

    pub fn is_act(&self) -> bool {
        self.act_kind().is_some()
    }

    /// Kinds whose output range is bounded by the range of their inputs.
    pub fn extends_bound(&self) -> bool {
        matches!(
            self,
            OpKind::MaxPool { .. } | OpKind::AvgPool { .. } | OpKind::Reshape { .. } | OpKind::Concat { .. }
        )
    }

    pub fn is_clip(&self) -> bool {
        matches!(self, OpKind::Clip { .. })
    }

    /// Nodes that read a weights tensor.
    pub fn needs_weights(&self) -> bool {
        matches!(
            self,
            OpKind::Constant | OpKind::Conv2D { .. } | OpKind::FullyConnected | OpKind::BiasAdd
        )
    }

    /// Nodes whose output is computed by an operator (not a graph source).
    pub fn is_operator(&self) -> bool {
        !matches!(self, OpKind::Input { .. } | OpKind::Constant)
    }

    fn arity(&self) -> (usize, Option<usize>, &'static str) {
        match self {
            OpKind::Input { .. } | OpKind::Constant => (0, Some(0), "0"),
            OpKind::Concat { .. } => (2, None, ">= 2"),
            _ => (1, Some(1), "1"),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
    pub weights_ref: Option<String>,
    pub output_shape: Vec<usize>,
}

impl Node {
    pub fn num_elements(&self) -> usize {
        self.output_shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    #[default]
    Degrees,
    Radians,
}

/// What the network output means, and therefore what counts as corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskSpec {
    Classification { num_classes: usize, topk: usize },
    /// A scalar angle output; deviations are compared against thresholds
    /// given in degrees.
    Regression {
        sdc_thresholds: Vec<f64>,
        #[serde(default)]
        unit: AngleUnit,
    },
}

impl TaskSpec {
    pub fn classification(num_classes: usize) -> Self {
        TaskSpec::Classification { num_classes, topk: 1 }
    }

    /// Steering task with the usual 15/30/60/120 degree thresholds.
    pub fn steering(unit: AngleUnit) -> Self {
        TaskSpec::Regression {
            sdc_thresholds: vec![15.0, 30.0, 60.0, 120.0],
            unit,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        match self {
            TaskSpec::Classification { num_classes, topk } => {
                if *num_classes == 0 || *topk == 0 || topk > num_classes {
                    return Err(GraphError::Task(format!(
                        "topk {topk} must be within 1..={num_classes}"
                    )));
                }
            }
            TaskSpec::Regression { sdc_thresholds, .. } => {
                if sdc_thresholds.is_empty() {
                    return Err(GraphError::Task("no SDC thresholds".into()));
                }
                if sdc_thresholds.iter().any(|t| !(*t > 0.0)) {
                    return Err(GraphError::Task("thresholds must be positive".into()));
                }
                if sdc_thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(GraphError::Task("thresholds must be strictly ascending".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of outcome columns a trial produces (one per threshold).
    pub fn num_thresholds(&self) -> usize {
        match self {
            TaskSpec::Classification { .. } => 1,
            TaskSpec::Regression { sdc_thresholds, .. } => sdc_thresholds.len(),
        }
    }
}

/// Unvalidated node description used to build a [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
    pub weights_ref: Option<String>,
}

impl From<&Node> for NodeSpec {
    fn from(n: &Node) -> Self {
        NodeSpec {
            id: n.id,
            kind: n.kind.clone(),
            inputs: n.inputs.clone(),
            weights_ref: n.weights_ref.clone(),
        }
    }
}

/// A validated, shape-annotated dataflow graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    output_id: NodeId,
    task: TaskSpec,
    weights: Arc<Weights>,
    index: HashMap<NodeId, usize>,
}

impl Graph {
    /// Validates `specs` and infers every output shape.
    pub fn new(
        specs: Vec<NodeSpec>,
        output_id: NodeId,
        task: TaskSpec,
        weights: Arc<Weights>,
    ) -> Result<Self, GraphError> {
        if specs.is_empty() {
            return Err(GraphError::NoOutput);
        }
        task.validate()?;
        let mut index = HashMap::with_capacity(specs.len());
        let mut input_count = 0;
        for (pos, spec) in specs.iter().enumerate() {
            let (min, max, expected) = spec.kind.arity();
            let got = spec.inputs.len();
            if got < min || max.is_some_and(|m| got > m) {
                return Err(GraphError::Arity {
                    node: spec.id,
                    kind: spec.kind.name(),
                    expected,
                    got,
                });
            }
            for &input in &spec.inputs {
                if !index.contains_key(&input) {
                    let later = specs[pos..].iter().any(|s| s.id == input);
                    return Err(if later {
                        GraphError::ForwardReference { node: spec.id, input }
                    } else {
                        GraphError::DanglingReference { node: spec.id, input }
                    });
                }
            }
            if spec.kind.needs_weights() {
                let name = spec.weights_ref.as_ref().ok_or(GraphError::WeightsRequired {
                    node: spec.id,
                    kind: spec.kind.name(),
                })?;
                if weights.get(name).is_none() {
                    return Err(GraphError::MissingWeights {
                        node: spec.id,
                        name: name.clone(),
                    });
                }
            }
            if matches!(spec.kind, OpKind::Input { .. }) {
                input_count += 1;
            }
            if index.insert(spec.id, pos).is_some() {
                return Err(GraphError::DuplicateId(spec.id));
            }
        }
        if input_count != 1 {
            return Err(GraphError::InputCount(input_count));
        }
        if !index.contains_key(&output_id) {
            return Err(GraphError::UnknownOutput(output_id));
        }
        let shapes = shapes::compute_shapes(&specs, &index, &weights)?;
        let nodes = specs
            .into_iter()
            .zip(shapes)
            .map(|(s, output_shape)| Node {
                id: s.id,
                kind: s.kind,
                inputs: s.inputs,
                weights_ref: s.weights_ref,
                output_shape,
            })
            .collect();
        Ok(Graph {
            nodes,
            output_id,
            task,
            weights,
            index,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output_id(&self) -> NodeId {
        self.output_id
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn weights(&self) -> &Arc<Weights> {
        &self.weights
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    /// Position of `id` in topological order.
    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn input_node(&self) -> &Node {
        self.nodes
            .iter()
            .find(|n| matches!(n.kind, OpKind::Input { .. }))
            .expect("validated graph has an Input node")
    }

    pub fn output_node(&self) -> &Node {
        self.node(self.output_id).expect("validated output id")
    }

    /// Consumer lists keyed by producer id, in topological order.
    pub fn consumers(&self) -> HashMap<NodeId, Vec<NodeId>> {
        let mut out: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for n in &self.nodes {
            for &i in &n.inputs {
                out.entry(i).or_default().push(n.id);
            }
        }
        out
    }

    pub fn max_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id).max().unwrap_or(0)
    }

    pub fn act_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind.is_act())
    }

    /// Nodes making up the final fully-connected layer: the last
    /// `FullyConnected` node plus a `BiasAdd` that is its only consumer.
    pub fn last_fc_layer(&self) -> Vec<NodeId> {
        let Some(fc) = self
            .nodes
            .iter()
            .rev()
            .find(|n| matches!(n.kind, OpKind::FullyConnected))
        else {
            return Vec::new();
        };
        let mut ids = vec![fc.id];
        let consumers = self.consumers();
        if let Some(c) = consumers.get(&fc.id) {
            if let [only] = c.as_slice() {
                if matches!(self.node(*only).map(|n| &n.kind), Some(OpKind::BiasAdd)) {
                    ids.push(*only);
                }
            }
        }
        ids
    }

    pub fn specs(&self) -> Vec<NodeSpec> {
        self.nodes.iter().map(NodeSpec::from).collect()
    }

    /// Same graph with a different task description.
    pub fn with_task(&self, task: TaskSpec) -> Result<Graph, GraphError> {
        task.validate()?;
        let mut g = self.clone();
        g.task = task;
        Ok(g)
    }
}

/// Incremental construction helper; ids are assigned in insertion order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    specs: Vec<NodeSpec>,
    weights: Weights,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, kind: OpKind, inputs: &[NodeId]) -> NodeId {
        let id = self.specs.len() as NodeId;
        self.specs.push(NodeSpec {
            id,
            kind,
            inputs: inputs.to_vec(),
            weights_ref: None,
        });
        id
    }

    /// Adds a node reading the named weights tensor, registering the tensor.
    pub fn add_weighted(&mut self, kind: OpKind, inputs: &[NodeId], name: &str, weights: WeightTensor) -> NodeId {
        let id = self.add(kind, inputs);
        self.specs[id as usize].weights_ref = Some(name.to_string());
        self.weights.insert(name.to_string(), weights);
        id
    }

    pub fn finish(self, output: NodeId, task: TaskSpec) -> Result<Graph, GraphError> {
        Graph::new(self.specs, output, task, Arc::new(self.weights))
    }
}
