//! JSON model manifest plus the sibling weights blob.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::weights::{parse_weights, render_weights};
use super::{Graph, GraphError, NodeId, NodeSpec, OpKind, TaskSpec};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    nodes: Vec<NodeRecord>,
    output: Option<NodeId>,
    task: TaskSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    kind: String,
    #[serde(default)]
    attrs: Map<String, Value>,
    #[serde(default)]
    inputs: Vec<NodeId>,
    #[serde(default)]
    weights: Option<String>,
}

fn record_of(spec: &NodeSpec) -> NodeRecord {
    let tagged = serde_json::to_value(&spec.kind).expect("OpKind serializes");
    let attrs = match tagged.get("attrs") {
        Some(Value::Object(m)) => m.clone(),
        _ => Map::new(),
    };
    NodeRecord {
        id: spec.id,
        kind: spec.kind.name().to_string(),
        attrs,
        inputs: spec.inputs.clone(),
        weights: spec.weights_ref.clone(),
    }
}

fn kind_of(record: &NodeRecord) -> Result<OpKind, GraphError> {
    let mut tagged = Map::new();
    tagged.insert("kind".into(), Value::String(record.kind.clone()));
    if !record.attrs.is_empty() {
        tagged.insert("attrs".into(), Value::Object(record.attrs.clone()));
    }
    serde_json::from_value(Value::Object(tagged))
        .map_err(|e| GraphError::Manifest(format!("node {}: {e}", record.id)))
}

/// Parses manifest text against an already-loaded weights store.
pub fn parse_manifest(text: &str, weights: Arc<super::Weights>) -> Result<Graph, GraphError> {
    let file: ManifestFile = serde_json::from_str(text).map_err(|e| GraphError::Manifest(e.to_string()))?;
    let specs = file
        .nodes
        .iter()
        .map(|r| {
            Ok(NodeSpec {
                id: r.id,
                kind: kind_of(r)?,
                inputs: r.inputs.clone(),
                weights_ref: r.weights.clone(),
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    if specs.is_empty() {
        return Err(GraphError::NoOutput);
    }
    let output = file.output.ok_or(GraphError::NoOutput)?;
    Graph::new(specs, output, file.task, weights)
}

/// Canonical manifest text: pretty JSON with a trailing newline. Floats are
/// written in shortest round-trip form, so bounds keep full precision.
pub fn render_manifest(graph: &Graph) -> String {
    let file = ManifestFile {
        nodes: graph.specs().iter().map(record_of).collect(),
        output: Some(graph.output_id()),
        task: graph.task().clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("manifest serializes");
    text.push('\n');
    text
}

pub fn load_model(manifest_path: &Path, weights_path: &Path) -> Result<Graph, GraphError> {
    let weights = parse_weights(&fs::read(weights_path)?)?;
    let text = fs::read_to_string(manifest_path)?;
    parse_manifest(&text, Arc::new(weights))
}

pub fn save_model(graph: &Graph, manifest_path: &Path, weights_path: &Path) -> Result<(), GraphError> {
    if graph.is_empty() {
        return Err(GraphError::NoOutput);
    }
    fs::write(manifest_path, render_manifest(graph))?;
    fs::write(weights_path, render_weights(graph.weights()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny;
    use super::*;
    use crate::graph::{GraphBuilder, WeightTensor, Weights};
    use crate::numerics::CorrectionPolicy;

    #[test]
    fn minimal_manifest_loads() {
        let text = r#"{
            "nodes": [
                {"id": 0, "kind": "Input", "attrs": {"shape": [1, 4]}, "inputs": []},
                {"id": 1, "kind": "FullyConnected", "attrs": {}, "inputs": [0], "weights": "fc"},
                {"id": 2, "kind": "ReLU", "inputs": [1]}
            ],
            "output": 2,
            "task": {"type": "classification", "num_classes": 2, "topk": 1}
        }"#;
        let mut w = Weights::new();
        w.insert("fc".into(), WeightTensor::new(vec![4, 2], vec![0.0; 8]).unwrap());
        let g = parse_manifest(text, Arc::new(w)).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.output_node().output_shape, vec![1, 2]);
    }

    #[test]
    fn forward_reference_in_manifest() {
        let text = r#"{
            "nodes": [
                {"id": 0, "kind": "Input", "attrs": {"shape": [1, 4]}},
                {"id": 1, "kind": "ReLU", "inputs": [2]},
                {"id": 2, "kind": "ReLU", "inputs": [0]}
            ],
            "output": 2,
            "task": {"type": "classification", "num_classes": 4, "topk": 1}
        }"#;
        let err = parse_manifest(text, Arc::new(Weights::new())).unwrap_err();
        assert!(err.to_string().contains("forward reference"), "{err}");
        assert!(err.to_string().contains("node 1"));
    }

    #[test]
    fn malformed_manifest_errors() {
        let w = Arc::new(Weights::new());
        assert!(matches!(parse_manifest("{", w.clone()), Err(GraphError::Manifest(_))));
        let unknown = r#"{"nodes":[{"id":0,"kind":"LSTM","attrs":{}}],"output":0,
            "task":{"type":"classification","num_classes":2,"topk":1}}"#;
        let err = parse_manifest(unknown, w.clone()).unwrap_err();
        assert!(err.to_string().contains("node 0"), "{err}");
        let empty = r#"{"nodes":[],"output":null,"task":{"type":"classification","num_classes":2,"topk":1}}"#;
        assert_eq!(parse_manifest(empty, w).unwrap_err().to_string(), "no output node");
    }

    #[test]
    fn clip_bounds_keep_full_precision() {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 3] }, &[]);
        let low = -0.1234567890123456789f64;
        let up = 7.300000000000001f64;
        let c = b.add(
            OpKind::Clip {
                low,
                up,
                policy: CorrectionPolicy::ToBound,
            },
            &[x],
        );
        let g = b.finish(c, TaskSpec::classification(3)).unwrap();
        let text = render_manifest(&g);
        assert!(text.contains("7.300000000000001"), "{text}");
        let back = parse_manifest(&text, g.weights().clone()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (m, w) = (dir.path().join("m.json"), dir.path().join("m.rgwb"));
        let g = tiny();
        save_model(&g, &m, &w).unwrap();
        let back = load_model(&m, &w).unwrap();
        assert_eq!(back, g);
        let first = fs::read(&m).unwrap();
        save_model(&back, &m, &w).unwrap();
        assert_eq!(fs::read(&m).unwrap(), first);
    }
}
