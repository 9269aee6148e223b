use std::collections::BTreeMap;

use proptest::prelude::*;

use rangeguard::engine::{infer, infer_with_fault, replay_with_fault, run, FaultOptions, FaultSpec};
use rangeguard::graph::{GraphBuilder, WeightTensor};
use rangeguard::modelzoo::Architecture;
use rangeguard::profiler::BoundSet;
use rangeguard::ranger::{instrument, Extension};
use rangeguard::{CorrectionPolicy, Graph, NumericFormat, OpKind, TaskSpec, Tensor};

fn formats() -> impl Strategy<Value = NumericFormat> {
    prop_oneof![
        Just(NumericFormat::Float32),
        Just(NumericFormat::fixed32()),
        Just(NumericFormat::fixed16())
    ]
}

fn image(side: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(0.0f32..1.0, side * side)
        .prop_map(move |v| Tensor::from_f32(vec![1, side, side, 1], &v).unwrap())
}

fn scalar_graph(kind: OpKind, weights: Option<f32>) -> Graph {
    let mut b = GraphBuilder::new();
    let x = b.add(OpKind::Input { shape: vec![1, 1] }, &[]);
    let y = match weights {
        Some(w) => b.add_weighted(kind, &[x], "w", WeightTensor::new(vec![1, 1], vec![w]).unwrap()),
        None => b.add(kind, &[x]),
    };
    let y = b.add(OpKind::Reshape { target_shape: vec![1, 1] }, &[y]);
    b.finish(y, TaskSpec::classification(1)).unwrap()
}

fn eval(g: &Graph, x: f64, format: NumericFormat) -> f64 {
    infer(g, &Tensor::from_f32(vec![1, 1], &[x as f32]).unwrap(), format).unwrap().values()[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_fault_locality(x in image(16), site in any::<prop::sample::Index>(), elem in any::<prop::sample::Index>(),
                             bit in 0u32..16, format in formats()) {
        let g = Architecture::SteerMini.build(3);
        let ops: Vec<_> = g.nodes().iter().filter(|n| n.kind.is_operator()).collect();
        let node = ops[site.index(ops.len())];
        let fault = FaultSpec::single(node.id, elem.index(node.num_elements()), bit);
        let options = FaultOptions::default();
        let golden = run(&g, &x, format).unwrap();
        let (y, trace) = infer_with_fault(&g, &x, &fault, format, &options).unwrap();
        prop_assert_eq!(trace.fault_applied.as_ref(), Some(&fault));
        let target = g.position(node.id).unwrap();
        for pos in 0..target {
            prop_assert!(trace.outputs[pos].bit_eq(&golden.outputs[pos]));
        }
        let hit = &trace.outputs[target];
        let changed = hit.values().iter().zip(golden.outputs[target].values()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        prop_assert!(changed <= 1);
        let replayed = replay_with_fault(&g, &golden, &fault, format, &options).unwrap();
        prop_assert!(replayed.bit_eq(&y));
    }

    #[test]
    fn relu_and_positive_mac_are_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0, w in 0.0f32..4.0, format in formats()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let relu = scalar_graph(OpKind::ReLU, None);
        prop_assert!(eval(&relu, hi, format) >= eval(&relu, lo, format));
        let mac = scalar_graph(OpKind::FullyConnected, Some(w));
        prop_assert!(eval(&mac, hi, format) >= eval(&mac, lo, format));
    }

    #[test]
    fn mac_deviation_grows_with_magnitude(a in -50.0f64..50.0, b in -50.0f64..50.0, w in -4.0f32..4.0) {
        let mac = scalar_graph(OpKind::FullyConnected, Some(w));
        let f = NumericFormat::Float32;
        let (small, large) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
        prop_assert!(eval(&mac, large, f).abs() >= eval(&mac, small, f).abs());
    }

    #[test]
    fn maxpool_is_monotone(v in proptest::collection::vec(-10.0f32..10.0, 4), i in 0usize..4, bump in 0.0f32..100.0) {
        let mut b = GraphBuilder::new();
        let x = b.add(OpKind::Input { shape: vec![1, 2, 2, 1] }, &[]);
        let y = b.add(OpKind::MaxPool { window: 2, stride: 2 }, &[x]);
        let g = b.finish(y, TaskSpec::classification(1)).unwrap();
        let mut raised = v.clone();
        raised[i] += bump;
        let run1 = |d: &[f32]| infer(&g, &Tensor::from_f32(vec![1, 2, 2, 1], d).unwrap(), NumericFormat::Float32).unwrap().values()[0];
        prop_assert!(run1(&raised) >= run1(&v));
    }

    #[test]
    fn instrumented_values_stay_in_bounds(x in image(16), up1 in 0.0f64..2.0, up2 in 0.0f64..2.0, up3 in 0.0f64..2.0,
                                          format in formats()) {
        let g = Architecture::SteerMini.build(5);
        let acts: Vec<_> = g.act_nodes().map(|n| n.id).collect();
        let bounds = BoundSet {
            percentile: 100.0,
            act_bounds: acts.iter().zip([up1, up2, up3]).map(|(&id, u)| (id, (0.0, u))).collect::<BTreeMap<_, _>>(),
            sample_count: 0,
        };
        let inst = instrument(&g, &bounds, CorrectionPolicy::ToBound, Extension::Transitive).unwrap();
        let consumers = inst.graph.consumers();
        for id in &acts {
            let c = &consumers[id];
            prop_assert_eq!(c.len(), 1);
            prop_assert!(inst.graph.node(c[0]).unwrap().kind.is_clip());
        }
        let trace = run(&inst.graph, &x, format).unwrap();
        for &(_, clip, low, up) in &inst.clips {
            let out = trace.output_of(&inst.graph, clip).unwrap();
            // arbitrary bounds are rounded to the datapath grid like any other value
            let (low, up) = (format.quantize(low), format.quantize(up));
            prop_assert!(out.values().iter().all(|v| (low..=up).contains(v)));
        }
    }
}
