use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Target};
use crate::campaign::mix_seed;
use crate::engine;
use crate::graph::{AngleUnit, Graph, GraphBuilder, NodeId, OpKind, Padding, TaskSpec, WeightTensor};
use crate::numerics::NumericFormat;
use crate::tensor::Tensor;

/// Shipped model architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// 64 -> 16 -> 2 perceptron for the separable synthetic set.
    TinyMlp,
    /// Two 5x5 conv blocks and two FC layers on 28x28 digits.
    LenetMini,
    /// `LenetMini` with Tanh activations.
    LenetMiniTanh,
    /// Steering-angle regressor on 16x16 images, output in degrees.
    SteerMini,
    /// As `SteerMini` but ending in Atan, output in radians.
    SteerMiniRad,
    /// Fixed positive-weight 64 -> 8 -> 4 chain; not trained.
    ToyChain,
}

const ALL: [Architecture; 6] = [
    Architecture::TinyMlp,
    Architecture::LenetMini,
    Architecture::LenetMiniTanh,
    Architecture::SteerMini,
    Architecture::SteerMiniRad,
    Architecture::ToyChain,
];

impl Architecture {
    pub fn all() -> &'static [Architecture] {
        &ALL
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::TinyMlp => "tiny-mlp",
            Architecture::LenetMini => "lenet-mini",
            Architecture::LenetMiniTanh => "lenet-mini-tanh",
            Architecture::SteerMini => "steer-mini",
            Architecture::SteerMiniRad => "steer-mini-rad",
            Architecture::ToyChain => "toy-chain",
        }
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self {
            Architecture::TinyMlp | Architecture::ToyChain => vec![1, 64],
            Architecture::LenetMini | Architecture::LenetMiniTanh => vec![1, 28, 28, 1],
            Architecture::SteerMini | Architecture::SteerMiniRad => vec![1, 16, 16, 1],
        }
    }

    pub fn is_trainable(self) -> bool {
        self != Architecture::ToyChain
    }

    /// Freshly initialized graph (hand-set weights for the toy chain).
    pub fn build(self, seed: u64) -> Graph {
        let mut init = Init { seed, count: 0 };
        match self {
            Architecture::TinyMlp => mlp(&mut init),
            Architecture::LenetMini => lenet(&mut init, OpKind::ReLU),
            Architecture::LenetMiniTanh => lenet(&mut init, OpKind::Tanh),
            Architecture::SteerMini => steer(&mut init, AngleUnit::Degrees),
            Architecture::SteerMiniRad => steer(&mut init, AngleUnit::Radians),
            Architecture::ToyChain => toy_chain(),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ALL.iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown architecture '{s}'"))
    }
}

struct Init {
    seed: u64,
    count: u64,
}

impl Init {
    /// Uniform in `+-sqrt(6 / fan)`.
    fn uniform(&mut self, shape: Vec<usize>, fan: usize) -> WeightTensor {
        self.count += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, self.count));
        let limit = (6.0 / fan as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        WeightTensor::new(shape, data).expect("shape")
    }
}

fn zeros(n: usize) -> WeightTensor {
    WeightTensor::new(vec![n], vec![0.0; n]).expect("shape")
}

fn dense(b: &mut GraphBuilder, init: &mut Init, x: NodeId, name: &str, fan_in: usize, fan_out: usize, fan: usize) -> NodeId {
    let w = init.uniform(vec![fan_in, fan_out], fan);
    let fc = b.add_weighted(OpKind::FullyConnected, &[x], &format!("{name}/weights"), w);
    b.add_weighted(OpKind::BiasAdd, &[fc], &format!("{name}/bias"), zeros(fan_out))
}

fn conv(b: &mut GraphBuilder, init: &mut Init, x: NodeId, name: &str, cin: usize, cout: usize, fan: usize) -> NodeId {
    let k = init.uniform(vec![5, 5, cin, cout], fan);
    let c = b.add_weighted(
        OpKind::Conv2D {
            stride: 1,
            padding: Padding::Same,
        },
        &[x],
        &format!("{name}/kernel"),
        k,
    );
    b.add_weighted(OpKind::BiasAdd, &[c], &format!("{name}/bias"), zeros(cout))
}

/// He fan for ReLU, Glorot-style fan for saturating activations.
fn fan(act: &OpKind, fan_in: usize, fan_out: usize) -> usize {
    match act {
        OpKind::ReLU => fan_in / 2,
        _ => (fan_in + fan_out) / 2,
    }
}

fn mlp(init: &mut Init) -> Graph {
    let mut b = GraphBuilder::new();
    let x = b.add(OpKind::Input { shape: vec![1, 64] }, &[]);
    let h = dense(&mut b, init, x, "fc1", 64, 16, 32);
    let h = b.add(OpKind::ReLU, &[h]);
    let y = dense(&mut b, init, h, "fc2", 16, 2, 16);
    b.finish(y, TaskSpec::classification(2)).expect("valid architecture")
}

fn conv_trunk(b: &mut GraphBuilder, init: &mut Init, x: NodeId, act: &OpKind, side: usize) -> NodeId {
    let h = conv(b, init, x, "conv1", 1, 8, fan(act, 25, 25 * 8));
    let h = b.add(act.clone(), &[h]);
    let h = b.add(OpKind::MaxPool { window: 2, stride: 2 }, &[h]);
    let h = conv(b, init, h, "conv2", 8, 16, fan(act, 200, 400));
    let h = b.add(act.clone(), &[h]);
    let h = b.add(OpKind::MaxPool { window: 2, stride: 2 }, &[h]);
    let flat = (side / 4) * (side / 4) * 16;
    b.add(
        OpKind::Reshape {
            target_shape: vec![1, flat],
        },
        &[h],
    )
}

fn lenet(init: &mut Init, act: OpKind) -> Graph {
    let mut b = GraphBuilder::new();
    let x = b.add(
        OpKind::Input {
            shape: vec![1, 28, 28, 1],
        },
        &[],
    );
    let h = conv_trunk(&mut b, init, x, &act, 28);
    let h = dense(&mut b, init, h, "fc1", 784, 64, fan(&act, 784, 64));
    let h = b.add(act, &[h]);
    let y = dense(&mut b, init, h, "fc2", 64, 10, 37);
    b.finish(y, TaskSpec::classification(10)).expect("valid architecture")
}

fn steer(init: &mut Init, unit: AngleUnit) -> Graph {
    let mut b = GraphBuilder::new();
    let x = b.add(
        OpKind::Input {
            shape: vec![1, 16, 16, 1],
        },
        &[],
    );
    let act = OpKind::ReLU;
    let h = conv_trunk(&mut b, init, x, &act, 16);
    let h = dense(&mut b, init, h, "fc1", 256, 32, 128);
    let h = b.add(act, &[h]);
    let mut y = dense(&mut b, init, h, "fc2", 32, 1, 16);
    if unit == AngleUnit::Radians {
        y = b.add(OpKind::Atan, &[y]);
    }
    b.finish(y, TaskSpec::steering(unit)).expect("valid architecture")
}

fn toy_chain() -> Graph {
    let mut b = GraphBuilder::new();
    let x = b.add(OpKind::Input { shape: vec![1, 64] }, &[]);
    let w1: Vec<f32> = (0..64 * 8)
        .map(|n| {
            let (i, j) = (n / 8, n % 8);
            0.02 + 0.005 * ((i * 5 + j * 3) % 7) as f32
        })
        .collect();
    let b1: Vec<f32> = (0..8).map(|j| 0.05 * j as f32).collect();
    let w2: Vec<f32> = (0..8 * 4)
        .map(|n| {
            let (j, k) = (n / 4, n % 4);
            0.1 + if k == j % 4 { 0.4 } else { 0.0 } + 0.02 * ((j + k) % 3) as f32
        })
        .collect();
    let b2 = vec![0.3, 0.2, 0.1, 0.0];
    let h = b.add_weighted(OpKind::FullyConnected, &[x], "fc1/weights", WeightTensor::new(vec![64, 8], w1).unwrap());
    let h = b.add_weighted(OpKind::BiasAdd, &[h], "fc1/bias", WeightTensor::new(vec![8], b1).unwrap());
    let h = b.add(OpKind::ReLU, &[h]);
    let y = b.add_weighted(OpKind::FullyConnected, &[h], "fc2/weights", WeightTensor::new(vec![8, 4], w2).unwrap());
    let y = b.add_weighted(OpKind::BiasAdd, &[y], "fc2/bias", WeightTensor::new(vec![4], b2).unwrap());
    b.finish(y, TaskSpec::classification(4)).expect("valid architecture")
}

/// Uniform `[0, 1)` inputs for the toy chain, labelled with its own float32
/// prediction.
pub fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let g = toy_chain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::default();
    for _ in 0..n {
        let x: Vec<f32> = (0..64).map(|_| rng.gen::<f32>()).collect();
        let t = Tensor::from_f32(vec![1, 64], &x).expect("shape");
        let label = engine::infer(&g, &t, NumericFormat::Float32)
            .expect("toy chain runs")
            .argmax()
            .expect("finite logits");
        data.inputs.push(t);
        data.targets.push(Target::Class(label));
    }
    data
}
