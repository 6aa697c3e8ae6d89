//! The reference two-layer extractor: conv3x3(3→8) → ReLU → conv3x3(8→16) → ReLU,
//! reflection padded, with closed-form integer-derived weights.

use super::conv::Conv2d;
use super::net::{Node, Op, SequentialNet};

pub const RELU1: &str = "relu1";
pub const RELU2: &str = "relu2";

/// Parameters of both convolutions, weights laid out `[o][i][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyWeights {
    pub conv1_weight: Vec<f32>,
    pub conv1_bias: Vec<f32>,
    pub conv2_weight: Vec<f32>,
    pub conv2_bias: Vec<f32>,
}

fn kernel(
    outs: usize,
    ins: usize,
    f: impl Fn(usize, usize, usize, usize) -> usize,
) -> Vec<f32> {
    let mut w = Vec::with_capacity(outs * ins * 9);
    for o in 0..outs {
        for i in 0..ins {
            for ky in 0..3 {
                for kx in 0..3 {
                    w.push(((f(o, i, ky, kx) % 11) as f32 - 5.0) / 20.0);
                }
            }
        }
    }
    w
}

pub fn tiny_weights() -> TinyWeights {
    TinyWeights {
        conv1_weight: kernel(8, 3, |o, i, ky, kx| 31 * o + 17 * i + 5 * ky + kx),
        conv1_bias: (0..8).map(|o| ((o % 7) as f32 - 3.0) / 10.0).collect(),
        conv2_weight: kernel(16, 8, |o, i, ky, kx| 29 * o + 13 * i + 7 * ky + 3 * kx),
        conv2_bias: (0..16).map(|o| ((o % 5) as f32 - 2.0) / 10.0).collect(),
    }
}

pub(crate) fn tiny_net() -> SequentialNet {
    let w = tiny_weights();
    let conv1 = Conv2d::reflect3x3(3, w.conv1_weight, w.conv1_bias).expect("conv1 shape");
    let conv2 = Conv2d::reflect3x3(8, w.conv2_weight, w.conv2_bias).expect("conv2 shape");
    SequentialNet::new(
        3,
        vec![
            Node {
                name: "conv1".into(),
                op: Op::Conv(conv1),
            },
            Node {
                name: RELU1.into(),
                op: Op::Relu,
            },
            Node {
                name: "conv2".into(),
                op: Op::Conv(conv2),
            },
            Node {
                name: RELU2.into(),
                op: Op::Relu,
            },
        ],
    )
}
