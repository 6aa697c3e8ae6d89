//! A chain of layers with a hand-written backward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

use super::conv::Conv2d;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv(Conv2d),
    Relu,
    /// 2×2 window, stride 2, trailing odd row/column dropped.
    MaxPool2,
    /// `x·scale[c] + shift[c]` per channel.
    ChannelAffine { scale: Vec<f32>, shift: Vec<f32> },
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequentialNet {
    in_channels: usize,
    nodes: Vec<Node>,
}

/// Every intermediate output of a forward pass, needed for backward.
#[derive(Clone, Debug)]
pub struct Forward {
    input: Tensor3,
    outputs: Vec<Tensor3>,
}

impl Forward {
    pub fn input(&self) -> &Tensor3 {
        &self.input
    }

    /// Output of node `k`, if the pass reached it.
    pub fn output(&self, k: usize) -> Option<&Tensor3> {
        self.outputs.get(k)
    }

    pub fn depth(&self) -> usize {
        self.outputs.len()
    }

    fn node_input(&self, k: usize) -> &Tensor3 {
        if k == 0 {
            &self.input
        } else {
            &self.outputs[k - 1]
        }
    }
}

impl SequentialNet {
    pub fn new(in_channels: usize, nodes: Vec<Node>) -> Self {
        Self { in_channels, nodes }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Runs nodes `0..=last`.
    pub fn forward(&self, img: &Tensor3, last: usize) -> Result<Forward> {
        if img.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.in_channels,
                img.channels()
            )));
        }
        let mut outputs: Vec<Tensor3> = Vec::with_capacity(last + 1);
        for node in &self.nodes[..=last] {
            let x = outputs.last().unwrap_or(img);
            let y = match &node.op {
                Op::Conv(conv) => conv.forward(x)?,
                Op::Relu => x.map(|v| v.max(0.0)),
                Op::MaxPool2 => max_pool2(x)?,
                Op::ChannelAffine { scale, shift } => channel_affine(x, scale, shift)?,
                Op::Identity => x.clone(),
            };
            outputs.push(y);
        }
        Ok(Forward {
            input: img.clone(),
            outputs,
        })
    }

    /// Back-propagates gradients injected at node outputs down to the input.
    /// `grads` pairs node indices with `∂L/∂output`; several entries for the
    /// same node accumulate.
    pub fn backward(&self, fwd: &Forward, grads: &[(usize, &Tensor3)]) -> Result<Tensor3> {
        let Some(deepest) = grads.iter().map(|(k, _)| *k).max() else {
            return Ok(Tensor3::zeros(
                self.in_channels,
                fwd.input.height(),
                fwd.input.width(),
            ));
        };
        if deepest >= fwd.depth() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for node {deepest} but forward pass stopped at {}",
                fwd.depth()
            )));
        }
        let mut g: Option<Tensor3> = None;
        for k in (0..=deepest).rev() {
            for (_, dk) in grads.iter().filter(|(j, _)| *j == k) {
                let out = &fwd.outputs[k];
                out.expect_shape(dk, &format!("gradient for `{}`", self.nodes[k].name))?;
                match g.as_mut() {
                    Some(acc) => acc.add_scaled(dk, 1.0)?,
                    None => g = Some((*dk).clone()),
                }
            }
            let Some(gk) = g.take() else {
                continue;
            };
            let x = fwd.node_input(k);
            let gx = match &self.nodes[k].op {
                Op::Conv(conv) => conv.backward_input(&gk, x.height(), x.width())?,
                Op::Relu => {
                    let mut gx = gk;
                    // Subgradient 0 at a pre-activation of exactly 0.
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    gx
                }
                Op::MaxPool2 => max_pool2_backward(x, &gk),
                Op::ChannelAffine { scale, .. } => {
                    let mut gx = gk;
                    for (c, &s) in scale.iter().cycle().take(gx.channels()).enumerate() {
                        gx.plane_mut(c).iter_mut().for_each(|v| *v *= s);
                    }
                    gx
                }
                Op::Identity => gk,
            };
            g = Some(gx);
        }
        Ok(g.unwrap_or_else(|| {
            Tensor3::zeros(self.in_channels, fwd.input.height(), fwd.input.width())
        }))
    }
}

fn channel_affine(x: &Tensor3, scale: &[f32], shift: &[f32]) -> Result<Tensor3> {
    let c = x.channels();
    let fits = |v: &[f32]| v.len() == 1 || v.len() == c;
    if !fits(scale) || !fits(shift) {
        return Err(Error::ChannelMismatch(format!(
            "per-channel constants of length {}/{} for {c} channels",
            scale.len(),
            shift.len()
        )));
    }
    let mut y = x.clone();
    for ch in 0..c {
        let s = scale[ch % scale.len()];
        let b = shift[ch % shift.len()];
        y.plane_mut(ch).iter_mut().for_each(|v| *v = *v * s + b);
    }
    Ok(y)
}

fn max_pool2(x: &Tensor3) -> Result<Tensor3> {
    let (c, h, w) = x.shape();
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch(format!(
            "2x2 max pooling needs at least 2x2 input, got {h}x{w}"
        )));
    }
    Ok(Tensor3::from_fn(c, h / 2, w / 2, |ch, y, xx| {
        let (a, b) = (2 * y, 2 * xx);
        x.get(ch, a, b)
            .max(x.get(ch, a, b + 1))
            .max(x.get(ch, a + 1, b))
            .max(x.get(ch, a + 1, b + 1))
    }))
}

/// Routes each pooled gradient to the first maximal element of its window.
fn max_pool2_backward(x: &Tensor3, g: &Tensor3) -> Tensor3 {
    let (c, h, w) = x.shape();
    let mut gx = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let window = [
                    (2 * y, 2 * xx),
                    (2 * y, 2 * xx + 1),
                    (2 * y + 1, 2 * xx),
                    (2 * y + 1, 2 * xx + 1),
                ];
                let mut best = window[0];
                for &(a, b) in &window[1..] {
                    if x.get(ch, a, b) > x.get(ch, best.0, best.1) {
                        best = (a, b);
                    }
                }
                let i = gx.index(ch, best.0, best.1);
                gx.data_mut()[i] += g.get(ch, y, xx);
            }
        }
    }
    gx
}
