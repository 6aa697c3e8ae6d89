//! Stride-1 2-D convolution with reflection or zero padding, its input
//! adjoint, and the padding operator with its adjoint.
//!
//! Reductions accumulate in `f64` in a fixed loop order so results are
//! bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Mirror about the edge pixel (`-1 → 1`, `H → H-2`). A dimension of
    /// length 1 replicates its single pixel instead.
    Reflect,
    Zero,
}

/// Source coordinate for a (possibly out-of-range) padded coordinate, or
/// `None` when it reads an implicit zero.
#[inline]
pub fn pad_index(coord: isize, len: usize, mode: Padding) -> Option<usize> {
    if (0..len as isize).contains(&coord) {
        return Some(coord as usize);
    }
    match mode {
        Padding::Zero => None,
        Padding::Reflect if len == 1 => Some(0),
        Padding::Reflect => {
            let period = 2 * (len as isize - 1);
            let c = coord.rem_euclid(period);
            Some(if c >= len as isize { period - c } else { c } as usize)
        }
    }
}

/// Pads every channel by `p` on each side.
pub fn pad(t: &Tensor3, p: usize, mode: Padding) -> Tensor3 {
    let (c, h, w) = t.shape();
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor3::zeros(c, hp, wp);
    for ch in 0..c {
        let src = t.plane(ch);
        let dst = out.plane_mut(ch);
        for py in 0..hp {
            let Some(sy) = pad_index(py as isize - p as isize, h, mode) else {
                continue;
            };
            for px in 0..wp {
                if let Some(sx) = pad_index(px as isize - p as isize, w, mode) {
                    dst[py * wp + px] = src[sy * w + sx];
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad`]: each padded cell's value is added back onto the
/// source pixel it was copied from.
pub fn pad_adjoint(g: &Tensor3, p: usize, mode: Padding) -> Result<Tensor3> {
    let (c, hp, wp) = g.shape();
    if hp <= 2 * p || wp <= 2 * p {
        return Err(Error::ShapeMismatch(format!(
            "padded tensor {hp}x{wp} too small for padding {p}"
        )));
    }
    let data: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    let out = fold_padding(&data, c, h, w, p, mode);
    Ok(Tensor3::from_f64(c, h, w, &out))
}

fn fold_padding(data: &[f64], c: usize, h: usize, w: usize, p: usize, mode: Padding) -> Vec<f64> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0f64; c * h * w];
    for ch in 0..c {
        let src = &data[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for py in 0..hp {
            let Some(sy) = pad_index(py as isize - p as isize, h, mode) else {
                continue;
            };
            for px in 0..wp {
                if let Some(sx) = pad_index(px as isize - p as isize, w, mode) {
                    dst[sy * w + sx] += src[py * wp + px];
                }
            }
        }
    }
    out
}

/// Square-kernel, stride-1 convolution layer with "same" output size.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    pad: usize,
    padding: Padding,
    /// `[o][i][ky][kx]`, row-major.
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        pad: usize,
        padding: Padding,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel == 0 {
            return Err(Error::InvalidDimensions(format!(
                "conv {out_channels}x{in_channels}x{kernel}x{kernel}"
            )));
        }
        if 2 * pad + 1 < kernel {
            return Err(Error::ShapeMismatch(format!(
                "padding {pad} too small for kernel {kernel}"
            )));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {out_channels}x{in_channels}x{kernel}x{kernel} kernel",
                weight.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "{} biases for {out_channels} output channels",
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution parameters"));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            pad,
            padding,
            weight,
            bias,
        })
    }

    /// 3×3 kernel, reflection padding of 1.
    pub fn reflect3x3(in_channels: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        let out_channels = bias.len();
        Self::new(out_channels, in_channels, 3, 1, Padding::Reflect, weight, bias)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h + 2 * self.pad + 1 - self.kernel, w + 2 * self.pad + 1 - self.kernel)
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check_input(x)?;
        let (_, h, w) = x.shape();
        let k = self.kernel;
        let padded = pad(x, self.pad, self.padding);
        let (hp, wp) = (padded.height(), padded.width());
        let (ho, wo) = self.out_size(h, w);
        let mut out = vec![0.0f64; self.out_channels * ho * wo];
        for (o, acc) in out.chunks_exact_mut(ho * wo).enumerate() {
            acc.fill(self.bias[o] as f64);
            for i in 0..self.in_channels {
                let src = padded.plane(i);
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = self.w(o, i, ky, kx) as f64;
                        for y in 0..ho {
                            let row = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + wo];
                            let dst = &mut acc[y * wo..(y + 1) * wo];
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += wt * s as f64;
                            }
                        }
                    }
                }
            }
        }
        debug_assert_eq!(hp, ho + k - 1);
        Ok(Tensor3::from_f64(self.out_channels, ho, wo, &out))
    }

    /// Gradient with respect to the input given the gradient of the output:
    /// transposed convolution followed by the padding adjoint.
    pub fn backward_input(&self, grad_out: &Tensor3, in_h: usize, in_w: usize) -> Result<Tensor3> {
        let (ho, wo) = self.out_size(in_h, in_w);
        if grad_out.shape() != (self.out_channels, ho, wo) {
            return Err(Error::ShapeMismatch(format!(
                "conv output gradient {:?}, expected {:?}",
                grad_out.shape(),
                (self.out_channels, ho, wo)
            )));
        }
        let k = self.kernel;
        let (hp, wp) = (in_h + 2 * self.pad, in_w + 2 * self.pad);
        let mut gp = vec![0.0f64; self.in_channels * hp * wp];
        for o in 0..self.out_channels {
            let g = grad_out.plane(o);
            for i in 0..self.in_channels {
                let dst_plane = &mut gp[i * hp * wp..(i + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = self.w(o, i, ky, kx) as f64;
                        for y in 0..ho {
                            let src = &g[y * wo..(y + 1) * wo];
                            let start = (y + ky) * wp + kx;
                            let dst = &mut dst_plane[start..start + wo];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wt * s as f64;
                            }
                        }
                    }
                }
            }
        }
        let folded = fold_padding(&gp, self.in_channels, in_h, in_w, self.pad, self.padding);
        Ok(Tensor3::from_f64(self.in_channels, in_h, in_w, &folded))
    }
}

/// 3×3 convolution with reflection padding of 1. `weight` is `[o][i][ky][kx]`
/// with `o = bias.len()`.
pub fn conv3x3_reflect(input: &Tensor3, weight: &[f32], bias: &[f32]) -> Result<Tensor3> {
    Conv2d::reflect3x3(input.channels(), weight.to_vec(), bias.to_vec())?.forward(input)
}

/// Transpose of [`conv3x3_reflect`]'s linear part, mapping an output-shaped
/// tensor back to input shape.
pub fn conv3x3_reflect_transpose(
    grad_out: &Tensor3,
    in_channels: usize,
    weight: &[f32],
    bias_len: usize,
) -> Result<Tensor3> {
    let conv = Conv2d::reflect3x3(in_channels, weight.to_vec(), vec![0.0; bias_len])?;
    conv.backward_input(grad_out, grad_out.height(), grad_out.width())
}
