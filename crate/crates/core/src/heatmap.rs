//! Jet-style colormap for normalized depth, and convex blending of the
//! resulting heatmap into the content image.

use crate::depth::NormalizedDepth;
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::tensor::Tensor3;

pub const LUT_SIZE: usize = 256;

/// 256-entry RGB lookup table.
#[derive(Clone, Debug, PartialEq)]
pub struct Colormap([[f32; 3]; LUT_SIZE]);

impl Colormap {
    pub fn entries(&self) -> &[[f32; 3]; LUT_SIZE] {
        &self.0
    }

    pub fn get(&self, index: usize) -> [f32; 3] {
        self.0[index]
    }

    /// Color for a value in `[0,1]`, using the nearest LUT index.
    pub fn lookup(&self, v: f32) -> [f32; 3] {
        self.0[lut_index(v)]
    }
}

/// Closed-form jet color at `t ∈ [0,1]`: blue → cyan → yellow → red.
pub fn jet(t: f64) -> [f32; 3] {
    let ramp = |center: f64| (1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0) as f32;
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

pub fn colormap_lut() -> Colormap {
    let mut lut = [[0.0; 3]; LUT_SIZE];
    for (i, e) in lut.iter_mut().enumerate() {
        *e = jet(i as f64 / 255.0);
    }
    Colormap(lut)
}

/// `clamp(floor(v·255 + 0.5), 0, 255)`
pub fn lut_index(v: f32) -> usize {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as usize
}

pub fn apply_colormap(d: &NormalizedDepth) -> ImageRGB {
    let lut = colormap_lut();
    let (h, w) = (d.height(), d.width());
    let values = d.values();
    let t = Tensor3::from_fn(3, h, w, |c, y, x| lut.lookup(values[y * w + x])[c]);
    ImageRGB::new(t).expect("LUT entries lie in [0,1]")
}

/// `(1 − alpha)·content + alpha·heat`, per pixel and channel.
pub fn blend(content: &ImageRGB, heat: &ImageRGB, alpha: f32) -> Result<ImageRGB> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("alpha {alpha} outside [0,1]")));
    }
    let (c, h) = (content.tensor(), heat.tensor());
    if !c.same_shape(h) {
        return Err(Error::DimensionMismatch(format!(
            "content is {}x{}, heatmap is {}x{}",
            content.height(),
            content.width(),
            heat.height(),
            heat.width()
        )));
    }
    let mut out = c.clone();
    for (o, &hv) in out.data_mut().iter_mut().zip(h.data()) {
        let cv = *o;
        let v = (1.0 - alpha) * cv + alpha * hv;
        *o = v.clamp(cv.min(hv), cv.max(hv));
    }
    ImageRGB::new(out)
}
