//! Content, Gram-matrix style and total-variation losses with analytic
//! gradients, and their weighted combination through the extractor.
//!
//! Scalars and reductions are `f64` with a fixed summation order, so every
//! loss value is bitwise reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::depth::NormalizedDepth;
use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorSpec, FeatureSet, LayerGradients};
use crate::tensor::Tensor3;

/// Unnormalized channel inner products `G[j][k] = Σ_m F[j][m]·F[k][m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    channels: usize,
    positions: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial positions `M` the matrix was accumulated over.
    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.channels + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn gram(f: &Tensor3) -> GramMatrix {
    let c = f.channels();
    let mut data = vec![0.0f64; c * c];
    for j in 0..c {
        let fj = f.plane(j);
        for k in j..c {
            let fk = f.plane(k);
            let s: f64 = fj
                .iter()
                .zip(fk)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            data[j * c + k] = s;
            data[k * c + j] = s;
        }
    }
    GramMatrix {
        channels: c,
        positions: f.plane_len(),
        data,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    /// Depth-mask strength on the content term.
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 1.0,
            style: 1e3,
            tv: 1e-3,
            kappa: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("content_weight", self.content),
            ("style_weight", self.style),
            ("tv_weight", self.tv),
            ("kappa", self.kappa),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::OutOfRange(format!(
                    "{name} = {v}: must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub tv: f64,
}

/// Mean over style layers of `(1/(4N²M²))·‖G_x − G_s‖²_F`, with
/// `∂/∂F = (1/(N²M²))·(G_x − G_s)·F / L`.
pub fn style_loss(
    x_feats: &FeatureSet,
    s_grams: &BTreeMap<String, GramMatrix>,
) -> Result<(f64, LayerGradients)> {
    let mut grads = LayerGradients::new();
    if s_grams.is_empty() {
        return Ok((0.0, grads));
    }
    let layers = s_grams.len() as f64;
    let mut total = 0.0;
    for (name, target) in s_grams {
        let f = x_feats.get(name).ok_or_else(|| {
            Error::LayerMismatch(format!("no features for style layer `{name}`"))
        })?;
        let (c, m) = (f.channels(), f.plane_len());
        if target.channels != c {
            return Err(Error::ChannelMismatch(format!(
                "layer `{name}`: {c} channels against a {}-channel target Gram",
                target.channels
            )));
        }
        let gx = gram(f);
        let diff: Vec<f64> = gx.data.iter().zip(&target.data).map(|(a, b)| a - b).collect();
        let nm2 = (c as f64 * m as f64).powi(2);
        total += diff.iter().map(|d| d * d).sum::<f64>() / (4.0 * nm2) / layers;

        let scale = 1.0 / (nm2 * layers);
        let mut g = vec![0.0f64; c * m];
        for j in 0..c {
            let row = &mut g[j * m..(j + 1) * m];
            for k in 0..c {
                let d = diff[j * c + k] * scale;
                if d == 0.0 {
                    continue;
                }
                for (r, &v) in row.iter_mut().zip(f.plane(k)) {
                    *r += d * v as f64;
                }
            }
        }
        grads.insert(
            name.clone(),
            Tensor3::from_f64(c, f.height(), f.width(), &g),
        );
    }
    Ok((total, grads))
}

/// `½·Σ m·(F − P)²` with `m = 1 + kappa·mask`; gradient `m·(F − P)`.
pub fn content_loss(
    f: &Tensor3,
    p: &Tensor3,
    mask: Option<&NormalizedDepth>,
    kappa: f64,
) -> Result<(f64, Tensor3)> {
    f.expect_shape(p, "content features vs. target")?;
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::OutOfRange(format!("kappa = {kappa}")));
    }
    let (c, h, w) = f.shape();
    let weights: Option<Vec<f64>> = match mask {
        Some(mk) if kappa != 0.0 => {
            if (mk.height(), mk.width()) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "mask is {}x{}, features are {h}x{w}",
                    mk.height(),
                    mk.width()
                )));
            }
            Some(mk.values().iter().map(|&v| 1.0 + kappa * v as f64).collect())
        }
        _ => None,
    };
    let n = h * w;
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; c * n];
    for (i, ((&fv, &pv), g)) in f.data().iter().zip(p.data()).zip(&mut grad).enumerate() {
        let r = fv as f64 - pv as f64;
        let m = weights.as_ref().map_or(1.0, |wts| wts[i % n]);
        loss += 0.5 * m * r * r;
        *g = m * r;
    }
    Ok((loss, Tensor3::from_f64(c, h, w, &grad)))
}

/// Sum of squared horizontal and vertical neighbour differences.
pub fn tv_loss(img: &Tensor3) -> (f64, Tensor3) {
    let (c, h, w) = img.shape();
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; c * h * w];
    for ch in 0..c {
        let src = img.plane(ch);
        let g = &mut grad[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = src[i + 1] as f64 - src[i] as f64;
                    loss += d * d;
                    g[i + 1] += 2.0 * d;
                    g[i] -= 2.0 * d;
                }
                if y + 1 < h {
                    let d = src[i + w] as f64 - src[i] as f64;
                    loss += d * d;
                    g[i + w] += 2.0 * d;
                    g[i] -= 2.0 * d;
                }
            }
        }
    }
    (loss, Tensor3::from_f64(c, h, w, &grad))
}

/// Content features and style Grams, computed once per job.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub content: Tensor3,
    pub style_grams: BTreeMap<String, GramMatrix>,
}

impl Targets {
    pub fn compute(
        extractor: &Extractor,
        spec: &ExtractorSpec,
        content: &Tensor3,
        style: &Tensor3,
    ) -> Result<Self> {
        extractor.validate(spec)?;
        let content_layer = [spec.content_layer.as_str()];
        let cf = extractor.features(&extractor.forward(content, &content_layer)?, &content_layer)?;
        let style_layers: Vec<&str> = spec.style_layers.iter().map(String::as_str).collect();
        let sf = extractor.features(&extractor.forward(style, &style_layers)?, &style_layers)?;
        Ok(Self {
            content: cf[&spec.content_layer].clone(),
            style_grams: sf.iter().map(|(k, v)| (k.clone(), gram(v))).collect(),
        })
    }
}

/// Weighted loss at `x` and its gradient with respect to the pixels.
pub fn total_loss(
    x: &Tensor3,
    targets: &Targets,
    weights: &LossWeights,
    extractor: &Extractor,
    spec: &ExtractorSpec,
    mask: Option<&NormalizedDepth>,
) -> Result<(LossReport, Tensor3)> {
    weights.validate()?;
    let layers = spec.layers();
    let fwd = extractor.forward(x, &layers)?;
    let feats = extractor.features(&fwd, &layers)?;

    let cf = &feats[&spec.content_layer];
    let resized;
    let mask = match mask {
        Some(m) if (m.height(), m.width()) != (cf.height(), cf.width()) => {
            resized = m.resized(cf.height(), cf.width())?;
            Some(&resized)
        }
        other => other,
    };
    let (content, content_grad) = content_loss(cf, &targets.content, mask, weights.kappa)?;
    let (style, style_grads) = style_loss(&feats, &targets.style_grams)?;
    let (tv, tv_grad) = tv_loss(x);

    let mut layer_grads = LayerGradients::new();
    let mut inject = |name: &str, g: &Tensor3, w: f64| -> Result<()> {
        if w == 0.0 {
            return Ok(());
        }
        match layer_grads.get_mut(name) {
            Some(acc) => acc.add_scaled(g, w as f32),
            None => {
                layer_grads.insert(name.to_string(), g.map(|v| v * w as f32));
                Ok(())
            }
        }
    };
    inject(&spec.content_layer, &content_grad, weights.content)?;
    for (name, g) in &style_grads {
        inject(name, g, weights.style)?;
    }
    let mut pixel_grad = extractor.backward_from(&fwd, &layer_grads)?;
    if weights.tv != 0.0 {
        pixel_grad.add_scaled(&tv_grad, weights.tv as f32)?;
    }

    let report = LossReport {
        total: weights.content * content + weights.style * style + weights.tv * tv,
        content,
        style,
        tv,
    };
    Ok((report, pixel_grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_examples() {
        let z = Tensor3::zeros(3, 2, 2);
        assert!(gram(&z).data().iter().all(|&v| v == 0.0));
        let f = Tensor3::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gram(&f).data(), &[5.0, 11.0, 11.0, 25.0]);
        let ones = Tensor3::filled(1, 2, 2, 1.0);
        assert_eq!(gram(&ones).data(), &[4.0]);
    }

    #[test]
    fn style_loss_zero_at_matching_grams() {
        let f = Tensor3::from_fn(4, 3, 3, |c, y, x| ((c * 5 + y * 2 + x) % 7) as f32 / 7.0);
        let mut feats = FeatureSet::new();
        feats.insert("a".into(), f.clone());
        let mut grams = BTreeMap::new();
        grams.insert("a".to_string(), gram(&f));
        let (l, g) = style_loss(&feats, &grams).unwrap();
        assert_eq!(l, 0.0);
        assert!(g["a"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn style_loss_is_degree_four_homogeneous() {
        let f = Tensor3::from_fn(2, 3, 3, |c, y, x| ((c + y * 3 + x) % 5) as f32 * 0.25);
        let target = gram(&Tensor3::zeros(2, 3, 3));
        let loss_of = |t: &Tensor3| {
            let mut feats = FeatureSet::new();
            feats.insert("a".into(), t.clone());
            let mut grams = BTreeMap::new();
            grams.insert("a".to_string(), target.clone());
            style_loss(&feats, &grams).unwrap().0
        };
        let base = loss_of(&f);
        let doubled = loss_of(&f.map(|v| 2.0 * v));
        assert!(base > 0.0);
        assert!((doubled / base - 16.0).abs() < 1e-12);
    }

    #[test]
    fn style_loss_errors() {
        let mut feats = FeatureSet::new();
        feats.insert("a".into(), Tensor3::zeros(2, 2, 2));
        let mut grams = BTreeMap::new();
        grams.insert("b".to_string(), gram(&Tensor3::zeros(2, 2, 2)));
        assert!(matches!(
            style_loss(&feats, &grams),
            Err(Error::LayerMismatch(_))
        ));
        let mut grams = BTreeMap::new();
        grams.insert("a".to_string(), gram(&Tensor3::zeros(3, 2, 2)));
        assert!(matches!(
            style_loss(&feats, &grams),
            Err(Error::ChannelMismatch(_))
        ));
    }

    #[test]
    fn content_loss_identity_and_kappa_zero() {
        let f = Tensor3::from_fn(2, 2, 3, |c, y, x| (c + y + x) as f32 * 0.1);
        let (l, g) = content_loss(&f, &f, None, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let p = Tensor3::zeros(2, 2, 3);
        let mask = NormalizedDepth::new(2, 3, vec![0.3, 1.0, 0.0, 0.5, 0.2, 0.9]).unwrap();
        let unmasked = content_loss(&f, &p, None, 0.0).unwrap();
        let masked = content_loss(&f, &p, Some(&mask), 0.0).unwrap();
        assert_eq!(unmasked.0.to_bits(), masked.0.to_bits());
        assert_eq!(unmasked.1, masked.1);
        let half_sq: f64 = f.data().iter().map(|&v| 0.5 * (v as f64).powi(2)).sum();
        assert_eq!(unmasked.0, half_sq);
    }

    #[test]
    fn one_pixel_mask_doubles_gradient() {
        let f = Tensor3::from_fn(3, 2, 2, |c, y, x| 0.1 + (c * 4 + y * 2 + x) as f32 * 0.05);
        let p = Tensor3::zeros(3, 2, 2);
        let mask = NormalizedDepth::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let (_, g0) = content_loss(&f, &p, None, 0.0).unwrap();
        let (_, g1) = content_loss(&f, &p, Some(&mask), 1.0).unwrap();
        for c in 0..3 {
            for y in 0..2 {
                for x in 0..2 {
                    let factor = if (y, x) == (0, 1) { 2.0 } else { 1.0 };
                    assert_eq!(g1.get(c, y, x), factor * g0.get(c, y, x));
                }
            }
        }
    }

    #[test]
    fn content_loss_mask_shape_checked() {
        let f = Tensor3::zeros(1, 2, 2);
        let mask = NormalizedDepth::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            content_loss(&f, &f, Some(&mask), 1.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn tv_examples() {
        let (l, g) = tv_loss(&Tensor3::filled(3, 4, 4, 0.3));
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let (l, g) = tv_loss(&Tensor3::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap());
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[-2.0, 2.0]);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            style: -1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::OutOfRange(_))));
    }
}
