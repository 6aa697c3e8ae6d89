//! Feature extraction backends. Both the reference `tiny` network and the
//! ONNX-loaded pretrained network are [`SequentialNet`]s, so they share one
//! forward/backward implementation.

pub mod conv;
pub mod net;
pub mod onnx;
pub mod tiny;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub use conv::{conv3x3_reflect, conv3x3_reflect_transpose, pad, pad_adjoint, Conv2d, Padding};
pub use net::{Forward, Node, Op, SequentialNet};
pub use tiny::{tiny_weights, TinyWeights};

/// Layer name → activation.
pub type FeatureSet = BTreeMap<String, Tensor3>;
/// Layer name → `∂L/∂activation`.
pub type LayerGradients = BTreeMap<String, Tensor3>;

pub const TINY: &str = "tiny";

/// Which backend to use and which of its layers carry style and content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub backend: String,
    pub style_layers: Vec<String>,
    pub content_layer: String,
}

impl ExtractorSpec {
    /// `tiny` with style on `relu1`, `relu2` and content on `relu2`.
    pub fn tiny() -> Self {
        Self {
            backend: TINY.into(),
            style_layers: vec![tiny::RELU1.into(), tiny::RELU2.into()],
            content_layer: tiny::RELU2.into(),
        }
    }

    /// Style layers followed by the content layer, without duplicates.
    pub fn layers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for l in self
            .style_layers
            .iter()
            .chain(std::iter::once(&self.content_layer))
        {
            if !out.contains(&l.as_str()) {
                out.push(l);
            }
        }
        out
    }
}

/// An immutable feature extractor.
#[derive(Clone, Debug)]
pub struct Extractor {
    id: String,
    net: SequentialNet,
    layers: Vec<String>,
}

impl Extractor {
    pub fn tiny() -> Self {
        Self {
            id: TINY.into(),
            net: tiny::tiny_net(),
            layers: vec![tiny::RELU1.into(), tiny::RELU2.into()],
        }
    }

    /// Wraps an arbitrary network; every node output becomes a layer.
    pub fn from_net(id: impl Into<String>, net: SequentialNet) -> Self {
        let layers = net.nodes().iter().map(|n| n.name.clone()).collect();
        Self {
            id: id.into(),
            net,
            layers,
        }
    }

    /// Resolves a backend id (`tiny` or `pretrained:<name>`).
    pub fn for_backend(backend: &str, pretrained_model: Option<&Path>) -> Result<Self> {
        match backend.split_once(':') {
            None if backend == TINY => Ok(Self::tiny()),
            Some(("pretrained", name)) if !name.is_empty() => {
                let path = pretrained_model.ok_or_else(|| {
                    Error::BackendUnavailable(format!(
                        "backend `{backend}` needs a model file (config key `pretrained_model`)"
                    ))
                })?;
                if !path.is_file() {
                    return Err(Error::BackendUnavailable(format!(
                        "pretrained model {} not found",
                        path.display()
                    )));
                }
                onnx::load_extractor(path, backend)
            }
            _ => Err(Error::OutOfRange(format!(
                "feature backend `{backend}` (expected `tiny` or `pretrained:<name>`)"
            ))),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn layer_names(&self) -> &[String] {
        &self.layers
    }

    pub fn net(&self) -> &SequentialNet {
        &self.net
    }

    fn node_of(&self, layer: &str) -> Result<usize> {
        if !self.layers.iter().any(|l| l == layer) {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        self.net
            .position(layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// Checks that every layer named by `spec` exists here.
    pub fn validate(&self, spec: &ExtractorSpec) -> Result<()> {
        if spec.backend != self.id {
            return Err(Error::LayerMismatch(format!(
                "spec is for backend `{}`, extractor is `{}`",
                spec.backend, self.id
            )));
        }
        for l in spec.layers() {
            self.node_of(l)?;
        }
        Ok(())
    }

    /// Forward pass deep enough to produce every named layer.
    pub fn forward(&self, img: &Tensor3, layers: &[&str]) -> Result<Forward> {
        let last = layers
            .iter()
            .map(|l| self.node_of(l))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .unwrap_or(0);
        self.net.forward(img, last)
    }

    pub fn features(&self, fwd: &Forward, layers: &[&str]) -> Result<FeatureSet> {
        layers
            .iter()
            .map(|&l| {
                let k = self.node_of(l)?;
                let t = fwd.output(k).ok_or_else(|| {
                    Error::LayerMismatch(format!("forward pass did not reach `{l}`"))
                })?;
                Ok((l.to_string(), t.clone()))
            })
            .collect()
    }

    /// Activations of every layer `spec` names.
    pub fn extract(&self, img: &Tensor3, spec: &ExtractorSpec) -> Result<FeatureSet> {
        self.validate(spec)?;
        let layers = spec.layers();
        let fwd = self.forward(img, &layers)?;
        self.features(&fwd, &layers)
    }

    /// `∂L/∂img` given `∂L/∂activation` for some layers.
    pub fn backward(&self, img: &Tensor3, grads: &LayerGradients) -> Result<Tensor3> {
        let names: Vec<&str> = grads.keys().map(String::as_str).collect();
        let fwd = self.forward(img, &names)?;
        self.backward_from(&fwd, grads)
    }

    /// Like [`Extractor::backward`], reusing a forward pass.
    pub fn backward_from(&self, fwd: &Forward, grads: &LayerGradients) -> Result<Tensor3> {
        let mut injected = Vec::with_capacity(grads.len());
        for (name, g) in grads {
            injected.push((self.node_of(name)?, g));
        }
        self.net.backward(fwd, &injected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_layer_set_and_defaults() {
        let ex = Extractor::tiny();
        assert_eq!(ex.layer_names(), &["relu1".to_string(), "relu2".to_string()]);
        let spec = ExtractorSpec::tiny();
        assert_eq!(spec.layers(), vec!["relu1", "relu2"]);
        ex.validate(&spec).unwrap();
    }

    #[test]
    fn hidden_conv_layers_are_not_exposed() {
        let ex = Extractor::tiny();
        let spec = ExtractorSpec {
            content_layer: "conv1".into(),
            ..ExtractorSpec::tiny()
        };
        assert!(matches!(ex.validate(&spec), Err(Error::UnknownLayer(l)) if l == "conv1"));
    }

    #[test]
    fn feature_shapes() {
        let ex = Extractor::tiny();
        let img = Tensor3::from_fn(3, 5, 7, |c, y, x| ((c * 7 + y * 3 + x) % 10) as f32 / 10.0);
        let f = ex.extract(&img, &ExtractorSpec::tiny()).unwrap();
        assert_eq!(f["relu1"].shape(), (8, 5, 7));
        assert_eq!(f["relu2"].shape(), (16, 5, 7));
        assert!(f.values().all(|t| t.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn zero_image_leaves_relu_of_bias() {
        let ex = Extractor::tiny();
        let img = Tensor3::zeros(3, 4, 4);
        let f = ex.extract(&img, &ExtractorSpec::tiny()).unwrap();
        let b1 = tiny_weights().conv1_bias;
        for (o, &b) in b1.iter().enumerate() {
            assert!(f["relu1"].plane(o).iter().all(|&v| v == b.max(0.0)));
        }
    }

    #[test]
    fn zero_gradients_give_zero() {
        let ex = Extractor::tiny();
        let img = Tensor3::from_fn(3, 4, 4, |c, y, x| ((c + y + x) % 3) as f32 * 0.3);
        let mut g = LayerGradients::new();
        g.insert("relu1".into(), Tensor3::zeros(8, 4, 4));
        g.insert("relu2".into(), Tensor3::zeros(16, 4, 4));
        let gx = ex.backward(&img, &g).unwrap();
        assert_eq!(gx.shape(), (3, 4, 4));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_shapes_and_names() {
        let ex = Extractor::tiny();
        let img = Tensor3::zeros(3, 4, 4);
        let mut g = LayerGradients::new();
        g.insert("relu2".into(), Tensor3::zeros(16, 4, 5));
        assert!(matches!(ex.backward(&img, &g), Err(Error::ShapeMismatch(_))));
        let mut g = LayerGradients::new();
        g.insert("pool9".into(), Tensor3::zeros(1, 1, 1));
        assert!(matches!(ex.backward(&img, &g), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn unknown_backends() {
        assert!(matches!(
            Extractor::for_backend("pretrained:vgg19", None),
            Err(Error::BackendUnavailable(_))
        ));
        assert!(matches!(
            Extractor::for_backend("pretrained:vgg19", Some(Path::new("/no/such/model.onnx"))),
            Err(Error::BackendUnavailable(_))
        ));
        assert!(Extractor::for_backend("resnet", None).is_err());
        assert_eq!(Extractor::for_backend("tiny", None).unwrap().id(), "tiny");
    }
}
