//! Job configuration: built-in defaults, overlaid by a JSON config file, then
//! the `DEPTHSTYLE_CACHE` environment variable, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth::{DepthBackend, DEFAULT_CACHE_DIR};
use crate::error::{Error, Result};
use crate::features::{tiny, ExtractorSpec, TINY};
use crate::losses::LossWeights;
use crate::optimize::{AdamConfig, RunSettings};

pub const CACHE_ENV: &str = "DEPTHSTYLE_CACHE";

/// Every key a config file may contain.
pub const KEYS: [&str; 21] = [
    "content",
    "style",
    "depth",
    "output_dir",
    "alpha",
    "size",
    "content_weight",
    "style_weight",
    "tv_weight",
    "kappa",
    "iterations",
    "lr",
    "feature_backend",
    "depth_backend",
    "pretrained_model",
    "style_layers",
    "content_layer",
    "init",
    "seed",
    "snapshot_interval",
    "cache_dir",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Start from the image being stylized.
    #[default]
    Content,
    /// Start from seeded uniform noise.
    Noise,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(InitMode::Content),
            "noise" => Ok(InitMode::Noise),
            _ => Err(Error::OutOfRange(format!(
                "init `{s}` (expected `content` or `noise`)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub content: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub alpha: f64,
    /// Longest-side cap applied when loading content and style images.
    pub size: usize,
    pub content_weight: f64,
    pub style_weight: f64,
    pub tv_weight: f64,
    pub kappa: f64,
    pub iterations: usize,
    pub lr: f64,
    pub feature_backend: String,
    pub depth_backend: String,
    pub pretrained_model: Option<PathBuf>,
    pub style_layers: Option<Vec<String>>,
    pub content_layer: Option<String>,
    pub init: InitMode,
    pub seed: u64,
    pub snapshot_interval: usize,
    pub cache_dir: PathBuf,
}

impl Default for JobConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let run = RunSettings::default();
        Self {
            content: None,
            style: None,
            depth: None,
            output_dir: PathBuf::from("out"),
            alpha: 0.5,
            size: 512,
            content_weight: w.content,
            style_weight: w.style,
            tv_weight: w.tv,
            kappa: w.kappa,
            iterations: run.iterations,
            lr: run.adam.lr,
            feature_backend: TINY.into(),
            depth_backend: "file".into(),
            pretrained_model: None,
            style_layers: None,
            content_layer: None,
            init: InitMode::Content,
            seed: 42,
            snapshot_interval: run.snapshot_interval,
            cache_dir: PathBuf::from(DEFAULT_CACHE_DIR),
        }
    }
}

/// Values given on the command line; `None` leaves the lower layer alone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigOverrides {
    pub content: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub size: Option<usize>,
    pub content_weight: Option<f64>,
    pub style_weight: Option<f64>,
    pub tv_weight: Option<f64>,
    pub kappa: Option<f64>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub feature_backend: Option<String>,
    pub depth_backend: Option<String>,
    pub pretrained_model: Option<PathBuf>,
    pub style_layers: Option<Vec<String>>,
    pub content_layer: Option<String>,
    pub init: Option<InitMode>,
    pub seed: Option<u64>,
    pub snapshot_interval: Option<usize>,
    pub cache_dir: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut JobConfig) {
        macro_rules! set {
            ($($field:ident),* ; $($opt:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
                $(if let Some(v) = &self.$opt { cfg.$opt = Some(v.clone()); })*
            };
        }
        set!(output_dir, alpha, size, content_weight, style_weight, tv_weight, kappa,
             iterations, lr, feature_backend, depth_backend, init, seed, snapshot_interval,
             cache_dir;
             content, style, depth, pretrained_model, style_layers, content_layer);
    }
}

impl JobConfig {
    /// Parses a config document on top of the defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))?;
        let map = value
            .as_object()
            .ok_or_else(|| Error::MalformedConfig("config must be a JSON object".into()))?;
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::UnknownKey(k.clone()));
        }
        serde_json::from_value(value).map_err(|e| Error::MalformedConfig(e.to_string()))
    }

    /// Every key, `null` for unset optional paths and layers.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let range = |ok: bool, what: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::OutOfRange(what))
            }
        };
        range(
            (0.0..=1.0).contains(&self.alpha),
            format!("alpha = {} (must be in [0,1])", self.alpha),
        )?;
        range(self.size >= 1, "size must be at least 1".into())?;
        range(
            self.lr.is_finite() && self.lr > 0.0,
            format!("lr = {} (must be positive)", self.lr),
        )?;
        self.weights().validate()?;
        DepthBackend::parse(&self.depth_backend)?;
        let fb = &self.feature_backend;
        range(
            fb == TINY || fb.strip_prefix("pretrained:").is_some_and(|n| !n.is_empty()),
            format!("feature_backend `{fb}` (expected `tiny` or `pretrained:<name>`)"),
        )?;
        for (key, path) in [
            ("content", &self.content),
            ("style", &self.style),
            ("depth", &self.depth),
            ("pretrained_model", &self.pretrained_model),
        ] {
            if path.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
                return Err(Error::OutOfRange(format!("`{key}` is an empty path")));
            }
        }
        for (key, path) in [("output_dir", &self.output_dir), ("cache_dir", &self.cache_dir)] {
            if path.as_os_str().is_empty() {
                return Err(Error::OutOfRange(format!("`{key}` is an empty path")));
            }
        }
        if let Some(layers) = &self.style_layers {
            range(!layers.is_empty(), "style_layers must not be empty".into())?;
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            content: self.content_weight,
            style: self.style_weight,
            tv: self.tv_weight,
            kappa: self.kappa,
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            iterations: self.iterations,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            snapshot_interval: self.snapshot_interval,
        }
    }

    pub fn depth_backend(&self) -> Result<DepthBackend> {
        DepthBackend::parse(&self.depth_backend)
    }

    /// Layer selection; the tiny backend falls back to its defaults, a
    /// pretrained backend must name its layers.
    pub fn extractor_spec(&self) -> Result<ExtractorSpec> {
        if self.feature_backend == TINY {
            let d = ExtractorSpec::tiny();
            return Ok(ExtractorSpec {
                backend: TINY.into(),
                style_layers: self.style_layers.clone().unwrap_or(d.style_layers),
                content_layer: self
                    .content_layer
                    .clone()
                    .unwrap_or_else(|| tiny::RELU2.into()),
            });
        }
        match (&self.style_layers, &self.content_layer) {
            (Some(s), Some(c)) => Ok(ExtractorSpec {
                backend: self.feature_backend.clone(),
                style_layers: s.clone(),
                content_layer: c.clone(),
            }),
            _ => Err(Error::MalformedConfig(format!(
                "backend `{}` needs explicit `style_layers` and `content_layer`",
                self.feature_backend
            ))),
        }
    }
}

/// Resolves a job from an optional config file and command-line overrides,
/// reading `DEPTHSTYLE_CACHE` from the environment.
pub fn parse_config(file: Option<&Path>, flags: &ConfigOverrides) -> Result<JobConfig> {
    parse_config_with_env(file, flags, std::env::var_os(CACHE_ENV).map(PathBuf::from))
}

pub fn parse_config_with_env(
    file: Option<&Path>,
    flags: &ConfigOverrides,
    cache_env: Option<PathBuf>,
) -> Result<JobConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
            JobConfig::from_json_str(&text)?
        }
        None => JobConfig::default(),
    };
    if let Some(dir) = cache_env.filter(|d| !d.as_os_str().is_empty()) {
        cfg.cache_dir = dir;
    }
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
