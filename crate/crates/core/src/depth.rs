//! Depth maps: 16-bit PNG I/O, normalization, estimation backends and the
//! content-addressed depth cache.
//!
//! Depth values follow the relative inverse-depth convention: larger values
//! are closer to the camera. After normalization the nearest surface is 1.0,
//! which the heatmap renders at the warm (red) end of the colormap.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use png::{BitDepth, ColorType};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, ImageRGB};
use crate::png_io;
use crate::tensor::{check_dims, Tensor3};

/// Relative inverse depth, one finite non-negative value per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Tensor3);

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let t = Tensor3::from_vec(1, height, width, values)?;
        if t.data().iter().any(|&v| v < 0.0) {
            return Err(Error::OutOfRange("depth values must be non-negative".into()));
        }
        Ok(Self(t))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn values(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Ok(Self(resize_bilinear(&self.0, height, width)?))
    }
}

/// Depth rescaled into `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDepth(Tensor3);

impl NormalizedDepth {
    /// Wraps values already in `[0,1]`.
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let t = Tensor3::from_vec(1, height, width, values)?;
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange(
                "normalized depth must lie in [0,1]".into(),
            ));
        }
        Ok(Self(t))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn values(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    /// Bilinear resize; convexity keeps the result inside `[0,1]`.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Ok(Self(resize_bilinear(&self.0, height, width)?))
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.values().len() * 2);
        for &v in self.values() {
            bytes.extend_from_slice(&to_u16(v).to_be_bytes());
        }
        png_io::encode(
            self.width(),
            self.height(),
            ColorType::Grayscale,
            BitDepth::Sixteen,
            &bytes,
        )
    }
}

/// `floor(clamp(v,0,1)·65535 + 0.5)`
pub fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0 + 0.5).floor() as u16
}

pub fn decode_depth_png(bytes: &[u8], origin: &Path) -> Result<DepthMap> {
    let raw = png_io::decode(bytes, origin)?;
    if raw.color != ColorType::Grayscale || raw.depth != BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat(format!(
            "{}: depth must be 16-bit grayscale, found {:?} {:?}",
            origin.display(),
            raw.depth,
            raw.color
        )));
    }
    check_dims(1, raw.height, raw.width)?;
    let values = raw
        .bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
        .collect();
    DepthMap::new(raw.height, raw.width, values)
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = png_io::read_file(path)?;
    decode_depth_png(&bytes, path)
}

pub fn save_depth(d: &NormalizedDepth, path: impl AsRef<Path>) -> Result<()> {
    png_io::write_atomic(path.as_ref(), &d.encode_png())
}

/// Affine rescale to `[0,1]`; a constant map becomes 0.5 everywhere.
pub fn normalize_depth(d: &DepthMap) -> NormalizedDepth {
    let (lo, hi) = d.0.min_max();
    let t = if hi > lo {
        let (lo, range) = (lo as f64, hi as f64 - lo as f64);
        d.0
            .map(|v| (((v as f64 - lo) / range) as f32).clamp(0.0, 1.0))
    } else {
        d.0.map(|_| 0.5)
    };
    NormalizedDepth(t)
}

/// Lowercase hex SHA-256 of `img_bytes ‖ 0x00 ‖ backend_id`.
pub fn cache_key(img_bytes: &[u8], backend_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(img_bytes);
    h.update([0u8]);
    h.update(backend_id.as_bytes());
    hex::encode(h.finalize())
}

/// Where depth comes from: a user-supplied file, or an external estimator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DepthBackend {
    File,
    External(String),
}

impl DepthBackend {
    pub fn parse(id: &str) -> Result<Self> {
        match id.split_once(':') {
            None if id == "file" => Ok(DepthBackend::File),
            Some(("external", prog)) if !prog.is_empty() => {
                Ok(DepthBackend::External(prog.to_string()))
            }
            _ => Err(Error::OutOfRange(format!(
                "depth backend `{id}` (expected `file` or `external:<program>`)"
            ))),
        }
    }

    /// Resolves to something that can estimate depth. `File` cannot.
    pub fn estimator(&self) -> Result<Box<dyn DepthEstimator>> {
        match self {
            DepthBackend::File => Err(Error::BackendUnavailable(
                "the `file` depth backend does not estimate depth; supply a 16-bit depth PNG \
                 (load_depth / --depth) or choose `external:<program>`"
                    .into(),
            )),
            DepthBackend::External(p) => Ok(Box::new(ExternalEstimator::new(p))),
        }
    }
}

impl fmt::Display for DepthBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthBackend::File => f.write_str("file"),
            DepthBackend::External(p) => write!(f, "external:{p}"),
        }
    }
}

/// A monocular depth estimator.
pub trait DepthEstimator: Send + Sync {
    /// Identifier mixed into cache keys.
    fn id(&self) -> String;
    fn estimate(&self, img: &ImageRGB) -> Result<DepthMap>;
}

/// Runs `<program> <input.png> <output.png>` and reads back a 16-bit
/// grayscale PNG of normalized inverse depth.
#[derive(Clone, Debug)]
pub struct ExternalEstimator {
    program: String,
}

impl ExternalEstimator {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
        }
    }
}

impl DepthEstimator for ExternalEstimator {
    fn id(&self) -> String {
        format!("external:{}", self.program)
    }

    fn estimate(&self, img: &ImageRGB) -> Result<DepthMap> {
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = work.path().join("input.png");
        let output = work.path().join("output.png");
        std::fs::write(&input, img.encode_png()).map_err(|e| Error::io(&input, e))?;
        let status = Command::new(&self.program)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                    Error::BackendUnavailable(format!(
                        "cannot run depth estimator `{}`: {e}; fall back to a depth file",
                        self.program
                    ))
                }
                _ => Error::BackendFailure(format!("`{}`: {e}", self.program)),
            })?;
        if !status.success() {
            return Err(Error::BackendFailure(format!(
                "`{}` exited with {status}",
                self.program
            )));
        }
        let bytes = std::fs::read(&output).map_err(|e| {
            Error::BackendFailure(format!("`{}` wrote no output: {e}", self.program))
        })?;
        decode_depth_png(&bytes, &output)
            .map_err(|e| Error::BackendFailure(format!("`{}`: {e}", self.program)))
    }
}

/// Runs an estimator and resizes its output to the image's dimensions.
pub fn estimate_depth(img: &ImageRGB, estimator: &dyn DepthEstimator) -> Result<DepthMap> {
    let d = estimator.estimate(img)?;
    if (d.height(), d.width()) == (img.height(), img.width()) {
        Ok(d)
    } else {
        d.resized(img.height(), img.width())
    }
}

/// Content-addressed store of estimated depth, `<dir>/<sha256>.png`.
///
/// Entries hold the normalized estimate at 16-bit precision. Both the miss
/// and the hit path return the decoded entry, so callers always see the same
/// values for the same key.
#[derive(Clone, Debug)]
pub struct DepthCache {
    dir: PathBuf,
}

pub const DEFAULT_CACHE_DIR: &str = ".depthstyle-cache";

impl DepthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.png"))
    }

    pub fn estimate(&self, img: &ImageRGB, estimator: &dyn DepthEstimator) -> Result<DepthMap> {
        let key = cache_key(&img.encode_png(), &estimator.id());
        let path = self.entry_path(&key);
        match load_depth(&path) {
            Ok(d) if (d.height(), d.width()) == (img.height(), img.width()) => return Ok(d),
            // A stale, truncated or foreign entry is recomputed and replaced.
            Ok(_)
            | Err(Error::FileNotFound(_) | Error::CorruptFile { .. } | Error::UnsupportedFormat(_)) => {}
            Err(e) => return Err(e),
        }
        let fresh = normalize_depth(&estimate_depth(img, estimator)?);
        let bytes = fresh.encode_png();
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        png_io::write_atomic(&path, &bytes)?;
        decode_depth_png(&bytes, &path)
    }
}
