//! RGB images in `[0,1]`, PNG load/save and bilinear resampling.

use std::path::Path;

use png::{BitDepth, ColorType};

use crate::error::{Error, Result};
use crate::png_io;
use crate::tensor::{check_dims, Tensor3};

/// A three-channel tensor whose values all lie in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB(Tensor3);

impl ImageRGB {
    pub fn new(t: Tensor3) -> Result<Self> {
        if t.channels() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "an RGB image needs 3 channels, got {}",
                t.channels()
            )));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self(t))
    }

    /// Clamps every value into `[0,1]` first.
    pub fn from_tensor_clamped(t: &Tensor3) -> Result<Self> {
        Self::new(t.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn solid(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self(Tensor3::from_fn(3, height, width, |c, _, _| rgb[c]))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    /// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped.
    pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<Self> {
        let raw = png_io::decode(bytes, origin)?;
        if raw.depth != BitDepth::Eight {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected 8-bit color, found {:?}",
                origin.display(),
                raw.depth
            )));
        }
        let stride = match raw.color {
            ColorType::Rgb => 3,
            ColorType::Rgba => 4,
            other => {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: expected RGB or RGBA, found {other:?}",
                    origin.display()
                )))
            }
        };
        let (h, w) = (raw.height, raw.width);
        check_dims(3, h, w)?;
        let mut t = Tensor3::zeros(3, h, w);
        for (p, px) in raw.bytes.chunks_exact(stride).enumerate() {
            let (y, x) = (p / w, p % w);
            for (c, &v) in px[..3].iter().enumerate() {
                t.set(c, y, x, v as f32 / 255.0);
            }
        }
        Ok(Self(t))
    }

    /// Encodes as an 8-bit RGB PNG.
    pub fn encode_png(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut bytes = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    bytes.push(to_u8(self.0.get(c, y, x)));
                }
            }
        }
        png_io::encode(w, h, ColorType::Rgb, BitDepth::Eight, &bytes)
    }

    /// Round-trips through 8-bit quantization without touching disk.
    pub fn quantized(&self) -> Self {
        Self(self.0.map(|v| to_u8(v) as f32 / 255.0))
    }
}

/// `floor(clamp(v,0,1)·255 + 0.5)`
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let bytes = png_io::read_file(path)?;
    ImageRGB::decode_png(&bytes, path)
}

pub fn save_image(img: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    png_io::write_atomic(path, &img.encode_png())
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(t: &Tensor3, out_h: usize, out_w: usize) -> Result<Tensor3> {
    check_dims(t.channels(), out_h, out_w)?;
    let (c, h, w) = t.shape();
    if (out_h, out_w) == (h, w) {
        return Ok(t.clone());
    }
    let rows = sample_axis(h, out_h);
    let cols = sample_axis(w, out_w);
    let mut out = Tensor3::zeros(c, out_h, out_w);
    for ch in 0..c {
        let src = t.plane(ch);
        let dst = out.plane_mut(ch);
        for (dy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (dx, &(x0, x1, fx)) in cols.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                // Keep the convex-combination bound exact under rounding.
                let lo = src[y0 * w + x0]
                    .min(src[y0 * w + x1])
                    .min(src[y1 * w + x0])
                    .min(src[y1 * w + x1]);
                let hi = src[y0 * w + x0]
                    .max(src[y0 * w + x1])
                    .max(src[y1 * w + x0])
                    .max(src[y1 * w + x1]);
                dst[dy * out_w + dx] = v.clamp(lo, hi);
            }
        }
    }
    Ok(out)
}

/// For each destination index: (lower source index, upper source index, weight of upper).
fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Output size whose longest side is at most `cap`, preserving aspect ratio.
pub fn capped_size(height: usize, width: usize, cap: usize) -> (usize, usize) {
    let longest = height.max(width);
    if longest <= cap {
        return (height, width);
    }
    let s = cap as f64 / longest as f64;
    let h = ((height as f64 * s).round() as usize).max(1);
    let w = ((width as f64 * s).round() as usize).max(1);
    (h, w)
}

/// Downscales an image so its longest side does not exceed `cap`.
pub fn cap_longest_side(img: &ImageRGB, cap: usize) -> Result<ImageRGB> {
    let (h, w) = capped_size(img.height(), img.width(), cap);
    if (h, w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    ImageRGB::new(resize_bilinear(img.tensor(), h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_png(w: usize, h: usize, px: &[u8], color: ColorType) -> Vec<u8> {
        png_io::encode(w, h, color, BitDepth::Eight, px)
    }

    #[test]
    fn load_extremes_and_midgray() {
        let img = ImageRGB::decode_png(&rgb_png(1, 1, &[255, 0, 0], ColorType::Rgb), Path::new("a"))
            .unwrap();
        assert_eq!(img.tensor().data(), &[1.0, 0.0, 0.0]);
        let img = ImageRGB::decode_png(
            &rgb_png(1, 1, &[128, 128, 128], ColorType::Rgb),
            Path::new("a"),
        )
        .unwrap();
        for &v in img.tensor().data() {
            assert_eq!(v, 128.0 / 255.0);
            assert!((v - 0.50196).abs() < 1e-5);
        }
    }

    #[test]
    fn alpha_is_dropped() {
        let img = ImageRGB::decode_png(
            &rgb_png(1, 1, &[10, 20, 30, 40], ColorType::Rgba),
            Path::new("a"),
        )
        .unwrap();
        assert_eq!(
            img.tensor().data(),
            &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]
        );
    }

    #[test]
    fn rejects_grayscale_sixteen_bit_and_non_png() {
        let gray = png_io::encode(1, 1, ColorType::Grayscale, BitDepth::Eight, &[7]);
        assert!(matches!(
            ImageRGB::decode_png(&gray, Path::new("g")),
            Err(Error::UnsupportedFormat(_))
        ));
        let deep = png_io::encode(1, 1, ColorType::Rgb, BitDepth::Sixteen, &[0; 6]);
        assert!(matches!(
            ImageRGB::decode_png(&deep, Path::new("d")),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            ImageRGB::decode_png(b"GIF89a.....", Path::new("x")),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn truncated_png_is_corrupt() {
        let mut bytes = rgb_png(4, 4, &[9; 48], ColorType::Rgb);
        bytes.truncate(bytes.len() - 20);
        assert!(matches!(
            ImageRGB::decode_png(&bytes, Path::new("t")),
            Err(Error::CorruptFile { .. })
        ));
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(
            load_image("/nonexistent/dir/x.png"),
            Err(Error::FileNotFound(_))
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = ImageRGB::solid(1, 1, [0.0; 3]);
        assert!(matches!(
            save_image(&img, "/nonexistent/dir/x.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn quantization_rule() {
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.7), 255);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let t = Tensor3::from_fn(2, 3, 5, |c, y, x| (c + 2 * y + 3 * x) as f32 * 0.1);
        assert_eq!(resize_bilinear(&t, 3, 5).unwrap(), t);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let t = Tensor3::filled(3, 4, 7, 0.7);
        for (h, w) in [(1, 1), (9, 2), (13, 31)] {
            let r = resize_bilinear(&t, h, w).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn resize_half_pixel_upsample() {
        let t = Tensor3::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&t, 1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let t = Tensor3::zeros(1, 2, 2);
        assert!(resize_bilinear(&t, 0, 3).is_err());
    }

    #[test]
    fn capped_size_keeps_aspect() {
        assert_eq!(capped_size(100, 50, 512), (100, 50));
        assert_eq!(capped_size(1024, 512, 512), (512, 256));
        assert_eq!(capped_size(1000, 3, 10), (10, 1));
    }
}
