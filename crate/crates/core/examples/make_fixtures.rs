//! Regenerates the bundled test images: `cargo run -p depthstyle --example make_fixtures -- fixtures`

use std::path::PathBuf;

use depthstyle::{save_depth, save_image, ImageRGB, NormalizedDepth, Tensor3};

fn centre(i: usize, n: usize) -> f32 {
    (i as f32 + 0.5) / n as f32
}

/// A white disc on black: binary content keeps the optimum on the faces of
/// the pixel box, so the loss trace settles without oscillating.
fn content(n: usize) -> ImageRGB {
    ImageRGB::new(Tensor3::from_fn(3, n, n, |_, y, x| {
        let (u, v) = (centre(x, n), centre(y, n));
        if (u - 0.5).powi(2) + (v - 0.55).powi(2) < 0.09 {
            1.0
        } else {
            0.0
        }
    }))
    .expect("values in [0,1]")
}

/// Pale diagonal bands over a warm-to-cool gradient.
fn style(n: usize) -> ImageRGB {
    ImageRGB::new(Tensor3::from_fn(3, n, n, |c, y, x| {
        let (u, v) = (centre(x, n), centre(y, n));
        let band = if (((u + v) * 6.0) as usize).is_multiple_of(2) { 0.0 } else { 0.06 };
        [0.8 + 0.2 * u, 0.9 + 0.1 * v, 1.0][c] - band
    }))
    .expect("values in [0,1]")
}

/// Inverse depth peaking at the image centre.
fn depth(n: usize) -> NormalizedDepth {
    let values = (0..n * n)
        .map(|i| {
            let (u, v) = (centre(i % n, n), centre(i / n, n));
            (1.0 - ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt() / 0.71).clamp(0.0, 1.0)
        })
        .collect();
    NormalizedDepth::new(n, n, values).expect("values in [0,1]")
}

fn main() -> depthstyle::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).map_err(|e| depthstyle::Error::Io { path: dir.clone(), source: e })?;
    for n in [32, 64] {
        save_image(&content(n), dir.join(format!("content_{n}.png")))?;
        save_image(&style(n), dir.join(format!("style_{n}.png")))?;
        save_depth(&depth(n), dir.join(format!("depth_{n}.png")))?;
    }
    Ok(())
}
