//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use depthstyle::{Tensor3, XorShift64Star};

pub fn random_tensor(rng: &mut XorShift64Star, c: usize, h: usize, w: usize, lo: f32, hi: f32) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| lo + (hi - lo) * rng.next_f32())
}

pub fn random_vec(rng: &mut XorShift64Star, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| lo + (hi - lo) * rng.next_f32()).collect()
}

/// Mirror about the edge pixel; a single-pixel axis clamps.
pub fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Brute-force reflect-padded 3×3 convolution in f64.
pub fn naive_conv(x: &Tensor3, w: &[f32], b: &[f32]) -> Vec<f64> {
    let (c, h, wd) = x.shape();
    let o_n = b.len();
    let mut out = vec![0.0f64; o_n * h * wd];
    for o in 0..o_n {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b[o] as f64;
                for i in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = mirror(y as i64 + ky as i64 - 1, h);
                            let sx = mirror(xx as i64 + kx as i64 - 1, wd);
                            s += w[((o * c + i) * 3 + ky) * 3 + kx] as f64 * x.get(i, sy, sx) as f64;
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = s;
            }
        }
    }
    out
}

/// Triple-loop Gram matrix in f64.
pub fn naive_gram(f: &Tensor3) -> Vec<f64> {
    let (c, h, w) = f.shape();
    let mut g = vec![0.0f64; c * c];
    for j in 0..c {
        for k in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    s += f.get(j, y, x) as f64 * f.get(k, y, x) as f64;
                }
            }
            g[j * c + k] = s;
        }
    }
    g
}

/// `‖a − b‖∞ / ‖b‖∞` (absolute when `b` is all zeros).
pub fn rel_inf(a: impl IntoIterator<Item = f64>, b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .into_iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Central differences of `f` at every entry of `x`, in f64.
pub fn numeric_grad(x: &Tensor3, h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max `|a − n| / max(|a|, |n|)` skipping entries where both are < 1e-6.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter_map(|(&a, &n)| {
            let a = a as f64;
            let s = a.abs().max(n.abs());
            (s >= 1e-6).then(|| (a - n).abs() / s)
        })
        .fold(0.0, f64::max)
}
