//! Finite-difference verification of the analytic pixel gradients.
//!
//! The numeric side uses [`reference`], a separate naive `f64` evaluation of
//! the tiny network and every loss term that shares no code with the
//! production path except the weight formula.

use crate::depth::NormalizedDepth;
use crate::error::Result;
use crate::features::{Extractor, ExtractorSpec};
use crate::losses::{total_loss, LossWeights, Targets};
use crate::rng::XorShift64Star;
use crate::tensor::Tensor3;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_SAMPLES: usize = 50;
pub const TOLERANCE: f64 = 1e-3;
/// Entries where both gradients are below this are skipped as noise.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Naive `f64` forward model of the tiny extractor and the losses.
pub mod reference {
    use crate::features::tiny_weights;

    /// A `channels × height × width` array in `f64`.
    #[derive(Clone, Debug)]
    pub struct Grid {
        pub c: usize,
        pub h: usize,
        pub w: usize,
        pub v: Vec<f64>,
    }

    impl Grid {
        pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
            self.v[(c * self.h + y) * self.w + x]
        }
    }

    fn mirror(i: isize, n: usize) -> usize {
        if n == 1 {
            0
        } else if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    }

    /// Direct evaluation of the reflect-padded 3×3 convolution sum.
    pub fn conv3x3(x: &Grid, weight: &[f64], bias: &[f64]) -> Grid {
        let outs = bias.len();
        let mut v = vec![0.0; outs * x.h * x.w];
        for o in 0..outs {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut s = bias[o];
                    for i in 0..x.c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = mirror(y as isize + ky as isize - 1, x.h);
                                let sx = mirror(xx as isize + kx as isize - 1, x.w);
                                s += weight[((o * x.c + i) * 3 + ky) * 3 + kx] * x.at(i, sy, sx);
                            }
                        }
                    }
                    v[(o * x.h + y) * x.w + xx] = s;
                }
            }
        }
        Grid {
            c: outs,
            h: x.h,
            w: x.w,
            v,
        }
    }

    /// Signs of every pre-activation of both layers; the loss is smooth
    /// between two inputs that share a pattern.
    pub fn activation_pattern(img: &Grid) -> Vec<bool> {
        let tw = tiny_weights();
        let cast = |v: &[f32]| v.iter().map(|&a| a as f64).collect::<Vec<_>>();
        let z1 = conv3x3(img, &cast(&tw.conv1_weight), &cast(&tw.conv1_bias));
        let z2 = conv3x3(&relu(z1.clone()), &cast(&tw.conv2_weight), &cast(&tw.conv2_bias));
        z1.v.iter().chain(&z2.v).map(|&a| a > 0.0).collect()
    }

    fn relu(g: Grid) -> Grid {
        Grid {
            v: g.v.into_iter().map(|a| a.max(0.0)).collect(),
            ..g
        }
    }

    /// `(relu1, relu2)` of the tiny network.
    pub fn tiny_features(img: &Grid) -> (Grid, Grid) {
        let tw = tiny_weights();
        let cast = |v: &[f32]| v.iter().map(|&a| a as f64).collect::<Vec<_>>();
        let r1 = relu(conv3x3(img, &cast(&tw.conv1_weight), &cast(&tw.conv1_bias)));
        let r2 = relu(conv3x3(&r1, &cast(&tw.conv2_weight), &cast(&tw.conv2_bias)));
        (r1, r2)
    }

    pub fn gram(f: &Grid) -> Vec<f64> {
        let m = f.h * f.w;
        let mut g = vec![0.0; f.c * f.c];
        for j in 0..f.c {
            for k in 0..f.c {
                g[j * f.c + k] = (0..m).map(|p| f.v[j * m + p] * f.v[k * m + p]).sum();
            }
        }
        g
    }

    fn layer_style(f: &Grid, target: &[f64]) -> f64 {
        let n = f.c as f64;
        let m = (f.h * f.w) as f64;
        let g = gram(f);
        let sq: f64 = g.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        sq / (4.0 * n * n * m * m)
    }

    /// Unweighted `[content, style, tv]` at `x`, content on relu2 (optionally
    /// masked), style averaged over relu1 and relu2.
    pub fn loss_terms(
        x: &Grid,
        content: &Grid,
        style: &Grid,
        mask: Option<(&[f64], f64)>,
    ) -> [f64; 3] {
        let (x1, x2) = tiny_features(x);
        let (_, p2) = tiny_features(content);
        let (s1, s2) = tiny_features(style);
        let plane = x.h * x.w;
        let mut c = 0.0;
        for (i, (a, b)) in x2.v.iter().zip(&p2.v).enumerate() {
            let m = mask.map_or(1.0, |(mk, kappa)| 1.0 + kappa * mk[i % plane]);
            c += 0.5 * m * (a - b) * (a - b);
        }
        let s = 0.5 * (layer_style(&x1, &gram(&s1)) + layer_style(&x2, &gram(&s2)));
        let mut tv = 0.0;
        for ch in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    if xx + 1 < x.w {
                        tv += (x.at(ch, y, xx + 1) - x.at(ch, y, xx)).powi(2);
                    }
                    if y + 1 < x.h {
                        tv += (x.at(ch, y + 1, xx) - x.at(ch, y, xx)).powi(2);
                    }
                }
            }
        }
        [c, s, tv]
    }
}

fn to_grid(t: &Tensor3) -> reference::Grid {
    reference::Grid {
        c: t.channels(),
        h: t.height(),
        w: t.width(),
        v: t.data().iter().map(|&v| v as f64).collect(),
    }
}

/// `|a − n| / max(|a|, |n|)`, or `None` when both are below the noise floor.
pub fn relative_error(analytic: f64, numeric: f64) -> Option<f64> {
    let scale = analytic.abs().max(numeric.abs());
    if scale < NOISE_FLOOR {
        None
    } else {
        Some((analytic - numeric).abs() / scale)
    }
}

/// A random content/style/init triple plus a random mask.
#[derive(Clone, Debug)]
pub struct Instance {
    pub content: Tensor3,
    pub style: Tensor3,
    pub init: Tensor3,
    pub mask: NormalizedDepth,
}

impl Instance {
    pub fn random(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = XorShift64Star::new(seed);
        let img = |rng: &mut XorShift64Star| Tensor3::from_fn(3, height, width, |_, _, _| rng.next_f32());
        let content = img(&mut rng);
        let style = img(&mut rng);
        let init = img(&mut rng);
        let mask = (0..height * width).map(|_| rng.next_f32()).collect();
        Self {
            content,
            style,
            init,
            mask: NormalizedDepth::new(height, width, mask).expect("uniform values in [0,1)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub samples: usize,
    /// Candidates rejected because the stencil crossed a ReLU kink.
    pub kinks_skipped: usize,
    pub terms: Vec<TermResult>,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.terms.iter().all(|t| t.max_rel_error < tol)
    }

    pub fn worst(&self) -> f64 {
        self.terms.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

struct Term {
    name: &'static str,
    weights: LossWeights,
    masked: bool,
}

/// Checks content, style, tv, masked content and the full weighted total
/// (weights 1, 1e3, 1e-3) at `samples` random pixels of a seeded 3×8×8
/// instance.
pub fn run_gradcheck(seed: u64, samples: usize, step: f64) -> Result<GradcheckReport> {
    let inst = Instance::random(seed, 8, 8);
    let extractor = Extractor::tiny();
    let spec = ExtractorSpec::tiny();
    let targets = Targets::compute(&extractor, &spec, &inst.content, &inst.style)?;
    let base = LossWeights::default();
    let only = |content, style, tv, kappa| LossWeights {
        content,
        style,
        tv,
        kappa,
    };
    let terms = [
        Term {
            name: "content",
            weights: only(base.content, 0.0, 0.0, 0.0),
            masked: false,
        },
        Term {
            name: "style",
            weights: only(0.0, base.style, 0.0, 0.0),
            masked: false,
        },
        Term {
            name: "tv",
            weights: only(0.0, 0.0, base.tv, 0.0),
            masked: false,
        },
        Term {
            name: "content_masked",
            weights: only(base.content, 0.0, 0.0, 1.0),
            masked: true,
        },
        Term {
            name: "total",
            weights: base,
            masked: false,
        },
    ];

    // Central differences are meaningless where the ±step stencil crosses a
    // ReLU kink, so such pixels are replaced by the next candidate.
    let n = inst.init.data().len();
    let mut rng = XorShift64Star::new(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = i + rng.below(n - i);
        order.swap(i, j);
    }
    let x0 = to_grid(&inst.init);
    let pattern = reference::activation_pattern(&x0);
    let mut picks = Vec::with_capacity(samples);
    let mut kinks = 0;
    for p in order {
        if picks.len() == samples {
            break;
        }
        let smooth = [step, -step].iter().all(|d| {
            let mut x = x0.clone();
            x.v[p] += d;
            reference::activation_pattern(&x) == pattern
        });
        if smooth {
            picks.push(p);
        } else {
            kinks += 1;
        }
    }

    let content = to_grid(&inst.content);
    let style = to_grid(&inst.style);
    let mask_values: Vec<f64> = inst.mask.values().iter().map(|&v| v as f64).collect();

    let mut results = Vec::with_capacity(terms.len());
    for term in &terms {
        let mask = term.masked.then_some(&inst.mask);
        let (_, analytic) = total_loss(&inst.init, &targets, &term.weights, &extractor, &spec, mask)?;
        let eval = |x: &reference::Grid| {
            let m = term.masked.then_some((mask_values.as_slice(), term.weights.kappa));
            let [c, s, tv] = reference::loss_terms(x, &content, &style, m);
            term.weights.content * c + term.weights.style * s + term.weights.tv * tv
        };
        let mut worst = 0.0f64;
        let mut checked = 0;
        for &p in &picks {
            let mut x = x0.clone();
            let v = x.v[p];
            x.v[p] = v + step;
            let plus = eval(&x);
            x.v[p] = v - step;
            let minus = eval(&x);
            let numeric = (plus - minus) / (2.0 * step);
            if let Some(e) = relative_error(analytic.data()[p] as f64, numeric) {
                worst = worst.max(e);
                checked += 1;
            }
        }
        results.push(TermResult {
            name: term.name,
            max_rel_error: worst,
            checked,
        });
    }
    Ok(GradcheckReport {
        seed,
        samples: picks.len(),
        kinks_skipped: kinks,
        terms: results,
    })
}
