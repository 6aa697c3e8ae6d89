//! Acceptance checks, one PASS/FAIL line per criterion. Runs as a plain
//! binary (no libtest harness) so the report always prints.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use depthstyle::depth::{load_depth, save_depth, NormalizedDepth};
use depthstyle::features::{conv3x3_reflect, conv3x3_reflect_transpose, pad, pad_adjoint, Padding};
use depthstyle::gradcheck::{run_gradcheck, DEFAULT_SAMPLES, DEFAULT_STEP, TOLERANCE};
use depthstyle::heatmap::jet;
use depthstyle::losses::content_loss;
use depthstyle::optimize::NoObserver;
use depthstyle::{
    colormap_lut, gram, load_image, run, save_image, Extractor, ExtractorSpec, ImageRGB, LossWeights,
    RunSettings, Targets, Tensor3, XorShift64Star,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    check(took < limit, format!("{detail}; {:.2}s (limit {}s)", took.as_secs_f64(), limit.as_secs()))
}

fn rand_tensor(rng: &mut XorShift64Star, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| 2.0 * rng.next_f32() - 1.0)
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    match i {
        _ if n == 1 => 0,
        i if i < 0 => (-i) as usize,
        i if i >= n => (2 * (n - 1) - i) as usize,
        i => i as usize,
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn c1_gradcheck() -> Outcome {
    let t = Instant::now();
    let report = run_gradcheck(7, DEFAULT_SAMPLES, DEFAULT_STEP).map_err(|e| e.to_string())?;
    let detail = format!(
        "max rel err {:.3e} over {} pixels, tolerance {TOLERANCE:e}",
        report.worst(),
        report.samples
    );
    if !report.passes(TOLERANCE) {
        return Err(detail);
    }
    within(Duration::from_secs(10), t, detail)
}

fn c2_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = XorShift64Star::new(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (c, h, w) = (1 + rng.below(8), 1 + rng.below(16), 1 + rng.below(16));
        let o = 1 + rng.below(8);
        let x = rand_tensor(&mut rng, c, h, w);
        let wt: Vec<f32> = (0..o * c * 9).map(|_| rng.next_f32() - 0.5).collect();
        let b: Vec<f32> = (0..o).map(|_| rng.next_f32() - 0.5).collect();
        let got = conv3x3_reflect(&x, &wt, &b).map_err(|e| e.to_string())?;
        let mut want = vec![0.0f64; o * h * w];
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = mirror(y as isize + ky as isize - 1, h);
                                let sx = mirror(xx as isize + kx as isize - 1, w);
                                s += wt[((oc * c + ic) * 3 + ky) * 3 + kx] as f64 * x.get(ic, sy, sx) as f64;
                            }
                        }
                    }
                    want[(oc * h + y) * w + xx] = s;
                }
            }
        }
        let scale = want.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (g, w) in got.data().iter().zip(&want) {
            worst = worst.max((*g as f64 - w).abs() / scale);
        }

        let f = Tensor3::from_fn(c, h, w, |_, _, _| rng.next_f32());
        let g = gram(&f);
        let mut naive = vec![0.0f64; c * c];
        for j in 0..c {
            for k in 0..c {
                naive[j * c + k] = dot(f.plane(j), f.plane(k));
            }
        }
        let scale = naive.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (a, b) in g.data().iter().zip(&naive) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    if worst >= 1e-6 {
        return Err(format!("max rel err {worst:.3e} (limit 1e-6)"));
    }
    within(Duration::from_secs(10), t, format!("conv + gram max rel err {worst:.3e} on 100 instances"))
}

fn c3_adjoints() -> Outcome {
    let mut rng = XorShift64Star::new(303);
    let (mut conv_worst, mut pad_worst) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (c, h, w) = (1 + rng.below(8), 1 + rng.below(16), 1 + rng.below(16));
        let o = 1 + rng.below(8);
        let wt: Vec<f32> = (0..o * c * 9).map(|_| rng.next_f32() - 0.5).collect();
        let x = rand_tensor(&mut rng, c, h, w);
        let y = rand_tensor(&mut rng, o, h, w);
        let ax = conv3x3_reflect(&x, &wt, &vec![0.0; o]).map_err(|e| e.to_string())?;
        let aty = conv3x3_reflect_transpose(&y, c, &wt, o).map_err(|e| e.to_string())?;
        conv_worst = conv_worst.max(rel(dot(ax.data(), y.data()), dot(x.data(), aty.data())));

        let p = 1 + rng.below(3);
        let (h, w) = (h.max(p + 1), w.max(p + 1));
        let x = rand_tensor(&mut rng, c, h, w);
        let y = rand_tensor(&mut rng, c, h + 2 * p, w + 2 * p);
        let px = pad(&x, p, Padding::Reflect);
        let pty = pad_adjoint(&y, p, Padding::Reflect).map_err(|e| e.to_string())?;
        pad_worst = pad_worst.max(rel(dot(px.data(), y.data()), dot(x.data(), pty.data())));
    }
    check(
        conv_worst < 1e-4 && pad_worst < 1e-4,
        format!("conv {conv_worst:.3e}, reflect pad {pad_worst:.3e} (limit 1e-4)"),
    )
}

fn c4_optimization(scratch: &Path) -> Outcome {
    let out = scratch.join("c4");
    let t = Instant::now();
    pipeline(&fixture_args(32, &out), &["--iterations", "300"])?;
    let took = t.elapsed();
    let totals = read_totals(&out.join("trace.csv"))?;
    if totals.len() != 300 {
        return Err(format!("trace has {} rows, expected 300", totals.len()));
    }
    let ratio = totals[299] / totals[0];
    let ma: Vec<f64> = totals.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    // ma[k] averages iterations k..k+19; compare from the window ending at 20.
    let rises: Vec<usize> = (1..ma.len())
        .filter(|&k| k + 19 >= 21 && ma[k] > ma[k - 1])
        .map(|k| k + 19)
        .collect();
    let detail = format!(
        "trace[299]/trace[0] = {ratio:.4}, moving-average rises {}{}; {:.2}s (limit 60s)",
        rises.len(),
        rises.first().map(|i| format!(" (first at {i})")).unwrap_or_default(),
        took.as_secs_f64()
    );
    check(ratio < 0.5 && rises.is_empty() && took < Duration::from_secs(60), detail)
}

fn c5_fixed_point() -> Outcome {
    let img = load_image(fixtures().join("content_32.png")).map_err(|e| e.to_string())?;
    let ex = Extractor::tiny();
    let spec = ExtractorSpec::tiny();
    let targets = Targets::compute(&ex, &spec, img.tensor(), img.tensor()).map_err(|e| e.to_string())?;
    let weights = LossWeights { tv: 0.0, ..Default::default() };
    let settings = RunSettings { iterations: 100, ..Default::default() };
    let (out, trace) =
        run(&img, &targets, &weights, &ex, &spec, None, &settings, &mut NoObserver).map_err(|e| e.to_string())?;
    let max = trace.reports.iter().fold(0.0f64, |m, r| m.max(r.total));
    check(
        max < 1e-10 && out == img && trace.reports.len() == 100,
        format!("max total {max:.3e} over {} iterations, output bitwise equal: {}", trace.reports.len(), out == img),
    )
}

fn c6_colormap() -> Outcome {
    let lut = colormap_lut();
    let formula = |t: f64| {
        let r = |center: f64| (1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0) as f32;
        [r(3.0), r(2.0), r(1.0)]
    };
    let mismatched: Vec<usize> = (0..256).filter(|&i| lut.get(i) != formula(i as f64 / 255.0)).collect();
    let knots = [(0.0, [0.0, 0.0, 0.5]), (0.5, [0.5, 1.0, 0.5]), (1.0, [0.5, 0.0, 0.0])];
    let knots_ok = knots.iter().all(|&(t, want)| jet(t) == want)
        && lut.get(0) == [0.0, 0.0, 0.5]
        && lut.get(255) == [0.5, 0.0, 0.0];
    check(
        mismatched.is_empty() && knots_ok,
        format!("{} of 256 entries differ; knots exact: {knots_ok}", mismatched.len()),
    )
}

fn c7_determinism(scratch: &Path) -> Outcome {
    let (a, b) = (scratch.join("c7a"), scratch.join("c7b"));
    pipeline(&fixture_args(64, &a), &[])?;
    pipeline(&fixture_args(64, &b), &[])?;
    let same = |name: &str| std::fs::read(a.join(name)).ok().zip(std::fs::read(b.join(name)).ok()).is_some_and(|(x, y)| x == y);
    let runs_equal = same("stylized.png") && same("trace.csv");

    let mut rng = XorShift64Star::new(707);
    let codes: Vec<f32> = (0..3 * 9 * 7).map(|_| rng.below(256) as f32 / 255.0).collect();
    let img = ImageRGB::new(Tensor3::from_vec(3, 9, 7, codes).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let img_path = scratch.join("roundtrip.png");
    save_image(&img, &img_path).map_err(|e| e.to_string())?;
    let img_ok = load_image(&img_path).map_err(|e| e.to_string())? == img;

    let levels: Vec<f32> = (0..9 * 7).map(|_| rng.below(65536) as f32 / 65535.0).collect();
    let depth = NormalizedDepth::new(9, 7, levels.clone()).map_err(|e| e.to_string())?;
    let depth_path = scratch.join("roundtrip_depth.png");
    save_depth(&depth, &depth_path).map_err(|e| e.to_string())?;
    let depth_ok = load_depth(&depth_path).map_err(|e| e.to_string())?.values() == levels.as_slice();

    check(
        runs_equal && img_ok && depth_ok,
        format!("repeat runs identical: {runs_equal}; image round trip: {img_ok}; depth round trip: {depth_ok}"),
    )
}

fn c8_mask_linearity() -> Outcome {
    let mut rng = XorShift64Star::new(808);
    let (c, h, w) = (16, 8, 8);
    let f = Tensor3::from_fn(c, h, w, |_, _, _| rng.next_f32());
    let p = Tensor3::from_fn(c, h, w, |_, _, _| rng.next_f32());
    let (my, mx) = (3, 5);
    let mut m = vec![0.0f32; h * w];
    m[my * w + mx] = 1.0;
    let mask = NormalizedDepth::new(h, w, m).map_err(|e| e.to_string())?;
    let (_, plain) = content_loss(&f, &p, None, 0.0).map_err(|e| e.to_string())?;
    let (_, masked) = content_loss(&f, &p, Some(&mask), 1.0).map_err(|e| e.to_string())?;
    let mut bad = 0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let k = if (y, x) == (my, mx) { 2.0 } else { 1.0 };
                bad += usize::from(masked.get(ch, y, x) != k * plain.get(ch, y, x));
            }
        }
    }
    check(bad == 0, format!("{bad} of {} gradient entries differ from the exact 2x/1x rule", c * h * w))
}

fn c9_smoke(scratch: &Path) -> Outcome {
    // Reuses the first determinism run (default settings, 64x64 fixtures).
    let out = scratch.join("c7a");
    let missing: Vec<&str> = ["depth.png", "heatmap.png", "blended.png", "stylized.png", "trace.csv"]
        .into_iter()
        .filter(|n| !out.join(n).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing artifacts: {}", missing.join(", ")));
    }
    let load = |p: PathBuf| load_image(p).map_err(|e| e.to_string());
    let content = load(fixtures().join("content_64.png"))?;
    let blended = load(out.join("blended.png"))?;
    let stylized = load(out.join("stylized.png"))?;
    let mad = |a: &ImageRGB, b: &ImageRGB| {
        let (x, y) = (a.tensor().data(), b.tensor().data());
        x.iter().zip(y).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / x.len() as f64
    };
    let (d_blend, d_style) = (mad(&blended, &content), mad(&stylized, &blended));
    check(
        d_blend > 0.0 && d_style > 0.01,
        format!("all five artifacts; |blended-content| {d_blend:.4}, |stylized-blended| {d_style:.4} (need > 0.01)"),
    )
}

fn fixture_args(n: usize, out: &Path) -> Vec<String> {
    let f = fixtures();
    vec![
        "--content".into(),
        f.join(format!("content_{n}.png")).display().to_string(),
        "--style".into(),
        f.join(format!("style_{n}.png")).display().to_string(),
        "--depth".into(),
        f.join(format!("depth_{n}.png")).display().to_string(),
        "--output-dir".into(),
        out.display().to_string(),
        "--log-every".into(),
        "0".into(),
    ]
}

fn pipeline(args: &[String], extra: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_depthstyle"))
        .arg("pipeline")
        .args(args)
        .args(extra)
        .output()
        .map_err(|e| format!("cannot run the CLI: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

fn read_totals(path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()).ok_or(format!("bad trace line {l:?}")))
        .collect()
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let s = scratch.path();
    let criteria: [Criterion; 9] = [
        ("gradient correctness", Box::new(c1_gradcheck)),
        ("oracle equivalence", Box::new(c2_oracles)),
        ("adjoint identity", Box::new(c3_adjoints)),
        ("optimization sanity", Box::new(|| c4_optimization(s))),
        ("degenerate fixed point", Box::new(c5_fixed_point)),
        ("colormap exactness", Box::new(c6_colormap)),
        ("determinism", Box::new(|| c7_determinism(s))),
        ("mask linearity", Box::new(c8_mask_linearity)),
        ("visual pipeline smoke", Box::new(|| c9_smoke(s))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
