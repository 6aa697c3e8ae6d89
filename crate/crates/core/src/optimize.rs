//! Projected Adam over pixels, iteration traces and snapshots.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::depth::NormalizedDepth;
use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorSpec};
use crate::image::ImageRGB;
use crate::losses::{total_loss, LossReport, LossWeights, Targets};
use crate::png_io;
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::OutOfRange(format!("lr = {}", self.lr)));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::OutOfRange(format!(
                "betas ({}, {}) must lie in [0,1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::OutOfRange(format!("epsilon = {}", self.epsilon)));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor3,
    pub v: Tensor3,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(like: &Tensor3, config: AdamConfig) -> Self {
        let (c, h, w) = like.shape();
        Self {
            m: Tensor3::zeros(c, h, w),
            v: Tensor3::zeros(c, h, w),
            t: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `x`, then projection onto `[0,1]`.
    pub fn step(&mut self, x: &mut Tensor3, g: &Tensor3) -> Result<()> {
        x.expect_shape(g, "adam: image vs. gradient")?;
        x.expect_shape(&self.m, "adam: image vs. state")?;
        self.config.validate()?;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        let cells = x
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(self.m.data_mut().iter_mut().zip(self.v.data_mut()));
        for ((xv, &gv), (mv, vv)) in cells {
            let gv = gv as f64;
            let m = beta1 * *mv as f64 + (1.0 - beta1) * gv;
            let v = beta2 * *vv as f64 + (1.0 - beta2) * gv * gv;
            *mv = m as f32;
            *vv = v as f32;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + epsilon);
            *xv = ((*xv as f64 - update) as f32).clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(x: &Tensor3, g: &Tensor3, state: &AdamState) -> Result<(Tensor3, AdamState)> {
    let mut x = x.clone();
    let mut state = state.clone();
    state.step(&mut x, g)?;
    Ok((x, state))
}

/// Loss reports for every executed iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub reports: Vec<LossReport>,
    /// Iteration counts at which snapshots were taken.
    pub snapshots: Vec<usize>,
    pub duration: Duration,
}

impl RunTrace {
    /// `iter,total,content,style,tv` with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,total,content,style,tv\n");
        for (i, r) in self.reports.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                format_sig(r.total, 9),
                format_sig(r.content, 9),
                format_sig(r.style, 9),
                format_sig(r.tv, 9)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        png_io::write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// `%.<digits>g`-style formatting: fixed or scientific, trailing zeros
/// removed.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    pub iterations: usize,
    pub adam: AdamConfig,
    /// Snapshot every this many iterations; 0 disables.
    pub snapshot_interval: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            iterations: 500,
            adam: AdamConfig::default(),
            snapshot_interval: 100,
        }
    }
}

/// Hooks called from inside [`run`].
pub trait RunObserver {
    fn iteration(&mut self, _iter: usize, _report: &LossReport) {}

    fn snapshot(&mut self, _iter: usize, _img: &ImageRGB) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl RunObserver for NoObserver {}

/// Minimizes the weighted loss starting from `init`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    init: &ImageRGB,
    targets: &Targets,
    weights: &LossWeights,
    extractor: &Extractor,
    spec: &ExtractorSpec,
    mask: Option<&NormalizedDepth>,
    settings: &RunSettings,
    observer: &mut dyn RunObserver,
) -> Result<(ImageRGB, RunTrace)> {
    settings.adam.validate()?;
    weights.validate()?;
    let start = Instant::now();
    let mut x = init.tensor().clone();
    let mut state = AdamState::new(&x, settings.adam);
    let mut trace = RunTrace {
        reports: Vec::with_capacity(settings.iterations),
        ..RunTrace::default()
    };
    for i in 0..settings.iterations {
        let (report, grad) = total_loss(&x, targets, weights, extractor, spec, mask)?;
        observer.iteration(i, &report);
        trace.reports.push(report);
        state.step(&mut x, &grad)?;
        let done = i + 1;
        if settings.snapshot_interval > 0 && done % settings.snapshot_interval == 0 {
            observer.snapshot(done, &ImageRGB::new(x.clone())?)?;
            trace.snapshots.push(done);
        }
    }
    trace.duration = start.elapsed();
    Ok((ImageRGB::new(x)?, trace))
}
