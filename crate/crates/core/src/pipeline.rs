//! The stage commands (`depth`, `heatmap`, `blend`, `stylize`) and the
//! end-to-end `pipeline`, which is literally their composition through the
//! files each stage writes.

use std::path::{Path, PathBuf};

use crate::config::{InitMode, JobConfig};
use crate::depth::{load_depth, normalize_depth, save_depth, DepthCache, NormalizedDepth};
use crate::error::{Error, Result};
use crate::features::Extractor;
use crate::heatmap::{apply_colormap, blend};
use crate::image::{cap_longest_side, load_image, save_image, ImageRGB};
use crate::losses::{LossReport, Targets};
use crate::optimize::{run, RunObserver, RunTrace};
use crate::rng::XorShift64Star;
use crate::tensor::Tensor3;

pub const DEPTH_PNG: &str = "depth.png";
pub const HEATMAP_PNG: &str = "heatmap.png";
pub const BLENDED_PNG: &str = "blended.png";
pub const STYLIZED_PNG: &str = "stylized.png";
pub const TRACE_CSV: &str = "trace.csv";

/// Knobs that are not part of the job config.
#[derive(Clone, Debug, Default)]
pub struct StageOptions {
    /// Precomputed heatmap for `blend`; computed from depth when absent.
    pub heatmap: Option<PathBuf>,
    /// Image `stylize` starts from instead of the configured init mode; the
    /// pipeline passes the blended image here.
    pub init_image: Option<PathBuf>,
    /// Log a progress line to stderr every this many iterations; 0 is quiet.
    pub log_every: usize,
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::MalformedConfig(format!("`{key}` is required for this command")))
}

fn output_path(cfg: &JobConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(cfg.output_dir.join(name))
}

/// Loads an RGB PNG and caps its longest side at `size`.
pub fn load_capped(path: &Path, size: usize) -> Result<ImageRGB> {
    cap_longest_side(&load_image(path)?, size)
}

/// Normalized depth for the job: the configured depth file (resized to the
/// content image when one is given), or the cached estimate of the configured
/// external backend.
pub fn resolve_depth(cfg: &JobConfig, content: Option<&ImageRGB>) -> Result<NormalizedDepth> {
    let raw = match (&cfg.depth, content) {
        (Some(path), Some(img)) => {
            let d = load_depth(path)?;
            if (d.height(), d.width()) == (img.height(), img.width()) {
                d
            } else {
                d.resized(img.height(), img.width())?
            }
        }
        (Some(path), None) => load_depth(path)?,
        (None, content) => {
            let estimator = cfg.depth_backend()?.estimator()?;
            let img = content.ok_or_else(|| {
                Error::MalformedConfig("`content` is required to estimate depth".into())
            })?;
            DepthCache::new(&cfg.cache_dir).estimate(img, estimator.as_ref())?
        }
    };
    Ok(normalize_depth(&raw))
}

fn optional_content(cfg: &JobConfig) -> Result<Option<ImageRGB>> {
    cfg.content
        .as_deref()
        .map(|p| load_capped(p, cfg.size))
        .transpose()
}

pub fn cmd_depth(cfg: &JobConfig) -> Result<PathBuf> {
    let content = load_capped(required(&cfg.content, "content")?, cfg.size)?;
    let depth = resolve_depth(cfg, Some(&content))?;
    let out = output_path(cfg, DEPTH_PNG)?;
    save_depth(&depth, &out)?;
    Ok(out)
}

pub fn cmd_heatmap(cfg: &JobConfig) -> Result<PathBuf> {
    let content = optional_content(cfg)?;
    let depth = resolve_depth(cfg, content.as_ref())?;
    let out = output_path(cfg, HEATMAP_PNG)?;
    save_image(&apply_colormap(&depth), &out)?;
    Ok(out)
}

pub fn cmd_blend(cfg: &JobConfig, opts: &StageOptions) -> Result<PathBuf> {
    let content = load_capped(required(&cfg.content, "content")?, cfg.size)?;
    let heat = match &opts.heatmap {
        Some(p) => load_image(p)?,
        None => apply_colormap(&resolve_depth(cfg, Some(&content))?),
    };
    let blended = blend(&content, &heat, cfg.alpha as f32)?;
    let out = output_path(cfg, BLENDED_PNG)?;
    save_image(&blended, &out)?;
    Ok(out)
}

/// Seeded uniform noise image.
pub fn noise_image(height: usize, width: usize, seed: u64) -> ImageRGB {
    let mut rng = XorShift64Star::new(seed);
    let t = Tensor3::from_fn(3, height, width, |_, _, _| rng.next_f32());
    ImageRGB::new(t).expect("noise lies in [0,1)")
}

struct StageObserver<'a> {
    dir: &'a Path,
    log_every: usize,
    label: String,
}

impl RunObserver for StageObserver<'_> {
    fn iteration(&mut self, iter: usize, r: &LossReport) {
        if self.log_every > 0 && iter.is_multiple_of(self.log_every) {
            eprintln!(
                "{}iter {iter:>5}  total {:.6e}  content {:.4e}  style {:.4e}  tv {:.4e}",
                self.label, r.total, r.content, r.style, r.tv
            );
        }
    }

    fn snapshot(&mut self, iter: usize, img: &ImageRGB) -> Result<()> {
        save_image(img, self.dir.join(format!("snap_{iter}.png")))
    }
}

/// Optimizes the content image toward the style image and writes
/// `stylized.png`, `trace.csv` and snapshots.
pub fn cmd_stylize(cfg: &JobConfig, opts: &StageOptions) -> Result<(PathBuf, RunTrace)> {
    let content = load_capped(required(&cfg.content, "content")?, cfg.size)?;
    let style = load_capped(required(&cfg.style, "style")?, cfg.size)?;
    let spec = cfg.extractor_spec()?;
    let extractor = Extractor::for_backend(&cfg.feature_backend, cfg.pretrained_model.as_deref())?;
    extractor.validate(&spec)?;
    let mask = if cfg.kappa > 0.0 {
        Some(resolve_depth(cfg, Some(&content))?)
    } else {
        None
    };
    let targets = Targets::compute(&extractor, &spec, content.tensor(), style.tensor())?;
    let init = match (&opts.init_image, cfg.init) {
        (Some(path), _) => {
            let img = load_capped(path, cfg.size)?;
            if (img.height(), img.width()) != (content.height(), content.width()) {
                return Err(Error::DimensionMismatch(format!(
                    "init image {}x{} vs. content {}x{}",
                    img.height(),
                    img.width(),
                    content.height(),
                    content.width()
                )));
            }
            img
        }
        (None, InitMode::Content) => content.clone(),
        (None, InitMode::Noise) => noise_image(content.height(), content.width(), cfg.seed),
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut observer = StageObserver {
        dir: &cfg.output_dir,
        log_every: opts.log_every,
        label: cfg
            .content
            .as_deref()
            .and_then(Path::file_name)
            .map(|n| format!("[{}] ", n.to_string_lossy()))
            .unwrap_or_default(),
    };
    let (stylized, trace) = run(
        &init,
        &targets,
        &cfg.weights(),
        &extractor,
        &spec,
        mask.as_ref(),
        &cfg.run_settings(),
        &mut observer,
    )?;
    let out = output_path(cfg, STYLIZED_PNG)?;
    save_image(&stylized, &out)?;
    trace.write_csv(cfg.output_dir.join(TRACE_CSV))?;
    Ok((out, trace))
}

/// Runs every stage for one content image, each stage reading what the
/// previous one wrote. The optimization keeps the content image as its
/// target and starts from the blended image.
pub fn run_job(cfg: &JobConfig, opts: &StageOptions) -> Result<PathBuf> {
    let depth = cmd_depth(cfg)?;
    let with_depth = JobConfig {
        depth: Some(depth.clone()),
        ..cfg.clone()
    };
    let heatmap = cmd_heatmap(&with_depth)?;
    let blended = cmd_blend(
        &with_depth,
        &StageOptions {
            heatmap: Some(heatmap),
            ..opts.clone()
        },
    )?;
    let (stylized, _) = cmd_stylize(
        &with_depth,
        &StageOptions {
            init_image: Some(blended),
            ..opts.clone()
        },
    )?;
    Ok(stylized)
}

/// Every `*.png` directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::read(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// One job per PNG in the content directory, each writing into
/// `<output_dir>/<stem>/`. A depth directory is matched by file name.
pub fn batch_jobs(cfg: &JobConfig) -> Result<Vec<JobConfig>> {
    let dir = required(&cfg.content, "content")?;
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::FileNotFound(dir.join("*.png")));
    }
    Ok(files
        .into_iter()
        .map(|content| {
            let name = content.file_name().expect("listed file has a name").to_owned();
            let stem = content.file_stem().expect("listed file has a stem").to_owned();
            let depth = match &cfg.depth {
                Some(d) if d.is_dir() => Some(d.join(&name)),
                other => other.clone(),
            };
            JobConfig {
                output_dir: cfg.output_dir.join(stem),
                content: Some(content),
                depth,
                ..cfg.clone()
            }
        })
        .collect())
}

/// The full pipeline. A content directory runs one independent job per
/// image, concurrently; the first failure is reported after all jobs finish.
pub fn cmd_pipeline(cfg: &JobConfig, opts: &StageOptions) -> Result<Vec<PathBuf>> {
    let content = required(&cfg.content, "content")?;
    if !content.is_dir() {
        return Ok(vec![run_job(cfg, opts)?]);
    }
    let jobs = batch_jobs(cfg)?;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len());
    let mut results: Vec<Option<Result<PathBuf>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (chunk_jobs, chunk_results) in jobs
            .chunks(jobs.len().div_ceil(workers))
            .zip(results.chunks_mut(jobs.len().div_ceil(workers)))
        {
            s.spawn(move || {
                for (job, slot) in chunk_jobs.iter().zip(chunk_results) {
                    *slot = Some(run_job(job, opts));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_seeded() {
        assert_eq!(noise_image(3, 4, 9), noise_image(3, 4, 9));
        assert_ne!(noise_image(3, 4, 9), noise_image(3, 4, 10));
    }

    #[test]
    fn missing_content_is_reported() {
        let err = cmd_depth(&JobConfig::default()).unwrap_err();
        assert_eq!(err.category(), "MalformedConfig");
    }

    #[test]
    fn file_backend_without_depth_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("c.png");
        save_image(&ImageRGB::solid(4, 4, [0.2, 0.4, 0.6]), &content).unwrap();
        let cfg = JobConfig {
            content: Some(content),
            output_dir: dir.path().join("out"),
            ..Default::default()
        };
        assert_eq!(cmd_depth(&cfg).unwrap_err().category(), "BackendUnavailable");
    }
}
