use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depthstyle::gradcheck::{run_gradcheck, DEFAULT_SAMPLES, DEFAULT_STEP, TOLERANCE};
use depthstyle::pipeline::{cmd_blend, cmd_depth, cmd_heatmap, cmd_pipeline, cmd_stylize, StageOptions};
use depthstyle::{config, ConfigOverrides, Error, InitMode, JobConfig};

#[derive(Parser)]
#[command(name = "depthstyle", version, about = "Depth-aware neural style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: depth, heatmap, blend, stylize.
    Pipeline(JobArgs),
    /// Write the normalized depth map.
    Depth(JobArgs),
    /// Write the colormapped depth heatmap.
    Heatmap(JobArgs),
    /// Blend the content image with its depth heatmap.
    Blend {
        #[command(flatten)]
        job: JobArgs,
        /// Use this heatmap instead of computing one from depth.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Optimize an image toward the content and style targets.
    Stylize {
        #[command(flatten)]
        job: JobArgs,
        /// Start from this image (e.g. the blended image) instead of `--init`.
        #[arg(long)]
        init_image: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
    },
}

#[derive(Args)]
struct JobArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    content: Option<PathBuf>,
    #[arg(long)]
    style: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Longest-side cap for loaded images.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    content_weight: Option<f64>,
    #[arg(long)]
    style_weight: Option<f64>,
    #[arg(long)]
    tv_weight: Option<f64>,
    /// Depth emphasis of the content loss.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// `tiny` or `pretrained:<name>`.
    #[arg(long)]
    feature_backend: Option<String>,
    /// `file` or `external:<program>`.
    #[arg(long)]
    depth_backend: Option<String>,
    #[arg(long)]
    pretrained_model: Option<PathBuf>,
    /// Comma-separated layer names.
    #[arg(long, value_delimiter = ',')]
    style_layers: Option<Vec<String>>,
    #[arg(long)]
    content_layer: Option<String>,
    /// `content` or `noise`.
    #[arg(long)]
    init: Option<InitMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshot_interval: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Print a loss line every N iterations (0 = quiet).
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

impl JobArgs {
    fn resolve(self) -> Result<(JobConfig, StageOptions), Error> {
        let flags = ConfigOverrides {
            content: self.content,
            style: self.style,
            depth: self.depth,
            output_dir: self.output_dir,
            alpha: self.alpha,
            size: self.size,
            content_weight: self.content_weight,
            style_weight: self.style_weight,
            tv_weight: self.tv_weight,
            kappa: self.kappa,
            iterations: self.iterations,
            lr: self.lr,
            feature_backend: self.feature_backend,
            depth_backend: self.depth_backend,
            pretrained_model: self.pretrained_model,
            style_layers: self.style_layers,
            content_layer: self.content_layer,
            init: self.init,
            seed: self.seed,
            snapshot_interval: self.snapshot_interval,
            cache_dir: self.cache_dir,
        };
        let cfg = config::parse_config(self.config.as_deref(), &flags)?;
        let opts = StageOptions {
            heatmap: None,
            init_image: None,
            log_every: self.log_every,
        };
        Ok((cfg, opts))
    }
}

fn written(path: PathBuf) {
    println!("{}", path.display());
}

fn gradcheck(seed: u64, samples: usize) -> Result<bool, Error> {
    let report = run_gradcheck(seed, samples, DEFAULT_STEP)?;
    for t in &report.terms {
        println!("{:<15} max_rel_error={:.6e} checked={}", t.name, t.max_rel_error, t.checked);
    }
    println!("samples={} kinks_skipped={}", report.samples, report.kinks_skipped);
    let ok = report.passes(TOLERANCE);
    println!("{} (tolerance {TOLERANCE:e})", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::Pipeline(job) => {
            let (cfg, opts) = job.resolve()?;
            cmd_pipeline(&cfg, &opts)?.into_iter().for_each(written);
        }
        Command::Depth(job) => written(cmd_depth(&job.resolve()?.0)?),
        Command::Heatmap(job) => written(cmd_heatmap(&job.resolve()?.0)?),
        Command::Blend { job, heatmap } => {
            let (cfg, opts) = job.resolve()?;
            written(cmd_blend(&cfg, &StageOptions { heatmap, ..opts })?);
        }
        Command::Stylize { job, init_image } => {
            let (cfg, opts) = job.resolve()?;
            written(cmd_stylize(&cfg, &StageOptions { init_image, ..opts })?.0);
        }
        Command::Gradcheck { seed, samples } => return gradcheck(seed, samples),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let detail = e.render().to_string();
            let first = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error:MalformedConfig: {first}");
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error:{}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
