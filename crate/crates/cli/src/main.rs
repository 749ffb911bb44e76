use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use subedge::app::{self, ExperimentSpec};
use subedge::error::{Error, Result};
use subedge::image::GrayImage;
use subedge::pipeline::{Method, PipelineConfig};
use subedge::simdata::{GroundTruth, NoiseSpec, SquareSpec};

/// Sub-pixel contour estimation by weighted B-spline fitting.
///
/// Exit codes: 0 success, 1 invalid argument, 2 usage, 3 I/O or malformed
/// input, 4 no edges, 5 ambiguous topology, 6 underdetermined fit,
/// 7 numerical failure. SUBEDGE_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "subedge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic square, optionally noisy, plus its truth JSON.
    Generate(GenerateArgs),
    /// Fit a contour to an image.
    Fit(FitArgs),
    /// Run an experiment spec comparing both methods.
    Compare(CompareArgs),
    /// Draw fitted contours over an image.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    None,
    Gaussian,
    SaltPepper,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Rectangle as x0,y0,x1,y1 in pixel coordinates.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    rect: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.2)]
    lo: f64,
    #[arg(long, default_value_t = 0.8)]
    hi: f64,
    #[arg(long, default_value_t = 1.0)]
    blur: f64,
    #[arg(long, value_enum)]
    noise: Option<NoiseKind>,
    /// Gaussian noise standard deviation (fraction of unit amplitude).
    #[arg(long)]
    sigma: Option<f64>,
    /// Salt & pepper probability of each sign.
    #[arg(long)]
    p0: Option<f64>,
    /// Salt & pepper impulse amplitude.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PGM; the truth goes next to it as <stem>.truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    image: PathBuf,
    /// Ground truth JSON; adds error metrics to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "stochastic")]
    method: Method,
    #[arg(long)]
    ctrl_ratio: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Known noise standard deviation; estimated from the image otherwise.
    #[arg(long)]
    sigma: Option<f64>,
    /// Pipeline configuration JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Report JSON output; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    spec: PathBuf,
    /// Report JSON output; printed after the table when neither this nor
    /// the spec's output_dir is set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    image: PathBuf,
    #[arg(long)]
    stochastic: Option<PathBuf>,
    #[arg(long)]
    classical: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn noise_from(args: &GenerateArgs) -> Result<NoiseSpec> {
    let kind = args
        .noise
        .unwrap_or(match (args.sigma, args.p0, args.gamma) {
            (Some(_), _, _) => NoiseKind::Gaussian,
            (None, Some(_), _) | (None, _, Some(_)) => NoiseKind::SaltPepper,
            _ => NoiseKind::None,
        });
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for this noise kind")))
    };
    let noise = match kind {
        NoiseKind::None => NoiseSpec::None,
        NoiseKind::Gaussian => NoiseSpec::Gaussian {
            sigma: need(args.sigma, "sigma")?,
        },
        NoiseKind::SaltPepper => NoiseSpec::SaltPepper {
            p0: need(args.p0, "p0")?,
            gamma: need(args.gamma, "gamma")?,
        },
    };
    noise.validate()?;
    Ok(noise)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut spec = SquareSpec {
        size: args.size,
        lo: args.lo,
        hi: args.hi,
        blur: args.blur,
        ..Default::default()
    };
    match &args.rect {
        Some(r) => spec.rect = [r[0], r[1], r[2], r[3]],
        None if args.size != 128 => {
            let s = args.size as f64;
            spec.rect = [0.25 * s, 0.25 * s, 0.75 * s, 0.75 * s];
        }
        None => {}
    }
    let noise = noise_from(&args)?;
    app::cmd_generate(&spec, &noise, args.seed, &args.out)?;
    println!("{}", args.out.display());
    println!("{}", app::truth_path_for(&args.out).display());
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let mut cfg: PipelineConfig = match &args.config {
        Some(p) => app::read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = args.ctrl_ratio {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "--ctrl-ratio must lie in (0, 1], got {r}"
            )));
        }
        cfg.fit.ctrl_ratio = r;
    }
    if let Some(n) = args.iters {
        if n == 0 {
            return Err(Error::InvalidArgument("--iters must be at least 1".into()));
        }
        cfg.fit.max_iters = n;
    }
    if args.sigma.is_some() {
        cfg.sigma_b = args.sigma;
    }
    let img = GrayImage::read_pgm(&args.image)?;
    let truth: Option<GroundTruth> = args.truth.as_deref().map(app::read_json).transpose()?;
    let (model, run) = app::cmd_fit(&img, truth.as_ref(), args.method, &cfg)?;
    log::info!(
        "{} observations, {} control points",
        run.observations,
        run.num_ctrl
    );
    app::write_json(&args.out, &model)?;
    match &args.report {
        Some(p) => app::write_json(p, &run)?,
        None => print!("{}", app::to_json(&run)),
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let spec: ExperimentSpec = app::read_json(&args.spec)?;
    let report = app::cmd_compare(&args.spec)?;
    print!("{}", app::summary_table(&report));
    match &args.out {
        Some(p) => app::write_json(p, &report)?,
        None if spec.output_dir.is_none() => print!("{}", app::to_json(&report)),
        None => {}
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<subedge::bspline::ContourModel> {
    app::read_json(path)
}

fn render(args: RenderArgs) -> Result<()> {
    let img = GrayImage::read_pgm(&args.image)?;
    let stochastic = args.stochastic.as_deref().map(load_model).transpose()?;
    let classical = args.classical.as_deref().map(load_model).transpose()?;
    let truth: Option<GroundTruth> = args.truth.as_deref().map(app::read_json).transpose()?;
    app::render_overlay(
        &img,
        stochastic.as_ref(),
        classical.as_ref(),
        truth.as_ref(),
    )
    .write_ppm(&args.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = app::init_thread_pool().and_then(|_| match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Compare(a) => compare(a),
        Command::Render(a) => render(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
