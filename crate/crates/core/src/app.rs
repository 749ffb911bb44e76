//! Experiment orchestration, report documents and overlay rendering.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::ContourModel;
use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::image::{GrayImage, RgbImage};
use crate::pipeline::{fit_image, Method, PipelineConfig};
use crate::simdata::{
    contour_error, ErrorMetrics, GroundTruth, NoiseSpec, SquareSpec, RNG_ALGORITHM,
};

/// Curve samples used for every error metric.
pub const METRIC_SAMPLES: usize = 2000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NO_EDGES: i32 = 4;
pub const EXIT_TOPOLOGY: i32 = 5;
pub const EXIT_UNDERDETERMINED: i32 = 6;
pub const EXIT_NUMERIC: i32 = 7;

/// Process exit code for a pipeline error. Clap reserves 2 for usage errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } | Error::Json { .. } => EXIT_IO,
        Error::NoEdges => EXIT_NO_EDGES,
        Error::AmbiguousTopology(_) => EXIT_TOPOLOGY,
        Error::Underdetermined { .. } => EXIT_UNDERDETERMINED,
        Error::SingularSystem | Error::NotAMaximum { .. } | Error::Domain { .. } => EXIT_NUMERIC,
        Error::InvalidArgument(_) => EXIT_INVALID,
    }
}

/// Sizes the global rayon pool from `SUBEDGE_THREADS` when it is set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("SUBEDGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::invalid(format!(
            "SUBEDGE_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    // a pool built earlier in the process wins
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(value)).map_err(|e| Error::io(path, e))
}

/// Where the ground truth of a generated image is written.
pub fn truth_path_for(image: &Path) -> PathBuf {
    image.with_extension("truth.json")
}

/// Renders the square, adds noise and writes the PGM and its truth JSON.
pub fn cmd_generate(
    spec: &SquareSpec,
    noise: &NoiseSpec,
    seed: u64,
    out: &Path,
) -> Result<GroundTruth> {
    let (clean, truth) = spec.render()?;
    let img = noise.apply(&clean, seed)?;
    img.write_pgm(out)?;
    write_json(truth_path_for(out), &truth)?;
    Ok(truth)
}

/// Everything `fit` reports besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRun {
    pub method: Method,
    #[serde(flatten)]
    pub report: FitReport,
    pub observations: usize,
    pub num_ctrl: usize,
    pub sigma_b: f64,
    pub detect_sigma: f64,
    pub metrics: Option<ErrorMetrics>,
}

pub fn cmd_fit(
    img: &GrayImage,
    truth: Option<&GroundTruth>,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<(ContourModel, FitRun)> {
    let (model, report, ex) = fit_image(img, cfg, method)?;
    let metrics = truth
        .map(|t| contour_error(&model, t, METRIC_SAMPLES))
        .transpose()?;
    let run = FitRun {
        method,
        report,
        observations: ex.observations.len(),
        num_ctrl: model.num_ctrl(),
        sigma_b: ex.sigma_b,
        detect_sigma: ex.detect_sigma,
        metrics,
    };
    Ok((model, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ImageSource {
    Generated(SquareSpec),
    File { path: PathBuf, truth: PathBuf },
}

impl Default for ImageSource {
    fn default() -> Self {
        ImageSource::Generated(SquareSpec::default())
    }
}

impl ImageSource {
    pub fn load(&self) -> Result<(GrayImage, GroundTruth)> {
        match self {
            ImageSource::Generated(spec) => spec.render(),
            ImageSource::File { path, truth } => {
                Ok((GrayImage::read_pgm(path)?, read_json(truth)?))
            }
        }
    }
}

/// One comparison run: every noise cell gets `trials` realizations with
/// seeds `seed + trial`, each fitted by both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub image: ImageSource,
    pub noise: Vec<NoiseSpec>,
    pub trials: usize,
    pub seed: u64,
    /// Hand the true noise level to the pipeline instead of estimating it,
    /// unless a config sets `sigma_b` itself.
    pub known_noise: bool,
    pub stochastic: PipelineConfig,
    pub classical: PipelineConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            image: ImageSource::default(),
            noise: vec![
                NoiseSpec::Gaussian { sigma: 0.1 },
                NoiseSpec::Gaussian { sigma: 0.2 },
                NoiseSpec::Gaussian { sigma: 0.4 },
                NoiseSpec::Gaussian { sigma: 0.5 },
            ],
            trials: 20,
            seed: 1000,
            known_noise: true,
            stochastic: PipelineConfig::default(),
            classical: PipelineConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.noise.is_empty() {
            return Err(Error::invalid("noise grid is empty"));
        }
        Ok(())
    }
}

/// Outcome of one method on one noisy realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub metrics: Option<ErrorMetrics>,
    pub iterations_used: Option<usize>,
    pub error: Option<String>,
}

impl MethodOutcome {
    fn mean_dist(&self) -> Option<f64> {
        self.metrics.map(|m| m.mean_dist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub stochastic: MethodOutcome,
    pub classical: MethodOutcome,
    /// Stochastic succeeded and beat classical, or classical failed.
    pub stochastic_wins: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

/// Aggregates over the trials a method completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub completed: usize,
    pub failed: usize,
    pub mean_dist: Option<Stat>,
    pub rms_dist: Option<Stat>,
    pub max_dist: Option<Stat>,
}

impl MethodSummary {
    fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a MethodOutcome>) -> Self {
        let (mut ok, mut failed) = (Vec::new(), 0);
        for o in outcomes {
            match o.metrics {
                Some(m) => ok.push(m),
                None => failed += 1,
            }
        }
        let col = |f: fn(&ErrorMetrics) -> f64| Stat::of(&ok.iter().map(f).collect::<Vec<_>>());
        MethodSummary {
            completed: ok.len(),
            failed,
            mean_dist: col(|m| m.mean_dist),
            rms_dist: col(|m| m.rms_dist),
            max_dist: col(|m| m.max_dist),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    pub noise: NoiseSpec,
    /// Set when the cell could not run at all; trials are then empty.
    pub error: Option<String>,
    pub wins: usize,
    pub win_rate: f64,
    pub stochastic: MethodSummary,
    pub classical: MethodSummary,
    pub trials: Vec<TrialRecord>,
}

impl CellReport {
    fn from_trials(noise: NoiseSpec, trials: Vec<TrialRecord>) -> Self {
        let wins = trials.iter().filter(|t| t.stochastic_wins).count();
        CellReport {
            label: noise.label(),
            noise,
            error: None,
            wins,
            win_rate: wins as f64 / trials.len().max(1) as f64,
            stochastic: MethodSummary::from_outcomes(trials.iter().map(|t| &t.stochastic)),
            classical: MethodSummary::from_outcomes(trials.iter().map(|t| &t.classical)),
            trials,
        }
    }

    fn failed(noise: NoiseSpec, err: &Error) -> Self {
        let mut cell = CellReport::from_trials(noise, Vec::new());
        cell.error = Some(err.to_string());
        cell
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Noise generator, so the seeds can be replayed elsewhere.
    pub rng: String,
    pub trials: usize,
    pub seed: u64,
    pub metric_samples: usize,
    pub cells: Vec<CellReport>,
}

fn run_method(
    img: &GrayImage,
    truth: &GroundTruth,
    cfg: &PipelineConfig,
    method: Method,
) -> MethodOutcome {
    let result = fit_image(img, cfg, method).and_then(|(model, report, _)| {
        Ok((
            contour_error(&model, truth, METRIC_SAMPLES)?,
            report.iterations_used,
        ))
    });
    match result {
        Ok((m, iters)) => MethodOutcome {
            metrics: Some(m),
            iterations_used: Some(iters),
            error: None,
        },
        Err(e) => MethodOutcome {
            metrics: None,
            iterations_used: None,
            error: Some(e.to_string()),
        },
    }
}

fn run_trial(
    clean: &GrayImage,
    truth: &GroundTruth,
    noise: &NoiseSpec,
    spec: &ExperimentSpec,
    trial: usize,
) -> Result<TrialRecord> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let img = noise.apply(clean, seed)?;
    let with_noise = |cfg: &PipelineConfig| {
        let mut cfg = cfg.clone();
        if spec.known_noise && cfg.sigma_b.is_none() {
            cfg.sigma_b = Some(noise.std_dev());
        }
        cfg
    };
    let stochastic = run_method(
        &img,
        truth,
        &with_noise(&spec.stochastic),
        Method::Stochastic,
    );
    let classical = run_method(&img, truth, &with_noise(&spec.classical), Method::Classical);
    let stochastic_wins = match (stochastic.mean_dist(), classical.mean_dist()) {
        (Some(s), Some(c)) => s < c,
        (Some(_), None) => true,
        _ => false,
    };
    Ok(TrialRecord {
        trial,
        seed,
        stochastic,
        classical,
        stochastic_wins,
    })
}

/// Runs every cell and trial. Work is spread over the rayon pool; results
/// are assembled in spec order so the report does not depend on scheduling.
pub fn run_compare(spec: &ExperimentSpec) -> Result<ComparisonReport> {
    spec.validate()?;
    let (clean, truth) = spec.image.load()?;
    let jobs: Vec<(usize, usize)> = (0..spec.noise.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<Result<TrialRecord>> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(&clean, &truth, &spec.noise[c], spec, t))
        .collect();
    let mut results = results.into_iter();
    let cells = spec
        .noise
        .iter()
        .map(|noise| {
            let trials: Result<Vec<_>> = results.by_ref().take(spec.trials).collect();
            match trials {
                Ok(trials) => CellReport::from_trials(*noise, trials),
                Err(e) => CellReport::failed(*noise, &e),
            }
        })
        .collect();
    Ok(ComparisonReport {
        rng: RNG_ALGORITHM.to_string(),
        trials: spec.trials,
        seed: spec.seed,
        metric_samples: METRIC_SAMPLES,
        cells,
    })
}

/// Reads the spec, runs it and writes the report into the spec's output
/// directory when one is set.
pub fn cmd_compare(spec_path: &Path) -> Result<ComparisonReport> {
    let spec: ExperimentSpec = read_json(spec_path)?;
    let report = run_compare(&spec)?;
    if let Some(dir) = &spec.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(dir.join("report.json"), &report)?;
    }
    Ok(report)
}

pub fn summary_table(report: &ComparisonReport) -> String {
    let fmt = |s: &MethodSummary| match s.mean_dist {
        Some(st) => format!("{:.3} +- {:.3}", st.mean, st.std),
        None => "-".to_string(),
    };
    let mut out = format!(
        "{:<32} {:>16} {:>16} {:>8} {:>6}\n",
        "noise", "stochastic", "classical", "win", "fails"
    );
    for cell in &report.cells {
        if let Some(e) = &cell.error {
            out.push_str(&format!("{:<32} error: {e}\n", cell.label));
            continue;
        }
        out.push_str(&format!(
            "{:<32} {:>16} {:>16} {:>7.0}% {:>3}/{}\n",
            cell.label,
            fmt(&cell.stochastic),
            fmt(&cell.classical),
            100.0 * cell.win_rate,
            cell.stochastic.failed,
            cell.classical.failed,
        ));
    }
    out
}

pub const RED: [u8; 3] = [255, 0, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];
pub const WHITE: [u8; 3] = [255, 255, 255];

const SUPERSAMPLE: usize = 4;

/// Coverage mask of a polyline drawn one output pixel wide on the
/// supersampled grid.
fn stroke(points: &[[f64; 2]], closed: bool, w: usize, h: usize) -> Vec<bool> {
    let s = SUPERSAMPLE as f64;
    let (sw, sh) = (w * SUPERSAMPLE, h * SUPERSAMPLE);
    let mut mask = vec![false; sw * sh];
    let radius = s / 2.0;
    let mut stamp = |x: f64, y: f64| {
        let (cx, cy) = (x * s, y * s);
        let r0 = (cy - radius).floor().max(0.0) as usize;
        let r1 = ((cy + radius).ceil().max(0.0) as usize).min(sh);
        let c0 = (cx - radius).floor().max(0.0) as usize;
        let c1 = ((cx + radius).ceil().max(0.0) as usize).min(sw);
        for r in r0..r1 {
            for c in c0..c1 {
                let (dx, dy) = (c as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= radius * radius {
                    mask[r * sw + c] = true;
                }
            }
        }
    };
    let n = points.len();
    let segments = if closed { n } else { n.saturating_sub(1) };
    for i in 0..segments {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]) * s;
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let u = k as f64 / steps as f64;
            stamp(a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]));
        }
    }
    if n == 1 {
        stamp(points[0][0], points[0][1]);
    }
    mask
}

/// Blends `color` by coverage: pixels at least half covered take the
/// exact color, thinner coverage is mixed with what is underneath.
fn composite(canvas: &mut RgbImage, mask: &[bool], color: [u8; 3]) {
    let sw = canvas.width * SUPERSAMPLE;
    let full = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for r in 0..canvas.height {
        for c in 0..canvas.width {
            let mut hits = 0;
            for dr in 0..SUPERSAMPLE {
                let row = (r * SUPERSAMPLE + dr) * sw + c * SUPERSAMPLE;
                hits += mask[row..row + SUPERSAMPLE].iter().filter(|&&b| b).count();
            }
            if hits == 0 {
                continue;
            }
            let px = &mut canvas.data[r * canvas.width + c];
            let a = hits as f64 / full;
            *px = if a >= 0.5 {
                color
            } else {
                let mix = |bg: u8, fg: u8| {
                    (bg as f64 * (1.0 - 2.0 * a) + fg as f64 * 2.0 * a).round() as u8
                };
                [
                    mix(px[0], color[0]),
                    mix(px[1], color[1]),
                    mix(px[2], color[2]),
                ]
            };
        }
    }
}

/// Grayscale image with the truth in white, the classical fit in blue and
/// the stochastic fit in red, drawn in that order.
pub fn render_overlay(
    img: &GrayImage,
    stochastic: Option<&ContourModel>,
    classical: Option<&ContourModel>,
    truth: Option<&GroundTruth>,
) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut canvas = RgbImage::from_gray(img);
    let curve = |m: &ContourModel| {
        let count = ((img.width() + img.height()) * 8).max(200);
        (m.sample(count), m.knots().is_closed())
    };
    if let Some(t) = truth {
        composite(&mut canvas, &stroke(&t.rect.corners(), true, w, h), WHITE);
    }
    for (model, color) in [(classical, BLUE), (stochastic, RED)] {
        if let Some(m) = model {
            let (pts, closed) = curve(m);
            composite(&mut canvas, &stroke(&pts, closed, w, h), color);
        }
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::io("x", std::io::Error::other("boom"))),
            exit_code(&Error::NoEdges),
            exit_code(&Error::AmbiguousTopology("two".into())),
            exit_code(&Error::Underdetermined {
                observations: 1,
                unknowns: 2,
            }),
        ];
        for (i, a) in codes.iter().enumerate() {
            assert_ne!(*a, EXIT_OK);
            assert_ne!(*a, 2);
            for b in &codes[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn stat_mean_and_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn truth_only_overlay() {
        let (img, truth) = SquareSpec::default().render().unwrap();
        let out = render_overlay(&img, None, None, Some(&truth));
        assert_eq!((out.width, out.height), (img.width(), img.height()));
        // edge x = 32 runs along the pixel boundary between columns 31 and 32
        let on_edge = (31..33).any(|c| out.get(c, 64) == WHITE);
        assert!(on_edge);
        assert!(!out.data.iter().any(|&p| p == RED || p == BLUE));
        assert_eq!(out.get(64, 64), [204, 204, 204]);
    }

    #[test]
    fn overlay_colors_are_exact() {
        let (img, truth) = SquareSpec::default().render().unwrap();
        let cfg = PipelineConfig::default();
        let (s, _) = cmd_fit(&img, Some(&truth), Method::Stochastic, &cfg).unwrap();
        let (c, _) = cmd_fit(&img, Some(&truth), Method::Classical, &cfg).unwrap();
        let red = render_overlay(&img, Some(&s), None, None);
        let blue = render_overlay(&img, None, Some(&c), None);
        assert!(red.data.contains(&RED));
        assert!(blue.data.contains(&BLUE));
        assert!(!red.data.contains(&BLUE) && !blue.data.contains(&RED));
    }

    #[test]
    fn spec_rejects_empty_grid_and_zero_trials() {
        let mut spec = ExperimentSpec {
            trials: 0,
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidArgument(_))));
        spec.trials = 1;
        spec.noise.clear();
        assert!(matches!(spec.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_noiseless_trial() {
        let spec = ExperimentSpec {
            noise: vec![NoiseSpec::None],
            trials: 1,
            ..Default::default()
        };
        let report = run_compare(&spec).unwrap();
        let cell = &report.cells[0];
        assert_eq!(cell.stochastic.completed, 1);
        assert_eq!(cell.classical.completed, 1);
        assert!(cell.win_rate == 0.0 || cell.win_rate == 1.0);
    }

    #[test]
    fn bad_cell_is_recorded_and_run_continues() {
        let spec = ExperimentSpec {
            noise: vec![NoiseSpec::Gaussian { sigma: -1.0 }, NoiseSpec::None],
            trials: 1,
            ..Default::default()
        };
        let report = run_compare(&spec).unwrap();
        assert!(report.cells[0].error.is_some());
        assert!(report.cells[0].trials.is_empty());
        assert!(report.cells[1].error.is_none());
        assert_eq!(report.cells[1].trials.len(), 1);
    }
}
