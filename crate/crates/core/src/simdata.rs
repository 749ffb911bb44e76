//! Synthetic test images with exact ground truth, noise models and contour
//! error metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bspline::ContourModel;
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Name of the generator behind every seeded noise draw.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64)";

/// Minimum distance between the rectangle and the image border, pixels.
pub const MIN_MARGIN: f64 = 8.0;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in continuous pixel
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x0, self.y0],
            [self.x1, self.y0],
            [self.x1, self.y1],
            [self.x0, self.y1],
        ]
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.x1 - self.x0) + (self.y1 - self.y0))
    }

    /// Euclidean distance from `p` to the rectangle boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        let inside = x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1;
        if inside {
            (x - self.x0)
                .min(self.x1 - x)
                .min(y - self.y0)
                .min(self.y1 - y)
        } else {
            let dx = (self.x0 - x).max(0.0).max(x - self.x1);
            let dy = (self.y0 - y).max(0.0).max(y - self.y1);
            dx.hypot(dy)
        }
    }

    /// Closest boundary point and outward unit normal there (for points
    /// not exactly on a corner).
    pub fn nearest_normal(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        let cands = [
            ((x - self.x0).abs(), [-1.0, 0.0]),
            ((self.x1 - x).abs(), [1.0, 0.0]),
            ((y - self.y0).abs(), [0.0, -1.0]),
            ((self.y1 - y).abs(), [0.0, 1.0]),
        ];
        cands
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|c| c.1)
            .unwrap()
    }

    /// Closed polygon through the boundary with `count` points evenly spaced
    /// by arc length, starting at the top-left corner and running clockwise
    /// in image coordinates.
    pub fn densify(&self, count: usize) -> Vec<[f64; 2]> {
        let (w, h) = (self.x1 - self.x0, self.y1 - self.y0);
        let per = self.perimeter();
        (0..count)
            .map(|i| {
                let s = per * i as f64 / count as f64;
                if s < w {
                    [self.x0 + s, self.y0]
                } else if s < w + h {
                    [self.x1, self.y0 + (s - w)]
                } else if s < 2.0 * w + h {
                    [self.x1 - (s - w - h), self.y1]
                } else {
                    [self.x0, self.y1 - (s - 2.0 * w - h)]
                }
            })
            .collect()
    }
}

/// Exact contour of a synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rect: Rect,
    pub description: String,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthDoc {
    #[serde(rename = "type")]
    kind: String,
    corners: [[f64; 2]; 4],
    #[serde(default, skip_serializing_if = "String::is_empty")]
    description: String,
}

impl Serialize for GroundTruth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GroundTruthDoc {
            kind: "rect".into(),
            corners: self.rect.corners(),
            description: self.description.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroundTruth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = GroundTruthDoc::deserialize(d)?;
        if doc.kind != "rect" {
            return Err(D::Error::custom(format!(
                "unsupported truth type {:?}",
                doc.kind
            )));
        }
        let xs = doc.corners.map(|c| c[0]);
        let ys = doc.corners.map(|c| c[1]);
        let fold = |v: [f64; 4], f: fn(f64, f64) -> f64, init| v.into_iter().fold(init, f);
        let rect = Rect::new(
            fold(xs, f64::min, f64::INFINITY),
            fold(ys, f64::min, f64::INFINITY),
            fold(xs, f64::max, f64::NEG_INFINITY),
            fold(ys, f64::max, f64::NEG_INFINITY),
        );
        let axis_aligned = doc
            .corners
            .iter()
            .all(|c| (c[0] == rect.x0 || c[0] == rect.x1) && (c[1] == rect.y0 || c[1] == rect.y1));
        if !axis_aligned || rect.x1 <= rect.x0 || rect.y1 <= rect.y0 {
            return Err(D::Error::custom(
                "corners do not form an axis-aligned rectangle",
            ));
        }
        Ok(GroundTruth {
            rect,
            description: doc.description,
        })
    }
}

/// Parameters of the synthetic square image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SquareSpec {
    pub size: usize,
    pub rect: [f64; 4],
    pub lo: f64,
    pub hi: f64,
    pub blur: f64,
}

impl Default for SquareSpec {
    fn default() -> Self {
        Self {
            size: 128,
            rect: [32.0, 32.0, 96.0, 96.0],
            lo: 0.2,
            hi: 0.8,
            blur: 1.0,
        }
    }
}

impl SquareSpec {
    pub fn render(&self) -> Result<(GrayImage, GroundTruth)> {
        let [x0, y0, x1, y1] = self.rect;
        make_square_image(
            self.size,
            Rect::new(x0, y0, x1, y1),
            self.lo,
            self.hi,
            self.blur,
        )
    }
}

fn std_normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Average over `[c, c + 1]` of the blurred indicator of `[a, b]`.
fn pixel_coverage(c: f64, a: f64, b: f64, blur: f64) -> f64 {
    if blur == 0.0 {
        return ((c + 1.0).min(b) - c.max(a)).max(0.0);
    }
    // antiderivative of Phi(u): u Phi(u) + phi(u)
    let big_psi = |u: f64| u * std_normal_cdf(u) + std_normal_pdf(u);
    let step = |edge: f64| blur * (big_psi((c + 1.0 - edge) / blur) - big_psi((c - edge) / blur));
    step(a) - step(b)
}

/// Renders a `size x size` image of intensity `hi` inside `rect` and `lo`
/// outside, blurred by a Gaussian of `blur_sigma` and integrated over each
/// pixel's area.
pub fn make_square_image(
    size: usize,
    rect: Rect,
    lo: f64,
    hi: f64,
    blur_sigma: f64,
) -> Result<(GrayImage, GroundTruth)> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::invalid(format!(
            "need 0 <= lo < hi <= 1, got lo={lo} hi={hi}"
        )));
    }
    if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) {
        return Err(Error::invalid("blur sigma must be nonnegative"));
    }
    let s = size as f64;
    if rect.x0 < MIN_MARGIN
        || rect.y0 < MIN_MARGIN
        || rect.x1 > s - MIN_MARGIN
        || rect.y1 > s - MIN_MARGIN
        || rect.x1 <= rect.x0
        || rect.y1 <= rect.y0
    {
        return Err(Error::invalid(format!(
            "rectangle {rect:?} must be nonempty and keep an {MIN_MARGIN} px margin in a {size} px image"
        )));
    }
    let fx: Vec<f64> = (0..size)
        .map(|c| pixel_coverage(c as f64, rect.x0, rect.x1, blur_sigma))
        .collect();
    let fy: Vec<f64> = (0..size)
        .map(|r| pixel_coverage(r as f64, rect.y0, rect.y1, blur_sigma))
        .collect();
    let img = GrayImage::from_fn(size, size, |c, r| lo + (hi - lo) * fx[c] * fy[r]);
    let truth = GroundTruth {
        rect,
        description: format!(
            "{size}x{size} square [{}, {}, {}, {}] lo={lo} hi={hi} blur={blur_sigma}",
            rect.x0, rect.y0, rect.x1, rect.y1
        ),
    };
    Ok((img, truth))
}

/// Additive noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    None,
    /// Zero-mean Gaussian with standard deviation given as a fraction of the
    /// unit amplitude.
    Gaussian {
        sigma: f64,
    },
    /// Additive impulses: `+gamma` and `-gamma` each with probability `p0`.
    SaltPepper {
        p0: f64,
        gamma: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            NoiseSpec::Gaussian { sigma } => Err(Error::invalid(format!(
                "gaussian sigma must be nonnegative, got {sigma}"
            ))),
            NoiseSpec::SaltPepper { p0, gamma }
                if p0 >= 0.0 && 2.0 * p0 <= 1.0 && gamma > 0.0 && gamma.is_finite() =>
            {
                Ok(())
            }
            NoiseSpec::SaltPepper { p0, gamma } => Err(Error::invalid(format!(
                "salt & pepper needs 0 <= 2 p0 <= 1 and gamma > 0, got p0={p0} gamma={gamma}"
            ))),
        }
    }

    /// Standard deviation of the per-pixel perturbation.
    pub fn std_dev(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::SaltPepper { p0, gamma } => gamma * (2.0 * p0).sqrt(),
        }
    }

    pub fn apply(&self, img: &GrayImage, seed: u64) -> Result<GrayImage> {
        self.validate()?;
        Ok(match *self {
            NoiseSpec::None => img.clone(),
            NoiseSpec::Gaussian { sigma } => add_gaussian_noise(img, sigma, seed)?,
            NoiseSpec::SaltPepper { p0, gamma } => add_salt_pepper(img, p0, gamma, seed)?,
        })
    }

    pub fn label(&self) -> String {
        match *self {
            NoiseSpec::None => "none".into(),
            NoiseSpec::Gaussian { sigma } => format!("gaussian sigma={sigma}"),
            NoiseSpec::SaltPepper { p0, gamma } => format!("salt-pepper p0={p0} gamma={gamma}"),
        }
    }
}

/// Adds i.i.d. `N(0, sigma_fraction^2)` to every pixel. No clipping.
pub fn add_gaussian_noise(img: &GrayImage, sigma_fraction: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma_fraction >= 0.0 && sigma_fraction.is_finite()) {
        return Err(Error::invalid("noise sigma must be nonnegative"));
    }
    let mut out = img.clone();
    if sigma_fraction == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma_fraction * z;
    }
    Ok(out)
}

/// Adds `+gamma` with probability `p0`, `-gamma` with probability `p0`, and
/// nothing otherwise, independently per pixel.
pub fn add_salt_pepper(img: &GrayImage, p0: f64, gamma: f64, seed: u64) -> Result<GrayImage> {
    NoiseSpec::SaltPepper { p0, gamma }.validate()?;
    let mut out = img.clone();
    if p0 == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for v in out.data_mut() {
        let u: f64 = rng.random();
        if u < p0 {
            *v += gamma;
        } else if u < 2.0 * p0 {
            *v -= gamma;
        }
    }
    Ok(out)
}

/// Distances from a densely sampled fitted curve to the true contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mean_dist: f64,
    pub rms_dist: f64,
    pub max_dist: f64,
}

impl ErrorMetrics {
    pub fn from_distances(d: &[f64]) -> Self {
        if d.is_empty() {
            return Self {
                mean_dist: 0.0,
                rms_dist: 0.0,
                max_dist: 0.0,
            };
        }
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let rms = (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let max = d.iter().cloned().fold(0.0, f64::max);
        // rounding can put the mean a hair above the rms for constant inputs
        Self {
            mean_dist: mean.min(rms),
            rms_dist: rms,
            max_dist: max.max(rms),
        }
    }
}

pub fn contour_error(
    model: &ContourModel,
    truth: &GroundTruth,
    samples: usize,
) -> Result<ErrorMetrics> {
    contour_error_masked(model, truth, samples, 0.0)
}

/// As [`contour_error`], ignoring curve samples closer than `corner_mask`
/// pixels to any true corner.
pub fn contour_error_masked(
    model: &ContourModel,
    truth: &GroundTruth,
    samples: usize,
    corner_mask: f64,
) -> Result<ErrorMetrics> {
    if samples < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 samples, got {samples}"
        )));
    }
    let corners = truth.rect.corners();
    let d: Vec<f64> = model
        .sample(samples)
        .into_iter()
        .filter(|p| {
            corner_mask <= 0.0
                || corners
                    .iter()
                    .all(|c| (p[0] - c[0]).hypot(p[1] - c[1]) >= corner_mask)
        })
        .map(|p| truth.rect.boundary_distance(p))
        .collect();
    Ok(ErrorMetrics::from_distances(&d))
}
