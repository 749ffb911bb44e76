//! End-to-end contour extraction: gradients, edge pixels, ordering,
//! sub-pixel observations and the spline fit.

use serde::{Deserialize, Serialize};

use crate::bspline::{ContourModel, KnotVector};
use crate::edges::{
    build_observations, compute_gradient, detect_edges, gaussian_derivative_kernels, trace_contour,
    DetectParams, ObservationSet, ObserveParams,
};
use crate::error::{Error, Result};
use crate::fit::{fit_classical, fit_stochastic_with_knots, FitConfig, FitReport};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stochastic,
    Classical,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Stochastic => "stochastic",
            Method::Classical => "classical",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Method::Stochastic),
            "classical" => Ok(Method::Classical),
            other => Err(Error::invalid(format!(
                "unknown method {other:?}, expected stochastic or classical"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Scale of the derivative kernels used for the observations.
    pub kernel_sigma: f64,
    /// Scale used to find and order edge pixels, three times the kernel
    /// scale when unset.
    pub detect_sigma: Option<f64>,
    /// Image noise standard deviation. Estimated from the image when unset.
    pub sigma_b: Option<f64>,
    pub detect: DetectParams,
    pub observe: ObserveParams,
    pub closed: bool,
    /// Trace the largest edge component instead of failing on several.
    pub permissive: bool,
    pub fit: FitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kernel_sigma: 1.0,
            detect_sigma: None,
            sigma_b: None,
            detect: DetectParams {
                rel_threshold: 0.2,
                noise_factor: 3.0,
                low_ratio: 1.0,
            },
            observe: ObserveParams::default(),
            closed: true,
            permissive: true,
            fit: FitConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn resolve_detect_sigma(&self) -> f64 {
        self.detect_sigma.unwrap_or(3.0 * self.kernel_sigma)
    }
}

/// Noise standard deviation from the image Laplacian difference
/// (Immerkær's estimator).
pub fn estimate_noise_sigma(img: &GrayImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut acc = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut s = 0.0;
            for (dr, row) in MASK.iter().enumerate() {
                for (dc, k) in row.iter().enumerate() {
                    s += k * img.get(c + dc - 1, r + dr - 1);
                }
            }
            acc += s.abs();
        }
    }
    (std::f64::consts::PI / 2.0).sqrt() * acc / (6.0 * ((w - 2) * (h - 2)) as f64)
}

/// Observations extracted from one image, with the parameters used.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub observations: ObservationSet,
    pub sigma_b: f64,
    pub detect_sigma: f64,
    pub edge_pixels: usize,
}

pub fn extract_observations(img: &GrayImage, cfg: &PipelineConfig) -> Result<Extraction> {
    let sigma_b = cfg.sigma_b.unwrap_or_else(|| estimate_noise_sigma(img));
    let kernels = gaussian_derivative_kernels(cfg.kernel_sigma)?;
    let field = compute_gradient(img, &kernels, sigma_b)?;
    let detect_sigma = cfg.resolve_detect_sigma();
    let pixels = if detect_sigma == cfg.kernel_sigma {
        detect_edges(&field, &cfg.detect)?
    } else {
        let dk = gaussian_derivative_kernels(detect_sigma)?;
        let dfield = compute_gradient(img, &dk, sigma_b)?;
        detect_edges(&dfield, &cfg.detect)?
    };
    let ordered = trace_contour(&pixels, cfg.closed, cfg.permissive)?;
    let observations = build_observations(&field, &ordered, cfg.closed, &cfg.observe)?;
    Ok(Extraction {
        observations,
        sigma_b,
        detect_sigma,
        edge_pixels: pixels.len(),
    })
}

/// Knot vector for a fit of `obs` under `cfg`.
pub fn knots_for(obs: &ObservationSet, cfg: &FitConfig) -> Result<KnotVector> {
    KnotVector::uniform(cfg.resolve_num_ctrl(obs.len()), cfg.degree, obs.is_closed())
}

/// Fits one method to already extracted observations.
pub fn fit_observations(
    obs: &ObservationSet,
    cfg: &FitConfig,
    method: Method,
) -> Result<(ContourModel, FitReport)> {
    let kv = knots_for(obs, cfg)?;
    match method {
        Method::Stochastic => fit_stochastic_with_knots(obs, &kv, cfg),
        Method::Classical => fit_classical(obs, &kv),
    }
}

/// Full pipeline on one image.
pub fn fit_image(
    img: &GrayImage,
    cfg: &PipelineConfig,
    method: Method,
) -> Result<(ContourModel, FitReport, Extraction)> {
    let ex = extract_observations(img, cfg)?;
    let (model, report) = fit_observations(&ex.observations, &cfg.fit, method)?;
    Ok((model, report, ex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::{NoiseSpec, SquareSpec};

    #[test]
    fn method_round_trips_through_strings() {
        for m in [Method::Stochastic, Method::Classical] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.as_str())
            );
        }
        assert!("csi".parse::<Method>().is_err());
    }

    #[test]
    fn noise_estimate_tracks_the_true_level() {
        let (clean, _) = SquareSpec::default().render().unwrap();
        assert!(estimate_noise_sigma(&clean) < 0.01);
        for sigma in [0.05, 0.2] {
            let img = NoiseSpec::Gaussian { sigma }.apply(&clean, 5).unwrap();
            let est = estimate_noise_sigma(&img);
            assert!((est / sigma - 1.0).abs() < 0.1, "{sigma}: {est}");
        }
    }

    #[test]
    fn detection_scale_defaults_to_three_kernels() {
        let mut cfg = PipelineConfig {
            kernel_sigma: 1.5,
            ..Default::default()
        };
        assert_eq!(cfg.resolve_detect_sigma(), 4.5);
        cfg.detect_sigma = Some(2.0);
        assert_eq!(cfg.resolve_detect_sigma(), 2.0);
    }

    #[test]
    fn both_methods_share_the_extraction() {
        let (img, _) = SquareSpec::default().render().unwrap();
        let cfg = PipelineConfig::default();
        let ex = extract_observations(&img, &cfg).unwrap();
        assert_eq!(ex.detect_sigma, 3.0);
        assert!(ex.observations.is_closed());
        for method in [Method::Stochastic, Method::Classical] {
            let (model, _, again) = fit_image(&img, &cfg, method).unwrap();
            assert_eq!(again.observations.len(), ex.observations.len());
            assert_eq!(
                model.num_ctrl(),
                (ex.observations.len() as f64 / 4.0).round() as usize
            );
        }
    }
}
