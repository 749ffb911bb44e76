//! Maximum-likelihood B-spline contour fitting.
//!
//! The energy `E(theta) = (d - B theta)^T W (d - B theta)` stacks three row
//! blocks over the `M` observations:
//!
//! * rows `0..M`: x positions, `B_j(t_i)` in the x columns, weight `1 / sigma_X^2`;
//! * rows `M..2M`: y positions, same basis in the y columns and same weight;
//! * rows `2M..3M`: the orientation constraint `H_i . T_i(theta) = 0`, with
//!   `H_xi dB_j/dt` in the x columns and `H_yi dB_j/dt` in the y columns,
//!   target 0 and weight `1 / (|T_i|^2 sigma_H^2)`.
//!
//! `|T_i|` depends on the solution, so the fit is repeated with the tangent
//! norms taken from the previous iterate (chord lengths of the observation
//! polygon on the first pass).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{design_matrix, ContourModel, KnotVector, DEFAULT_DEGREE};
use crate::edges::ObservationSet;
use crate::error::{Error, Result};

/// Relative pivot spread beyond which the normal equations are flagged.
const CONDITION_WARN: f64 = 1e12;
/// Relative pivot spread treated as exactly singular when no ridge is used.
const CONDITION_SINGULAR: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub degree: usize,
    /// Explicit control-point count. When unset, `round(M * ctrl_ratio)`.
    pub num_ctrl: Option<usize>,
    pub ctrl_ratio: f64,
    /// Gradient prior scale. When unset, `10 sigma_H sqrt(kernel taps)`.
    pub prior_scale: Option<f64>,
    /// Number of kernel taps used for the default prior scale.
    pub kernel_taps: usize,
    pub max_iters: usize,
    /// Tikhonov weight. When unset, `1e-8 trace(B^T W B) / 2N`.
    pub ridge: Option<f64>,
    /// Multiplier on the orientation weights; 0 gives the position-only fit.
    /// Neighboring position errors share kernel support and are strongly
    /// correlated, which the independent-row weights understate, so the
    /// default leans on the orientation rows more than 1 would.
    pub orientation_scale: f64,
    /// Lower bound on the gradient direction standard deviation, radians.
    pub angle_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degree: DEFAULT_DEGREE,
            num_ctrl: None,
            ctrl_ratio: 0.25,
            prior_scale: None,
            kernel_taps: 49,
            max_iters: 3,
            ridge: None,
            orientation_scale: 8.0,
            angle_floor: 0.05,
        }
    }
}

impl FitConfig {
    /// Control-point count for `m` observations.
    pub fn resolve_num_ctrl(&self, m: usize) -> usize {
        self.num_ctrl
            .unwrap_or_else(|| (m as f64 * self.ctrl_ratio).round() as usize)
            .max(self.degree + 1)
    }

    pub fn resolve_prior_scale(&self, sigma_h: f64) -> f64 {
        self.prior_scale
            .unwrap_or(10.0 * sigma_h * (self.kernel_taps as f64).sqrt())
    }
}

/// The stacked weighted least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsSystem {
    pub d: DVector<f64>,
    pub w: DVector<f64>,
    pub b: DMatrix<f64>,
}

impl WlsSystem {
    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.b.ncols()
    }

    /// Weighted normal matrix `B^T W B`.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let mut wb = self.b.clone();
        for (mut row, w) in wb.row_iter_mut().zip(self.w.iter()) {
            row *= *w;
        }
        self.b.tr_mul(&wb)
    }

    /// `B^T W d`.
    pub fn normal_rhs(&self) -> DVector<f64> {
        self.b.tr_mul(&self.d.component_mul(&self.w))
    }

    /// `1e-8 trace(B^T W B) / 2N`.
    pub fn default_ridge(&self) -> f64 {
        let trace: f64 = self
            .b
            .row_iter()
            .zip(self.w.iter())
            .map(|(row, w)| w * row.norm_squared())
            .sum();
        1e-8 * trace / self.unknowns() as f64
    }
}

/// Per-iteration summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub energy_trace: Vec<f64>,
    pub residual_rms: f64,
    pub iterations_used: usize,
    pub condition_warning: bool,
}

/// Central-difference tangent estimates of the observation polygon, in
/// pixels per unit parameter.
fn chord_tangent_norms(obs: &ObservationSet) -> Vec<f64> {
    let o = obs.observations();
    let m = o.len();
    let closed = obs.is_closed();
    (0..m)
        .map(|i| {
            let (a, b) = if closed {
                ((i + m - 1) % m, (i + 1) % m)
            } else {
                (i.saturating_sub(1), (i + 1).min(m - 1))
            };
            let dt = if closed {
                let raw = o[b].t - o[a].t;
                if raw <= 0.0 {
                    raw + 1.0
                } else {
                    raw
                }
            } else {
                o[b].t - o[a].t
            };
            (o[b].x_o - o[a].x_o).hypot(o[b].y_o - o[a].y_o) / dt
        })
        .collect()
}

/// Builds the `3M x 2N` system. `theta_prev` supplies the tangent norms
/// for the orientation weights; without it chord lengths are used.
pub fn assemble_system(
    obs: &ObservationSet,
    kv: &KnotVector,
    theta_prev: Option<&ContourModel>,
    cfg: &FitConfig,
) -> Result<WlsSystem> {
    let m = obs.len();
    let n = kv.num_basis();
    if m < 2 * n {
        return Err(Error::Underdetermined {
            observations: m,
            unknowns: 2 * n,
        });
    }
    let params = obs.params();
    let basis = design_matrix(kv, &params, false)?;
    let dbasis = design_matrix(kv, &params, true)?;

    let chord = chord_tangent_norms(obs);
    let sigma_h2 = obs.sigma_h * obs.sigma_h;
    let floor2 = cfg.angle_floor * cfg.angle_floor;

    let mut b = DMatrix::zeros(3 * m, 2 * n);
    let mut d = DVector::zeros(3 * m);
    let mut w = DVector::zeros(3 * m);
    for (i, o) in obs.observations().iter().enumerate() {
        let pos_w = 1.0 / o.sigma_x2;
        for j in 0..n {
            let v = basis[(i, j)];
            b[(i, j)] = v;
            b[(m + i, n + j)] = v;
            let dv = dbasis[(i, j)];
            b[(2 * m + i, j)] = o.g_x * dv;
            b[(2 * m + i, n + j)] = o.g_y * dv;
        }
        d[i] = o.x_o;
        d[m + i] = o.y_o;
        w[i] = pos_w;
        w[m + i] = pos_w;

        let t_norm = match theta_prev {
            Some(model) => {
                let t = model.eval_tangent(o.t)?;
                let norm = t[0].hypot(t[1]);
                if norm > 0.0 {
                    norm
                } else {
                    chord[i]
                }
            }
            None => chord[i],
        };
        // direction noise variance sigma_H^2 / |H|^2, floored
        let g2 = o.g_x * o.g_x + o.g_y * o.g_y;
        let denom = t_norm * t_norm * (sigma_h2 + g2 * floor2);
        w[2 * m + i] = if denom > 0.0 {
            cfg.orientation_scale / denom
        } else {
            0.0
        };
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("non-finite observation weights"));
    }
    Ok(WlsSystem { d, w, b })
}

/// Minimizes `(d - B theta)^T W (d - B theta) + ridge |theta|^2` by a
/// Cholesky factorization of the weighted normal equations. Returns the
/// solution and whether the system is poorly conditioned.
pub fn solve_wls(sys: &WlsSystem, ridge: f64) -> Result<(DVector<f64>, bool)> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    if sys.b.iter().any(|v| !v.is_finite()) || sys.w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(
            "system has non-finite entries or negative weights",
        ));
    }
    let mut a = sys.normal_matrix();
    let rhs = sys.normal_rhs();
    let dim = a.nrows();
    for k in 0..dim {
        a[(k, k)] += ridge;
    }
    // Jacobi scaling so the pivot spread measures conditioning rather than units
    let scale: Vec<f64> = (0..dim)
        .map(|k| {
            let v = a[(k, k)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    if (0..dim).any(|k| a[(k, k)] <= 0.0) {
        return Err(Error::SingularSystem);
    }
    let scaled = DMatrix::from_fn(dim, dim, |r, c| a[(r, c)] * scale[r] * scale[c]);
    let chol = scaled.cholesky().ok_or(Error::SingularSystem)?;
    let diag = chol.l_dirty().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    let spread = (dmax / dmin).powi(2);
    if ridge == 0.0 && !(spread < CONDITION_SINGULAR) {
        return Err(Error::SingularSystem);
    }
    let scaled_rhs = DVector::from_fn(dim, |k, _| rhs[k] * scale[k]);
    let y = chol.solve(&scaled_rhs);
    let theta = DVector::from_fn(dim, |k, _| y[k] * scale[k]);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok((theta, !(spread < CONDITION_WARN)))
}

/// `E(theta) = (d - B theta)^T W (d - B theta)`.
pub fn energy(theta: &DVector<f64>, sys: &WlsSystem) -> f64 {
    let r = &sys.d - &sys.b * theta;
    r.iter().zip(sys.w.iter()).map(|(r, w)| w * r * r).sum()
}

fn residual_rms(model: &ContourModel, points: &[[f64; 2]], params: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (p, &t) in points.iter().zip(params) {
        let q = model.eval_curve(t)?;
        acc += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
    }
    Ok((acc / points.len() as f64).sqrt())
}

/// Maximum-likelihood fit: weighted positions plus orientation rows,
/// reweighted `max_iters` times.
pub fn fit_stochastic(obs: &ObservationSet, cfg: &FitConfig) -> Result<(ContourModel, FitReport)> {
    let n = cfg.resolve_num_ctrl(obs.len());
    let kv = KnotVector::uniform(n, cfg.degree, obs.is_closed())?;
    fit_stochastic_with_knots(obs, &kv, cfg)
}

pub fn fit_stochastic_with_knots(
    obs: &ObservationSet,
    kv: &KnotVector,
    cfg: &FitConfig,
) -> Result<(ContourModel, FitReport)> {
    if obs.len() < 4 * (cfg.degree + 1) {
        return Err(Error::Underdetermined {
            observations: obs.len(),
            unknowns: 2 * kv.num_basis(),
        });
    }
    let prior = cfg.resolve_prior_scale(obs.sigma_h);
    if prior < 10.0 * obs.sigma_h {
        log::warn!(
            "gradient prior scale {prior} is not much larger than sigma_H {}",
            obs.sigma_h
        );
    }
    let iters = cfg.max_iters.max(1);
    let mut prev: Option<ContourModel> = None;
    let mut trace = Vec::with_capacity(iters);
    let mut warn = false;
    for _ in 0..iters {
        let sys = assemble_system(obs, kv, prev.as_ref(), cfg)?;
        let ridge = cfg.ridge.unwrap_or_else(|| sys.default_ridge());
        let (theta, w) = solve_wls(&sys, ridge)?;
        warn |= w;
        trace.push(energy(&theta, &sys));
        prev = Some(ContourModel::from_stacked(kv.clone(), theta.as_slice())?);
    }
    let model = prev.expect("at least one iteration");
    let points: Vec<[f64; 2]> = obs.observations().iter().map(|o| [o.x_o, o.y_o]).collect();
    let report = FitReport {
        residual_rms: residual_rms(&model, &points, &obs.params())?,
        energy_trace: trace,
        iterations_used: iters,
        condition_warning: warn,
    };
    Ok((model, report))
}

/// Unweighted least-squares fit to the integer-pixel centers, the
/// classical spline baseline.
pub fn fit_classical(obs: &ObservationSet, kv: &KnotVector) -> Result<(ContourModel, FitReport)> {
    let m = obs.len();
    let n = kv.num_basis();
    if m < n {
        return Err(Error::Underdetermined {
            observations: m,
            unknowns: n,
        });
    }
    let params = obs.params();
    let basis = design_matrix(kv, &params, false)?;
    let mut b = DMatrix::zeros(2 * m, 2 * n);
    b.view_mut((0, 0), (m, n)).copy_from(&basis);
    b.view_mut((m, n), (m, n)).copy_from(&basis);
    let points: Vec<[f64; 2]> = obs
        .observations()
        .iter()
        .map(|o| o.pixel_center())
        .collect();
    let d = DVector::from_iterator(
        2 * m,
        points
            .iter()
            .map(|p| p[0])
            .chain(points.iter().map(|p| p[1])),
    );
    let sys = WlsSystem {
        d,
        w: DVector::from_element(2 * m, 1.0),
        b,
    };
    let ridge = sys.default_ridge();
    let (theta, warn) = solve_wls(&sys, ridge)?;
    let model = ContourModel::from_stacked(kv.clone(), theta.as_slice())?;
    let report = FitReport {
        energy_trace: vec![energy(&theta, &sys)],
        residual_rms: residual_rms(&model, &points, &params)?,
        iterations_used: 1,
        condition_warning: warn,
    };
    Ok((model, report))
}

/// Gradient log-likelihood terms per observation, without normalization
/// constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationLogLik {
    /// Magnitude term.
    pub magnitude: f64,
    /// Direction term, the part that depends on the curve.
    pub direction: f64,
}

/// Exact gradient log-likelihood for prior scale `prior` (no large-prior
/// approximation). Diagnostic only; the fit uses the approximate form.
pub fn orientation_loglik_exact(
    h: [f64; 2],
    tangent: [f64; 2],
    sigma_h: f64,
    prior: f64,
) -> OrientationLogLik {
    let s2 = sigma_h * sigma_h;
    let p2 = prior * prior;
    let r = tangent[0].hypot(tangent[1]);
    let dot = (h[0] * tangent[0] + h[1] * tangent[1]) / r;
    OrientationLogLik {
        magnitude: -(h[0] * h[0] + h[1] * h[1]) / (2.0 * s2 + p2),
        direction: -(dot * dot) * p2 / (2.0 * s2 * (2.0 * s2 + p2)),
    }
}

/// Large-prior approximation used by the fit.
pub fn orientation_loglik_approx(
    h: [f64; 2],
    tangent: [f64; 2],
    sigma_h: f64,
    prior: f64,
) -> OrientationLogLik {
    let r = tangent[0].hypot(tangent[1]);
    let dot = (h[0] * tangent[0] + h[1] * tangent[1]) / r;
    OrientationLogLik {
        magnitude: -(h[0] * h[0] + h[1] * h[1]) / (prior * prior),
        direction: -(dot * dot) / (2.0 * sigma_h * sigma_h),
    }
}
