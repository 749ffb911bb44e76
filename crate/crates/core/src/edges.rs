//! Gradient fields, edge pixel detection, contour ordering and sub-pixel
//! edge observations.

use std::collections::{HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Lower bound on the position standard deviation, in pixels.
pub const SIGMA_X_FLOOR: f64 = 0.05;

/// Derivative-of-Gaussian convolution masks, stored row-major with side
/// `2 * radius + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeKernels {
    pub k_x: Vec<f64>,
    pub k_y: Vec<f64>,
    pub radius: usize,
    pub sigma: f64,
}

impl DerivativeKernels {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Sum of squared taps; identical for both masks.
    pub fn energy(&self) -> f64 {
        self.k_x.iter().map(|v| v * v).sum()
    }
}

pub fn gaussian_derivative_kernels(sigma: f64) -> Result<DerivativeKernels> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let side = 2 * radius + 1;
    let s2 = sigma * sigma;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s2);
    let mut k_x = Vec::with_capacity(side * side);
    for r in 0..side {
        let y = r as f64 - radius as f64;
        for c in 0..side {
            let x = c as f64 - radius as f64;
            let g = norm * (-(x * x + y * y) / (2.0 * s2)).exp();
            k_x.push(-x / s2 * g);
        }
    }
    let mean = k_x.iter().sum::<f64>() / k_x.len() as f64;
    k_x.iter_mut().for_each(|v| *v -= mean);
    let mut k_y = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            k_y[c * side + r] = k_x[r * side + c];
        }
    }
    Ok(DerivativeKernels {
        k_x,
        k_y,
        radius,
        sigma,
    })
}

/// Standard deviation of each gradient component under white noise of
/// standard deviation `sigma_b`.
pub fn sigma_h_from_kernel(sigma_b: f64, k: &DerivativeKernels) -> f64 {
    sigma_b * k.energy().sqrt()
}

/// Per-pixel image gradient and the noise scale it inherits from the image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    pub h_x: Vec<f64>,
    pub h_y: Vec<f64>,
    pub sigma_h: f64,
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    // half-sample symmetric: ... b a | a b c ... c | c b ...
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= n {
        i = 2 * n - i - 1;
    }
    i as usize
}

pub fn compute_gradient(
    img: &GrayImage,
    k: &DerivativeKernels,
    sigma_b: f64,
) -> Result<GradientField> {
    let (w, h) = (img.width(), img.height());
    let side = k.side();
    if w < side || h < side {
        return Err(Error::invalid(format!(
            "{w}x{h} image is smaller than the {side}x{side} kernel"
        )));
    }
    let rad = k.radius as isize;
    let data = img.data();
    let mut h_x = vec![0.0; w * h];
    let mut h_y = vec![0.0; w * h];
    h_x.par_chunks_mut(w)
        .zip(h_y.par_chunks_mut(w))
        .enumerate()
        .for_each(|(r, (row_x, row_y))| {
            for c in 0..w {
                let (mut sx, mut sy) = (0.0, 0.0);
                // true convolution: out(p) = sum_q img(p - q) k(q)
                for kr in 0..side {
                    let src_r = mirror(r as isize - (kr as isize - rad), h);
                    let src_row = &data[src_r * w..(src_r + 1) * w];
                    for kc in 0..side {
                        let src_c = mirror(c as isize - (kc as isize - rad), w);
                        let v = src_row[src_c];
                        sx += v * k.k_x[kr * side + kc];
                        sy += v * k.k_y[kr * side + kc];
                    }
                }
                row_x[c] = sx;
                row_y[c] = sy;
            }
        });
    Ok(GradientField {
        width: w,
        height: h,
        h_x,
        h_y,
        sigma_h: sigma_h_from_kernel(sigma_b, k),
    })
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, c: usize, r: usize) -> [f64; 2] {
        let i = r * self.width + c;
        [self.h_x[i], self.h_y[i]]
    }

    #[inline]
    pub fn magnitude(&self, c: usize, r: usize) -> f64 {
        let [gx, gy] = self.at(c, r);
        gx.hypot(gy)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.h_x
            .iter()
            .zip(&self.h_y)
            .map(|(x, y)| x.hypot(*y))
            .collect()
    }

    /// Bilinear interpolation of the gradient magnitude at a continuous
    /// position, clamped to the pixel-center lattice.
    pub fn magnitude_at(&self, x: f64, y: f64) -> f64 {
        let u = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (fx, fy) = (u - c0 as f64, v - r0 as f64);
        let top = self.magnitude(c0, r0) * (1.0 - fx) + self.magnitude(c1, r0) * fx;
        let bottom = self.magnitude(c0, r1) * (1.0 - fx) + self.magnitude(c1, r1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Thresholds for [`detect_edges`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    /// Fraction of the maximum gradient magnitude.
    pub rel_threshold: f64,
    /// Multiple of the field's `sigma_h` acting as an absolute floor.
    pub noise_factor: f64,
    /// Hysteresis: maxima above this fraction of the threshold are kept
    /// when 8-connected to a maximum above the threshold. 1 disables it.
    #[serde(default = "one")]
    pub low_ratio: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            rel_threshold: 0.2,
            noise_factor: 0.0,
            low_ratio: 1.0,
        }
    }
}

/// Non-maximum suppression along the gradient direction quantized to
/// 0/45/90/135 degrees, keeping pixels above `mag_threshold` times the
/// maximum magnitude. Ties along the gradient keep the lower-index pixel.
pub fn detect_edge_pixels(
    field: &GradientField,
    mag_threshold: f64,
) -> Result<Vec<(usize, usize)>> {
    detect_edges(
        field,
        &DetectParams {
            rel_threshold: mag_threshold,
            noise_factor: 0.0,
            low_ratio: 1.0,
        },
    )
}

pub fn detect_edges(field: &GradientField, params: &DetectParams) -> Result<Vec<(usize, usize)>> {
    if !(params.rel_threshold > 0.0 && params.rel_threshold < 1.0) {
        return Err(Error::invalid(format!(
            "relative threshold must lie in (0, 1), got {}",
            params.rel_threshold
        )));
    }
    let (w, h) = (field.width, field.height);
    let mag = field.magnitudes();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let thr = (params.rel_threshold * max).max(params.noise_factor * field.sigma_h);
    if !(params.low_ratio > 0.0 && params.low_ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "hysteresis ratio must lie in (0, 1], got {}",
            params.low_ratio
        )));
    }
    let low = thr * params.low_ratio;
    // 0: not a maximum, 1: weak maximum, 2: strong maximum
    let mut class = vec![0u8; w * h];
    let mut stack = Vec::new();
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let m = mag[r * w + c];
            if m <= low {
                continue;
            }
            let [gx, gy] = field.at(c, r);
            let (dc, dr) = quantize_direction(gx, gy);
            let fwd = mag[(r as isize + dr) as usize * w + (c as isize + dc) as usize];
            let back = mag[(r as isize - dr) as usize * w + (c as isize - dc) as usize];
            if m > back && m >= fwd {
                if m > thr {
                    class[r * w + c] = 2;
                    stack.push((c, r));
                } else {
                    class[r * w + c] = 1;
                }
            }
        }
    }
    while let Some((c, r)) = stack.pop() {
        for (dc, dr) in MOORE {
            let (qc, qr) = ((c as isize + dc) as usize, (r as isize + dr) as usize);
            if qc < w && qr < h && class[qr * w + qc] == 1 {
                class[qr * w + qc] = 2;
                stack.push((qc, qr));
            }
        }
    }
    let out: Vec<_> = (0..w * h)
        .filter(|&i| class[i] == 2)
        .map(|i| (i % w, i / w))
        .collect();
    if out.is_empty() {
        return Err(Error::NoEdges);
    }
    Ok(out)
}

fn quantize_direction(gx: f64, gy: f64) -> (isize, isize) {
    let mut a = gy.atan2(gx).to_degrees();
    if a < 0.0 {
        a += 180.0;
    }
    match ((a + 22.5) / 45.0).floor() as i32 % 4 {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        _ => (-1, 1),
    }
}

// Moore neighborhood, clockwise in image coordinates starting at west.
const MOORE: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// Binary mask over the bounding box of a pixel set, padded by one pixel.
struct Mask {
    x0: isize,
    y0: isize,
    w: usize,
    h: usize,
    bits: Vec<bool>,
}

impl Mask {
    fn new(pixels: &[(usize, usize)]) -> Self {
        let x0 = pixels.iter().map(|p| p.0).min().unwrap() as isize - 1;
        let y0 = pixels.iter().map(|p| p.1).min().unwrap() as isize - 1;
        let x1 = pixels.iter().map(|p| p.0).max().unwrap() as isize + 1;
        let y1 = pixels.iter().map(|p| p.1).max().unwrap() as isize + 1;
        let w = (x1 - x0 + 1) as usize;
        let h = (y1 - y0 + 1) as usize;
        let mut mask = Mask {
            x0,
            y0,
            w,
            h,
            bits: vec![false; w * h],
        };
        for &(c, r) in pixels {
            mask.set(c as isize, r as isize, true);
        }
        mask
    }

    fn idx(&self, c: isize, r: isize) -> Option<usize> {
        let (u, v) = (c - self.x0, r - self.y0);
        (u >= 0 && v >= 0 && (u as usize) < self.w && (v as usize) < self.h)
            .then(|| v as usize * self.w + u as usize)
    }

    fn get(&self, c: isize, r: isize) -> bool {
        self.idx(c, r).is_some_and(|i| self.bits[i])
    }

    fn set(&mut self, c: isize, r: isize, v: bool) {
        if let Some(i) = self.idx(c, r) {
            self.bits[i] = v;
        }
    }

    fn degree(&self, c: isize, r: isize) -> usize {
        MOORE
            .iter()
            .filter(|(dc, dr)| self.get(c + dc, r + dr))
            .count()
    }
}

/// 8-connected components, largest first; ties broken by raster order of
/// their first pixel.
fn components(pixels: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let mask = Mask::new(pixels);
    let mut seen = vec![false; mask.bits.len()];
    let mut sorted = pixels.to_vec();
    sorted.sort_by_key(|&(c, r)| (r, c));
    let mut comps = Vec::new();
    for &(c, r) in &sorted {
        let i = mask.idx(c as isize, r as isize).unwrap();
        if seen[i] {
            continue;
        }
        seen[i] = true;
        let mut comp = vec![(c, r)];
        let mut queue = VecDeque::from([(c as isize, r as isize)]);
        while let Some((pc, pr)) = queue.pop_front() {
            for (dc, dr) in MOORE {
                let (qc, qr) = (pc + dc, pr + dr);
                if mask.get(qc, qr) {
                    let j = mask.idx(qc, qr).unwrap();
                    if !seen[j] {
                        seen[j] = true;
                        comp.push((qc as usize, qr as usize));
                        queue.push_back((qc, qr));
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    comps
}

/// Repeatedly removes pixels with at most one neighbor, leaving only the
/// cyclic core of the set.
fn prune_spurs(pixels: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut mask = Mask::new(pixels);
    let mut queue: VecDeque<(isize, isize)> = pixels
        .iter()
        .map(|&(c, r)| (c as isize, r as isize))
        .filter(|&(c, r)| mask.degree(c, r) <= 1)
        .collect();
    while let Some((c, r)) = queue.pop_front() {
        if !mask.get(c, r) || mask.degree(c, r) > 1 {
            continue;
        }
        mask.set(c, r, false);
        for (dc, dr) in MOORE {
            if mask.get(c + dc, r + dr) && mask.degree(c + dc, r + dr) <= 1 {
                queue.push_back((c + dc, r + dr));
            }
        }
    }
    pixels
        .iter()
        .copied()
        .filter(|&(c, r)| mask.get(c as isize, r as isize))
        .collect()
}

/// Moore-neighbor boundary walk from `start`, entering with the background
/// neighbor in direction `back_dir`. Stops when a walker state repeats.
fn moore_walk(mask: &Mask, start: (isize, isize), back_dir: usize) -> Vec<(isize, isize)> {
    let mut path = vec![start];
    let mut cur = start;
    let mut back = (start.0 + MOORE[back_dir].0, start.1 + MOORE[back_dir].1);
    let mut states = HashSet::new();
    loop {
        let db = MOORE
            .iter()
            .position(|&(dc, dr)| (cur.0 + dc, cur.1 + dr) == back)
            .expect("backtrack pixel is a neighbor");
        if !states.insert((cur, db)) {
            break;
        }
        let mut next = None;
        for k in 1..=8 {
            let d = (db + k) % 8;
            let q = (cur.0 + MOORE[d].0, cur.1 + MOORE[d].1);
            if mask.get(q.0, q.1) {
                let pd = (db + k - 1) % 8;
                next = Some((q, (cur.0 + MOORE[pd].0, cur.1 + MOORE[pd].1)));
                break;
            }
        }
        let Some((q, b)) = next else { break };
        cur = q;
        back = b;
        path.push(cur);
    }
    path
}

/// Orders an 8-connected pixel set into a chain (open) or a ring (closed)
/// by Moore-neighbor tracing. Several components are an error unless
/// `permissive` is set, in which case the largest one is traced. Closed
/// traces first strip spurs so only the cyclic core is walked.
pub fn trace_contour(
    pixels: &[(usize, usize)],
    closed: bool,
    permissive: bool,
) -> Result<Vec<(usize, usize)>> {
    if pixels.is_empty() {
        return Err(Error::NoEdges);
    }
    let comps = components(pixels);
    if comps.len() > 1 && !permissive {
        return Err(Error::AmbiguousTopology(format!(
            "{} edge components found",
            comps.len()
        )));
    }
    let mut comp = comps.into_iter().next().unwrap();
    if closed {
        comp = prune_spurs(&comp);
        if comp.is_empty() {
            return Err(Error::AmbiguousTopology(
                "edge pixels contain no closed loop".into(),
            ));
        }
    }
    comp.sort_by_key(|&(c, r)| (r, c));
    let mask = Mask::new(&comp);

    let walk = if closed {
        let (c, r) = comp[0];
        // raster-first pixel: its west neighbor is background
        moore_walk(&mask, (c as isize, r as isize), 0)
    } else {
        let start = comp
            .iter()
            .copied()
            .find(|&(c, r)| mask.degree(c as isize, r as isize) <= 1)
            .unwrap_or(comp[0]);
        let s = (start.0 as isize, start.1 as isize);
        let back_dir = (0..8)
            .find(|&d| !mask.get(s.0 + MOORE[d].0, s.1 + MOORE[d].1))
            .unwrap_or(0);
        let full = moore_walk(&mask, s, back_dir);
        // cut at the next chain end
        let end = full
            .iter()
            .skip(1)
            .position(|&(c, r)| mask.degree(c, r) <= 1 && (c, r) != s);
        match end {
            Some(e) => full[..=e + 1].to_vec(),
            None => full,
        }
    };

    let mut seen = HashSet::new();
    Ok(walk
        .into_iter()
        .filter(|p| seen.insert(*p))
        .map(|(c, r)| (c as usize, r as usize))
        .collect())
}

/// Vertex of the parabola through `(-1, g_minus)`, `(0, g_0)`, `(1, g_plus)`,
/// clamped to half a pixel.
pub fn subpixel_offset(g_minus: f64, g_0: f64, g_plus: f64) -> Result<f64> {
    if g_0 < g_minus.max(g_plus) {
        return Err(Error::NotAMaximum {
            g_minus,
            g_0,
            g_plus,
        });
    }
    let denom = g_minus - 2.0 * g_0 + g_plus;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(((g_minus - g_plus) / (2.0 * denom)).clamp(-0.5, 0.5))
}

/// First-order position variance `sigma_H^2 / |H|^2` plus the floor.
pub fn estimate_sigma_x2(grad_mag: f64, sigma_b: f64, k: &DerivativeKernels) -> Result<f64> {
    sigma_x2(grad_mag, sigma_h_from_kernel(sigma_b, k))
}

fn sigma_x2(grad_mag: f64, sigma_h: f64) -> Result<f64> {
    if !(grad_mag > 0.0) {
        return Err(Error::invalid("gradient magnitude must be positive"));
    }
    Ok((sigma_h / grad_mag).powi(2) + SIGMA_X_FLOOR * SIGMA_X_FLOOR)
}

/// One sub-pixel edge sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeObservation {
    /// Refined position, pixels.
    pub x_o: f64,
    pub y_o: f64,
    /// Gradient at the source pixel.
    pub g_x: f64,
    pub g_y: f64,
    /// Position variance along the gradient, pixels squared.
    pub sigma_x2: f64,
    pub t: f64,
    /// Source pixel (column, row); its center is the integer-pixel estimate.
    pub pixel: (usize, usize),
}

impl EdgeObservation {
    pub fn pixel_center(&self) -> [f64; 2] {
        [self.pixel.0 as f64 + 0.5, self.pixel.1 as f64 + 0.5]
    }

    pub fn grad_norm(&self) -> f64 {
        self.g_x.hypot(self.g_y)
    }
}

/// Ordered observations with uniform parameters: `t(i) = i / M` for closed
/// contours and `i / (M - 1)` for open ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    observations: Vec<EdgeObservation>,
    closed: bool,
    /// Pixels dropped for having a zero gradient.
    pub skipped: usize,
    /// Gradient noise scale the variances were computed with.
    pub sigma_h: f64,
}

impl ObservationSet {
    /// Wraps ordered observations and assigns their parameters.
    pub fn new(mut observations: Vec<EdgeObservation>, closed: bool, sigma_h: f64) -> Result<Self> {
        let m = observations.len();
        if m < 2 {
            return Err(Error::invalid(
                "an observation set needs at least two samples",
            ));
        }
        if observations
            .iter()
            .any(|o| !(o.sigma_x2 > 0.0) || o.grad_norm() == 0.0)
        {
            return Err(Error::invalid(
                "observations need positive variance and a nonzero gradient",
            ));
        }
        let denom = if closed { m } else { m - 1 } as f64;
        for (i, o) in observations.iter_mut().enumerate() {
            o.t = i as f64 / denom;
        }
        Ok(Self {
            observations,
            closed,
            skipped: 0,
            sigma_h,
        })
    }

    pub fn observations(&self) -> &[EdgeObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn params(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.t).collect()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.x_o += dx;
            o.y_o += dy;
        }
        out
    }
}

/// Refinement options for [`build_observations`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserveParams {
    /// Maximum one-pixel moves along the gradient towards a magnitude
    /// maximum before refining. Zero trusts the input pixels as maxima.
    pub snap_steps: usize,
}

impl Default for ObserveParams {
    fn default() -> Self {
        Self { snap_steps: 2 }
    }
}

/// Refines each ordered pixel to a sub-pixel edge position along its
/// gradient and attaches the gradient and position variance.
pub fn build_observations(
    field: &GradientField,
    ordered: &[(usize, usize)],
    closed: bool,
    params: &ObserveParams,
) -> Result<ObservationSet> {
    if ordered.is_empty() {
        return Err(Error::NoEdges);
    }
    let mut obs = Vec::with_capacity(ordered.len());
    let mut skipped = 0;
    for &px in ordered {
        match observe_pixel(field, px, params.snap_steps)? {
            Some(o) => obs.push(o),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} edge pixels with zero gradient skipped");
    }
    let mut set = ObservationSet::new(obs, closed, field.sigma_h)?;
    set.skipped = skipped;
    Ok(set)
}

fn observe_pixel(
    field: &GradientField,
    mut px: (usize, usize),
    snap_steps: usize,
) -> Result<Option<EdgeObservation>> {
    let (w, h) = (field.width as isize, field.height as isize);
    let mut steps = 0;
    loop {
        let [gx, gy] = field.at(px.0, px.1);
        let norm = gx.hypot(gy);
        if norm == 0.0 {
            return Ok(None);
        }
        let (ux, uy) = (gx / norm, gy / norm);
        let (cx, cy) = (px.0 as f64 + 0.5, px.1 as f64 + 0.5);
        let g_minus = field.magnitude_at(cx - ux, cy - uy);
        let g_plus = field.magnitude_at(cx + ux, cy + uy);
        let g_0 = norm;

        if g_0 < g_minus.max(g_plus) && steps < snap_steps {
            let s = if g_plus > g_minus { 1.0 } else { -1.0 };
            let nc = (cx + s * ux).floor() as isize;
            let nr = (cy + s * uy).floor() as isize;
            if nc >= 0 && nr >= 0 && nc < w && nr < h && (nc as usize, nr as usize) != px {
                px = (nc as usize, nr as usize);
                steps += 1;
                continue;
            }
        }
        let offset = match subpixel_offset(g_minus, g_0, g_plus) {
            Ok(o) => o,
            Err(Error::NotAMaximum { .. }) => {
                if g_plus > g_minus {
                    0.5
                } else {
                    -0.5
                }
            }
            Err(e) => return Err(e),
        };
        return Ok(Some(EdgeObservation {
            x_o: cx + offset * ux,
            y_o: cy + offset * uy,
            g_x: gx,
            g_y: gy,
            sigma_x2: sigma_x2(norm, field.sigma_h)?,
            t: 0.0,
            pixel: px,
        }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_image(w: usize, h: usize, col: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |c, _| if c >= col { 1.0 } else { 0.0 })
    }

    #[test]
    fn kernel_shape_and_symmetry() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        assert_eq!(k.side(), 7);
        assert!(k.k_x.iter().sum::<f64>().abs() < 1e-15);
        for r in 0..7 {
            for c in 0..7 {
                assert!((k.k_x[r * 7 + c] + k.k_x[r * 7 + (6 - c)]).abs() < 1e-15);
                assert_eq!(k.k_y[c * 7 + r], k.k_x[r * 7 + c]);
            }
        }
        assert!(gaussian_derivative_kernels(0.0).is_err());
        assert!(gaussian_derivative_kernels(-1.0).is_err());
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        let f = compute_gradient(&GrayImage::filled(20, 16, 0.37), &k, 0.1).unwrap();
        assert!(f.h_x.iter().chain(&f.h_y).all(|v| v.abs() < 1e-14));
        assert!(matches!(detect_edge_pixels(&f, 0.2), Err(Error::NoEdges)));
    }

    #[test]
    fn ramp_response_is_constant_positive() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        let w = 40;
        let img = GrayImage::from_fn(w, 30, |c, _| (c as f64 + 0.5) / w as f64);
        let f = compute_gradient(&img, &k, 0.0).unwrap();
        // analytic response: slope times sum_q q_x^2 G(q) / sigma^2
        let slope = 1.0 / w as f64;
        let mut moment = 0.0;
        for r in 0..7 {
            for c in 0..7 {
                moment += -(c as f64 - 3.0) * k.k_x[r * 7 + c];
            }
        }
        for r in 5..25 {
            for c in 5..35 {
                let [gx, gy] = f.at(c, r);
                assert!((gx - slope * moment).abs() < 1e-12);
                assert!(gy.abs() < 1e-12);
            }
        }
        assert!(moment > 0.9 && moment < 1.1);
    }

    #[test]
    fn image_smaller_than_kernel() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        assert!(matches!(
            compute_gradient(&GrayImage::filled(6, 20, 0.0), &k, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sigma_h_law() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        assert_eq!(sigma_h_from_kernel(0.0, &k), 0.0);
        let from_y: f64 = k.k_y.iter().map(|v| v * v).sum::<f64>().sqrt() * 0.3;
        assert!((sigma_h_from_kernel(0.3, &k) - from_y).abs() < 1e-15);
    }

    #[test]
    fn vertical_step_single_column() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        let img = step_image(32, 32, 16);
        let f = compute_gradient(&img, &k, 0.0).unwrap();
        // brute-force convolution oracle at the step
        let mut oracle = 0.0;
        for kr in 0..7usize {
            for kc in 0..7usize {
                let src = 15 - (kc as isize - 3);
                let v = if src >= 16 { 1.0 } else { 0.0 };
                oracle += v * k.k_x[kr * 7 + kc];
            }
        }
        assert!((f.at(15, 10)[0] - oracle).abs() < 1e-14);
        assert!(f.at(15, 10)[1].abs() < 1e-14);
        let px = detect_edge_pixels(&f, 0.2).unwrap();
        let cols: HashSet<usize> = px.iter().map(|p| p.0).collect();
        assert_eq!(cols.len(), 1);
        let col = *cols.iter().next().unwrap();
        assert!(col == 15 || col == 16);
        assert_eq!(px.len(), 30);
    }

    #[test]
    fn parabola_vertex() {
        assert_eq!(subpixel_offset(1.0, 2.0, 1.0).unwrap(), 0.0);
        assert!((subpixel_offset(1.0, 2.0, 1.5).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(subpixel_offset(2.0, 2.0, 2.0).unwrap(), 0.0);
        assert_eq!(subpixel_offset(1.0, 2.0, 2.0).unwrap(), 0.5);
        assert!(matches!(
            subpixel_offset(1.0, 2.0, 3.0),
            Err(Error::NotAMaximum { .. })
        ));
    }

    #[test]
    fn sigma_x_formula() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        let floor2 = SIGMA_X_FLOOR * SIGMA_X_FLOOR;
        assert_eq!(estimate_sigma_x2(0.3, 0.0, &k).unwrap(), floor2);
        let a = estimate_sigma_x2(0.2, 0.1, &k).unwrap() - floor2;
        let b = estimate_sigma_x2(0.4, 0.1, &k).unwrap() - floor2;
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!(estimate_sigma_x2(0.0, 0.1, &k).is_err());
    }

    #[test]
    fn tiny_ring_and_segment() {
        let ring = vec![(5, 5), (6, 5), (6, 6), (5, 6)];
        let order = trace_contour(&ring, true, false).unwrap();
        assert_eq!(order.len(), 4);
        for i in 0..4 {
            let (a, b) = (order[i], order[(i + 1) % 4]);
            assert!(a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1);
        }

        let seg: Vec<(usize, usize)> = (0..6).map(|i| (3 + i, 10 - i)).collect();
        let mut shuffled = seg.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        let order = trace_contour(&shuffled, false, false).unwrap();
        assert_eq!(order.len(), 6);
        let ends = [order[0], order[5]];
        assert!(ends.contains(&seg[0]) && ends.contains(&seg[5]));
        for w in order.windows(2) {
            assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
        }
    }

    #[test]
    fn multiple_components() {
        let px = vec![(1, 1), (2, 1), (10, 10), (11, 10), (12, 10)];
        assert!(matches!(
            trace_contour(&px, false, false),
            Err(Error::AmbiguousTopology(_))
        ));
        let order = trace_contour(&px, false, true).unwrap();
        assert_eq!(order.len(), 3);
        assert!(order.iter().all(|p| p.1 == 10));
    }

    #[test]
    fn closed_trace_drops_spurs() {
        // 5x5 square ring with a 3-pixel spur sticking out
        let mut px = Vec::new();
        for i in 0..5 {
            px.extend([(10 + i, 10), (10 + i, 14), (10, 10 + i), (14, 10 + i)]);
        }
        px.sort();
        px.dedup();
        let ring_len = px.len();
        px.extend([(15, 12), (16, 12), (17, 12)]);
        let order = trace_contour(&px, true, false).unwrap();
        assert_eq!(order.len(), ring_len);
        assert!(!order.contains(&(16, 12)));
    }

    #[test]
    fn chain_without_loop_is_not_closed() {
        let seg: Vec<(usize, usize)> = (0..6).map(|i| (3 + i, 4)).collect();
        assert!(matches!(
            trace_contour(&seg, true, false),
            Err(Error::AmbiguousTopology(_))
        ));
    }

    #[test]
    fn observation_parameters_are_uniform() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        let img = step_image(128, 128, 64);
        let f = compute_gradient(&img, &k, 0.0).unwrap();
        let px: Vec<(usize, usize)> = (14..114).map(|r| (63, r)).collect();
        let set = build_observations(&f, &px, true, &ObserveParams::default()).unwrap();
        assert_eq!(set.len(), 100);
        for (i, o) in set.observations().iter().enumerate() {
            assert_eq!(o.t, i as f64 / 100.0);
            // ideal step between columns 63 and 64 sits at x = 64
            assert!((o.x_o - 64.0).abs() < 1e-9, "{}", o.x_o);
            let (dx, dy) = (o.x_o - o.pixel_center()[0], o.y_o - o.pixel_center()[1]);
            assert!(dx.hypot(dy) <= 0.5 * 2f64.sqrt());
        }
    }

    #[test]
    fn zero_gradient_pixels_are_skipped() {
        let k = gaussian_derivative_kernels(1.0).unwrap();
        let img = step_image(64, 64, 32);
        let f = compute_gradient(&img, &k, 0.0).unwrap();
        let mut px: Vec<(usize, usize)> = (10..40).map(|r| (31, r)).collect();
        px.push((5, 5));
        let set = build_observations(&f, &px, false, &ObserveParams::default()).unwrap();
        assert_eq!(set.len(), 30);
        assert_eq!(set.skipped, 1);
    }
}
