//! Knot vectors, B-spline basis functions and parametric contour models.
//!
//! Two evaluation routes are provided. [`basis_value`] and
//! [`basis_derivative`] implement the Cox–de Boor recursion literally and are
//! used as the reference. [`KnotVector::nonzero_basis`] evaluates the `n + 1`
//! nonzero functions on a span with the triangular scheme and backs curve
//! evaluation and design matrices.
//!
//! Closed contours use a periodic uniform knot vector with wrapped basis
//! indices: the extended sequence holds `N + 2n + 1` knots and raw basis
//! function `j` contributes to control point `j mod N`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
    closed: bool,
}

impl KnotVector {
    /// Uniform knots on `[0, 1]`: clamped (end multiplicity `degree + 1`)
    /// for open curves, periodic for closed ones.
    pub fn uniform(num_ctrl: usize, degree: usize, closed: bool) -> Result<Self> {
        if num_ctrl < degree + 1 {
            return Err(Error::invalid(format!(
                "{num_ctrl} control points cannot support degree {degree}"
            )));
        }
        let knots = if closed {
            let step = 1.0 / num_ctrl as f64;
            (0..num_ctrl + 2 * degree + 1)
                .map(|j| (j as f64 - degree as f64) * step)
                .collect()
        } else {
            let spans = num_ctrl - degree;
            let mut k = vec![0.0; degree + 1];
            k.extend((1..spans).map(|j| j as f64 / spans as f64));
            k.extend(std::iter::repeat_n(1.0, degree + 1));
            k
        };
        Ok(Self {
            knots,
            degree,
            closed,
        })
    }

    /// Arbitrary open knot vector. Used for non-clamped or non-uniform
    /// spline spaces.
    pub fn open(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("knots must be nondecreasing"));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::invalid(format!(
                "{} knots are too few for degree {degree}",
                knots.len()
            )));
        }
        if knots[degree] >= knots[knots.len() - degree - 1] {
            return Err(Error::invalid("empty evaluation domain"));
        }
        Ok(Self {
            knots,
            degree,
            closed: false,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Number of independent basis functions, i.e. control points.
    pub fn num_basis(&self) -> usize {
        let raw = self.knots.len() - self.degree - 1;
        if self.closed {
            raw - self.degree
        } else {
            raw
        }
    }

    /// Curve evaluation domain `[t_n, t_{k-n-1}]`.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.knots[self.degree],
            self.knots[self.knots.len() - self.degree - 1],
        )
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if t.is_finite() && t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::Domain { t, lo, hi })
        }
    }

    /// Maps a domain parameter onto the raw knot sequence. Closed vectors
    /// wrap the domain end back onto its start.
    fn normalize(&self, t: f64) -> f64 {
        if self.closed {
            let (lo, hi) = self.domain();
            if t >= hi {
                lo
            } else {
                t
            }
        } else {
            t
        }
    }

    /// Index `s` of the span `[t_s, t_{s+1})` containing `t`, with the last
    /// nonempty span of the domain closed on the right.
    pub fn find_span(&self, t: f64) -> Result<usize> {
        self.check_domain(t)?;
        let t = self.normalize(t);
        let n = self.degree;
        let hi_idx = self.knots.len() - n - 1;
        if t >= self.knots[hi_idx] {
            // last nonempty span ending at the domain end
            let mut s = hi_idx - 1;
            while self.knots[s] >= self.knots[hi_idx] {
                s -= 1;
            }
            return Ok(s);
        }
        // binary search over [n, hi_idx)
        let (mut lo, mut hi) = (n, hi_idx);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Values of the raw basis functions `B_{s-p..=s, p}(t)` on span `s`
    /// for degree `p <= n`, in that order.
    fn local_basis(&self, span: usize, t: f64, p: usize) -> Vec<f64> {
        let k = &self.knots;
        let mut vals = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = t - k[span + 1 - j];
            right[j] = k[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// The `n + 1` possibly nonzero basis values at `t` together with the
    /// control-point index of the first one. Indices wrap for closed
    /// vectors; callers reduce them with [`KnotVector::wrap`].
    pub fn nonzero_basis(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        let span = self.find_span(t)?;
        let t = self.normalize(t);
        Ok((span - self.degree, self.local_basis(span, t, self.degree)))
    }

    /// As [`KnotVector::nonzero_basis`] but for the first derivative, built
    /// from the degree `n - 1` values.
    pub fn nonzero_basis_derivative(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        let n = self.degree;
        if n == 0 {
            return Err(Error::invalid("derivative of a degree-0 basis"));
        }
        let span = self.find_span(t)?;
        let t = self.normalize(t);
        let lower = self.local_basis(span, t, n - 1);
        let k = &self.knots;
        let first = span - n;
        let nf = n as f64;
        let mut out = vec![0.0; n + 1];
        for (r, d) in out.iter_mut().enumerate() {
            let i = first + r;
            let a = if r >= 1 {
                ratio(nf, k[i + n] - k[i]) * lower[r - 1]
            } else {
                0.0
            };
            let b = if r < n {
                ratio(nf, k[i + n + 1] - k[i + 1]) * lower[r]
            } else {
                0.0
            };
            *d = a - b;
        }
        Ok((first, out))
    }

    /// Reduces a raw basis index to a control-point index.
    #[inline]
    pub fn wrap(&self, raw: usize) -> usize {
        if self.closed {
            raw % self.num_basis()
        } else {
            raw
        }
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Raw Cox–de Boor recursion on an arbitrary knot slice. Zero-width
/// denominators contribute 0. `end` is the parameter at which the last
/// nonempty span is treated as closed.
fn cox_de_boor(knots: &[f64], i: usize, n: usize, t: f64, end: f64) -> f64 {
    if n == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let inside = (a <= t && t < b) || (t == end && a < b && b == end);
        return if inside { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + n] - knots[i];
    if d1 != 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, i, n - 1, t, end);
    }
    let d2 = knots[i + n + 1] - knots[i + 1];
    if d2 != 0.0 {
        v += (knots[i + n + 1] - t) / d2 * cox_de_boor(knots, i + 1, n - 1, t, end);
    }
    v
}

fn check_basis_args(kv: &KnotVector, i: usize, n: usize, t: f64) -> Result<(f64, f64)> {
    let k = kv.knots();
    if n > kv.degree() {
        return Err(Error::invalid(format!(
            "degree {n} exceeds knot vector degree {}",
            kv.degree()
        )));
    }
    // Open vectors: individual basis functions are defined on the whole knot
    // range. Closed vectors: the periodic domain.
    let (lo, hi) = if kv.is_closed() {
        kv.domain()
    } else {
        (k[0], k[k.len() - 1])
    };
    if !(t.is_finite() && t >= lo && t <= hi) {
        return Err(Error::Domain { t, lo, hi });
    }
    let count = if kv.is_closed() {
        kv.num_basis()
    } else {
        k.len() - n - 1
    };
    if i >= count {
        return Err(Error::invalid(format!(
            "basis index {i} out of range 0..{count}"
        )));
    }
    Ok((lo, hi))
}

/// `B_{i,n}(t)` by the Cox–de Boor recursion. For closed knot vectors the
/// wrapped basis function (sum of all raw functions congruent to `i`) is
/// returned.
pub fn basis_value(kv: &KnotVector, i: usize, n: usize, t: f64) -> Result<f64> {
    check_basis_args(kv, i, n, t)?;
    let k = kv.knots();
    if kv.is_closed() {
        let t = kv.normalize(t);
        let count = kv.num_basis();
        let end = k[k.len() - 1];
        Ok((i..k.len() - n - 1)
            .step_by(count)
            .map(|j| cox_de_boor(k, j, n, t, end))
            .sum())
    } else {
        Ok(cox_de_boor(k, i, n, t, k[k.len() - 1]))
    }
}

/// `dB_{i,n}/dt` from the two degree `n - 1` neighbours.
pub fn basis_derivative(kv: &KnotVector, i: usize, n: usize, t: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("derivative of a degree-0 basis"));
    }
    check_basis_args(kv, i, n, t)?;
    let k = kv.knots();
    let raw = |j: usize, t: f64| {
        let end = k[k.len() - 1];
        let nf = n as f64;
        ratio(nf, k[j + n] - k[j]) * cox_de_boor(k, j, n - 1, t, end)
            - ratio(nf, k[j + n + 1] - k[j + 1]) * cox_de_boor(k, j + 1, n - 1, t, end)
    };
    if kv.is_closed() {
        let t = kv.normalize(t);
        Ok((i..k.len() - n - 1)
            .step_by(kv.num_basis())
            .map(|j| raw(j, t))
            .sum())
    } else {
        Ok(raw(i, t))
    }
}

/// Dense matrix of basis values (or first derivatives) with one row per
/// parameter and one column per control point.
pub fn design_matrix(kv: &KnotVector, params: &[f64], derivative: bool) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(params.len(), kv.num_basis());
    for (r, &t) in params.iter().enumerate() {
        let (first, vals) = if derivative {
            kv.nonzero_basis_derivative(t)?
        } else {
            kv.nonzero_basis(t)?
        };
        for (j, v) in vals.into_iter().enumerate() {
            m[(r, kv.wrap(first + j))] += v;
        }
    }
    Ok(m)
}

/// A planar B-spline contour `v(t) = (sum x_i B_i(t), sum y_i B_i(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourModel {
    knots: KnotVector,
    theta_x: Vec<f64>,
    theta_y: Vec<f64>,
}

impl ContourModel {
    pub fn new(knots: KnotVector, theta_x: Vec<f64>, theta_y: Vec<f64>) -> Result<Self> {
        let n = knots.num_basis();
        if theta_x.len() != n || theta_y.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} control points, got {} x and {} y",
                theta_x.len(),
                theta_y.len()
            )));
        }
        Ok(Self {
            knots,
            theta_x,
            theta_y,
        })
    }

    /// Builds a model from an interleaved control vector `(x_0..x_{N-1}, y_0..y_{N-1})`.
    pub fn from_stacked(knots: KnotVector, theta: &[f64]) -> Result<Self> {
        let n = knots.num_basis();
        if theta.len() != 2 * n {
            return Err(Error::invalid("control vector length must be 2N"));
        }
        Self::new(knots, theta[..n].to_vec(), theta[n..].to_vec())
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn theta_x(&self) -> &[f64] {
        &self.theta_x
    }

    pub fn theta_y(&self) -> &[f64] {
        &self.theta_y
    }

    pub fn num_ctrl(&self) -> usize {
        self.theta_x.len()
    }

    /// `(theta_x, theta_y)` concatenated.
    pub fn stacked(&self) -> Vec<f64> {
        self.theta_x.iter().chain(&self.theta_y).copied().collect()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            knots: self.knots.clone(),
            theta_x: self.theta_x.iter().map(|x| x + dx).collect(),
            theta_y: self.theta_y.iter().map(|y| y + dy).collect(),
        }
    }

    fn combine(&self, first: usize, vals: &[f64]) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        for (j, v) in vals.iter().enumerate() {
            let c = self.knots.wrap(first + j);
            p[0] += v * self.theta_x[c];
            p[1] += v * self.theta_y[c];
        }
        p
    }

    pub fn eval_curve(&self, t: f64) -> Result<[f64; 2]> {
        let (first, vals) = self.knots.nonzero_basis(t)?;
        Ok(self.combine(first, &vals))
    }

    /// `(dx/dt, dy/dt)` in pixels per unit parameter.
    pub fn eval_tangent(&self, t: f64) -> Result<[f64; 2]> {
        let (first, vals) = self.knots.nonzero_basis_derivative(t)?;
        Ok(self.combine(first, &vals))
    }

    /// `count` points at uniformly spaced parameters over the domain. Closed
    /// contours omit the duplicate end point.
    pub fn sample(&self, count: usize) -> Vec<[f64; 2]> {
        let (lo, hi) = self.knots.domain();
        let denom = if self.knots.is_closed() {
            count as f64
        } else {
            (count.max(2) - 1) as f64
        };
        (0..count)
            .map(|i| {
                let t = (lo + (hi - lo) * i as f64 / denom).min(hi);
                self.eval_curve(t).expect("sample parameter within domain")
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ContourModelDoc {
    degree: usize,
    closed: bool,
    knots: Vec<f64>,
    ctrl: Vec<[f64; 2]>,
}

impl Serialize for ContourModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ContourModelDoc {
            degree: self.knots.degree,
            closed: self.knots.closed,
            knots: self.knots.knots.clone(),
            ctrl: self
                .theta_x
                .iter()
                .zip(&self.theta_y)
                .map(|(&x, &y)| [x, y])
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContourModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ContourModelDoc::deserialize(d)?;
        let knots = if doc.closed {
            let kv =
                KnotVector::uniform(doc.ctrl.len(), doc.degree, true).map_err(D::Error::custom)?;
            let matches = kv.knots.len() == doc.knots.len()
                && kv
                    .knots
                    .iter()
                    .zip(&doc.knots)
                    .all(|(a, b)| (a - b).abs() <= 1e-12);
            if !matches {
                return Err(D::Error::custom(
                    "closed contours require the periodic uniform knot vector",
                ));
            }
            kv
        } else {
            KnotVector::open(doc.knots, doc.degree).map_err(D::Error::custom)?
        };
        let (xs, ys) = doc.ctrl.iter().map(|p| (p[0], p[1])).unzip();
        ContourModel::new(knots, xs, ys).map_err(D::Error::custom)
    }
}
