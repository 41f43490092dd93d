//! Boundary curves, the interface curve and the Fermi (tubular) chart around it.
//!
//! Curves are stored counterclockwise at uniform arc length. For a counterclockwise curve the
//! left normal `n = i·τ` points into the enclosed region and the signed curvature
//! `k = x'y'' − y'x''` is positive on convex arcs, so `τ' = k·n` and `1 − t·k > 0` in the tube.

use crate::error::{Error, Result};
use crate::spectral::{Periodic, TrigSeries};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Truncated Fourier description `x(θ) = Σ a_j cos jθ + b_j sin jθ` (likewise `y`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCurve {
    pub cos_coeffs_x: Vec<f64>,
    pub sin_coeffs_x: Vec<f64>,
    pub cos_coeffs_y: Vec<f64>,
    pub sin_coeffs_y: Vec<f64>,
}

impl FourierCurve {
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self::ellipse(cx, cy, r, r)
    }

    pub fn ellipse(cx: f64, cy: f64, a: f64, b: f64) -> Self {
        Self {
            cos_coeffs_x: vec![cx, a],
            sin_coeffs_x: vec![0.0, 0.0],
            cos_coeffs_y: vec![cy, 0.0],
            sin_coeffs_y: vec![0.0, b],
        }
    }

    fn series(c: &[f64], s: &[f64], theta: f64) -> (f64, f64) {
        let (mut v, mut d) = (0.0, 0.0);
        for (j, &a) in c.iter().enumerate() {
            let jt = j as f64 * theta;
            v += a * jt.cos();
            d -= a * j as f64 * jt.sin();
        }
        for (j, &b) in s.iter().enumerate() {
            let jt = j as f64 * theta;
            v += b * jt.sin();
            d += b * j as f64 * jt.cos();
        }
        (v, d)
    }

    /// Point and parameter derivative at `θ`.
    pub fn eval(&self, theta: f64) -> (C64, C64) {
        let (x, dx) = Self::series(&self.cos_coeffs_x, &self.sin_coeffs_x, theta);
        let (y, dy) = Self::series(&self.cos_coeffs_y, &self.sin_coeffs_y, theta);
        (C64::new(x, y), C64::new(dx, dy))
    }
}

/// Smooth closed curve sampled counterclockwise at uniform arc length.
#[derive(Clone, Debug)]
pub struct ClosedCurve {
    x: Periodic,
    y: Periodic,
    pub length: f64,
    /// Orientation of the stored nodes; constructors normalise to counterclockwise.
    pub positive: bool,
    pub resolution_warning: bool,
    xs: TrigSeries,
    ys: TrigSeries,
    dx: Periodic,
    dy: Periodic,
    curvature: Periodic,
    ks: TrigSeries,
}

/// Nodes at uniform arc length of the curve `θ ↦ z(θ)` on `[0, 2π)`; returns nodes and length.
fn arclength_nodes(param: &dyn Fn(f64) -> (C64, C64), n: usize) -> Result<(Vec<C64>, f64)> {
    let mut m = (8 * n).max(1024);
    let speed = loop {
        let sp = Periodic::from_fn(m, 2.0 * PI, |th| param(th).1.norm());
        if sp.values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Geometry("curve parametrisation has vanishing speed".into()));
        }
        if sp.spectral_tail() < 1e-14 || m >= 1 << 16 {
            break sp;
        }
        m *= 2;
    };
    let length = speed.integral();
    let mean = speed.mean();
    let drift = speed.periodic_antiderivative().series();
    let drift0 = drift.eval(0.0);
    let arc = |th: f64| mean * th + drift.eval(th) - drift0;
    let mut nodes = Vec::with_capacity(n);
    for j in 0..n {
        let target = j as f64 * length / n as f64;
        let mut th = 2.0 * PI * target / length;
        let mut converged = false;
        for _ in 0..60 {
            let f = arc(th) - target;
            let step = f / param(th).1.norm();
            th -= step;
            if step.abs() < 1e-15 * 2.0 * PI {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Geometry("arc-length inversion did not converge".into()));
        }
        nodes.push(param(th).0);
    }
    Ok((nodes, length))
}

fn segments_cross(a: C64, b: C64, c: C64, d: C64) -> bool {
    let cross = |u: C64, v: C64| u.re * v.im - u.im * v.re;
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn polygon_self_intersects(p: &[C64]) -> bool {
    let n = p.len();
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, p[j], p[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

impl ClosedCurve {
    fn from_nodes(mut nodes: Vec<C64>, length: f64) -> Result<Self> {
        let n = nodes.len();
        if n < 16 || n % 2 == 1 {
            return Err(Error::Geometry(format!("node count {n} must be even and at least 16")));
        }
        if polygon_self_intersects(&nodes) {
            return Err(Error::Geometry("curve is self-intersecting".into()));
        }
        let area: f64 = (0..n)
            .map(|j| {
                let (a, b) = (nodes[j], nodes[(j + 1) % n]);
                a.re * b.im - b.re * a.im
            })
            .sum::<f64>()
            * 0.5;
        if area < 0.0 {
            nodes = (0..n).map(|j| nodes[(n - j) % n]).collect();
        }
        let x = Periodic::new(nodes.iter().map(|z| z.re).collect(), length);
        let y = Periodic::new(nodes.iter().map(|z| z.im).collect(), length);
        let (dx, dy) = (x.derivative(1), y.derivative(1));
        let (ddx, ddy) = (x.derivative(2), y.derivative(2));
        let curvature = Periodic::new(
            (0..n)
                .map(|j| {
                    let sp2 = dx.values[j].powi(2) + dy.values[j].powi(2);
                    (dx.values[j] * ddy.values[j] - dy.values[j] * ddx.values[j]) / sp2.powf(1.5)
                })
                .collect(),
            length,
        );
        let tail = x.spectral_tail().max(y.spectral_tail());
        let resolution_warning = tail > 1e-10;
        if resolution_warning {
            log::warn!("curve with {n} nodes under-resolved: spectral tail {tail:.2e}");
        }
        Ok(Self {
            xs: x.series(),
            ys: y.series(),
            ks: curvature.series(),
            x,
            y,
            length,
            positive: true,
            resolution_warning,
            dx,
            dy,
            curvature,
        })
    }

    /// Resample a Fourier-described curve to `n` nodes at uniform arc length.
    pub fn from_fourier(curve: &FourierCurve, n: usize) -> Result<Self> {
        check_count(n)?;
        let (nodes, length) = arclength_nodes(&|th| curve.eval(th), n)?;
        Self::from_nodes(nodes, length)
    }

    /// Resample raw periodic samples (uniform in an arbitrary parameter) to uniform arc length.
    pub fn from_samples(xs: &[f64], ys: &[f64], n: usize) -> Result<Self> {
        check_count(n)?;
        if xs.len() != ys.len() || xs.len() < 8 {
            return Err(Error::Geometry("sample arrays must match and hold at least 8 points".into()));
        }
        let px = Periodic::new(xs.to_vec(), 2.0 * PI).series();
        let py = Periodic::new(ys.to_vec(), 2.0 * PI).series();
        let param = |th: f64| {
            (
                C64::new(px.eval(th), py.eval(th)),
                C64::new(px.eval_derivative(th, 1), py.eval_derivative(th, 1)),
            )
        };
        let (nodes, length) = arclength_nodes(&param, n)?;
        Self::from_nodes(nodes, length)
    }

    /// Same curve at `n` nodes (idempotent for `n == self.len()`).
    pub fn resample(&self, n: usize) -> Result<Self> {
        check_count(n)?;
        let scale = self.length / (2.0 * PI);
        let param = |th: f64| {
            let s = th * scale;
            (self.point(s), C64::new(self.xs.eval_derivative(s, 1), self.ys.eval_derivative(s, 1)) * scale)
        };
        let (nodes, length) = arclength_nodes(&param, n)?;
        Self::from_nodes(nodes, length)
    }

    /// Image under `z ↦ a·z + b` (`a ≠ 0`), a similarity that preserves uniform arc length.
    pub fn similarity(&self, a: C64, b: C64) -> Result<Self> {
        let nodes = self.nodes().into_iter().map(|z| a * z + b).collect();
        Self::from_nodes(nodes, self.length * a.norm())
    }

    /// The curve pushed by `eps·cos(mode·2πs/ℓ)` along the left normal, resampled to the same node count.
    pub fn normal_perturbation(&self, eps: f64, mode: u32) -> Result<Self> {
        let tangents = self.tangents();
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..self.len())
            .map(|j| {
                let th = 2.0 * PI * mode as f64 * self.param(j) / self.length;
                let z = self.node(j) + C64::i() * tangents[j] * (eps * th.cos());
                (z.re, z.im)
            })
            .unzip();
        Self::from_samples(&xs, &ys, self.len())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.len() as f64
    }

    pub fn param(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn node(&self, j: usize) -> C64 {
        C64::new(self.x.values[j], self.y.values[j])
    }

    pub fn nodes(&self) -> Vec<C64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Unit tangents at the nodes.
    pub fn tangents(&self) -> Vec<C64> {
        (0..self.len())
            .map(|j| {
                let t = C64::new(self.dx.values[j], self.dy.values[j]);
                t / t.norm()
            })
            .collect()
    }

    /// Spectral tangent `γ'(s)` at the nodes, not normalised.
    pub fn raw_tangents(&self) -> Vec<C64> {
        (0..self.len()).map(|j| C64::new(self.dx.values[j], self.dy.values[j])).collect()
    }

    pub fn x(&self) -> &Periodic {
        &self.x
    }

    pub fn y(&self) -> &Periodic {
        &self.y
    }

    /// Signed curvature at the nodes.
    pub fn curvature(&self) -> &Periodic {
        &self.curvature
    }

    pub fn point(&self, s: f64) -> C64 {
        C64::new(self.xs.eval(s), self.ys.eval(s))
    }

    pub fn tangent(&self, s: f64) -> C64 {
        let t = C64::new(self.xs.eval_derivative(s, 1), self.ys.eval_derivative(s, 1));
        t / t.norm()
    }

    /// Left unit normal `i·τ(s)`, pointing into the enclosed region.
    pub fn normal(&self, s: f64) -> C64 {
        C64::i() * self.tangent(s)
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.ks.eval(s)
    }

    pub fn curvature_derivative_at(&self, s: f64) -> f64 {
        self.ks.eval_derivative(s, 1)
    }

    /// Arc length of the trigonometric interpolant of the nodes, measured on a refined grid.
    pub fn interpolant_length(&self) -> f64 {
        let m = 4 * self.len();
        let dx = self.dx.resample(m);
        let dy = self.dy.resample(m);
        dx.zip_with(&dy, |a, b| a.hypot(b)).integral()
    }

    pub fn signed_area(&self) -> f64 {
        let xdy = self.x.zip_with(&self.dy, |a, b| a * b);
        let ydx = self.y.zip_with(&self.dx, |a, b| a * b);
        0.5 * (xdy.integral() - ydx.integral())
    }

    pub fn centroid(&self) -> C64 {
        self.nodes().iter().sum::<C64>() / self.len() as f64
    }

    /// Signed distance to the curve, positive on the enclosed side, for points within two node
    /// spacings of it (where the node polygon and the curve can disagree).
    pub fn signed_distance_near(&self, z: C64) -> Option<f64> {
        let near = self.nodes().iter().fold(f64::INFINITY, |m, w| m.min((w - z).norm()));
        if near > 2.0 * self.spacing() {
            return None;
        }
        let (s, d) = self.closest(z);
        Some(d.copysign(((z - self.point(s)) * self.normal(s).conj()).re))
    }

    /// Strict interior test: exact near the curve, winding number against the node polygon elsewhere.
    pub fn contains(&self, z: C64) -> bool {
        if let Some(d) = self.signed_distance_near(z) {
            return d > 0.0;
        }
        let n = self.len();
        let mut wind = 0.0;
        for j in 0..n {
            let a = self.node(j) - z;
            let b = self.node((j + 1) % n) - z;
            wind += (b / a).arg();
        }
        wind.abs() > PI
    }

    /// Closest point on the curve: `(s, distance)`, by Newton on `s` from the nearest node.
    pub fn closest(&self, y: C64) -> (f64, f64) {
        let n = self.len();
        let j = (0..n)
            .min_by(|&a, &b| (self.node(a) - y).norm().total_cmp(&(self.node(b) - y).norm()))
            .unwrap_or(0);
        let h = self.spacing();
        let mut s = self.param(j);
        for _ in 0..40 {
            let tau = self.tangent(s);
            let d = self.point(s) - y;
            let g = (d * tau.conj()).re;
            let gp = 1.0 + self.curvature_at(s) * (d * (C64::i() * tau).conj()).re;
            let step = if gp > 0.1 { (g / gp).clamp(-h, h) } else { g.clamp(-h, h) };
            s -= step;
            if step.abs() < 1e-15 * self.length {
                break;
            }
        }
        let s = s.rem_euclid(self.length);
        (s, (self.point(s) - y).norm())
    }

    /// Minimum distance between the node sets of two curves, refined by a closest-point solve.
    pub fn distance_to(&self, other: &ClosedCurve) -> f64 {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for j in 0..self.len() {
            let z = self.node(j);
            let d = other.nodes().iter().fold(f64::INFINITY, |m, w| m.min((w - z).norm()));
            if d < best {
                best = d;
                best_j = j;
            }
        }
        // refine around the best node pair by alternating closest-point projections
        let mut s = self.param(best_j);
        let mut dist = best;
        for _ in 0..30 {
            let (so, d) = other.closest(self.point(s));
            let (s_new, _) = self.closest(other.point(so));
            dist = d.min(dist);
            if (s_new - s).abs() < 1e-14 * self.length {
                break;
            }
            s = s_new;
        }
        dist.min(other.closest(self.point(s)).1)
    }
}

fn check_count(n: usize) -> Result<()> {
    if n < 16 || n % 2 == 1 {
        return Err(Error::Geometry(format!("node count {n} must be even and at least 16")));
    }
    Ok(())
}

/// Doubly connected domain between two nested curves.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub outer: ClosedCurve,
    pub inner: ClosedCurve,
}

impl DomainSpec {
    pub fn new(outer: ClosedCurve, inner: ClosedCurve) -> Result<Self> {
        if !inner.nodes().iter().all(|&z| outer.contains(z)) {
            return Err(Error::Geometry("inner curve is not strictly inside the outer curve".into()));
        }
        if outer.nodes().iter().any(|&z| inner.contains(z)) {
            return Err(Error::Geometry("outer curve enters the hole".into()));
        }
        Ok(Self { outer, inner })
    }

    pub fn from_fourier(outer: &FourierCurve, inner: &FourierCurve, n: usize) -> Result<Self> {
        Self::new(ClosedCurve::from_fourier(outer, n)?, ClosedCurve::from_fourier(inner, n)?)
    }

    /// Closed-domain test: points on either boundary curve (to `1e-12` relative) belong to Ω.
    pub fn contains(&self, z: C64) -> bool {
        let tol = 1e-12 * self.outer.length;
        let in_outer = match self.outer.signed_distance_near(z) {
            Some(d) => d >= -tol,
            None => self.outer.contains(z),
        };
        let in_hole = match self.inner.signed_distance_near(z) {
            Some(d) => d > tol,
            None => self.inner.contains(z),
        };
        in_outer && !in_hole
    }

    pub fn diameter(&self) -> f64 {
        let nodes = self.outer.nodes();
        let mut d: f64 = 0.0;
        for a in &nodes {
            for b in &nodes {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    pub fn similarity(&self, a: C64, b: C64) -> Result<Self> {
        Self::new(self.outer.similarity(a, b)?, self.inner.similarity(a, b)?)
    }
}

/// Tubular chart `y = γ(s) + t·n(s)` with `n` pointing into the inner region.
#[derive(Clone, Debug)]
pub struct FermiChart {
    pub gamma: ClosedCurve,
    pub delta0: f64,
}

impl FermiChart {
    pub fn new(gamma: ClosedCurve, delta0: f64) -> Result<Self> {
        let kmax = gamma.curvature().max_abs();
        if !(delta0 > 0.0) || delta0 * kmax >= 1.0 {
            return Err(Error::Geometry(format!("tube half-width {delta0} degenerates the chart")));
        }
        Ok(Self { gamma, delta0 })
    }

    pub fn fermi_to_point(&self, s: f64, t: f64) -> Result<C64> {
        if t.abs() >= self.delta0 {
            return Err(Error::OutOfChart(format!("|t| = {} exceeds {}", t.abs(), self.delta0)));
        }
        Ok(self.gamma.point(s) + self.gamma.normal(s) * t)
    }

    pub fn point_to_fermi(&self, y: C64) -> Result<(f64, f64)> {
        let (s, _) = self.gamma.closest(y);
        let t = ((y - self.gamma.point(s)) * self.gamma.normal(s).conj()).re;
        if t.abs() >= self.delta0 {
            return Err(Error::OutOfChart(format!("point at distance {} from the interface", t.abs())));
        }
        Ok((s, t))
    }

    /// Metric factor `1 − t·k(s)`.
    pub fn jacobian(&self, s: f64, t: f64) -> f64 {
        1.0 - t * self.gamma.curvature_at(s)
    }
}

/// `0.9 · min(1/max|k|, ½·dist(γ, ∂Ω))`.
pub fn tube_width(gamma: &ClosedCurve, domain: &DomainSpec) -> Result<f64> {
    if !gamma.nodes().iter().all(|&z| domain.contains(z)) {
        return Err(Error::Geometry("interface curve leaves the domain".into()));
    }
    let dist = gamma.distance_to(&domain.inner).min(gamma.distance_to(&domain.outer));
    if dist < 1e-9 * domain.diameter() {
        return Err(Error::Geometry(format!("interface curve touches the boundary (gap {dist:.3e})")));
    }
    let kmax = gamma.curvature().max_abs();
    let curvature_limit = if kmax > 0.0 { 1.0 / kmax } else { f64::INFINITY };
    Ok(0.9 * curvature_limit.min(0.5 * dist))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_resampled_from_nonuniform_parameter() {
        // θ ↦ θ + 0.3 sin θ is a non-uniform parametrisation of the radius-2 circle
        let m = 256;
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..m)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / m as f64;
                let phi = th + 0.3 * th.sin();
                (2.0 * phi.cos(), 2.0 * phi.sin())
            })
            .unzip();
        let c = ClosedCurve::from_samples(&xs, &ys, 64).unwrap();
        assert!((c.length - 4.0 * PI).abs() < 1e-10);
        for j in 0..64 {
            let z = c.node(j);
            assert!((z.norm() - 2.0).abs() < 1e-10);
            if j > 0 {
                assert!(((z - c.node(j - 1)).norm() - 2.0 * 2.0 * (PI / 64.0).sin()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn curvature_of_circle_and_ellipse() {
        let c = ClosedCurve::from_fourier(&FourierCurve::circle(0.0, 0.0, 2.0), 64).unwrap();
        assert!(c.curvature().values.iter().all(|k| (k - 0.5).abs() < 1e-11));
        // arc-length parametrisation of a 2:1 ellipse needs ~256 nodes for 1e-10 curvature
        let e = ClosedCurve::from_fourier(&FourierCurve::ellipse(0.0, 0.0, 2.0, 1.0), 256).unwrap();
        // the node at s = 0 is θ = 0, i.e. the point (2, 0)
        assert!((e.node(0) - C64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((e.curvature().values[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let cw = FourierCurve {
            cos_coeffs_x: vec![0.0, 1.0],
            sin_coeffs_x: vec![0.0, 0.0],
            cos_coeffs_y: vec![0.0, 0.0],
            sin_coeffs_y: vec![0.0, -1.0],
        };
        let c = ClosedCurve::from_fourier(&cw, 32).unwrap();
        assert!(c.signed_area() > 0.0);
        assert!((c.curvature().values[3] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn odd_or_small_counts_rejected() {
        let f = FourierCurve::circle(0.0, 0.0, 1.0);
        assert!(ClosedCurve::from_fourier(&f, 15).is_err());
        assert!(ClosedCurve::from_fourier(&f, 33).is_err());
    }

    #[test]
    fn figure_eight_rejected() {
        let f = FourierCurve {
            cos_coeffs_x: vec![0.0, 0.0],
            sin_coeffs_x: vec![0.0, 1.0],
            cos_coeffs_y: vec![0.0, 0.0, 0.0],
            sin_coeffs_y: vec![0.0, 0.0, 1.0],
        };
        assert!(matches!(ClosedCurve::from_fourier(&f, 64), Err(Error::Geometry(_))));
    }

    #[test]
    fn closest_point_on_circle() {
        let c = ClosedCurve::from_fourier(&FourierCurve::circle(0.0, 0.0, 2.0), 64).unwrap();
        let (s, d) = c.closest(C64::new(0.0, 2.5));
        assert!((d - 0.5).abs() < 1e-13);
        assert!((s - PI).abs() < 1e-12);
    }
}
