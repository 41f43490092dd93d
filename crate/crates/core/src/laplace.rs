//! Boundary-integral Laplace solver on annular subdomains.
//!
//! A harmonic function in the region inside `outer` and outside `hole` is represented as
//! `u = Re Φ(z) + A·ln|z − c|`, where `Φ(z) = (2πi)⁻¹ Σ ∮ σ(w) dw/(w − z)` is the complex form of the
//! double-layer potential of a real density `σ` on both curves, `c` lies in the hole and the
//! side condition `∮_hole σ ds = 0` removes the one-dimensional null space of the hole.
//! Derivatives of `Φ` are Cauchy integrals of the densities `g_{m+1} = (d g_m/ds)/τ`, so gradients
//! and Hessians on and off the curves come from the same spectrally accurate trapezoid sums.

use crate::error::{Error, Result};
use crate::geometry::{ClosedCurve, DomainSpec};
use crate::spectral::Periodic;
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

/// Nominal accuracy of boundary traces and normal derivatives at default resolution.
pub const SOLVER_TOL: f64 = 1e-9;

const LEVELS: usize = 7;
const DENSITY_ORDERS: usize = 3;
/// Points this close to a curve, in node spacings, are evaluated as on-curve limits.
const ON_CURVE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Region {
    /// Between γ and the outer boundary component.
    Plus,
    /// Between the inner boundary component and γ.
    Minus,
    /// The whole domain Ω.
    Whole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Outer,
    Hole,
}

/// Quadrature nodes `w_j` and complex weights `τ_j·h` of a curve at one refinement level.
#[derive(Debug)]
struct Panel {
    w: Vec<C64>,
    dw: Vec<C64>,
}

#[derive(Debug)]
struct CurveData {
    curve: ClosedCurve,
    /// Ω lies inside this curve (outer boundary) or outside it (hole).
    domain_inside: bool,
    tangents: Vec<C64>,
    levels: [OnceLock<Panel>; LEVELS],
}

impl CurveData {
    fn new(curve: ClosedCurve, domain_inside: bool) -> Self {
        Self { tangents: curve.tangents(), curve, domain_inside, levels: Default::default() }
    }

    fn panel(&self, level: usize) -> &Panel {
        self.levels[level].get_or_init(|| {
            let m = self.curve.len() << level;
            let (x, y) = (self.curve.x().resample(m), self.curve.y().resample(m));
            let (dx, dy) = (x.derivative(1), y.derivative(1));
            let h = self.curve.length / m as f64;
            Panel {
                w: (0..m).map(|j| C64::new(x.values[j], y.values[j])).collect(),
                dw: (0..m)
                    .map(|j| {
                        let t = C64::new(dx.values[j], dy.values[j]);
                        t / t.norm() * h
                    })
                    .collect(),
            }
        })
    }
}

/// Nyström discretisation and factorised system of one annular subdomain.
#[derive(Debug)]
pub struct Subdomain {
    pub region: Region,
    curves: [CurveData; 2],
    center: C64,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition_estimate: f64,
}

fn dlp_kernel(z: C64, w: C64, tau_w: C64) -> f64 {
    // (2π)⁻¹ (w − z)·ν_w / |w − z|² with ν = −iτ the outward normal of the enclosed region
    let d = w - z;
    let nu = -C64::i() * tau_w;
    (d.re * nu.re + d.im * nu.im) / (2.0 * PI * d.norm_sqr())
}

/// A point strictly inside `curve`, preferring the centroid.
fn interior_point(curve: &ClosedCurve) -> Result<C64> {
    let c = curve.centroid();
    if curve.contains(c) {
        return Ok(c);
    }
    let n = curve.len();
    let tangents = curve.tangents();
    let h = curve.spacing();
    for j in 0..n {
        let p = curve.node(j) + C64::i() * tangents[j] * (2.0 * h);
        if curve.contains(p) && curve.closest(p).1 > 1.5 * h {
            return Ok(p);
        }
    }
    Err(Error::Geometry("could not place the logarithmic source inside the hole".into()))
}

impl Subdomain {
    pub fn new(region: Region, outer: ClosedCurve, hole: ClosedCurve) -> Result<Self> {
        let center = interior_point(&hole)?;
        let curves = [CurveData::new(outer, true), CurveData::new(hole, false)];
        let (no, nh) = (curves[0].curve.len(), curves[1].curve.len());
        let size = no + nh + 1;
        let mut m = DMatrix::<f64>::zeros(size, size);
        let offsets = [0, no];
        for (ci, cd) in curves.iter().enumerate() {
            let nodes = cd.curve.nodes();
            let k = cd.curve.curvature();
            let jump = if cd.domain_inside { 0.5 } else { -0.5 };
            for i in 0..nodes.len() {
                let row = offsets[ci] + i;
                let z = nodes[i];
                for (cj, other) in curves.iter().enumerate() {
                    let h = other.curve.spacing();
                    let wn = other.curve.nodes();
                    for j in 0..wn.len() {
                        let col = offsets[cj] + j;
                        m[(row, col)] = if ci == cj && i == j {
                            jump + k.values[i] * h / (4.0 * PI)
                        } else {
                            dlp_kernel(z, wn[j], other.tangents[j]) * h
                        };
                    }
                }
                m[(row, size - 1)] = (z - center).norm().ln();
            }
        }
        let hh = curves[1].curve.spacing();
        for j in 0..nh {
            m[(size - 1, no + j)] = hh;
        }
        let norm1 = |a: &DMatrix<f64>| {
            (0..a.ncols()).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        };
        let mnorm = norm1(&m);
        let lu = m.lu();
        // cheap condition estimate from the inverse applied to a few probe vectors
        let mut inv_norm: f64 = 0.0;
        for probe in 0..3 {
            let b = DVector::from_fn(size, |i, _| ((i * (probe + 1)) as f64 * 0.7).sin());
            if let Some(x) = lu.solve(&b) {
                inv_norm = inv_norm.max(x.iter().map(|v| v.abs()).sum::<f64>() / b.iter().map(|v| v.abs()).sum::<f64>());
            } else {
                return Err(Error::Solver("singular boundary-integral system".into()));
            }
        }
        let condition_estimate = mnorm * inv_norm;
        if !condition_estimate.is_finite() || condition_estimate > 1e12 {
            return Err(Error::Solver(format!("ill-conditioned system, condition ≈ {condition_estimate:.3e}")));
        }
        Ok(Self { region, curves, center, lu, condition_estimate })
    }

    pub fn outer(&self) -> &ClosedCurve {
        &self.curves[0].curve
    }

    pub fn hole(&self) -> &ClosedCurve {
        &self.curves[1].curve
    }

    pub fn curve(&self, side: Side) -> &ClosedCurve {
        match side {
            Side::Outer => self.outer(),
            Side::Hole => self.hole(),
        }
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Side of this subdomain on which γ sits.
    pub fn gamma_side(&self) -> Side {
        match self.region {
            Region::Plus => Side::Hole,
            Region::Minus | Region::Whole => Side::Outer,
        }
    }

    fn size(&self) -> usize {
        self.curves[0].curve.len() + self.curves[1].curve.len() + 1
    }

    fn solve_raw(&self, outer: &[f64], hole: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let no = outer.len();
        let size = self.size();
        let b = DVector::from_fn(size, |i, _| {
            if i < no {
                outer[i]
            } else if i < size - 1 {
                hole[i - no]
            } else {
                0.0
            }
        });
        let x = self.lu.solve(&b).ok_or_else(|| Error::Solver("factorisation failed".into()))?;
        let nh = hole.len();
        Ok((x.rows(0, no).iter().copied().collect(), x.rows(no, nh).iter().copied().collect(), x[size - 1]))
    }

    /// Dirichlet solve with data on the outer curve and on the hole.
    pub fn solve(self: &Arc<Self>, outer: &Periodic, hole: &Periodic) -> Result<HarmonicField> {
        if outer.len() != self.outer().len() || hole.len() != self.hole().len() {
            return Err(Error::Argument("boundary data length does not match the node count".into()));
        }
        let (so, sh, a) = self.solve_raw(&outer.values, &hole.values)?;
        Ok(HarmonicField::from_density(self.clone(), so, sh, a, outer.clone(), hole.clone()))
    }

    /// Dirichlet solve addressed by γ and the boundary-component ("shell") side.
    pub fn solve_gamma_shell(self: &Arc<Self>, gamma: &Periodic, shell: &Periodic) -> Result<HarmonicField> {
        match self.gamma_side() {
            Side::Hole => self.solve(shell, gamma),
            Side::Outer => self.solve(gamma, shell),
        }
    }

    fn zeros(&self, side: Side) -> Periodic {
        let c = self.curve(side);
        Periodic::constant(0.0, c.len(), c.length)
    }
}

/// Complex densities `g_0 = σ, g_1, g_2` on one curve at one refinement level.
#[derive(Debug)]
struct Densities {
    g: [Vec<C64>; DENSITY_ORDERS],
}

fn densities(sigma: &Periodic, tangents: &[C64]) -> Densities {
    let n = sigma.len();
    let mut g: [Vec<C64>; DENSITY_ORDERS] = Default::default();
    g[0] = sigma.values.iter().map(|&v| C64::new(v, 0.0)).collect();
    for m in 1..DENSITY_ORDERS {
        let re = Periodic::new(g[m - 1].iter().map(|c| c.re).collect(), sigma.period).derivative(1);
        let im = Periodic::new(g[m - 1].iter().map(|c| c.im).collect(), sigma.period).derivative(1);
        g[m] = (0..n).map(|j| C64::new(re.values[j], im.values[j]) / tangents[j]).collect();
    }
    Densities { g }
}

/// Value, gradient and Hessian of a harmonic field at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    /// `[u_xx, u_xy, u_yy]`
    pub hess: [f64; 3],
}

/// A solved harmonic field on a subdomain.
#[derive(Debug)]
pub struct HarmonicField {
    sub: Arc<Subdomain>,
    sigma: [Periodic; 2],
    pub log_coeff: f64,
    data: [Periodic; 2],
    levels: [[OnceLock<Densities>; LEVELS]; 2],
}

impl Clone for HarmonicField {
    fn clone(&self) -> Self {
        Self::from_density(
            self.sub.clone(),
            self.sigma[0].values.clone(),
            self.sigma[1].values.clone(),
            self.log_coeff,
            self.data[0].clone(),
            self.data[1].clone(),
        )
    }
}

impl HarmonicField {
    fn from_density(sub: Arc<Subdomain>, so: Vec<f64>, sh: Vec<f64>, a: f64, data_o: Periodic, data_h: Periodic) -> Self {
        let sigma = [Periodic::new(so, sub.outer().length), Periodic::new(sh, sub.hole().length)];
        Self { sub, sigma, log_coeff: a, data: [data_o, data_h], levels: Default::default() }
    }

    pub fn subdomain(&self) -> &Arc<Subdomain> {
        &self.sub
    }

    pub fn region(&self) -> Region {
        self.sub.region
    }

    /// Linear combination `Σ cᵢ·fieldᵢ` of fields on the same subdomain.
    pub fn combine(terms: &[(f64, &HarmonicField)]) -> Result<HarmonicField> {
        let first = terms.first().ok_or_else(|| Error::Argument("empty combination".into()))?.1;
        let sub = first.sub.clone();
        let mut so = vec![0.0; first.sigma[0].len()];
        let mut sh = vec![0.0; first.sigma[1].len()];
        let mut dob = vec![0.0; so.len()];
        let mut dh = vec![0.0; sh.len()];
        let mut a = 0.0;
        for (c, f) in terms {
            if !Arc::ptr_eq(&f.sub, &sub) {
                return Err(Error::Argument("fields live on different subdomains".into()));
            }
            for j in 0..so.len() {
                so[j] += c * f.sigma[0].values[j];
                dob[j] += c * f.data[0].values[j];
            }
            for j in 0..sh.len() {
                sh[j] += c * f.sigma[1].values[j];
                dh[j] += c * f.data[1].values[j];
            }
            a += c * f.log_coeff;
        }
        let data_o = Periodic::new(dob, sub.outer().length);
        let data_h = Periodic::new(dh, sub.hole().length);
        Ok(Self::from_density(sub, so, sh, a, data_o, data_h))
    }

    fn dens(&self, ci: usize, level: usize) -> &Densities {
        self.levels[ci][level].get_or_init(|| {
            let cd = &self.sub.curves[ci];
            let m = cd.curve.len() << level;
            let sig = self.sigma[ci].resample(m);
            let panel = cd.panel(level);
            let tangents: Vec<C64> = panel.dw.iter().map(|d| d / d.norm()).collect();
            densities(&sig, &tangents)
        })
    }

    /// Cauchy integrals `(2πi)⁻¹∮ g_m dw/(w − z)` of one curve at an off-curve point.
    fn cauchy(&self, ci: usize, z: C64) -> [C64; DENSITY_ORDERS] {
        let cd = &self.sub.curves[ci];
        let base = cd.panel(0);
        let (jn, dmin) = base
            .w
            .iter()
            .enumerate()
            .map(|(j, w)| (j, (w - z).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 1.0));
        // distance to the chords next to the nearest node, within O(κh²) of the curve distance
        if dmin < 0.6 * cd.curve.spacing() {
            let (s, d) = cd.curve.closest(z);
            if d <= ON_CURVE * cd.curve.spacing() {
                return self.cauchy_on_curve(ci, s);
            }
        }
        let n0 = base.w.len();
        let chord = |a: C64, b: C64| {
            let ab = b - a;
            let t = (((z - a) * ab.conj()).re / ab.norm_sqr()).clamp(0.0, 1.0);
            (z - a - ab * t).norm()
        };
        let dmin = dmin
            .min(chord(base.w[(jn + n0 - 1) % n0], base.w[jn]))
            .min(chord(base.w[jn], base.w[(jn + 1) % n0]));
        let h = cd.curve.spacing();
        let mut level = 0;
        while level + 1 < LEVELS && dmin < 4.0 * h / (1 << level) as f64 {
            level += 1;
        }
        let panel = cd.panel(level);
        let dens = self.dens(ci, level);
        let jnear = jn << level;
        let mut out = [C64::new(0.0, 0.0); DENSITY_ORDERS];
        if cd.domain_inside {
            // barycentric form, exact for constants: (2πi)⁻¹∮dw/(w − z) = 1 inside
            let mut den = C64::new(0.0, 0.0);
            let mut num = [C64::new(0.0, 0.0); DENSITY_ORDERS];
            for j in 0..panel.w.len() {
                let r = panel.dw[j] / (panel.w[j] - z);
                den += r;
                for m in 0..DENSITY_ORDERS {
                    num[m] += dens.g[m][j] * r;
                }
            }
            for m in 0..DENSITY_ORDERS {
                out[m] = num[m] / den;
            }
        } else {
            // exterior: subtract the value at the nearest node, (2πi)⁻¹∮dw/(w − z) = 0 outside
            let scale = C64::new(0.0, -1.0 / (2.0 * PI));
            for j in 0..panel.w.len() {
                let r = panel.dw[j] / (panel.w[j] - z);
                for m in 0..DENSITY_ORDERS {
                    out[m] += (dens.g[m][j] - dens.g[m][jnear]) * r;
                }
            }
            for o in out.iter_mut() {
                *o *= scale;
            }
        }
        out
    }

    /// One-sided limit from Ω of the Cauchy integrals at the curve point with parameter `s`,
    /// where the barycentric and subtracted forms both degenerate.
    fn cauchy_on_curve(&self, ci: usize, s: f64) -> [C64; DENSITY_ORDERS] {
        let cd = &self.sub.curves[ci];
        let panel = cd.panel(0);
        let dens = self.dens(ci, 0);
        let z = cd.curve.point(s);
        let tau = cd.curve.tangent(s);
        let period = cd.curve.length;
        // densities at s, plus one more derivative for the diagonal term of the top order
        let mut gz = [C64::new(0.0, 0.0); DENSITY_ORDERS + 1];
        for m in 0..DENSITY_ORDERS {
            let re = Periodic::new(dens.g[m].iter().map(|c| c.re).collect(), period).series();
            let im = Periodic::new(dens.g[m].iter().map(|c| c.im).collect(), period).series();
            gz[m] = C64::new(re.eval(s), im.eval(s));
            if m + 1 == DENSITY_ORDERS {
                gz[m + 1] = C64::new(re.eval_derivative(s, 1), im.eval_derivative(s, 1)) / tau;
            }
        }
        let h = cd.curve.spacing();
        let mut out = [C64::new(0.0, 0.0); DENSITY_ORDERS];
        for j in 0..panel.w.len() {
            let dz = panel.w[j] - z;
            for m in 0..DENSITY_ORDERS {
                // (g(w) − g(z))/(w − z) → g'(z) as w → z
                out[m] += if dz.norm() < 1e-6 * h { gz[m + 1] * panel.dw[j] } else { (dens.g[m][j] - gz[m]) * panel.dw[j] / dz };
            }
        }
        let scale = C64::new(0.0, -1.0 / (2.0 * PI));
        for m in 0..DENSITY_ORDERS {
            out[m] *= scale;
            if cd.domain_inside {
                out[m] += gz[m];
            }
        }
        out
    }

    /// `(Φ, Φ', Φ'')` at an interior point.
    fn phi(&self, z: C64) -> [C64; DENSITY_ORDERS] {
        let a = self.cauchy(0, z);
        let b = self.cauchy(1, z);
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn jet(&self, z: C64) -> Jet {
        let p = self.phi(z);
        let d = z - self.sub.center;
        let a = self.log_coeff;
        let f1 = p[1] + a / d;
        let f2 = p[2] - a / (d * d);
        Jet {
            value: p[0].re + a * d.norm().ln(),
            grad: [f1.re, -f1.im],
            hess: [f2.re, -f2.im, -f2.re],
        }
    }

    pub fn value(&self, z: C64) -> f64 {
        let p = self.phi(z);
        p[0].re + self.log_coeff * (z - self.sub.center).norm().ln()
    }

    /// Analytic completion `Φ(z)` (single valued) and `F'(z) = Φ'(z) + A/(z − c)`.
    pub fn analytic_parts(&self, z: C64) -> (C64, C64) {
        let p = self.phi(z);
        (p[0], p[1] + self.log_coeff / (z - self.sub.center))
    }

    pub fn log_center(&self) -> C64 {
        self.sub.center
    }

    /// Boundary limits `(Φ, Φ')` from the Ω side at the nodes of one curve.
    fn boundary_limits(&self, side: Side) -> (Vec<C64>, Vec<C64>) {
        let ci = match side {
            Side::Outer => 0,
            Side::Hole => 1,
        };
        let oi = 1 - ci;
        let cd = &self.sub.curves[ci];
        let panel = cd.panel(0);
        let dens = self.dens(ci, 0);
        let n = panel.w.len();
        let scale = C64::new(0.0, -1.0 / (2.0 * PI));
        let (vals, ders): (Vec<C64>, Vec<C64>) = (0..n)
            .into_par_iter()
            .map(|i| {
                let z = panel.w[i];
                let mut acc = [C64::new(0.0, 0.0); 2];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let r = panel.dw[j] / (panel.w[j] - z);
                    for m in 0..2 {
                        acc[m] += (dens.g[m][j] - dens.g[m][i]) * r;
                    }
                }
                // diagonal limit of (g(w) − g(z))/(w − z)·dw is g'(z)·dw
                for m in 0..2 {
                    acc[m] += dens.g[m + 1][i] * panel.dw[i];
                    acc[m] *= scale;
                    if cd.domain_inside {
                        acc[m] += dens.g[m][i];
                    }
                }
                let other = self.cauchy(oi, z);
                (acc[0] + other[0], acc[1] + other[1])
            })
            .unzip();
        (vals, ders)
    }

    /// Values of the representation on the nodes of a boundary curve (reproduces the data).
    pub fn boundary_values(&self, side: Side) -> Periodic {
        let (vals, _) = self.boundary_limits(side);
        let curve = self.sub.curve(side);
        let c = self.sub.center;
        Periodic::new(
            (0..curve.len()).map(|j| vals[j].re + self.log_coeff * (curve.node(j) - c).norm().ln()).collect(),
            curve.length,
        )
    }

    /// Derivative along the left normal `i·τ` of a boundary curve, one-sided from Ω.
    pub fn normal_derivative(&self, side: Side) -> Periodic {
        let (_, ders) = self.boundary_limits(side);
        let curve = self.sub.curve(side);
        let tangents = &self.sub.curves[if side == Side::Outer { 0 } else { 1 }].tangents;
        let c = self.sub.center;
        Periodic::new(
            (0..curve.len())
                .map(|j| {
                    let fp = ders[j] + self.log_coeff / (curve.node(j) - c);
                    (fp * C64::i() * tangents[j]).re
                })
                .collect(),
            curve.length,
        )
    }

    /// Dirichlet data imposed on one side.
    pub fn data(&self, side: Side) -> &Periodic {
        match side {
            Side::Outer => &self.data[0],
            Side::Hole => &self.data[1],
        }
    }

    /// Trace on γ (the imposed data).
    pub fn gamma_trace(&self) -> &Periodic {
        self.data(self.sub.gamma_side())
    }

    /// `∂_n` on γ with `n` pointing into Ω⁻, one-sided from this subdomain.
    pub fn normal_derivative_on_gamma(&self) -> Periodic {
        self.normal_derivative(self.sub.gamma_side())
    }

    /// Net flux `∮ ∂_ν u ds` through any curve separating the two boundary components.
    pub fn flux(&self) -> f64 {
        2.0 * PI * self.log_coeff
    }
}

/// `(w_tt, w_ttt)` on γ from the trace, `w_t = ∂_n w` and the curvature, via the Laplacian in
/// Fermi coordinates and its `t`-derivative at `t = 0`.
pub fn second_third_normal_derivs(trace: &Periodic, dn: &Periodic, k: &Periodic) -> (Periodic, Periodic) {
    let ws = trace.derivative(1);
    let wss = trace.derivative(2);
    let wsst = dn.derivative(2);
    let dk = k.derivative(1);
    let n = trace.len();
    let wtt: Vec<f64> = (0..n).map(|j| k.values[j] * dn.values[j] - wss.values[j]).collect();
    let wttt: Vec<f64> = (0..n)
        .map(|j| {
            let kj = k.values[j];
            -2.0 * kj * wss.values[j] - wsst.values[j] - dk.values[j] * ws.values[j]
                + kj * kj * dn.values[j]
                + kj * wtt[j]
        })
        .collect();
    (Periodic::new(wtt, trace.period), Periodic::new(wttt, trace.period))
}

/// Dirichlet-to-Neumann matrix on γ for a subdomain with zero data on its other boundary.
#[derive(Debug)]
pub struct DtNOperator {
    pub region: Region,
    pub matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    period: f64,
}

impl DtNOperator {
    pub fn new(sub: &Arc<Subdomain>) -> Result<Self> {
        let gside = sub.gamma_side();
        let gamma = sub.curve(gside);
        let n = gamma.len();
        let shell_side = if gside == Side::Outer { Side::Hole } else { Side::Outer };
        let zero_shell = sub.zeros(shell_side);
        let columns: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let data = Periodic::new(e, gamma.length);
                let field = sub.solve_gamma_shell(&data, &zero_shell)?;
                Ok(field.normal_derivative_on_gamma().values)
            })
            .collect();
        let mut matrix = DMatrix::<f64>::zeros(n, n);
        for (j, col) in columns.into_iter().enumerate() {
            let col = col?;
            for i in 0..n {
                matrix[(i, j)] = col[i];
            }
        }
        // the Nyquist mode is invisible to spectral differentiation; give it the high-mode
        // eigenvalue |m|·2π/ℓ so the inverse stays bounded
        let nyq = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let eig = PI * n as f64 / gamma.length;
        let lu = (&matrix + &nyq * nyq.transpose() * (eig / n as f64)).lu();
        if lu.solve(&DVector::from_element(n, 1.0)).is_none() {
            return Err(Error::Solver("Dirichlet-to-Neumann matrix is singular".into()));
        }
        Ok(Self { region: sub.region, matrix, lu, period: gamma.length })
    }

    pub fn apply(&self, g: &Periodic) -> Periodic {
        let v = &self.matrix * DVector::from_column_slice(&g.values);
        Periodic::new(v.iter().copied().collect(), self.period)
    }

    /// The inverse map: Dirichlet trace on γ whose harmonic extension has normal derivative `q`.
    pub fn neumann_to_dirichlet(&self, q: &Periodic) -> Result<Periodic> {
        let v = self
            .lu
            .solve(&DVector::from_column_slice(&q.values))
            .ok_or_else(|| Error::Solver("Neumann-to-Dirichlet solve failed".into()))?;
        Ok(Periodic::new(v.iter().copied().collect(), self.period))
    }

    /// Max asymmetry `|M − Mᵀ|` relative to `max|M|` (uniform weights make the similarity trivial).
    pub fn asymmetry(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        let scale = self.matrix.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

/// Ω split along γ into Ω⁺ and Ω⁻, with their Dirichlet-to-Neumann maps.
#[derive(Debug)]
pub struct SplitDomain {
    pub domain: DomainSpec,
    pub gamma: ClosedCurve,
    pub plus: Arc<Subdomain>,
    pub minus: Arc<Subdomain>,
    pub dtn_plus: DtNOperator,
    pub dtn_minus: DtNOperator,
}

impl SplitDomain {
    pub fn new(domain: DomainSpec, gamma: ClosedCurve) -> Result<Self> {
        let plus = Arc::new(Subdomain::new(Region::Plus, domain.outer.clone(), gamma.clone())?);
        let minus = Arc::new(Subdomain::new(Region::Minus, gamma.clone(), domain.inner.clone())?);
        let dtn_plus = DtNOperator::new(&plus)?;
        let dtn_minus = DtNOperator::new(&minus)?;
        Ok(Self { domain, gamma, plus, minus, dtn_plus, dtn_minus })
    }

    pub fn subdomain(&self, region: Region) -> Result<&Arc<Subdomain>> {
        match region {
            Region::Plus => Ok(&self.plus),
            Region::Minus => Ok(&self.minus),
            Region::Whole => Err(Error::Argument("the split domain has no whole-domain solver".into())),
        }
    }

    pub fn dtn(&self, region: Region) -> Result<&DtNOperator> {
        match region {
            Region::Plus => Ok(&self.dtn_plus),
            Region::Minus => Ok(&self.dtn_minus),
            Region::Whole => Err(Error::Argument("no Dirichlet-to-Neumann map on the whole domain".into())),
        }
    }

    fn shell_zero(&self, region: Region) -> Result<Periodic> {
        let sub = self.subdomain(region)?;
        let side = if sub.gamma_side() == Side::Outer { Side::Hole } else { Side::Outer };
        Ok(sub.zeros(side))
    }

    /// Harmonic field with the given γ data and zero data on the boundary component.
    pub fn solve_dirichlet(&self, region: Region, gamma_data: &Periodic) -> Result<HarmonicField> {
        self.solve_dirichlet_with_shell(region, gamma_data, &self.shell_zero(region)?)
    }

    pub fn solve_dirichlet_with_shell(&self, region: Region, gamma_data: &Periodic, shell: &Periodic) -> Result<HarmonicField> {
        self.subdomain(region)?.solve_gamma_shell(gamma_data, shell)
    }

    /// Harmonic field with normal derivative `q` on γ and zero data on the boundary component.
    pub fn solve_neumann(&self, region: Region, q: &Periodic) -> Result<HarmonicField> {
        let g = self.dtn(region)?.neumann_to_dirichlet(q)?;
        self.solve_dirichlet(region, &g)
    }

    /// `W_γ^±`: one on γ, zero on the adjacent boundary component.
    pub fn harmonic_measure(&self, region: Region) -> Result<HarmonicField> {
        let ones = Periodic::constant(1.0, self.gamma.len(), self.gamma.length);
        self.solve_dirichlet(region, &ones)
    }

    /// Region containing an interior point: Ω⁻ inside γ, Ω⁺ outside.
    pub fn region_of(&self, z: C64) -> Result<Region> {
        if !self.domain.contains(z) {
            return Err(Error::Domain(format!("({}, {}) is not in Ω", z.re, z.im)));
        }
        Ok(if self.gamma.contains(z) { Region::Minus } else { Region::Plus })
    }
}

/// Harmonic `h` with `h = 0` on the inner and `h = 1` on the outer boundary component.
#[derive(Debug)]
pub struct ConformalPotential {
    pub field: HarmonicField,
    /// `∮ ∂_ν h ds` through any separating curve.
    pub flux: f64,
    /// Ratio `b/a` of the conformally equivalent annulus, from `ln(b/a) = 2π/flux`.
    pub modulus: f64,
}

pub fn conformal_potential(domain: &DomainSpec) -> Result<ConformalPotential> {
    let sub = Arc::new(Subdomain::new(Region::Whole, domain.outer.clone(), domain.inner.clone())?);
    let one = Periodic::constant(1.0, domain.outer.len(), domain.outer.length);
    let zero = Periodic::constant(0.0, domain.inner.len(), domain.inner.length);
    let field = sub.solve(&one, &zero)?;
    let flux = field.flux();
    Ok(ConformalPotential { modulus: (2.0 * PI / flux).exp(), flux, field })
}

/// Trace `{h = ½}` along the conformal angle and resample it to `n` nodes at uniform arc length.
///
/// The level curve is followed with the ODE `dz/dθ = iA/F'(z)` for the analytic completion
/// `F = Φ + A·log(z − c)` of `h`, so uniform steps in `θ` are uniform in the conjugate function and
/// the samples are those of an analytic periodic parametrisation. Each predictor step is
/// corrected by complex Newton on `F(z) = F(z₀) + iAθ`.
pub fn extract_gamma(domain: &DomainSpec, potential: &ConformalPotential, n: usize) -> Result<ClosedCurve> {
    let field = &potential.field;
    let a = field.log_coeff;
    let c = field.log_center();
    let scale = domain.diameter();
    let start = level_start(domain, field)?;
    let max_step = domain.outer.length / 512.0;
    let mut steps = (4 * n).max(512).next_power_of_two();
    loop {
        let samples = trace_level(field, a, c, start, steps, scale)?;
        let longest = (0..steps).map(|j| (samples[(j + 1) % steps] - samples[j]).norm()).fold(0.0, f64::max);
        if longest <= max_step || steps >= 1 << 15 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = samples.iter().map(|z| (z.re, z.im)).unzip();
            return ClosedCurve::from_samples(&xs, &ys, n);
        }
        steps *= 2;
    }
}

fn level_start(domain: &DomainSpec, field: &HarmonicField) -> Result<C64> {
    let c = field.log_center();
    let dir = C64::new(1.0, 0.0);
    let reach = domain.diameter() * 2.0;
    let crossing = |inside: &dyn Fn(C64) -> bool, from: f64| -> f64 {
        let mut lo = from;
        let mut hi = reach;
        let probes = 4096;
        for i in 1..=probes {
            let r = from + (reach - from) * i as f64 / probes as f64;
            if !inside(c + dir * r) {
                hi = r;
                break;
            }
            lo = r;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if inside(c + dir * mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let r_hole = crossing(&|z| domain.inner.contains(z), 0.0);
    let r_outer = crossing(&|z| domain.outer.contains(z), r_hole);
    let (mut lo, mut hi) = (r_hole, r_outer);
    let span = hi - lo;
    lo += 1e-6 * span;
    hi -= 1e-6 * span;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if field.value(c + dir * mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = c + dir * (0.5 * (lo + hi));
    for _ in 0..20 {
        let jet = field.jet(z);
        let g = C64::new(jet.grad[0], jet.grad[1]);
        let dz = g * ((jet.value - 0.5) / g.norm_sqr());
        z -= dz;
        if dz.norm() < 1e-14 * domain.diameter() {
            break;
        }
    }
    Ok(z)
}

fn trace_level(field: &HarmonicField, a: f64, c: C64, start: C64, steps: usize, scale: f64) -> Result<Vec<C64>> {
    let rhs = |z: C64| {
        let (_, fp) = field.analytic_parts(z);
        C64::i() * a / fp
    };
    // F with the logarithm continued from a reference argument
    let f_at = |z: C64, arg_ref: f64| -> (C64, C64, f64) {
        let (phi, fp) = field.analytic_parts(z);
        let d = z - c;
        let mut arg = d.arg();
        arg += 2.0 * PI * ((arg_ref - arg) / (2.0 * PI)).round();
        (phi + C64::new(d.norm().ln(), arg) * a, fp, arg)
    };
    let dtheta = 2.0 * PI / steps as f64;
    let (f0, _, arg0) = f_at(start, (start - c).arg());
    let mut z = start;
    let mut arg = arg0;
    let mut out = Vec::with_capacity(steps);
    out.push(start);
    for k in 1..=steps {
        let k1 = rhs(z);
        let k2 = rhs(z + k1 * (0.5 * dtheta));
        let k3 = rhs(z + k2 * (0.5 * dtheta));
        let k4 = rhs(z + k3 * dtheta);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dtheta / 6.0);
        let target = f0 + C64::new(0.0, a * dtheta * k as f64);
        let mut converged = false;
        for _ in 0..30 {
            let (fz, fp, new_arg) = f_at(z, arg);
            let dz = (fz - target) / fp;
            z -= dz;
            if dz.norm() < 1e-12 * scale {
                arg = f_at(z, new_arg).2;
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Extraction("Newton corrector did not converge on the level set".into()));
        }
        if k < steps {
            out.push(z);
        }
    }
    let gap = (z - start).norm();
    if gap > 1e-10 * scale {
        return Err(Error::Extraction(format!("traced level curve fails to close by {gap:.3e}")));
    }
    Ok(out)
}

/// Outcome of the reflection test across γ.
#[derive(Clone, Debug, Serialize)]
pub struct ReflectionReport {
    /// `max |∂_n u⁺ + ∂_n u⁻|` over all Dirichlet cases.
    pub dirichlet_defect: f64,
    /// `max |u⁺ − u⁻|` on γ for Neumann data `±q`.
    pub neumann_defect: f64,
    pub cases: usize,
    pub per_case: Vec<f64>,
}

/// Random trigonometric polynomial of degree ≤ `degree` sampled on γ.
pub fn random_trig_data(rng: &mut ChaCha8Rng, n: usize, period: f64, degree: usize) -> Periodic {
    let coeffs: Vec<(f64, f64)> = (0..=degree).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    Periodic::from_fn(n, period, |s| {
        let th = 2.0 * PI * s / period;
        coeffs.iter().enumerate().map(|(m, (a, b))| a * (m as f64 * th).cos() + b * (m as f64 * th).sin()).sum()
    })
}

/// Test `∂_n u⁺ + ∂_n u⁻ = 0` for equal Dirichlet traces and `u⁺ = u⁻` for opposite Neumann data.
pub fn verify_reflection(split: &SplitDomain, cases: usize, seed: u64) -> Result<ReflectionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = split.gamma.len();
    let period = split.gamma.length;
    let mut per_case = Vec::with_capacity(cases);
    let mut neumann_defect: f64 = 0.0;
    for case in 0..cases {
        let g = if case == 0 { Periodic::constant(1.0, n, period) } else { random_trig_data(&mut rng, n, period, 6) };
        let dp = split.dtn_plus.apply(&g);
        let dm = split.dtn_minus.apply(&g);
        per_case.push(dp.zip_with(&dm, |a, b| a + b).max_abs());
        let q = random_trig_data(&mut rng, n, period, 6);
        let up = split.dtn_plus.neumann_to_dirichlet(&q)?;
        let um = split.dtn_minus.neumann_to_dirichlet(&q.scale(-1.0))?;
        neumann_defect = neumann_defect.max(up.zip_with(&um, |a, b| a - b).max_abs());
    }
    Ok(ReflectionReport {
        dirichlet_defect: per_case.iter().copied().fold(0.0, f64::max),
        neumann_defect,
        cases,
        per_case,
    })
}
