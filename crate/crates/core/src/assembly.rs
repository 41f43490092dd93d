//! Inner layer approximation, the cutoff band and the global approximate solution.
//!
//! Near γ the approximation is `u₂(s,t) = 2 ln μ + V₀(x) + φ₁(s,x) + φ₂(s,x)` with
//! `x = λμ(t − f)`; away from γ it is the harmonic composite `W₂^±`; in between the two are
//! blended with a smooth step in the normal coordinate `t`.

use crate::error::{Error, Result};
use crate::laplace::Region;
use crate::matching::{MatchedData, MatchingSetup};
use crate::profile::{build_phi1, build_phi2, gauss_legendre, v0, v0_x, v0_xx, LayerBasis, LayerCorrection, XGrid};
use crate::spectral::{TrigBasis, TrigSeries};
use crate::C64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

/// Default patch multiplier when the band fits in the tube.
pub const M_DEFAULT: f64 = 4.0;
/// Fraction of the tube half-width the outer band edge may use.
pub const BAND_FILL: f64 = 0.95;

/// Truncation of the inner expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Order {
    /// `2 ln μ + V₀`
    Zero,
    /// plus `φ₁`
    One,
    /// plus `φ₂`
    Two,
}

/// Fermi-coordinate derivatives of a function at `(s, t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FermiJet {
    pub u: f64,
    pub u_t: f64,
    pub u_tt: f64,
    pub u_s: f64,
    pub u_ss: f64,
}

impl FermiJet {
    /// Laplacian in Fermi coordinates, given `k(s)`, `k'(s)` and `t`.
    pub fn laplacian(&self, k: f64, dk: f64, t: f64) -> f64 {
        let j = 1.0 - t * k;
        self.u_tt + self.u_ss / (j * j) + t * dk / (j * j * j) * self.u_s - k / j * self.u_t
    }

    /// Fermi derivatives of a function with Cartesian gradient `g` and Hessian `h = [xx, xy, yy]`.
    pub fn from_cartesian(u: f64, g: [f64; 2], h: [f64; 3], tau: C64, k: f64, dk: f64, t: f64) -> Self {
        let n = C64::i() * tau;
        let j = 1.0 - t * k;
        let dot = |v: C64| g[0] * v.re + g[1] * v.im;
        let quad = |v: C64| h[0] * v.re * v.re + 2.0 * h[1] * v.re * v.im + h[2] * v.im * v.im;
        // y_s = Jτ, y_ss = −tk'τ + Jk·n
        let y_ss = tau * (-t * dk) + n * (j * k);
        Self { u, u_t: dot(n), u_tt: quad(n), u_s: j * dot(tau), u_ss: j * j * quad(tau) + dot(y_ss) }
    }
}

/// `2 ln μ + V₀(x) + φ₁ + φ₂` on the tube around γ.
pub struct InnerApprox {
    pub matched: Arc<MatchedData>,
    pub phi1: LayerCorrection,
    pub phi2: LayerCorrection,
    pub order: Order,
    lambda_mu: TrigSeries,
    f: TrigSeries,
    omega: f64,
    modes: usize,
}

impl std::fmt::Debug for InnerApprox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InnerApprox").field("lambda", &self.matched.lambda).field("order", &self.order).finish()
    }
}

impl InnerApprox {
    /// Build both layer corrections on `basis`, which must cover `|x| ≤ reach`.
    pub fn new(matched: Arc<MatchedData>, basis: Arc<LayerBasis>, order: Order) -> Result<Self> {
        let phi1 = build_phi1(basis.clone(), &matched.curvature, &matched.lambda_mu, &matched.delta1, &matched.e1)?;
        let phi2 = build_phi2(basis, &matched.phi2_inputs())?;
        let lambda_mu = matched.lambda_mu.series();
        let f = matched.f.series();
        let omega = 2.0 * PI / matched.f.period;
        let modes = lambda_mu.modes();
        Ok(Self { matched, phi1, phi2, order, lambda_mu, f, omega, modes })
    }

    pub fn with_order(&self, order: Order) -> Self {
        Self {
            matched: self.matched.clone(),
            phi1: self.phi1.clone(),
            phi2: self.phi2.clone(),
            order,
            lambda_mu: self.lambda_mu.clone(),
            f: self.f.clone(),
            omega: self.omega,
            modes: self.modes,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.matched.lambda
    }

    /// `(λμ, λμ', λμ'')` and `(f, f', f'')` at `s`.
    pub fn scales(&self, s: f64) -> ([f64; 3], [f64; 3]) {
        let b = TrigBasis::new(s, self.omega, self.modes);
        let l = [0, 1, 2].map(|o| self.lambda_mu.eval_with(&b, o));
        let f = [0, 1, 2].map(|o| self.f.eval_with(&b, o));
        (l, f)
    }

    /// Stretched variable `x = λμ(s)(t − f(s))`.
    pub fn stretched(&self, s: f64, t: f64) -> f64 {
        let (l, f) = self.scales(s);
        l[0] * (t - f[0])
    }

    pub fn value(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.jet(s, t)?.u)
    }

    /// `u₂` and its Fermi derivatives, exact in `x` and spectral in `s`.
    pub fn jet(&self, s: f64, t: f64) -> Result<FermiJet> {
        let (l, f) = self.scales(s);
        let tf = t - f[0];
        let x = l[0] * tf;
        let x_s = l[1] * tf - l[0] * f[1];
        let x_ss = l[2] * tf - 2.0 * l[1] * f[1] - l[0] * f[2];
        let (mut p, mut p_x, mut p_xx, mut p_s, mut p_ss, mut p_sx) = (v0(x), v0_x(x), v0_xx(x), 0.0, 0.0, 0.0);
        let mut add = |phi: &LayerCorrection| -> Result<()> {
            let j = phi.eval(s, x)?;
            p += j.v;
            p_x += j.v_x;
            p_xx += j.v_xx;
            p_s += j.v_s;
            p_ss += j.v_ss;
            p_sx += j.v_sx;
            Ok(())
        };
        if self.order != Order::Zero {
            add(&self.phi1)?;
        }
        if self.order == Order::Two {
            add(&self.phi2)?;
        }
        let m1 = l[1] / l[0];
        let m2 = l[2] / l[0];
        Ok(FermiJet {
            u: 2.0 * (l[0] / self.lambda()).ln() + p,
            u_t: l[0] * p_x,
            u_tt: l[0] * l[0] * p_xx,
            u_s: 2.0 * m1 + p_s + p_x * x_s,
            u_ss: 2.0 * (m2 - m1 * m1) + p_ss + 2.0 * p_sx * x_s + p_xx * x_s * x_s + p_x * x_ss,
        })
    }
}

/// Integrated and normalised exponential bump: `0` on `|τ| ≤ 1`, `1` on `|τ| ≥ 2`.
#[derive(Clone, Debug)]
pub struct SmoothStep {
    cumulative: Vec<f64>,
    norm: f64,
}

const STEP_PANELS: usize = 256;

fn bump(a: f64) -> f64 {
    if a <= 1.0 || a >= 2.0 {
        0.0
    } else {
        (-1.0 / ((a - 1.0) * (2.0 - a))).exp()
    }
}

impl Default for SmoothStep {
    fn default() -> Self {
        Self::new()
    }
}

impl SmoothStep {
    pub fn new() -> Self {
        let h = 1.0 / STEP_PANELS as f64;
        let mut cumulative = vec![0.0; STEP_PANELS + 1];
        for i in 0..STEP_PANELS {
            let a = 1.0 + i as f64 * h;
            cumulative[i + 1] = cumulative[i] + gauss_legendre(a, a + h, bump);
        }
        let norm = cumulative[STEP_PANELS];
        Self { cumulative: cumulative.into_iter().map(|c| c / norm).collect(), norm }
    }

    pub fn value(&self, tau: f64) -> f64 {
        let a = tau.abs();
        if a <= 1.0 {
            return 0.0;
        }
        if a >= 2.0 {
            return 1.0;
        }
        let i = (((a - 1.0) * STEP_PANELS as f64).floor() as usize).min(STEP_PANELS - 1);
        let left = 1.0 + i as f64 / STEP_PANELS as f64;
        self.cumulative[i] + gauss_legendre(left, a, bump) / self.norm
    }

    pub fn derivative(&self, tau: f64) -> f64 {
        tau.signum() * bump(tau.abs()) / self.norm
    }

    pub fn second_derivative(&self, tau: f64) -> f64 {
        let a = tau.abs();
        let b = bump(a);
        if b == 0.0 {
            return 0.0;
        }
        let g = (a - 1.0) * (2.0 - a);
        b * (3.0 - 2.0 * a) / (g * g) / self.norm
    }

    /// `max |η'|`, attained at the midpoint by symmetry of the bump.
    pub fn max_slope(&self) -> f64 {
        bump(1.5) / self.norm
    }
}

/// Placement of the blend band `r₁ ≤ |t| ≤ r₂` around γ.
#[derive(Clone, Debug, Serialize)]
pub struct CutoffSpec {
    pub lambda: f64,
    pub m: f64,
    /// `max(4, ⌈2/c⌉)` for the measured outer decay rate `c`.
    pub m_required: f64,
    pub decay_rate: f64,
    pub r1: f64,
    pub r2: f64,
    pub delta0: f64,
    /// Position of the trace radius in `[1, 2]`, `L = l_window·λμ·r₁`.
    pub l_window: f64,
    pub trace_length_min: f64,
    pub trace_length_max: f64,
    /// The required multiplier fits in the tube.
    pub asymptotic: bool,
}

/// `ln ln(1/λ) / ln(1/λ)`
pub fn band_scale(lambda: f64) -> f64 {
    let l = (1.0 / lambda).ln();
    l.ln() / l
}

/// Outer decay rate `c` in `λ²e^{W₂} ≲ (ln 1/λ)^{−cM}`, read off the normal slope `√2λμ` of `W₂` at γ.
pub fn outer_decay_rate(lambda: f64, lambda_mu_min: f64) -> f64 {
    2.0 * SQRT_2 * lambda_mu_min / (1.0 / lambda).ln()
}

/// Largest multiplier whose band fits the tube at `λ`.
pub fn max_feasible_m(lambda: f64, delta0: f64) -> f64 {
    BAND_FILL * delta0 / (2.0 * band_scale(lambda))
}

impl CutoffSpec {
    /// Band for a fixed multiplier; errors if it leaves the tube.
    pub fn with_m(lambda: f64, m: f64, delta0: f64, l_window: f64, lambda_mu_range: [f64; 2]) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::Argument(format!("patch multiplier {m} must be positive")));
        }
        if !(1.0..=2.0).contains(&l_window) {
            return Err(Error::Argument(format!("trace window {l_window} outside [1, 2]")));
        }
        let r1 = m * band_scale(lambda);
        let r2 = 2.0 * r1;
        if r2 > BAND_FILL * delta0 * (1.0 + 1e-12) {
            return Err(Error::LambdaTooLarge(format!(
                "band 2·{m}·ln ln(1/λ)/ln(1/λ) = {r2:.4} exceeds {BAND_FILL}·δ₀ = {:.4} at λ = {lambda:e}; use a smaller λ or a smaller multiplier",
                BAND_FILL * delta0
            )));
        }
        let decay_rate = outer_decay_rate(lambda, lambda_mu_range[0]);
        let m_required = M_DEFAULT.max((2.0 / decay_rate).ceil());
        Ok(Self {
            lambda,
            m,
            m_required,
            decay_rate,
            r1,
            r2,
            delta0,
            l_window,
            trace_length_min: l_window * lambda_mu_range[0] * r1,
            trace_length_max: l_window * lambda_mu_range[1] * r1,
            asymptotic: m >= m_required,
        })
    }

    /// `M = max(4, ⌈2/c⌉)` when it fits; otherwise the largest feasible band flagged as outside
    /// the asymptotic regime, or an error when `strict`.
    pub fn choose(lambda: f64, delta0: f64, l_window: f64, lambda_mu_range: [f64; 2], strict: bool) -> Result<Self> {
        let c = outer_decay_rate(lambda, lambda_mu_range[0]);
        let wanted = M_DEFAULT.max((2.0 / c).ceil());
        let feasible = max_feasible_m(lambda, delta0);
        if wanted <= feasible {
            return Self::with_m(lambda, wanted, delta0, l_window, lambda_mu_range);
        }
        if strict {
            return Err(Error::LambdaTooLarge(format!(
                "M = {wanted} needs band {:.4} but the tube allows {:.4} at λ = {lambda:e}",
                2.0 * wanted * band_scale(lambda),
                BAND_FILL * delta0
            )));
        }
        Self::with_m(lambda, feasible, delta0, l_window, lambda_mu_range)
    }

    /// Trace radius `L/(λμ) = l_window·r₁`.
    pub fn trace_radius(&self) -> f64 {
        self.l_window * self.r1
    }
}

#[derive(Clone, Debug)]
pub struct AssemblyOptions {
    pub m_override: Option<f64>,
    pub l_window: f64,
    pub strict_band: bool,
    pub order: Order,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { m_override: None, l_window: 1.0, strict_band: false, order: Order::Two }
    }
}

/// Which formula the global approximation uses at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Piece {
    Inner,
    Band(Region),
    Outer(Region),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub piece: Piece,
    /// Fermi coordinates when the point lies in the tube.
    pub fermi: Option<(f64, f64)>,
}

/// `u_ap = u₂ + η_λ(t)(W₂^± − u₂)` over all of Ω.
pub struct GlobalApprox {
    pub setup: Arc<MatchingSetup>,
    pub inner: InnerApprox,
    pub cutoff: CutoffSpec,
    pub step: SmoothStep,
}

impl std::fmt::Debug for GlobalApprox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalApprox").field("inner", &self.inner).field("cutoff", &self.cutoff).finish()
    }
}

/// Layer basis covering `1.2·max λμ·(r₂ + max|f|)`, reusing the setup's when it suffices.
fn covering_basis(setup: &MatchingSetup, matched: &MatchedData, r2: f64) -> Result<Arc<LayerBasis>> {
    let reach = 1.2 * matched.lambda_mu.max_abs() * (r2 + matched.f.max_abs());
    if setup.basis.grid.half_width >= reach {
        return Ok(setup.basis.clone());
    }
    Ok(Arc::new(LayerBasis::new(XGrid::covering(reach))?))
}

impl GlobalApprox {
    pub fn new(setup: Arc<MatchingSetup>, matched: Arc<MatchedData>, options: &AssemblyOptions) -> Result<Self> {
        let range = [matched.report.norms.lambda_mu_min, matched.report.norms.lambda_mu_max];
        let delta0 = setup.chart.delta0;
        let cutoff = match options.m_override {
            Some(m) => CutoffSpec::with_m(matched.lambda, m, delta0, options.l_window, range)?,
            None => CutoffSpec::choose(matched.lambda, delta0, options.l_window, range, options.strict_band)?,
        };
        Self::with_cutoff(setup, matched, cutoff, options.order)
    }

    pub fn with_cutoff(setup: Arc<MatchingSetup>, matched: Arc<MatchedData>, cutoff: CutoffSpec, order: Order) -> Result<Self> {
        let basis = covering_basis(&setup, &matched, cutoff.r2)?;
        let inner = InnerApprox::new(matched, basis, order)?;
        Ok(Self { setup, inner, cutoff, step: SmoothStep::new() })
    }

    pub fn lambda(&self) -> f64 {
        self.inner.lambda()
    }

    pub fn matched(&self) -> &MatchedData {
        &self.inner.matched
    }

    /// `η_λ(t)` and its first two `t`-derivatives.
    pub fn eta(&self, t: f64) -> [f64; 3] {
        let r1 = self.cutoff.r1;
        let tau = t / r1;
        [self.step.value(tau), self.step.derivative(tau) / r1, self.step.second_derivative(tau) / (r1 * r1)]
    }

    pub fn piece_at(&self, t: f64) -> Piece {
        let a = t.abs();
        let region = if t < 0.0 { Region::Plus } else { Region::Minus };
        if a <= self.cutoff.r1 {
            Piece::Inner
        } else if a < self.cutoff.r2 {
            Piece::Band(region)
        } else {
            Piece::Outer(region)
        }
    }

    pub fn locate(&self, y: C64) -> Result<Location> {
        if !self.setup.domain.contains(y) {
            return Err(Error::Domain(format!("({}, {}) is not in Ω", y.re, y.im)));
        }
        if let Ok((s, t)) = self.setup.chart.point_to_fermi(y) {
            if t.abs() < self.cutoff.r2 {
                return Ok(Location { piece: self.piece_at(t), fermi: Some((s, t)) });
            }
        }
        let region = self.setup.split.region_of(y)?;
        Ok(Location { piece: Piece::Outer(region), fermi: None })
    }

    pub fn outer_value(&self, region: Region, y: C64) -> f64 {
        self.matched().outer.get(region).value(y)
    }

    /// Fermi jet of `W₂^±` at `(s, t)`.
    pub fn outer_jet(&self, region: Region, s: f64, t: f64) -> FermiJet {
        let gamma = &self.setup.chart.gamma;
        let tau = gamma.tangent(s);
        let y = gamma.point(s) + C64::i() * tau * t;
        let j = self.matched().outer.get(region).field.jet(y);
        FermiJet::from_cartesian(j.value, j.grad, j.hess, tau, gamma.curvature_at(s), gamma.curvature_derivative_at(s), t)
    }

    /// `u_ap` and its Fermi derivatives on the tube `|t| < r₂`.
    pub fn fermi_jet(&self, s: f64, t: f64) -> Result<FermiJet> {
        let inner = self.inner.jet(s, t)?;
        match self.piece_at(t) {
            Piece::Inner => Ok(inner),
            Piece::Band(region) => {
                let w = self.outer_jet(region, s, t);
                let [e, e_t, e_tt] = self.eta(t);
                let d = FermiJet {
                    u: w.u - inner.u,
                    u_t: w.u_t - inner.u_t,
                    u_tt: w.u_tt - inner.u_tt,
                    u_s: w.u_s - inner.u_s,
                    u_ss: w.u_ss - inner.u_ss,
                };
                Ok(FermiJet {
                    u: inner.u + e * d.u,
                    u_t: inner.u_t + e_t * d.u + e * d.u_t,
                    u_tt: inner.u_tt + e_tt * d.u + 2.0 * e_t * d.u_t + e * d.u_tt,
                    u_s: inner.u_s + e * d.u_s,
                    u_ss: inner.u_ss + e * d.u_ss,
                })
            }
            Piece::Outer(_) => Err(Error::OutOfChart(format!("|t| = {} lies beyond the band", t.abs()))),
        }
    }

    pub fn eval(&self, y: C64) -> Result<f64> {
        let loc = self.locate(y)?;
        match (loc.piece, loc.fermi) {
            (Piece::Inner, Some((s, t))) => self.inner.value(s, t),
            (Piece::Band(region), Some((s, t))) => {
                let u2 = self.inner.value(s, t)?;
                let w = self.outer_value(region, y);
                Ok(u2 + self.eta(t)[0] * (w - u2))
            }
            (Piece::Outer(region), _) => Ok(self.outer_value(region, y)),
            _ => Err(Error::OutOfChart("tube point without Fermi coordinates".into())),
        }
    }

    /// Largest `|u₂ − W₂^±|` and `|∂_t(u₂ − W₂^±)|` over `r₁ ≤ |t| ≤ r₂` at every γ node.
    pub fn band_mismatch(&self, radii: usize) -> Result<BandMismatch> {
        let gamma = &self.setup.chart.gamma;
        let (r1, r2) = (self.cutoff.r1, self.cutoff.r2);
        let jobs: Vec<(usize, f64)> = (0..gamma.len())
            .flat_map(|j| {
                (0..radii).flat_map(move |i| {
                    let a = r1 + (r2 - r1) * i as f64 / (radii.max(2) - 1) as f64;
                    [(j, -a), (j, a)]
                })
            })
            .collect();
        let worst = jobs
            .par_iter()
            .map(|&(j, t)| -> Result<[f64; 2]> {
                let s = gamma.param(j);
                let region = if t < 0.0 { Region::Plus } else { Region::Minus };
                let u = self.inner.jet(s, t)?;
                let w = self.outer_jet(region, s, t);
                Ok([(u.u - w.u).abs(), (u.u_t - w.u_t).abs()])
            })
            .try_reduce(|| [0.0, 0.0], |a, b| Ok([a[0].max(b[0]), a[1].max(b[1])]))?;
        Ok(BandMismatch { value: worst[0], slope: worst[1], radii })
    }

    /// `u_ap` on a `nx × ny` grid over the bounding box of Ω; `None` outside Ω.
    pub fn sample_grid(&self, nx: usize, ny: usize) -> GridSamples {
        let nodes = self.setup.domain.outer.nodes();
        let (mut lo, mut hi) = (C64::new(f64::INFINITY, f64::INFINITY), C64::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for z in &nodes {
            lo = C64::new(lo.re.min(z.re), lo.im.min(z.im));
            hi = C64::new(hi.re.max(z.re), hi.im.max(z.im));
        }
        let xs: Vec<f64> = (0..nx).map(|i| lo.re + (hi.re - lo.re) * i as f64 / (nx - 1).max(1) as f64).collect();
        let ys: Vec<f64> = (0..ny).map(|i| lo.im + (hi.im - lo.im) * i as f64 / (ny - 1).max(1) as f64).collect();
        let values = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let y = C64::new(xs[idx % nx], ys[idx / nx]);
                self.eval(y).ok()
            })
            .collect();
        GridSamples { xs, ys, values }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BandMismatch {
    pub value: f64,
    pub slope: f64,
    pub radii: usize,
}

/// Row-major samples, `values[i + nx·j]` at `(xs[i], ys[j])`.
#[derive(Clone, Debug)]
pub struct GridSamples {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, FourierCurve};
    use crate::matching::SetupOptions;
    use std::sync::OnceLock;

    fn annulus() -> &'static (Arc<MatchingSetup>, Arc<MatchedData>) {
        static CELL: OnceLock<(Arc<MatchingSetup>, Arc<MatchedData>)> = OnceLock::new();
        CELL.get_or_init(|| {
            let domain = DomainSpec::from_fourier(&FourierCurve::circle(0.0, 0.0, 4.0), &FourierCurve::circle(0.0, 0.0, 1.0), 64).unwrap();
            let setup = Arc::new(MatchingSetup::new(domain, &SetupOptions { gamma_nodes: 64, ..Default::default() }).unwrap());
            let matched = Arc::new(MatchedData::new(&setup, 1e-3).unwrap());
            (setup, matched)
        })
    }

    fn global() -> GlobalApprox {
        let (setup, matched) = annulus();
        GlobalApprox::new(setup.clone(), matched.clone(), &AssemblyOptions::default()).unwrap()
    }

    #[test]
    fn smooth_step_plateaus_symmetry_and_slope() {
        let st = SmoothStep::new();
        assert_eq!(st.value(0.0), 0.0);
        assert_eq!(st.value(1.0), 0.0);
        assert_eq!(st.value(-2.0), 1.0);
        assert_eq!(st.value(2.5), 1.0);
        let v = st.value(1.5);
        assert!(v > 0.0 && v < 1.0 && (v - st.value(-1.5)).abs() == 0.0);
        assert!((v - 0.5).abs() < 1e-13, "bump symmetry puts η(1.5) at ½: {v}");
        // slope by dense scan against the closed maximum
        let scan = (1..2000).map(|i| st.derivative(1.0 + i as f64 / 2000.0)).fold(0.0, f64::max);
        assert!((scan - st.max_slope()).abs() < 1e-6 && st.max_slope() <= 4.0, "{scan}");
        // derivative of the tabulated value matches the bump
        let (a, h) = (1.37, 1e-5);
        let fd = (st.value(a + h) - st.value(a - h)) / (2.0 * h);
        assert!((fd - st.derivative(a)).abs() < 1e-8);
        let fd2 = (st.derivative(a + h) - st.derivative(a - h)) / (2.0 * h);
        assert!((fd2 - st.second_derivative(a)).abs() < 1e-6);
    }

    #[test]
    fn band_choice_falls_back_when_the_tube_is_thin() {
        let spec = CutoffSpec::choose(1e-3, 0.45, 1.0, [10.0, 10.0], false).unwrap();
        assert!(!spec.asymptotic);
        assert!((spec.r2 - BAND_FILL * 0.45).abs() < 1e-12);
        assert!(matches!(CutoffSpec::choose(1e-3, 0.45, 1.0, [10.0, 10.0], true), Err(Error::LambdaTooLarge(_))));
        // a wide tube admits the default multiplier
        let wide = CutoffSpec::choose(1e-12, 10.0, 1.0, [40.0, 40.0], true).unwrap();
        assert_eq!(wide.m, M_DEFAULT);
        assert!(wide.asymptotic);
    }

    #[test]
    fn inner_value_at_the_layer_centre() {
        let g = global();
        let m = g.matched();
        let s = 0.3;
        let (l, f) = g.inner.scales(s);
        let u = g.inner.value(s, f[0]).unwrap();
        let phi = g.inner.phi1.eval(s, 0.0).unwrap().v + g.inner.phi2.eval(s, 0.0).unwrap().v;
        assert!((u - (2.0 * (l[0] / m.lambda).ln() + phi)).abs() < 1e-12);
        assert!((2.0 * (l[0] / m.lambda).ln() - 18.52).abs() < 0.01);
    }

    #[test]
    fn inner_jet_matches_finite_differences() {
        let (setup, matched) = annulus();
        // perturb λμ and f so that every s-derivative term is active
        let mut m = (**matched).clone();
        let period = m.f.period;
        let w = 2.0 * PI / period;
        m.lambda_mu = m.lambda_mu.zip_with(&crate::spectral::Periodic::from_fn(m.f.len(), period, |s| 1.0 + 0.1 * (w * s).sin()), |a, b| a * b);
        m.f = m.f.zip_with(&crate::spectral::Periodic::from_fn(m.f.len(), period, |s| 0.02 * (2.0 * w * s).cos()), |a, b| a + b);
        let inner = InnerApprox::new(Arc::new(m), setup.basis.clone(), Order::Two).unwrap();
        let (s, t, h) = (1.1, 0.05, 1e-4);
        let j = inner.jet(s, t).unwrap();
        let u = |s: f64, t: f64| inner.value(s, t).unwrap();
        let ut = (u(s, t + h) - u(s, t - h)) / (2.0 * h);
        let utt = (u(s, t + h) - 2.0 * j.u + u(s, t - h)) / (h * h);
        let us = (u(s + h, t) - u(s - h, t)) / (2.0 * h);
        let uss = (u(s + h, t) - 2.0 * j.u + u(s - h, t)) / (h * h);
        assert!((ut - j.u_t).abs() < 1e-6 * (1.0 + j.u_t.abs()), "{ut} {}", j.u_t);
        assert!((utt - j.u_tt).abs() < 1e-4 * (1.0 + j.u_tt.abs()), "{utt} {}", j.u_tt);
        assert!((us - j.u_s).abs() < 1e-6 * (1.0 + j.u_s.abs()), "{us} {}", j.u_s);
        assert!((uss - j.u_ss).abs() < 1e-4 * (1.0 + j.u_ss.abs()), "{uss} {}", j.u_ss);
        // chain rule: u_t = λμ·∂_x of the layer sum
        let (l, _) = inner.scales(s);
        let x = inner.stretched(s, t);
        let px = v0_x(x) + inner.phi1.eval(s, x).unwrap().v_x + inner.phi2.eval(s, x).unwrap().v_x;
        assert!((j.u_t - l[0] * px).abs() < 1e-10 * (1.0 + j.u_t.abs()));
    }

    #[test]
    fn exact_pieces_and_continuity() {
        let g = global();
        let gamma = g.setup.gamma();
        let (r1, r2) = (g.cutoff.r1, g.cutoff.r2);
        for j in [0, 5, 17, 40] {
            let s = gamma.param(j);
            let tau = gamma.tangent(s);
            let at = |t: f64| gamma.point(s) + C64::i() * tau * t;
            let t = 0.5 * r1;
            assert_eq!(g.eval(at(t)).unwrap(), g.inner.value(g.setup.chart.point_to_fermi(at(t)).unwrap().0, g.setup.chart.point_to_fermi(at(t)).unwrap().1).unwrap());
            let y = at(-1.5 * r2);
            assert_eq!(g.eval(y).unwrap(), g.outer_value(Region::Plus, y));
            for edge in [r1, r2] {
                for sgn in [-1.0, 1.0] {
                    let a = g.eval(at(sgn * edge * (1.0 - 1e-6))).unwrap();
                    let b = g.eval(at(sgn * edge * (1.0 + 1e-6))).unwrap();
                    assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "edge {edge} side {sgn}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn vanishes_on_the_boundary() {
        let g = global();
        for j in 0..100 {
            let th = 2.0 * PI * (j as f64 + 0.5) / 100.0;
            for r in [4.0 * (1.0 - 1e-12), 1.0 * (1.0 + 1e-12)] {
                let v = g.eval(C64::from_polar(r, th)).unwrap();
                assert!(v.abs() < 1e-6, "r = {r}: {v}");
            }
        }
        assert!(matches!(g.eval(C64::new(0.2, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn band_fermi_jet_matches_decomposition_pieces() {
        let g = global();
        let s = 0.7;
        let t = -0.5 * (g.cutoff.r1 + g.cutoff.r2);
        let j = g.fermi_jet(s, t).unwrap();
        let gamma = g.setup.gamma();
        let y = gamma.point(s) + gamma.normal(s) * t;
        assert!((j.u - g.eval(y).unwrap()).abs() < 1e-9 * j.u.abs());
    }
}
