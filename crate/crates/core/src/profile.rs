//! One-dimensional layer profile `V₀`, the linearised operator `L ψ = ψ'' + e^{V₀}ψ`, and the
//! layer corrections built from it.
//!
//! Every correction is a finite sum `Σ_b C_b(s)·R_b(x)` of universal responses `R_b` (fixed
//! functions of `x`, computed once) with coefficient fields `C_b` on γ. Responses to decaying
//! sources come from variation of constants; the few polynomially growing ones are closed-form
//! combinations of those, so far-field polynomials are known exactly per response.

use crate::error::{Error, Result};
use crate::spectral::{Periodic, TrigBasis, TrigSeries};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

pub fn v0(x: f64) -> f64 {
    // −2 ln cosh(x/√2), written to stay finite for large |x|
    let a = (x / SQRT_2).abs();
    -2.0 * (a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
}

pub fn v0_x(x: f64) -> f64 {
    -SQRT_2 * (x / SQRT_2).tanh()
}

pub fn exp_v0(x: f64) -> f64 {
    let c = (x / SQRT_2).cosh();
    1.0 / (c * c)
}

pub fn v0_xx(x: f64) -> f64 {
    -exp_v0(x)
}

fn exp_v0_x(x: f64) -> f64 {
    // (e^{V₀})' = V₀'·e^{V₀}
    v0_x(x) * exp_v0(x)
}

/// `2 ln μ + V₀(μ(x − shift))`, the two-parameter family of profiles.
#[derive(Clone, Copy, Debug)]
pub struct ShiftedProfile {
    pub mu: f64,
    pub shift: f64,
}

impl ShiftedProfile {
    pub fn new(mu: f64, shift: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Argument(format!("profile scale must be positive, got {mu}")));
        }
        Ok(Self { mu, shift })
    }

    pub fn value(&self, x: f64) -> f64 {
        2.0 * self.mu.ln() + v0(self.mu * (x - self.shift))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.mu * v0_x(self.mu * (x - self.shift))
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.mu * self.mu * v0_xx(self.mu * (x - self.shift))
    }

    /// `v'' + e^v`, zero up to rounding.
    pub fn residual(&self, x: f64) -> f64 {
        self.second_derivative(x) + self.value(x).exp()
    }
}

/// Kernel solutions `y₁ = V₀'` (odd) and `y₂ = xV₀' + 2` (even) of `L`.
pub struct HomogeneousPair;

impl HomogeneousPair {
    pub const WRONSKIAN: f64 = 2.0;

    pub fn y1(x: f64) -> f64 {
        v0_x(x)
    }

    pub fn y1_x(x: f64) -> f64 {
        v0_xx(x)
    }

    pub fn y2(x: f64) -> f64 {
        x * v0_x(x) + 2.0
    }

    pub fn y2_x(x: f64) -> f64 {
        v0_x(x) + x * v0_xx(x)
    }

    pub fn wronskian(x: f64) -> f64 {
        Self::y1(x) * Self::y2_x(x) - Self::y1_x(x) * Self::y2(x)
    }
}

use HomogeneousPair as Hp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Parity {
    Even,
    Odd,
}

/// Symmetric uniform grid `x_i = −X + i·h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XGrid {
    pub half_width: f64,
    pub step: f64,
}

impl XGrid {
    pub const DEFAULT_STEP: f64 = 1.0 / 32.0;

    /// Smallest grid with the default step covering `[−reach, reach]` and at least `[−40, 40]`.
    pub fn covering(reach: f64) -> Self {
        let h = Self::DEFAULT_STEP;
        let x = reach.max(40.0);
        Self { half_width: (x / h).ceil() * h, step: h }
    }

    pub fn len(&self) -> usize {
        (2.0 * self.half_width / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    fn center(&self) -> usize {
        self.len() / 2
    }

    fn cell(&self, x: f64) -> usize {
        (((x + self.half_width) / self.step).floor().max(0.0) as usize).min(self.len() - 2)
    }

    pub fn contains(&self, x: f64) -> bool {
        x.abs() <= self.half_width * (1.0 + 1e-14)
    }
}

const GL_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// Eight-point Gauss–Legendre rule on `[a, b]` applied to two integrands sharing evaluations of `g`.
fn gauss_pair(a: f64, b: f64, g: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = (0.0, 0.0);
    for k in 0..4 {
        for sign in [-1.0, 1.0] {
            let x = mid + sign * half * GL_NODES[k];
            let gx = g(x);
            acc.0 += GL_WEIGHTS[k] * Hp::y1(x) * gx;
            acc.1 += GL_WEIGHTS[k] * Hp::y2(x) * gx;
        }
    }
    (acc.0 * half, acc.1 * half)
}

/// Eight-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for k in 0..4 {
        acc += GL_WEIGHTS[k] * (f(mid - half * GL_NODES[k]) + f(mid + half * GL_NODES[k]));
    }
    acc * half
}

pub type Source = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Variation-of-constants solution of `L ψ = g` for a decaying `g` of definite parity.
///
/// With `I₁ = ∫₀ˣ y₁g`, `I₂ = ∫₀ˣ y₂g` the particular solution is `ψ_p = (y₂I₁ − y₁I₂)/2`.
/// The stored solution is normalised as the member of the one-parameter family with free
/// constant zero; the free constant enters through [`LinearSolution::free_response`].
pub struct LinearSolution {
    pub grid: XGrid,
    pub parity: Parity,
    source: Source,
    i1: Vec<f64>,
    i2: Vec<f64>,
    /// `∫_{−∞}^0 y₁g`
    pub p1: f64,
    /// `∫_{−∞}^0 y₂g`
    pub p2: f64,
    hom: f64,
}

impl std::fmt::Debug for LinearSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSolution").field("parity", &self.parity).field("p1", &self.p1).field("p2", &self.p2).finish()
    }
}

pub fn solve_linearized(g: Source, parity: Parity, grid: XGrid) -> Result<LinearSolution> {
    let n = grid.len();
    let nodes = grid.nodes();
    let scale = nodes.iter().fold(0.0_f64, |m, &x| m.max(g(x).abs()));
    if scale == 0.0 {
        return Ok(LinearSolution { grid, parity, source: g, i1: vec![0.0; n], i2: vec![0.0; n], p1: 0.0, p2: 0.0, hom: 0.0 });
    }
    let sign = if parity == Parity::Even { 1.0 } else { -1.0 };
    let asym = nodes.iter().fold(0.0_f64, |m, &x| m.max((g(x) - sign * g(-x)).abs()));
    if asym > 1e-12 * scale {
        return Err(Error::Parity(format!("source is not {parity:?}: defect {:.3e}", asym / scale)));
    }
    let x_end = grid.half_width;
    let (edge, inner) = (g(-x_end).abs().max(g(x_end).abs()), g(-0.5 * x_end).abs().max(g(0.5 * x_end).abs()));
    if edge > 1e-10 * scale || (inner > 0.0 && edge > 1e-3 * inner) {
        return Err(Error::Precondition(format!(
            "source does not decay on the grid: |g(±X)|/max|g| = {:.3e}",
            edge / scale
        )));
    }
    let c = grid.center();
    let mut i1 = vec![0.0; n];
    let mut i2 = vec![0.0; n];
    for i in c..n - 1 {
        let (a, b) = gauss_pair(nodes[i], nodes[i + 1], g.as_ref());
        i1[i + 1] = i1[i] + a;
        i2[i + 1] = i2[i] + b;
    }
    for i in (1..=c).rev() {
        let (a, b) = gauss_pair(nodes[i - 1], nodes[i], g.as_ref());
        i1[i - 1] = i1[i] - a;
        i2[i - 1] = i2[i] - b;
    }
    // tail beyond −X, integrand ~ e^{√2x}
    let tail1 = Hp::y1(-x_end) * g(-x_end) / SQRT_2;
    let tail2 = Hp::y2(-x_end) * g(-x_end) / SQRT_2;
    let p1 = -i1[0] + tail1;
    let p2 = -i2[0] + tail2;
    let hom = match parity {
        Parity::Even => 0.5 * p1,
        Parity::Odd => (p1 - p2 / SQRT_2) / SQRT_2,
    };
    Ok(LinearSolution { grid, parity, source: g, i1, i2, p1, p2, hom })
}

impl LinearSolution {
    fn integrals(&self, x: f64) -> Result<(f64, f64)> {
        if !self.grid.contains(x) {
            return Err(Error::Coverage(x));
        }
        let j = self.grid.cell(x);
        let xj = self.grid.node(j);
        let (a, b) = gauss_pair(xj, x, self.source.as_ref());
        Ok((self.i1[j] + a, self.i2[j] + b))
    }

    /// `(ψ, ψ', ψ'')` at `x`.
    pub fn eval(&self, x: f64) -> Result<[f64; 3]> {
        let (i1, i2) = self.integrals(x)?;
        let mut v = 0.5 * (Hp::y2(x) * i1 - Hp::y1(x) * i2);
        let mut d = 0.5 * (Hp::y2_x(x) * i1 - Hp::y1_x(x) * i2);
        match self.parity {
            Parity::Even => {
                v += self.hom * Hp::y2(x);
                d += self.hom * Hp::y2_x(x);
            }
            Parity::Odd => {
                v += self.hom * Hp::y1(x);
                d += self.hom * Hp::y1_x(x);
            }
        }
        Ok([v, d, (self.source)(x) - exp_v0(x) * v])
    }

    pub fn source(&self, x: f64) -> f64 {
        (self.source)(x)
    }

    /// Derivative of the solution with respect to its free constant (`Δ` when even, `E` when odd).
    pub fn free_response(&self, x: f64) -> [f64; 2] {
        match self.parity {
            Parity::Even => [-Hp::y2(x), -Hp::y2_x(x)],
            Parity::Odd => [-Hp::y1(x) / SQRT_2, -Hp::y1_x(x) / SQRT_2],
        }
    }

    /// `[slope, constant]` of the linear far field at `−∞` (free constant zero).
    pub fn far_field_left(&self) -> [f64; 2] {
        match self.parity {
            Parity::Even => [0.0, self.p2 / SQRT_2],
            Parity::Odd => [-self.p1 / SQRT_2, 0.0],
        }
    }
}

/// Linear-plus-constant far-field fit after removing known cubic and quadratic parts.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FarField {
    pub cubic: f64,
    pub quadratic: f64,
    pub linear: f64,
    pub constant: f64,
    /// Measured exponential decay rate of the fit residual (`inf` when it sits at rounding level).
    pub rate: f64,
    pub fit_residual: f64,
}

pub fn far_field_extract(xs: &[f64], ys: &[f64], cubic: f64, quadratic: f64) -> Result<FarField> {
    if xs.len() != ys.len() || xs.len() < 6 {
        return Err(Error::Argument("far-field fit needs at least six matched samples".into()));
    }
    let r: Vec<f64> = xs.iter().zip(ys).map(|(&x, &y)| y - cubic * x * x * x - quadratic * x * x).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let rm = r.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxr: f64 = xs.iter().zip(&r).map(|(x, v)| (x - xm) * (v - rm)).sum();
    let linear = sxr / sxx;
    let constant = rm - linear * xm;
    let res: Vec<f64> = xs.iter().zip(&r).map(|(&x, &v)| v - linear * x - constant).collect();
    let fit_residual = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let magnitude = ys.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = 1e-11 * (1.0 + magnitude);
    let rate = if fit_residual <= floor {
        f64::INFINITY
    } else {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].abs().total_cmp(&xs[b].abs()));
        let third = order.len() / 3;
        let near = &order[..third];
        let far = &order[order.len() - third..];
        let peak = |idx: &[usize]| idx.iter().fold(0.0_f64, |m, &i| m.max(res[i].abs()));
        let centre = |idx: &[usize]| idx.iter().map(|&i| xs[i].abs()).sum::<f64>() / idx.len() as f64;
        let (rn, rf) = (peak(near), peak(far).max(floor * 1e-3));
        (rn / rf).ln() / (centre(far) - centre(near))
    };
    if rate < 1.0 {
        return Err(Error::FarField(format!(
            "fit residual {fit_residual:.3e} does not decay exponentially (rate {rate:.3})"
        )));
    }
    Ok(FarField { cubic, quadratic, linear, constant, rate, fit_residual })
}

/// Decaying sources whose responses form the numerical part of the basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Decaying {
    X2E,
    XE,
    E,
    EUU,
    EUY2,
    EUY1,
    EY2Y2,
    EY2Y1,
    EY1Y1,
}

impl Decaying {
    pub const ALL: [Decaying; 9] = [
        Decaying::X2E,
        Decaying::XE,
        Decaying::E,
        Decaying::EUU,
        Decaying::EUY2,
        Decaying::EUY1,
        Decaying::EY2Y2,
        Decaying::EY2Y1,
        Decaying::EY1Y1,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|&d| d == self).unwrap()
    }

    pub fn parity(self) -> Parity {
        match self {
            Decaying::XE | Decaying::EUY2 | Decaying::EY2Y1 => Parity::Odd,
            _ => Parity::Even,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        let e = exp_v0(x);
        let u = closed_u1(x);
        match self {
            Decaying::X2E => x * x * e,
            Decaying::XE => x * e,
            Decaying::E => e,
            Decaying::EUU => e * u * u,
            Decaying::EUY2 => e * u * Hp::y2(x),
            Decaying::EUY1 => e * u * Hp::y1(x),
            Decaying::EY2Y2 => e * Hp::y2(x) * Hp::y2(x),
            Decaying::EY2Y1 => e * Hp::y2(x) * Hp::y1(x),
            Decaying::EY1Y1 => e * Hp::y1(x) * Hp::y1(x),
        }
    }
}

/// Closed form `U₁ = x²V₀'/2 + 2x`, the odd solution of `L U = V₀'` without constant at `−∞`.
pub fn closed_u1(x: f64) -> f64 {
    0.5 * x * x * v0_x(x) + 2.0 * x
}

/// Universal responses `R` with `L R = source`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Response {
    /// Decaying source, solved numerically.
    Decaying(Decaying),
    /// `x³V₀'/6 + R[x²e^{V₀}]`, responds to `xV₀'`.
    CubicV,
    /// `x²V₀'/2 + 2R[xe^{V₀}]`, responds to `V₀'`.
    U1,
    /// `x²/2 − R[x²e^{V₀}]/2`, responds to the constant 1.
    HalfSquare,
    Y1,
    Y2,
}

impl Response {
    pub fn parity(self) -> Parity {
        match self {
            Response::Decaying(d) => d.parity(),
            Response::CubicV | Response::HalfSquare | Response::Y2 => Parity::Even,
            Response::U1 | Response::Y1 => Parity::Odd,
        }
    }
}

/// The numerical responses on one grid.
#[derive(Debug)]
pub struct LayerBasis {
    pub grid: XGrid,
    solutions: Vec<LinearSolution>,
}

impl LayerBasis {
    pub fn new(grid: XGrid) -> Result<Self> {
        let solutions = Decaying::ALL
            .par_iter()
            .map(|&d| solve_linearized(Arc::new(move |x| d.eval(x)), d.parity(), grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, solutions })
    }

    pub fn solution(&self, d: Decaying) -> &LinearSolution {
        &self.solutions[d.index()]
    }

    /// `(R, R', R'')` at `x`.
    pub fn eval(&self, r: Response, x: f64) -> Result<[f64; 3]> {
        if !self.grid.contains(x) {
            return Err(Error::Coverage(x));
        }
        let (y1, y1x, y1xx) = (v0_x(x), v0_xx(x), -exp_v0_x(x));
        Ok(match r {
            Response::Decaying(d) => self.solution(d).eval(x)?,
            Response::CubicV => {
                let d = self.solution(Decaying::X2E).eval(x)?;
                let c = x * x * x / 6.0;
                [
                    c * y1 + d[0],
                    0.5 * x * x * y1 + c * y1x + d[1],
                    x * y1 + x * x * y1x + c * y1xx + d[2],
                ]
            }
            Response::U1 => {
                let d = self.solution(Decaying::XE).eval(x)?;
                let c = 0.5 * x * x;
                [c * y1 + 2.0 * d[0], x * y1 + c * y1x + 2.0 * d[1], y1 + 2.0 * x * y1x + c * y1xx + 2.0 * d[2]]
            }
            Response::HalfSquare => {
                let d = self.solution(Decaying::X2E).eval(x)?;
                [0.5 * x * x - 0.5 * d[0], x - 0.5 * d[1], 1.0 - 0.5 * d[2]]
            }
            Response::Y1 => [y1, y1x, y1xx],
            Response::Y2 => [x * y1 + 2.0, y1 + x * y1x, 2.0 * y1x + x * y1xx],
        })
    }

    /// Far-field polynomial `[c₃, c₂, c₁, c₀]` of a response at `−∞` or `+∞`.
    pub fn far_field(&self, r: Response, right: bool) -> [f64; 4] {
        let dec = |d: Decaying| {
            let [s, c] = self.solution(d).far_field_left();
            [0.0, 0.0, s, c]
        };
        let add = |a: [f64; 4], b: [f64; 4], w: f64| [a[0] + w * b[0], a[1] + w * b[1], a[2] + w * b[2], a[3] + w * b[3]];
        let left = match r {
            Response::Decaying(d) => dec(d),
            Response::CubicV => add([SQRT_2 / 6.0, 0.0, 0.0, 0.0], dec(Decaying::X2E), 1.0),
            Response::U1 => add([0.0, 1.0 / SQRT_2, 0.0, 0.0], dec(Decaying::XE), 2.0),
            Response::HalfSquare => add([0.0, 0.5, 0.0, 0.0], dec(Decaying::X2E), -0.5),
            Response::Y1 => [0.0, 0.0, 0.0, SQRT_2],
            Response::Y2 => [0.0, 0.0, SQRT_2, 2.0],
        };
        if !right {
            return left;
        }
        match r.parity() {
            Parity::Even => [-left[0], left[1], -left[2], left[3]],
            Parity::Odd => [left[0], -left[1], left[2], -left[3]],
        }
    }
}

/// Derivatives of a layer field at `(s, x)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LayerJet {
    pub v: f64,
    pub v_x: f64,
    pub v_xx: f64,
    pub v_s: f64,
    pub v_ss: f64,
    pub v_sx: f64,
}

/// A layer correction `Σ_b C_b(s)·R_b(x)` with coefficient fields on the γ nodes.
#[derive(Clone)]
pub struct LayerCorrection {
    pub basis: Arc<LayerBasis>,
    pub terms: Vec<(Response, Periodic)>,
    series: Vec<TrigSeries>,
}

impl std::fmt::Debug for LayerCorrection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LayerCorrection").field("terms", &self.terms.iter().map(|t| t.0).collect::<Vec<_>>()).finish()
    }
}

impl LayerCorrection {
    pub fn new(basis: Arc<LayerBasis>, terms: Vec<(Response, Periodic)>) -> Self {
        let series = terms.iter().map(|(_, c)| c.series()).collect();
        Self { basis, terms, series }
    }

    pub fn nodes(&self) -> usize {
        self.terms.first().map_or(0, |t| t.1.len())
    }

    pub fn grid(&self) -> XGrid {
        self.basis.grid
    }

    /// `(φ, φ_x, φ_xx)` at γ node `j`.
    pub fn eval_node(&self, j: usize, x: f64) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (r, c) in &self.terms {
            let cj = c.values[j];
            if cj == 0.0 {
                continue;
            }
            let v = self.basis.eval(*r, x)?;
            for k in 0..3 {
                out[k] += cj * v[k];
            }
        }
        Ok(out)
    }

    /// Full jet at arclength `s`, with spectral `s`-derivatives of the coefficients.
    pub fn eval(&self, s: f64, x: f64) -> Result<LayerJet> {
        let Some((_, first)) = self.terms.first() else { return Ok(LayerJet::default()) };
        let basis = TrigBasis::new(s, 2.0 * std::f64::consts::PI / first.period, first.len() / 2 + 1);
        let mut jet = LayerJet::default();
        for ((r, _), ser) in self.terms.iter().zip(&self.series) {
            let c0 = ser.eval_with(&basis, 0);
            let c1 = ser.eval_with(&basis, 1);
            let c2 = ser.eval_with(&basis, 2);
            let v = self.basis.eval(*r, x)?;
            jet.v += c0 * v[0];
            jet.v_x += c0 * v[1];
            jet.v_xx += c0 * v[2];
            jet.v_s += c1 * v[0];
            jet.v_ss += c2 * v[0];
            jet.v_sx += c1 * v[1];
        }
        Ok(jet)
    }

    /// Samples of `φ` and `φ_x` at node `j` on the whole grid.
    pub fn samples(&self, j: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.grid();
        let mut v = Vec::with_capacity(grid.len());
        let mut d = Vec::with_capacity(grid.len());
        for x in grid.nodes() {
            let e = self.eval_node(j, x)?;
            v.push(e[0]);
            d.push(e[1]);
        }
        Ok((v, d))
    }

    /// Exact far-field polynomial `[c₃, c₂, c₁, c₀]` at node `j`, from the per-response tables.
    pub fn far_field(&self, j: usize, right: bool) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (r, c) in &self.terms {
            let p = self.basis.far_field(*r, right);
            for k in 0..4 {
                out[k] += c.values[j] * p[k];
            }
        }
        out
    }

    /// Numerical far-field fit over `|x| ∈ [0.6X, 0.9X]`, with the exact cubic and quadratic removed.
    pub fn far_field_fit(&self, j: usize, right: bool) -> Result<FarField> {
        let grid = self.grid();
        let known = self.far_field(j, right);
        let sign = if right { 1.0 } else { -1.0 };
        let (lo, hi) = (0.6 * grid.half_width, 0.9 * grid.half_width);
        let count = 97;
        let xs: Vec<f64> = (0..count).map(|i| sign * (lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect();
        let ys = xs.iter().map(|&x| self.eval_node(j, x).map(|v| v[0])).collect::<Result<Vec<_>>>()?;
        far_field_extract(&xs, &ys, known[0], known[1])
    }
}

/// Central eighth-order second difference of grid samples, `None` within four nodes of an end.
pub fn second_difference(values: &[f64], h: f64, i: usize) -> Option<f64> {
    const W: [f64; 5] = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
    if i < 4 || i + 4 >= values.len() {
        return None;
    }
    let mut acc = W[0] * values[i];
    for k in 1..5 {
        acc += W[k] * (values[i + k] + values[i - k]);
    }
    Some(acc / (h * h))
}

/// Max of `|φ'' + e^{V₀}φ − rhs|` over grid nodes with `|x| ≤ reach`, second derivative by
/// finite differences of the samples, relative to `1 + max|rhs| + max|φ|`.
pub fn ode_residual(values: &[f64], grid: XGrid, reach: f64, rhs: &dyn Fn(f64) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for (i, &v) in values.iter().enumerate() {
        let x = grid.node(i);
        if x.abs() > reach {
            continue;
        }
        if let Some(d2) = second_difference(values, grid.step, i) {
            let g = rhs(x);
            scale = scale.max(g.abs()).max(v.abs());
            worst = worst.max((d2 + exp_v0(x) * v - g).abs());
        }
    }
    worst / scale
}

/// `λμφ₁ = k·U₁ − Δ₁y₂ − (E₁/√2)y₁`, solving `L φ₁ = (λμ)⁻¹k V₀'` with the free constants `Δ₁, E₁`.
pub fn build_phi1(basis: Arc<LayerBasis>, k: &Periodic, lambda_mu: &Periodic, delta1: &Periodic, e1: &Periodic) -> Result<LayerCorrection> {
    if lambda_mu.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Argument("λμ must be positive".into()));
    }
    let inv = lambda_mu.map(|v| 1.0 / v);
    let per = |f: &Periodic, w: f64| f.zip_with(&inv, |a, b| w * a * b);
    Ok(LayerCorrection::new(
        basis,
        vec![
            (Response::U1, per(k, 1.0)),
            (Response::Y2, per(delta1, -1.0)),
            (Response::Y1, per(e1, -1.0 / SQRT_2)),
        ],
    ))
}

/// Node fields entering the second correction. Derivatives are supplied, not recomputed, so that
/// synthetic probes can set them independently.
#[derive(Clone, Debug)]
pub struct Phi2Inputs {
    pub lambda_mu: Periodic,
    /// `μ'/μ`
    pub m1: Periodic,
    /// `μ''/μ`
    pub m2: Periodic,
    pub k: Periodic,
    pub f: Periodic,
    pub f_s: Periodic,
    pub f_ss: Periodic,
    pub delta1: Periodic,
    pub e1: Periodic,
    pub delta2: Periodic,
    pub e2: Periodic,
}

impl Phi2Inputs {
    /// All fields constant over `n` nodes of a curve of length `period`.
    pub fn constant(n: usize, period: f64, lambda_mu: f64) -> Self {
        let z = Periodic::constant(0.0, n, period);
        Self {
            lambda_mu: Periodic::constant(lambda_mu, n, period),
            m1: z.clone(),
            m2: z.clone(),
            k: z.clone(),
            f: z.clone(),
            f_s: z.clone(),
            f_ss: z.clone(),
            delta1: z.clone(),
            e1: z.clone(),
            delta2: z.clone(),
            e2: z,
        }
    }

    fn node(&self, j: usize) -> NodeData {
        NodeData {
            lm: self.lambda_mu.values[j],
            m1: self.m1.values[j],
            m2: self.m2.values[j],
            k: self.k.values[j],
            f: self.f.values[j],
            fs: self.f_s.values[j],
            fss: self.f_ss.values[j],
            d1: self.delta1.values[j],
            e1: self.e1.values[j],
            d2: self.delta2.values[j],
            e2: self.e2.values[j],
        }
    }
}

#[derive(Clone, Copy)]
struct NodeData {
    lm: f64,
    m1: f64,
    m2: f64,
    k: f64,
    f: f64,
    fs: f64,
    fss: f64,
    d1: f64,
    e1: f64,
    d2: f64,
    e2: f64,
}

impl NodeData {
    /// Coefficients of each response in `φ₂`.
    fn phi2_coefficients(&self) -> Vec<(Response, f64)> {
        let &NodeData { lm, m1, m2, k, f, fs, fss, d1, e1, d2, e2 } = self;
        let (il, il2) = (1.0 / lm, 1.0 / (lm * lm));
        let r2 = SQRT_2;
        use Decaying as D;
        vec![
            (Response::Decaying(D::X2E), il2 * (m1 * m1 - 0.5 * k * k)),
            (Response::Decaying(D::XE), -2.0 * il * m1 * fs + il2 * k * d1),
            (Response::Decaying(D::E), fs * fs + il2 * k * e1 / r2),
            (Response::CubicV, il2 * (-m2 + 2.0 * k * k)),
            (Response::U1, 2.0 * il * m1 * fs + il * fss + il * k * k * f - il2 * k * d1),
            (Response::HalfSquare, il2 * (-2.0 * m2 + 2.0 * m1 * m1 + 2.0 * k * k)),
            (Response::Decaying(D::EUU), -0.5 * il2 * k * k),
            (Response::Decaying(D::EUY2), il2 * k * d1),
            (Response::Decaying(D::EUY1), il2 * k * e1 / r2),
            (Response::Decaying(D::EY2Y2), -0.5 * il2 * d1 * d1),
            (Response::Decaying(D::EY2Y1), -il2 * d1 * e1 / r2),
            (Response::Decaying(D::EY1Y1), -0.25 * il2 * e1 * e1),
            (Response::Y2, -d2),
            (Response::Y1, -e2 / r2),
        ]
    }

    /// `λμφ₁` and its `x`-derivative in closed form.
    fn scaled_phi1(&self, x: f64) -> (f64, f64) {
        let u = closed_u1(x);
        let ux = x * v0_x(x) + 0.5 * x * x * v0_xx(x) + 2.0;
        (
            self.k * u - self.d1 * Hp::y2(x) - self.e1 / SQRT_2 * Hp::y1(x),
            self.k * ux - self.d1 * Hp::y2_x(x) - self.e1 / SQRT_2 * Hp::y1_x(x),
        )
    }

    /// Right-hand side of the `φ₂` equation, written directly from the expansion of the operator.
    fn phi2_rhs(&self, x: f64) -> f64 {
        let &NodeData { lm, m1, m2, k, f, fs, fss, .. } = self;
        let il2 = 1.0 / (lm * lm);
        let (e, vx) = (exp_v0(x), v0_x(x));
        let (p1, p1x) = self.scaled_phi1(x);
        let a = m1 * x - lm * fs;
        il2 * a * a * e - il2 * (m2 * x - 2.0 * lm * m1 * fs - lm * fss) * vx - 2.0 * il2 * m2 + 2.0 * il2 * m1 * m1
            + il2 * k * p1x
            + il2 * k * k * (x + lm * f) * vx
            - 0.5 * e * il2 * p1 * p1
    }
}

/// Right-hand side of the `φ₂` equation at node `j`.
pub fn phi2_rhs(inputs: &Phi2Inputs, j: usize, x: f64) -> f64 {
    inputs.node(j).phi2_rhs(x)
}

/// Right-hand side of the `φ₁` equation at node `j`.
pub fn phi1_rhs(k: f64, lambda_mu: f64, x: f64) -> f64 {
    k * v0_x(x) / lambda_mu
}

pub fn build_phi2(basis: Arc<LayerBasis>, inputs: &Phi2Inputs) -> Result<LayerCorrection> {
    let n = inputs.lambda_mu.len();
    if inputs.lambda_mu.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Argument("λμ must be positive".into()));
    }
    let per_node: Vec<Vec<(Response, f64)>> = (0..n).map(|j| inputs.node(j).phi2_coefficients()).collect();
    let period = inputs.lambda_mu.period;
    let terms = (0..per_node[0].len())
        .map(|b| (per_node[0][b].0, Periodic::new(per_node.iter().map(|c| c[b].1).collect(), period)))
        .collect();
    Ok(LayerCorrection::new(basis, terms))
}

/// The closed-form cubic and quadratic far-field coefficients of `φ₂` at node `j` (left side).
pub fn phi2_closed_form_leading(inputs: &Phi2Inputs, j: usize) -> [f64; 2] {
    let d = inputs.node(j);
    let (il, il2) = (1.0 / d.lm, 1.0 / (d.lm * d.lm));
    let cubic = -SQRT_2 / 6.0 * il2 * d.m2 + SQRT_2 / 3.0 * il2 * d.k * d.k;
    let quad = -il2 * d.m2 + il2 * d.m1 * d.m1 + d.k * d.k * il2 - il2 * d.d1 * d.k / SQRT_2
        + SQRT_2 * il * d.m1 * d.fs
        + il * d.fss / SQRT_2
        + il * d.k * d.k * d.f / SQRT_2;
    [cubic, quad]
}

/// Constants `a₁…a₆`, `b₁…b₅` of the linear and constant far-field terms of `φ₂`.
#[derive(Clone, Debug, Serialize)]
pub struct AbTable {
    pub a: [f64; 6],
    pub b: [f64; 5],
    pub provenance: String,
    /// Largest disagreement of each constant between the two probe scales.
    pub scale_spread: f64,
}

impl AbTable {
    /// `A₂` of the closed-form expansion.
    pub fn a2_combination(&self, lm: f64, m2: f64, k: f64, fs: f64, d1: f64, e1: f64) -> f64 {
        let il2 = 1.0 / (lm * lm);
        self.a[0] * fs * fs
            + self.a[1] * il2 * m2
            + self.a[2] * il2 * k * k
            + self.a[3] * il2 * d1 * d1
            + self.a[4] * il2 * e1 * e1
            + self.a[5] * il2 * k * e1
    }

    /// `B₂` of the closed-form expansion.
    #[allow(clippy::too_many_arguments)]
    pub fn b2_combination(&self, lm: f64, m1: f64, k: f64, f: f64, fs: f64, fss: f64, d1: f64, e1: f64) -> f64 {
        let (il, il2) = (1.0 / lm, 1.0 / (lm * lm));
        self.b[0] * il * fss + self.b[1] * il * m1 * fs + self.b[2] * il2 * k * d1 + self.b[3] * il * k * k * f + self.b[4] * il2 * d1 * e1
    }
}

/// Far-field left-side `(slope, constant)` of `φ₂` for one synthetic node.
fn probe(basis: &Arc<LayerBasis>, lm: f64, set: &dyn Fn(&mut Phi2Inputs)) -> Result<(f64, f64)> {
    let mut inp = Phi2Inputs::constant(1, 1.0, lm);
    set(&mut inp);
    let phi = build_phi2(basis.clone(), &inp)?;
    let fit = phi.far_field_fit(0, false)?;
    let closed_form = phi2_closed_form_leading(&inp, 0);
    if (fit.cubic - closed_form[0]).abs() > 1e-12 * (1.0 + closed_form[0].abs()) || (fit.quadratic - closed_form[1]).abs() > 1e-12 * (1.0 + closed_form[1].abs()) {
        return Err(Error::FarField("probe leading coefficients disagree with the closed-form expansion".into()));
    }
    Ok((fit.linear, fit.constant))
}

/// Tabulate `aᵢ, bᵢ` by linearity probes: one source term on at a time, the far-field linear and
/// constant coefficients read off by [`far_field_extract`] and divided by the term's prefactor.
/// Repeated at a second scale of `λμ` to certify that the constants do not depend on it.
pub fn tabulate_constants(basis: &Arc<LayerBasis>, scales: [f64; 2]) -> Result<AbTable> {
    let mut tables = Vec::new();
    for &lm in &scales {
        let il = 1.0 / lm;
        let il2 = il * il;
        let (_, a1) = probe(basis, lm, &|p| p.f_s.values[0] = 1.0)?;
        let (_, c) = probe(basis, lm, &|p| p.m2.values[0] = 1.0)?;
        let a2 = c / il2;
        let (_, c) = probe(basis, lm, &|p| p.k.values[0] = 1.0)?;
        let a3 = c / il2;
        let (_, c) = probe(basis, lm, &|p| p.delta1.values[0] = 1.0)?;
        let a4 = c / il2;
        let (_, c) = probe(basis, lm, &|p| p.e1.values[0] = 1.0)?;
        let a5 = c / il2;
        let (_, c) = probe(basis, lm, &|p| {
            p.k.values[0] = 1.0;
            p.e1.values[0] = 1.0;
        })?;
        let a6 = (c - (a3 + a5) * il2) / il2;
        let (b1, _) = probe(basis, lm, &|p| p.f_ss.values[0] = 1.0)?;
        let (b2, _) = probe(basis, lm, &|p| {
            p.m1.values[0] = 1.0;
            p.f_s.values[0] = 1.0;
        })?;
        let (b3, _) = probe(basis, lm, &|p| {
            p.k.values[0] = 1.0;
            p.delta1.values[0] = 1.0;
        })?;
        let (b4, _) = probe(basis, lm, &|p| {
            p.k.values[0] = 1.0;
            p.f.values[0] = 1.0;
        })?;
        let (b5, _) = probe(basis, lm, &|p| {
            p.delta1.values[0] = 1.0;
            p.e1.values[0] = 1.0;
        })?;
        tables.push(([a1, a2, a3, a4, a5, a6], [b1 / il, b2 / il, b3 / il2, b4 / il, b5 / il2]));
    }
    let (a, b) = tables[0];
    let (a_alt, b_alt) = tables[1];
    let spread = a
        .iter()
        .zip(&a_alt)
        .chain(b.iter().zip(&b_alt))
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max);
    Ok(AbTable {
        a,
        b,
        provenance: format!(
            "linearity probes, grid X = {}, step = {}, λμ ∈ {{{}, {}}}, fit window |x| ∈ [0.6X, 0.9X]",
            basis.grid.half_width, basis.grid.step, scales[0], scales[1]
        ),
        scale_spread: spread,
    })
}
