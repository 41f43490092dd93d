//! Matching data on the interface curve γ and the composite outer fields.
//!
//! Every `±` formula is evaluated with the data of both subdomains. Quantities that the harmonic
//! identities force to coincide are averaged, and the side disagreement is kept as an error
//! estimate. Everything that does not depend on `λ` lives in [`MatchingSetup`] and is reused
//! across a sweep.

use crate::error::{Error, Result};
use crate::geometry::{tube_width, ClosedCurve, DomainSpec, FermiChart};
use crate::laplace::{
    conformal_potential, extract_gamma, second_third_normal_derivs, ConformalPotential, HarmonicField, Region, SplitDomain,
};
use crate::profile::{tabulate_constants, AbTable, LayerBasis, Phi2Inputs, XGrid};
use crate::spectral::Periodic;
use crate::C64;
use serde::Serialize;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

/// Relative side disagreement of `λμ` above which matching is rejected.
pub const SIDE_TOLERANCE: f64 = 1e-6;

/// Root of `2 ln(√2/λ) + 2 ln Γ = Γ` on the large branch.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Gamma1 {
    pub value: f64,
    /// `2 ln(√2/λ) + 2 ln ln(√2/λ) + 2 ln 2`
    pub asymptote: f64,
    /// `|2 ln(√2/λ) + 2 ln Γ − Γ|` at the returned root.
    pub residual: f64,
    pub iterations: usize,
}

pub fn solve_gamma1(lambda: f64) -> Result<Gamma1> {
    if !(lambda > 0.0 && lambda < 0.05) {
        return Err(Error::Argument(format!("λ = {lambda} outside (0, 0.05)")));
    }
    let a = 2.0 * (SQRT_2 / lambda).ln();
    let g = |x: f64| a + 2.0 * x.ln() - x;
    let mut x = a + 2.0 * a.ln();
    let mut iterations = 0;
    for _ in 0..60 {
        iterations += 1;
        let step = g(x) / (2.0 / x - 1.0);
        x -= step;
        if step.abs() <= 4.0 * f64::EPSILON * x {
            break;
        }
    }
    let asymptote = a + 2.0 * (0.5 * a).ln() + 2.0 * 2f64.ln();
    Ok(Gamma1 { value: x, asymptote, residual: g(x).abs(), iterations })
}

/// One value per subdomain.
#[derive(Clone, Debug)]
pub struct Pair<T> {
    pub plus: T,
    pub minus: T,
}

impl<T> Pair<T> {
    pub fn get(&self, region: Region) -> &T {
        match region {
            Region::Minus => &self.minus,
            _ => &self.plus,
        }
    }

    pub fn map<U>(&self, f: impl Fn(Region, &T) -> U) -> Pair<U> {
        Pair { plus: f(Region::Plus, &self.plus), minus: f(Region::Minus, &self.minus) }
    }
}

impl<T: Send> Pair<T> {
    /// Evaluate `f` for both regions concurrently.
    pub fn build(f: impl Fn(Region) -> Result<T> + Sync) -> Result<Self> {
        let (plus, minus) = rayon::join(|| f(Region::Plus), || f(Region::Minus));
        Ok(Self { plus: plus?, minus: minus? })
    }
}

/// `+1` on Ω⁺, `−1` on Ω⁻.
pub fn side_sign(region: Region) -> f64 {
    if region == Region::Minus {
        -1.0
    } else {
        1.0
    }
}

fn average(p: &Pair<Periodic>) -> Periodic {
    p.plus.zip_with(&p.minus, |a, b| 0.5 * (a + b))
}

fn sup(p: &Periodic) -> f64 {
    p.max_abs()
}

fn pair_sup(p: &Pair<HarmonicField>) -> f64 {
    // maximum principle: the sup over Ω^± is attained on γ, the other boundary carries zero data
    sup(p.plus.gamma_trace()).max(sup(p.minus.gamma_trace()))
}

#[derive(Clone, Debug)]
pub struct SetupOptions {
    /// Nodes on the extracted interface.
    pub gamma_nodes: usize,
    /// Half-width of the layer grid in the stretched variable.
    pub layer_reach: f64,
    /// Two values of `λμ` at which the far-field constants are tabulated.
    pub table_scales: [f64; 2],
}

impl Default for SetupOptions {
    fn default() -> Self {
        Self { gamma_nodes: 128, layer_reach: 40.0, table_scales: [8.0, 16.0] }
    }
}

/// The `λ`-independent part of the construction on one domain.
pub struct MatchingSetup {
    pub domain: DomainSpec,
    pub potential: ConformalPotential,
    pub split: SplitDomain,
    pub chart: FermiChart,
    pub curvature: Periodic,
    /// Harmonic measures `W_γ^±`.
    pub harmonic: Pair<HarmonicField>,
    /// `∂_n W_γ^±` on γ.
    pub dn_harmonic: Pair<Periodic>,
    pub w0: Pair<HarmonicField>,
    pub w1: Pair<HarmonicField>,
    pub dn_w1: Pair<Periodic>,
    pub basis: Arc<LayerBasis>,
    pub table: AbTable,
}

impl std::fmt::Debug for MatchingSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatchingSetup").field("gamma_nodes", &self.gamma().len()).field("delta0", &self.chart.delta0).finish()
    }
}

impl MatchingSetup {
    pub fn new(domain: DomainSpec, options: &SetupOptions) -> Result<Self> {
        let potential = conformal_potential(&domain)?;
        let gamma = extract_gamma(&domain, &potential, options.gamma_nodes)?;
        Self::with_gamma(domain, potential, gamma, options)
    }

    /// Setup on a prescribed interface (used for perturbation experiments).
    pub fn with_gamma(domain: DomainSpec, potential: ConformalPotential, gamma: ClosedCurve, options: &SetupOptions) -> Result<Self> {
        let delta0 = tube_width(&gamma, &domain)?;
        let chart = FermiChart::new(gamma.clone(), delta0)?;
        let curvature = gamma.curvature().clone();
        let basis_job = || -> Result<(Arc<LayerBasis>, AbTable)> {
            let basis = Arc::new(LayerBasis::new(XGrid::covering(options.layer_reach))?);
            let table = tabulate_constants(&basis, options.table_scales)?;
            Ok((basis, table))
        };
        let split = SplitDomain::new(domain.clone(), gamma)?;
        let harmonic_job = || -> Result<_> {
            let harmonic = Pair::build(|r| split.harmonic_measure(r))?;
            let dn_harmonic = harmonic.map(|_, h| h.normal_derivative_on_gamma());
            for region in [Region::Plus, Region::Minus] {
                let sgn = side_sign(region);
                let dn = dn_harmonic.get(region);
                if let Some(j) = dn.values.iter().position(|&v| !(sgn * v > 0.0)) {
                    return Err(Error::Hopf(format!("±∂_n W_γ = {} at node {j} of {region:?}", sgn * dn.values[j])));
                }
            }
            let w0 = Pair::build(|r| split.solve_neumann(r, &curvature.scale(2.0)))?;
            let w1 = Pair::build(|r| {
                let sgn = side_sign(r);
                split.solve_dirichlet(r, &dn_harmonic.get(r).map(|v| 2.0 * (sgn * v).ln()))
            })?;
            let dn_w1 = w1.map(|_, w| w.normal_derivative_on_gamma());
            Ok((harmonic, dn_harmonic, w0, w1, dn_w1))
        };
        let (fields, layer) = rayon::join(harmonic_job, basis_job);
        let (harmonic, dn_harmonic, w0, w1, dn_w1) = fields?;
        let (basis, table) = layer?;
        Ok(Self { domain, potential, split, chart, curvature, harmonic, dn_harmonic, w0, w1, dn_w1, basis, table })
    }

    pub fn gamma(&self) -> &ClosedCurve {
        &self.split.gamma
    }
}

/// `W₂^±` with its γ traces.
#[derive(Clone, Debug)]
pub struct OuterField {
    pub region: Region,
    pub field: HarmonicField,
    pub trace: Periodic,
    /// `∂_t` on γ, `t` along `n` (into Ω⁻).
    pub dt: Periodic,
    pub dtt: Periodic,
    pub dttt: Periodic,
}

impl OuterField {
    fn new(field: HarmonicField, k: &Periodic) -> Self {
        let trace = field.gamma_trace().clone();
        let dt = field.normal_derivative_on_gamma();
        let (dtt, dttt) = second_third_normal_derivs(&trace, &dt, k);
        Self { region: field.region(), field, trace, dt, dtt, dttt }
    }

    pub fn value(&self, z: C64) -> f64 {
        self.field.value(z)
    }

    /// Cubic Taylor polynomial in `t` at γ node `j`.
    pub fn taylor(&self, j: usize, t: f64) -> f64 {
        self.trace.values[j] + t * self.dt.values[j] + t * t / 2.0 * self.dtt.values[j] + t * t * t / 6.0 * self.dttt.values[j]
    }
}

/// Exact-arithmetic identities on γ, measured as sup norms.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Identities {
    pub w0_sum: f64,
    pub dn_w1_sum: f64,
    pub w2_difference: f64,
    pub w3_sum: f64,
    pub dn_w2_sum: f64,
}

impl Identities {
    pub fn worst(&self) -> f64 {
        [self.w0_sum, self.dn_w1_sum, self.w2_difference, self.w3_sum, self.dn_w2_sum].into_iter().fold(0.0, f64::max)
    }
}

/// Relative disagreement of quantities computed from the two sides.
#[derive(Clone, Debug, Default, Serialize)]
pub struct SideSpread {
    pub lambda_mu: f64,
    pub f1: f64,
    pub f: f64,
    pub delta1: f64,
    pub delta2: f64,
}

/// The two leading bracket lines of the outer traces seen from the layer.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Brackets {
    /// `2 ln(2μ) ∓ √2λμf − (Γ₁ + w₀ + w₁ + w₃)`, worst over both sides.
    pub value_line: f64,
    /// `(λμ)⁻¹(±(k/√2)λ²μ²f² − 2kλμf ± √2Δ₁λμf − 2Δ₁ ∓ E₁) − w₂`, worst over both sides.
    pub delta_line: f64,
}

/// Second and third wall derivatives compared with their closed forms.
#[derive(Clone, Debug, Default, Serialize)]
pub struct WallChecks {
    pub harmonic_tt: f64,
    pub harmonic_ttt: f64,
    pub w1_tt: f64,
    pub w0_w3_tt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldNorms {
    pub lambda_mu_min: f64,
    pub lambda_mu_max: f64,
    pub f: f64,
    pub f1: f64,
    pub h: f64,
    pub delta1: f64,
    pub e1: f64,
    pub delta2: f64,
    pub e2: f64,
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub r_defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchReport {
    pub lambda: f64,
    pub gamma1: Gamma1,
    pub log_inverse_lambda: f64,
    pub norms: FieldNorms,
    pub identities: Identities,
    pub side_spread: SideSpread,
    pub brackets: Brackets,
    pub wall: WallChecks,
    pub table: AbTable,
}

/// Full matching data for one `λ`.
#[derive(Clone, Debug)]
pub struct MatchedData {
    pub lambda: f64,
    pub gamma1: Gamma1,
    pub curvature: Periodic,
    /// `λμ`, averaged over the sides.
    pub lambda_mu: Periodic,
    pub mu: Periodic,
    /// `μ'/μ`, `μ''/μ`
    pub m1: Periodic,
    pub m2: Periodic,
    pub f1: Periodic,
    pub h: Periodic,
    pub f: Periodic,
    pub f_s: Periodic,
    pub f_ss: Periodic,
    pub delta1: Periodic,
    pub e1: Periodic,
    pub delta2: Periodic,
    pub e2: Periodic,
    pub r_defect: Periodic,
    pub w0: Pair<HarmonicField>,
    pub w1: Pair<HarmonicField>,
    pub w2: Pair<HarmonicField>,
    pub w3: Pair<HarmonicField>,
    pub w4: Pair<HarmonicField>,
    pub outer: Pair<OuterField>,
    pub report: MatchReport,
}

fn relative_spread(p: &Pair<Periodic>, scale: f64) -> f64 {
    p.plus.zip_with(&p.minus, |a, b| a - b).max_abs() / scale.max(f64::MIN_POSITIVE)
}

/// Neumann data of `w₃` on one side, from the leading `f₁`.
#[allow(clippy::too_many_arguments)]
fn w3_neumann(t: &AbTable, sgn: f64, lm: f64, m1: f64, m2: f64, k: f64, f1: f64, f1s: f64, f1ss: f64, dw1: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = t.b;
    let il = 1.0 / lm;
    let il2 = il * il;
    let rhs = 2.0 * il * m2 * f1 - 2.0 * il * m1 * m1 * f1 - 2.0 * il * k * k * f1
        + b1 * il * f1ss
        + b2 * il * m1 * f1s
        + b3 * il2 * k * (-sgn * dw1 / SQRT_2 - k * lm * f1)
        + b4 * il * k * k * f1
        + b5 * il2
            * (lm * f1 * dw1 * dw1 / SQRT_2 + sgn * 1.5 * k * lm * lm * f1 * f1 * dw1 + k * k * lm.powi(3) * f1.powi(3) / SQRT_2);
    lm * rhs
}

/// Defect of the one-shot `w₃` equation when `f₁` is replaced by `f = f₁ + h`.
#[allow(clippy::too_many_arguments)]
fn w3_defect(t: &AbTable, sgn: f64, lm: f64, m1: f64, m2: f64, k: f64, f1: f64, h: f64, hs: f64, hss: f64, dw1: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = t.b;
    let il = 1.0 / lm;
    -2.0 * il * m2 * h + 2.0 * il * m1 * m1 * h + 2.0 * il * k * k * h - b1 * il * hss - b2 * il * m1 * hs + b3 * il * k * k * h
        - b4 * il * k * k * h
        - sgn * 1.5 * b5 * k * (2.0 * f1 * h + h * h) * dw1
        - b5 / SQRT_2 * k * k * lm * (h.powi(3) + 3.0 * f1 * h * h + 3.0 * f1 * f1 * h)
}

/// Pointwise `E₂`.
#[allow(clippy::too_many_arguments)]
pub fn e2_formula(lm: f64, m1: f64, m2: f64, k: f64, f: f64, fs: f64, fss: f64, d1: f64, d2: f64) -> f64 {
    -(SQRT_2 / 3.0) * lm * k * k * f.powi(3) + (SQRT_2 / 6.0) * lm * m2 * f.powi(3) - d1 * k * f * f / SQRT_2
        + SQRT_2 * lm * m1 * fs * f * f
        + lm * fss * f * f / SQRT_2
        + lm * k * k * f.powi(3) / SQRT_2
        + SQRT_2 * d2 * lm * f
}

/// Pointwise Dirichlet data of `w₄`.
#[allow(clippy::too_many_arguments)]
pub fn w4_formula(t: &AbTable, lm: f64, m1: f64, m2: f64, k: f64, f: f64, fs: f64, fss: f64, d1: f64, e1: f64, d2: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = t.b;
    let il = 1.0 / lm;
    -m2 * f * f + m1 * m1 * f * f + k * k * f * f - b1 * fss * f - b2 * m1 * fs * f - b3 * il * d1 * k * f - b4 * k * k * f * f
        - b5 * il * d1 * e1 * f
        + t.a2_combination(lm, m2, k, fs, d1, e1)
        - 2.0 * d2
}

impl MatchedData {
    pub fn new(setup: &MatchingSetup, lambda: f64) -> Result<Self> {
        let gamma1 = solve_gamma1(lambda)?;
        let g1 = gamma1.value;
        let split = &setup.split;
        let k = setup.curvature.clone();
        let n = k.len();
        let t = &setup.table;

        let lm_side = setup.dn_harmonic.map(|r, dn| dn.scale(side_sign(r) * g1 / SQRT_2));
        let lm = average(&lm_side);
        let lm_scale = lm.max_abs();
        let mut spread = SideSpread { lambda_mu: relative_spread(&lm_side, lm_scale), ..Default::default() };
        if spread.lambda_mu > SIDE_TOLERANCE {
            return Err(Error::Matching(format!("λμ differs between the sides by {:.3e} (relative)", spread.lambda_mu)));
        }
        let mu = lm.scale(1.0 / lambda);
        let m1 = lm.derivative(1).zip_with(&lm, |d, v| d / v);
        let m2 = lm.derivative(2).zip_with(&lm, |d, v| d / v);

        let w0_trace = setup.w0.map(|_, w| w.gamma_trace().clone());
        let f1_side = w0_trace.map(|r, w| w.zip_with(&lm, |a, l| -side_sign(r) * a / (SQRT_2 * l)));
        let f1 = average(&f1_side);
        let f1_scale = f1.max_abs().max(1.0 / lm_scale);
        spread.f1 = relative_spread(&f1_side, f1_scale);
        let f1_s = f1.derivative(1);
        let f1_ss = f1.derivative(2);

        let w2 = Pair::build(|r| {
            let data = setup.dn_w1.get(r).zip_with(setup.dn_harmonic.get(r), |a, b| 2.0 / g1 * a / b);
            split.solve_dirichlet(r, &data)
        })?;
        let w3 = Pair::build(|r| {
            let sgn = side_sign(r);
            let dw1 = setup.dn_w1.get(r);
            let q = Periodic::new(
                (0..n)
                    .map(|j| {
                        w3_neumann(
                            t,
                            sgn,
                            lm.values[j],
                            m1.values[j],
                            m2.values[j],
                            k.values[j],
                            f1.values[j],
                            f1_s.values[j],
                            f1_ss.values[j],
                            dw1.values[j],
                        )
                    })
                    .collect(),
                k.period,
            );
            split.solve_neumann(r, &q)
        })?;

        let w3_trace = w3.map(|_, w| w.gamma_trace().clone());
        let h_side = w3_trace.map(|r, w| w.zip_with(&lm, |a, l| -side_sign(r) * a / (SQRT_2 * l)));
        let h = average(&h_side);
        let f = f1.zip_with(&h, |a, b| a + b);
        let f_side = f1_side.map(|r, a| a.zip_with(h_side.get(r), |x, y| x + y));
        spread.f = relative_spread(&f_side, f1_scale);
        let f_s = f.derivative(1);
        let f_ss = f.derivative(2);
        let (h_s, h_ss) = (h.derivative(1), h.derivative(2));

        let r_side = setup.dn_w1.map(|r, dw1| {
            let sgn = side_sign(r);
            Periodic::new(
                (0..n)
                    .map(|j| {
                        w3_defect(
                            t,
                            sgn,
                            lm.values[j],
                            m1.values[j],
                            m2.values[j],
                            k.values[j],
                            f1.values[j],
                            h.values[j],
                            h_s.values[j],
                            h_ss.values[j],
                            dw1.values[j],
                        )
                    })
                    .collect(),
                k.period,
            )
        });
        let r_defect = average(&r_side);

        let d1_side = setup.dn_w1.map(|r, dw1| {
            Periodic::new((0..n).map(|j| -k.values[j] * lm.values[j] * f.values[j] - side_sign(r) * dw1.values[j] / SQRT_2).collect(), k.period)
        });
        let delta1 = average(&d1_side);
        let d1_scale = delta1.max_abs().max(1.0);
        spread.delta1 = relative_spread(&d1_side, d1_scale);
        let e1 = Periodic::new(
            (0..n)
                .map(|j| {
                    let (l, ff) = (lm.values[j], f.values[j]);
                    k.values[j] * l * l * ff * ff / SQRT_2 + SQRT_2 * delta1.values[j] * l * ff
                })
                .collect(),
            k.period,
        );

        let dn_w2 = w2.map(|_, w| w.normal_derivative_on_gamma());
        let d2_side = dn_w2.map(|r, dw2| {
            Periodic::new(
                (0..n)
                    .map(|j| {
                        let (l, ff) = (lm.values[j], f.values[j]);
                        -0.5 * m2.values[j] * ff * ff + delta1.values[j] * k.values[j] * ff / l
                            - 2.0 * m1.values[j] * f_s.values[j] * ff
                            - f_ss.values[j] * ff
                            - side_sign(r) * dw2.values[j] / (SQRT_2 * l)
                    })
                    .collect(),
                k.period,
            )
        });
        let delta2 = average(&d2_side);
        spread.delta2 = relative_spread(&d2_side, delta2.max_abs().max(1.0 / lm_scale.powi(2)));
        if spread.f > SIDE_TOLERANCE || spread.delta1 > SIDE_TOLERANCE {
            return Err(Error::Matching(format!("side disagreement: f {:.3e}, Δ₁ {:.3e}", spread.f, spread.delta1)));
        }
        let e2 = Periodic::new(
            (0..n)
                .map(|j| {
                    e2_formula(
                        lm.values[j],
                        m1.values[j],
                        m2.values[j],
                        k.values[j],
                        f.values[j],
                        f_s.values[j],
                        f_ss.values[j],
                        delta1.values[j],
                        delta2.values[j],
                    )
                })
                .collect(),
            k.period,
        );
        let w4_data = Periodic::new(
            (0..n)
                .map(|j| {
                    w4_formula(
                        t,
                        lm.values[j],
                        m1.values[j],
                        m2.values[j],
                        k.values[j],
                        f.values[j],
                        f_s.values[j],
                        f_ss.values[j],
                        delta1.values[j],
                        e1.values[j],
                        delta2.values[j],
                    )
                })
                .collect(),
            k.period,
        );
        let w4 = Pair::build(|r| split.solve_dirichlet(r, &w4_data))?;

        let outer = Pair::build(|r| {
            let parts = [
                (g1, setup.harmonic.get(r)),
                (1.0, setup.w0.get(r)),
                (1.0, setup.w1.get(r)),
                (1.0, w2.get(r)),
                (1.0, w3.get(r)),
                (1.0, w4.get(r)),
            ];
            Ok(OuterField::new(HarmonicField::combine(&parts)?, &k))
        })?;

        let identities = Identities {
            w0_sum: w0_trace.plus.zip_with(&w0_trace.minus, |a, b| a + b).max_abs(),
            dn_w1_sum: setup.dn_w1.plus.zip_with(&setup.dn_w1.minus, |a, b| a + b).max_abs(),
            w2_difference: w2.plus.gamma_trace().zip_with(w2.minus.gamma_trace(), |a, b| a - b).max_abs(),
            w3_sum: w3_trace.plus.zip_with(&w3_trace.minus, |a, b| a + b).max_abs(),
            dn_w2_sum: dn_w2.plus.zip_with(&dn_w2.minus, |a, b| a + b).max_abs(),
        };

        let mut brackets = Brackets::default();
        for r in [Region::Plus, Region::Minus] {
            let sgn = side_sign(r);
            let w1t = setup.w1.get(r).gamma_trace();
            let w2t = w2.get(r).gamma_trace();
            for j in 0..n {
                let (l, ff, kj, d1, ee) = (lm.values[j], f.values[j], k.values[j], delta1.values[j], e1.values[j]);
                let outer_value = g1 + w0_trace.get(r).values[j] + w1t.values[j] + w3_trace.get(r).values[j];
                let line1 = 2.0 * (2.0 * mu.values[j]).ln() - sgn * SQRT_2 * l * ff - outer_value;
                let line2 = (sgn * kj / SQRT_2 * l * l * ff * ff - 2.0 * kj * l * ff + sgn * SQRT_2 * d1 * l * ff - 2.0 * d1 - sgn * ee) / l
                    - w2t.values[j];
                brackets.value_line = brackets.value_line.max(line1.abs());
                brackets.delta_line = brackets.delta_line.max(line2.abs());
            }
        }

        let mut wall = WallChecks::default();
        for r in [Region::Plus, Region::Minus] {
            let sgn = side_sign(r);
            let hm = setup.harmonic.get(r);
            let (htt, httt) = second_third_normal_derivs(hm.gamma_trace(), setup.dn_harmonic.get(r), &k);
            let w1f = setup.w1.get(r);
            let (w1tt, _) = second_third_normal_derivs(w1f.gamma_trace(), setup.dn_w1.get(r), &k);
            let w03 = w0_trace.get(r).zip_with(w3_trace.get(r), |a, b| a + b);
            let dn03 = setup.w0.get(r).normal_derivative_on_gamma().zip_with(&w3.get(r).normal_derivative_on_gamma(), |a, b| a + b);
            let (w03tt, _) = second_third_normal_derivs(&w03, &dn03, &k);
            let [b1, b2, b3, b4, b5] = t.b;
            for j in 0..n {
                let (l, kj, ff) = (lm.values[j], k.values[j], f.values[j]);
                let (mm1, mm2) = (m1.values[j], m2.values[j]);
                let (d1, ee) = (delta1.values[j], e1.values[j]);
                let il = 1.0 / l;
                let il2 = il * il;
                let a = -0.5 * il2 * g1 * htt.values[j] - (-sgn * il * kj / SQRT_2);
                // (W_γ)_ttt·Γ₁ = ∓√2λμ'' ± 2√2k²λμ, with λμ'' = λμ·m2
                let b = g1 * httt.values[j] - sgn * (-SQRT_2 * l * mm2 + 2.0 * SQRT_2 * kj * kj * l);
                let c = -0.5 * il2 * w1tt.values[j]
                    - (mm2 * il2 - mm1 * mm1 * il2 + sgn * kj * kj * il * ff / SQRT_2 + sgn * kj * il2 * d1 / SQRT_2);
                let bracket = -2.0 * kj * mm2 * ff + 2.0 * kj * mm1 * mm1 * ff + 2.0 * kj.powi(3) * ff - b1 * kj * f_ss.values[j]
                    - b2 * kj * mm1 * f_s.values[j]
                    - b3 * il * d1 * kj * kj
                    - b4 * kj.powi(3) * ff
                    - b5 * il * d1 * ee * kj
                    - kj * r_side.get(r).values[j];
                let rhs = -sgn * il * mm2 * ff / SQRT_2 - sgn * il * f_ss.values[j] / SQRT_2 - sgn * SQRT_2 * il * mm1 * f_s.values[j]
                    - il2 * kj * kj
                    + 0.5 * il2 * bracket;
                let d = -0.5 * il2 * w03tt.values[j] - rhs;
                wall.harmonic_tt = wall.harmonic_tt.max(a.abs());
                wall.harmonic_ttt = wall.harmonic_ttt.max(b.abs());
                wall.w1_tt = wall.w1_tt.max(c.abs());
                wall.w0_w3_tt = wall.w0_w3_tt.max(d.abs());
            }
        }

        let norms = FieldNorms {
            lambda_mu_min: lm.values.iter().copied().fold(f64::INFINITY, f64::min),
            lambda_mu_max: lm.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            f: sup(&f),
            f1: sup(&f1),
            h: sup(&h),
            delta1: sup(&delta1),
            e1: sup(&e1),
            delta2: sup(&delta2),
            e2: sup(&e2),
            w0: pair_sup(&setup.w0),
            w1: pair_sup(&setup.w1),
            w2: pair_sup(&w2),
            w3: pair_sup(&w3),
            w4: pair_sup(&w4),
            r_defect: sup(&r_defect),
        };
        let report = MatchReport {
            lambda,
            gamma1,
            log_inverse_lambda: (1.0 / lambda).ln(),
            norms,
            identities,
            side_spread: spread,
            brackets,
            wall,
            table: t.clone(),
        };
        Ok(Self {
            lambda,
            gamma1,
            curvature: k,
            lambda_mu: lm,
            mu,
            m1,
            m2,
            f1,
            h,
            f,
            f_s,
            f_ss,
            delta1,
            e1,
            delta2,
            e2,
            r_defect,
            w0: setup.w0.clone(),
            w1: setup.w1.clone(),
            w2,
            w3,
            w4,
            outer,
            report,
        })
    }

    /// Inputs of the second layer correction.
    pub fn phi2_inputs(&self) -> Phi2Inputs {
        Phi2Inputs {
            lambda_mu: self.lambda_mu.clone(),
            m1: self.m1.clone(),
            m2: self.m2.clone(),
            k: self.curvature.clone(),
            f: self.f.clone(),
            f_s: self.f_s.clone(),
            f_ss: self.f_ss.clone(),
            delta1: self.delta1.clone(),
            e1: self.e1.clone(),
            delta2: self.delta2.clone(),
            e2: self.e2.clone(),
        }
    }

    /// Named boundary fields for tabular output, `+` side traces for the harmonic pieces.
    pub fn boundary_columns(&self) -> Vec<(&'static str, Periodic)> {
        let tr = |p: &Pair<HarmonicField>, r: Region| p.get(r).gamma_trace().clone();
        vec![
            ("k", self.curvature.clone()),
            ("lambda_mu", self.lambda_mu.clone()),
            ("mu", self.mu.clone()),
            ("f1", self.f1.clone()),
            ("h", self.h.clone()),
            ("f", self.f.clone()),
            ("delta1", self.delta1.clone()),
            ("e1", self.e1.clone()),
            ("delta2", self.delta2.clone()),
            ("e2", self.e2.clone()),
            ("r_defect", self.r_defect.clone()),
            ("w0_plus", tr(&self.w0, Region::Plus)),
            ("w0_minus", tr(&self.w0, Region::Minus)),
            ("w1", tr(&self.w1, Region::Plus)),
            ("w2", tr(&self.w2, Region::Plus)),
            ("w3_plus", tr(&self.w3, Region::Plus)),
            ("w3_minus", tr(&self.w3, Region::Minus)),
            ("w4", tr(&self.w4, Region::Plus)),
            ("outer_plus", self.outer.plus.trace.clone()),
            ("outer_minus", self.outer.minus.trace.clone()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FourierCurve;
    use std::f64::consts::LN_2;
    use std::sync::OnceLock;

    fn annulus_setup() -> &'static MatchingSetup {
        static SETUP: OnceLock<MatchingSetup> = OnceLock::new();
        SETUP.get_or_init(|| {
            let domain = DomainSpec::from_fourier(&FourierCurve::circle(0.0, 0.0, 4.0), &FourierCurve::circle(0.0, 0.0, 1.0), 64).unwrap();
            MatchingSetup::new(domain, &SetupOptions { gamma_nodes: 64, ..Default::default() }).unwrap()
        })
    }

    #[test]
    fn gamma1_against_fixed_point_iteration() {
        let g = solve_gamma1(1e-3).unwrap();
        let a = 2.0 * (SQRT_2 / 1e-3).ln();
        let mut x = 20.0;
        for _ in 0..200 {
            x = a + 2.0 * f64::ln(x);
        }
        assert!((g.value - x).abs() < 1e-12, "{} vs {x}", g.value);
        assert!((g.value - 20.554).abs() < 1e-3);
        assert!(g.residual <= 1e-12);
    }

    #[test]
    fn gamma1_approaches_its_asymptote_monotonically() {
        let gaps: Vec<f64> = [1e-3, 1e-4, 1e-6, 1e-8].iter().map(|&l| {
            let g = solve_gamma1(l).unwrap();
            g.value - g.asymptote
        }).collect();
        for w in gaps.windows(2) {
            assert!(w[1].abs() < w[0].abs(), "{gaps:?}");
        }
    }

    #[test]
    fn gamma1_rejects_large_lambda() {
        assert!(matches!(solve_gamma1(0.05), Err(Error::Argument(_))));
        assert!(matches!(solve_gamma1(-1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn annulus_oracle_chain() {
        let setup = annulus_setup();
        let m = MatchedData::new(setup, 1e-3).unwrap();
        let g1 = m.gamma1.value;
        let dn_w = 1.0 / (2.0 * LN_2);
        let lm = g1 * dn_w / SQRT_2;
        let w1 = 2.0 * dn_w.ln();
        // w₁⁺ = w1·ln(4/r)/ln2 on 2 < r < 4, so ∂_n = −∂_r gives w1/(2 ln 2)
        let dn_w1 = w1 / (2.0 * LN_2);
        let w2 = 2.0 / g1 * dn_w1 / dn_w;
        let f1 = -2.0 * LN_2 / (SQRT_2 * lm);
        for j in 0..m.f.len() {
            assert!((m.lambda_mu.values[j] - lm).abs() < 1e-8);
            assert!((m.f1.values[j] - f1).abs() < 1e-9);
            assert!((setup.w1.plus.gamma_trace().values[j] - w1).abs() < 1e-12);
            assert!((setup.dn_w1.plus.values[j] - dn_w1).abs() < 1e-8);
            assert!((m.w2.plus.gamma_trace().values[j] - w2).abs() < 1e-8);
        }
        assert!((lm - 10.485).abs() < 2e-3);
        assert!((w2 + 0.0635).abs() < 1e-3);
        assert!((f1 + 0.0935).abs() < 1e-3);

        // the w₃ Neumann data keeps only the b₃, b₅ terms when every s-derivative vanishes
        let k = 0.5;
        let [_, _, b3, _, b5] = setup.table.b;
        let d1_lead = -k * lm * f1 - dn_w1 / SQRT_2;
        let q = lm * (b3 / (lm * lm) * k * d1_lead
            + b5 / (lm * lm) * (lm * f1 * dn_w1 * dn_w1 / SQRT_2 + 1.5 * k * lm * lm * f1 * f1 * dn_w1 + k * k * lm.powi(3) * f1.powi(3) / SQRT_2));
        // w₃⁺ = q·2 ln(4/r) solves ∂_n w = q on r = 2 with zero data at r = 4
        let w3 = q * 2.0 * LN_2;
        let h = -w3 / (SQRT_2 * lm);
        let f = f1 + h;
        let d1 = -k * lm * f - dn_w1 / SQRT_2;
        let e1 = k * lm * lm * f * f / SQRT_2 + SQRT_2 * d1 * lm * f;
        // w₂⁺ = w2·ln(4/r)/ln 2
        let dn_w2 = w2 / (2.0 * LN_2);
        let d2 = d1 * k * f / lm - dn_w2 / (SQRT_2 * lm);
        let [_, _, a3, a4, a5, a6] = setup.table.a;
        let b4 = setup.table.b[3];
        let il = 1.0 / lm;
        let w4 = k * k * f * f - b3 * il * d1 * k * f - b4 * k * k * f * f - b5 * il * d1 * e1 * f
            + il * il * (a3 * k * k + a4 * d1 * d1 + a5 * e1 * e1 + a6 * k * e1)
            - 2.0 * d2;
        for j in 0..m.f.len() {
            assert!((m.w3.plus.gamma_trace().values[j] - w3).abs() < 1e-8);
            assert!((m.f.values[j] - f).abs() < 1e-8);
            assert!((m.delta1.values[j] - d1).abs() < 1e-8);
            assert!((m.e1.values[j] - e1).abs() < 1e-8);
            assert!((m.delta2.values[j] - d2).abs() < 1e-8);
            assert!((m.w4.plus.gamma_trace().values[j] - w4).abs() < 1e-8);
        }
        assert!((d1_lead - 0.824).abs() < 2e-3, "{d1_lead}");
        let outer = g1 + 2.0 * LN_2 + w1 + w2 + w3 + w4;
        assert!((m.outer.plus.trace.values[0] - outer).abs() < 1e-8);
        assert!((outer - 21.22).abs() < 0.05, "{outer}");
    }

    #[test]
    fn annulus_identities_and_brackets() {
        let m = MatchedData::new(annulus_setup(), 1e-3).unwrap();
        let r = &m.report;
        assert!(r.identities.worst() < 1e-8, "{:?}", r.identities);
        assert!(r.brackets.value_line < 1e-8 * m.gamma1.value, "{:?}", r.brackets);
        assert!(r.brackets.delta_line < 1e-8 * m.gamma1.value, "{:?}", r.brackets);
        assert!(r.wall.harmonic_tt < 1e-6 && r.wall.w1_tt < 1e-6, "{:?}", r.wall);
        assert!(r.wall.harmonic_ttt < 1e-6 && r.wall.w0_w3_tt < 1e-6, "{:?}", r.wall);
        assert!(r.side_spread.lambda_mu < 1e-9);
    }

    #[test]
    fn outer_field_vanishes_on_the_outer_wall() {
        let m = MatchedData::new(annulus_setup(), 1e-4).unwrap();
        for j in 0..100 {
            let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.37) / 100.0;
            let z = C64::from_polar(4.0, th);
            assert!(m.outer.plus.value(z).abs() < 1e-8);
            let z = C64::from_polar(1.0, th);
            assert!(m.outer.minus.value(z).abs() < 1e-8);
        }
    }

    #[test]
    fn e2_and_w4_vanish_on_zero_data() {
        let t = &annulus_setup().table;
        assert_eq!(e2_formula(10.0, 0.3, 0.2, 0.5, 0.0, 0.0, 0.0, 0.7, 0.1), 0.0);
        assert_eq!(w4_formula(t, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), 0.0);
    }
}
