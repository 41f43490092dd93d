//! Acceptance suite: one PASS/FAIL line per criterion, with the measured numbers.

use gelfand_core::assembly::{AssemblyOptions, GlobalApprox, Piece};
use gelfand_core::diagnostics::{
    compare_to_oracle, path_agreement, radial_oracle, shared_points, sweep, sweep_multiplier, t_lambda, Branch,
    SweepOptions, SweepReport, TLambdaOptions,
};
use gelfand_core::geometry::{ClosedCurve, DomainSpec, FourierCurve};
use gelfand_core::laplace::{conformal_potential, extract_gamma, verify_reflection, Region, SplitDomain, SOLVER_TOL};
use gelfand_core::matching::{solve_gamma1, MatchedData, MatchingSetup, SetupOptions};
use gelfand_core::profile::{
    build_phi1, build_phi2, exp_v0, ode_residual, phi1_rhs, phi2_closed_form_leading, phi2_rhs, v0, v0_xx, Decaying, HomogeneousPair,
    LayerBasis, Parity, Phi2Inputs, XGrid,
};
use gelfand_core::spectral::Periodic;
use gelfand_core::C64;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;
use std::time::Instant;

const SWEEP: [f64; 5] = [1e-3, 1e-4, 1e-6, 1e-8, 1e-12];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, started: Instant, out: Outcome) -> bool {
    let tag = if out.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} {tag} {title}: {} [{:.1} s]", out.detail, started.elapsed().as_secs_f64());
    out.pass
}

fn annulus_domain(n: usize) -> DomainSpec {
    DomainSpec::from_fourier(&FourierCurve::circle(0.0, 0.0, 4.0), &FourierCurve::circle(0.0, 0.0, 1.0), n).unwrap()
}

fn eccentric_domain(n: usize) -> DomainSpec {
    DomainSpec::from_fourier(&FourierCurve::circle(0.0, 0.0, 4.0), &FourierCurve::circle(0.8, 0.0, 1.0), n).unwrap()
}

fn harmonic_oracle() -> Outcome {
    let domain = annulus_domain(256);
    let pot = conformal_potential(&domain).unwrap();
    let gamma = extract_gamma(&domain, &pot, 256).unwrap();
    let split = SplitDomain::new(domain, gamma).unwrap();
    let l2 = 2f64.ln();
    let mut worst: f64 = 0.0;
    for (region, radii, exact, dn) in [
        (Region::Plus, (2.0, 4.0), Box::new(move |r: f64| (4.0 / r).ln() / l2) as Box<dyn Fn(f64) -> f64>, 1.0 / (2.0 * l2)),
        (Region::Minus, (1.0, 2.0), Box::new(move |r: f64| r.ln() / l2), -1.0 / (2.0 * l2)),
    ] {
        let w = split.harmonic_measure(region).unwrap();
        for i in 1..40 {
            let r = radii.0 + (radii.1 - radii.0) * i as f64 / 40.0;
            for k in 0..16 {
                let z = C64::from_polar(r, 2.0 * PI * k as f64 / 16.0 + 0.1);
                worst = worst.max((w.value(z) - exact(r)).abs());
            }
        }
        worst = worst.max(w.gamma_trace().values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max));
        worst = worst.max(w.normal_derivative_on_gamma().values.iter().map(|v| (v - dn).abs()).fold(0.0, f64::max));
    }
    Outcome { pass: worst <= 1e-6, detail: format!("sup error of W and its normal derivative {worst:.2e} (limit 1e-6)") }
}

fn reflection() -> Outcome {
    let domain = eccentric_domain(256);
    let pot = conformal_potential(&domain).unwrap();
    let gamma = extract_gamma(&domain, &pot, 128).unwrap();
    let good = verify_reflection(&SplitDomain::new(domain.clone(), gamma.clone()).unwrap(), 20, 11).unwrap();
    let bent: ClosedCurve = gamma.normal_perturbation(1e-3, 3).unwrap();
    let bad = verify_reflection(&SplitDomain::new(domain, bent).unwrap(), 20, 11).unwrap();
    let ratio = bad.dirichlet_defect / good.dirichlet_defect;
    Outcome {
        pass: good.dirichlet_defect <= 1e-5 && ratio >= 10.0,
        detail: format!(
            "max |∂ₙu⁺ + ∂ₙu⁻| {:.2e} over 20 cases (limit 1e-5); perturbed γ gives {:.2e}, {ratio:.1e}× worse",
            good.dirichlet_defect, bad.dirichlet_defect
        ),
    }
}

fn gamma1_certificate() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut gaps = Vec::new();
    for l in [1e-3, 1e-4, 1e-6, 1e-8] {
        let g = solve_gamma1(l).unwrap();
        worst = worst.max((2.0 * (SQRT_2 / l).ln() + 2.0 * g.value.ln() - g.value).abs());
        gaps.push(g.value - g.asymptote);
    }
    let ok = gaps.iter().all(|&d| d > 0.0) && gaps.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: worst <= 1e-12 && ok,
        detail: format!("fixed-point residual {worst:.1e}; Γ₁ minus asymptote {:?}", gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>()),
    }
}

/// Numerov on `[−40, 40]` with Dirichlet values from the far field.
fn numerov(g: &dyn Fn(f64) -> f64, left: f64, right: f64) -> Vec<(f64, f64)> {
    let (a, h) = (40.0, 1.0 / 64.0);
    let n = (2.0 * a / h) as usize;
    let xs: Vec<f64> = (0..=n).map(|i| -a + i as f64 * h).collect();
    let q: Vec<f64> = xs.iter().map(|&x| exp_v0(x)).collect();
    let h2 = h * h / 12.0;
    let m = n - 1;
    let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for r in 0..m {
        let i = r + 1;
        lo[r] = 1.0 + h2 * q[i - 1];
        di[r] = -2.0 + 10.0 * h2 * q[i];
        up[r] = 1.0 + h2 * q[i + 1];
        rhs[r] = h2 * (g(xs[i - 1]) + 10.0 * g(xs[i]) + g(xs[i + 1]));
    }
    rhs[0] -= lo[0] * left;
    rhs[m - 1] -= up[m - 1] * right;
    for r in 1..m {
        let w = lo[r] / di[r - 1];
        di[r] -= w * up[r - 1];
        rhs[r] -= w * rhs[r - 1];
    }
    let mut sol = vec![0.0; m];
    sol[m - 1] = rhs[m - 1] / di[m - 1];
    for r in (0..m - 1).rev() {
        sol[r] = (rhs[r] - up[r] * sol[r + 1]) / di[r];
    }
    let mut out = vec![(xs[0], left)];
    out.extend((0..m).map(|r| (xs[r + 1], sol[r])));
    out.push((xs[n], right));
    out
}

fn layer_suite() -> Outcome {
    let mut profile: f64 = 0.0;
    let mut wronskian: f64 = 0.0;
    for i in 0..=600 {
        let x = -30.0 + 0.1 * i as f64;
        profile = profile.max((v0_xx(x) + v0(x).exp()).abs());
        wronskian = wronskian.max((HomogeneousPair::wronskian(x) - 2.0).abs());
    }
    let basis = Arc::new(LayerBasis::new(XGrid::covering(40.0)).unwrap());
    let (k, l, d1, e1) = (0.5, 10.485, 0.3, -0.2);
    let c = |v: f64| Periodic::constant(v, 4, 1.0);
    let phi1 = build_phi1(basis.clone(), &c(k), &c(l), &c(d1), &c(e1)).unwrap();
    let (vals, _) = phi1.samples(0).unwrap();
    let res1 = ode_residual(&vals, basis.grid, 30.0, &|x| phi1_rhs(k, l, x));
    let closed_form = [0.0, k / SQRT_2 / l, (2.0 * k - SQRT_2 * d1) / l, (-2.0 * d1 - e1) / l];
    let ff = phi1.far_field(0, false);
    let phi1_far = (0..4).map(|i| (ff[i] - closed_form[i]).abs() / closed_form[i].abs().max(1e-300)).filter(|v| v.is_finite()).fold(0.0, f64::max);

    let mut inp = Phi2Inputs::constant(1, 1.0, 9.0);
    for (field, v) in [
        (&mut inp.m1, 0.2),
        (&mut inp.m2, -0.3),
        (&mut inp.k, 0.5),
        (&mut inp.f, -0.1),
        (&mut inp.f_s, 0.05),
        (&mut inp.f_ss, 0.4),
        (&mut inp.delta1, 0.8),
        (&mut inp.e1, -0.6),
        (&mut inp.delta2, 0.01),
        (&mut inp.e2, 0.02),
    ] {
        field.values[0] = v;
    }
    let phi2 = build_phi2(basis.clone(), &inp).unwrap();
    let (vals2, _) = phi2.samples(0).unwrap();
    let res2 = ode_residual(&vals2, basis.grid, 30.0, &|x| phi2_rhs(&inp, 0, x));
    let lead = phi2_closed_form_leading(&inp, 0);
    let left = phi2.far_field(0, false);
    let phi2_far = (0..2).map(|i| (left[i] - lead[i]).abs() / lead[i].abs().max(1e-300)).fold(0.0, f64::max);

    let mut fd_gap: f64 = 0.0;
    for d in Decaying::ALL {
        let s = basis.solution(d);
        let [sl, c0] = s.far_field_left();
        let lval = -40.0 * sl + c0;
        let rval = if s.parity == Parity::Even { lval } else { -lval };
        let fd = numerov(&move |x| d.eval(x), lval, rval);
        let scale = fd.iter().fold(1.0_f64, |m, p| m.max(p.1.abs()));
        fd_gap = fd_gap.max(fd.iter().map(|&(x, v)| (s.eval(x).unwrap()[0] - v).abs()).fold(0.0, f64::max) / scale);
    }
    let pass = profile <= 1e-14 && wronskian <= 1e-12 && res1 <= 1e-8 && res2 <= 1e-8 && phi1_far <= 1e-6 && phi2_far <= 1e-6 && fd_gap <= 1e-7;
    Outcome {
        pass,
        detail: format!(
            "V₀ {profile:.1e}, Wronskian {wronskian:.1e}, φ₁/φ₂ residuals {res1:.1e}/{res2:.1e}, far fields {phi1_far:.1e}/{phi2_far:.1e}, FD oracle {fd_gap:.1e}"
        ),
    }
}

fn setup(domain: DomainSpec) -> Arc<MatchingSetup> {
    Arc::new(MatchingSetup::new(domain, &SetupOptions::default()).unwrap())
}

fn matching_cancellation(setups: &[(&str, Arc<MatchingSetup>)]) -> Outcome {
    let mut bracket: f64 = 0.0;
    let mut ident: f64 = 0.0;
    for (_, s) in setups {
        for l in [1e-3, 1e-6] {
            let m = MatchedData::new(s, l).unwrap();
            let g1 = m.report.gamma1.value;
            bracket = bracket.max(m.report.brackets.value_line.max(m.report.brackets.delta_line) / g1);
            ident = ident.max(m.report.identities.worst());
        }
    }
    Outcome {
        pass: bracket <= 1e-8 && ident <= 10.0 * SOLVER_TOL,
        detail: format!("bracket lines / Γ₁ {bracket:.1e} (limit 1e-8), identities {ident:.1e} (limit {:.0e})", 10.0 * SOLVER_TOL),
    }
}

fn scaling(sweeps: &[(&str, SweepReport)]) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, rep) in sweeps {
        pass &= rep.pass;
        let failing: Vec<String> = rep.rows.iter().filter(|r| !r.pass).map(|r| format!("{} {:.2}×", r.name, r.spread)).collect();
        lines.push(format!(
            "{name}: M = {:.3}, {}/{} rows within 2×{}",
            rep.m,
            rep.rows.iter().filter(|r| r.pass).count(),
            rep.rows.len(),
            if failing.is_empty() { String::new() } else { format!(", over: {}", failing.join(", ")) }
        ));
        let vanishing: Vec<&str> = rep.rows.iter().filter(|r| r.vanishing).map(|r| r.name.as_str()).collect();
        if !vanishing.is_empty() {
            lines.push(format!("{name}: at rounding level: {}", vanishing.join(", ")));
        }
        for r in &rep.rows {
            println!(
                "    {name} {:<22} spread {:>8.3}{}  constants {:?}",
                r.name,
                r.spread,
                if r.vanishing { " (rounding level)" } else { "" },
                r.constants.iter().map(|c| format!("{c:.3e}")).collect::<Vec<_>>()
            );
        }
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn radial_equivalence(annulus: &Arc<MatchingSetup>, m: f64) -> Outcome {
    let mut rel = Vec::new();
    let mut t_ap = Vec::new();
    let mut t_or = Vec::new();
    let mut located = true;
    let mut notes = Vec::new();
    for &l in &SWEEP {
        let oracle = match radial_oracle(1.0, 4.0, l, Branch::Large) {
            Ok(o) => o,
            Err(e) => return Outcome { pass: false, detail: format!("no large branch at λ = {l:e}: {e}") },
        };
        located &= (oracle.argmax - 2.0).abs() <= 0.05 * 2.0;
        let matched = Arc::new(MatchedData::new(annulus, l).unwrap());
        let g = GlobalApprox::new(annulus.clone(), matched, &AssemblyOptions { m_override: Some(m), ..Default::default() }).unwrap();
        let cmp = compare_to_oracle(&g, &oracle, C64::new(0.0, 0.0), 8).unwrap();
        let t = t_lambda(&g, &TLambdaOptions::default()).unwrap();
        rel.push(cmp.relative_gap);
        t_ap.push(t.total);
        t_or.push(oracle.t_lambda);
        notes.push(format!("λ={l:e}: gap {:.3e}, 𝒯 {:.4}/{:.4}, max at r={:.4}", cmp.relative_gap, t.total, oracle.t_lambda, oracle.argmax));
    }
    for n in &notes {
        println!("    {n}");
    }
    let decreasing = rel.windows(2).all(|w| w[1] < w[0]);
    let t_grow = t_ap.windows(2).all(|w| w[1] > w[0]) && t_or.windows(2).all(|w| w[1] > w[0]);
    let t_gap: Vec<f64> = t_ap.iter().zip(&t_or).map(|(a, o)| (a - o).abs() / o).collect();
    let t_shrink = t_gap.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: located && decreasing && t_grow && t_shrink,
        detail: format!(
            "maximum within 5% of √(ab): {located}; sup gap decreasing: {decreasing}; 𝒯 increasing: {t_grow}; 𝒯 gap {:?} shrinking: {t_shrink}",
            t_gap.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>()
        ),
    }
}

fn assembly_contract(setups: &[(&str, Arc<MatchingSetup>)]) -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for (name, setup) in setups {
        let matched = Arc::new(MatchedData::new(setup, 1e-3).unwrap());
        let g = GlobalApprox::new(setup.clone(), matched, &AssemblyOptions::default()).unwrap();
        let gamma = g.setup.chart.gamma.clone();
        let mut exact = true;
        for j in (0..gamma.len()).step_by(5) {
            let s = gamma.param(j);
            for frac in [-0.9, -0.3, 0.0, 0.4, 0.95] {
                let y = gamma.point(s) + gamma.normal(s) * (frac * g.cutoff.r1);
                let loc = g.locate(y).unwrap();
                let (ls, lt) = loc.fermi.unwrap();
                exact &= loc.piece == Piece::Inner && g.eval(y).unwrap() == g.inner.value(ls, lt).unwrap();
            }
        }
        for (region, y) in g.sample_points_outer(32) {
            exact &= g.eval(y).unwrap() == g.outer_value(region, y);
        }
        // nodes and the midpoints between them
        let dom = &g.setup.domain;
        let mut boundary: f64 = 0.0;
        for curve in [&dom.outer, &dom.inner] {
            for j in 0..curve.len() {
                for y in [curve.node(j), curve.point(curve.param(j) + 0.5 * curve.spacing())] {
                    boundary = boundary.max(g.eval(y).unwrap().abs());
                }
            }
        }
        let agree = path_agreement(&g, &shared_points(&g, 50, 2024)).unwrap();
        pass &= exact && boundary <= 1e-6 && agree.max_relative_gap <= 1e-4;
        lines.push(format!(
            "{name}: pieces exact {exact}, max |u_ap| on ∂Ω {boundary:.1e}, path gap {:.1e} at {} points (worst in {:?})",
            agree.max_relative_gap,
            agree.points,
            agree.worst.map(|w| w.zone)
        ));
    }
    Outcome { pass, detail: lines.join("; ") }
}

fn main() {
    let total = Instant::now();
    let mut passed = 0;

    let t = Instant::now();
    passed += report(1, "annulus harmonic oracle", t, harmonic_oracle()) as usize;
    let t = Instant::now();
    passed += report(2, "reflection identity", t, reflection()) as usize;
    let t = Instant::now();
    passed += report(3, "Γ₁ certificate", t, gamma1_certificate()) as usize;
    let t = Instant::now();
    passed += report(4, "layer ODE suite", t, layer_suite()) as usize;

    let t = Instant::now();
    let annulus = setup(annulus_domain(256));
    let eccentric = setup(eccentric_domain(256));
    let setups = [("annulus", annulus.clone()), ("eccentric", eccentric.clone())];
    passed += report(5, "matching cancellation", t, matching_cancellation(&setups)) as usize;

    let t = Instant::now();
    let opts = SweepOptions { lambdas: SWEEP.to_vec(), ..Default::default() };
    let sweeps: Vec<(&str, SweepReport)> = setups.iter().map(|(n, s)| (*n, sweep(s.clone(), &opts).unwrap())).collect();
    passed += report(6, "scaling ladder", t, scaling(&sweeps)) as usize;

    let t = Instant::now();
    let matched: Vec<_> = SWEEP.iter().map(|&l| Arc::new(MatchedData::new(&annulus, l).unwrap())).collect();
    let (m, _) = sweep_multiplier(&annulus, &matched, &opts).unwrap();
    passed += report(7, "radial oracle equivalence", t, radial_equivalence(&annulus, m)) as usize;

    let t = Instant::now();
    passed += report(8, "global assembly contract", t, assembly_contract(&setups)) as usize;

    println!("{passed}/8 criteria pass [{:.1} s]", total.elapsed().as_secs_f64());
    // failures are reported, not fatal, so that the remaining test binaries still run;
    // GELFAND_STRICT=1 turns them into a nonzero exit
    if passed < 8 && std::env::var_os("GELFAND_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
