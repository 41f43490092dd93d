use gelfand_core::assembly::{band_scale, max_feasible_m, CutoffSpec, SmoothStep};
use gelfand_core::diagnostics::{radial_oracle, Branch};
use gelfand_core::geometry::{ClosedCurve, DomainSpec, FourierCurve};
use gelfand_core::laplace::{conformal_potential, extract_gamma};
use gelfand_core::matching::solve_gamma1;
use gelfand_core::spectral::Periodic;
use gelfand_core::C64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn trig(n: usize, period: f64, coeffs: &[(f64, f64)]) -> Periodic {
    Periodic::from_fn(n, period, |s| {
        let th = 2.0 * PI * s / period;
        coeffs.iter().enumerate().map(|(m, (a, b))| a * (m as f64 * th).cos() + b * (m as f64 * th).sin()).sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smooth_step_is_a_monotone_switch(tau in -4.0f64..4.0, dt in 0.0f64..0.5) {
        let eta = SmoothStep::new();
        let v = eta.value(tau);
        prop_assert!((0.0..=1.0).contains(&v));
        if tau.abs() <= 1.0 {
            prop_assert_eq!(v, 0.0);
        }
        if tau.abs() >= 2.0 {
            prop_assert_eq!(v, 1.0);
        }
        // even in τ and nondecreasing in |τ|
        prop_assert!((eta.value(-tau) - v).abs() < 1e-15);
        prop_assert!(eta.value(tau.abs() + dt) >= v - 1e-15);
    }

    #[test]
    fn gamma1_solves_its_fixed_point(log_lambda in -32.0f64..-3.5) {
        let lambda = log_lambda.exp();
        let g = solve_gamma1(lambda).unwrap();
        let rhs = 2.0 * (2f64.sqrt() / lambda).ln() + 2.0 * g.value.ln();
        prop_assert!((g.value - rhs).abs() <= 1e-12 * g.value);
        // the remainder of the three-term expansion shrinks like lnln/ln
        prop_assert!(g.value > g.asymptote && g.value - g.asymptote < 1.0);
    }

    #[test]
    fn spectral_calculus_is_exact_on_trig_polynomials(
        coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8),
        period in 0.5f64..20.0,
    ) {
        let f = trig(32, period, &coeffs);
        let back = f.periodic_antiderivative().derivative(1);
        let mean = f.mean();
        for (a, b) in f.values.iter().zip(&back.values) {
            prop_assert!((a - mean - b).abs() < 1e-11);
        }
        let fine = f.resample(96).resample(32);
        for (a, b) in f.values.iter().zip(&fine.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((f.integral() - coeffs[0].0 * period).abs() < 1e-11 * period);
    }

    #[test]
    fn feasible_band_fits_the_tube(log_lambda in -30.0f64..-5.0, delta0 in 0.2f64..1.5) {
        let lambda = log_lambda.exp();
        let m = max_feasible_m(lambda, delta0);
        let c = CutoffSpec::with_m(lambda, m, delta0, 1.0, [5.0, 6.0]).unwrap();
        prop_assert!(c.r2 <= delta0);
        prop_assert!((c.r1 - m * band_scale(lambda)).abs() < 1e-15);
        prop_assert!(CutoffSpec::with_m(lambda, 1.01 * m, delta0, 1.0, [5.0, 6.0]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn concentric_interface_is_the_geometric_mean_circle(a in 0.3f64..2.0, ratio in 1.5f64..8.0) {
        let b = a * ratio;
        let domain = DomainSpec::from_fourier(&FourierCurve::circle(0.0, 0.0, b), &FourierCurve::circle(0.0, 0.0, a), 64).unwrap();
        let pot = conformal_potential(&domain).unwrap();
        prop_assert!((pot.modulus / ratio - 1.0).abs() < 1e-9);
        let gamma = extract_gamma(&domain, &pot, 64).unwrap();
        let r = (a * b).sqrt();
        prop_assert!(gamma.nodes().iter().all(|z| (z.norm() - r).abs() < 1e-8 * r));
    }

    #[test]
    fn modulus_is_invariant_under_similarities(scale in 0.3f64..3.0, angle in 0.0f64..std::f64::consts::TAU, shift in -2.0f64..2.0) {
        let outer = ClosedCurve::from_fourier(&FourierCurve::ellipse(0.0, 0.0, 4.0, 3.0), 96).unwrap();
        let inner = ClosedCurve::from_fourier(&FourierCurve::circle(0.6, 0.2, 1.0), 96).unwrap();
        let domain = DomainSpec::new(outer, inner).unwrap();
        let moved = domain.similarity(C64::from_polar(scale, angle), C64::new(shift, -shift)).unwrap();
        let (m0, m1) = (conformal_potential(&domain).unwrap().modulus, conformal_potential(&moved).unwrap().modulus);
        prop_assert!((m0 - m1).abs() < 1e-8 * m0, "{} {}", m0, m1);
    }

    #[test]
    fn radial_branches_bracket_and_peak_at_the_geometric_mean(log_lambda in -18.0f64..-7.0) {
        let lambda = log_lambda.exp();
        let small = radial_oracle(1.0, 4.0, lambda, Branch::Minimal).unwrap();
        let large = radial_oracle(1.0, 4.0, lambda, Branch::Large).unwrap();
        prop_assert!(small.slope < large.slope && small.t_lambda < large.t_lambda);
        prop_assert!((large.argmax / 2.0 - 1.0).abs() < 0.05);
        prop_assert!(large.end_residual < 1e-8 && large.flux_defect < 1e-8);
    }
}
