//! Property suites over randomly drawn densities, radii and exponents.

use std::sync::OnceLock;

use proptest::prelude::*;

use robust_lrt::asymptotics::{
    mean_log_ratio, rate_curves, rate_function, valid_interval, Hypothesis,
};
use robust_lrt::density::{
    alpha_divergence, kl_divergence, sym_alpha_divergence, u_affinity, DivergenceKind, Grid,
    GridDensity, NominalPair,
};
use robust_lrt::lfd_bayes::{
    feasible_perturbation, minimize_over_u, solve_lfd, LfdSolution, RobustLrf, UScanOptions,
};
use robust_lrt::lfd_np::{dabak_lfds, solve_np_type1, solve_np_type2};
use robust_lrt::solvers::{damped_newton, lambert_w0, minimize_1d, NewtonOptions};

fn coarse() -> Grid {
    Grid::new(-10.0, 10.0, 1201).unwrap()
}

/// Two-component Gaussian mixture on the coarse grid.
fn mixture() -> impl Strategy<Value = GridDensity> {
    (-3.0f64..3.0, 0.5f64..2.0, -3.0f64..3.0, 0.5f64..2.0, 0.1f64..0.9).prop_map(
        |(m1, s1, m2, s2, w)| {
            let g = coarse();
            let pdf = |y: f64, m: f64, s: f64| (-0.5 * ((y - m) / s).powi(2)).exp() / s;
            let v = g
                .points()
                .iter()
                .map(|&y| w * pdf(y, m1, s1) + (1.0 - w) * pdf(y, m2, s2))
                .collect();
            GridDensity::new(g, v).unwrap()
        },
    )
}

fn kind() -> impl Strategy<Value = DivergenceKind> {
    prop_oneof![
        Just(DivergenceKind::Kl),
        Just(DivergenceKind::Alpha(0.5)),
        Just(DivergenceKind::Alpha(2.0)),
        Just(DivergenceKind::SymAlpha(2.0)),
    ]
}

fn nominals(label: &str) -> NominalPair {
    NominalPair::standard(label, coarse()).unwrap()
}

fn average(a: &GridDensity, b: &GridDensity) -> GridDensity {
    let v = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
    GridDensity::from_values(*a.grid(), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affinity_is_bounded_and_convex(g0 in mixture(), g1 in mixture()) {
        prop_assert!((u_affinity(&g0, &g0, 0.3).unwrap() - 1.0).abs() < 1e-12);
        let us: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        let d: Vec<f64> = us.iter().map(|&u| u_affinity(&g0, &g1, u).unwrap()).collect();
        for v in &d {
            prop_assert!((0.0..=1.0 + 1e-12).contains(v));
        }
        for w in d.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
        }
    }

    #[test]
    fn affinity_is_jointly_concave(
        a0 in mixture(), a1 in mixture(), b0 in mixture(), b1 in mixture(), u in 0.05f64..0.95,
    ) {
        let mid = u_affinity(&average(&a0, &b0), &average(&a1, &b1), u).unwrap();
        let ends = 0.5 * (u_affinity(&a0, &a1, u).unwrap() + u_affinity(&b0, &b1, u).unwrap());
        prop_assert!(mid >= ends - 1e-8);
    }

    #[test]
    fn alpha_divergence_from_affinity(g in mixture(), f in mixture(), k in 1usize..10) {
        let a = k as f64 / 10.0;
        let direct = alpha_divergence(&g, &f, a).unwrap();
        let via = (1.0 - u_affinity(&f, &g, a).unwrap()) / (a * (1.0 - a));
        prop_assert!((direct - via).abs() <= 1e-8 * (1.0 + direct), "{} vs {}", direct, via);
    }

    #[test]
    fn divergences_vanish_only_on_the_diagonal(g in mixture(), f in mixture(), a in 0.2f64..3.0) {
        prop_assume!((a - 1.0).abs() > 0.05);
        let all = |x: &GridDensity, y: &GridDensity| [
            kl_divergence(x, y).unwrap(),
            alpha_divergence(x, y, a).unwrap(),
            sym_alpha_divergence(x, y, a).unwrap(),
        ];
        for d in all(&g, &g) {
            prop_assert!(d.abs() < 1e-12);
        }
        if g.sup_distance(&f) > 1e-3 {
            for d in all(&g, &f) {
                prop_assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn lambert_round_trip(e in -9.0f64..6.0, neg in any::<bool>()) {
        let x = if neg {
            -(-1.0f64).exp() * (1.0 - 10f64.powf(e.min(-1e-9)))
        } else {
            10f64.powf(e)
        };
        let w = lambert_w0(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn newton_reports_convergence_honestly(
        a in 0.1f64..3.0, b in -2.0f64..2.0, c in -2.0f64..2.0, x0 in -3.0f64..3.0, y0 in -3.0f64..3.0,
    ) {
        let opts = NewtonOptions::default();
        // Singular Jacobians are reported as errors; only reports are checked.
        let r = damped_newton(
            |x| Ok(vec![x[0].powi(3) + a * x[0] - b, (x[1] - c).atan() + 0.1 * x[0]]),
            &[x0, y0],
            &opts,
        );
        if let Ok(r) = r {
            prop_assert!(!r.converged || r.residual_norm <= opts.tol);
        }
    }

    #[test]
    fn minimize_1d_beats_its_scan(p in 0.5f64..6.0, q in -1.0f64..1.0, n in 8usize..40) {
        let f = |x: f64| (p * x).sin() + q * x * x;
        let (_, v) = minimize_1d(f, -2.0, 2.0, n).unwrap();
        let scan = (0..n).map(|i| f(-2.0 + 4.0 * i as f64 / (n - 1) as f64)).fold(f64::INFINITY, f64::min);
        prop_assert!(v <= scan);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lfd_constraints_are_active(
        kind in kind(),
        label in prop_oneof![Just("d1"), Just("d2")],
        eps in 0.02f64..0.2,
        u in 0.25f64..0.75,
    ) {
        let n = nominals(label);
        let sol = solve_lfd(kind, &n, eps, eps, u, None).unwrap();
        for (g, f) in [(&sol.g0_hat, &n.f0), (&sol.g1_hat, &n.f1)] {
            prop_assert!((kind.divergence(g, f).unwrap() - eps).abs() <= 1e-6);
            prop_assert!((g.mass() - 1.0).abs() <= 1e-8);
        }
        // Argument symmetry of the affinity.
        let d = u_affinity(&sol.g0_hat, &sol.g1_hat, u).unwrap();
        let swapped = u_affinity(&sol.g1_hat, &sol.g0_hat, 1.0 - u).unwrap();
        prop_assert!((d - swapped).abs() <= 1e-10);
        if kind == DivergenceKind::Kl {
            let inner = kl_divergence(&sol.g0_hat, &sol.g1_hat).unwrap();
            prop_assert!(inner <= kl_divergence(&n.f0, &n.f1).unwrap());
        }
    }

    #[test]
    fn np_duality_sphere_and_monotonicity(
        label in prop_oneof![Just("d1"), Just("d2")],
        e0 in 0.01f64..0.1,
        e1 in 0.01f64..0.1,
    ) {
        let n = nominals(label);
        let two = solve_np_type2(&n, e0, e1, None).unwrap();
        let one = solve_np_type1(&n.swapped(), e1, e0, None).unwrap();
        prop_assert!((two.exponent - one.exponent).abs() <= 1e-10);

        let d = dabak_lfds(&n, e0, e1).unwrap();
        prop_assert!((kl_divergence(&d.g0_star, &n.f0).unwrap() - e0).abs() <= 1e-8);
        prop_assert!((kl_divergence(&d.g1_star, &n.f1).unwrap() - e1).abs() <= 1e-8);

        let small = solve_np_type1(&n, e0, e1, None).unwrap();
        let large = solve_np_type1(&n, 2.0 * e0, 2.0 * e1, None).unwrap();
        prop_assert!(large.exponent <= small.exponent);
    }

    #[test]
    fn rate_functions_are_convex_and_gated(
        label in prop_oneof![Just("d1"), Just("d2"), Just("d3")],
        data in prop_oneof![Just(false), Just(true)],
    ) {
        let n = nominals(label);
        let lrf = RobustLrf::from_pair(&n.f0, &n.f1).unwrap();
        // Nominal test, evaluated either under the nominals or under a
        // tilted pair between them.
        let (d0, d1) = if data {
            let d = dabak_lfds(&n, 0.02, 0.02).unwrap();
            (d.g0_star, d.g1_star)
        } else {
            (n.f0.clone(), n.f1.clone())
        };
        let mean = mean_log_ratio(&lrf, &d0).unwrap();
        prop_assert!(rate_function(&lrf, &d0, mean, Hypothesis::H0).unwrap().abs() <= 1e-9);
        let (e0, e1) = valid_interval(&lrf, &d0, &d1).unwrap();
        let inside: Vec<f64> = (1..30).map(|i| e0 + (e1 - e0) * i as f64 / 30.0).collect();
        let c = rate_curves(&lrf, &d0, &d1, &inside, "n", "x").unwrap();
        for w in c.i0.windows(3).chain(c.i1.windows(3)) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
        }
        for w in c.i0.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
        for w in c.i1.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert!(c.i0.iter().chain(&c.i1).all(|v| *v >= -1e-12));
        let outside = rate_curves(&lrf, &d0, &d1, &[e0 - 0.5, e0, e1, e1 + 0.5], "n", "x").unwrap();
        prop_assert!(outside.i0.iter().chain(&outside.i1).all(|v| v.is_nan()));
    }
}

fn minimax_solution(label: &'static str) -> &'static (NominalPair, LfdSolution) {
    static D1: OnceLock<(NominalPair, LfdSolution)> = OnceLock::new();
    static D2: OnceLock<(NominalPair, LfdSolution)> = OnceLock::new();
    let cell = if label == "d1" { &D1 } else { &D2 };
    cell.get_or_init(|| {
        let n = nominals(label);
        let s = minimize_over_u(DivergenceKind::Kl, &n, 0.1, 0.1, &UScanOptions::default()).unwrap();
        (n, s.solution)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// At `t = 0` the minimax test decays no slower under any feasible pair
    /// than under its own LFDs.
    #[test]
    fn least_favorable_data_minimize_the_rates(
        label in prop_oneof![Just("d1"), Just("d2")],
        seed in any::<u64>(),
    ) {
        let (n, sol) = minimax_solution(label);
        let Some((g0, g1)) = feasible_perturbation(sol, n, seed).unwrap() else {
            return Ok(());
        };
        let lrf = &sol.lrf;
        let lfd0 = rate_function(lrf, &sol.g0_hat, 0.0, Hypothesis::H0).unwrap();
        let lfd1 = rate_function(lrf, &sol.g1_hat, 0.0, Hypothesis::H1).unwrap();
        prop_assert!(lfd0 <= rate_function(lrf, &g0, 0.0, Hypothesis::H0).unwrap() + 1e-6);
        prop_assert!(lfd1 <= rate_function(lrf, &g1, 0.0, Hypothesis::H1).unwrap() + 1e-6);
    }
}
