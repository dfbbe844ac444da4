use std::path::Path;

use proptest::prelude::*;

use nlkpp::fields::{evaluate_fourier, project_fourier, FitnessSpec, FourierMode, FourierTable, PeriodicCell, PeriodicField};
use nlkpp::frontsim::{comparison_trials, ComparisonOptions};
use nlkpp::kernel::{Direction, Kernel, TiltedDirection};
use nlkpp::linear::LinearBundle;
use nlkpp::spectrum::{principal_eigen, EigenOptions};
use nlkpp::speed::{convexity_check, LambdaSolver};
use nlkpp::steady::{steady_periodic, SteadyOptions};
use nlkpp::ProblemConfig;

fn biweight() -> Kernel {
    Kernel::builtin("biweight", 1.0).unwrap()
}

fn tight() -> EigenOptions {
    EigenOptions {
        tol: 1e-13,
        gap: false,
        ..EigenOptions::default()
    }
}

fn medium(cell: PeriodicCell, amp_t: f64, amp_x: f64, phase: f64) -> PeriodicField {
    let table = FourierTable::constant(1.0)
        .with_mode(FourierMode::cos(1, 0, amp_t))
        .with_mode(FourierMode {
            phase,
            ..FourierMode::cos(0, 1, amp_x)
        });
    evaluate_fourier(&table, &cell).unwrap()
}

fn lambda(a: &PeriodicField, xi: Direction, mu: f64) -> f64 {
    principal_eigen(&biweight(), TiltedDirection::new(xi, mu), a, &tight()).unwrap().lambda0
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Plus), Just(Direction::Minus)]
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn periodized_weights_sum_to_the_transform(mu in 0.0..2.0f64, p in 1.0..4.0f64, n in 16usize..64) {
        let k = biweight();
        let w = k.periodize(TiltedDirection::new(Direction::Plus, mu), p, n).unwrap();
        let exact = k.moment_transform(mu);
        let dx = p / n as f64;
        let total: f64 = w.iter().sum();
        prop_assert!((total - exact).abs() <= 2.0 * dx * dx * exact, "{total} vs {exact}");
    }

    #[test]
    fn negated_rate_reflects_weights(mu in 0.0..2.0f64, p in 1.0..4.0f64, n in 8usize..64) {
        let k = biweight();
        let w = k.periodize(TiltedDirection::new(Direction::Plus, mu), p, n).unwrap();
        let r = k.periodize(TiltedDirection::new(Direction::Plus, -mu), p, n).unwrap();
        for j in 0..n {
            let diff = (w[j] - r[(n - j) % n]).abs();
            prop_assert!(diff <= 1e-14 * w[j].abs().max(1.0));
        }
    }

    #[test]
    fn fourier_round_trip(c in 0.5..2.0f64, a1 in -0.5..0.5f64, a2 in -0.5..0.5f64, a3 in -0.5..0.5f64) {
        let cell = PeriodicCell::new(1.3, 2.1, 16, 16).unwrap();
        let modes = [FourierMode::cos(1, 0, a1), FourierMode::sin(0, 2, a2), FourierMode::cos(1, -1, a3)];
        let table = modes.iter().fold(FourierTable::constant(c), |t, m| t.with_mode(*m));
        let field = evaluate_fourier(&table, &cell).unwrap();
        let amps = project_fourier(&field, &modes);
        for (got, m) in amps.iter().zip(&modes) {
            prop_assert!((got - m.amp).abs() < 1e-10);
        }
    }

    #[test]
    fn time_average_is_linear(s in -2.0..2.0f64, a1 in -0.5..0.5f64, a2 in -0.5..0.5f64) {
        let cell = PeriodicCell::new(1.0, 2.0, 16, 16).unwrap();
        let f = medium(cell, a1, a2, 0.0);
        let g = medium(cell, a2, a1, 1.0);
        let h = PeriodicField::new(cell, f.values().iter().zip(g.values()).map(|(x, y)| x + s * y).collect()).unwrap();
        let (fa, ga, ha) = (f.time_average(), g.time_average(), h.time_average());
        for j in 0..cell.n_x {
            prop_assert!((ha[j] - fa[j] - s * ga[j]).abs() < 1e-12);
        }
        let flat = PeriodicField::from_rows(cell, &vec![fa.clone(); cell.n_t]).unwrap();
        for (x, y) in flat.time_average().iter().zip(&fa) {
            prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * y.abs());
        }
    }

    #[test]
    fn period_map_is_positive_and_order_preserving(
        mu in 0.0..1.5f64,
        xi in direction(),
        at in -0.4..0.4f64,
        ax in -0.4..0.4f64,
        u in prop::collection::vec(0.0..1.0f64, 16),
        gap in prop::collection::vec(0.0..1.0f64, 16),
        spike in 0usize..16,
    ) {
        let cell = PeriodicCell::new(1.0, 2.0, 16, 16).unwrap();
        let bundle = LinearBundle::new(&biweight(), TiltedDirection::new(xi, mu), &medium(cell, at, ax, 0.0)).unwrap();
        let mut pulse = vec![0.0; 16];
        pulse[spike] = 1.0;
        prop_assert!(bundle.monodromy_apply(&pulse).unwrap().iter().all(|&y| y > 0.0));
        let v: Vec<f64> = u.iter().zip(&gap).map(|(a, g)| a + g).collect();
        let mu_ = bundle.monodromy_apply(&u).unwrap();
        let mv = bundle.monodromy_apply(&v).unwrap();
        for (a, b) in mu_.iter().zip(&mv) {
            prop_assert!(*a <= b + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn shifting_the_growth_rate_shifts_the_eigenvalue(
        mu in 0.1..1.5f64,
        xi in direction(),
        at in -0.4..0.4f64,
        ax in -0.4..0.4f64,
        delta in prop_oneof![Just(-0.3), Just(0.2), Just(1.0)],
    ) {
        let cell = PeriodicCell::new(1.0, 2.0, 256, 16).unwrap();
        let a = medium(cell, at, ax, 0.5);
        let shifted = lambda(&a.shifted(delta), xi, mu) - lambda(&a, xi, mu);
        prop_assert!((shifted - delta).abs() < 1e-9, "shift {shifted} vs {delta}");
    }

    #[test]
    fn eigenvalue_is_monotone_in_growth(
        mu in 0.0..1.5f64,
        xi in direction(),
        at in -0.4..0.4f64,
        bump in 0.0..0.5f64,
        center in 0.0..2.0f64,
    ) {
        let cell = PeriodicCell::new(1.0, 2.0, 64, 16).unwrap();
        let a = medium(cell, at, 0.2, 0.0);
        let bumped: Vec<f64> = a
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bump * (std::f64::consts::PI * (cell.x(i % cell.n_x) - center)).cos().powi(2))
            .collect();
        let raised = PeriodicField::new(cell, bumped).unwrap();
        prop_assert!(lambda(&a, xi, mu) <= lambda(&raised, xi, mu) + 1e-9);
    }

    #[test]
    fn reflected_rate_matches_reflected_direction(mu in 0.0..1.5f64, at in -0.4..0.4f64, ax in -0.4..0.4f64) {
        let cell = PeriodicCell::new(1.0, 2.0, 64, 16).unwrap();
        let a = medium(cell, at, ax, 0.3);
        let lhs = lambda(&a, Direction::Plus, -mu);
        let rhs = lambda(&a, Direction::Minus, mu);
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn eigenvalue_is_convex_in_mu(
        mu1 in 0.0..1.0f64,
        width in 0.1..1.5f64,
        alpha in prop_oneof![Just(0.25), Just(0.5), Just(0.75)],
        xi in direction(),
        ax in -0.4..0.4f64,
    ) {
        let cell = PeriodicCell::new(1.0, 2.0, 64, 16).unwrap();
        let solver = LambdaSolver::new(&biweight(), &medium(cell, 0.2, ax, 0.0), xi, tight());
        let check = convexity_check(&solver, mu1, mu1 + width, alpha, 1e-8).unwrap();
        prop_assert!(!check.violated, "slack {}", check.slack);
    }

    #[test]
    fn periodic_state_is_squeezed_by_constant_equilibria(at in -0.4..0.4f64, ax in -0.4..0.4f64, bx in -0.3..0.3f64) {
        let cell = PeriodicCell::new(1.0, 2.0, 32, 16).unwrap();
        let a0 = medium(cell, at, ax, 0.0);
        let b = evaluate_fourier(&FourierTable::constant(1.0).with_mode(FourierMode::sin(1, 1, bx)), &cell).unwrap();
        let fs = FitnessSpec::new(a0, b).unwrap();
        let orbit = steady_periodic(&biweight(), &fs, &SteadyOptions::default()).unwrap();
        let lo = fs.a0.min() / fs.b.max() - 1e-6;
        let hi = fs.a0.max() / fs.b.min() + 1e-6;
        prop_assert!(orbit.u_star.min() >= lo && orbit.u_star.max() <= hi);
        prop_assert!(orbit.seeds_agreement < 1e-8);
    }

    #[test]
    fn ordered_data_stay_ordered(seed in any::<u64>(), at in -0.4..0.4f64, ax in -0.4..0.4f64) {
        let cell = PeriodicCell::new(1.0, 2.0, 32, 16).unwrap();
        let fs = FitnessSpec::new(medium(cell, at, ax, 0.0), PeriodicField::constant(cell, 1.0)).unwrap();
        let opts = ComparisonOptions {
            pairs: 5,
            periods: 3,
            cells: 3,
            steps_per_period: Some(32),
            seed,
            ..ComparisonOptions::default()
        };
        let report = comparison_trials(&biweight(), &fs, &opts).unwrap();
        prop_assert!(report.passed, "worst violation {}", report.worst_violation);
    }

    #[test]
    fn config_round_trips(pt in 0.5..3.0f64, px in 0.5..4.0f64, amp in -0.5..0.5f64, n in 0i64..4) {
        let src = format!(
            "[cell]\nperiod_t = {pt}\nperiod_x = {px}\nn_t = 32\nn_x = 16\n\n\
             [kernel]\nname = \"biweight\"\nradius = 1.0\n\n\
             [a0]\nconstant = 1.0\n[[a0.modes]]\nm = 1\nn = {n}\namp = {amp}\n\n\
             [b]\nconstant = 1.0\n"
        );
        let cfg = ProblemConfig::parse(&src, Path::new(".")).unwrap();
        let again = ProblemConfig::parse(&cfg.to_toml().unwrap(), Path::new(".")).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.fitness().unwrap(), cfg.fitness().unwrap());
    }
}
