use std::f64::consts::TAU;

use proptest::prelude::*;
use rotor_core::averaging::{Angular, Monomial};
use rotor_core::lyapunov::{classify_momenta, cutoff_rho, phi, TestFunction};
use rotor_core::stats::composite_gauss;
use rotor_core::{LyapunovParams, ModelParams, PeriodicPotential, RegionLabel, State};

fn potential() -> impl Strategy<Value = PeriodicPotential> {
    (
        prop::collection::vec(-2.0..2.0f64, 0..5),
        prop::collection::vec(-2.0..2.0f64, 0..5),
    )
        .prop_map(|(a, b)| PeriodicPotential::new(a, b).unwrap())
}

/// `sum |c_k| k^n`, a bound on the `n`-th derivative.
fn derivative_bound(pot: &PeriodicPotential, n: i32) -> f64 {
    let l1 = |c: &[f64]| -> f64 {
        c.iter()
            .enumerate()
            .map(|(k, v)| v.abs() * ((k + 1) as f64).powi(n))
            .sum()
    };
    l1(pot.cosine_coeffs()) + l1(pot.sine_coeffs())
}

fn angular() -> impl Strategy<Value = Angular> {
    prop_oneof![
        Just(Angular::One),
        Just(Angular::Potential),
        Just(Angular::Force),
        Just(Angular::Anti1),
        Just(Angular::Anti2),
        Just(Angular::PotentialSquared),
    ]
}

/// Momenta with `|p2| > (1 + delta)|p1|` and `|p| >= 1`.
fn outer_cone(delta: f64) -> impl Strategy<Value = (f64, f64)> {
    (1.0..1e3f64, -1.0..1.0f64, any::<bool>()).prop_map(move |(p2, t, neg)| {
        let p1 = t * p2 / (1.0 + delta) * (1.0 - 1e-9);
        (p1, if neg { -p2 } else { p2 })
    })
}

proptest! {
    #[test]
    fn force_matches_central_difference(pot in potential(), s in 0.0..TAU) {
        let h = 1e-4;
        let cd = (pot.value(s + h) - pot.value(s - h)) / (2.0 * h);
        let tol = derivative_bound(&pot, 3) * h * h / 6.0 + 1e-11;
        prop_assert!((pot.force(s) - cd).abs() <= tol);
    }

    #[test]
    fn antiderivative_ladder(pot in potential(), s in 0.0..TAU) {
        let h = 1e-5;
        let scale = 1.0 + derivative_bound(&pot, 0);
        let d1 = (pot.antiderivative1(s + h) - pot.antiderivative1(s - h)) / (2.0 * h);
        let d2 = (pot.antiderivative2(s + h) - pot.antiderivative2(s - h)) / (2.0 * h);
        prop_assert!((d1 - pot.value(s)).abs() <= 1e-6 * scale);
        prop_assert!((d2 - pot.antiderivative1(s)).abs() <= 1e-6 * scale);
    }

    #[test]
    fn potential_and_first_antiderivative_have_zero_mean(pot in potential()) {
        let rule = composite_gauss(0.0, TAU, 8, 12);
        let w: f64 = rule.iter().map(|&(s, wt)| wt * pot.value(s)).sum();
        let w1: f64 = rule.iter().map(|&(s, wt)| wt * pot.antiderivative1(s)).sum();
        prop_assert!(w.abs() <= 1e-10);
        prop_assert!(w1.abs() <= 1e-10);
    }

    #[test]
    fn monomials_obey_their_order_on_the_outer_cone(
        pot in potential(),
        f in angular(),
        k in 0u32..4,
        m in -3i32..4,
        l in 0u32..5,
        coeff in -3.0..3.0f64,
        (p1, p2) in outer_cone(0.5),
        q1 in 0.0..TAU,
        q2 in 0.0..TAU,
    ) {
        let mono = Monomial::new(coeff, f, k, m, l);
        let x = State::new(q1, q2, p1, p2);
        let bound = mono.region_bound_constant(&pot, 0.5) * p2.abs().powi(mono.order());
        prop_assert!(mono.value(&pot, &x).abs() <= bound * (1.0 + 1e-9) + 1e-300);
    }

    #[test]
    fn test_function_is_at_least_one(
        q1 in 0.0..TAU,
        q2 in 0.0..TAU,
        p1 in -300.0..300.0f64,
        p2 in -300.0..300.0f64,
    ) {
        let params = ModelParams::default();
        let lyap = LyapunovParams::standard();
        let log_f = TestFunction::new(&params, &lyap).log_f(&State::new(q1, q2, p1, p2));
        prop_assert!(log_f >= 0.0, "log F = {log_f}");
    }

    #[test]
    fn phi_is_increasing_and_concave(a in 1.0..1e6f64, b in 1.0..1e6f64, drift in 0.1..10.0f64) {
        let l = LyapunovParams::standard().with_drift_constant(drift).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let (fa, fb) = (phi(&l, lo).unwrap(), phi(&l, hi).unwrap());
        let mid = phi(&l, 0.5 * (lo + hi)).unwrap();
        prop_assert!(fa <= fb * (1.0 + 1e-12));
        prop_assert!(mid >= 0.5 * (fa + fb) * (1.0 - 1e-12));
    }

    #[test]
    fn regions_partition_momentum_space(
        p1 in -50.0..50.0f64,
        p2 in -50.0..50.0f64,
        delta in 0.05..2.0f64,
    ) {
        let inside = p1 * p1 + p2 * p2 < 1.0;
        let memberships = [
            inside,
            !inside && p2.abs() <= (1.0 + delta) * p1.abs(),
            !inside && p2.abs() > (1.0 + delta) * p1.abs() && p2.abs() <= (1.0 + 2.0 * delta) * p1.abs(),
            !inside && p2.abs() > (1.0 + 2.0 * delta) * p1.abs(),
        ];
        prop_assert_eq!(memberships.iter().filter(|&&b| b).count(), 1);
        let label = classify_momenta(p1, p2, delta);
        prop_assert!(memberships[label.index()]);
    }

    #[test]
    fn cutoff_is_twice_differentiable_across_cone_edges(
        p2 in 5.0..50.0f64,
        edge in prop_oneof![Just(1.0), Just(2.0)],
        flip in any::<bool>(),
    ) {
        let delta = 0.5;
        let h = 1e-4;
        let sign = if flip { -1.0 } else { 1.0 };
        // |p2 / p1| = 1 + edge * delta on the boundary
        let b = p2 / (1.0 + edge * delta);
        let d2 = |c: f64| {
            let r = |p1: f64| cutoff_rho(p1, sign * p2, delta);
            (r(c + h) - 2.0 * r(c) + r(c - h)) / (h * h)
        };
        // second differences on each side, extrapolated linearly to the edge
        let right = 2.0 * d2(b + h) - d2(b + 2.0 * h);
        let left = 2.0 * d2(b - h) - d2(b - 2.0 * h);
        let jump = (right - left).abs();
        prop_assert!(jump < 1e-3, "jump {jump} at p1 = {b}");
    }
}

#[test]
fn cutoff_regions_match_labels() {
    let delta = 0.5;
    for &(p1, p2, expected, label) in &[
        (10.0, 12.0, 0.0, RegionLabel::Omega1),
        (10.0, 25.0, 1.0, RegionLabel::Omega3),
        (-10.0, -30.0, 1.0, RegionLabel::Omega3),
    ] {
        assert_eq!(classify_momenta(p1, p2, delta), label);
        assert_eq!(cutoff_rho(p1, p2, delta), expected);
    }
}

#[test]
fn omega2_exp_term_is_dominated_far_out() {
    // (L of the cutoff term) / exp(beta_- H) along rays inside Omega2
    let params = ModelParams::default();
    let lyap = LyapunovParams::standard();
    let f = TestFunction::new(&params, &lyap);
    for c in [1.2, 1.5, 1.8] {
        let ratio = 1.0 + c * lyap.delta();
        let mut last = f64::INFINITY;
        for r in [10.0, 20.0, 40.0, 80.0, 160.0] {
            let p1 = r / (1.0 + ratio * ratio).sqrt();
            let x = State::new(0.3, 1.2, p1, ratio * p1);
            assert_eq!(rotor_core::lyapunov::classify(&x, lyap.delta()), RegionLabel::Omega2);
            let e = f.evaluate(&x);
            let log_ratio = e.scaled_drifts[2].abs().ln() + e.log_exp_term.unwrap() - e.log_terms[1];
            assert!(log_ratio < last, "c = {c}, |p| = {r}: {log_ratio} after {last}");
            last = log_ratio;
        }
        assert!(last < -50.0, "c = {c}: {last}");
    }
}
