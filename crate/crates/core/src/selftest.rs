//! Fast invariant suite behind `rotorlab selftest`.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::averaging::{default_magnitudes, default_rays, order_check};
use crate::dynamics::{apply_generator, ExpHamiltonian, HamiltonianObservable, ModelParams, Scheme, State, Stepper};
use crate::error::Result;
use crate::gibbs::{check_nonintegrability, stationarity_residuals, GibbsMeasure, GrowthVerdict, StripQuadrature};
use crate::lyapunov::{certify_drift, cutoff_rho, phi, LyapunovParams, SamplingPlan, TestFunction};
use crate::potential::PeriodicPotential;
use crate::relaxation::{fit_stretched_rate, synthetic_stretched};
use crate::rng::{stream, Purpose};
use crate::stats::Moments;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn item(name: &'static str, outcome: Result<(bool, String)>) -> SelfTestItem {
    match outcome {
        Ok((passed, detail)) => SelfTestItem {
            name,
            passed,
            detail,
        },
        Err(e) => SelfTestItem {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_states(n: usize, seed: u64, spread: f64) -> Vec<State> {
    let mut rng = stream(seed, Purpose::Sampling, 7);
    let normal = Normal::new(0.0, spread).expect("positive spread");
    (0..n)
        .map(|_| {
            State::new(
                TAU * rng.random::<f64>(),
                TAU * rng.random::<f64>(),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            )
        })
        .collect()
}

fn generator_hamiltonian(params: &ModelParams, seed: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for x in random_states(1000, seed, 3.0) {
        let lh = apply_generator(params, &HamiltonianObservable(params), &x)?;
        let exact = params.gamma() * (params.temperature() - x.p1 * x.p1);
        worst = worst.max((lh - exact).abs() / exact.abs().max(1.0));
    }
    Ok((worst <= 1e-10, format!("max rel error {worst:.2e}")))
}

fn generator_exp(params: &ModelParams, lyap: &LyapunovParams, seed: u64) -> Result<(bool, String)> {
    let b = lyap.beta_minus();
    let (g, t) = (params.gamma(), params.temperature());
    let f = ExpHamiltonian { params, beta: b };
    let mut worst: f64 = 0.0;
    for x in random_states(1000, seed, 2.0) {
        let lf = apply_generator(params, &f, &x)?;
        let h = crate::dynamics::hamiltonian(params, &x);
        let exact = ((b * t - 1.0) * x.p1 * x.p1 + t) * g * b * (b * h).exp();
        worst = worst.max((lf - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
    }
    Ok((worst <= 1e-8, format!("max rel error {worst:.2e}")))
}

fn orders(params: &ModelParams, lyap: &LyapunovParams, seed: u64) -> Result<(bool, String)> {
    let rows = order_check(params, &default_rays(lyap.delta()), &default_magnitudes(), 32, seed)?.rows;
    let mut ok = true;
    let mut worst = (f64::NEG_INFINITY, "");
    for r in &rows {
        let pass = match (r.quantity, r.level) {
            ("drift", "p2") => r.exponent.abs() <= 0.2,
            ("drift", "p2_1") => r.exponent <= -1.0 + 0.3,
            ("drift", "p2_2") => r.exponent <= -2.0 + 0.3,
            ("drift", "p2_bar") => r.exponent <= -3.0 + 0.3,
            ("noise", _) => r.exponent <= -2.0 + 0.3,
            _ => true,
        };
        ok &= pass;
        if r.quantity == "drift" && r.level == "p2_bar" && r.exponent > worst.0 {
            worst = (r.exponent, r.level);
        }
    }
    Ok((ok, format!("largest p2_bar drift exponent {:.3}", worst.0)))
}

fn test_function(params: &ModelParams, lyap: &LyapunovParams, seed: u64) -> Result<(bool, String)> {
    let f = TestFunction::new(params, lyap);
    let min = random_states(100_000, seed, 5.0)
        .iter()
        .map(|x| f.log_f(x))
        .fold(f64::INFINITY, f64::min);
    let d = lyap.delta();
    let plateaus = cutoff_rho(1.0, 1.0 + 2.0 * d + 0.01, d) == 1.0
        && cutoff_rho(1.0, 1.0 + d - 0.01, d) == 0.0
        && cutoff_rho(0.0, 0.5, d) == 0.0;
    // phi increasing and concave on a grid
    let grid: Vec<f64> = (0..200).map(|k| (k as f64 * 0.1).exp()).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| phi(lyap, s)).collect::<Result<_>>()?;
    let increasing = vals.windows(2).all(|w| w[1] > w[0]);
    let concave = (1..grid.len() - 1).all(|k| {
        let slope_l = (vals[k] - vals[k - 1]) / (grid[k] - grid[k - 1]);
        let slope_r = (vals[k + 1] - vals[k]) / (grid[k + 1] - grid[k]);
        slope_r <= slope_l * (1.0 + 1e-12)
    });
    Ok((
        min >= 0.0 && plateaus && increasing && concave,
        format!("min log F {min:.3e}, cutoff plateaus {plateaus}, phi increasing {increasing}, concave {concave}"),
    ))
}

fn gibbs_moments(measure: &GibbsMeasure, seed: u64) -> Result<(bool, String)> {
    let xs = measure.sample(seed, 200_000);
    let c: Moments = xs.iter().map(|x| x.angle_gap().cos()).collect();
    let p: Moments = xs.iter().map(|x| x.p1 * x.p1).collect();
    let exact_c = measure.angular_expectation(f64::cos);
    let t = measure.params().temperature();
    let ok = (c.mean() - exact_c).abs() <= 3.0 * c.stderr() && (p.mean() - t).abs() <= 3.0 * p.stderr();
    Ok((
        ok,
        format!(
            "E cos s = {:.5} (quadrature {exact_c:.5}, se {:.1e}); E p1^2 = {:.5} (se {:.1e})",
            c.mean(),
            c.stderr(),
            p.mean(),
            p.stderr()
        ),
    ))
}

fn stationarity(measure: &GibbsMeasure, seed: u64) -> Result<(bool, String)> {
    let res = stationarity_residuals(measure, 200_000, seed)?;
    let ok = res.iter().all(|r| r.within(3.0));
    let detail = res
        .iter()
        .map(|r| format!("{}: {:.1e}/{:.1e}", r.observable, r.mean, r.stderr))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ok, detail))
}

fn nonintegrability(measure: &GibbsMeasure, lyap: &LyapunovParams) -> Result<(bool, String)> {
    let quad = StripQuadrature {
        gap_nodes: 16,
        p1_order: 8,
        p2_panel: 0.25,
        p2_order: 6,
    };
    let r = check_nonintegrability(measure, lyap, &[0.05, 0.5], &[10.0, 20.0, 40.0, 80.0, 160.0], &quad)?;
    let ok = r[0].verdict == GrowthVerdict::Divergent && r[1].verdict == GrowthVerdict::Plateau;
    Ok((
        ok,
        format!(
            "eps 0.05: {:?} (rate {:.4}); eps 0.5: {:?}",
            r[0].verdict, r[0].growth_rate, r[1].verdict
        ),
    ))
}

fn rate_fit(seed: u64) -> Result<(bool, String)> {
    let ts: Vec<f64> = (0..25).map(|k| 0.05 * 2f64.powf(k as f64 / 2.0)).collect();
    let fit = fit_stretched_rate(&synthetic_stretched(&ts, 2.0, 0.5, 0.0, 0.01, seed))?;
    Ok((
        (fit.alpha - 0.5).abs() <= 0.05 && (fit.c - 2.0).abs() <= 0.1,
        format!("alpha {:.4}, c {:.4}", fit.alpha, fit.c),
    ))
}

fn integrator(seed: u64) -> Result<(bool, String)> {
    let free = ModelParams::new(1.0, 1.0, PeriodicPotential::zero())?;
    let st = Stepper::new(&free, 1e-3, Scheme::Splitting)?;
    let x0 = State::new(0.3, 1.0, 0.5, 7.25);
    let x = st.propagate(x0, 100_000, &mut stream(seed, Purpose::Trajectory, 0), 0.0)?;
    Ok((x.p2 == x0.p2, format!("p2 after 1e5 free steps: {}", x.p2)))
}

fn drift(params: &ModelParams, lyap: &LyapunovParams, seed: u64) -> Result<(bool, String)> {
    let plan = SamplingPlan {
        n_samples: 20_000,
        seed,
        ..Default::default()
    };
    let r = certify_drift(params, lyap, &plan)?;
    Ok((
        r.a_min.is_finite() && r.growing_regions.is_empty() && r.audit_max_rel_error < 1e-3,
        format!(
            "A_min {:.3e} ({}), outer margin {:.3e}, audit {:.1e}",
            r.a_min, r.worst_region, r.outer_margin, r.audit_max_rel_error
        ),
    ))
}

/// Runs every check; never panics on a failing check.
pub fn run(params: &ModelParams, lyap: &LyapunovParams, seed: u64) -> Vec<SelfTestItem> {
    let mut out = vec![
        item("generator_hamiltonian", generator_hamiltonian(params, seed)),
        item("generator_exp_hamiltonian", generator_exp(params, lyap, seed)),
        item("order_calculus", orders(params, lyap, seed)),
        item("test_function", test_function(params, lyap, seed)),
        item("rate_fit_synthetic", rate_fit(seed)),
        item("integrator_free_rotor", integrator(seed)),
        item("drift_certification", drift(params, lyap, seed)),
    ];
    match GibbsMeasure::new(params) {
        Ok(m) => {
            out.push(item("gibbs_moments", gibbs_moments(&m, seed)));
            out.push(item("stationarity", stationarity(&m, seed)));
            out.push(item("nonintegrability", nonintegrability(&m, lyap)));
        }
        Err(e) => out.push(SelfTestItem {
            name: "gibbs_measure",
            passed: false,
            detail: format!("error: {e}"),
        }),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let items = run(&ModelParams::default(), &LyapunovParams::standard(), 1);
        for i in &items {
            assert!(i.passed, "{}: {}", i.name, i.detail);
        }
        assert_eq!(items.len(), 10);
    }
}
