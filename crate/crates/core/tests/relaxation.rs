use rotor_core::lyapunov::LyapunovParams;
use rotor_core::relaxation::{tv_lower_bound, InitialCondition, TvOptions};
use rotor_core::ModelParams;

fn mean_tail_stderr(n_traj: usize) -> f64 {
    let opts = TvOptions {
        dt: 5e-3,
        n_traj,
        n_w: 12,
        n_pi_quantile: 20_000,
        n_pi_tail: 2_000,
        bootstrap: 10,
        seed: 3,
        ..TvOptions::default()
    };
    let report = tv_lower_bound(
        &ModelParams::default(),
        &LyapunovParams::standard(),
        InitialCondition::Gibbs,
        &[1.0],
        &opts,
    )
    .unwrap();
    let curve = &report.curve;
    let (tails, errs) = (&curve.nu_tail[0], &curve.nu_stderr[0]);
    let picked: Vec<f64> = tails
        .iter()
        .zip(errs)
        .filter(|(t, _)| **t > 0.02 && **t < 0.98)
        .map(|(_, e)| *e)
        .collect();
    assert!(picked.len() >= 3, "tails {tails:?}");
    picked.iter().sum::<f64>() / picked.len() as f64
}

#[test]
fn tail_stderr_scales_like_inverse_root_n() {
    let small = mean_tail_stderr(500);
    let large = mean_tail_stderr(2000);
    let ratio = small / large;
    assert!((ratio - 2.0).abs() < 0.3, "stderr ratio {ratio} for 4x paths");
}
