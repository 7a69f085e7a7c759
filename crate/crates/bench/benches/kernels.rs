use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rotor_core::averaging::{CorrectionLevel, MomentumSeries};
use rotor_core::lyapunov::{LyapunovParams, TestFunction};
use rotor_core::{ModelParams, Scheme, State, Stepper};

// fixed noise so the timing excludes the RNG
fn normals(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| ((k as f64 * 0.618_033_988_75).fract() - 0.5) * 3.4)
        .collect()
}

fn step(c: &mut Criterion) {
    let params = ModelParams::default();
    let noise = normals(1024);
    for scheme in [Scheme::Splitting, Scheme::EulerMaruyama] {
        let stepper = Stepper::new(&params, 1e-3, scheme).unwrap();
        c.bench_function(&format!("advance_1024/{scheme:?}"), |b| {
            b.iter(|| {
                let mut x = State::new(0.1, 0.2, 0.3, 30.0);
                let mut force = stepper.force_at(&x);
                for &xi in &noise {
                    x = stepper.advance(x, &mut force, xi);
                }
                black_box(x)
            })
        });
    }
}

fn p2_bar_jet(c: &mut Criterion) {
    let params = ModelParams::default();
    let series = MomentumSeries::corrected(params.gamma(), CorrectionLevel::Averaged);
    let x = State::new(0.4, 1.9, 2.0, 40.0);
    c.bench_function("p2_bar_jet", |b| {
        b.iter(|| black_box(series.jet(params.potential(), black_box(&x))))
    });
}

fn test_function(c: &mut Criterion) {
    let params = ModelParams::default();
    let lyap = LyapunovParams::standard();
    let f = TestFunction::new(&params, &lyap);
    let cone = State::new(0.4, 1.9, 2.0, 40.0);
    let edge = State::new(0.4, 1.9, 20.0, 36.0);
    c.bench_function("log_f", |b| b.iter(|| black_box(f.log_f(black_box(&cone)))));
    c.bench_function("lf_over_f/cone", |b| {
        b.iter(|| black_box(f.evaluate(black_box(&cone)).drift_ratio()))
    });
    c.bench_function("lf_over_f/cutoff_shell", |b| {
        b.iter(|| black_box(f.evaluate(black_box(&edge)).drift_ratio()))
    });
}

criterion_group!(benches, step, p2_bar_jet, test_function);
criterion_main!(benches);
