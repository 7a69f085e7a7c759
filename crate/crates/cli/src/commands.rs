use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rotor_core::averaging::{default_rays, order_check};
use rotor_core::dynamics::{simulate, Stepper, TrajectoryRow};
use rotor_core::gibbs::{check_nonintegrability, tail_f_log, GibbsMeasure, StripQuadrature};
use rotor_core::io::{read_csv, write_csv};
use rotor_core::lyapunov::{
    estimate_lemma_constants, certify_drift, outer_cone_sample, SamplingPlan,
};
use rotor_core::relaxation::{
    compare_exponential, escape_scan, fit_stretched_rate, geometric_times, synthetic_stretched,
    tv_lower_bound, EscapeOptions, InitialCondition, LbRow, RatePoint, TvOptions,
};
use rotor_core::rng::{stream, Purpose};
use rotor_core::selftest;
use serde::Serialize;

use crate::config::{state_from, ExperimentConfig, InitialKind, RateSource};
use crate::{CliError, Command, Outcome};

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cmd {
        Command::Simulate => run_simulate(cfg),
        Command::GibbsSample => run_gibbs_sample(cfg),
        Command::OrderCheck => run_order_check(cfg),
        Command::DriftCertify => run_drift_certify(cfg),
        Command::Nonintegrability => run_nonintegrability(cfg),
        Command::TvCurve => run_tv_curve(cfg),
        Command::EscapeTimes => run_escape_times(cfg),
        Command::RateFit => run_rate_fit(cfg),
        Command::Selftest => run_selftest(cfg),
        Command::ShowConfig => Ok(Outcome::default()),
    }
}

impl Outcome {
    fn csv<T: Serialize>(&mut self, dir: &Path, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = dir.join(name);
        write_csv(&path, rows)?;
        self.outputs.push(path);
        Ok(())
    }

    fn text(&mut self, dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, body)
            .map_err(|e| CliError::Numerical(format!("writing {}: {e}", path.display())))?;
        self.outputs.push(path);
        Ok(())
    }
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let stepper = Stepper::new(&params, cfg.integrator.dt, cfg.integrator.scheme)?;
    let s = &cfg.simulate;
    let mut rows = Vec::new();
    let mut rng = stream(cfg.seed, Purpose::Trajectory, 0);
    let summary = simulate(
        &stepper,
        &state_from(s.x0),
        s.n_steps,
        &mut rng,
        s.stride,
        &mut [&mut |t, x| rows.push(TrajectoryRow::new(t, x))],
    )?;
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "trajectory.csv", &rows)?;
    out.notes.push(format!(
        "t_end={} max_abs_p2={} final={}",
        summary.t_end, summary.max_abs_p2, summary.final_state
    ));
    Ok(out)
}

#[derive(Serialize)]
struct TailRow {
    log_w: f64,
    tail: f64,
    log_tail: f64,
    stderr: f64,
    rel_stderr: f64,
    unreliable: bool,
}

fn run_gibbs_sample(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let lyap = cfg.lyapunov_params()?;
    let measure = GibbsMeasure::new(&params)?;
    let g = &cfg.gibbs_sample;
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "gibbs_samples.csv", &measure.sample(cfg.seed, g.n))?;
    let mut tails = Vec::with_capacity(g.tail_log_w.len());
    for (i, &lw) in g.tail_log_w.iter().enumerate() {
        let e = tail_f_log(&measure, &lyap, lw, g.n_tail, cfg.seed.wrapping_add(i as u64))?;
        if e.unreliable {
            out.notes
                .push(format!("tail at log w = {lw}: relative stderr {:.2}", e.rel_stderr));
        }
        tails.push(TailRow {
            log_w: e.log_w,
            tail: e.probability,
            log_tail: e.log_probability,
            stderr: e.stderr,
            rel_stderr: e.rel_stderr,
            unreliable: e.unreliable,
        });
    }
    out.csv(&cfg.output_dir, "pi_tail.csv", &tails)?;
    Ok(out)
}

fn run_order_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let o = &cfg.order_check;
    let rays = if o.rays.is_empty() {
        default_rays(cfg.lyapunov.delta)
    } else {
        o.rays.clone()
    };
    let check = order_check(&params, &rays, &o.magnitudes, o.n_angles, cfg.seed)?;
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "orders.csv", &check.rows)?;
    out.csv(&cfg.output_dir, "order_points.csv", &check.points)?;
    Ok(out)
}

fn run_drift_certify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let lyap = cfg.lyapunov_params()?;
    let d = &cfg.drift_certify;
    let plan = SamplingPlan {
        momentum_cap: d.momentum_cap,
        n_samples: d.n_samples,
        seed: cfg.seed,
        audit_fraction: d.audit_fraction,
    };
    let report = certify_drift(&params, &lyap, &plan)?;
    let lemma_sample = outer_cone_sample(lyap.delta(), d.momentum_cap, d.lemma_samples, cfg.seed ^ 0x5eed);
    let lemma = estimate_lemma_constants(&params, &lyap, &lemma_sample, d.refine_top)?;

    let mut out = Outcome::default();
    if d.write_samples {
        out.csv(&cfg.output_dir, "drift_samples.csv", &report.rows)?;
    }
    let mut s = String::new();
    let w = report.worst_state;
    let _ = writeln!(s, "A_min={:e}", report.a_min);
    let _ = writeln!(s, "worst_margin={:e}", report.worst_margin);
    let _ = writeln!(s, "worst_region={}", report.worst_region);
    let _ = writeln!(s, "worst_state={},{},{},{}", w.q1, w.q2, w.p1, w.p2);
    let _ = writeln!(s, "outer_margin={:e}", report.outer_margin);
    for (r, m) in rotor_core::RegionLabel::ALL.iter().zip(report.region_max) {
        let _ = writeln!(s, "max_margin_{}={:e}", r, m);
    }
    let _ = writeln!(s, "n_samples={}", report.n_samples);
    let _ = writeln!(s, "audited={}", report.audited);
    let _ = writeln!(s, "audit_unresolved={}", report.audit_unresolved);
    let _ = writeln!(s, "audit_max_rel_error={:e}", report.audit_max_rel_error);
    let growing: Vec<String> = report.growing_regions.iter().map(|r| r.to_string()).collect();
    let _ = writeln!(s, "growing_regions={}", growing.join(","));
    let _ = writeln!(s, "C1_hat={:e}", lemma.c1_hat);
    let _ = writeln!(s, "C2_hat={:e}", lemma.c2_hat);
    out.text(&cfg.output_dir, "drift_summary.txt", &s)?;
    print!("{s}");
    if !growing.is_empty() {
        out.notes.push(format!(
            "margin still growing with the momentum cap in {}",
            growing.join(",")
        ));
    }
    if !report.a_min.is_finite() {
        out.failure = Some(format!("A_min is not finite ({})", report.a_min));
    }
    Ok(out)
}

#[derive(Serialize)]
struct IntegralRow {
    epsilon: f64,
    exponent: f64,
    radius: f64,
    log_integral: f64,
    log_band: f64,
}

#[derive(Serialize)]
struct VerdictRow {
    epsilon: f64,
    exponent: f64,
    growth_rate: f64,
    verdict: rotor_core::gibbs::GrowthVerdict,
    agrees_with_threshold: bool,
}

fn run_nonintegrability(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let lyap = cfg.lyapunov_params()?;
    let measure = GibbsMeasure::new(&params)?;
    let n = &cfg.nonintegrability;
    let quad = StripQuadrature {
        gap_nodes: n.gap_nodes,
        p1_order: n.p1_order,
        p2_panel: n.p2_panel,
        p2_order: n.p2_order,
    };
    let reports = check_nonintegrability(&measure, &lyap, &n.epsilons, &n.radii, &quad)?;
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for r in &reports {
        rows.extend(r.points.iter().map(|p| IntegralRow {
            epsilon: r.epsilon,
            exponent: r.exponent,
            radius: p.radius,
            log_integral: p.log_integral,
            log_band: p.log_band,
        }));
        verdicts.push(VerdictRow {
            epsilon: r.epsilon,
            exponent: r.exponent,
            growth_rate: r.growth_rate,
            verdict: r.verdict,
            agrees_with_threshold: r.agrees_with_threshold(),
        });
    }
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "nonintegrability.csv", &rows)?;
    out.csv(&cfg.output_dir, "nonintegrability_summary.csv", &verdicts)?;
    Ok(out)
}

#[derive(Serialize)]
struct TailCurveRow {
    t: f64,
    log_w: f64,
    pi_tail: f64,
    pi_stderr: f64,
    nu_tail: f64,
    nu_stderr: f64,
}

fn run_tv_curve(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let lyap = cfg.lyapunov_params()?;
    let c = &cfg.tv_curve;
    let init = match c.initial {
        InitialKind::Point => InitialCondition::Point(state_from(c.x0)),
        InitialKind::Gibbs => InitialCondition::Gibbs,
    };
    let opts = TvOptions {
        dt: cfg.integrator.dt,
        scheme: cfg.integrator.scheme,
        n_traj: c.n_traj,
        n_w: c.n_w,
        n_pi_quantile: c.n_pi_quantile,
        n_pi_tail: c.n_pi_tail,
        bootstrap: c.bootstrap,
        seed: cfg.seed,
    };
    let mut t_grid = vec![0.0];
    t_grid.extend(geometric_times(c.t0, c.n_times));
    let report = tv_lower_bound(&params, &lyap, init, &t_grid, &opts)?;

    let rows: Vec<LbRow> = report.lb.iter().map(LbRow::from).collect();
    let curve = &report.curve;
    let grid = &curve.thresholds;
    let mut tails = Vec::new();
    for (k, &t) in curve.times.iter().enumerate() {
        for j in 0..grid.log_w.len() {
            tails.push(TailCurveRow {
                t,
                log_w: grid.log_w[j],
                pi_tail: grid.pi_tail[j],
                pi_stderr: grid.pi_stderr[j],
                nu_tail: curve.nu_tail[k][j],
                nu_stderr: curve.nu_stderr[k][j],
            });
        }
    }
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "lb_curve.csv", &rows)?;
    out.csv(&cfg.output_dir, "tails.csv", &tails)?;
    out.notes.extend(report.warnings);
    Ok(out)
}

fn run_escape_times(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let e = &cfg.escape_times;
    let opts = EscapeOptions {
        dt: cfg.integrator.dt,
        scheme: cfg.integrator.scheme,
        budget_steps: e.budget_steps,
    };
    let scan = escape_scan(&params, &e.momenta, e.energy_floor, e.n_traj, cfg.seed, &opts)?;
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "escape.csv", &scan.stats)?;
    let mut s = String::new();
    match &scan.slope {
        Some(fit) => {
            let _ = writeln!(s, "log_tau_vs_log_P_slope={}", fit.slope);
            let _ = writeln!(s, "intercept={}", fit.intercept);
            let _ = writeln!(s, "rms_residual={}", fit.rms_residual);
        }
        None => {
            let _ = writeln!(s, "log_tau_vs_log_P_slope=nan");
            out.notes.push("no slope: fewer than two uncensored momenta".into());
        }
    }
    out.text(&cfg.output_dir, "escape_summary.txt", &s)?;
    if scan.stats.iter().any(|st| st.censored_frac > 0.0) {
        out.notes
            .push("some trajectories hit the step budget; their times enter as the budget".into());
    }
    Ok(out)
}

fn rate_points(cfg: &ExperimentConfig) -> Result<(Vec<RatePoint>, PathBuf), CliError> {
    let r = &cfg.rate_fit;
    match r.source {
        RateSource::LbCurve => {
            let path = if r.input.as_os_str().is_empty() {
                cfg.output_dir.join("lb_curve.csv")
            } else {
                r.input.clone()
            };
            let rows: Vec<LbRow> = read_csv(&path).map_err(|e| {
                CliError::Validation(format!("rate_fit.input {}: {e}", path.display()))
            })?;
            // 95% interval half-width / 1.96
            let pts = rows
                .iter()
                .map(|row| RatePoint {
                    t: row.t,
                    value: row.lb,
                    stderr: (row.ci_hi - row.ci_lo) / 3.92,
                })
                .collect();
            Ok((pts, path))
        }
        RateSource::Synthetic => {
            let ts = geometric_times(1.0, 20);
            let pts = synthetic_stretched(
                &ts,
                r.synthetic_c,
                r.synthetic_alpha,
                0.0,
                r.synthetic_noise,
                cfg.seed,
            );
            Ok((pts, PathBuf::from("synthetic")))
        }
    }
}

fn run_rate_fit(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (points, source) = rate_points(cfg)?;
    let fit = fit_stretched_rate(&points)?;
    let mut s = format!("source={}\n", source.display());
    s.push_str(&fit.to_key_values());
    match compare_exponential(&points) {
        Ok(cmp) => {
            let _ = writeln!(s, "exp_lambda={}", cmp.lambda);
            let _ = writeln!(s, "exp_fraction_above={}", cmp.fraction_above);
            let _ = writeln!(s, "slower_than_exponential={}", cmp.slower_than_exponential);
        }
        Err(e) => {
            let _ = writeln!(s, "exp_comparison_error={e}");
        }
    }
    let mut out = Outcome::default();
    out.text(&cfg.output_dir, "ratefit.txt", &s)?;
    print!("{s}");
    if !fit.alpha_quoted {
        out.notes
            .push("alpha not quoted: stretched fit residual too large or decay across the window too small".into());
    }
    Ok(out)
}

fn run_selftest(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.model_params()?;
    let lyap = cfg.lyapunov_params()?;
    let items = selftest::run(&params, &lyap, cfg.seed);
    let mut out = Outcome::default();
    out.csv(&cfg.output_dir, "selftest.csv", &items)?;
    let failed: Vec<&str> = items.iter().filter(|i| !i.passed).map(|i| i.name).collect();
    for i in &items {
        println!(
            "{} {} ({})",
            if i.passed { "PASS" } else { "FAIL" },
            i.name,
            i.detail
        );
    }
    if !failed.is_empty() {
        out.failure = Some(format!("selftest failed: {}", failed.join(", ")));
    }
    Ok(out)
}
