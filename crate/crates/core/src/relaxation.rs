//! Relaxation experiments: the tail-comparison lower bound on the total
//! variation distance to `pi`, escape times of the fast rotor, and
//! stretched-exponential rate fits.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{ModelParams, Scheme, State, Stepper};
use crate::error::{Error, Result};
use crate::gibbs::{tail_f_log, GibbsMeasure};
use crate::lyapunov::{LyapunovParams, TestFunction};
use crate::rng::{stream, Purpose};
use crate::stats::{linear_fit, quantile_sorted, LineFit};

/// Where the ensemble starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Point(State),
    /// Independent draws from `pi`; the lower bound should then vanish.
    Gibbs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvOptions {
    pub dt: f64,
    pub scheme: Scheme,
    pub n_traj: usize,
    pub n_w: usize,
    /// `pi` draws used to place the threshold grid.
    pub n_pi_quantile: usize,
    /// Importance samples per threshold for `pi(F > w)`.
    pub n_pi_tail: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for TvOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Splitting,
            n_traj: 1000,
            n_w: 40,
            n_pi_quantile: 200_000,
            n_pi_tail: 20_000,
            bootstrap: 200,
            seed: 1,
        }
    }
}

/// Thresholds and the stationary tail at each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdGrid {
    pub log_w: Vec<f64>,
    pub pi_tail: Vec<f64>,
    pub pi_stderr: Vec<f64>,
}

/// Thresholds log-spaced in `log F` between the 0.5 and 0.9999 quantiles of
/// `log F` under `pi`.
pub fn threshold_grid(
    measure: &GibbsMeasure,
    lyap: &LyapunovParams,
    n_w: usize,
    n_quantile: usize,
    n_tail: usize,
    seed: u64,
) -> Result<ThresholdGrid> {
    if n_w < 2 {
        return Err(Error::invalid("n_w", "need at least two thresholds"));
    }
    if n_quantile < 10_000 {
        return Err(Error::invalid("n_pi_quantile", "need at least 1e4 draws"));
    }
    let f = TestFunction::new(measure.params(), lyap);
    let mut logs: Vec<f64> = measure
        .sample(seed, n_quantile)
        .par_iter()
        .map(|x| f.log_f(x))
        .collect();
    logs.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&logs, 0.5).max(1e-3);
    let hi = quantile_sorted(&logs, 0.9999);
    if !(hi > lo) {
        return Err(Error::Domain("degenerate log F quantiles under pi".into()));
    }
    let ratio = (hi / lo).ln();
    let log_w: Vec<f64> = (0..n_w)
        .map(|k| lo * (ratio * k as f64 / (n_w - 1) as f64).exp())
        .collect();
    let mut pi_tail = Vec::with_capacity(n_w);
    let mut pi_stderr = Vec::with_capacity(n_w);
    for (k, &lw) in log_w.iter().enumerate() {
        let e = tail_f_log(measure, lyap, lw, n_tail, seed.wrapping_add(k as u64 + 1))?;
        pi_tail.push(e.probability);
        pi_stderr.push(e.stderr);
    }
    Ok(ThresholdGrid {
        log_w,
        pi_tail,
        pi_stderr,
    })
}

/// Which side of the tail comparison attains the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailGap {
    /// `pi(F > w) > nu_t(F > w)`: the ensemble has not yet filled the tail.
    PiAbove,
    /// `nu_t(F > w) > pi(F > w)`: the ensemble still sits too high.
    NuAbove,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LbPoint {
    pub t: f64,
    pub lb: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Bootstrap standard deviation.
    pub stderr: f64,
    pub argmax_log_w: f64,
    pub gap: TailGap,
    /// The maximising threshold is the first or last of the grid.
    pub at_grid_edge: bool,
}

/// Tails of `F` under `pi` and under the ensemble at each time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub thresholds: ThresholdGrid,
    pub times: Vec<f64>,
    /// `nu_tail[i][k] = nu_{t_i}(F > w_k)`
    pub nu_tail: Vec<Vec<f64>>,
    pub nu_stderr: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvReport {
    pub curve: TailCurve,
    pub lb: Vec<LbPoint>,
    pub warnings: Vec<String>,
}

/// `log F` of every trajectory at every time of `t_grid`.
pub fn ensemble_log_f(
    params: &ModelParams,
    lyap: &LyapunovParams,
    init: InitialCondition,
    t_grid: &[f64],
    opts: &TvOptions,
) -> Result<Vec<Vec<f64>>> {
    let (dt, seed, n_traj) = (opts.dt, opts.seed, opts.n_traj);
    let stepper = Stepper::new(params, dt, opts.scheme)?;
    let f = TestFunction::new(params, lyap);
    let steps = grid_steps(t_grid, dt)?;
    let measure = match init {
        InitialCondition::Gibbs => Some(GibbsMeasure::new(params)?),
        InitialCondition::Point(_) => None,
    };
    // per trajectory, then transposed to per time
    let per_traj: Vec<Vec<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut x = match (init, &measure) {
                (InitialCondition::Point(x0), _) => x0,
                (InitialCondition::Gibbs, Some(m)) => {
                    m.draw(&mut stream(seed, Purpose::GibbsSample, i as u64))
                }
                _ => unreachable!(),
            };
            let mut rng = stream(seed, Purpose::Trajectory, i as u64);
            let mut done = 0u64;
            let mut out = Vec::with_capacity(steps.len());
            for &k in &steps {
                x = stepper.propagate(x, k - done, &mut rng, done as f64 * dt)?;
                done = k;
                out.push(f.log_f(&x));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..steps.len())
        .map(|j| per_traj.iter().map(|row| row[j]).collect())
        .collect())
}

fn grid_steps(t_grid: &[f64], dt: f64) -> Result<Vec<u64>> {
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid", "empty"));
    }
    let mut steps = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid("t_grid", format!("bad time {t}")));
        }
        steps.push((t / dt).round() as u64);
    }
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("t_grid", "must be non-decreasing"));
    }
    Ok(steps)
}

/// `LB(t) = max_w |pi(F > w) - nu_t(F > w)|` along `t_grid`.
pub fn tv_lower_bound(
    params: &ModelParams,
    lyap: &LyapunovParams,
    init: InitialCondition,
    t_grid: &[f64],
    opts: &TvOptions,
) -> Result<TvReport> {
    if opts.n_traj < 2 {
        return Err(Error::invalid("n_traj", "need at least 2 trajectories"));
    }
    let measure = GibbsMeasure::new(params)?;
    let grid = threshold_grid(
        &measure,
        lyap,
        opts.n_w,
        opts.n_pi_quantile,
        opts.n_pi_tail,
        opts.seed,
    )?;
    let logs = ensemble_log_f(params, lyap, init, t_grid, opts)?;
    Ok(lower_bound_from_samples(t_grid, &logs, grid, opts.bootstrap, opts.seed))
}

/// The lower-bound curve from ensemble values of `log F` (one vector per
/// time) and a threshold grid.
pub fn lower_bound_from_samples(
    t_grid: &[f64],
    log_f: &[Vec<f64>],
    grid: ThresholdGrid,
    bootstrap: usize,
    seed: u64,
) -> TvReport {
    let n_w = grid.log_w.len();
    let mut nu_tail = Vec::with_capacity(t_grid.len());
    let mut nu_stderr = Vec::with_capacity(t_grid.len());
    let mut lb = Vec::with_capacity(t_grid.len());
    let mut warnings = Vec::new();
    for (i, (&t, logs)) in t_grid.iter().zip(log_f).enumerate() {
        let n = logs.len();
        // level[j] = number of thresholds strictly below log F_j
        let level: Vec<usize> = logs
            .iter()
            .map(|&l| grid.log_w.partition_point(|&lw| lw < l))
            .collect();
        let tails = |counts: &[usize]| -> Vec<f64> {
            // counts[m] = trajectories at level m; tail_k = #(level > k) / n
            let mut out = vec![0.0; n_w];
            let mut above = 0usize;
            for k in (0..n_w).rev() {
                above += counts[k + 1];
                out[k] = above as f64 / n as f64;
            }
            out
        };
        let mut counts = vec![0usize; n_w + 1];
        for &m in &level {
            counts[m] += 1;
        }
        let nu = tails(&counts);
        let (best_k, best, gap) = max_gap(&grid.pi_tail, &nu);

        let mut rng = stream(seed, Purpose::Bootstrap, i as u64);
        let mut boot: Vec<f64> = (0..bootstrap)
            .map(|_| {
                let mut c = vec![0usize; n_w + 1];
                for _ in 0..n {
                    c[level[rng.random_range(0..n)]] += 1;
                }
                max_gap(&grid.pi_tail, &tails(&c)).1
            })
            .collect();
        boot.sort_by(f64::total_cmp);
        let (ci_lo, ci_hi, stderr) = if boot.is_empty() {
            (best, best, 0.0)
        } else {
            let m = boot.iter().sum::<f64>() / boot.len() as f64;
            let var = boot.iter().map(|b| (b - m).powi(2)).sum::<f64>()
                / (boot.len().max(2) - 1) as f64;
            (
                quantile_sorted(&boot, 0.025),
                quantile_sorted(&boot, 0.975),
                var.sqrt(),
            )
        };
        let at_grid_edge = best > 0.0 && (best_k == 0 || best_k == n_w - 1);
        if at_grid_edge {
            warnings.push(format!(
                "t = {t}: maximising threshold at the edge of the grid (log w = {})",
                grid.log_w[best_k]
            ));
        }
        nu_stderr.push(
            nu.iter()
                .map(|p| (p * (1.0 - p) / n as f64).sqrt())
                .collect(),
        );
        nu_tail.push(nu);
        lb.push(LbPoint {
            t,
            lb: best,
            ci_lo,
            ci_hi,
            stderr,
            argmax_log_w: grid.log_w[best_k],
            gap,
            at_grid_edge,
        });
    }
    TvReport {
        curve: TailCurve {
            thresholds: grid,
            times: t_grid.to_vec(),
            nu_tail,
            nu_stderr,
        },
        lb,
        warnings,
    }
}

fn max_gap(pi: &[f64], nu: &[f64]) -> (usize, f64, TailGap) {
    let mut best = (0, 0.0, TailGap::PiAbove);
    for (k, (p, v)) in pi.iter().zip(nu).enumerate() {
        let d = p - v;
        if d.abs() > best.1 {
            let gap = if d > 0.0 {
                TailGap::PiAbove
            } else {
                TailGap::NuAbove
            };
            best = (k, d.abs().min(1.0), gap);
        }
    }
    best
}

/// Geometric time grid `t0, 2 t0, 4 t0, ...` with `n` points.
pub fn geometric_times(t0: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t0 * 2f64.powi(k as i32)).collect()
}

/// Total variation between the histograms of `(p1, p2)` of two ensembles
/// on a `bins x bins` grid over `[-range, range]^2` (with overflow cells).
pub fn momentum_histogram_tv(a: &[State], b: &[State], bins: usize, range: f64) -> f64 {
    let cell = |x: &State| -> usize {
        let idx = |p: f64| -> usize {
            if p < -range {
                0
            } else if p >= range {
                bins + 1
            } else {
                1 + (((p + range) / (2.0 * range)) * bins as f64) as usize
            }
        };
        idx(x.p1) * (bins + 2) + idx(x.p2)
    };
    let mut ha = vec![0.0; (bins + 2) * (bins + 2)];
    let mut hb = ha.clone();
    for x in a {
        ha[cell(x)] += 1.0 / a.len() as f64;
    }
    for x in b {
        hb[cell(x)] += 1.0 / b.len() as f64;
    }
    0.5 * ha.iter().zip(&hb).map(|(u, v)| (u - v).abs()).sum::<f64>()
}

/// One CSV row of the lower-bound curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct LbRow {
    pub t: f64,
    #[serde(rename = "LB")]
    pub lb: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `w` itself; infinite once `log w` exceeds the `f64` range.
    pub argmax_w: f64,
    pub argmax_log_w: f64,
}

impl From<&LbPoint> for LbRow {
    fn from(p: &LbPoint) -> Self {
        Self {
            t: p.t,
            lb: p.lb,
            ci_lo: p.ci_lo,
            ci_hi: p.ci_hi,
            argmax_w: p.argmax_log_w.exp(),
            argmax_log_w: p.argmax_log_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeOptions {
    pub dt: f64,
    pub scheme: Scheme,
    /// Steps after which a trajectory is censored.
    pub budget_steps: u64,
}

impl Default for EscapeOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Splitting,
            budget_steps: 1_000_000_000,
        }
    }
}

/// Hitting time of `|p2| <= floor`, or the budget if censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EscapeSample {
    pub tau: f64,
    pub censored: bool,
}

/// First times `|p2(t)| <= floor` from `(0, 0, 0, p)`. Trajectory `i` uses
/// the same noise for every `p`, so results for different `p` are coupled.
pub fn escape_time_samples(
    params: &ModelParams,
    p: f64,
    floor: f64,
    n_traj: usize,
    seed: u64,
    opts: &EscapeOptions,
) -> Result<Vec<EscapeSample>> {
    if !(floor > 0.0) {
        return Err(Error::invalid("energy_floor", "must be > 0"));
    }
    if !(p.abs() >= floor && p.is_finite()) {
        return Err(Error::invalid(
            "P",
            format!("need |P| >= energy_floor = {floor}, got {p}"),
        ));
    }
    let stepper = Stepper::new(params, opts.dt, opts.scheme)?;
    let x0 = State::new(0.0, 0.0, 0.0, p);
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Trajectory, i as u64);
            first_passage(&stepper, x0, floor, opts.budget_steps, &mut rng)
        })
        .collect()
}

fn first_passage<R: Rng>(
    stepper: &Stepper,
    x0: State,
    floor: f64,
    budget: u64,
    rng: &mut R,
) -> Result<EscapeSample> {
    use rand_distr::StandardNormal;
    if x0.p2.abs() <= floor {
        return Ok(EscapeSample {
            tau: 0.0,
            censored: false,
        });
    }
    let mut x = x0;
    let mut force = stepper.force_at(&x);
    for k in 1..=budget {
        x = stepper.advance(x, &mut force, rng.sample(StandardNormal));
        if x.p2.abs() <= floor {
            return Ok(EscapeSample {
                tau: k as f64 * stepper.dt(),
                censored: false,
            });
        }
        if k & 0xffff == 0 && !x.is_finite() {
            return Err(Error::Diverged {
                time: k as f64 * stepper.dt(),
                state: x.to_string(),
            });
        }
    }
    Ok(EscapeSample {
        tau: budget as f64 * stepper.dt(),
        censored: true,
    })
}

/// Summary of [`escape_time_samples`]. Censored times enter the mean and
/// quantiles at the budget, so with censoring `mean_tau` is a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EscapeStats {
    #[serde(rename = "P")]
    pub p: f64,
    pub mean_tau: f64,
    pub stderr_tau: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub censored_frac: f64,
    pub n_traj: usize,
}

impl EscapeStats {
    pub fn from_samples(p: f64, samples: &[EscapeSample]) -> Self {
        let mut taus: Vec<f64> = samples.iter().map(|s| s.tau).collect();
        taus.sort_by(f64::total_cmp);
        let n = taus.len() as f64;
        let mean = taus.iter().sum::<f64>() / n;
        let var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            p,
            mean_tau: mean,
            stderr_tau: (var / n).sqrt(),
            q10: quantile_sorted(&taus, 0.1),
            q50: quantile_sorted(&taus, 0.5),
            q90: quantile_sorted(&taus, 0.9),
            censored_frac: samples.iter().filter(|s| s.censored).count() as f64 / n,
            n_traj: samples.len(),
        }
    }
}

pub fn escape_time(
    params: &ModelParams,
    p: f64,
    floor: f64,
    n_traj: usize,
    seed: u64,
    opts: &EscapeOptions,
) -> Result<EscapeStats> {
    if n_traj == 0 {
        return Err(Error::invalid("n_traj", "must be positive"));
    }
    let samples = escape_time_samples(params, p, floor, n_traj, seed, opts)?;
    Ok(EscapeStats::from_samples(p, &samples))
}

/// Escape statistics over several initial momenta and the slope of
/// `log E[tau]` against `log P`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeScan {
    pub stats: Vec<EscapeStats>,
    pub slope: Option<LineFit>,
}

pub fn escape_scan(
    params: &ModelParams,
    ps: &[f64],
    floor: f64,
    n_traj: usize,
    seed: u64,
    opts: &EscapeOptions,
) -> Result<EscapeScan> {
    let stats = ps
        .iter()
        .map(|&p| escape_time(params, p, floor, n_traj, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    let usable: Vec<&EscapeStats> = stats.iter().filter(|s| s.mean_tau > 0.0).collect();
    let slope = if usable.len() >= 2 {
        let xs: Vec<f64> = usable.iter().map(|s| s.p.abs().ln()).collect();
        let ys: Vec<f64> = usable.iter().map(|s| s.mean_tau.ln()).collect();
        Some(linear_fit(&xs, &ys)?)
    } else {
        None
    };
    Ok(EscapeScan { stats, slope })
}

/// A positive decaying quantity observed at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

impl From<&LbPoint> for RatePoint {
    fn from(p: &LbPoint) -> Self {
        Self {
            t: p.t,
            value: p.lb,
            stderr: p.stderr,
        }
    }
}

/// Least-squares fit of `log value = log h - c t^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub alpha: f64,
    /// Profile interval for `alpha`.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub c: f64,
    pub log_h: f64,
    pub rms_residual: f64,
    /// Fit with `alpha = 1/2` held fixed.
    pub c_half: f64,
    pub log_h_half: f64,
    pub rms_half: f64,
    /// Fit with `alpha = 1` held fixed.
    pub c_exponential: f64,
    pub rms_exponential: f64,
    /// `rms_exponential / rms_half`.
    pub residual_ratio: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_points: usize,
    /// Drop of the fitted log value across the window, `c (t_max^alpha - t_min^alpha)`.
    pub log_decay: f64,
    /// Whether the residual is small and the decay large enough to quote `alpha`.
    pub alpha_quoted: bool,
}

impl RateFit {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let fields: [(&str, String); 19] = [
            ("alpha", self.alpha.to_string()),
            ("alpha_lo", self.alpha_lo.to_string()),
            ("alpha_hi", self.alpha_hi.to_string()),
            ("c", self.c.to_string()),
            ("log_h", self.log_h.to_string()),
            ("rms_residual", self.rms_residual.to_string()),
            ("c_half", self.c_half.to_string()),
            ("log_h_half", self.log_h_half.to_string()),
            ("rms_half", self.rms_half.to_string()),
            ("c_exponential", self.c_exponential.to_string()),
            ("rms_exponential", self.rms_exponential.to_string()),
            ("residual_ratio", self.residual_ratio.to_string()),
            ("t_min", self.t_min.to_string()),
            ("t_max", self.t_max.to_string()),
            ("n_points", self.n_points.to_string()),
            ("log_decay", self.log_decay.to_string()),
            ("alpha_quoted", self.alpha_quoted.to_string()),
            ("max_quoted_residual", MAX_QUOTED_RESIDUAL.to_string()),
            ("min_quoted_decay", MIN_QUOTED_DECAY.to_string()),
        ];
        fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Residual above which `alpha` is not quoted (natural-log units).
pub const MAX_QUOTED_RESIDUAL: f64 = 0.25;

/// A plateau fits any `alpha`; the fitted curve must fall by at least this
/// much (natural log) across the window before `alpha` is quoted.
pub const MIN_QUOTED_DECAY: f64 = 1.0;

struct FixedAlpha {
    c: f64,
    log_h: f64,
    rss: f64,
}

fn fit_fixed_alpha(ts: &[f64], ys: &[f64], alpha: f64) -> FixedAlpha {
    let xs: Vec<f64> = ts.iter().map(|t| t.powf(alpha)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let log_h = my - slope * mx;
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - log_h - slope * x).powi(2))
        .sum();
    FixedAlpha {
        c: -slope,
        log_h,
        rss,
    }
}

/// Fits `log h - c t^alpha` to the points whose value exceeds three
/// standard errors. Needs six such points spanning a decade in `t`.
pub fn fit_stretched_rate(points: &[RatePoint]) -> Result<RateFit> {
    let usable: Vec<&RatePoint> = points
        .iter()
        .filter(|p| p.t > 0.0 && p.value > 0.0 && p.value > 3.0 * p.stderr)
        .collect();
    if usable.len() < 6 {
        return Err(Error::Fit(format!(
            "need at least 6 points above 3 standard errors, have {}",
            usable.len()
        )));
    }
    let ts: Vec<f64> = usable.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.value.ln()).collect();
    let t_min = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    if t_max < 10.0 * t_min {
        return Err(Error::Fit(format!(
            "usable window [{t_min}, {t_max}] is shorter than one decade"
        )));
    }
    let rss = |a: f64| fit_fixed_alpha(&ts, &ys, a).rss;

    // coarse scan in log alpha, then golden-section refinement
    let (a_lo, a_hi) = (0.05f64, 3.0f64);
    let m = 400;
    let grid: Vec<f64> = (0..=m)
        .map(|k| (a_lo.ln() + (a_hi / a_lo).ln() * k as f64 / m as f64).exp())
        .collect();
    let values: Vec<f64> = grid.iter().map(|&a| rss(a)).collect();
    let k_best = (0..=m)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("non-empty grid");
    let (mut lo, mut hi) = (grid[k_best.saturating_sub(1)], grid[(k_best + 1).min(m)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (rss(x1), rss(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = rss(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = rss(x2);
        }
    }
    let alpha = 0.5 * (lo + hi);
    let best = fit_fixed_alpha(&ts, &ys, alpha);

    // profile interval: rss within an F(1, n-3) ~ 4 margin of the minimum
    let n = ts.len() as f64;
    let cut = best.rss * (1.0 + 4.0 / (n - 3.0)) + 1e-300;
    let inside: Vec<f64> = grid
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v <= cut)
        .map(|(&a, _)| a)
        .collect();
    let alpha_lo = inside.iter().cloned().fold(alpha, f64::min);
    let alpha_hi = inside.iter().cloned().fold(alpha, f64::max);

    let half = fit_fixed_alpha(&ts, &ys, 0.5);
    let exp = fit_fixed_alpha(&ts, &ys, 1.0);
    let rms = |r: f64| (r / n).sqrt();
    let rms_residual = rms(best.rss);
    let log_decay = best.c * (t_max.powf(alpha) - t_min.powf(alpha));
    Ok(RateFit {
        alpha,
        alpha_lo,
        alpha_hi,
        c: best.c,
        log_h: best.log_h,
        rms_residual,
        c_half: half.c,
        log_h_half: half.log_h,
        rms_half: rms(half.rss),
        c_exponential: exp.c,
        rms_exponential: rms(exp.rss),
        residual_ratio: rms(exp.rss) / rms(half.rss).max(f64::MIN_POSITIVE),
        t_min,
        t_max,
        n_points: ts.len(),
        log_decay,
        alpha_quoted: rms_residual < MAX_QUOTED_RESIDUAL && log_decay >= MIN_QUOTED_DECAY,
    })
}

/// Exponential fitted on the first half of the window, checked against the
/// second half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialComparison {
    pub lambda: f64,
    pub log_a: f64,
    /// Fraction of second-half points above the extrapolated exponential.
    pub fraction_above: f64,
    /// Every second-half point lies above the extrapolation.
    pub slower_than_exponential: bool,
}

pub fn compare_exponential(points: &[RatePoint]) -> Result<ExponentialComparison> {
    let usable: Vec<&RatePoint> = points.iter().filter(|p| p.value > 0.0).collect();
    if usable.len() < 4 {
        return Err(Error::Fit("need at least 4 positive points".into()));
    }
    let half = usable.len() / 2;
    let xs: Vec<f64> = usable[..half].iter().map(|p| p.t).collect();
    let ys: Vec<f64> = usable[..half].iter().map(|p| p.value.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    let above = usable[half..]
        .iter()
        .filter(|p| p.value.ln() > fit.intercept + fit.slope * p.t)
        .count();
    let rest = usable.len() - half;
    Ok(ExponentialComparison {
        lambda: -fit.slope,
        log_a: fit.intercept,
        fraction_above: above as f64 / rest as f64,
        slower_than_exponential: above == rest,
    })
}

/// `h exp(-c t^alpha)` with multiplicative log-normal noise of relative
/// size `rel_noise`.
pub fn synthetic_stretched(
    ts: &[f64],
    c: f64,
    alpha: f64,
    log_h: f64,
    rel_noise: f64,
    seed: u64,
) -> Vec<RatePoint> {
    use rand_distr::StandardNormal;
    let mut rng = stream(seed, Purpose::Sampling, 99);
    ts.iter()
        .map(|&t| {
            let z: f64 = rng.sample(StandardNormal);
            let value = (log_h - c * t.powf(alpha) + rel_noise * z).exp();
            RatePoint {
                t,
                value,
                stderr: rel_noise * value,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PeriodicPotential;

    fn log_times(n: usize) -> Vec<f64> {
        (0..n).map(|k| 0.05 * 2f64.powf(k as f64 / 2.0)).collect()
    }

    #[test]
    fn recovers_stretched_exponent() {
        let pts = synthetic_stretched(&log_times(25), 2.0, 0.5, 0.0, 0.01, 7);
        let fit = fit_stretched_rate(&pts).unwrap();
        assert!((fit.alpha - 0.5).abs() < 0.05, "{fit:?}");
        assert!((fit.c - 2.0).abs() < 0.1);
        assert!((fit.c_half - 2.0).abs() < 0.02);
        assert!(fit.alpha_lo <= fit.alpha && fit.alpha <= fit.alpha_hi);
        assert!(fit.residual_ratio > 2.0 && fit.alpha_quoted);
    }

    #[test]
    fn plateau_is_not_quoted() {
        let pts = synthetic_stretched(&log_times(25), 1e-4, 0.5, 0.0, 1e-4, 3);
        let fit = fit_stretched_rate(&pts).unwrap();
        assert!(fit.rms_residual < MAX_QUOTED_RESIDUAL);
        assert!(fit.log_decay < MIN_QUOTED_DECAY && !fit.alpha_quoted, "{fit:?}");
    }

    #[test]
    fn recovers_exponential() {
        let pts = synthetic_stretched(&log_times(16), 1.0, 1.0, 0.0, 0.01, 8);
        let fit = fit_stretched_rate(&pts).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.1, "{fit:?}");
        assert!((fit.c_exponential - 1.0).abs() < 0.05);
    }

    #[test]
    fn fit_preconditions() {
        let pts = synthetic_stretched(&log_times(5), 2.0, 0.5, 0.0, 0.01, 1);
        assert!(fit_stretched_rate(&pts).is_err());
        let narrow: Vec<f64> = (0..10).map(|k| 1.0 + 0.5 * k as f64).collect();
        let pts = synthetic_stretched(&narrow, 2.0, 0.5, 0.0, 0.01, 1);
        assert!(fit_stretched_rate(&pts).is_err());
        // points buried in noise are dropped
        let mut pts = synthetic_stretched(&log_times(12), 1.0, 0.5, 0.0, 0.01, 1);
        for p in pts.iter_mut().skip(3) {
            p.stderr = p.value;
        }
        assert!(fit_stretched_rate(&pts).is_err());
    }

    #[test]
    fn key_values_are_flat() {
        let pts = synthetic_stretched(&log_times(20), 2.0, 0.5, 0.0, 0.01, 3);
        let kv = fit_stretched_rate(&pts).unwrap().to_key_values();
        assert!(kv.lines().all(|l| l.split('=').count() == 2));
        assert!(kv.lines().any(|l| l.starts_with("alpha=")));
    }

    #[test]
    fn stretched_decays_slower_than_exponential() {
        let pts = synthetic_stretched(&log_times(20), 2.0, 0.5, 0.0, 0.0, 3);
        assert!(compare_exponential(&pts).unwrap().slower_than_exponential);
        let pts = synthetic_stretched(&log_times(20), 1.0, 1.0, 0.0, 0.0, 3);
        let cmp = compare_exponential(&pts).unwrap();
        assert!((cmp.lambda - 1.0).abs() < 1e-9);
    }

    #[test]
    fn escape_at_floor_is_immediate() {
        let p = ModelParams::default();
        let s = escape_time(&p, 2.0, 2.0, 10, 1, &EscapeOptions::default()).unwrap();
        assert_eq!(s.mean_tau, 0.0);
        assert_eq!(s.censored_frac, 0.0);
        assert!(escape_time(&p, 1.0, 2.0, 10, 1, &EscapeOptions::default()).is_err());
    }

    #[test]
    fn free_rotor_is_censored() {
        let p = ModelParams::without_bath(1.0, PeriodicPotential::zero());
        let opts = EscapeOptions {
            budget_steps: 10_000,
            ..Default::default()
        };
        let s = escape_time(&p, 5.0, 1.0, 8, 1, &opts).unwrap();
        assert_eq!(s.censored_frac, 1.0);
        assert!((s.mean_tau - 10.0).abs() < 1e-9);
    }

    #[test]
    fn escape_medians_increase_with_momentum() {
        let p = ModelParams::default();
        let opts = EscapeOptions {
            dt: 5e-3,
            ..Default::default()
        };
        let scan = escape_scan(&p, &[3.0, 4.0, 5.0], 1.0, 200, 3, &opts).unwrap();
        let med: Vec<f64> = scan.stats.iter().map(|s| s.q50).collect();
        assert!(med[0] < med[1] && med[1] < med[2], "{med:?}");
        assert!(scan.slope.unwrap().slope > 2.0);
        assert!(scan.stats.iter().all(|s| s.censored_frac == 0.0));
    }

    #[test]
    fn escape_is_reproducible() {
        let p = ModelParams::default();
        let opts = EscapeOptions {
            dt: 5e-3,
            ..Default::default()
        };
        let a = escape_time_samples(&p, 3.0, 1.0, 16, 9, &opts).unwrap();
        let b = escape_time_samples(&p, 3.0, 1.0, 16, 9, &opts).unwrap();
        assert_eq!(a, b);
    }

    fn quick_opts(n_traj: usize) -> TvOptions {
        TvOptions {
            dt: 5e-3,
            n_traj,
            n_w: 30,
            n_pi_quantile: 100_000,
            n_pi_tail: 20_000,
            bootstrap: 100,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn lower_bound_at_time_zero_is_the_atom() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        let x0 = State::new(0.0, 0.0, 0.0, 8.0);
        let rep = tv_lower_bound(&p, &l, InitialCondition::Point(x0), &[0.0], &quick_opts(50)).unwrap();
        let f = TestFunction::new(&p, &l);
        let g = GibbsMeasure::new(&p).unwrap();
        let tail = tail_f_log(&g, &l, f.log_f(&x0), 50_000, 2).unwrap();
        let lb = rep.lb[0];
        assert_eq!(lb.gap, TailGap::NuAbove);
        assert!((lb.lb - (1.0 - tail.probability)).abs() < 0.02, "{lb:?} {tail:?}");
        assert_eq!(lb.ci_lo, lb.ci_hi);
    }

    #[test]
    fn lower_bound_vanishes_in_equilibrium() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        let n = 1000;
        let rep = tv_lower_bound(&p, &l, InitialCondition::Gibbs, &[0.0, 0.5, 1.0], &quick_opts(n))
            .unwrap();
        for pt in &rep.lb {
            assert!(pt.lb < 1.63 / (n as f64).sqrt() + 0.01, "{pt:?}");
        }
    }

    #[test]
    fn lower_bound_below_momentum_histogram_distance() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        let x0 = State::new(0.0, 0.0, 0.0, 8.0);
        let opts = quick_opts(400);
        let rep = tv_lower_bound(&p, &l, InitialCondition::Point(x0), &[1.0], &opts).unwrap();
        let st = Stepper::new(&p, opts.dt, opts.scheme).unwrap();
        let ens: Vec<State> = (0..400)
            .map(|i| {
                let mut rng = stream(opts.seed, Purpose::Trajectory, i);
                st.propagate(x0, 200, &mut rng, 0.0).unwrap()
            })
            .collect();
        let pi = GibbsMeasure::new(&p).unwrap().sample(5, 4000);
        let tv = momentum_histogram_tv(&ens, &pi, 20, 5.0);
        assert!(rep.lb[0].ci_lo <= tv + 0.05, "{:?} vs {tv}", rep.lb[0]);
    }

    #[test]
    fn geometric_grid() {
        assert_eq!(geometric_times(0.5, 4), vec![0.5, 1.0, 2.0, 4.0]);
    }
}
