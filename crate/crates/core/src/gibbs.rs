//! The Gibbs measure `pi ~ exp(-H/T)`: exact sampling, quadrature, the
//! tail of `F` under `pi`, and truncated moments of `F`.
//!
//! Under `pi` the momenta are independent `N(0, T)`, `q1` is uniform and the
//! gap `s = q2 - q1` has density proportional to `exp(-W(s)/T)`.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{ModelParams, State};
use crate::error::{Error, Result};
use crate::lyapunov::{LyapunovParams, TestFunction};
use crate::rng::{stream, Purpose};
use crate::stats::{composite_gauss, gauss_legendre, log_sum_exp, LogSum, MonotoneCubic};

const TABLE_POINTS: usize = 4096;
const CHUNK: usize = 4096;

/// Gibbs measure for fixed model parameters.
#[derive(Debug, Clone)]
pub struct GibbsMeasure {
    params: ModelParams,
    log_z_angle: f64,
    /// Gap grid and unnormalised density, `TABLE_POINTS` intervals on `[0, 2 pi]`.
    grid: Vec<f64>,
    density: Vec<f64>,
    inverse_cdf: MonotoneCubic,
}

impl GibbsMeasure {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let t = params.temperature();
        let pot = params.potential();
        let h = TAU / TABLE_POINTS as f64;
        let grid: Vec<f64> = (0..=TABLE_POINTS).map(|k| k as f64 * h).collect();
        let energies: Vec<f64> = grid.iter().map(|&s| pot.value(s) / t).collect();
        let e_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let density: Vec<f64> = energies.iter().map(|e| (e_min - e).exp()).collect();

        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 1..grid.len() {
            acc += 0.5 * h * (density[k - 1] + density[k]);
            cdf.push(acc);
        }
        let total = acc;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Quadrature("angular normalisation".into()));
        }
        let (mut xs, mut ys) = (vec![0.0], vec![0.0]);
        for k in 1..grid.len() {
            let c = cdf[k] / total;
            if c > *xs.last().unwrap() {
                xs.push(c);
                ys.push(grid[k]);
            }
        }
        let inverse_cdf = MonotoneCubic::new(xs, ys)?;
        // periodic trapezoid: spectrally accurate for the normalisation
        let z_scaled: f64 = density[..TABLE_POINTS].iter().sum::<f64>() * h;
        Ok(Self {
            params: params.clone(),
            log_z_angle: z_scaled.ln() - e_min,
            grid,
            density,
            inverse_cdf,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `Z_angle = int_0^{2 pi} exp(-W(s)/T) ds`.
    pub fn z_angle(&self) -> f64 {
        self.log_z_angle.exp()
    }

    pub fn log_z_angle(&self) -> f64 {
        self.log_z_angle
    }

    /// Normalised density of the gap `s`.
    pub fn gap_density(&self, s: f64) -> f64 {
        (-self.params.potential().value(s) / self.params.temperature() - self.log_z_angle).exp()
    }

    /// Gap with the given uniform quantile.
    pub fn gap_quantile(&self, u: f64) -> f64 {
        self.inverse_cdf.eval(u)
    }

    /// `E_pi[f(s)]` by the periodic trapezoid rule on the table grid.
    pub fn angular_expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..TABLE_POINTS {
            num += f(self.grid[k]) * self.density[k];
            den += self.density[k];
        }
        num / den
    }

    /// One exact draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let sd = self.params.temperature().sqrt();
        let normal = Normal::new(0.0, sd).expect("positive temperature");
        let q1 = TAU * rng.random::<f64>();
        let s = self.gap_quantile(rng.random::<f64>());
        State::new(q1, q1 + s, normal.sample(rng), normal.sample(rng))
    }

    /// `n` independent draws. Work is split into fixed chunks with their own
    /// streams, so the output does not depend on the thread count.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<State> {
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = stream(seed, Purpose::GibbsSample, c as u64);
                let len = CHUNK.min(n - c * CHUNK);
                (0..len).map(move |_| self.draw(&mut rng)).collect::<Vec<_>>()
            })
            .collect()
    }
}

pub fn sample(measure: &GibbsMeasure, seed: u64, n: usize) -> Vec<State> {
    measure.sample(seed, n)
}

/// Estimate of `pi(F > w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub log_w: f64,
    /// `pi(F > w)`; underflows to 0 for very large `w`, see `log_probability`.
    pub probability: f64,
    pub log_probability: f64,
    pub stderr: f64,
    pub rel_stderr: f64,
    /// Relative standard error above 20%.
    pub unreliable: bool,
    pub n_samples: usize,
}

impl TailEstimate {
    fn from_log_weights(log_w: f64, hits: &[f64], n: usize) -> Self {
        let nf = n as f64;
        if hits.is_empty() {
            return Self {
                log_w,
                probability: 0.0,
                log_probability: f64::NEG_INFINITY,
                stderr: 0.0,
                rel_stderr: f64::INFINITY,
                unreliable: true,
                n_samples: n,
            };
        }
        let log_mean = log_sum_exp(hits) - nf.ln();
        let second: Vec<f64> = hits.iter().map(|l| 2.0 * (l - log_mean)).collect();
        let mean_sq_ratio = (log_sum_exp(&second) - nf.ln()).exp();
        let rel_var = ((mean_sq_ratio - 1.0) * nf / (nf - 1.0).max(1.0)).max(0.0);
        let rel_stderr = (rel_var / nf).sqrt();
        let probability = log_mean.exp();
        Self {
            log_w,
            probability,
            log_probability: log_mean,
            stderr: probability * rel_stderr,
            rel_stderr,
            unreliable: rel_stderr > 0.2,
            n_samples: n,
        }
    }
}

fn check_threshold(log_w: f64) -> Result<()> {
    if !(log_w >= 0.0) {
        return Err(Error::Domain(format!(
            "tail threshold must be >= 1, got exp({log_w})"
        )));
    }
    Ok(())
}

/// `pi(F > w)` by defensive importance sampling: half the draws come from
/// `pi`, half from a proposal whose `|p2|` is a shifted exponential starting
/// just below the level where `exp(beta_+ p2^2 / 2)` reaches `w`.
pub fn tail_f(
    measure: &GibbsMeasure,
    lyap: &LyapunovParams,
    w: f64,
    n: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if !(w >= 1.0) {
        return Err(Error::Domain(format!("tail threshold must be >= 1, got {w}")));
    }
    tail_f_log(measure, lyap, w.ln(), n, seed)
}

/// [`tail_f`] with the threshold given as `log w`.
pub fn tail_f_log(
    measure: &GibbsMeasure,
    lyap: &LyapunovParams,
    log_w: f64,
    n: usize,
    seed: u64,
) -> Result<TailEstimate> {
    check_threshold(log_w)?;
    if n < 2 {
        return Err(Error::invalid("n", "need at least 2 samples"));
    }
    if log_w == 0.0 {
        // F >= 1 everywhere and F > 1 off a null set
        return Ok(TailEstimate::from_log_weights(0.0, &vec![0.0; n], n));
    }
    let f = TestFunction::new(measure.params(), lyap);
    let t = measure.params().temperature();
    let a0 = (2.0 * log_w / lyap.beta_plus()).sqrt();
    let start = (a0 - 3.0 * t / a0.max(1.0)).max(0.0);
    let rate = start.max(1.0) / t;
    let exp = Exp::new(rate).expect("positive rate");
    let log_pi = |p2: f64| -0.5 * p2 * p2 / t - 0.5 * (TAU * t).ln();
    let log_q = |p2: f64| {
        let a = p2.abs();
        if a > start {
            (0.5 * rate).ln() - rate * (a - start)
        } else {
            f64::NEG_INFINITY
        }
    };
    let chunks = n.div_ceil(CHUNK);
    let hits: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, Purpose::Importance, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut out = Vec::new();
            for _ in 0..len {
                let mut x = measure.draw(&mut rng);
                if rng.random::<bool>() {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    x.p2 = sign * (start + exp.sample(&mut rng));
                }
                if f.log_f(&x) > log_w {
                    let lp = log_pi(x.p2);
                    let mix = log_sum_exp(&[lp, log_q(x.p2)]) - 2f64.ln();
                    out.push(lp - mix);
                }
            }
            out
        })
        .collect();
    Ok(TailEstimate::from_log_weights(log_w, &hits, n))
}

/// Plain Monte Carlo `pi(F > w)`, for cross-checking [`tail_f`].
pub fn tail_f_plain(
    measure: &GibbsMeasure,
    lyap: &LyapunovParams,
    w: f64,
    n: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if !(w >= 1.0) {
        return Err(Error::Domain(format!("tail threshold must be >= 1, got {w}")));
    }
    let f = TestFunction::new(measure.params(), lyap);
    let log_w = w.ln();
    let hits: Vec<f64> = measure
        .sample(seed, n)
        .iter()
        .filter(|x| f.log_f(x) > log_w)
        .map(|_| 0.0)
        .collect();
    Ok(TailEstimate::from_log_weights(log_w, &hits, n))
}

/// `log pi_R(F^{1-eps})` at one truncation radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedIntegral {
    #[serde(rename = "R")]
    pub radius: f64,
    pub log_integral: f64,
    /// Contribution of `R_prev < |p2| <= R` alone (for the first radius, of
    /// everything up to it).
    pub log_band: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthVerdict {
    Divergent,
    Plateau,
    Inconclusive,
}

/// Growth of the truncated integrals of `F^{1-eps}` over the strip
/// `{|p1| <= 1} n Omega3, |p2| <= R`.
///
/// The cumulative integral is dominated for moderate `R` by the states near
/// the unit circle where `F` is very large, so growth is judged on the
/// contributions of successive bands in `|p2|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonintegrabilityReport {
    pub epsilon: f64,
    /// `(1 - eps) beta_+ - 1/T`; the integral diverges iff this is positive.
    pub exponent: f64,
    pub points: Vec<TruncatedIntegral>,
    /// Slope of the log band contribution against `R^2 / 2` over the last
    /// two bands; close to `exponent` once the tail drives the bands.
    pub growth_rate: f64,
    pub verdict: GrowthVerdict,
}

impl NonintegrabilityReport {
    /// Whether the verdict matches the sign of `exponent`.
    pub fn agrees_with_threshold(&self) -> bool {
        match self.verdict {
            GrowthVerdict::Divergent => self.exponent > 0.0,
            GrowthVerdict::Plateau => self.exponent < 0.0,
            GrowthVerdict::Inconclusive => false,
        }
    }
}

pub const DEFAULT_EPSILONS: [f64; 5] = [0.01, 0.05, 0.1, 0.3, 0.5];
pub const DEFAULT_RADII: [f64; 6] = [10.0, 20.0, 40.0, 80.0, 160.0, 320.0];

/// Quadrature resolution for [`check_nonintegrability`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripQuadrature {
    /// Periodic trapezoid nodes in the gap.
    pub gap_nodes: usize,
    /// Gauss-Legendre order on each of the three `p1` segments.
    pub p1_order: usize,
    /// Panel width in `p2` away from the lower edge.
    pub p2_panel: f64,
    pub p2_order: usize,
}

impl Default for StripQuadrature {
    fn default() -> Self {
        Self {
            gap_nodes: 32,
            p1_order: 10,
            p2_panel: 0.25,
            p2_order: 8,
        }
    }
}

/// Truncated integrals for each `eps` over the radii `radii`.
pub fn check_nonintegrability(
    measure: &GibbsMeasure,
    lyap: &LyapunovParams,
    epsilons: &[f64],
    radii: &[f64],
    quad: &StripQuadrature,
) -> Result<Vec<NonintegrabilityReport>> {
    for &e in epsilons {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {e}")));
        }
    }
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("radii", "need at least two increasing radii"));
    }
    let delta = lyap.delta();
    let cone = 1.0 + 2.0 * delta;
    if !(radii[0] > cone) {
        return Err(Error::invalid("radii", format!("smallest radius must exceed {cone}")));
    }
    let t = measure.params().temperature();
    let f = TestFunction::new(measure.params(), lyap);

    // p1 nodes on [-1, 1], split where the lower edge of the strip has a kink
    let kink = 1.0 / (1.0 + cone * cone).sqrt();
    let mut p1_nodes = Vec::new();
    for (a, b) in [(-1.0, -kink), (-kink, kink), (kink, 1.0)] {
        p1_nodes.extend(composite_gauss(a, b, 1, quad.p1_order));
    }
    let (gl_x, gl_w) = gauss_legendre(quad.p2_order);
    let log_norm_1d = -0.5 * (TAU * t).ln();
    let ln_gap_w = (TAU / quad.gap_nodes as f64).ln();

    // per gap node: one LogSum per (epsilon, radius band)
    let n_eps = epsilons.len();
    let n_r = radii.len();
    let bands: Vec<Vec<LogSum>> = (0..quad.gap_nodes)
        .into_par_iter()
        .map(|k| -> Result<Vec<LogSum>> {
            let s = TAU * k as f64 / quad.gap_nodes as f64;
            let log_gap = measure.gap_density(s).ln() + ln_gap_w;
            let mut acc = vec![LogSum::default(); n_eps * n_r];
            for &(p1, w1) in &p1_nodes {
                let lower = (cone * p1.abs()).max((1.0 - p1 * p1).max(0.0).sqrt());
                let base = log_gap + w1.ln() + log_norm_1d - 0.5 * p1 * p1 / t;
                let mut edges = vec![lower, (lower + 2.0).min(radii[0])];
                edges.extend_from_slice(radii);
                for seg in 0..edges.len() - 1 {
                    let (a, b) = (edges[seg], edges[seg + 1]);
                    if b <= a {
                        continue;
                    }
                    let band = seg.saturating_sub(1);
                    let width = if seg == 0 { 0.05 } else { quad.p2_panel };
                    let panels = ((b - a) / width).ceil().max(1.0) as usize;
                    let h = (b - a) / panels as f64;
                    for pi in 0..panels {
                        let lo = a + pi as f64 * h;
                        for (gx, gw) in gl_x.iter().zip(&gl_w) {
                            let mag = lo + 0.5 * h * (gx + 1.0);
                            let lw = base + (0.5 * h * gw).ln() + log_norm_1d
                                - 0.5 * mag * mag / t;
                            for sign in [1.0, -1.0] {
                                let x = State {
                                    q1: 0.0,
                                    q2: s,
                                    p1,
                                    p2: sign * mag,
                                };
                                let lf = f.log_f(&x);
                                if !lf.is_finite() {
                                    return Err(Error::Quadrature(format!(
                                        "non-finite log F at {x}"
                                    )));
                                }
                                for (j, &e) in epsilons.iter().enumerate() {
                                    acc[j * n_r + band].add(lw + (1.0 - e) * lf);
                                }
                            }
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let reports = epsilons
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let mut cumulative = LogSum::default();
            let mut points = Vec::with_capacity(n_r);
            for (r, &radius) in radii.iter().enumerate() {
                let mut band = LogSum::default();
                for per_gap in &bands {
                    band.add(per_gap[j * n_r + r].value());
                }
                cumulative.add(band.value());
                points.push(TruncatedIntegral {
                    radius,
                    log_integral: cumulative.value(),
                    log_band: band.value(),
                });
            }
            let m = points.len();
            let (last, prev) = (&points[m - 1], &points[m - 2]);
            // a growing band is dominated by its outer edge, a decaying one
            // by its inner edge
            let (outer, inner) = if last.log_band >= prev.log_band || m < 3 {
                (last.radius, prev.radius)
            } else {
                (prev.radius, points[m - 3].radius)
            };
            let growth_rate =
                (last.log_band - prev.log_band) / (0.5 * (outer.powi(2) - inner.powi(2)));
            let increment = last.log_integral - prev.log_integral;
            let verdict = if last.log_band > prev.log_band + 2f64.ln() {
                GrowthVerdict::Divergent
            } else if last.log_band < prev.log_band && increment < 1e-3 {
                GrowthVerdict::Plateau
            } else {
                GrowthVerdict::Inconclusive
            };
            NonintegrabilityReport {
                epsilon: e,
                exponent: (1.0 - e) * lyap.beta_plus() - 1.0 / t,
                points,
                growth_rate,
                verdict,
            }
        })
        .collect();
    Ok(reports)
}

/// Gaussian `E[p^k]` for `p ~ N(0, T)`.
pub fn momentum_moment(temperature: f64, k: u32) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    // (k-1)!! T^{k/2}
    let mut dfact = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        dfact *= j as f64;
        j -= 2;
    }
    dfact * temperature.powi(k as i32 / 2)
}

/// Monte Carlo mean of `L f` under `pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityResidual {
    pub observable: &'static str,
    pub mean: f64,
    pub stderr: f64,
}

impl StationarityResidual {
    pub fn within(&self, sigmas: f64) -> bool {
        self.mean.abs() <= sigmas * self.stderr
    }
}

/// `E_pi[L f]` for `f` in `{p1^2, p2^2, cos(q2 - q1), H}`, each of which
/// must vanish under the invariant measure.
pub fn stationarity_residuals(
    measure: &GibbsMeasure,
    n: usize,
    seed: u64,
) -> Result<Vec<StationarityResidual>> {
    use crate::dynamics::{apply_generator, Analytic, HamiltonianObservable, Observable};
    use crate::stats::Moments;
    let params = measure.params();
    let xs = measure.sample(seed, n);
    let p1_sq = Analytic {
        value: |x: &State| x.p1 * x.p1,
        gradient: |x: &State| [0.0, 0.0, 2.0 * x.p1, 0.0],
        p1_second: |_: &State| 2.0,
    };
    let p2_sq = Analytic {
        value: |x: &State| x.p2 * x.p2,
        gradient: |x: &State| [0.0, 0.0, 0.0, 2.0 * x.p2],
        p1_second: |_: &State| 0.0,
    };
    let cos_gap = Analytic {
        value: |x: &State| x.angle_gap().cos(),
        gradient: |x: &State| {
            let s = x.angle_gap().sin();
            [s, -s, 0.0, 0.0]
        },
        p1_second: |_: &State| 0.0,
    };
    let h = HamiltonianObservable(params);
    let observables: [(&'static str, &dyn Observable); 4] = [
        ("p1^2", &p1_sq),
        ("p2^2", &p2_sq),
        ("cos(q2-q1)", &cos_gap),
        ("H", &h),
    ];
    observables
        .iter()
        .map(|(name, f)| {
            let mut m = Moments::new();
            for x in &xs {
                m.push(apply_generator(params, *f, x)?);
            }
            Ok(StationarityResidual {
                observable: name,
                mean: m.mean(),
                stderr: m.stderr(),
            })
        })
        .collect()
}
