//! Test function `F`, its drift, and the constants that control it.
//!
//! ```text
//! F(x) = 1 + exp(beta_- H(x)) + rho(p) exp(beta_+ p2bar^2 / 2)
//! ```
//!
//! `F` is handled in the log domain throughout: along the `p2` axis it grows
//! like `exp(beta_+ p2^2 / 2)` and overflows `f64` long before the momentum
//! caps used by the certification.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::averaging::{CorrectionLevel, MomentumSeries};
use crate::dynamics::{generator_from_derivatives, hamiltonian, FiniteDifference, ModelParams, Observable, State};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::stats::log_sum_exp;

/// Parameters of the test function and of the bound `phi(s) = A s / (2 + log s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    beta_minus: f64,
    beta_plus: f64,
    delta: f64,
    drift_constant: f64,
    /// The cutoff vanishes for `|p| <= blend_radius` and blends radially to
    /// the cone profile at `|p| = 1`.
    blend_radius: f64,
}

impl LyapunovParams {
    /// Validates `beta_- < 1/T < beta_+ < (1 + 1/(1+2 delta)^2) beta_-`.
    pub fn new(
        beta_minus: f64,
        beta_plus: f64,
        delta: f64,
        drift_constant: f64,
        temperature: f64,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be > 0, got {delta}")));
        }
        if !(drift_constant > 0.0 && drift_constant.is_finite()) {
            return Err(Error::invalid(
                "drift_constant",
                format!("must be > 0, got {drift_constant}"),
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature", "must be > 0"));
        }
        let inv_t = 1.0 / temperature;
        let upper = (1.0 + 1.0 / (1.0 + 2.0 * delta).powi(2)) * beta_minus;
        if !(beta_minus > 0.0 && beta_minus < inv_t) {
            return Err(Error::ParameterConstraint(format!(
                "need 0 < beta_- < 1/T = {inv_t}, got beta_- = {beta_minus}"
            )));
        }
        if !(inv_t < beta_plus) {
            return Err(Error::ParameterConstraint(format!(
                "need beta_+ > 1/T = {inv_t}, got beta_+ = {beta_plus}"
            )));
        }
        if !(beta_plus < upper) {
            return Err(Error::ParameterConstraint(format!(
                "need beta_+ < (1 + 1/(1+2 delta)^2) beta_- = {upper}, got beta_+ = {beta_plus}"
            )));
        }
        Ok(Self {
            beta_minus,
            beta_plus,
            delta,
            drift_constant,
            blend_radius: BLEND_RADIUS,
        })
    }

    /// `T = 1, delta = 0.5, beta_- = 0.9, beta_+ = 1.1, A = 1`.
    pub fn standard() -> Self {
        Self::new(0.9, 1.1, 0.5, 1.0, 1.0).expect("standard parameters are admissible")
    }

    pub fn with_drift_constant(self, drift_constant: f64) -> Result<Self> {
        if !(drift_constant > 0.0 && drift_constant.is_finite()) {
            return Err(Error::invalid(
                "drift_constant",
                format!("must be > 0, got {drift_constant}"),
            ));
        }
        Ok(Self {
            drift_constant,
            ..self
        })
    }

    pub fn beta_minus(&self) -> f64 {
        self.beta_minus
    }

    pub fn beta_plus(&self) -> f64 {
        self.beta_plus
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn drift_constant(&self) -> f64 {
        self.drift_constant
    }

    pub fn blend_radius(&self) -> f64 {
        self.blend_radius
    }

    pub fn cutoff(&self) -> Cutoff {
        Cutoff {
            delta: self.delta,
            blend_radius: self.blend_radius,
        }
    }
}

/// Inner radius of the radial blend of the cutoff inside the unit disc.
pub const BLEND_RADIUS: f64 = 0.9;

/// Momentum-space region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    /// `p1^2 + p2^2 < 1`
    Omega0,
    /// `|p2| <= (1+delta)|p1|`
    Omega1,
    /// `(1+delta)|p1| < |p2| <= (1+2 delta)|p1|`
    Omega2,
    /// `|p2| > (1+2 delta)|p1|`
    Omega3,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 4] = [
        RegionLabel::Omega0,
        RegionLabel::Omega1,
        RegionLabel::Omega2,
        RegionLabel::Omega3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionLabel::Omega0 => "Omega0",
            RegionLabel::Omega1 => "Omega1",
            RegionLabel::Omega2 => "Omega2",
            RegionLabel::Omega3 => "Omega3",
        }
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_momenta(p1: f64, p2: f64, delta: f64) -> RegionLabel {
    if p1 * p1 + p2 * p2 < 1.0 {
        RegionLabel::Omega0
    } else if p2.abs() <= (1.0 + delta) * p1.abs() {
        RegionLabel::Omega1
    } else if p2.abs() <= (1.0 + 2.0 * delta) * p1.abs() {
        RegionLabel::Omega2
    } else {
        RegionLabel::Omega3
    }
}

pub fn classify(x: &State, delta: f64) -> RegionLabel {
    classify_momenta(x.p1, x.p2, delta)
}

/// `6u^5 - 15u^4 + 10u^3` on `[0, 1]`, clamped outside, with its first two
/// derivatives (which vanish at both ends).
#[inline]
pub fn smoothstep(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let u2 = u * u;
        (
            u2 * u * (10.0 + u * (6.0 * u - 15.0)),
            30.0 * u2 * (u - 1.0) * (u - 1.0),
            60.0 * u * (u - 1.0) * (2.0 * u - 1.0),
        )
    }
}

/// Cutoff `rho(p) = chi(|p2/p1|) * B(|p|)` with `chi` the smoothstep from
/// `1 + delta` to `1 + 2 delta` and `B` a radial smoothstep from
/// `blend_radius` to 1. Outside the unit disc `B = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub delta: f64,
    pub blend_radius: f64,
}

/// `rho` and the derivatives the generator needs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CutoffJet {
    pub value: f64,
    pub d_p1: f64,
    pub d_p2: f64,
    pub d_p1p1: f64,
}

impl CutoffJet {
    pub fn is_zero(&self) -> bool {
        self.value == 0.0 && self.d_p1 == 0.0 && self.d_p2 == 0.0 && self.d_p1p1 == 0.0
    }
}

impl Cutoff {
    /// `chi(s)` and its first two derivatives.
    pub fn chi(&self, s: f64) -> (f64, f64, f64) {
        let (v, d1, d2) = smoothstep((s - (1.0 + self.delta)) / self.delta);
        (v, d1 / self.delta, d2 / (self.delta * self.delta))
    }

    pub fn rho(&self, p1: f64, p2: f64) -> f64 {
        self.jet(p1, p2).value
    }

    pub fn jet(&self, p1: f64, p2: f64) -> CutoffJet {
        let (a1, a2) = (p1.abs(), p2.abs());
        // cone factor chi(|p2/p1|)
        let (c, c1, c2, c11) = if a2 >= (1.0 + 2.0 * self.delta) * a1 {
            if a2 == 0.0 {
                (0.0, 0.0, 0.0, 0.0)
            } else {
                (1.0, 0.0, 0.0, 0.0)
            }
        } else if a2 <= (1.0 + self.delta) * a1 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            // here p1 != 0 and p2 != 0
            let s = a2 / a1;
            let (v, d, dd) = self.chi(s);
            let ds1 = -s / p1;
            let ds2 = s / p2;
            let dds11 = 2.0 * s / (p1 * p1);
            (v, d * ds1, d * ds2, dd * ds1 * ds1 + d * dds11)
        };
        if c == 0.0 && c1 == 0.0 && c11 == 0.0 && c2 == 0.0 {
            return CutoffJet::default();
        }
        // radial blend
        let r2 = p1 * p1 + p2 * p2;
        if r2 >= 1.0 {
            return CutoffJet {
                value: c,
                d_p1: c1,
                d_p2: c2,
                d_p1p1: c11,
            };
        }
        let r = r2.sqrt();
        let width = 1.0 - self.blend_radius;
        let (b, bv, bvv) = smoothstep((r - self.blend_radius) / width);
        if b == 0.0 && bv == 0.0 && bvv == 0.0 {
            return CutoffJet::default();
        }
        let br = bv / width;
        let brr = bvv / (width * width);
        let b1 = br * p1 / r;
        let b2 = br * p2 / r;
        let b11 = brr * (p1 / r).powi(2) + br * p2 * p2 / (r2 * r);
        CutoffJet {
            value: c * b,
            d_p1: c1 * b + c * b1,
            d_p2: c2 * b + c * b2,
            d_p1p1: c11 * b + 2.0 * c1 * b1 + c * b11,
        }
    }
}

pub fn cutoff_rho(p1: f64, p2: f64, delta: f64) -> f64 {
    Cutoff {
        delta,
        blend_radius: BLEND_RADIUS,
    }
    .rho(p1, p2)
}

/// `phi(s) = A s / (2 + log s)` for `s >= 1`.
pub fn phi(lyap: &LyapunovParams, s: f64) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(Error::Domain(format!("phi needs s >= 1, got {s}")));
    }
    Ok(lyap.drift_constant * s / (2.0 + s.ln()))
}

/// Solution of `y' = phi(y)`, `y(0) = y0`, and its simplified upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeBound {
    /// `exp(sqrt((ln y0 + 2)^2 + 2 A t) - 2)`
    pub exact: f64,
    /// `y0 exp(sqrt(2 A t))`
    pub simplified: f64,
}

pub fn ode_comparison_bound(lyap: &LyapunovParams, y0: f64, t: f64) -> Result<OdeBound> {
    let log = ode_comparison_log_bound(lyap, y0.ln(), t)?;
    Ok(OdeBound {
        exact: log.exact.exp(),
        simplified: log.simplified.exp(),
    })
}

/// Log-domain version of [`ode_comparison_bound`], taking `ln y0`.
pub fn ode_comparison_log_bound(lyap: &LyapunovParams, log_y0: f64, t: f64) -> Result<OdeBound> {
    if !(log_y0 >= 0.0) {
        return Err(Error::Domain(format!(
            "initial value must be >= 1, got exp({log_y0})"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    let two_at = 2.0 * lyap.drift_constant * t;
    Ok(OdeBound {
        exact: ((log_y0 + 2.0).powi(2) + two_at).sqrt() - 2.0,
        simplified: log_y0 + two_at.sqrt(),
    })
}

/// Breakdown of `F` at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FEvaluation {
    pub log_f: f64,
    /// `[0, beta_- H, log rho + beta_+ p2bar^2 / 2]`; the last is `-inf`
    /// where `rho = 0`.
    pub log_terms: [f64; 3],
    /// `L S_i / S_i'` where `S_1' = exp(beta_- H)` and
    /// `S_2' = exp(beta_+ p2bar^2 / 2)` (the cutoff is not divided out).
    pub scaled_drifts: [f64; 3],
    /// `p2bar` where the cutoff is active.
    pub p2_bar: Option<f64>,
    /// `log S_2'` where the cutoff is active.
    pub log_exp_term: Option<f64>,
}

impl FEvaluation {
    /// `LF / F`.
    pub fn drift_ratio(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..3 {
            let log_scale = match i {
                1 => self.log_terms[1],
                _ => match self.log_exp_term {
                    Some(l) => l,
                    None => continue,
                },
            };
            let d = self.scaled_drifts[i];
            if d != 0.0 {
                acc += d * (log_scale - self.log_f).exp();
            }
        }
        acc
    }

    /// `LF (2 + log F) / F`; `LF <= phi(F)` iff this is at most `A`.
    pub fn scale_free_margin(&self) -> f64 {
        self.drift_ratio() * (2.0 + self.log_f)
    }
}

/// `F` bound to model and Lyapunov parameters.
#[derive(Debug, Clone)]
pub struct TestFunction {
    params: ModelParams,
    lyap: LyapunovParams,
    averaged: MomentumSeries,
    cutoff: Cutoff,
}

impl TestFunction {
    pub fn new(params: &ModelParams, lyap: &LyapunovParams) -> Self {
        Self {
            params: params.clone(),
            lyap: *lyap,
            averaged: MomentumSeries::corrected(params.gamma(), CorrectionLevel::Averaged),
            cutoff: lyap.cutoff(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn lyapunov(&self) -> &LyapunovParams {
        &self.lyap
    }

    pub fn averaged_momentum(&self) -> &MomentumSeries {
        &self.averaged
    }

    /// `log F(x)`.
    pub fn log_f(&self, x: &State) -> f64 {
        let e1 = self.lyap.beta_minus * hamiltonian(&self.params, x);
        let rho = self.cutoff.rho(x.p1, x.p2);
        if rho > 0.0 {
            let pb = self.averaged.value(self.params.potential(), x);
            let e2 = rho.ln() + 0.5 * self.lyap.beta_plus * pb * pb;
            log_sum_exp(&[0.0, e1, e2])
        } else {
            log_sum_exp(&[0.0, e1])
        }
    }

    /// `log F`, its three summands and their generator images.
    pub fn evaluate(&self, x: &State) -> FEvaluation {
        let p = &self.params;
        let (g, t) = (p.gamma(), p.temperature());
        let bm = self.lyap.beta_minus;
        let bp = self.lyap.beta_plus;

        let e1 = bm * hamiltonian(p, x);
        let d1 = g * bm * ((bm * t - 1.0) * x.p1 * x.p1 + t);

        let rho = self.cutoff.jet(x.p1, x.p2);
        let (e2, d2, p2_bar, log_exp) = if rho.is_zero() {
            (f64::NEG_INFINITY, 0.0, None, None)
        } else {
            let jet = self.averaged.jet(p.potential(), x);
            let pb = jet.value;
            let phi = 0.5 * bp * pb * pb;
            let grad_phi = jet.gradient.map(|d| bp * pb * d);
            let phi_11 = bp * (jet.gradient[2] * jet.gradient[2] + pb * jet.p1_second);
            let l_phi = generator_from_derivatives(p, x, &grad_phi, phi_11);
            let l_rho =
                generator_from_derivatives(p, x, &[0.0, 0.0, rho.d_p1, rho.d_p2], rho.d_p1p1);
            let d = l_rho
                + rho.value * (l_phi + g * t * grad_phi[2] * grad_phi[2])
                + 2.0 * g * t * rho.d_p1 * grad_phi[2];
            let log_term = if rho.value > 0.0 {
                rho.value.ln() + phi
            } else {
                f64::NEG_INFINITY
            };
            (log_term, d, Some(pb), Some(phi))
        };
        let log_f = log_sum_exp(&[0.0, e1, e2]);
        FEvaluation {
            log_f,
            log_terms: [0.0, e1, e2],
            scaled_drifts: [0.0, d1, d2],
            p2_bar,
            log_exp_term: log_exp,
        }
    }

    /// `L e^Phi / e^Phi` with `Phi = beta_+ p2bar^2 / 2`.
    pub fn exp_term_drift_ratio(&self, x: &State) -> Result<f64> {
        let p = &self.params;
        if x.momentum_gap().abs() < crate::averaging::GAP_THRESHOLD {
            return Err(Error::DegenerateDenominator {
                gap: x.momentum_gap().abs(),
                threshold: crate::averaging::GAP_THRESHOLD,
            });
        }
        let bp = self.lyap.beta_plus;
        let jet = self.averaged.jet(p.potential(), x);
        let pb = jet.value;
        let grad_phi = jet.gradient.map(|d| bp * pb * d);
        let phi_11 = bp * (jet.gradient[2] * jet.gradient[2] + pb * jet.p1_second);
        Ok(generator_from_derivatives(p, x, &grad_phi, phi_11)
            + p.gamma() * p.temperature() * grad_phi[2] * grad_phi[2])
    }

    /// `LF / F` from finite differences of `log F`:
    /// `L e^g / e^g = L g + gamma T (d_p1 g)^2`.
    pub fn drift_ratio_finite_difference(&self, x: &State) -> f64 {
        self.drift_ratio_fd_scaled(x, 1.0)
    }

    fn drift_ratio_fd_scaled(&self, x: &State, factor: f64) -> f64 {
        let scale = factor * (1.0 + x.p1.abs().max(x.p2.abs()));
        let fd = FiniteDifference {
            value: |y: &State| self.log_f(y),
            step: 1e-6 * scale,
            second_step: 1e-4 * scale,
        };
        let grad = fd.gradient(x);
        let lg = generator_from_derivatives(&self.params, x, &grad, fd.p1_second(x));
        lg + self.params.gamma() * self.params.temperature() * grad[2] * grad[2]
    }
}

/// `log F(x)`.
pub fn eval_log_f(params: &ModelParams, lyap: &LyapunovParams, x: &State) -> f64 {
    TestFunction::new(params, lyap).log_f(x)
}

/// How states are drawn for certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingPlan {
    /// Largest momentum norm sampled.
    pub momentum_cap: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Fraction of samples audited against finite differences.
    pub audit_fraction: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            momentum_cap: 1e3,
            n_samples: 100_000,
            seed: 20_170_901,
            audit_fraction: 0.01,
        }
    }
}

fn random_angles<R: Rng>(rng: &mut R) -> (f64, f64) {
    (TAU * rng.random::<f64>(), TAU * rng.random::<f64>())
}

fn random_signs<R: Rng>(rng: &mut R, a: f64, b: f64) -> (f64, f64) {
    let s1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let s2 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (s1 * a, s2 * b)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// One state in `region` with `|p| <= cap`. Outside the unit disc the
/// norm is log-uniform and the direction uniform within the region's cone;
/// half of the `Omega3` draws come from the strip `|p1| <= 2`, where the
/// drift bound is tightest.
pub fn sample_region<R: Rng>(rng: &mut R, region: RegionLabel, delta: f64, cap: f64) -> State {
    let (q1, q2) = random_angles(rng);
    let cone = |rng: &mut R, lo: f64, hi: f64| -> State {
        let r = log_uniform(rng, 1.0, cap);
        let theta = lo.atan() + (hi.atan() - lo.atan()) * rng.random::<f64>();
        let (p1, p2) = random_signs(rng, r * theta.cos(), r * theta.sin());
        State { q1, q2, p1, p2 }
    };
    loop {
        let x = match region {
            RegionLabel::Omega0 => {
                let r = rng.random::<f64>().sqrt();
                let th = TAU * rng.random::<f64>();
                State {
                    q1,
                    q2,
                    p1: r * th.cos(),
                    p2: r * th.sin(),
                }
            }
            RegionLabel::Omega1 => cone(rng, 0.0, 1.0 + delta),
            RegionLabel::Omega2 => cone(rng, 1.0 + delta, 1.0 + 2.0 * delta),
            RegionLabel::Omega3 => {
                if rng.random::<bool>() {
                    cone(rng, 1.0 + 2.0 * delta, f64::INFINITY)
                } else {
                    let p2 = log_uniform(rng, 1.0, cap);
                    let p1 = 4.0 * rng.random::<f64>() - 2.0;
                    let (p1, p2) = random_signs(rng, p1, p2);
                    State { q1, q2, p1, p2 }
                }
            }
        };
        if classify(&x, delta) == region && x.momentum_norm_sq() <= cap * cap {
            return x;
        }
    }
}

/// `n` states stratified evenly over the four regions. Each region draws
/// from its own stream, so the `Omega0` states do not depend on `cap`.
pub fn stratified_sample(delta: f64, cap: f64, n: usize, seed: u64) -> Vec<State> {
    region_sample(&RegionLabel::ALL, delta, cap, n, seed)
}

/// `n` states from `Omega2 u Omega3` (alternating), `|p| <= cap`.
pub fn outer_cone_sample(delta: f64, cap: f64, n: usize, seed: u64) -> Vec<State> {
    region_sample(&[RegionLabel::Omega2, RegionLabel::Omega3], delta, cap, n, seed)
}

fn region_sample(regions: &[RegionLabel], delta: f64, cap: f64, n: usize, seed: u64) -> Vec<State> {
    let mut rngs: Vec<_> = regions
        .iter()
        .map(|r| stream(seed, Purpose::Sampling, r.index() as u64))
        .collect();
    (0..n)
        .map(|i| {
            let k = i % regions.len();
            sample_region(&mut rngs[k], regions[k], delta, cap)
        })
        .collect()
}

/// Compass search maximising `objective` from `start`, staying where
/// `admissible` holds. Returns the best point and value found.
pub fn refine_maximum<F, A>(objective: F, admissible: A, start: State, budget: usize) -> (State, f64)
where
    F: Fn(&State) -> f64,
    A: Fn(&State) -> bool,
{
    let mut best = start;
    let mut best_val = objective(&start);
    let scale = 1.0 + start.p1.abs().max(start.p2.abs());
    let mut steps = [0.3, 0.3, 0.02 * scale, 0.02 * scale];
    let mut evals = 1;
    while evals < budget && steps.iter().any(|&h| h > 1e-9 * scale) {
        let mut improved = false;
        for (axis, &h) in steps.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let cand = best.shifted(axis, sign * h);
                if !admissible(&cand) {
                    continue;
                }
                let v = objective(&cand);
                evals += 1;
                if v.is_finite() && v > best_val {
                    best = cand;
                    best_val = v;
                    improved = true;
                }
            }
        }
        if !improved {
            for h in &mut steps {
                *h *= 0.5;
            }
        }
    }
    (
        State::new(best.q1, best.q2, best.p1, best.p2),
        best_val,
    )
}

/// Empirical Lemma constants on `Omega2 u Omega3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConstants {
    /// `sup |p2bar^2 - p2^2|`
    pub c1_hat: f64,
    /// `sup p2^2 L e^Phi / e^Phi`
    pub c2_hat: f64,
    pub c1_argmax: State,
    pub c2_argmax: State,
}

/// Suprema over `sample` (which must lie in `Omega2 u Omega3`), refined by
/// local search from the best `refine_top` samples of each objective.
pub fn estimate_lemma_constants(
    params: &ModelParams,
    lyap: &LyapunovParams,
    sample: &[State],
    refine_top: usize,
) -> Result<LemmaConstants> {
    let f = TestFunction::new(params, lyap);
    let delta = lyap.delta;
    let pot = params.potential();
    let inside = |x: &State| {
        matches!(
            classify(x, delta),
            RegionLabel::Omega2 | RegionLabel::Omega3
        )
    };
    if let Some(bad) = sample.iter().find(|x| !inside(x)) {
        return Err(Error::Domain(format!(
            "sample state outside Omega2 u Omega3: {bad}"
        )));
    }
    let c1 = |x: &State| {
        let pb = f.averaged.value(pot, x);
        (pb * pb - x.p2 * x.p2).abs()
    };
    let c2 = |x: &State| {
        f.exp_term_drift_ratio(x)
            .map(|r| x.p2 * x.p2 * r)
            .unwrap_or(f64::NAN)
    };
    let sup = |obj: &dyn Fn(&State) -> f64| -> Result<(f64, State)> {
        let mut vals: Vec<(f64, State)> = sample.iter().map(|x| (obj(x), *x)).collect();
        if vals.iter().any(|(v, _)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Lemma constant objective".into(),
            });
        }
        vals.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut best = vals.first().copied().ok_or_else(|| Error::Domain("empty sample".into()))?;
        for &(_, x) in vals.iter().take(refine_top) {
            let (y, v) = refine_maximum(obj, inside, x, 4000);
            if v > best.0 {
                best = (v, y);
            }
        }
        Ok(best)
    };
    let (c1_hat, c1_argmax) = sup(&c1)?;
    let (c2_hat, c2_argmax) = sup(&c2)?;
    Ok(LemmaConstants {
        c1_hat,
        c2_hat,
        c1_argmax,
        c2_argmax,
    })
}

/// One CSV row of the drift certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyRow {
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
    pub region: RegionLabel,
    #[serde(rename = "logF")]
    pub log_f: f64,
    /// `LF / phi(F)` with `A = A_min`.
    #[serde(rename = "LF_over_phiF")]
    pub lf_over_phi_f: f64,
}

/// Outcome of [`certify_drift`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub n_samples: usize,
    /// Largest `LF (2 + log F) / F` found.
    pub worst_margin: f64,
    pub worst_state: State,
    pub worst_region: RegionLabel,
    /// Smallest `A > 0` with `LF <= phi(F)` on every evaluated state.
    pub a_min: f64,
    /// Largest margin restricted to `|p| >= 10`.
    pub outer_margin: f64,
    pub region_max: [f64; 4],
    /// Largest relative discrepancy between analytic and finite-difference
    /// `LF/F` on the audited samples.
    pub audit_max_rel_error: f64,
    pub audited: usize,
    /// Audit states skipped because the finite differences did not converge.
    pub audit_unresolved: usize,
    /// Regions where the margin still grows toward the cap.
    pub growing_regions: Vec<RegionLabel>,
    #[serde(skip)]
    pub rows: Vec<CertifyRow>,
}

/// Evaluates `LF (2 + log F) / F` on a stratified sample and extracts `A_min`.
pub fn certify_drift(
    params: &ModelParams,
    lyap: &LyapunovParams,
    plan: &SamplingPlan,
) -> Result<DriftReport> {
    if !(plan.momentum_cap > 1.0) || plan.n_samples < 4 {
        return Err(Error::invalid(
            "sampling plan",
            "need momentum_cap > 1 and at least 4 samples",
        ));
    }
    let f = TestFunction::new(params, lyap);
    let samples = stratified_sample(lyap.delta, plan.momentum_cap, plan.n_samples, plan.seed);
    certify_on(&f, &samples, plan)
}

/// [`certify_drift`] on a given set of states.
pub fn certify_on(f: &TestFunction, samples: &[State], plan: &SamplingPlan) -> Result<DriftReport> {
    use rayon::prelude::*;
    let delta = f.lyap.delta;
    let evals: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|x| {
            let e = f.evaluate(x);
            (e.log_f, e.scale_free_margin())
        })
        .collect();
    if let Some(i) = evals.iter().position(|(l, m)| !l.is_finite() || !m.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("LF/F at {}", samples[i]),
        });
    }

    let mut region_max = [f64::NEG_INFINITY; 4];
    let mut outer_margin = f64::NEG_INFINITY;
    for (x, &(_, m)) in samples.iter().zip(&evals) {
        let r = classify(x, delta).index();
        region_max[r] = region_max[r].max(m);
        if x.momentum_norm_sq() >= 100.0 {
            outer_margin = outer_margin.max(m);
        }
    }

    // growth toward the cap: top quarter decade vs the one below
    let cap = plan.momentum_cap;
    let mut growing_regions = Vec::new();
    for region in RegionLabel::ALL.iter().skip(1) {
        let band = |lo: f64, hi: f64| {
            samples
                .iter()
                .zip(&evals)
                .filter(|(x, _)| {
                    let r = x.momentum_norm_sq().sqrt();
                    classify(x, delta) == *region && r >= lo && r < hi
                })
                .map(|(_, &(_, m))| m)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let outer = band(cap / 4.0, cap * 1.0001);
        let inner = band(cap / 16.0, cap / 4.0);
        if outer.is_finite() && inner.is_finite() && outer > 0.0 && outer > 2.0 * inner.max(0.0) + 1.0 {
            growing_regions.push(*region);
        }
    }

    // No local refinement here: near the cone edge inside the unit circle
    // the margin behaves like chi''/chi while rho e^Phi still dominates F, so
    // a pointwise search only chases the floating-point resolution of |p2/p1|.
    let worst = (0..samples.len())
        .max_by(|&a, &b| evals[a].1.total_cmp(&evals[b].1))
        .expect("non-empty sample");
    let worst_state = samples[worst];
    let worst_margin = evals[worst].1;
    let a_min = worst_margin.max(f64::MIN_POSITIVE);

    // finite-difference audit on moderate states
    let stride = if plan.audit_fraction > 0.0 {
        ((1.0 / plan.audit_fraction).round() as usize).max(1)
    } else {
        usize::MAX
    };
    // States where halving the stencil moves the difference quotient are
    // not resolved by finite differences (the stencil straddles the edge of
    // the blend shell, where rho is tiny but e^Phi is not) and are skipped.
    let mut audit_max_rel_error: f64 = 0.0;
    let mut audited = 0;
    let mut audit_unresolved = 0;
    for (x, &(log_f, _)) in samples.iter().zip(&evals).step_by(stride.min(samples.len())) {
        if log_f > 1e3 {
            continue;
        }
        let fd = f.drift_ratio_finite_difference(x);
        let fd_half = f.drift_ratio_fd_scaled(x, 0.5);
        if (fd - fd_half).abs() > 1e-2 * (1.0 + fd.abs()) {
            audit_unresolved += 1;
            continue;
        }
        let an = f.evaluate(x).drift_ratio();
        audit_max_rel_error = audit_max_rel_error.max((an - fd).abs() / (1.0 + an.abs()));
        audited += 1;
    }

    let rows = samples
        .iter()
        .zip(&evals)
        .map(|(x, &(log_f, m))| CertifyRow {
            q1: x.q1,
            q2: x.q2,
            p1: x.p1,
            p2: x.p2,
            region: classify(x, delta),
            log_f,
            lf_over_phi_f: m / a_min,
        })
        .collect();

    Ok(DriftReport {
        n_samples: samples.len(),
        worst_margin,
        worst_state,
        worst_region: classify(&worst_state, delta),
        a_min,
        outer_margin,
        region_max,
        audit_max_rel_error,
        audited,
        audit_unresolved,
        growing_regions,
        rows,
    })
}

/// Monte Carlo estimate of `E_x F(x_t)` against `F(x) exp(sqrt(2 A t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentGrowthPoint {
    pub t: f64,
    /// `log` of the sample mean of `F(x_t)`.
    pub log_mean_f: f64,
    /// Standard error of the mean divided by the mean.
    pub rel_stderr: f64,
    /// `log F(x) + sqrt(2 A t)`.
    pub log_bound: f64,
    /// Mean minus three standard errors does not exceed the bound.
    pub holds: bool,
}

/// Runs `n_traj` paths from `x0` and compares the growth of `E F` with the
/// comparison bound at each of `times` (rounded to whole steps).
pub fn moment_growth(
    f: &TestFunction,
    stepper: &crate::dynamics::Stepper,
    x0: &State,
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<MomentGrowthPoint>> {
    use rayon::prelude::*;
    if n_traj < 2 {
        return Err(Error::invalid("n_traj", "need at least 2 trajectories"));
    }
    let mut steps: Vec<u64> = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid("times", format!("bad time {t}")));
        }
        steps.push((t / stepper.dt()).round() as u64);
    }
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times", "must be non-decreasing"));
    }
    let paths: Vec<Vec<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut rng = stream(seed, Purpose::Trajectory, i as u64);
            let mut x = *x0;
            let mut done = 0;
            let mut out = Vec::with_capacity(steps.len());
            for &k in &steps {
                x = stepper.propagate(x, k - done, &mut rng, done as f64 * stepper.dt())?;
                done = k;
                out.push(f.log_f(&x));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let log_f0 = f.log_f(x0);
    let n = n_traj as f64;
    times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let logs: Vec<f64> = paths.iter().map(|p| p[j]).collect();
            let log_mean = log_sum_exp(&logs) - n.ln();
            let second = log_sum_exp(&logs.iter().map(|l| 2.0 * (l - log_mean)).collect::<Vec<_>>()) - n.ln();
            let rel_var = (second.exp() - 1.0).max(0.0) * n / (n - 1.0);
            let rel_stderr = (rel_var / n).sqrt();
            let log_bound = ode_comparison_log_bound(&f.lyap, log_f0, t)?.simplified;
            let lower = log_mean + (1.0 - 3.0 * rel_stderr).max(f64::MIN_POSITIVE).ln();
            Ok(MomentGrowthPoint {
                t,
                log_mean_f: log_mean,
                rel_stderr,
                log_bound,
                holds: lower <= log_bound + 1e-12 * (1.0 + log_bound.abs()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PeriodicPotential;

    #[test]
    fn constraint_validation() {
        assert!(LyapunovParams::new(0.9, 1.1, 0.5, 1.0, 1.0).is_ok());
        // 1.1 < 1.125 but 1.13 is not
        assert!(matches!(
            LyapunovParams::new(0.9, 1.13, 0.5, 1.0, 1.0),
            Err(Error::ParameterConstraint(_))
        ));
        assert!(LyapunovParams::new(1.0, 1.1, 0.5, 1.0, 1.0).is_err());
        assert!(LyapunovParams::new(0.9, 1.0, 0.5, 1.0, 1.0).is_err());
        assert!(LyapunovParams::new(0.9, 1.1, 0.5, 0.0, 1.0).is_err());
        assert!(LyapunovParams::new(0.9, 1.1, -0.5, 1.0, 1.0).is_err());
        // temperature shifts the window
        assert!(LyapunovParams::new(0.45, 0.55, 0.5, 1.0, 2.0).is_ok());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_momenta(0.0, 0.5, 0.5), RegionLabel::Omega0);
        assert_eq!(classify_momenta(1.0, 1.6, 0.5), RegionLabel::Omega2);
        assert_eq!(classify_momenta(0.0, 10.0, 0.5), RegionLabel::Omega3);
        assert_eq!(classify_momenta(3.0, 1.0, 0.5), RegionLabel::Omega1);
        // boundaries: |p2| = (1+delta)|p1| is Omega1, (1+2delta)|p1| is Omega2
        assert_eq!(classify_momenta(2.0, 3.0, 0.5), RegionLabel::Omega1);
        assert_eq!(classify_momenta(2.0, -4.0, 0.5), RegionLabel::Omega2);
    }

    #[test]
    fn cutoff_plateaus_and_midpoint() {
        assert_eq!(cutoff_rho(1.0, 3.0, 0.5), 1.0);
        assert_eq!(cutoff_rho(2.0, 1.0, 0.5), 0.0);
        assert_eq!(cutoff_rho(0.0, 0.2, 0.5), 0.0);
        let mid = cutoff_rho(2.0, 2.0 * 1.75, 0.5);
        assert!(mid > 0.0 && mid < 1.0);
        assert!((mid - 0.5).abs() < 1e-12);
        let c = Cutoff {
            delta: 0.5,
            blend_radius: 0.5,
        };
        for s in [1.5, 2.0] {
            for eps in [1e-7, -1e-7] {
                let (_, d1, d2) = c.chi(s + eps);
                assert!(d1.abs() < 1e-5 && d2.abs() < 1e-3, "s={s}: {d1} {d2}");
            }
        }
    }

    #[test]
    fn smoothstep_derivatives_match_finite_differences() {
        for u in [0.1, 0.37, 0.5, 0.93] {
            let h = 1e-6;
            let (_, d1, d2) = smoothstep(u);
            let fd1 = (smoothstep(u + h).0 - smoothstep(u - h).0) / (2.0 * h);
            let fd2 = (smoothstep(u + h).1 - smoothstep(u - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-7 && (d2 - fd2).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_jet_matches_finite_differences() {
        let c = Cutoff {
            delta: 0.5,
            blend_radius: 0.5,
        };
        let h = 1e-6;
        for (p1, p2) in [(1.0, 1.7), (-2.0, 3.4), (0.4, -0.65), (0.35, 0.6), (-3.0, -5.5)] {
            let j = c.jet(p1, p2);
            let fd1 = (c.rho(p1 + h, p2) - c.rho(p1 - h, p2)) / (2.0 * h);
            let fd2 = (c.rho(p1, p2 + h) - c.rho(p1, p2 - h)) / (2.0 * h);
            let hh = 1e-4;
            let fd11 = (c.rho(p1 + hh, p2) - 2.0 * c.rho(p1, p2) + c.rho(p1 - hh, p2)) / (hh * hh);
            assert!((j.d_p1 - fd1).abs() < 1e-6, "({p1},{p2}) {} {fd1}", j.d_p1);
            assert!((j.d_p2 - fd2).abs() < 1e-6);
            assert!((j.d_p1p1 - fd11).abs() < 1e-3 * (1.0 + j.d_p1p1.abs()));
        }
    }

    #[test]
    fn phi_examples_and_domain() {
        let l = LyapunovParams::standard().with_drift_constant(3.0).unwrap();
        assert!((phi(&l, 1.0).unwrap() - 1.5).abs() < 1e-15);
        let e2 = 2f64.exp();
        assert!((phi(&l, e2).unwrap() - 3.0 * e2 / 4.0).abs() < 1e-13);
        assert!(phi(&l, 0.5).is_err());
    }

    #[test]
    fn ode_bound_examples() {
        let l = LyapunovParams::standard().with_drift_constant(2.0).unwrap();
        let b = ode_comparison_bound(&l, 5.0, 0.0).unwrap();
        assert!((b.exact - 5.0).abs() < 1e-12 && (b.simplified - 5.0).abs() < 1e-12);
        let b = ode_comparison_bound(&l, 1.0, 3.0).unwrap();
        assert!(((b.exact.ln()) - ((4.0f64 + 12.0).sqrt() - 2.0)).abs() < 1e-12);
        assert!(b.exact <= b.simplified);
        assert!(ode_comparison_bound(&l, 0.5, 1.0).is_err());
        assert!(ode_comparison_bound(&l, 2.0, -1.0).is_err());
    }

    #[test]
    fn log_f_examples() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        // H = 0 in Omega1: with W = -cos, pick s so that cos s = |p|^2 / 2
        let (p1, p2) = (0.8, 0.6);
        let s = (0.5f64).acos();
        let x = State::new(0.0, s, p1, p2);
        assert!(hamiltonian(&p, &x).abs() < 1e-12);
        assert_eq!(classify(&x, 0.5), RegionLabel::Omega1);
        assert!((eval_log_f(&p, &l, &x) - 2f64.ln()).abs() < 1e-12);

        let x = State::new(0.0, 0.0, 0.0, 50.0);
        let pb = crate::averaging::p2_bar(&p, &x).unwrap();
        let lf = eval_log_f(&p, &l, &x);
        assert!((lf - 0.55 * pb * pb).abs() < 1e-9 * lf);
    }

    #[test]
    fn drift_ratio_matches_finite_differences() {
        let p = ModelParams::new(1.3, 0.8, PeriodicPotential::new(vec![-1.0, 0.2], vec![0.1]).unwrap())
            .unwrap();
        let l = LyapunovParams::new(1.1, 1.3, 0.5, 1.0, 0.8).unwrap();
        let f = TestFunction::new(&p, &l);
        for x in [
            State::new(0.1, 0.5, 0.3, 0.2),
            State::new(2.0, 0.4, 1.2, 2.2),
            State::new(1.0, 3.0, -2.0, 3.5),
            State::new(4.0, 1.5, 0.3, 6.0),
            State::new(3.0, 1.0, 2.0, -1.0),
            State::new(0.2, 5.0, 0.1, 0.7),
        ] {
            let e = f.evaluate(&x);
            assert!((e.log_f - f.log_f(&x)).abs() < 1e-12);
            let an = e.drift_ratio();
            let fd = f.drift_ratio_finite_difference(&x);
            assert!((an - fd).abs() < 1e-4 * (1.0 + an.abs()), "{x}: {an} vs {fd}");
        }
    }

    #[test]
    fn exp_beta_minus_h_drift_is_closed_form() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        let f = TestFunction::new(&p, &l);
        // deep in Omega1 the cutoff vanishes and LF/F ~ L e^{b H}/e^{b H} < 0
        let x = State::new(0.0, 1.0, 40.0, 10.0);
        let e = f.evaluate(&x);
        assert!(e.p2_bar.is_none());
        let closed = 0.9 * ((0.9 - 1.0) * 1600.0 + 1.0);
        assert!((e.scaled_drifts[1] - closed).abs() < 1e-12);
        assert!(e.scale_free_margin() < 0.0);
    }

    #[test]
    fn lemma_constants_vanish_without_potential() {
        let p = ModelParams::new(1.0, 1.0, PeriodicPotential::zero()).unwrap();
        let l = LyapunovParams::standard();
        let sample = outer_cone_sample(0.5, 100.0, 200, 1);
        let c = estimate_lemma_constants(&p, &l, &sample, 2).unwrap();
        assert_eq!(c.c1_hat, 0.0);
    }

    #[test]
    fn lemma_constants_reject_inner_states() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        let sample = vec![State::new(0.0, 0.0, 5.0, 1.0)];
        assert!(estimate_lemma_constants(&p, &l, &sample, 1).is_err());
    }

    #[test]
    fn moment_growth_at_time_zero_is_exact() {
        let p = ModelParams::default();
        let l = LyapunovParams::standard();
        let f = TestFunction::new(&p, &l);
        let st = crate::dynamics::Stepper::new(&p, 1e-2, Default::default()).unwrap();
        let x0 = State::new(0.0, 0.0, 2.0, 1.0);
        let pts = moment_growth(&f, &st, &x0, &[0.0, 0.5], 16, 1).unwrap();
        assert!((pts[0].log_mean_f - f.log_f(&x0)).abs() < 1e-12);
        assert!(pts[0].rel_stderr < 1e-6 && pts[0].holds, "{:?}", pts[0]);
        assert!(pts[1].log_mean_f.is_finite());
        assert!(moment_growth(&f, &st, &x0, &[1.0, 0.5], 16, 1).is_err());
    }

    #[test]
    fn samplers_respect_regions() {
        let mut rng = stream(3, Purpose::Sampling, 9);
        for region in RegionLabel::ALL {
            for _ in 0..200 {
                let x = sample_region(&mut rng, region, 0.5, 50.0);
                assert_eq!(classify(&x, 0.5), region);
                assert!(x.momentum_norm_sq() <= 2500.0);
            }
        }
    }
}
