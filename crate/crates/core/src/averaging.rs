//! Averaged momentum of the fast rotor.
//!
//! When `|p2|` is large the second rotor spins fast and `p2` only feels a
//! rapidly oscillating force. Adding counter-terms in negative powers of the
//! momentum gap `u = p2 - p1` removes the oscillating part of the drift order
//! by order:
//!
//! ```text
//! p2^(1) = p2 + W / u
//! p2^(2) = p2^(1) + (gamma p1 W1 - W^2) / u^3
//! p2bar  = p2^(2) + gamma^2 p1 W2 / u^4 + 3 gamma^2 p1^2 W2 / u^5
//! ```
//!
//! where `W`, `W1`, `W2` are evaluated at `q2 - q1`. The drift of `p2bar` is
//! of order -3 and its noise coefficient of order -2, where a term
//! `f(q) p1^k p2^m / u^l` has order `k + m - l`.
//!
//! Two independent routes are provided: closed-form evaluation
//! ([`correction1`], [`correction2`], [`p2_bar`]) and a symbolic
//! [`MomentumSeries`] of [`Monomial`]s that also yields exact derivatives
//! for the generator.

use rand::Rng;
use serde::Serialize;

use crate::dynamics::{generator_from_derivatives, ModelParams, Observable, State};
use crate::error::{Error, Result};
use crate::potential::PeriodicPotential;
use crate::rng::{stream, Purpose};
use crate::stats::linear_fit;

/// `|p2 - p1|` below this is treated as a degenerate denominator.
pub const GAP_THRESHOLD: f64 = 1e-8;

fn checked_gap(x: &State) -> Result<f64> {
    let u = x.momentum_gap();
    if !(u.abs() >= GAP_THRESHOLD) {
        return Err(Error::DegenerateDenominator {
            gap: u.abs(),
            threshold: GAP_THRESHOLD,
        });
    }
    Ok(u)
}

/// `p2 + W(q2 - q1) / (p2 - p1)`.
pub fn correction1(params: &ModelParams, x: &State) -> Result<f64> {
    let u = checked_gap(x)?;
    Ok(x.p2 + params.potential().value(x.angle_gap()) / u)
}

/// `p2^(1) + (gamma p1 W1 - W^2) / (p2 - p1)^3`.
pub fn correction2(params: &ModelParams, x: &State) -> Result<f64> {
    let u = checked_gap(x)?;
    let s = x.angle_gap();
    let pot = params.potential();
    let w = pot.value(s);
    let numer = params.gamma() * x.p1 * pot.antiderivative1(s) - w * w;
    Ok(correction1(params, x)? + numer / (u * u * u))
}

/// `p2^(2) + gamma^2 p1 W2 / u^4 + 3 gamma^2 p1^2 W2 / u^5`.
pub fn p2_bar(params: &ModelParams, x: &State) -> Result<f64> {
    let u = checked_gap(x)?;
    let g2 = params.gamma() * params.gamma();
    let w2 = params.potential().antiderivative2(x.angle_gap());
    let u4 = u * u * u * u;
    Ok(correction2(params, x)? + g2 * x.p1 * w2 / u4 + 3.0 * g2 * x.p1 * x.p1 * w2 / (u4 * u))
}

/// The three correction levels at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedMomenta {
    pub p2_1: f64,
    pub p2_2: f64,
    pub p2_bar: f64,
}

impl AveragedMomenta {
    pub fn at(params: &ModelParams, x: &State) -> Result<Self> {
        Ok(Self {
            p2_1: correction1(params, x)?,
            p2_2: correction2(params, x)?,
            p2_bar: p2_bar(params, x)?,
        })
    }
}

/// Angular factor `f(q2 - q1)` of a monomial, drawn from the potential ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Angular {
    One,
    /// `W`
    Potential,
    /// `w = W'`
    Force,
    /// `W1`
    Anti1,
    /// `W2`
    Anti2,
    /// `W^2`
    PotentialSquared,
}

impl Angular {
    /// Value and derivative in `s = q2 - q1`.
    #[inline]
    fn eval(self, pot: &PeriodicPotential, s: f64) -> (f64, f64) {
        match self {
            Angular::One => (1.0, 0.0),
            Angular::Potential => pot.value_and_force(s),
            Angular::Force => (pot.force(s), pot.curvature(s)),
            Angular::Anti1 => (pot.antiderivative1(s), pot.value(s)),
            Angular::Anti2 => (pot.antiderivative2(s), pot.antiderivative1(s)),
            Angular::PotentialSquared => {
                let (w, dw) = pot.value_and_force(s);
                (w * w, 2.0 * w * dw)
            }
        }
    }

    /// Upper bound of `|f|` over the circle.
    pub fn sup_bound(self, pot: &PeriodicPotential) -> f64 {
        let l1 = |scale: &dyn Fn(f64) -> f64| -> f64 {
            pot.cosine_coeffs()
                .iter()
                .enumerate()
                .chain(pot.sine_coeffs().iter().enumerate())
                .map(|(k, c)| c.abs() * scale((k + 1) as f64))
                .sum()
        };
        match self {
            Angular::One => 1.0,
            Angular::Potential => l1(&|_| 1.0),
            Angular::Force => l1(&|k| k),
            Angular::Anti1 => l1(&|k| 1.0 / k),
            Angular::Anti2 => l1(&|k| 1.0 / (k * k)),
            Angular::PotentialSquared => l1(&|_| 1.0).powi(2),
        }
    }
}

/// `coeff * f(q2 - q1) * p1^k * p2^m / (p2 - p1)^l`, of order `k + m - l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub angular: Angular,
    pub p1_pow: u32,
    pub p2_pow: i32,
    pub gap_pow: u32,
}

/// Value and the derivatives `L` needs, for one monomial or a sum of them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// `[d_q1, d_q2, d_p1, d_p2]`
    pub gradient: [f64; 4],
    pub p1_second: f64,
}

impl std::ops::AddAssign for Jet {
    fn add_assign(&mut self, rhs: Self) {
        self.value += rhs.value;
        for (a, b) in self.gradient.iter_mut().zip(rhs.gradient) {
            *a += b;
        }
        self.p1_second += rhs.p1_second;
    }
}

impl Monomial {
    pub const fn new(coeff: f64, angular: Angular, p1_pow: u32, p2_pow: i32, gap_pow: u32) -> Self {
        Self {
            coeff,
            angular,
            p1_pow,
            p2_pow,
            gap_pow,
        }
    }

    pub fn order(&self) -> i32 {
        self.p1_pow as i32 + self.p2_pow - self.gap_pow as i32
    }

    /// Constant `C` with `|term| <= C |p2|^order` on `|p2| > (1 + delta)|p1|`,
    /// from `|p1| < |p2|/(1+delta)` and `|p2 - p1| > |p2| delta/(1+delta)`.
    pub fn region_bound_constant(&self, pot: &PeriodicPotential, delta: f64) -> f64 {
        self.coeff.abs()
            * self.angular.sup_bound(pot)
            * (1.0 + delta).powi(-(self.p1_pow as i32))
            * ((1.0 + delta) / delta).powi(self.gap_pow as i32)
    }

    #[inline]
    pub fn value(&self, pot: &PeriodicPotential, x: &State) -> f64 {
        let (f, _) = self.angular.eval(pot, x.angle_gap());
        self.coeff
            * f
            * x.p1.powi(self.p1_pow as i32)
            * x.p2.powi(self.p2_pow)
            * x.momentum_gap().powi(-(self.gap_pow as i32))
    }

    pub fn jet(&self, pot: &PeriodicPotential, x: &State) -> Jet {
        let (f, df) = self.angular.eval(pot, x.angle_gap());
        let (k, m, l) = (self.p1_pow as i32, self.p2_pow, self.gap_pow as i32);
        let (kf, mf, lf) = (k as f64, m as f64, l as f64);
        let u = x.momentum_gap();
        let inv_u = 1.0 / u;
        let a = if k == 0 { 1.0 } else { x.p1.powi(k) };
        let a1 = if k >= 1 { kf * x.p1.powi(k - 1) } else { 0.0 };
        let a2 = if k >= 2 {
            kf * (kf - 1.0) * x.p1.powi(k - 2)
        } else {
            0.0
        };
        let b = if m == 0 { 1.0 } else { x.p2.powi(m) };
        let b1 = if m != 0 { mf * x.p2.powi(m - 1) } else { 0.0 };
        let g = inv_u.powi(l);
        // d/dp1 u^-l = l u^-(l+1), d/dp2 u^-l = -l u^-(l+1)
        let g1 = lf * g * inv_u;
        let g2 = lf * (lf + 1.0) * g * inv_u * inv_u;

        let c = self.coeff;
        let ds = c * df * a * b * g;
        Jet {
            value: c * f * a * b * g,
            gradient: [
                -ds,
                ds,
                c * f * b * (a1 * g + a * g1),
                c * f * a * (b1 * g - b * g1),
            ],
            p1_second: c * f * b * (a2 * g + 2.0 * a1 * g1 + a * g2),
        }
    }
}

/// A finite sum of monomials: `p2` plus its counter-terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSeries {
    terms: Vec<Monomial>,
}

/// Correction level of the averaged momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionLevel {
    Bare,
    First,
    Second,
    Averaged,
}

impl CorrectionLevel {
    pub const ALL: [CorrectionLevel; 4] = [
        CorrectionLevel::Bare,
        CorrectionLevel::First,
        CorrectionLevel::Second,
        CorrectionLevel::Averaged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrectionLevel::Bare => "p2",
            CorrectionLevel::First => "p2_1",
            CorrectionLevel::Second => "p2_2",
            CorrectionLevel::Averaged => "p2_bar",
        }
    }
}

impl MomentumSeries {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    /// `p2` corrected up to `level`.
    pub fn corrected(gamma: f64, level: CorrectionLevel) -> Self {
        use Angular::*;
        let mut terms = vec![Monomial::new(1.0, One, 0, 1, 0)];
        if level == CorrectionLevel::Bare {
            return Self { terms };
        }
        terms.push(Monomial::new(1.0, Potential, 0, 0, 1));
        if level == CorrectionLevel::First {
            return Self { terms };
        }
        terms.push(Monomial::new(gamma, Anti1, 1, 0, 3));
        terms.push(Monomial::new(-1.0, PotentialSquared, 0, 0, 3));
        if level == CorrectionLevel::Second {
            return Self { terms };
        }
        let g2 = gamma * gamma;
        terms.push(Monomial::new(g2, Anti2, 1, 0, 4));
        terms.push(Monomial::new(3.0 * g2, Anti2, 2, 0, 5));
        Self { terms }
    }

    /// Highest order among the terms.
    pub fn order(&self) -> i32 {
        self.terms.iter().map(Monomial::order).max().unwrap_or(i32::MIN)
    }

    pub fn value(&self, pot: &PeriodicPotential, x: &State) -> f64 {
        self.terms.iter().map(|t| t.value(pot, x)).sum()
    }

    pub fn jet(&self, pot: &PeriodicPotential, x: &State) -> Jet {
        let mut acc = Jet::default();
        for t in &self.terms {
            acc += t.jet(pot, x);
        }
        acc
    }

    /// Drift `L(series)` at `x`.
    pub fn drift(&self, params: &ModelParams, x: &State) -> f64 {
        let j = self.jet(params.potential(), x);
        generator_from_derivatives(params, x, &j.gradient, j.p1_second)
    }

    /// Noise coefficient `sqrt(2 gamma T) d_p1(series)` at `x`.
    pub fn noise_coefficient(&self, params: &ModelParams, x: &State) -> f64 {
        let j = self.jet(params.potential(), x);
        (2.0 * params.gamma() * params.temperature()).sqrt() * j.gradient[2]
    }

    /// Binds the series to a potential so it can be fed to the generator.
    pub fn observable<'a>(&'a self, pot: &'a PeriodicPotential) -> SeriesObservable<'a> {
        SeriesObservable { series: self, pot }
    }
}

pub struct SeriesObservable<'a> {
    series: &'a MomentumSeries,
    pot: &'a PeriodicPotential,
}

impl Observable for SeriesObservable<'_> {
    fn value(&self, x: &State) -> f64 {
        self.series.value(self.pot, x)
    }

    fn gradient(&self, x: &State) -> [f64; 4] {
        self.series.jet(self.pot, x).gradient
    }

    fn p1_second(&self, x: &State) -> f64 {
        self.series.jet(self.pot, x).p1_second
    }
}

/// Log-log decay exponent of `max_q |f|` along a ray `p1 = lambda p2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub exponent: f64,
    /// RMS residual of the log-log fit (natural log).
    pub residual: f64,
    pub ray: f64,
    pub points: Vec<OrderPoint>,
}

/// One CSV row of an order measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderPoint {
    #[serde(rename = "P")]
    pub magnitude: f64,
    pub max_abs: f64,
    pub fitted: f64,
}

/// Angle pairs `(q1, q2)` shared by all magnitudes of an order measurement.
/// The gaps `q2 - q1` cover the circle on a shifted uniform grid.
pub fn probe_angles(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = stream(seed, Purpose::Angles, 0);
    let offset: f64 = rng.random::<f64>() / n as f64;
    (0..n)
        .map(|i| {
            let q1 = std::f64::consts::TAU * rng.random::<f64>();
            let gap = std::f64::consts::TAU * (i as f64 / n as f64 + offset);
            (q1, q1 + gap)
        })
        .collect()
}

/// Fits the slope of `log max_q |f(q1, q2, lambda P, P)|` against `log P`.
pub fn measure_order<F>(
    f: F,
    lambda: f64,
    magnitudes: &[f64],
    angles: &[(f64, f64)],
) -> Result<OrderEstimate>
where
    F: Fn(&State) -> f64,
{
    if magnitudes.len() < 4 {
        return Err(Error::Fit(format!(
            "order fit needs at least 4 magnitudes, got {}",
            magnitudes.len()
        )));
    }
    if !(lambda.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "ray slope must satisfy |lambda| < 1, got {lambda}"
        )));
    }
    if angles.is_empty() {
        return Err(Error::Fit("no probe angles".into()));
    }
    let mut xs = Vec::with_capacity(magnitudes.len());
    let mut ys = Vec::with_capacity(magnitudes.len());
    let mut maxima = Vec::with_capacity(magnitudes.len());
    for &p in magnitudes {
        let m = angles
            .iter()
            .map(|&(q1, q2)| {
                f(&State {
                    q1,
                    q2,
                    p1: lambda * p,
                    p2: p,
                })
                .abs()
            })
            .fold(0.0, f64::max);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Fit(format!("max |f| = {m} at P = {p}")));
        }
        xs.push(p.ln());
        ys.push(m.ln());
        maxima.push(m);
    }
    let line = linear_fit(&xs, &ys)?;
    let points = magnitudes
        .iter()
        .zip(&maxima)
        .zip(&xs)
        .map(|((&p, &m), &lx)| OrderPoint {
            magnitude: p,
            max_abs: m,
            fitted: (line.intercept + line.slope * lx).exp(),
        })
        .collect();
    Ok(OrderEstimate {
        exponent: line.slope,
        residual: line.rms_residual,
        ray: lambda,
        points,
    })
}

/// `2^4, 2^5, ..., 2^12`.
pub fn default_magnitudes() -> Vec<f64> {
    (4..=12).map(|e| 2f64.powi(e)).collect()
}

/// Rays `p1 = lambda p2` probed by default: `0, +-0.3, +-0.6/(1+delta)`.
pub fn default_rays(delta: f64) -> Vec<f64> {
    let edge = 0.6 / (1.0 + delta);
    vec![0.0, 0.3, -0.3, edge, -edge]
}

/// One measured exponent of [`order_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderRow {
    /// `"drift"` or `"noise"`.
    pub quantity: &'static str,
    pub level: &'static str,
    pub ray: f64,
    pub exponent: f64,
    pub residual: f64,
}

/// One measured point of [`order_check`], labelled like its [`OrderRow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderPointRow {
    pub quantity: &'static str,
    pub level: &'static str,
    pub ray: f64,
    #[serde(rename = "P")]
    pub magnitude: f64,
    pub max_abs: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrderCheck {
    pub rows: Vec<OrderRow>,
    pub points: Vec<OrderPointRow>,
}

/// Drift exponents of every correction level and the noise exponent of
/// `p2bar` on each ray.
pub fn order_check(
    params: &ModelParams,
    rays: &[f64],
    magnitudes: &[f64],
    n_angles: usize,
    seed: u64,
) -> Result<OrderCheck> {
    let angles = probe_angles(n_angles, seed);
    let mut out = OrderCheck::default();
    let mut push = |quantity: &'static str, level: CorrectionLevel, e: OrderEstimate| {
        out.rows.push(OrderRow {
            quantity,
            level: level.name(),
            ray: e.ray,
            exponent: e.exponent,
            residual: e.residual,
        });
        out.points.extend(e.points.iter().map(|pt| OrderPointRow {
            quantity,
            level: level.name(),
            ray: e.ray,
            magnitude: pt.magnitude,
            max_abs: pt.max_abs,
            fitted: pt.fitted,
        }));
    };
    for &ray in rays {
        for level in CorrectionLevel::ALL {
            let s = MomentumSeries::corrected(params.gamma(), level);
            push("drift", level, measure_order(|x| s.drift(params, x), ray, magnitudes, &angles)?);
        }
        let s = MomentumSeries::corrected(params.gamma(), CorrectionLevel::Averaged);
        let e = measure_order(|x| s.noise_coefficient(params, x), ray, magnitudes, &angles)?;
        push("noise", CorrectionLevel::Averaged, e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{apply_generator, FiniteDifference};
    use std::f64::consts::PI;

    fn standard() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn correction1_examples() {
        let p = standard();
        assert!((correction1(&p, &State::new(0.0, 0.0, 0.0, 2.0)).unwrap() - 1.5).abs() < 1e-15);
        assert!((correction1(&p, &State::new(0.0, PI, 1.0, 3.0)).unwrap() - 3.5).abs() < 1e-15);
        // W(pi/2) = 0
        let x = State::new(0.0, PI / 2.0, 0.3, 5.0);
        assert!((correction1(&p, &x).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn correction2_examples() {
        let p = standard();
        let x = State::new(0.0, 0.0, 0.0, 2.0);
        assert!((correction2(&p, &x).unwrap() - 1.375).abs() < 1e-15);
        let x = State::new(0.0, PI / 2.0, 0.0, 3.0);
        assert!((correction2(&p, &x).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn p2_bar_reduces_to_second_level_without_p1() {
        let p = standard();
        for s in [0.1, 1.0, 2.5, 4.0] {
            let x = State::new(0.3, 0.3 + s, 0.0, 7.0);
            assert_eq!(p2_bar(&p, &x).unwrap(), correction2(&p, &x).unwrap());
        }
    }

    #[test]
    fn p2_bar_by_substitution() {
        // W = -cos, x = (0, 0, 1, 4): W = -1, W1 = -sin 0 = 0, W2 = cos 0 = 1, u = 3
        let p = standard();
        let x = State::new(0.0, 0.0, 1.0, 4.0);
        let expected = 4.0 + (-1.0) / 3.0 + (0.0 - 1.0) / 27.0 + 1.0 / 81.0 + 3.0 / 243.0;
        assert!((p2_bar(&p, &x).unwrap() - expected).abs() < 1e-14);
        let series = MomentumSeries::corrected(1.0, CorrectionLevel::Averaged);
        assert!((series.value(p.potential(), &x) - expected).abs() < 1e-14);
    }

    #[test]
    fn degenerate_gap_is_rejected() {
        let p = standard();
        let x = State::new(0.0, 0.0, 2.0, 2.0 + 1e-9);
        assert!(matches!(
            correction1(&p, &x),
            Err(Error::DegenerateDenominator { .. })
        ));
        assert!(p2_bar(&p, &x).is_err());
    }

    #[test]
    fn series_orders() {
        let expect = [1, 1, 1, 1];
        for (level, order) in CorrectionLevel::ALL.iter().zip(expect) {
            assert_eq!(MomentumSeries::corrected(1.0, *level).order(), order);
        }
        let tail: Vec<i32> = MomentumSeries::corrected(1.0, CorrectionLevel::Averaged)
            .terms()
            .iter()
            .skip(1)
            .map(Monomial::order)
            .collect();
        assert_eq!(tail, vec![-1, -2, -3, -3, -3]);
    }

    #[test]
    fn series_jet_matches_finite_differences() {
        let p = ModelParams::new(0.7, 1.3, PeriodicPotential::new(vec![-1.0, 0.3], vec![0.2]).unwrap())
            .unwrap();
        let series = MomentumSeries::corrected(p.gamma(), CorrectionLevel::Averaged);
        let obs = series.observable(p.potential());
        let fd = FiniteDifference::new(|x: &State| series.value(p.potential(), x));
        for x in [
            State::new(0.3, 1.9, 1.2, 6.0),
            State::new(5.0, 2.0, -3.0, 9.5),
            State::new(1.0, 1.5, 20.0, -40.0),
        ] {
            let a = obs.gradient(&x);
            let b = fd.gradient(&x);
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() < 1e-7 * (1.0 + a[i].abs()), "{i}: {a:?} {b:?}");
            }
            let s2 = obs.p1_second(&x);
            assert!((s2 - fd.p1_second(&x)).abs() < 1e-4 * (1.0 + s2.abs()));
            let l1 = apply_generator(&p, &obs, &x).unwrap();
            let l2 = apply_generator(&p, &fd, &x).unwrap();
            assert!((l1 - l2).abs() < 1e-4 * (1.0 + l1.abs()), "{l1} vs {l2}");
            assert!((series.drift(&p, &x) - l1).abs() < 1e-15);
        }
    }

    #[test]
    fn first_correction_drift_has_expected_leading_term() {
        // L p2^(1) = W (2 w - gamma p1) / u^2 + 2 gamma T W / u^3 exactly
        let p = standard();
        let series = MomentumSeries::corrected(1.0, CorrectionLevel::First);
        let x = State::new(0.4, 2.2, 1.5, 11.0);
        let s = x.angle_gap();
        let u = x.momentum_gap();
        let (w, dw) = p.potential().value_and_force(s);
        let expected = w * (2.0 * dw - x.p1) / (u * u) + 2.0 * w / (u * u * u);
        assert!((series.drift(&p, &x) - expected).abs() < 1e-14);
    }

    #[test]
    fn measure_order_of_bounded_drift() {
        let p = standard();
        let angles = probe_angles(64, 3);
        let est = measure_order(
            |x| -p.potential().force(x.angle_gap()),
            0.2,
            &default_magnitudes(),
            &angles,
        )
        .unwrap();
        assert!(est.exponent.abs() < 0.05, "{est:?}");
        assert_eq!(est.points.len(), 9);
    }

    #[test]
    fn measure_order_errors() {
        let angles = probe_angles(8, 3);
        assert!(measure_order(|_| 1.0, 0.0, &[1.0, 2.0, 4.0], &angles).is_err());
        assert!(measure_order(|_| 1.0, 1.0, &default_magnitudes(), &angles).is_err());
        assert!(measure_order(|_| 0.0, 0.0, &default_magnitudes(), &angles).is_err());
    }
}
