//! The two-rotor Langevin system.
//!
//! ```text
//! dq_i = p_i dt                                        (i = 1, 2)
//! dp_1 = w(q_2 - q_1) dt - gamma p_1 dt + sqrt(2 gamma T) dB_t
//! dp_2 = -w(q_2 - q_1) dt
//! ```
//!
//! with Hamiltonian `H = (p_1^2 + p_2^2)/2 + W(q_2 - q_1)` and generator
//!
//! ```text
//! L = p_1 d_q1 + p_2 d_q2 + w(q_2 - q_1)(d_p1 - d_p2) - gamma p_1 d_p1 + gamma T d_p1^2
//! ```

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PeriodicPotential;

/// Reduces an angle to `[0, 2 pi)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Phase point `(q1, q2, p1, p2)` on `T^2 x R^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl State {
    /// Builds a state, reducing both angles mod 2 pi.
    pub fn new(q1: f64, q2: f64, p1: f64, p2: f64) -> Self {
        Self {
            q1: wrap_angle(q1),
            q2: wrap_angle(q2),
            p1,
            p2,
        }
    }

    /// `q2 - q1`, the argument of the potential.
    #[inline]
    pub fn angle_gap(&self) -> f64 {
        self.q2 - self.q1
    }

    /// `p2 - p1`.
    #[inline]
    pub fn momentum_gap(&self) -> f64 {
        self.p2 - self.p1
    }

    pub fn momentum_norm_sq(&self) -> f64 {
        self.p1 * self.p1 + self.p2 * self.p2
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite() && self.p1.is_finite() && self.p2.is_finite()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.q1, self.q2, self.p1, self.p2]
    }

    /// Shifts coordinate `axis` (0..4 in the order q1, q2, p1, p2) by `h`
    /// without re-reducing angles, for finite differences.
    pub fn shifted(&self, axis: usize, h: f64) -> Self {
        let mut c = self.as_array();
        c[axis] += h;
        Self {
            q1: c[0],
            q2: c[1],
            p1: c[2],
            p2: c[3],
        }
    }
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "q1={} q2={} p1={} p2={}",
            self.q1, self.q2, self.p1, self.p2
        )
    }
}

/// Bath coupling, bath temperature and interaction potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    gamma: f64,
    temperature: f64,
    potential: PeriodicPotential,
}

impl ModelParams {
    pub fn new(gamma: f64, temperature: f64, potential: PeriodicPotential) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(
                "temperature",
                format!("must be > 0, got {temperature}"),
            ));
        }
        Ok(Self {
            gamma,
            temperature,
            potential,
        })
    }

    /// Like [`ModelParams::new`] but allows `gamma = 0` (isolated chain),
    /// which some diagnostics use to exercise the censoring path.
    pub fn without_bath(temperature: f64, potential: PeriodicPotential) -> Self {
        Self {
            gamma: 0.0,
            temperature,
            potential,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn potential(&self) -> &PeriodicPotential {
        &self.potential
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            temperature: 1.0,
            potential: PeriodicPotential::standard(),
        }
    }
}

pub fn hamiltonian(params: &ModelParams, x: &State) -> f64 {
    0.5 * (x.p1 * x.p1 + x.p2 * x.p2) + params.potential.value(x.angle_gap())
}

/// A function on phase space together with the derivatives the generator
/// needs: the full gradient and the second derivative in `p1`.
pub trait Observable {
    fn value(&self, x: &State) -> f64;

    /// `[d_q1, d_q2, d_p1, d_p2]`.
    fn gradient(&self, x: &State) -> [f64; 4];

    fn p1_second(&self, x: &State) -> f64;
}

/// Observable assembled from closures.
pub struct Analytic<V, G, S> {
    pub value: V,
    pub gradient: G,
    pub p1_second: S,
}

impl<V, G, S> Observable for Analytic<V, G, S>
where
    V: Fn(&State) -> f64,
    G: Fn(&State) -> [f64; 4],
    S: Fn(&State) -> f64,
{
    fn value(&self, x: &State) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &State) -> [f64; 4] {
        (self.gradient)(x)
    }

    fn p1_second(&self, x: &State) -> f64 {
        (self.p1_second)(x)
    }
}

/// Finite-difference fallback: central differences for the gradient and a
/// three-point second difference in `p1`.
pub struct FiniteDifference<V> {
    pub value: V,
    pub step: f64,
    pub second_step: f64,
}

impl<V: Fn(&State) -> f64> FiniteDifference<V> {
    pub fn new(value: V) -> Self {
        Self {
            value,
            step: 1e-5,
            second_step: 1e-4,
        }
    }
}

impl<V: Fn(&State) -> f64> Observable for FiniteDifference<V> {
    fn value(&self, x: &State) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &State) -> [f64; 4] {
        let h = self.step;
        std::array::from_fn(|axis| {
            ((self.value)(&x.shifted(axis, h)) - (self.value)(&x.shifted(axis, -h))) / (2.0 * h)
        })
    }

    fn p1_second(&self, x: &State) -> f64 {
        let h = self.second_step;
        ((self.value)(&x.shifted(2, h)) - 2.0 * (self.value)(x) + (self.value)(&x.shifted(2, -h)))
            / (h * h)
    }
}

/// `H` with analytic derivatives.
pub struct HamiltonianObservable<'a>(pub &'a ModelParams);

impl Observable for HamiltonianObservable<'_> {
    fn value(&self, x: &State) -> f64 {
        hamiltonian(self.0, x)
    }

    fn gradient(&self, x: &State) -> [f64; 4] {
        let w = self.0.potential.force(x.angle_gap());
        [-w, w, x.p1, x.p2]
    }

    fn p1_second(&self, _x: &State) -> f64 {
        1.0
    }
}

/// `exp(beta H)` with analytic derivatives.
pub struct ExpHamiltonian<'a> {
    pub params: &'a ModelParams,
    pub beta: f64,
}

impl Observable for ExpHamiltonian<'_> {
    fn value(&self, x: &State) -> f64 {
        (self.beta * hamiltonian(self.params, x)).exp()
    }

    fn gradient(&self, x: &State) -> [f64; 4] {
        let e = self.value(x);
        let g = HamiltonianObservable(self.params).gradient(x);
        g.map(|d| self.beta * e * d)
    }

    fn p1_second(&self, x: &State) -> f64 {
        let e = self.value(x);
        e * self.beta * (1.0 + self.beta * x.p1 * x.p1)
    }
}

/// Generator contraction given precomputed derivatives.
#[inline]
pub fn generator_from_derivatives(
    params: &ModelParams,
    x: &State,
    gradient: &[f64; 4],
    p1_second: f64,
) -> f64 {
    let w = params.potential.force(x.angle_gap());
    x.p1 * gradient[0] + x.p2 * gradient[1] + w * (gradient[2] - gradient[3])
        - params.gamma * x.p1 * gradient[2]
        + params.gamma * params.temperature * p1_second
}

/// `(L f)(x)`.
pub fn apply_generator<O: Observable + ?Sized>(
    params: &ModelParams,
    f: &O,
    x: &State,
) -> Result<f64> {
    let g = f.gradient(x);
    let h = f.p1_second(x);
    if g.iter().any(|d| !d.is_finite()) || !h.is_finite() {
        return Err(Error::NonFinite {
            context: format!("observable derivatives at {x}"),
        });
    }
    Ok(generator_from_derivatives(params, x, &g, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Velocity-Verlet half steps around an exact Ornstein-Uhlenbeck update
    /// of `p1`.
    #[default]
    Splitting,
    EulerMaruyama,
}

/// One-step map for a fixed `(params, dt, scheme)`, with the Ornstein-Uhlenbeck
/// coefficients precomputed.
#[derive(Debug, Clone)]
pub struct Stepper {
    params: ModelParams,
    dt: f64,
    scheme: Scheme,
    ou_decay: f64,
    ou_sigma: f64,
    em_sigma: f64,
}

impl Stepper {
    pub fn new(params: &ModelParams, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        let (g, t) = (params.gamma, params.temperature);
        Ok(Self {
            params: params.clone(),
            dt,
            scheme,
            ou_decay: (-g * dt).exp(),
            ou_sigma: (t * -(-2.0 * g * dt).exp_m1()).sqrt(),
            em_sigma: (2.0 * g * t * dt).sqrt(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Standard deviation of the `p1` increment a unit normal is scaled by.
    pub fn noise_scale(&self) -> f64 {
        match self.scheme {
            Scheme::Splitting => self.ou_sigma,
            Scheme::EulerMaruyama => self.em_sigma,
        }
    }

    /// Force `w(q2 - q1)` at `x`, the value threaded between steps.
    #[inline]
    pub fn force_at(&self, x: &State) -> f64 {
        self.params.potential.force(x.angle_gap())
    }

    /// Advances one step with a standard normal `noise`. `force` must hold
    /// `w(q2 - q1)` at `x` on entry and is updated to the value at the
    /// returned state, so consecutive steps share one force evaluation.
    #[inline]
    pub fn advance(&self, x: State, force: &mut f64, noise: f64) -> State {
        match self.scheme {
            Scheme::Splitting => self.advance_splitting(x, force, noise),
            Scheme::EulerMaruyama => self.advance_euler(x, force, noise),
        }
    }

    #[inline]
    fn advance_splitting(&self, x: State, force: &mut f64, noise: f64) -> State {
        let h = 0.5 * self.dt;
        let k = 0.5 * h;
        let pot = &self.params.potential;
        let State {
            mut q1,
            mut q2,
            mut p1,
            mut p2,
        } = x;

        // Hamiltonian flow over dt/2 (velocity Verlet)
        p1 += k * *force;
        p2 -= k * *force;
        q1 += h * p1;
        q2 += h * p2;
        let mid = pot.force(q2 - q1);
        p1 += k * mid;
        p2 -= k * mid;

        // exact Ornstein-Uhlenbeck flow of p1 over dt
        p1 = self.ou_decay * p1 + self.ou_sigma * noise;

        // Hamiltonian flow over dt/2
        p1 += k * mid;
        p2 -= k * mid;
        q1 += h * p1;
        q2 += h * p2;
        let end = pot.force(q2 - q1);
        p1 += k * end;
        p2 -= k * end;

        *force = end;
        State {
            q1: wrap_angle(q1),
            q2: wrap_angle(q2),
            p1,
            p2,
        }
    }

    #[inline]
    fn advance_euler(&self, x: State, force: &mut f64, noise: f64) -> State {
        let dt = self.dt;
        let w = *force;
        let next = State {
            q1: wrap_angle(x.q1 + dt * x.p1),
            q2: wrap_angle(x.q2 + dt * x.p2),
            p1: x.p1 + (w - self.params.gamma * x.p1) * dt + self.em_sigma * noise,
            p2: x.p2 - w * dt,
        };
        *force = self.force_at(&next);
        next
    }

    /// One checked step.
    pub fn step(&self, x: &State, noise: f64) -> Result<State> {
        let mut force = self.force_at(x);
        let next = self.advance(*x, &mut force, noise);
        if !next.is_finite() {
            return Err(Error::Diverged {
                time: self.dt,
                state: next.to_string(),
            });
        }
        Ok(next)
    }

    /// Advances `n_steps` drawing noise from `rng`. Checks finiteness every
    /// 1024 steps and at the end; `t0` only labels the failure time.
    pub fn propagate<R: Rng + ?Sized>(
        &self,
        x: State,
        n_steps: u64,
        rng: &mut R,
        t0: f64,
    ) -> Result<State> {
        let mut x = x;
        let mut force = self.force_at(&x);
        for k in 0..n_steps {
            let xi: f64 = rng.sample(StandardNormal);
            x = self.advance(x, &mut force, xi);
            if (k & 1023 == 1023 || k + 1 == n_steps) && !x.is_finite() {
                return Err(Error::Diverged {
                    time: t0 + (k + 1) as f64 * self.dt,
                    state: x.to_string(),
                });
            }
        }
        Ok(x)
    }
}

/// One step of the chosen scheme; `noise` is a standard normal draw.
pub fn step(
    params: &ModelParams,
    x: &State,
    dt: f64,
    noise: f64,
    scheme: Scheme,
) -> Result<State> {
    Stepper::new(params, dt, scheme)?.step(x, noise)
}

/// Result of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub final_state: State,
    pub t_end: f64,
    pub n_steps: u64,
    /// Running maximum of `|p2|` along the path.
    pub max_abs_p2: f64,
}

/// Callback receiving `(t, state)`.
pub type Observer<'a> = &'a mut dyn FnMut(f64, &State);

/// Runs one trajectory. Observers are called at `t = 0` and every `stride`
/// steps (and at the final step).
pub fn simulate<R: Rng + ?Sized>(
    stepper: &Stepper,
    x0: &State,
    n_steps: u64,
    rng: &mut R,
    stride: u64,
    observers: &mut [Observer<'_>],
) -> Result<TrajectorySummary> {
    let stride = stride.max(1);
    let dt = stepper.dt();
    let mut x = *x0;
    let mut force = stepper.force_at(&x);
    let mut max_abs_p2 = x.p2.abs();
    for obs in observers.iter_mut() {
        obs(0.0, &x);
    }
    for k in 1..=n_steps {
        let xi: f64 = rng.sample(StandardNormal);
        x = stepper.advance(x, &mut force, xi);
        let t = k as f64 * dt;
        if !x.is_finite() {
            return Err(Error::Diverged {
                time: t,
                state: x.to_string(),
            });
        }
        max_abs_p2 = max_abs_p2.max(x.p2.abs());
        if k % stride == 0 || k == n_steps {
            for obs in observers.iter_mut() {
                obs(t, &x);
            }
        }
    }
    Ok(TrajectorySummary {
        final_state: x,
        t_end: n_steps as f64 * dt,
        n_steps,
        max_abs_p2,
    })
}

/// `(t, q1, q2, p1, p2)` rows for trajectory dumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl TrajectoryRow {
    pub fn new(t: f64, x: &State) -> Self {
        Self {
            t,
            q1: x.q1,
            q2: x.q2,
            p1: x.p1,
            p2: x.p2,
        }
    }
}
