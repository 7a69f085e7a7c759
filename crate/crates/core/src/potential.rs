//! Interaction potential on the circle.
//!
//! The potential is a finite Fourier series without constant term,
//!
//! ```text
//! W(s) = sum_k a_k cos(k s) + b_k sin(k s),   k = 1, 2, ...
//! ```
//!
//! so the whole derivative/antiderivative ladder `w = W'`, `W1' = W`,
//! `W2' = W1` is available in closed form. Both antiderivatives are the
//! zero-mean ones, i.e. they carry no constant Fourier mode either.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPotential {
    /// `a_k` for k = 1, 2, ... (index 0 holds k = 1).
    cosine_coeffs: Vec<f64>,
    /// `b_k` for k = 1, 2, ...
    sine_coeffs: Vec<f64>,
}

impl PeriodicPotential {
    pub fn new(cosine_coeffs: Vec<f64>, sine_coeffs: Vec<f64>) -> Result<Self> {
        if cosine_coeffs
            .iter()
            .chain(sine_coeffs.iter())
            .any(|c| !c.is_finite())
        {
            return Err(Error::invalid("potential", "coefficients must be finite"));
        }
        Ok(Self {
            cosine_coeffs,
            sine_coeffs,
        })
    }

    /// `W(s) = -cos(s)`, the standard rotor coupling.
    pub fn standard() -> Self {
        Self {
            cosine_coeffs: vec![-1.0],
            sine_coeffs: vec![],
        }
    }

    /// `W == 0`.
    pub fn zero() -> Self {
        Self {
            cosine_coeffs: vec![],
            sine_coeffs: vec![],
        }
    }

    pub fn cosine_coeffs(&self) -> &[f64] {
        &self.cosine_coeffs
    }

    pub fn sine_coeffs(&self) -> &[f64] {
        &self.sine_coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.cosine_coeffs
            .iter()
            .chain(self.sine_coeffs.iter())
            .all(|&c| c == 0.0)
    }

    fn modes(&self) -> usize {
        self.cosine_coeffs.len().max(self.sine_coeffs.len())
    }

    /// Sums `f(k, a_k, b_k, cos(ks), sin(ks))` over the modes, generating the
    /// harmonics by recurrence from a single `sin_cos`.
    #[inline]
    fn fold<F>(&self, s: f64, mut f: F) -> f64
    where
        F: FnMut(f64, f64, f64, f64, f64) -> f64,
    {
        let n = self.modes();
        if n == 0 {
            return 0.0;
        }
        let (s1, c1) = s.sin_cos();
        let (mut sk, mut ck) = (s1, c1);
        let mut acc = 0.0;
        for k in 0..n {
            let a = self.cosine_coeffs.get(k).copied().unwrap_or(0.0);
            let b = self.sine_coeffs.get(k).copied().unwrap_or(0.0);
            acc += f((k + 1) as f64, a, b, ck, sk);
            let next_c = ck * c1 - sk * s1;
            let next_s = sk * c1 + ck * s1;
            ck = next_c;
            sk = next_s;
        }
        acc
    }

    /// `W(s)`.
    pub fn value(&self, s: f64) -> f64 {
        self.fold(s, |_, a, b, c, sn| a * c + b * sn)
    }

    /// `w(s) = W'(s)`.
    pub fn force(&self, s: f64) -> f64 {
        self.fold(s, |k, a, b, c, sn| k * (b * c - a * sn))
    }

    /// `W'' (s)`, used by the finite-difference audits and the integrator tests.
    pub fn curvature(&self, s: f64) -> f64 {
        self.fold(s, |k, a, b, c, sn| -k * k * (a * c + b * sn))
    }

    /// Zero-mean antiderivative `W1` with `W1' = W`.
    pub fn antiderivative1(&self, s: f64) -> f64 {
        self.fold(s, |k, a, b, c, sn| (a * sn - b * c) / k)
    }

    /// Zero-mean antiderivative `W2` with `W2' = W1`.
    pub fn antiderivative2(&self, s: f64) -> f64 {
        self.fold(s, |k, a, b, c, sn| -(a * c + b * sn) / (k * k))
    }

    /// `W` and `w` in one pass.
    #[inline]
    pub fn value_and_force(&self, s: f64) -> (f64, f64) {
        let mut force = 0.0;
        let value = self.fold(s, |k, a, b, c, sn| {
            force += k * (b * c - a * sn);
            a * c + b * sn
        });
        (value, force)
    }

    /// Mean of `W(s)^2` over a period (Parseval).
    pub fn mean_square(&self) -> f64 {
        self.cosine_coeffs
            .iter()
            .chain(self.sine_coeffs.iter())
            .map(|c| 0.5 * c * c)
            .sum()
    }
}

impl Default for PeriodicPotential {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pot(a: &[f64], b: &[f64]) -> PeriodicPotential {
        PeriodicPotential::new(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn values_at_landmarks() {
        let p = pot(&[1.0], &[]);
        assert!((p.value(0.0) - 1.0).abs() < 1e-15);
        assert!((p.value(PI) + 1.0).abs() < 1e-15);
        let p = pot(&[0.7], &[0.0, 0.3]);
        let direct = 0.7 * (FRAC_PI_2).cos() + 0.3 * (2.0 * FRAC_PI_2).sin();
        assert!((p.value(FRAC_PI_2) - direct).abs() < 1e-15);
        assert!(p.value(FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn force_at_landmarks() {
        let p = pot(&[1.0], &[]);
        assert!((p.force(FRAC_PI_2) + 1.0).abs() < 1e-15);
        assert!(p.force(0.0).abs() < 1e-15);
        // d/ds 0.5 sin(2s) = cos(2s)
        let p = pot(&[], &[0.0, 0.5]);
        assert!((p.force(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn antiderivatives_of_cosine() {
        let p = pot(&[1.0], &[]);
        assert!((p.antiderivative1(FRAC_PI_2) - 1.0).abs() < 1e-15);
        assert!((p.antiderivative2(0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_recurrence_matches_direct_sum() {
        let a = [0.3, -0.2, 0.1, 0.05, -0.4];
        let b = [0.0, 0.7, -0.1];
        let p = pot(&a, &b);
        for i in 0..50 {
            let s = -7.0 + 0.31 * i as f64;
            let mut direct = 0.0;
            for (k, ak) in a.iter().enumerate() {
                direct += ak * ((k + 1) as f64 * s).cos();
            }
            for (k, bk) in b.iter().enumerate() {
                direct += bk * ((k + 1) as f64 * s).sin();
            }
            assert!((p.value(s) - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_potential_is_identically_zero() {
        let p = PeriodicPotential::zero();
        assert!(p.is_zero());
        for s in [0.0, 1.0, 4.0] {
            assert_eq!(p.value(s), 0.0);
            assert_eq!(p.force(s), 0.0);
            assert_eq!(p.antiderivative2(s), 0.0);
        }
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        assert!(PeriodicPotential::new(vec![f64::NAN], vec![]).is_err());
    }

    #[test]
    fn parseval_mean_square() {
        let p = pot(&[-1.0], &[]);
        assert!((p.mean_square() - 0.5).abs() < 1e-15);
    }
}
