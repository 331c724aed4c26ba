//! Congestion functions `g(z) = a·z^(q-1) + c0` and the derived integrands.
//!
//! In [`Mode::SocialCost`] the integrand is the total travel cost
//! `H(z) = z·g(z)`; its minimizers are system optima. In
//! [`Mode::Equilibrium`] the integrand is the potential `H(z) = ∫₀^z g`,
//! whose minimizers are Wardrop-type equilibria.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SocialCost,
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionModel {
    pub q: f64,
    pub a: f64,
    pub c0: f64,
    pub mode: Mode,
}

impl CongestionModel {
    pub fn new(q: f64, a: f64, c0: f64, mode: Mode) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::Config("q must exceed 1".into()));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Config("a must be positive".into()));
        }
        if !(c0 >= 0.0) || !c0.is_finite() {
            return Err(Error::Config("c0 must be nonnegative".into()));
        }
        Ok(Self { q, a, c0, mode })
    }

    /// Conjugate exponent `q/(q-1)`.
    pub fn q_star(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// Growth constant `b` in `a·z^(q-1) ≤ g(z) ≤ b·(z^(q-1) + 1)`.
    pub fn growth_upper(&self) -> f64 {
        self.a.max(self.c0)
    }

    pub fn g(&self, z: f64) -> f64 {
        self.a * z.powf(self.q - 1.0) + self.c0
    }

    /// Integrand `H(z)`. Callers guarantee `z ≥ 0`.
    #[inline]
    pub fn h(&self, z: f64) -> f64 {
        let zq = z.powf(self.q);
        match self.mode {
            Mode::SocialCost => self.a * zq + self.c0 * z,
            Mode::Equilibrium => self.a * zq / self.q + self.c0 * z,
        }
    }

    /// Derivative `H'(z)`, the metric induced by density `z`.
    #[inline]
    pub fn h_prime(&self, z: f64) -> f64 {
        let zq1 = z.powf(self.q - 1.0);
        match self.mode {
            Mode::SocialCost => self.a * self.q * zq1 + self.c0,
            Mode::Equilibrium => self.a * zq1 + self.c0,
        }
    }

    /// Second derivative `H''(z)`, infinite at `z = 0` when `q < 2`.
    pub fn h_second(&self, z: f64) -> f64 {
        let zq2 = z.powf(self.q - 2.0);
        match self.mode {
            Mode::SocialCost => self.a * self.q * (self.q - 1.0) * zq2,
            Mode::Equilibrium => self.a * (self.q - 1.0) * zq2,
        }
    }

    /// Fenchel conjugate `H*(ξ) = sup_{z≥0} (ξz - H(z))`.
    #[inline]
    pub fn h_conj(&self, xi: f64) -> f64 {
        let excess = xi - self.c0;
        if excess <= 0.0 {
            return 0.0;
        }
        let slope = match self.mode {
            Mode::SocialCost => self.a * self.q,
            Mode::Equilibrium => self.a,
        };
        let z = (excess / slope).powf(1.0 / (self.q - 1.0));
        let zq = z.powf(self.q);
        match self.mode {
            Mode::SocialCost => self.a * (self.q - 1.0) * zq,
            Mode::Equilibrium => self.a * zq * (self.q - 1.0) / self.q,
        }
    }

    pub fn h_eval(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return Err(Error::NegativeDensity(z));
        }
        Ok(self.h(z))
    }

    pub fn h_prime_eval(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return Err(Error::NegativeDensity(z));
        }
        Ok(self.h_prime(z))
    }

    pub fn h_conj_eval(&self, xi: f64) -> Result<f64> {
        if xi < 0.0 || xi.is_nan() {
            return Err(Error::NegativeMetric(xi));
        }
        Ok(self.h_conj(xi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn second_derivative_matches_differences() {
        for mode in [Mode::SocialCost, Mode::Equilibrium] {
            let m = CongestionModel::new(1.3, 0.7, 0.2, mode).unwrap();
            for z in [0.05, 0.5, 3.0] {
                let h = 1e-5 * z;
                let fd = (m.h_prime(z + h) - m.h_prime(z - h)) / (2.0 * h);
                assert!((fd - m.h_second(z)).abs() <= 1e-6 * fd.abs(), "{mode:?} {z}");
            }
        }
    }

    fn sqrt_g(mode: Mode) -> CongestionModel {
        CongestionModel::new(1.5, 1.0, 0.0, mode).unwrap()
    }

    /// Brute-force conjugate: maximize `ξz − H(z)` over a dense z grid,
    /// then refine with golden-section search around the best sample.
    fn conj_oracle(m: &CongestionModel, xi: f64) -> f64 {
        let zmax = 100.0;
        let n = 100_000;
        let (mut best_z, mut best) = (0.0, 0.0);
        for k in 0..=n {
            let z = zmax * k as f64 / n as f64;
            let v = xi * z - m.h(z);
            if v > best {
                best = v;
                best_z = z;
            }
        }
        let (mut lo, mut hi) = ((best_z - zmax / n as f64).max(0.0), best_z + zmax / n as f64);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let x1 = hi - phi * (hi - lo);
            let x2 = lo + phi * (hi - lo);
            if xi * x1 - m.h(x1) > xi * x2 - m.h(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let z = 0.5 * (lo + hi);
        best.max(xi * z - m.h(z))
    }

    #[test]
    fn h_examples() {
        assert!((sqrt_g(Mode::SocialCost).h_eval(4.0).unwrap() - 8.0).abs() < 1e-12);
        assert!((sqrt_g(Mode::Equilibrium).h_eval(4.0).unwrap() - 16.0 / 3.0).abs() < 1e-12);
        for mode in [Mode::SocialCost, Mode::Equilibrium] {
            let m = CongestionModel::new(1.7, 2.0, 0.3, mode).unwrap();
            assert_eq!(m.h_eval(0.0).unwrap(), 0.0);
            assert!(matches!(m.h_eval(-1.0), Err(Error::NegativeDensity(_))));
        }
    }

    #[test]
    fn h_prime_examples() {
        assert!((sqrt_g(Mode::Equilibrium).h_prime_eval(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((sqrt_g(Mode::SocialCost).h_prime_eval(1.0).unwrap() - 1.5).abs() < 1e-15);
        for mode in [Mode::SocialCost, Mode::Equilibrium] {
            let m = CongestionModel::new(1.5, 1.0, 0.1, mode).unwrap();
            assert_eq!(m.h_prime_eval(0.0).unwrap(), 0.1);
        }
    }

    #[test]
    fn conj_examples() {
        let m = sqrt_g(Mode::Equilibrium);
        assert!((m.h_conj_eval(1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((conj_oracle(&m, 1.0) - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.h_conj_eval(0.0).unwrap(), 0.0);
        let z = 1.0;
        assert!((m.h(z) + m.h_conj(m.h_prime(z)) - z * m.h_prime(z)).abs() < 1e-14);
        assert!(matches!(m.h_conj_eval(-0.5), Err(Error::NegativeMetric(_))));
    }

    #[test]
    fn conj_matches_oracle() {
        for mode in [Mode::SocialCost, Mode::Equilibrium] {
            for (q, a, c0) in [(1.3, 1.0, 0.05), (1.8, 0.5, 0.0), (2.5, 2.0, 0.2)] {
                let m = CongestionModel::new(q, a, c0, mode).unwrap();
                for xi in [0.0, 0.1, 0.7, 1.9, 4.0] {
                    let exact = m.h_conj(xi);
                    let oracle = conj_oracle(&m, xi);
                    assert!(
                        (exact - oracle).abs() <= 1e-8 * exact.max(1.0),
                        "{mode:?} q={q} xi={xi}: {exact} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(CongestionModel::new(1.0, 1.0, 0.0, Mode::SocialCost).is_err());
        assert!(CongestionModel::new(1.5, 0.0, 0.0, Mode::SocialCost).is_err());
        assert!(CongestionModel::new(1.5, 1.0, -0.1, Mode::SocialCost).is_err());
    }

    fn model() -> impl Strategy<Value = CongestionModel> {
        (1.05f64..3.0, 0.1f64..5.0, 0.0f64..1.0, prop::bool::ANY).prop_map(|(q, a, c0, s)| {
            let mode = if s { Mode::SocialCost } else { Mode::Equilibrium };
            CongestionModel::new(q, a, c0, mode).unwrap()
        })
    }

    proptest! {
        #[test]
        fn young_inequality(m in model(), z in 0.0f64..50.0, xi in 0.0f64..20.0) {
            let lhs = xi * z;
            let rhs = m.h(z) + m.h_conj(xi);
            prop_assert!(lhs <= rhs + 1e-10 * rhs.max(1.0));
            let xz = m.h_prime(z);
            let eq = m.h(z) + m.h_conj(xz);
            prop_assert!((eq - xz * z).abs() <= 1e-8 * eq.max(1.0));
        }

        #[test]
        fn derivative_matches_finite_differences(m in model(), t in 0.0f64..1.0) {
            let z = 0.01 * 10f64.powf(4.0 * t);
            let step = 1e-5 * z;
            let fd = (m.h(z + step) - m.h(z - step)) / (2.0 * step);
            let d = m.h_prime(z);
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs(), "fd {} vs {}", fd, d);
        }

        #[test]
        fn monotone_and_growth(m in model(), z1 in 0.0f64..100.0, dz in 0.0f64..10.0) {
            let z2 = z1 + dz;
            prop_assert!(m.h(z1) <= m.h(z2));
            prop_assert!(m.h_prime(z1) <= m.h_prime(z2));
            prop_assert!(m.g(z1) >= 0.0);
            let p = z1.powf(m.q - 1.0);
            prop_assert!(m.a * p <= m.g(z1) * (1.0 + 1e-14));
            prop_assert!(m.g(z1) <= m.growth_upper() * (p + 1.0) * (1.0 + 1e-14));
        }

        #[test]
        fn convexity(m in model(), z1 in 0.0f64..20.0, z2 in 0.0f64..20.0, t in 0.0f64..1.0) {
            let mid = t * z1 + (1.0 - t) * z2;
            let lhs = m.h(mid);
            let rhs = t * m.h(z1) + (1.0 - t) * m.h(z2);
            prop_assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
        }
    }
}
