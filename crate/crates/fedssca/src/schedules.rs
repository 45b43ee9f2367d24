//! Diminishing step-size sequences for the SSCA recursions.
//!
//! Two sequences drive the training loop: `rho` smooths the surrogate
//! recursion and `gamma` averages the iterates. Both follow the power form
//! `a / t^e`; the exponents must be chosen so that `rho` sums to infinity
//! while `gamma / rho` vanishes.

use serde::{Deserialize, Serialize};

/// Parameters of the `rho`/`gamma` step-size pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Scale of `rho(t) = a1 / t^alpha`.
    pub a1: f64,
    /// Scale of `gamma(t) = a2 / t^alpha_gamma`.
    pub a2: f64,
    /// Exponent of `rho`, in (0, 1].
    pub alpha: f64,
    /// Exponent of `gamma`, strictly greater than `alpha`.
    pub alpha_gamma: f64,
}

impl StepSchedule {
    pub fn new(a1: f64, a2: f64, alpha: f64, alpha_gamma: f64) -> Self {
        Self {
            a1,
            a2,
            alpha,
            alpha_gamma,
        }
    }

    /// Surrogate-averaging step `rho(t) = min(1, a1 / t^alpha)`.
    ///
    /// Values are clamped to 1 so the surrogate update stays a convex
    /// combination even when `a1 > 1`.
    ///
    /// # Panics
    /// Panics if `t == 0`; the recursion is defined for `t >= 1`.
    pub fn rho(&self, t: u32) -> f64 {
        assert!(t >= 1, "step index must be >= 1");
        (self.a1 / (t as f64).powf(self.alpha)).min(1.0)
    }

    /// Iterate-averaging step `gamma(t) = min(1, a2 / t^alpha_gamma)`.
    ///
    /// # Panics
    /// Panics if `t == 0`.
    pub fn gamma(&self, t: u32) -> f64 {
        assert!(t >= 1, "step index must be >= 1");
        (self.a2 / (t as f64).powf(self.alpha_gamma)).min(1.0)
    }

    /// Checks the convergence conditions and reports every violation by name.
    pub fn validate(&self) -> Result<(), Vec<ScheduleViolation>> {
        let mut violations = Vec::new();
        if !(self.a1 > 0.0 && self.a1.is_finite()) {
            violations.push(ScheduleViolation::A1NotPositive);
        }
        if !(self.a2 > 0.0 && self.a2.is_finite()) {
            violations.push(ScheduleViolation::A2NotPositive);
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            violations.push(ScheduleViolation::AlphaOutOfRange);
        }
        if !(self.alpha_gamma > self.alpha) {
            violations.push(ScheduleViolation::GammaRhoRatioDoesNotVanish);
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

/// Named violations of the step-size conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleViolation {
    /// `a1 <= 0` or non-finite: `rho` is not a positive sequence.
    A1NotPositive,
    /// `a2 <= 0` or non-finite: `gamma` is not a positive sequence.
    A2NotPositive,
    /// `alpha` outside (0, 1]: either `rho` does not vanish or its series
    /// converges.
    AlphaOutOfRange,
    /// `alpha_gamma <= alpha`: `gamma/rho` does not vanish.
    GammaRhoRatioDoesNotVanish,
}

impl std::fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let msg = match self {
            ScheduleViolation::A1NotPositive => "a1 not positive",
            ScheduleViolation::A2NotPositive => "a2 not positive",
            ScheduleViolation::AlphaOutOfRange => "alpha out of (0,1]",
            ScheduleViolation::GammaRhoRatioDoesNotVanish => "gamma/rho does not vanish",
        };
        f.write_str(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rho_at_t1_is_a1() {
        let s = StepSchedule::new(0.4, 0.4, 0.4, 0.45);
        assert_eq!(s.rho(1), 0.4);
        let s = StepSchedule::new(1.0, 1.0, 0.5, 0.6);
        assert_eq!(s.rho(1), 1.0);
    }

    #[test]
    fn rho_power_decay_value() {
        // 32^0.4 = 2^2 = 4 exactly, so rho = 0.1.
        let s = StepSchedule::new(0.4, 0.4, 0.4, 0.45);
        assert_relative_eq!(s.rho(32), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn gamma_at_t1_is_a2() {
        let s = StepSchedule::new(0.4, 0.4, 0.4, 0.45);
        assert_eq!(s.gamma(1), 0.4);
        let s = StepSchedule::new(1.0, 1.0, 0.5, 0.6);
        assert_eq!(s.gamma(1), 1.0);
    }

    #[test]
    fn gamma_power_decay_value() {
        // 0.9 / 100^0.35 = 0.9 / 10^0.7
        let s = StepSchedule::new(0.9, 0.9, 0.3, 0.35);
        let expected = 0.9 / 10f64.powf(0.7);
        assert_relative_eq!(s.gamma(100), expected, max_relative = 1e-12);
        assert!((s.gamma(100) - 0.1796).abs() < 5e-5);
    }

    #[test]
    #[should_panic]
    fn rho_rejects_t0() {
        StepSchedule::new(0.4, 0.4, 0.4, 0.45).rho(0);
    }

    #[test]
    #[should_panic]
    fn gamma_rejects_t0() {
        StepSchedule::new(0.4, 0.4, 0.4, 0.45).gamma(0);
    }

    #[test]
    fn validate_accepts_batch10_setting() {
        assert!(StepSchedule::new(0.6, 0.9, 0.3, 0.35).validate().is_ok());
    }

    #[test]
    fn validate_names_alpha_violation() {
        let v = StepSchedule::new(0.6, 0.9, 1.5, 1.6).validate().unwrap_err();
        assert!(v.contains(&ScheduleViolation::AlphaOutOfRange));
    }

    #[test]
    fn validate_names_ratio_violation() {
        let v = StepSchedule::new(0.6, 0.9, 0.4, 0.4).validate().unwrap_err();
        assert!(v.contains(&ScheduleViolation::GammaRhoRatioDoesNotVanish));
    }

    #[test]
    fn partial_sum_growth_matches_power_law() {
        // sum_{t<=T} t^-alpha ~ T^(1-alpha)/(1-alpha); the ratio of the sums
        // at T=1e5 and T=1e4 should be within 10% of 10^(1-alpha).
        let s = StepSchedule::new(0.6, 0.9, 0.3, 0.35);
        let mut sum_1e4 = 0.0;
        let mut sum_1e5 = 0.0;
        for t in 1u32..=100_000 {
            let r = s.rho(t);
            if t <= 10_000 {
                sum_1e4 += r;
            }
            sum_1e5 += r;
        }
        let ratio = sum_1e5 / sum_1e4;
        let theory = 10f64.powf(1.0 - s.alpha);
        assert!((ratio / theory - 1.0).abs() < 0.10, "ratio {ratio} vs {theory}");
    }

    proptest! {
        #[test]
        fn valid_schedules_decrease_and_ratio_shrinks(
            a1 in 0.05f64..1.0,
            a2 in 0.05f64..1.0,
            alpha in 0.05f64..1.0,
            extra in 0.01f64..0.5,
            t in 1u32..10_000,
        ) {
            let s = StepSchedule::new(a1, a2, alpha, alpha + extra);
            prop_assert!(s.validate().is_ok());
            prop_assert!(s.rho(t + 1) < s.rho(t));
            prop_assert!(s.gamma(t + 1) < s.gamma(t));
            prop_assert!(s.gamma(t + 1) / s.rho(t + 1) <= s.gamma(t) / s.rho(t) + 1e-15);
            prop_assert!(s.rho(t) > 0.0 && s.rho(t) <= 1.0);
            prop_assert!(s.gamma(t) > 0.0 && s.gamma(t) <= 1.0);
        }
    }
}
