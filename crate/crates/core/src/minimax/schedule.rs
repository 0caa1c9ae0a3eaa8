use crate::error::{Error, Result};
use crate::problems::ProblemConstants;

/// Adaptive-moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// How a raw update direction becomes a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// `x ← x − η · d`.
    Plain,
    /// `x ← x − η · m̂ / (√v̂ + ε)` with bias-corrected moment averages of `d`.
    Adam(AdamParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    /// `α = K^{1/7}`, `η_u = η_w = η₀/K^{4/7}`, `η_λ = η₀^λ/K^{5/7}`.
    Theoretical { eta0: f64, eta0_lambda: f64 },
    Constant,
}

/// Penalty and step sizes for a run of `total_steps` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub total_steps: usize,
    pub alpha: f64,
    pub eta_u: f64,
    pub eta_w: f64,
    pub eta_lambda: f64,
    pub rule: UpdateRule,
}

impl Schedule {
    pub fn theoretical(total_steps: usize, eta0: f64, eta0_lambda: f64) -> Result<Self> {
        let k = total_steps as f64;
        let s = Self {
            mode: ScheduleMode::Theoretical { eta0, eta0_lambda },
            total_steps,
            alpha: k.powf(1.0 / 7.0),
            eta_u: eta0 / k.powf(4.0 / 7.0),
            eta_w: eta0 / k.powf(4.0 / 7.0),
            eta_lambda: eta0_lambda / k.powf(5.0 / 7.0),
            rule: UpdateRule::Plain,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(total_steps: usize, alpha: f64, eta_u: f64, eta_w: f64, eta_lambda: f64) -> Result<Self> {
        let s = Self {
            mode: ScheduleMode::Constant,
            total_steps,
            alpha,
            eta_u,
            eta_w,
            eta_lambda,
            rule: UpdateRule::Plain,
        };
        s.validate()?;
        Ok(s)
    }

    /// `α = 100`, `η_λ = 10⁻²`, `η_u = η_w = 10⁻⁵`, adaptive moments.
    pub fn practical(total_steps: usize) -> Result<Self> {
        Ok(Self::constant(total_steps, 100.0, 1e-5, 1e-5, 1e-2)?.with_rule(UpdateRule::Adam(AdamParams::default())))
    }

    pub fn with_rule(mut self, rule: UpdateRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidArgument("total_steps K must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("eta_u", self.eta_u),
            ("eta_w", self.eta_w),
            ("eta_lambda", self.eta_lambda),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if let UpdateRule::Adam(p) = self.rule {
            if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) || !(p.eps > 0.0) {
                return Err(Error::InvalidArgument("invalid adaptive-moment parameters".into()));
            }
        }
        Ok(())
    }

    /// Checks the step-size conditions under which the convergence rate holds:
    /// `α ≥ ℓ11/μ2`, `η₀ ≤ 8J/μ2` and `η₀/η₀^λ ≥ 6√2 κ² J`.
    pub fn check_theorem_conditions(&self, constants: &ProblemConstants, blocks: usize) -> Result<()> {
        let ScheduleMode::Theoretical { eta0, eta0_lambda } = self.mode else {
            return Err(Error::Precondition("theorem conditions apply to the theoretical schedule only".into()));
        };
        let ell11 = constants
            .ell11
            .ok_or_else(|| Error::Precondition("ℓ11 is not known for this problem".into()))?;
        let kappa = constants
            .kappa()
            .ok_or_else(|| Error::Precondition("κ is not known for this problem".into()))?;
        let j = blocks as f64;
        if self.alpha < ell11 / constants.mu2 {
            return Err(Error::Precondition(format!(
                "alpha {} < ℓ11/μ2 = {}",
                self.alpha,
                ell11 / constants.mu2
            )));
        }
        if eta0 > 8.0 * j / constants.mu2 {
            return Err(Error::Precondition(format!("eta0 {eta0} > 8J/μ2 = {}", 8.0 * j / constants.mu2)));
        }
        let ratio = 6.0 * 2f64.sqrt() * kappa * kappa * j;
        if eta0 / eta0_lambda < ratio {
            return Err(Error::Precondition(format!(
                "eta0/eta0_lambda = {} < 6√2κ²J = {ratio}",
                eta0 / eta0_lambda
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theoretical_exponents() {
        let s = Schedule::theoretical(10_000_000, 2.0, 3.0).unwrap();
        assert!((s.alpha - 10.0).abs() < 1e-12);
        assert!((s.eta_u - 2.0e-4).abs() < 1e-16);
        assert_eq!(s.eta_u, s.eta_w);
        assert!((s.eta_lambda - 3.0e-5).abs() < 1e-17);
    }

    #[test]
    fn practical_preset() {
        let s = Schedule::practical(10).unwrap();
        assert_eq!(s.alpha, 100.0);
        assert_eq!(s.eta_lambda, 1e-2);
        assert_eq!(s.eta_u, 1e-5);
        assert_eq!(s.eta_w, 1e-5);
        assert!(matches!(s.rule, UpdateRule::Adam(_)));
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(Schedule::theoretical(0, 1.0, 1.0).is_err());
        assert!(Schedule::constant(0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(Schedule::constant(5, 1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn theorem_conditions() {
        let c = ProblemConstants {
            mu2: 1.0,
            ell10: Some(1.0),
            ell11: Some(1.0),
            ell21: Some(1.0),
            ell22: Some(0.0),
        };
        let ok = Schedule::theoretical(128, 1.0, 0.1).unwrap();
        ok.check_theorem_conditions(&c, 1).unwrap();
        let too_fast = Schedule::theoretical(128, 1.0, 0.5).unwrap();
        assert!(too_fast.check_theorem_conditions(&c, 1).is_err());
        let too_big = Schedule::theoretical(128, 9.0, 0.1).unwrap();
        assert!(too_big.check_theorem_conditions(&c, 1).is_err());
    }
}
