//! Closed-form per-round minimizers of the surrogate problems.
//!
//! The unconstrained round minimizes `Fbar(w) + 2*lambda*<beta, w>`, a
//! strongly convex quadratic whose stationary point is explicit. The
//! constrained round minimizes `|w|^2 + c*s` subject to
//! `Fbar(w) + A - U <= s, s >= 0`, a single-constraint QCQP whose KKT system
//! reduces to a scalar dual variable `nu` with a closed-form clamp expression.
//! A bisection search on the dual derivative is provided as an independent
//! test oracle; it is never used in the training path.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::surrogate::SurrogateState;

/// Output of a constrained round: the minimizer, the optimal slack, and the
/// dual variable of the surrogate constraint.
#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub omega_bar: ModelParams,
    pub slack: f64,
    pub nu: f64,
}

impl ConstrainedSolution {
    /// Penalized objective `|w|^2 + c*s`.
    pub fn objective(&self, c: f64) -> f64 {
        self.omega_bar.norm_sq() + c * self.slack
    }
}

/// Minimizer of the unconstrained surrogate:
/// `w1 = -(B + 2*lambda*beta1) / (2*tau)`, likewise for `w2`.
pub fn solve_unconstrained(
    state: &SurrogateState,
    lambda: f64,
    tau: f64,
) -> Result<ModelParams> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let w1 = (&state.b + &(&state.beta1 * (2.0 * lambda))) * (-1.0 / (2.0 * tau));
    let w2 = (&state.c + &(&state.beta2 * (2.0 * lambda))) * (-1.0 / (2.0 * tau));
    ModelParams::new(w1, w2)
}

/// Closed-form dual variable of the constrained round.
///
/// `b` is the squared norm of the linear coefficients, `u` the cost ceiling,
/// `a` the surrogate constant. Returns `clamp((sqrt(b/(b+4*tau*(u-a)))-1)/tau, 0, c)`
/// when the discriminant is positive and `c` otherwise.
pub fn dual_nu(b: f64, tau: f64, u: f64, a: f64, c: f64) -> f64 {
    let disc = b + 4.0 * tau * (u - a);
    if disc > 0.0 {
        let nu = ((b / disc).sqrt() - 1.0) / tau;
        nu.clamp(0.0, c)
    } else {
        c
    }
}

/// Squared norm of the surrogate's linear coefficients.
fn coeff_norm_sq(state: &SurrogateState) -> f64 {
    state.b.iter().map(|v| v * v).sum::<f64>() + state.c.iter().map(|v| v * v).sum::<f64>()
}

/// Surrogate constraint value `Fbar(w) + A - U` at `omega`.
pub fn constraint_value(state: &SurrogateState, omega: &ModelParams, tau: f64, u: f64) -> f64 {
    let inner_b: f64 = state.b.iter().zip(omega.w1.iter()).map(|(a, b)| a * b).sum();
    let inner_c: f64 = state.c.iter().zip(omega.w2.iter()).map(|(a, b)| a * b).sum();
    inner_b + inner_c + tau * omega.norm_sq() + state.a - u
}

fn check_tau_c(tau: f64, c: f64) -> Result<()> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if c <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty c must be positive, got {c}"
        )));
    }
    Ok(())
}

fn primal_from_nu(state: &SurrogateState, tau: f64, nu: f64) -> ModelParams {
    let scale = -nu / (2.0 * (1.0 + nu * tau));
    ModelParams::new(&state.b * scale, &state.c * scale).expect("state shapes are consistent")
}

fn solution_from_nu(state: &SurrogateState, tau: f64, u: f64, nu: f64) -> ConstrainedSolution {
    let omega_bar = primal_from_nu(state, tau, nu);
    let slack = constraint_value(state, &omega_bar, tau, u).max(0.0);
    ConstrainedSolution {
        omega_bar,
        slack,
        nu,
    }
}

/// KKT closed-form solution of the constrained round.
///
/// When the coefficients vanish the primal point is zero for any dual value;
/// `nu` is then set to 0 if the zero point is feasible and `c` otherwise.
pub fn solve_constrained(
    state: &SurrogateState,
    tau: f64,
    c: f64,
    u: f64,
) -> Result<ConstrainedSolution> {
    check_tau_c(tau, c)?;
    let b = coeff_norm_sq(state);
    let nu = if b == 0.0 {
        if state.a <= u {
            0.0
        } else {
            c
        }
    } else {
        dual_nu(b, tau, u, state.a, c)
    };
    Ok(solution_from_nu(state, tau, u, nu))
}

/// Independent validation oracle: maximizes the one-dimensional concave dual
/// `g(nu) = -nu^2*b/(4*(1+nu*tau)) + nu*(A-U)` over `[0, c]` by bisection on
/// its derivative, refined well past 1e-12 in `nu`, then recovers the primal
/// point. Never used in the training path.
pub fn oracle_solve(
    state: &SurrogateState,
    tau: f64,
    c: f64,
    u: f64,
) -> Result<ConstrainedSolution> {
    check_tau_c(tau, c)?;
    let b = coeff_norm_sq(state);
    // g'(nu); decreasing in nu by concavity of the dual
    let slope = |nu: f64| {
        let denom = 1.0 + nu * tau;
        -b * (2.0 * nu + nu * nu * tau) / (4.0 * denom * denom) + (state.a - u)
    };
    let nu = if slope(0.0) <= 0.0 {
        0.0
    } else if slope(c) >= 0.0 {
        c
    } else {
        let (mut lo, mut hi) = (0.0f64, c);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(solution_from_nu(state, tau, u, nu))
}

/// Residuals of the four KKT conditions for a constrained solution.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `|2*w + nu*(coeffs + 2*tau*w)|` relative to `1 + |w|`.
    pub stationarity: f64,
    /// Positive part of `constraint - slack` (primal feasibility).
    pub primal: f64,
    /// Distance of `nu` from `[0, c]`.
    pub dual: f64,
    /// `max(|nu*(constraint - slack)|, |(c - nu)*slack|)`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Evaluates the KKT residuals of a candidate constrained solution.
pub fn kkt_residuals(
    state: &SurrogateState,
    tau: f64,
    c: f64,
    u: f64,
    sol: &ConstrainedSolution,
) -> KktResiduals {
    let nu = sol.nu;
    let mut stat_sq = 0.0;
    for (w, coef) in sol
        .omega_bar
        .w1
        .iter()
        .zip(state.b.iter())
        .chain(sol.omega_bar.w2.iter().zip(state.c.iter()))
    {
        let r = 2.0 * w + nu * (coef + 2.0 * tau * w);
        stat_sq += r * r;
    }
    let omega_norm = sol.omega_bar.norm_sq().sqrt();
    let constraint = constraint_value(state, &sol.omega_bar, tau, u);
    KktResiduals {
        stationarity: stat_sq.sqrt() / (1.0 + omega_norm),
        primal: (constraint - sol.slack).max(0.0).max(-sol.slack),
        dual: (-nu).max(nu - c).max(0.0),
        complementarity: (nu * (constraint - sol.slack))
            .abs()
            .max(((c - nu) * sol.slack).abs()),
    }
}
