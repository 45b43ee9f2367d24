//! Recursive surrogate state maintained by the server.
//!
//! Each round the server folds freshly aggregated client statistics into a
//! convex combination with weight `rho(t)`, producing the coefficients
//! `(beta, B, C, A)` of the convex per-round objective
//!
//! ```text
//! Fbar(w) = <B, w1> + <C, w2> + tau * |w|^2      (+ A as the constant part)
//! ```
//!
//! The proximal completion terms (`-2 tau w` inside B/C, `+tau |w|^2` inside
//! A) are applied here, server-side, so uplink messages carry only
//! data-dependent sums.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{BatchStats, Dims, ModelParams};

/// Accumulators defining the surrogate. `beta1`/`beta2` are the w1/w2 slices
/// of the averaged-iterate vector; `b`/`c` are the linear coefficients; `a`
/// is the constant term used by the constrained variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    pub beta1: Array2<f64>,
    pub beta2: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    pub a: f64,
    pub t: u32,
}

impl SurrogateState {
    /// All-zero state at t = 0.
    pub fn zeros(dims: Dims) -> Self {
        Self {
            beta1: Array2::zeros((dims.j, dims.k)),
            beta2: Array2::zeros((dims.l, dims.j)),
            b: Array2::zeros((dims.j, dims.k)),
            c: Array2::zeros((dims.l, dims.j)),
            a: 0.0,
            t: 0,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.b.ncols(), self.b.nrows(), self.c.nrows())
    }

    /// New state after one unconstrained round: convex combination of the old
    /// coefficients with the fresh linearization at `omega_t`. `A` is left
    /// untouched.
    pub fn update_unconstrained(
        &self,
        rho_t: f64,
        omega_t: &ModelParams,
        agg: &AggregatedStats,
        tau: f64,
    ) -> Result<SurrogateState> {
        check_rho(rho_t)?;
        let keep = 1.0 - rho_t;
        Ok(SurrogateState {
            beta1: &self.beta1 * keep + &omega_t.w1 * rho_t,
            beta2: &self.beta2 * keep + &omega_t.w2 * rho_t,
            b: &self.b * keep + (&agg.b_w - &(&omega_t.w1 * (2.0 * tau))) * rho_t,
            c: &self.c * keep + (&agg.c_w - &(&omega_t.w2 * (2.0 * tau))) * rho_t,
            a: self.a,
            t: self.t + 1,
        })
    }

    /// Constrained-round update: the unconstrained coefficient updates plus
    /// the constant-term recursion, which completes the linearization so the
    /// surrogate reproduces the sampled cost at the expansion point.
    pub fn update_constrained(
        &self,
        rho_t: f64,
        omega_t: &ModelParams,
        agg: &AggregatedStats,
        tau: f64,
    ) -> Result<SurrogateState> {
        let mut next = self.update_unconstrained(rho_t, omega_t, agg, tau)?;
        let inner_b: f64 = agg.b_w.iter().zip(omega_t.w1.iter()).map(|(a, b)| a * b).sum();
        let inner_c: f64 = agg.c_w.iter().zip(omega_t.w2.iter()).map(|(a, b)| a * b).sum();
        let fresh = agg.a_w + tau * omega_t.norm_sq() - inner_b - inner_c;
        next.a = (1.0 - rho_t) * self.a + rho_t * fresh;
        Ok(next)
    }

    /// Value and exact gradient of `Fbar(w) + 2*lambda*<beta, w>` at `omega`.
    /// The gradient uses the canonical flat layout (w1 row-major, then w2).
    pub fn value_and_grad(
        &self,
        omega: &ModelParams,
        tau: f64,
        lambda: f64,
    ) -> (f64, Array1<f64>) {
        let dims = self.dims();
        let mut grad = Array1::zeros(dims.d());
        let mut value = tau * omega.norm_sq();
        {
            let mut it = grad.iter_mut();
            for ((bv, wv), betav) in self.b.iter().zip(omega.w1.iter()).zip(self.beta1.iter()) {
                value += bv * wv + 2.0 * lambda * betav * wv;
                *it.next().expect("grad sized to d") = bv + 2.0 * tau * wv + 2.0 * lambda * betav;
            }
            for ((cv, wv), betav) in self.c.iter().zip(omega.w2.iter()).zip(self.beta2.iter()) {
                value += cv * wv + 2.0 * lambda * betav * wv;
                *it.next().expect("grad sized to d") = cv + 2.0 * tau * wv + 2.0 * lambda * betav;
            }
        }
        (value, grad)
    }
}

fn check_rho(rho_t: f64) -> Result<()> {
    if !(rho_t > 0.0 && rho_t <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in (0, 1], got {rho_t}"
        )));
    }
    Ok(())
}

/// Server-side weighted sums of client statistics, weight `N_i / (B * N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedStats {
    pub b_w: Array2<f64>,
    pub c_w: Array2<f64>,
    pub a_w: f64,
}

/// Combines unweighted client partial sums with the dataset-size weights.
///
/// Every client must report exactly `batch_size` samples and the client sizes
/// must sum to `n_total`.
pub fn aggregate(
    client_stats: &[(BatchStats, usize)],
    n_total: usize,
    batch_size: usize,
) -> Result<AggregatedStats> {
    let first = client_stats.first().ok_or(Error::Empty("client stats"))?;
    let got: usize = client_stats.iter().map(|(_, n_i)| n_i).sum();
    if got != n_total {
        return Err(Error::WeightMismatch {
            got,
            expected: n_total,
        });
    }
    let mut b_w = Array2::zeros(first.0.b_bar.raw_dim());
    let mut c_w = Array2::zeros(first.0.c_bar.raw_dim());
    let mut a_w = 0.0;
    for (stats, n_i) in client_stats {
        if stats.count != batch_size {
            return Err(Error::BatchCountMismatch {
                got: stats.count,
                expected: batch_size,
            });
        }
        let w = *n_i as f64 / (batch_size as f64 * n_total as f64);
        b_w.scaled_add(w, &stats.b_bar);
        c_w.scaled_add(w, &stats.c_bar);
        a_w += w * stats.a_bar;
    }
    Ok(AggregatedStats { b_w, c_w, a_w })
}
