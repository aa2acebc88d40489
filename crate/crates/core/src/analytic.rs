//! Closed-form results for narrow noise (small `sigma_a`).
//!
//! These are leading-order expressions; they serve as references for the
//! exact recursion, for sizing default grids, and for the saddle-point ratio.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("the geometric sum diverges for t = infinity unless g > 0 (g = {0})")]
    DivergentSum(f64),
    #[error("formula is singular at g = 0")]
    SingularAtZeroDrift,
    #[error("formula requires g > 0 (g = {0})")]
    NeedsPositiveDrift(f64),
    #[error("standard deviations must be non-negative")]
    NegativeSigma,
}

/// A time index that may be the `t -> infinity` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(u64),
    Infinite,
}

/// Parameters of the narrow-noise expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrowParams {
    pub g: f64,
    pub sigma_a: f64,
    pub t: Horizon,
}

impl NarrowParams {
    pub fn new(g: f64, sigma_a: f64, t: Horizon) -> Result<Self, AnalyticError> {
        if !(sigma_a >= 0.0) {
            return Err(AnalyticError::NegativeSigma);
        }
        Ok(Self { g, sigma_a, t })
    }

    /// Mean of `y_t` in the narrow limit.
    pub fn ybar(&self) -> Result<f64, AnalyticError> {
        ybar(self.g, self.t)
    }

    /// Leading-order standard deviation of `y_t`, from the variance recursion
    /// started at `sigma_0 = 0` (or its fixed point for `t = infinity`).
    pub fn sigma_y(&self) -> Result<f64, AnalyticError> {
        match self.t {
            Horizon::Infinite => sigma_y_fixed_point(self.g, self.sigma_a),
            Horizon::Finite(t) => {
                let mut s = 0.0;
                for k in 0..t {
                    s = sigma_recursion_step(s, self.sigma_a, self.g, Horizon::Finite(k))?;
                }
                Ok(s)
            }
        }
    }

    /// `Var(dz)` in the narrow, long-time limit.
    pub fn var_dz(&self) -> Result<f64, AnalyticError> {
        var_dz_saddle(self.g, self.sigma_a)
    }
}

/// `log(sum_{j=0..t} exp(-j g))`; for `t = infinity`, `-log(1 - exp(-g))`.
pub fn ybar(g: f64, t: Horizon) -> Result<f64, AnalyticError> {
    match t {
        Horizon::Infinite => {
            if g > 0.0 {
                Ok(-(-(-g).exp()).ln_1p())
            } else {
                Err(AnalyticError::DivergentSum(g))
            }
        }
        Horizon::Finite(t) => Ok(log_geometric_sum(-g, t)),
    }
}

/// `log(sum_{j=0..t} exp(r j))`, stable for either sign of `r`.
pub fn log_geometric_sum(r: f64, t: u64) -> f64 {
    let n = t as f64 + 1.0;
    if r == 0.0 {
        return n.ln();
    }
    if r < 0.0 {
        // (1 - e^{r n}) / (1 - e^{r})
        (-(r * n).exp_m1()).ln() - (-r.exp_m1()).ln()
    } else {
        // e^{r t} (1 - e^{-r n}) / (1 - e^{-r})
        r * t as f64 + (-(-r * n).exp_m1()).ln() - (-(-r).exp_m1()).ln()
    }
}

/// Leading-order `Var(log Z_t) = sigma_a^2 ((2 e^g + 1) / (1 - e^{2g}) + t)`.
///
/// This is the large-`t` form: it drops terms decaying like `e^{-g t}`, so at
/// moderate `t` it can differ substantially from the exact small-noise variance
/// (see [`var_logz_linearized`]).
pub fn var_logz_saddle(g: f64, sigma_a: f64, t: u64) -> Result<f64, AnalyticError> {
    if g == 0.0 {
        return Err(AnalyticError::SingularAtZeroDrift);
    }
    let e = g.exp();
    Ok(sigma_a * sigma_a * ((2.0 * e + 1.0) / (1.0 - e * e) + t as f64))
}

/// First-order (in `sigma_a^2`) variance of `log Z_t` at finite `t`:
/// `sigma_a^2 sum_{i=1..t} (sum_{j>=i} w_j)^2` with `w_j = e^{gj} / sum_k e^{gk}`.
pub fn var_logz_linearized(g: f64, sigma_a: f64, t: u64) -> f64 {
    let norm = log_geometric_sum(g, t);
    let mut tail = 0.0;
    let mut acc = 0.0;
    for j in (1..=t).rev() {
        tail += (g * j as f64 - norm).exp();
        acc += tail * tail;
    }
    sigma_a * sigma_a * acc
}

/// Leading-order volatility `Var(dz) = sigma_a^2 tanh(g / 2)`, valid for `g > 0`.
pub fn var_dz_saddle(g: f64, sigma_a: f64) -> Result<f64, AnalyticError> {
    if !(g > 0.0) {
        return Err(AnalyticError::NeedsPositiveDrift(g));
    }
    Ok(sigma_a * sigma_a * (0.5 * g).tanh())
}

/// `sigma_inf = sigma_a / sqrt(e^{2g} - 1)`, the stationary width of `y`.
pub fn sigma_y_fixed_point(g: f64, sigma_a: f64) -> Result<f64, AnalyticError> {
    if !(g > 0.0) {
        return Err(AnalyticError::NeedsPositiveDrift(g));
    }
    if sigma_a < 0.0 {
        return Err(AnalyticError::NegativeSigma);
    }
    Ok(sigma_a / (2.0 * g).exp_m1().sqrt())
}

/// One step of the narrow-noise width recursion for `y`:
/// `sigma_{t+1} = sqrt(sigma_t^2 + sigma_a^2) / J` with
/// `J = e^x / (e^x - 1)` the derivative of `log(e^x - 1)`.
///
/// `J` is taken at the mean of the new variable, `x = ybar(g, t + 1)`; with
/// `t = Infinite` it is taken at `ybar(g, infinity)`, where `J = e^g`.
pub fn sigma_recursion_step(
    sigma_t: f64,
    sigma_a: f64,
    g: f64,
    t: Horizon,
) -> Result<f64, AnalyticError> {
    if sigma_t < 0.0 || sigma_a < 0.0 {
        return Err(AnalyticError::NegativeSigma);
    }
    let x = match t {
        Horizon::Finite(t) => ybar(g, Horizon::Finite(t + 1))?,
        Horizon::Infinite => ybar(g, Horizon::Infinite)?,
    };
    // 1 / J = 1 - e^{-x}
    let inv_jacobian = -(-x).exp_m1();
    Ok((sigma_t * sigma_t + sigma_a * sigma_a).sqrt() * inv_jacobian)
}

/// `sigma_dz = sqrt(tanh(g / 2)) sigma_a`.
pub fn sigma_dz_narrow(g: f64, sigma_a: f64) -> Result<f64, AnalyticError> {
    Ok(var_dz_saddle(g, sigma_a)?.sqrt())
}

/// The same width reached through the transformation of the stationary `y`
/// density: `(e^g - 1) sigma_inf`, the Jacobian of `dz = -log(1 - e^{-y})`
/// evaluated at the stationary point where `dz = g`.
pub fn sigma_dz_via_fixed_point(g: f64, sigma_a: f64) -> Result<f64, AnalyticError> {
    Ok(g.exp_m1() * sigma_y_fixed_point(g, sigma_a)?)
}
