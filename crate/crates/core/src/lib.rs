//! Density evolution for log cumulative production.
//!
//! Cumulative production is modelled as `Z_t = sum_{j=0..t} exp(g j + a_1 + ... + a_j)`
//! with i.i.d. noise `a_i`. The crate evolves the density of `z_t = log Z_t` on a
//! uniform grid through its exact one-step recursion, runs the mirrored recursion
//! for `y_t = log(Z_t / (Z_t - Z_{t-1}))`, and maps the latter onto the density of
//! the volatility variable `dz_t = z_t - z_{t-1}`.
//!
//! | Module         | Contents                                                        |
//! |----------------|-----------------------------------------------------------------|
//! | [`noise`]      | noise distributions (gaussian, lorentzian, tabulated)           |
//! | [`pdfgrid`]    | gridded densities, convolution, moments, quantiles, distances   |
//! | [`evolution`]  | the z / y recursions, volatility transform, steady state        |
//! | [`analytic`]   | closed-form narrow-noise reference formulas                     |
//! | [`montecarlo`] | brute-force path simulation used as an oracle                   |
//! | [`cli`]        | command-line front end                                          |

pub mod analytic;
pub mod cli;
pub mod evolution;
pub mod io;
pub mod montecarlo;
pub mod noise;
pub mod pdfgrid;

pub use analytic::Horizon;
pub use evolution::{EvolutionConfig, EvolutionTrace, VolatilityReport};
pub use montecarlo::McEnsemble;
pub use noise::{NoiseModel, NoiseSpec};
pub use pdfgrid::{GridSpec, GriddedPdf, Metric};

/// `log(1 + e^x)`, evaluated without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: `log(e^x - 1)` for `x > 0`, `-inf` at 0.
#[inline]
pub fn softplus_inv(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else if x > 1.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}
