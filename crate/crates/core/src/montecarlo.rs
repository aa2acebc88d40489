//! Direct simulation of cumulative production paths.
//!
//! Every path draws from its own ChaCha8 stream (`seed`, stream = path index),
//! so an ensemble does not depend on how the paths are split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::noise::{NoiseModel, NoiseSummary};
use crate::pdfgrid::GriddedPdf;
use crate::softplus;

/// Resamples used for bootstrap standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Per-path CSV exports are capped at this many paths.
pub const MAX_EXPORTED_PATHS: usize = 10_000;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum McError {
    #[error("invalid simulation request: {0}")]
    BadArgs(String),
    #[error("time {t} was not recorded (t_max = {t_max})")]
    TimeOutOfRange { t: usize, t_max: usize },
    #[error("non-finite log cumulative production on path {path} at t = {t}")]
    Overflow { path: usize, t: usize },
}

/// Which simulated quantity a comparison refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    /// `z_t = log Z_t`
    Z,
    /// `dz_t = z_t - z_{t-1}`
    Dz,
}

/// Simulated values of `z_t` and `dz_t` at the recorded times.
#[derive(Debug, Clone)]
pub struct McEnsemble {
    pub g: f64,
    pub noise: NoiseSummary,
    pub n_paths: usize,
    pub t_max: usize,
    pub seed: u64,
    /// recorded times, increasing
    pub times: Vec<usize>,
    /// `z[k][p]` is `z_{times[k]}` on path `p`
    z: Vec<Vec<f64>>,
    dz: Vec<Vec<f64>>,
}

/// Scalar statistics of one recorded time.
#[derive(Debug, Clone, Serialize)]
pub struct TimeSummary {
    pub t: usize,
    pub z_mean: f64,
    pub z_variance: f64,
    pub z_median: f64,
    pub dz_mean: f64,
    pub dz_variance: f64,
    pub dz_median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub g: f64,
    pub noise: NoiseSummary,
    pub n_paths: usize,
    pub t_max: usize,
    pub seed: u64,
    pub times: Vec<TimeSummary>,
}

/// A sample variance with its bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulates `n_paths` paths up to `t_max`, recording every time step.
pub fn simulate(
    g: f64,
    noise: &NoiseModel,
    t_max: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEnsemble, McError> {
    let times: Vec<usize> = (1..=t_max).collect();
    simulate_at(g, noise, t_max, n_paths, seed, &times)
}

/// Simulates `n_paths` paths up to `t_max`, recording only `times`.
///
/// Paths are accumulated in log space: with `log Q_t = g t + a_1 + ... + a_t`,
/// `dz_t = softplus(log Q_t - z_{t-1})` and `z_t = z_{t-1} + dz_t`.
pub fn simulate_at(
    g: f64,
    noise: &NoiseModel,
    t_max: usize,
    n_paths: usize,
    seed: u64,
    times: &[usize],
) -> Result<McEnsemble, McError> {
    if n_paths < 1 {
        return Err(McError::BadArgs("at least one path is required".into()));
    }
    if t_max < 1 {
        return Err(McError::BadArgs("t_max must be at least 1".into()));
    }
    if !g.is_finite() {
        return Err(McError::BadArgs("g must be finite".into()));
    }
    let mut times = times.to_vec();
    times.sort_unstable();
    times.dedup();
    if let Some(&t) = times.iter().find(|&&t| t == 0 || t > t_max) {
        return Err(McError::TimeOutOfRange { t, t_max });
    }

    let per_path: Vec<Vec<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let (mut log_q, mut z) = (0.0f64, 0.0f64);
            let mut out = Vec::with_capacity(times.len());
            let mut next = 0;
            for t in 1..=t_max {
                log_q += g + noise.draw(&mut rng);
                let dz = softplus(log_q - z);
                z += dz;
                if !z.is_finite() || !dz.is_finite() {
                    return Err(McError::Overflow { path: p, t });
                }
                if next < times.len() && times[next] == t {
                    out.push((z, dz));
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut z = vec![Vec::with_capacity(n_paths); times.len()];
    let mut dz = vec![Vec::with_capacity(n_paths); times.len()];
    for path in per_path {
        for (k, (zv, dv)) in path.into_iter().enumerate() {
            z[k].push(zv);
            dz[k].push(dv);
        }
    }
    Ok(McEnsemble {
        g,
        noise: noise.summary(),
        n_paths,
        t_max,
        seed,
        times,
        z,
        dz,
    })
}

impl McEnsemble {
    fn index(&self, t: usize) -> Result<usize, McError> {
        self.times
            .binary_search(&t)
            .map_err(|_| McError::TimeOutOfRange { t, t_max: self.t_max })
    }

    /// Values of `variable` at time `t`, one per path.
    pub fn values(&self, t: usize, variable: Variable) -> Result<&[f64], McError> {
        let k = self.index(t)?;
        Ok(match variable {
            Variable::Z => &self.z[k],
            Variable::Dz => &self.dz[k],
        })
    }

    /// Ascending copy of [`values`](Self::values), ready for KS statistics.
    pub fn sorted(&self, t: usize, variable: Variable) -> Result<Vec<f64>, McError> {
        let mut v = self.values(t, variable)?.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        Ok(v)
    }

    /// Histogram density of `variable` at `t` over `bins` equal bins on `[lo, hi]`;
    /// samples outside the range are ignored but still count towards the total.
    pub fn histogram(
        &self,
        t: usize,
        variable: Variable,
        lo: f64,
        hi: f64,
        bins: usize,
    ) -> Result<Vec<f64>, McError> {
        if !(hi > lo) || bins == 0 {
            return Err(McError::BadArgs("histogram needs lo < hi and bins > 0".into()));
        }
        let v = self.values(t, variable)?;
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0.0; bins];
        for &x in v {
            if x >= lo && x < hi {
                counts[(((x - lo) / w) as usize).min(bins - 1)] += 1.0;
            }
        }
        let norm = 1.0 / (v.len() as f64 * w);
        Ok(counts.into_iter().map(|c| c * norm).collect())
    }

    pub fn summary(&self) -> EnsembleSummary {
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let mut s = v.to_vec();
            s.sort_unstable_by(f64::total_cmp);
            let m = s.len() / 2;
            let median = if s.len() % 2 == 1 {
                s[m]
            } else {
                0.5 * (s[m - 1] + s[m])
            };
            (mean, var, median)
        };
        let times = self
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (z_mean, z_variance, z_median) = stats(&self.z[k]);
                let (dz_mean, dz_variance, dz_median) = stats(&self.dz[k]);
                TimeSummary {
                    t,
                    z_mean,
                    z_variance,
                    z_median,
                    dz_mean,
                    dz_variance,
                    dz_median,
                }
            })
            .collect();
        EnsembleSummary {
            g: self.g,
            noise: self.noise.clone(),
            n_paths: self.n_paths,
            t_max: self.t_max,
            seed: self.seed,
            times,
        }
    }
}

fn mean_and_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Sample variance of `v` and its bootstrap standard error over
/// [`BOOTSTRAP_RESAMPLES`] resamples drawn deterministically from `seed`.
pub fn bootstrap_variance(v: &[f64], seed: u64) -> VarianceEstimate {
    let (mean, variance) = mean_and_variance(v);
    let n = v.len();
    let reps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|r| {
            let mut rng = path_rng(seed ^ 0x9e37_79b9_7f4a_7c15, r);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x = v[rng.random_range(0..n)] - mean;
                s += x;
                s2 += x * x;
            }
            let nf = n as f64;
            if n > 1 {
                (s2 - s * s / nf) / (nf - 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let (_, boot_var) = mean_and_variance(&reps);
    VarianceEstimate {
        mean,
        variance,
        std_error: boot_var.sqrt(),
    }
}

/// Variance of `dz_t` across paths, with a bootstrap standard error.
pub fn empirical_volatility(e: &McEnsemble, t: usize) -> Result<VarianceEstimate, McError> {
    let v = e.values(t, Variable::Dz)?;
    Ok(bootstrap_variance(v, e.seed.wrapping_add(t as u64)))
}

/// Kolmogorov-Smirnov distance between the simulated `variable` at `t` and a
/// gridded density; see [`ks_against`].
pub fn empirical_cdf_distance(
    e: &McEnsemble,
    t: usize,
    p: &GriddedPdf,
    variable: Variable,
) -> Result<f64, McError> {
    Ok(ks_against(&e.sorted(t, variable)?, p))
}

/// Largest difference between the empirical CDF of `sorted` (ascending) and the
/// model CDF at the cell edges `x_i + h/2` of `p`'s grid.
///
/// The model CDF at an edge is `(1 - truncated_mass)` times the normalized mass
/// of the cells below it; the truncated mass is taken to lie above the grid.
/// Cell edges are where the evolution engine knows the mass exactly, so the
/// statistic does not depend on how the density varies inside a cell.
pub fn ks_against(sorted: &[f64], p: &GriddedPdf) -> f64 {
    let grid = p.grid();
    let n = sorted.len() as f64;
    let kept = 1.0 - p.truncated_mass();
    let total = p.mass();
    let h = grid.step();
    let mut acc = 0.0;
    let mut below = sorted.partition_point(|&x| x < grid.x_min);
    let mut d = (below as f64 / n).abs();
    for i in 0..grid.n_points {
        acc += grid.weight(i) * p.values()[i];
        let edge = if i + 1 == grid.n_points {
            grid.x_max
        } else {
            grid.x(i) + 0.5 * h
        };
        while below < sorted.len() && sorted[below] <= edge {
            below += 1;
        }
        let model = kept * acc / total;
        d = f64::max(d, (model - below as f64 / n).abs());
    }
    d
}

/// Largest relative deviation, over `n_paths` paths and all `t <= t_max`, between
/// `Y_t = Z_t / (Z_t - Z_{t-1})` computed from a simulated path and the
/// reversed-time sum `sum_{j=0..t} e^{-g (t-j)} e^{-a_{j+1} - ... - a_t}`.
pub fn reversed_sum_identity(
    g: f64,
    noise: &NoiseModel,
    t_max: usize,
    n_paths: usize,
    seed: u64,
) -> Result<f64, McError> {
    if n_paths < 1 || t_max < 1 {
        return Err(McError::BadArgs("need at least one path and one step".into()));
    }
    let worst = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let a: Vec<f64> = (0..t_max).map(|_| noise.draw(&mut rng)).collect();
            // the path, as simulated
            let (mut log_q, mut z) = (0.0f64, 0.0f64);
            // prefix[j] = a_1 + ... + a_j
            let mut prefix = vec![0.0; t_max + 1];
            let mut worst = 0.0f64;
            for t in 1..=t_max {
                log_q += g + a[t - 1];
                prefix[t] = prefix[t - 1] + a[t - 1];
                let x = log_q - z;
                let dz = softplus(x);
                z += dz;
                // log Y_t = -log(1 - e^{-dz}); for dz below ~1e-13 this is
                // -log(dz) to rounding, and dz itself may underflow
                let log_y_path = if x < -30.0 {
                    -x
                } else {
                    -(-(-dz).exp_m1()).ln()
                };
                let exps: Vec<f64> = (0..=t)
                    .map(|j| -g * (t - j) as f64 - (prefix[t] - prefix[j]))
                    .collect();
                let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_y_sum = top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
                worst = worst.max((log_y_path - log_y_sum).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    // |log a - log b| bounds the relative difference to first order
    Ok(worst.exp_m1())
}
