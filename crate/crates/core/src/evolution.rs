//! The one-step recursions for `z_t = log Z_t` and `y_t = log(Z_t / (Z_t - Z_{t-1}))`,
//! the volatility transform onto `dz_t = z_t - z_{t-1}`, and steady-state detection.
//!
//! # Discretization
//!
//! One step is `z' = softplus(g + u)` with `u = a + z` distributed as the
//! convolution of the current density with the noise. Rather than sampling the
//! warped density pointwise, every output node receives the probability mass of
//! its trapezoid cell, `[x_i - h/2, x_i + h/2]` (half cells at the ends), divided
//! by the cell width. The mass comes from the cumulative distribution of `u`,
//! which is exact for the discrete convolution. This keeps the integrable
//! singularity of the warp Jacobian at `x = 0` in the first cell, conserves mass
//! to rounding, and turns a spike input into a spike output.
//!
//! Grids start at `x_min = 0`; mass that lands below a positive `x_min` is folded
//! into the first node. Mass above `x_max` is lost and accounted in
//! `truncated_mass`.
//!
//! The y recursion is the same operator with `g -> -g` and mirrored noise. Since
//! `-log(1 - e^{-x})` maps `softplus(w)` to `softplus(-w)`, the volatility after
//! a y step is `dz = softplus(-(g_eff + u))` for the same `u`; its density is
//! produced alongside each y step from the same cumulative distribution.
//! [`volatility_pdf`] performs the transform from a stored y density instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{self, log_geometric_sum, AnalyticError};
use crate::noise::{NoiseModel, NoiseSummary};
use crate::pdfgrid::{
    convolve_direct, FftConvolver, discretize_noise, GridError, GridSpec, GriddedPdf, Metric, Moments,
    NoiseKernel,
};
use crate::{softplus, softplus_inv};

/// Probabilities reported for every recorded density.
pub const QUANTILE_PROBS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
/// Default points for light-tailed noise.
pub const DEFAULT_POINTS: usize = 8192;
/// Default points for heavy-tailed noise.
pub const DEFAULT_POINTS_HEAVY: usize = 32768;
/// Largest default grid.
pub const MAX_DEFAULT_POINTS: usize = 1 << 16;
/// Target step of default grids.
pub const DEFAULT_STEP: f64 = 0.005;
/// Horizon used when a steady state is sought.
pub const DEFAULT_STEADY_HORIZON: usize = 5000;

const DIRECT_KERNEL_LEN: usize = 32;

#[derive(Error, Debug)]
pub enum EvolutionError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("mass defect {defect:.3e} at step {t} exceeds {limit:.1e}; the grid is under-resolved or too narrow")]
    MassDefect { t: usize, defect: f64, limit: f64 },
    #[error("grid domain must satisfy 0 <= x_min < x_max (got [{0}, {1}])")]
    BadDomain(f64, f64),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("no steady state within {horizon} steps (last L1 change {last_change:.3e}, tolerance {tol:.1e})")]
    NotConverged {
        horizon: usize,
        last_change: f64,
        tol: f64,
    },
    #[error("a volatility steady state requires g > 0 (g = {0})")]
    NonPositiveDrift(f64),
}

/// Which of the two recursions a run follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recursion {
    /// `z_t = log Z_t`
    Z,
    /// `y_t = log(Z_t / (Z_t - Z_{t-1}))`
    Y,
}

/// Which densities a trace keeps in memory. Summaries are kept for every step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorePolicy {
    All,
    Steps(Vec<usize>),
    Final,
}

impl StorePolicy {
    fn keeps(&self, t: usize) -> bool {
        match self {
            StorePolicy::All => true,
            StorePolicy::Steps(ts) => ts.contains(&t),
            StorePolicy::Final => false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionConfig {
    pub g: f64,
    #[serde(serialize_with = "serialize_noise")]
    pub noise: NoiseModel,
    pub grid: GridSpec,
    pub horizon: usize,
    /// L1 change between successive densities that declares a steady state.
    pub convergence_tol: f64,
    /// stop at the first step whose change is below `convergence_tol`
    pub stop_on_convergence: bool,
    /// largest admissible mass lost in one step
    pub max_step_defect: f64,
    /// noise mass that the convolution kernel may ignore
    pub tail_tol: f64,
    /// grid for the volatility densities of a y run; `None` disables them
    pub dz_grid: Option<GridSpec>,
    pub store: StorePolicy,
}

fn serialize_noise<S: serde::Serializer>(n: &NoiseModel, s: S) -> Result<S::Ok, S::Error> {
    n.summary().serialize(s)
}

impl EvolutionConfig {
    pub fn new(g: f64, noise: NoiseModel, grid: GridSpec, horizon: usize) -> Self {
        Self {
            g,
            noise,
            grid,
            horizon,
            convergence_tol: 1e-8,
            stop_on_convergence: true,
            max_step_defect: 1e-3,
            tail_tol: 1e-12,
            dz_grid: None,
            store: StorePolicy::All,
        }
    }

    /// Configuration on the default grid of `recursion`; y runs also get the
    /// default volatility grid.
    pub fn with_default_grid(
        recursion: Recursion,
        g: f64,
        noise: NoiseModel,
        horizon: usize,
    ) -> Result<Self, EvolutionError> {
        let grid = default_grid(recursion, g, &noise, horizon)?;
        let mut cfg = Self::new(g, noise, grid, horizon);
        if recursion == Recursion::Y {
            cfg.dz_grid = Some(default_dz_grid(g, &cfg.noise)?);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        if self.horizon < 1 {
            return Err(EvolutionError::BadConfig("horizon must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(EvolutionError::BadConfig("convergence_tol must be positive".into()));
        }
        if !(self.max_step_defect > 0.0) || !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(EvolutionError::BadConfig("tolerances must lie in (0, 1)".into()));
        }
        if !self.g.is_finite() {
            return Err(EvolutionError::BadConfig("g must be finite".into()));
        }
        for grid in std::iter::once(&self.grid).chain(self.dz_grid.as_ref()) {
            if !(grid.x_min >= 0.0 && grid.x_max > grid.x_min) {
                return Err(EvolutionError::BadDomain(grid.x_min, grid.x_max));
            }
        }
        Ok(())
    }
}

/// Scalar summary of one density.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub moments: Moments,
    /// values at [`QUANTILE_PROBS`]
    pub quantiles: Vec<f64>,
    pub truncated_mass: f64,
    /// fraction of the incoming mass lost in this step, before renormalization
    pub defect: f64,
    /// L1 change from the previous step (mean-centred for z); absent at t = 1
    pub l1_change: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionTrace {
    pub recursion: Recursion,
    pub g: f64,
    pub grid: GridSpec,
    pub records: Vec<StepRecord>,
    /// first step whose L1 change fell below the tolerance
    pub converged_at: Option<usize>,
    #[serde(skip)]
    pub densities: Vec<(usize, GriddedPdf)>,
    pub dz_grid: Option<GridSpec>,
    /// volatility summaries of a y run, one per step
    pub dz_records: Vec<StepRecord>,
    #[serde(skip)]
    pub dz_densities: Vec<(usize, GriddedPdf)>,
}

impl EvolutionTrace {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn density(&self, t: usize) -> Option<&GriddedPdf> {
        self.densities.iter().find(|(s, _)| *s == t).map(|(_, p)| p)
    }

    pub fn dz_density(&self, t: usize) -> Option<&GriddedPdf> {
        self.dz_densities.iter().find(|(s, _)| *s == t).map(|(_, p)| p)
    }

    pub fn final_density(&self) -> Option<&GriddedPdf> {
        self.densities.last().map(|(_, p)| p)
    }

    pub fn final_dz_density(&self) -> Option<&GriddedPdf> {
        self.dz_densities.last().map(|(_, p)| p)
    }
}

/// Cumulative distribution of the pre-warp variable `u`.
trait Cumulative {
    /// Mass strictly below `u`.
    fn eval(&self, u: f64) -> f64;
    fn total(&self) -> f64;
}

/// Noise CDF, used for the first step where the input is an exact point mass at 0.
struct NoiseCumulative<'a>(&'a NoiseModel);

impl Cumulative for NoiseCumulative<'_> {
    fn eval(&self, u: f64) -> f64 {
        self.0.cdf(u)
    }
    fn total(&self) -> f64 {
        1.0
    }
}

/// Node masses spread uniformly over their cells `[u_k - h/2, u_k + h/2]`,
/// plus an atom at `-inf`.
struct MassCumulative {
    start: f64,
    h: f64,
    masses: Vec<f64>,
    cum: Vec<f64>,
}

impl MassCumulative {
    fn new(first_node: f64, h: f64, masses: Vec<f64>, atom: f64) -> Self {
        let mut cum = Vec::with_capacity(masses.len() + 1);
        let mut acc = atom;
        cum.push(acc);
        for m in &masses {
            acc += m;
            cum.push(acc);
        }
        Self {
            start: first_node - 0.5 * h,
            h,
            masses,
            cum,
        }
    }
}

impl Cumulative for MassCumulative {
    fn eval(&self, u: f64) -> f64 {
        if !(u > self.start) {
            return self.cum[0];
        }
        let s = (u - self.start) / self.h;
        let k = s as usize;
        if k >= self.masses.len() {
            return *self.cum.last().unwrap();
        }
        self.cum[k] + (s - k as f64) * self.masses[k]
    }
    fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }
}

/// Upper edges of the trapezoid cells of `grid`; the last is `x_max`.
fn cell_edges(grid: &GridSpec) -> Vec<f64> {
    let h = grid.step();
    (0..grid.n_points)
        .map(|i| {
            if i + 1 == grid.n_points {
                grid.x_max
            } else {
                grid.x(i) + 0.5 * h
            }
        })
        .collect()
}

fn masses_to_pdf(grid: &GridSpec, masses: Vec<f64>) -> Result<GriddedPdf, GridError> {
    let values = masses
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.max(0.0) / grid.weight(i))
        .collect();
    GriddedPdf::from_values(*grid, values, 0.0)
}

/// Unnormalized output of one step.
struct Pushed {
    pdf: GriddedPdf,
    /// fraction of incoming mass not represented on the grid
    defect: f64,
}

/// Maps `u` onto the forward grid through `x = softplus(g_eff + u)`.
struct ForwardMap {
    grid: GridSpec,
    /// `u` at each upper cell edge
    u_edges: Vec<f64>,
}

impl ForwardMap {
    fn new(grid: &GridSpec, g_eff: f64) -> Self {
        let u_edges = cell_edges(grid)
            .into_iter()
            .map(|e| softplus_inv(e) - g_eff)
            .collect();
        Self {
            grid: *grid,
            u_edges,
        }
    }

    fn push(&self, c: &impl Cumulative, input_mass: f64) -> Result<Pushed, GridError> {
        let mut prev = 0.0;
        let masses = self
            .u_edges
            .iter()
            .map(|&u| {
                let cu = c.eval(u);
                let m = cu - prev;
                prev = cu;
                m
            })
            .collect();
        Ok(Pushed {
            pdf: masses_to_pdf(&self.grid, masses)?,
            defect: (1.0 - prev / input_mass).max(0.0),
        })
    }
}

/// Maps `u` onto the volatility grid through `dz = softplus(-(g_eff + u))`.
struct VolatilityMap {
    grid: GridSpec,
    u_edges: Vec<f64>,
}

impl VolatilityMap {
    fn new(grid: &GridSpec, g_eff: f64) -> Self {
        let u_edges = cell_edges(grid)
            .into_iter()
            .map(|e| -softplus_inv(e) - g_eff)
            .collect();
        Self {
            grid: *grid,
            u_edges,
        }
    }

    fn push(&self, c: &impl Cumulative, input_mass: f64) -> Result<Pushed, GridError> {
        let total = c.total();
        let mut prev = total;
        let masses = self
            .u_edges
            .iter()
            .map(|&u| {
                let cu = c.eval(u);
                let m = prev - cu;
                prev = cu;
                m
            })
            .collect();
        Ok(Pushed {
            pdf: masses_to_pdf(&self.grid, masses)?,
            defect: (1.0 - (total - prev) / input_mass).max(0.0),
        })
    }
}

/// The fixed one-step operator of a run: discretized noise, cached transform,
/// and the precomputed cell edges of the output grids.
struct StepOperator {
    grid: GridSpec,
    kernel: NoiseKernel,
    /// kernel mass below its first cell that is certain to land in the first
    /// output cell; it is carried as an atom rather than lost
    atom_fraction: f64,
    fft: Option<FftConvolver>,
    forward: ForwardMap,
    volatility: Option<VolatilityMap>,
}

impl StepOperator {
    fn new(
        grid: &GridSpec,
        g_eff: f64,
        noise: &NoiseModel,
        tail_tol: f64,
        dz_grid: Option<&GridSpec>,
    ) -> Self {
        let h = grid.step();
        let forward = ForwardMap::new(grid, g_eff);
        let volatility = dz_grid.map(|d| VolatilityMap::new(d, g_eff));

        // range of u that must be resolved
        let mut u_lo = forward.u_edges[0];
        let mut u_hi = *forward.u_edges.last().unwrap();
        if let Some(v) = &volatility {
            u_lo = u_lo.min(*v.u_edges.last().unwrap());
            u_hi = u_hi.max(v.u_edges[0]);
        }
        let need_lo = u_lo - grid.x_max - h;
        let need_hi = u_hi - grid.x_min + h;
        let (tol_lo, tol_hi) = noise.tail_bounds(tail_tol);
        let lag_lo = tol_lo.max(need_lo);
        let lag_hi = tol_hi.min(need_hi).max(lag_lo);
        let kernel = discretize_noise(noise, h, lag_lo, lag_hi);
        // when the left limit comes from the needed range, every clipped lag
        // sends u below u_lo
        let atom_fraction = if need_lo >= tol_lo {
            kernel.left_clipped
        } else {
            0.0
        };
        let fft = (kernel.weights.len() > DIRECT_KERNEL_LEN)
            .then(|| FftConvolver::new(&kernel.weights, grid.n_points));
        Self {
            grid: *grid,
            kernel,
            atom_fraction,
            fft,
            forward,
            volatility,
        }
    }

    fn cumulative(&mut self, p: &GriddedPdf) -> (MassCumulative, f64) {
        let masses: Vec<f64> = (0..self.grid.n_points)
            .map(|i| self.grid.weight(i) * p.values()[i])
            .collect();
        let input_mass: f64 = masses.iter().sum();
        let conv = match &mut self.fft {
            Some(f) => f.apply(&masses),
            None => convolve_direct(&masses, &self.kernel.weights),
        };
        let h = self.grid.step();
        let out: Vec<f64> = conv.into_iter().map(|v| (v * h).max(0.0)).collect();
        let first = self.grid.x_min + self.kernel.first_lag as f64 * h;
        (
            MassCumulative::new(first, h, out, self.atom_fraction * input_mass),
            input_mass,
        )
    }

    fn first(&self, noise: &NoiseModel) -> Result<(Pushed, Option<Pushed>), GridError> {
        let c = NoiseCumulative(noise);
        let main = self.forward.push(&c, 1.0)?;
        let dz = match &self.volatility {
            Some(v) => Some(v.push(&c, 1.0)?),
            None => None,
        };
        Ok((main, dz))
    }

    fn step(&mut self, p: &GriddedPdf) -> Result<(Pushed, Option<Pushed>), GridError> {
        let (c, m) = self.cumulative(p);
        let main = self.forward.push(&c, m)?;
        let dz = match &self.volatility {
            Some(v) => Some(v.push(&c, m)?),
            None => None,
        };
        Ok((main, dz))
    }
}

fn finish(
    pushed: Pushed,
    t: usize,
    prior_truncated: f64,
    limit: f64,
) -> Result<GriddedPdf, EvolutionError> {
    if pushed.defect > limit {
        return Err(EvolutionError::MassDefect {
            t,
            defect: pushed.defect,
            limit,
        });
    }
    let tau = 1.0 - (1.0 - prior_truncated) * (1.0 - pushed.defect);
    Ok(pushed.pdf.normalize()?.with_truncated_mass(tau))
}

fn summarize(
    p: &GriddedPdf,
    t: usize,
    defect: f64,
    l1_change: Option<f64>,
) -> Result<StepRecord, GridError> {
    Ok(StepRecord {
        t,
        moments: p.moments(),
        quantiles: p.quantiles(&QUANTILE_PROBS)?,
        truncated_mass: p.truncated_mass(),
        defect,
        l1_change,
    })
}

/// The density of `z_1 = log(1 + e^{g + a})`, i.e. one step applied to the
/// exact point mass at 0.
pub fn init_first_step(
    noise: &NoiseModel,
    g: f64,
    grid: &GridSpec,
) -> Result<GriddedPdf, EvolutionError> {
    init_first_step_with_defect(noise, g, grid, 1e-3).map(|(p, _)| p)
}

/// As [`init_first_step`], also returning the pre-normalization mass defect.
pub fn init_first_step_with_defect(
    noise: &NoiseModel,
    g: f64,
    grid: &GridSpec,
    max_defect: f64,
) -> Result<(GriddedPdf, f64), EvolutionError> {
    check_domain(grid)?;
    let pushed = ForwardMap::new(grid, g).push(&NoiseCumulative(noise), 1.0)?;
    let defect = pushed.defect;
    Ok((finish(pushed, 1, 0.0, max_defect)?, defect))
}

/// One application of the recursion `z' = log(1 + e^{g + a + z})` to a density
/// on a grid starting at or above 0. The output lives on the input grid.
pub fn warp_step(p: &GriddedPdf, noise: &NoiseModel, g: f64) -> Result<GriddedPdf, EvolutionError> {
    check_domain(p.grid())?;
    let mut op = StepOperator::new(p.grid(), g, noise, 1e-12, None);
    let (pushed, _) = op.step(p)?;
    finish(pushed, 1, p.truncated_mass(), 1e-3)
}

fn check_domain(grid: &GridSpec) -> Result<(), EvolutionError> {
    if !(grid.x_min >= 0.0 && grid.x_max > grid.x_min) {
        return Err(EvolutionError::BadDomain(grid.x_min, grid.x_max));
    }
    Ok(())
}

/// Runs the z recursion from `z_0 = 0`.
pub fn evolve_z(config: &EvolutionConfig) -> Result<EvolutionTrace, EvolutionError> {
    run(config, Recursion::Z)
}

/// Runs the y recursion from `y_0 = 0`: the z machinery with `g -> -g` and
/// mirrored noise. With `dz_grid` set, the volatility density of each step is
/// produced as well.
pub fn evolve_y(config: &EvolutionConfig) -> Result<EvolutionTrace, EvolutionError> {
    run(config, Recursion::Y)
}

fn run(config: &EvolutionConfig, recursion: Recursion) -> Result<EvolutionTrace, EvolutionError> {
    config.validate()?;
    let (g_eff, noise) = match recursion {
        Recursion::Z => (config.g, config.noise.clone()),
        Recursion::Y => (-config.g, config.noise.mirror()),
    };
    let dz_grid = match recursion {
        Recursion::Y => config.dz_grid.as_ref(),
        Recursion::Z => None,
    };
    let mut op = StepOperator::new(&config.grid, g_eff, &noise, config.tail_tol, dz_grid);
    let mut trace = EvolutionTrace {
        recursion,
        g: config.g,
        grid: config.grid,
        records: Vec::new(),
        converged_at: None,
        densities: Vec::new(),
        dz_grid: dz_grid.copied(),
        dz_records: Vec::new(),
        dz_densities: Vec::new(),
    };

    let mut prev: Option<GriddedPdf> = None;
    let mut prev_dz: Option<GriddedPdf> = None;
    for t in 1..=config.horizon {
        let (main, dz) = match &prev {
            None => op.first(&noise)?,
            Some(p) => op.step(p)?,
        };
        let prior = prev.as_ref().map_or(0.0, |p| p.truncated_mass());
        let defect = main.defect;
        let next = finish(main, t, prior, config.max_step_defect)?;

        let change = match &prev {
            None => None,
            Some(p) => Some(match recursion {
                Recursion::Z => next.shifted_l1(p, next.mean() - p.mean()),
                Recursion::Y => next.distance(p, Metric::L1)?,
            }),
        };
        trace.records.push(summarize(&next, t, defect, change)?);

        if let Some(dz) = dz {
            let dz_defect = dz.defect;
            let dz_pdf = finish(dz, t, prior, config.max_step_defect)?;
            let dz_change = match &prev_dz {
                Some(q) => Some(dz_pdf.distance(q, Metric::L1)?),
                None => None,
            };
            trace.dz_records.push(summarize(&dz_pdf, t, dz_defect, dz_change)?);
            if config.store.keeps(t) {
                trace.dz_densities.push((t, dz_pdf.clone()));
            }
            prev_dz = Some(dz_pdf);
        }

        if config.store.keeps(t) {
            trace.densities.push((t, next.clone()));
        }
        let converged = change.is_some_and(|c| c < config.convergence_tol);
        if converged && trace.converged_at.is_none() {
            trace.converged_at = Some(t);
        }
        prev = Some(next);
        if converged && config.stop_on_convergence {
            break;
        }
    }

    let last_t = trace.records.len();
    if let Some(p) = prev {
        if trace.densities.last().map(|(t, _)| *t) != Some(last_t) {
            trace.densities.push((last_t, p));
        }
    }
    if let Some(q) = prev_dz {
        if trace.dz_densities.last().map(|(t, _)| *t) != Some(last_t) {
            trace.dz_densities.push((last_t, q));
        }
    }
    Ok(trace)
}

/// Density of `dz = -log(1 - e^{-y})` from a density of `y`, on `grid`
/// (typically [`default_dz_grid`]).
///
/// Cell masses are read off the piecewise-linear CDF of `p_y`, since
/// `dz <= x` exactly when `y >= -log(1 - e^{-x})`.
pub fn volatility_pdf(p_y: &GriddedPdf, grid: &GridSpec) -> Result<GriddedPdf, EvolutionError> {
    volatility_pdf_with_defect(p_y, grid, 1e-3).map(|(p, _)| p)
}

pub fn volatility_pdf_with_defect(
    p_y: &GriddedPdf,
    grid: &GridSpec,
    max_defect: f64,
) -> Result<(GriddedPdf, f64), EvolutionError> {
    check_domain(p_y.grid())?;
    check_domain(grid)?;
    let cdf = p_y.cdf();
    let total = cdf.total();
    let mut prev = total;
    let masses = cell_edges(grid)
        .into_iter()
        .map(|e| {
            let c = cdf.eval(volatility_to_y(e));
            let m = prev - c;
            prev = c;
            m
        })
        .collect();
    let pushed = Pushed {
        pdf: masses_to_pdf(grid, masses)?,
        defect: (1.0 - (total - prev) / total).max(0.0),
    };
    let defect = pushed.defect;
    Ok((finish(pushed, 0, p_y.truncated_mass(), max_defect)?, defect))
}

/// `-log(1 - e^{-x})`, an involution of the positive half-line.
pub fn volatility_to_y(x: f64) -> f64 {
    if x <= 0.0 {
        f64::INFINITY
    } else {
        -(-(-x).exp_m1()).ln()
    }
}

/// Pointwise form of the z step: `[1 / (1 - e^{-x})] c(log(e^x - 1) - g)` at the
/// nodes of `grid`, with `c` an already convolved density. A node at 0 is
/// evaluated at `h/2`. The result is not normalized.
pub fn warp_pointwise(conv: &GriddedPdf, g: f64, grid: &GridSpec) -> Vec<f64> {
    let h = grid.step();
    grid.points()
        .into_iter()
        .map(|x| {
            let x = if x <= 0.0 { 0.5 * h } else { x };
            conv.interp_at(softplus_inv(x) - g) / -(-x).exp_m1()
        })
        .collect()
}

/// Pointwise form of the volatility transform: `p_y(-log(1 - e^{-x})) / (e^x - 1)`.
pub fn volatility_pointwise(p_y: &GriddedPdf, grid: &GridSpec) -> Vec<f64> {
    let h = grid.step();
    grid.points()
        .into_iter()
        .map(|x| {
            let x = if x <= 0.0 { 0.5 * h } else { x };
            p_y.interp_at(volatility_to_y(x)) / x.exp_m1()
        })
        .collect()
}

/// Default domain `[0, center + spread]` for `horizon` steps of a recursion.
///
/// The center is the deterministic value `log sum_{j<=T} e^{d j}` with `d` the
/// recursion drift plus the noise mean. The spread is `12 s sqrt(T + 1)` for a
/// noise scale `s`; when the drift is negative the recursion is stationary and
/// the spread is capped by `12 s / sqrt(e^{-2d} - 1)`, widened to cover the
/// exponential upper tail of rate `2|d| / s^2` down to `e^{-25}`. Heavy-tailed
/// noise gets at least `500 s` for `z` and `1000 s` for `y`.
pub fn default_grid(
    recursion: Recursion,
    g: f64,
    noise: &NoiseModel,
    horizon: usize,
) -> Result<GridSpec, EvolutionError> {
    let drift = match recursion {
        Recursion::Z => g,
        Recursion::Y => -g,
    };
    let mean = match recursion {
        Recursion::Z => noise.mean(),
        Recursion::Y => noise.mirror().mean(),
    };
    let d = drift + mean.unwrap_or(0.0);
    let s = noise.scale();
    let t = horizon.max(1) as u64;
    let center = log_geometric_sum(d, t).max(0.0);
    let mut spread = 12.0 * s * ((t + 1) as f64).sqrt();
    if d < 0.0 {
        let stationary = (12.0 * s / (-2.0 * d).exp_m1().sqrt()).max(25.0 * s * s / (2.0 * -d));
        spread = spread.min(stationary);
    }
    let heavy = noise.is_heavy_tailed();
    if heavy {
        let floor = match recursion {
            Recursion::Z => 500.0,
            Recursion::Y => 1000.0,
        };
        spread = spread.max(floor * s);
    }
    let upper = center + spread.max(0.1 * center + 0.5);
    let min_points = if heavy {
        DEFAULT_POINTS_HEAVY
    } else {
        DEFAULT_POINTS
    };
    let n = ((upper / DEFAULT_STEP).ceil() as usize + 1).clamp(min_points, MAX_DEFAULT_POINTS);
    Ok(GridSpec::new(0.0, upper, n)?)
}

/// Default volatility domain `[0, softplus(g + a_hi)]`, where `a_hi` is the
/// upper noise quantile at `1 - 5e-13` (heavy tails: `1 - 5e-4`). Every
/// `dz_t` is at most `softplus(g + a_t)`.
pub fn default_dz_grid(g: f64, noise: &NoiseModel) -> Result<GridSpec, EvolutionError> {
    let heavy = noise.is_heavy_tailed();
    let tol = if heavy { 1e-3 } else { 1e-12 };
    let (_, hi) = noise.tail_bounds(tol);
    let upper = softplus(g + hi);
    let n = if heavy {
        DEFAULT_POINTS_HEAVY
    } else {
        DEFAULT_POINTS
    };
    Ok(GridSpec::new(0.0, upper, n)?)
}

/// Steady-state volatility: summary of the limiting density of `dz`.
#[derive(Debug, Clone, Serialize)]
pub struct VolatilityReport {
    pub g: f64,
    pub noise: NoiseSummary,
    pub converged_at: usize,
    pub final_l1_change: f64,
    pub mean: f64,
    /// second central moment of the gridded density; for heavy-tailed noise
    /// it depends on the truncation and is flagged by `variance_reliable`
    pub variance: f64,
    pub variance_reliable: bool,
    pub quantiles: Vec<f64>,
    pub iqr: f64,
    pub central_90: f64,
    pub truncated_mass: f64,
    /// `sigma_a^2 tanh(g / 2)` when the noise variance is finite
    pub saddle_variance: Option<f64>,
    /// `variance / saddle_variance`
    pub ratio: Option<f64>,
    pub y_mean: f64,
    pub y_variance: f64,
    /// `sigma_a^2 / (e^{2g} - 1)` when the noise variance is finite
    pub y_variance_saddle: Option<f64>,
    #[serde(skip)]
    pub dz_density: Option<GriddedPdf>,
    #[serde(skip)]
    pub y_density: Option<GriddedPdf>,
}

/// Runs the y recursion until its density stops changing and summarizes the
/// volatility density at that point. Uses `config.dz_grid`, or the default
/// volatility grid when it is unset.
pub fn steady_state_volatility(config: &EvolutionConfig) -> Result<VolatilityReport, EvolutionError> {
    if !(config.g > 0.0) {
        return Err(EvolutionError::NonPositiveDrift(config.g));
    }
    let mut cfg = config.clone();
    if cfg.dz_grid.is_none() {
        cfg.dz_grid = Some(default_dz_grid(cfg.g, &cfg.noise)?);
    }
    cfg.stop_on_convergence = true;
    cfg.store = StorePolicy::Final;
    let trace = evolve_y(&cfg)?;
    volatility_report(&cfg, &trace)
}

/// Builds the steady-state report from a finished y run of `cfg` that produced
/// volatility densities.
pub fn volatility_report(
    cfg: &EvolutionConfig,
    trace: &EvolutionTrace,
) -> Result<VolatilityReport, EvolutionError> {
    if !(cfg.g > 0.0) {
        return Err(EvolutionError::NonPositiveDrift(cfg.g));
    }
    if trace.recursion != Recursion::Y || trace.dz_records.is_empty() {
        return Err(EvolutionError::BadConfig(
            "a volatility report needs a y run with a volatility grid".into(),
        ));
    }
    let last = trace.records.last().expect("horizon >= 1");
    let last_change = last.l1_change.unwrap_or(f64::INFINITY);
    let Some(converged_at) = trace.converged_at else {
        return Err(EvolutionError::NotConverged {
            horizon: cfg.horizon,
            last_change,
            tol: cfg.convergence_tol,
        });
    };
    let dz = trace.final_dz_density().expect("final density kept").clone();
    let y = trace.final_density().expect("final density kept").clone();
    let dz_rec = trace.dz_records.last().expect("dz records");
    let q = &dz_rec.quantiles;
    let variance = dz_rec.moments.variance;
    let noise_var = cfg.noise.variance();
    let saddle_variance = match noise_var {
        Some(v) => Some(analytic::var_dz_saddle(cfg.g, v.sqrt())?),
        None => None,
    };
    let y_variance_saddle = match noise_var {
        Some(v) => Some(analytic::sigma_y_fixed_point(cfg.g, v.sqrt())?.powi(2)),
        None => None,
    };
    Ok(VolatilityReport {
        g: cfg.g,
        noise: cfg.noise.summary(),
        converged_at,
        final_l1_change: last_change,
        mean: dz_rec.moments.mean,
        variance,
        variance_reliable: !cfg.noise.is_heavy_tailed(),
        quantiles: q.clone(),
        iqr: q[3] - q[1],
        central_90: q[4] - q[0],
        truncated_mass: dz.truncated_mass(),
        saddle_variance,
        ratio: saddle_variance.map(|s| variance / s),
        y_mean: last.moments.mean,
        y_variance: last.moments.variance,
        y_variance_saddle,
        dz_density: Some(dz),
        y_density: Some(y),
    })
}
