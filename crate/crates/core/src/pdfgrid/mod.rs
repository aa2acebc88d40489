//! Densities tabulated on uniform grids.
//!
//! A [`GriddedPdf`] stores node values of a density; between nodes it is the
//! linear interpolant and outside `[x_min, x_max]` it is zero. All integrals are
//! trapezoidal, which is exact for that interpolant.

mod convolve;

pub use convolve::{
    convolve_direct, convolve_fft, discretize_noise, linear_convolve, ConvMethod, Convolution,
    ConvolveOptions, NoiseKernel,
};
pub(crate) use convolve::FftConvolver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::NoiseModel;

/// Smallest grid accepted anywhere in the crate.
pub const MIN_POINTS: usize = 16;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs x_min < x_max and at least {MIN_POINTS} points (got [{x_min}, {x_max}], n={n})")]
    BadGrid { x_min: f64, x_max: f64, n: usize },
    #[error("density has {got} values but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("density value at node {0} is negative or not finite")]
    NegativeValue(usize),
    #[error("density has zero mass on the grid")]
    ZeroMass,
    #[error("grids do not match")]
    MismatchedGrids,
    #[error("grid steps differ ({0} vs {1})")]
    IncompatibleSteps(f64, f64),
    #[error("probability {0} is not strictly inside (0, 1)")]
    BadProbability(f64),
}

/// Uniform grid `x_i = x_min + i h`, `h = (x_max - x_min) / (n_points - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self, GridError> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) || n_points < MIN_POINTS {
            return Err(GridError::BadGrid {
                x_min,
                x_max,
                n: n_points,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Grid of `n_points` nodes spaced `step` apart starting at `x_min`.
    pub fn with_step(x_min: f64, step: f64, n_points: usize) -> Result<Self, GridError> {
        Self::new(x_min, x_min + step * (n_points.max(1) - 1) as f64, n_points)
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Trapezoidal weight of node `i` (`h/2` at the ends, `h` inside).
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_points {
            0.5 * self.step()
        } else {
            self.step()
        }
    }

    pub fn matches(&self, other: &GridSpec) -> bool {
        let tol = 1e-12 * (self.x_max - self.x_min).abs().max(1.0);
        self.n_points == other.n_points
            && (self.x_min - other.x_min).abs() <= tol
            && (self.x_max - other.x_max).abs() <= tol
    }
}

/// The two distances offered by [`GriddedPdf::distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// Trapezoidal integral of `|p - q|`.
    L1,
    /// Largest absolute difference of the cumulative distributions.
    Ks,
}

/// Mean, variance and standardized third and fourth moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Excess kurtosis (zero for a gaussian).
    pub kurtosis: f64,
}

/// A density on a [`GridSpec`], with the probability mass known to lie off
/// the grid recorded in `truncated_mass`.
///
/// After [`normalize`](Self::normalize) the node values integrate to one, so
/// they describe the law conditional on landing on the grid; the unconditional
/// law puts `truncated_mass` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedPdf {
    grid: GridSpec,
    values: Vec<f64>,
    truncated_mass: f64,
}

impl GriddedPdf {
    /// Wraps raw node values without normalizing them.
    pub fn from_values(
        grid: GridSpec,
        values: Vec<f64>,
        truncated_mass: f64,
    ) -> Result<Self, GridError> {
        if values.len() != grid.n_points {
            return Err(GridError::LengthMismatch {
                expected: grid.n_points,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GridError::NegativeValue(i));
        }
        Ok(Self {
            grid,
            values,
            truncated_mass: truncated_mass.clamp(0.0, 1.0),
        })
    }

    /// Samples `f` on the grid and normalizes. No tail information is known,
    /// so `truncated_mass` is zero.
    pub fn from_function(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        let values = (0..grid.n_points).map(|i| f(grid.x(i))).collect();
        Self::from_values(grid, values, 0.0)?.normalize()
    }

    /// Samples a noise density and records its closed-form mass outside the grid.
    pub fn from_noise(grid: GridSpec, noise: &NoiseModel) -> Result<Self, GridError> {
        let values = (0..grid.n_points).map(|i| noise.pdf(grid.x(i))).collect();
        let outside = noise.cdf(grid.x_min) + noise.sf(grid.x_max);
        Self::from_values(grid, values, outside)?.normalize()
    }

    /// Rescales the values to unit trapezoidal mass.
    pub fn normalize(mut self) -> Result<Self, GridError> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(GridError::ZeroMass);
        }
        if (m - 1.0).abs() > 1e-13 {
            self.values.iter_mut().for_each(|v| *v /= m);
        }
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn with_truncated_mass(mut self, truncated_mass: f64) -> Self {
        self.truncated_mass = truncated_mass.clamp(0.0, 1.0);
        self
    }

    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v)
            .sum()
    }

    /// Linear interpolation, zero outside the grid.
    pub fn interp_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if !(x >= g.x_min && x <= g.x_max) {
            return 0.0;
        }
        let s = (x - g.x_min) / g.step();
        let i = (s.floor() as usize).min(g.n_points - 2);
        let w = s - i as f64;
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// Cumulative trapezoid at every node (unnormalized).
    pub fn cumulative(&self) -> Vec<f64> {
        let h = self.grid.step();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Cumulative distribution with O(1) evaluation anywhere.
    pub fn cdf(&self) -> GridCdf {
        GridCdf::new(self.grid.x_min, self.grid.step(), self.values.clone(), 0.0)
    }

    pub fn raw_moment(&self, order: u32) -> f64 {
        let mass = self.mass();
        self.weighted_sum(|x| x.powi(order as i32)) / mass
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    pub fn central_moment(&self, order: u32) -> f64 {
        let mu = self.mean();
        self.weighted_sum(|x| (x - mu).powi(order as i32)) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        self.central_moment(2)
    }

    pub fn moments(&self) -> Moments {
        let mass = self.mass();
        let mean = self.weighted_sum(|x| x) / mass;
        let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
        for (i, v) in self.values.iter().enumerate() {
            let w = self.grid.weight(i) * v;
            let d = self.grid.x(i) - mean;
            let d2 = d * d;
            c2 += w * d2;
            c3 += w * d2 * d;
            c4 += w * d2 * d2;
        }
        let (c2, c3, c4) = (c2 / mass, c3 / mass, c4 / mass);
        let (skewness, kurtosis) = if c2 > 0.0 {
            (c3 / c2.powf(1.5), c4 / (c2 * c2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        Moments {
            mean,
            variance: c2,
            skewness,
            kurtosis,
        }
    }

    fn weighted_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v * f(self.grid.x(i)))
            .sum()
    }

    /// Inverts the piecewise-linear interpolant of the cumulative trapezoid.
    pub fn quantiles(&self, probs: &[f64]) -> Result<Vec<f64>, GridError> {
        if let Some(&p) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(GridError::BadProbability(p));
        }
        let cum = self.cumulative();
        let total = *cum.last().unwrap();
        if !(total > 0.0) {
            return Err(GridError::ZeroMass);
        }
        let h = self.grid.step();
        Ok(probs
            .iter()
            .map(|&p| {
                let target = p * total;
                let j = cum.partition_point(|&c| c < target).clamp(1, cum.len() - 1);
                let (c0, c1) = (cum[j - 1], cum[j]);
                let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
                self.grid.x(j - 1) + frac * h
            })
            .collect())
    }

    pub fn distance(&self, other: &GriddedPdf, metric: Metric) -> Result<f64, GridError> {
        if !self.grid.matches(&other.grid) {
            return Err(GridError::MismatchedGrids);
        }
        Ok(match metric {
            Metric::L1 => self
                .values
                .iter()
                .zip(&other.values)
                .enumerate()
                .map(|(i, (a, b))| self.grid.weight(i) * (a - b).abs())
                .sum(),
            Metric::Ks => {
                let (ca, cb) = (self.cumulative(), other.cumulative());
                let (ta, tb) = (*ca.last().unwrap(), *cb.last().unwrap());
                ca.iter()
                    .zip(&cb)
                    .map(|(a, b)| (a / ta - b / tb).abs())
                    .fold(0.0, f64::max)
            }
        })
    }

    /// L1 distance after translating `self` by `-shift`:
    /// `integral |self(x + shift) - other(x)| dx` over `other`'s grid.
    pub fn shifted_l1(&self, other: &GriddedPdf, shift: f64) -> f64 {
        let g = &other.grid;
        let mut acc: f64 = (0..g.n_points)
            .map(|i| g.weight(i) * (self.interp_at(g.x(i) + shift) - other.values[i]).abs())
            .sum();
        // mass of self that the shift moved off other's grid
        let cdf = self.cdf();
        acc += cdf.eval(g.x_min + shift) + (cdf.total() - cdf.eval(g.x_max + shift));
        acc
    }

    /// Convolution with a noise density on a grid widened by the kernel
    /// support; see [`convolve::ConvolveOptions`] for the clipping policy.
    pub fn convolve(&self, noise: &NoiseModel) -> Result<GriddedPdf, GridError> {
        Ok(self
            .convolve_with(noise, &ConvolveOptions::default())?
            .into_pdf()?)
    }

    pub fn convolve_with(
        &self,
        noise: &NoiseModel,
        opts: &ConvolveOptions,
    ) -> Result<Convolution, GridError> {
        convolve::convolve_noise(self, noise, opts)
    }

    /// Convolution of two gridded densities sharing the same step.
    pub fn convolve_pdf(&self, other: &GriddedPdf) -> Result<GriddedPdf, GridError> {
        convolve::convolve_pdfs(self, other, ConvMethod::Auto)
    }
}

/// Exact cumulative integral of a piecewise-linear density on a uniform grid,
/// starting from `base` at the left end.
#[derive(Debug, Clone)]
pub struct GridCdf {
    x0: f64,
    h: f64,
    values: Vec<f64>,
    cum: Vec<f64>,
}

impl GridCdf {
    pub fn new(x0: f64, h: f64, values: Vec<f64>, base: f64) -> Self {
        let mut cum = Vec::with_capacity(values.len());
        let mut acc = base;
        cum.push(acc);
        for w in values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cum.push(acc);
        }
        Self { x0, h, values, cum }
    }

    /// Mass to the left of `x`. Below the grid this is the base mass.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        if !(x > self.x0) {
            return self.cum[0];
        }
        let s = (x - self.x0) / self.h;
        if s >= (n - 1) as f64 {
            return self.cum[n - 1];
        }
        let k = s as usize;
        let d = (s - k as f64) * self.h;
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        self.cum[k] + d * (v0 + 0.5 * (v1 - v0) * d / self.h)
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn lower(&self) -> f64 {
        self.x0
    }

    pub fn upper(&self) -> f64 {
        self.x0 + self.h * (self.values.len() - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erf;
    use std::f64::consts::{PI, SQRT_2};

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / SQRT_2))
    }

    fn gauss(mu: f64, s: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x - mu) * (x - mu) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 1.0, 15).is_err());
        assert!(GridSpec::new(1.0, 1.0, 100).is_err());
        assert!(GridSpec::new(f64::NAN, 1.0, 100).is_err());
        let g = GridSpec::new(-1.0, 1.0, 201).unwrap();
        assert!((g.step() - 0.01).abs() < 1e-15);
        assert_eq!(g.x(200), 1.0);
        let s = GridSpec::with_step(0.5, 0.25, 17).unwrap();
        assert_eq!(s.x_max, 4.5);
    }

    #[test]
    fn from_values_rejects_bad_input() {
        let g = GridSpec::new(0.0, 1.0, 16).unwrap();
        assert!(matches!(
            GriddedPdf::from_values(g, vec![1.0; 15], 0.0),
            Err(GridError::LengthMismatch { .. })
        ));
        let mut v = vec![1.0; 16];
        v[3] = -1e-3;
        assert!(matches!(
            GriddedPdf::from_values(g, v, 0.0),
            Err(GridError::NegativeValue(3))
        ));
        assert!(matches!(
            GriddedPdf::from_function(g, |_| 0.0),
            Err(GridError::ZeroMass)
        ));
    }

    #[test]
    fn gaussian_on_wide_grid() {
        let grid = GridSpec::new(-10.0, 10.0, 4001).unwrap();
        let noise = NoiseModel::gaussian(1.0).unwrap();
        let p = GriddedPdf::from_noise(grid, &noise).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-12);
        assert!(p.truncated_mass() < 1e-20);
        assert!(p.mean().abs() < 1e-10);
        assert!((p.variance() - 1.0).abs() < 1e-6);
        let m = p.moments();
        assert!(m.skewness.abs() < 1e-9);
        assert!(m.kurtosis.abs() < 1e-5);
    }

    #[test]
    fn lorentzian_truncation_is_recorded() {
        let grid = GridSpec::new(-50.0, 50.0, 20_001).unwrap();
        let noise = NoiseModel::lorentzian(1.0).unwrap();
        let p = GriddedPdf::from_noise(grid, &noise).unwrap();
        let expected = 1.0 - 2.0 / PI * 50f64.atan();
        assert!((p.truncated_mass() - expected).abs() < 1e-12);
        assert!((p.truncated_mass() - 0.0127).abs() < 1e-4);
        assert_eq!(p.quantiles(&[0.5]).unwrap()[0].abs() <= grid.step(), true);
    }

    #[test]
    fn uniform_density() {
        let grid = GridSpec::new(0.0, 1.0, 101).unwrap();
        let p = GriddedPdf::from_function(grid, |_| 3.0).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((p.mean() - 0.5).abs() < 1e-12);
        let q = p.quantiles(&[0.25, 0.75]).unwrap();
        assert!((q[0] - 0.25).abs() <= grid.step());
        assert!((q[1] - 0.75).abs() <= grid.step());
    }

    #[test]
    fn normalize_is_idempotent() {
        let grid = GridSpec::new(-3.0, 5.0, 300).unwrap();
        let p = GriddedPdf::from_function(grid, |x| (x * 1.3).sin().abs() + 0.1).unwrap();
        let q = p.clone().normalize().unwrap();
        assert_eq!(p, q);
        assert!((p.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation() {
        let grid = GridSpec::new(0.0, 15.0, 16).unwrap();
        let p = GriddedPdf::from_values(grid, (0..16).map(|i| i as f64).collect(), 0.0).unwrap();
        assert_eq!(p.interp_at(3.0), 3.0);
        assert!((p.interp_at(3.5) - 3.5).abs() < 1e-15);
        assert_eq!(p.interp_at(15.0), 15.0);
        assert_eq!(p.interp_at(15.01), 0.0);
        assert_eq!(p.interp_at(-0.01), 0.0);
    }

    #[test]
    fn symmetric_median() {
        let grid = GridSpec::new(-4.0, 10.0, 1401).unwrap();
        let p = GriddedPdf::from_function(grid, gauss(2.7, 0.8)).unwrap();
        let med = p.quantiles(&[0.5]).unwrap()[0];
        assert!((med - 2.7).abs() <= grid.step());
        assert!(p.quantiles(&[0.0]).is_err());
        assert!(p.quantiles(&[1.0]).is_err());
    }

    #[test]
    fn distances() {
        let grid = GridSpec::new(-10.0, 10.0, 4001).unwrap();
        let p = GriddedPdf::from_function(grid, gauss(0.0, 1.0)).unwrap();
        assert_eq!(p.distance(&p, Metric::L1).unwrap(), 0.0);
        assert_eq!(p.distance(&p, Metric::Ks).unwrap(), 0.0);

        let q = GriddedPdf::from_function(grid, gauss(0.1, 1.0)).unwrap();
        // max_x |Phi(x) - Phi(x - 0.1)| sits at x = 0.05
        let expected = phi(0.05) - phi(-0.05);
        let ks = p.distance(&q, Metric::Ks).unwrap();
        assert!((ks - expected).abs() < 1e-5, "{ks} vs {expected}");
        assert!((ks - 0.0399).abs() < 1e-4);

        let small = GridSpec::new(0.0, 1.0, 101).unwrap();
        let mut a = vec![0.0; 101];
        let mut b = vec![0.0; 101];
        a[10] = 100.0;
        b[80] = 100.0;
        let a = GriddedPdf::from_values(small, a, 0.0).unwrap();
        let b = GriddedPdf::from_values(small, b, 0.0).unwrap();
        assert!((a.distance(&b, Metric::L1).unwrap() - 2.0).abs() < 1e-12);
        assert!((a.distance(&b, Metric::Ks).unwrap() - 1.0).abs() < 1e-12);
        assert!(a.distance(&p, Metric::L1).is_err());
    }

    #[test]
    fn shifted_l1_recovers_translation() {
        let grid = GridSpec::new(-8.0, 12.0, 2001).unwrap();
        let p = GriddedPdf::from_function(grid, gauss(0.0, 1.0)).unwrap();
        let q = GriddedPdf::from_function(grid, gauss(1.37, 1.0)).unwrap();
        assert!(q.shifted_l1(&p, 1.37) < 1e-4);
        assert!(q.shifted_l1(&p, 0.0) > 0.5);
    }

    #[test]
    fn grid_cdf_matches_trapezoid_at_nodes() {
        let grid = GridSpec::new(0.0, 2.0, 21).unwrap();
        let p = GriddedPdf::from_function(grid, |x| 1.0 + x * x).unwrap();
        let cdf = p.cdf();
        let cum = p.cumulative();
        for i in 0..21 {
            assert!((cdf.eval(grid.x(i)) - cum[i]).abs() < 1e-14);
        }
        assert_eq!(cdf.eval(-1.0), 0.0);
        assert!((cdf.eval(5.0) - 1.0).abs() < 1e-14);
        // inside a cell the CDF integrates the linear interpolant exactly
        let (a, b) = (p.values()[3], p.values()[4]);
        let x = grid.x(3) + 0.03;
        let exact = cum[3] + 0.03 * a + 0.5 * (b - a) / grid.step() * 0.03 * 0.03;
        assert!((cdf.eval(x) - exact).abs() < 1e-15);
    }
}
