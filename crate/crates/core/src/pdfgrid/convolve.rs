use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{GridError, GridSpec, GriddedPdf};
use crate::noise::NoiseModel;

/// Products below this size are summed directly under [`ConvMethod::Auto`].
const DIRECT_WORK_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvMethod {
    #[default]
    Auto,
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolveOptions {
    /// Noise mass allowed to fall outside the kernel, split evenly between tails.
    pub tail_tol: f64,
    /// Optional hard limits `(most negative lag, most positive lag)` on the
    /// kernel; needed for heavy tails, whose tolerance-based support is huge.
    pub lag_limits: Option<(f64, f64)>,
    pub method: ConvMethod,
}

impl Default for ConvolveOptions {
    fn default() -> Self {
        Self {
            tail_tol: 1e-8,
            lag_limits: None,
            method: ConvMethod::Auto,
        }
    }
}

/// Noise density averaged over cells `[(j - 1/2) h, (j + 1/2) h]` for lags
/// `j = first_lag .. first_lag + weights.len()`.
///
/// Cell averages keep the kernel mass exact even when the noise is much
/// narrower than the grid step; a noise narrower than `h` becomes a single
/// spike of height `1/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKernel {
    pub first_lag: i64,
    pub step: f64,
    pub weights: Vec<f64>,
    /// noise mass below the first cell
    pub left_clipped: f64,
    /// noise mass above the last cell
    pub right_clipped: f64,
}

impl NoiseKernel {
    pub fn lag(&self, k: usize) -> f64 {
        (self.first_lag + k as i64) as f64 * self.step
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.step
    }
}

/// Discretizes `noise` at step `h` over cells covering `[lag_lo, lag_hi]`.
pub fn discretize_noise(noise: &NoiseModel, h: f64, lag_lo: f64, lag_hi: f64) -> NoiseKernel {
    let j_lo = (lag_lo / h + 0.5).floor() as i64;
    let j_hi = ((lag_hi / h - 0.5).ceil() as i64).max(j_lo);
    let weights = (j_lo..=j_hi)
        .map(|j| {
            let c = j as f64 * h;
            noise.mass_between(c - 0.5 * h, c + 0.5 * h) / h
        })
        .collect();
    NoiseKernel {
        first_lag: j_lo,
        step: h,
        weights,
        left_clipped: noise.cdf((j_lo as f64 - 0.5) * h),
        right_clipped: noise.sf((j_hi as f64 + 0.5) * h),
    }
}

/// Unnormalized result of convolving a gridded density with noise.
#[derive(Debug, Clone)]
pub struct Convolution {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// trapezoidal mass of the input density
    pub input_mass: f64,
    pub input_truncated: f64,
    /// fraction of the input mass pushed below the output grid by the kernel clip
    pub left_clipped: f64,
    /// fraction of the input mass pushed above the output grid by the kernel clip
    pub right_clipped: f64,
}

impl Convolution {
    /// Normalized density; clipped noise mass is added to the truncated mass.
    pub fn into_pdf(self) -> Result<GriddedPdf, GridError> {
        let kept = (1.0 - self.input_truncated) * (1.0 - self.left_clipped - self.right_clipped);
        GriddedPdf::from_values(self.grid, self.values, 1.0 - kept)?.normalize()
    }
}

pub(crate) fn convolve_noise(
    p: &GriddedPdf,
    noise: &NoiseModel,
    opts: &ConvolveOptions,
) -> Result<Convolution, GridError> {
    let h = p.grid.step();
    let (mut lo, mut hi) = noise.tail_bounds(opts.tail_tol);
    if let Some((a, b)) = opts.lag_limits {
        lo = lo.max(a);
        hi = hi.min(b);
    }
    let kernel = discretize_noise(noise, h, lo, hi.max(lo));
    let masses = node_masses(p);
    let values = clamp_nonnegative(linear_convolve(&masses, &kernel.weights, opts.method));
    let grid = GridSpec::with_step(
        p.grid.x_min + kernel.first_lag as f64 * h,
        h,
        values.len(),
    )?;
    Ok(Convolution {
        grid,
        values,
        input_mass: p.mass(),
        input_truncated: p.truncated_mass,
        left_clipped: kernel.left_clipped,
        right_clipped: kernel.right_clipped,
    })
}

pub(crate) fn convolve_pdfs(
    p: &GriddedPdf,
    q: &GriddedPdf,
    method: ConvMethod,
) -> Result<GriddedPdf, GridError> {
    let (hp, hq) = (p.grid.step(), q.grid.step());
    if (hp - hq).abs() > 1e-9 * hp.max(hq) {
        return Err(GridError::IncompatibleSteps(hp, hq));
    }
    // a zero node on each side gives every product mass a full trapezoid cell
    let values: Vec<f64> = std::iter::once(0.0)
        .chain(
            linear_convolve(&node_masses(p), &node_masses(q), method)
                .into_iter()
                .map(|m| m / hp),
        )
        .chain(std::iter::once(0.0))
        .collect();
    let values = clamp_nonnegative(values);
    let grid = GridSpec::with_step(p.grid.x_min + q.grid.x_min - hp, hp, values.len())?;
    let kept = (1.0 - p.truncated_mass) * (1.0 - q.truncated_mass);
    GriddedPdf::from_values(grid, values, 1.0 - kept)?.normalize()
}

/// Trapezoidal mass carried by each node.
pub(crate) fn node_masses(p: &GriddedPdf) -> Vec<f64> {
    p.values
        .iter()
        .enumerate()
        .map(|(i, v)| p.grid.weight(i) * v)
        .collect()
}

fn clamp_nonnegative(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

/// Full linear convolution, length `a.len() + b.len() - 1`.
pub fn linear_convolve(a: &[f64], b: &[f64], method: ConvMethod) -> Vec<f64> {
    match method {
        ConvMethod::Direct => convolve_direct(a, b),
        ConvMethod::Fft => convolve_fft(a, b),
        ConvMethod::Auto => {
            if a.len().saturating_mul(b.len()) <= DIRECT_WORK_LIMIT {
                convolve_direct(a, b)
            } else {
                convolve_fft(a, b)
            }
        }
    }
}

pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

pub fn convolve_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut conv = FftConvolver::new(b, a.len());
    conv.apply(a)
}

/// FFT convolution against a fixed kernel whose spectrum is computed once.
pub(crate) struct FftConvolver {
    size: usize,
    kernel_len: usize,
    max_input: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FftConvolver {
    pub(crate) fn new(kernel: &[f64], max_input: usize) -> Self {
        let size = (max_input + kernel.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut spectrum: Vec<Complex<f64>> = kernel
            .iter()
            .map(|&k| Complex::new(k, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(size)
            .collect();
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(0.0, 0.0); scratch_len];
        forward.process_with_scratch(&mut spectrum, &mut scratch);
        Self {
            size,
            kernel_len: kernel.len(),
            max_input,
            spectrum,
            forward,
            inverse,
            buffer: vec![Complex::new(0.0, 0.0); size],
            scratch,
        }
    }

    pub(crate) fn apply(&mut self, input: &[f64]) -> Vec<f64> {
        assert!(input.len() <= self.max_input, "input longer than planned");
        for (b, x) in self.buffer.iter_mut().zip(
            input
                .iter()
                .map(|&x| Complex::new(x, 0.0))
                .chain(std::iter::repeat(Complex::new(0.0, 0.0))),
        ) {
            *b = x;
        }
        self.forward
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        for (b, k) in self.buffer.iter_mut().zip(&self.spectrum) {
            *b *= k;
        }
        self.inverse
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        let scale = 1.0 / self.size as f64;
        self.buffer[..input.len() + self.kernel_len - 1]
            .iter()
            .map(|c| c.re * scale)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdfgrid::Metric;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gauss(mu: f64, s: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x - mu) * (x - mu) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
    }

    #[test]
    fn direct_small_example() {
        let out = convolve_direct(&[1.0, 2.0, 3.0], &[0.5, 0.25]);
        assert_eq!(out, vec![0.5, 1.25, 2.0, 0.75]);
        let f = convolve_fft(&[1.0, 2.0, 3.0], &[0.5, 0.25]);
        for (a, b) in out.iter().zip(&f) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fft_matches_direct(
            a in prop::collection::vec(0.0f64..1.0, 1..4096),
            b in prop::collection::vec(0.0f64..1.0, 1..512),
        ) {
            let d = convolve_direct(&a, &b);
            let f = convolve_fft(&a, &b);
            prop_assert_eq!(d.len(), f.len());
            let scale = d.iter().cloned().fold(0.0, f64::max).max(1e-300);
            for (x, y) in d.iter().zip(&f) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn kernel_for_narrow_noise_is_a_spike() {
        let spike = NoiseModel::gaussian(1e-9).unwrap();
        let k = discretize_noise(&spike, 0.01, -1e-8, 1e-8);
        assert_eq!(k.first_lag, 0);
        assert_eq!(k.weights.len(), 1);
        assert!((k.weights[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn spike_noise_leaves_density_unchanged() {
        let grid = GridSpec::new(-5.0, 5.0, 1001).unwrap();
        let p = GriddedPdf::from_function(grid, gauss(0.3, 0.7)).unwrap();
        let spike = NoiseModel::gaussian(1e-9).unwrap();
        let c = p.convolve(&spike).unwrap();
        assert!(c.grid().matches(&grid));
        let h = grid.step();
        for i in 1..1000 {
            assert!((c.values()[i] - p.values()[i]).abs() < 1e-9);
        }
        assert!((c.mean() - p.mean()).abs() < h);
    }

    #[test]
    fn gaussian_convolution_identity() {
        let h = 0.005;
        let grid = GridSpec::with_step(-4.0, h, 1601).unwrap();
        let p = GriddedPdf::from_function(grid, gauss(0.0, 0.4)).unwrap();
        let noise = NoiseModel::gaussian(0.3).unwrap();
        let c = p.convolve(&noise).unwrap();
        let exact = GriddedPdf::from_function(*c.grid(), gauss(0.0, 0.5)).unwrap();
        let l1 = c.distance(&exact, Metric::L1).unwrap();
        assert!(l1 < 1e-4, "L1 = {l1}");
        let var = c.variance();
        assert!((var - (p.variance() + 0.09)).abs() < 1e-4 * var);
        assert!(c.mean().abs() < 1e-6);
        assert!(c.truncated_mass() <= 1.01e-8);
    }

    #[test]
    fn symmetric_noise_preserves_mean() {
        let grid = GridSpec::with_step(0.0, 0.01, 1000).unwrap();
        let p = GriddedPdf::from_function(grid, |x| x * x * (10.0 - x).max(0.0)).unwrap();
        for noise in [
            NoiseModel::gaussian(0.5).unwrap(),
            NoiseModel::tabulated(&[(-1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]).unwrap(),
        ] {
            let c = p.convolve(&noise).unwrap();
            assert!((c.mean() - p.mean()).abs() < 1e-6, "{noise}");
            let v = noise.variance().unwrap();
            assert!((c.variance() - p.variance() - v).abs() < 1e-4 * c.variance());
        }
    }

    #[test]
    fn heavy_tail_clip_goes_to_truncated_mass() {
        let grid = GridSpec::with_step(-2.0, 0.01, 401).unwrap();
        let p = GriddedPdf::from_function(grid, gauss(0.0, 0.3)).unwrap();
        let noise = NoiseModel::lorentzian(1.0).unwrap();
        let opts = ConvolveOptions {
            lag_limits: Some((-30.0, 30.0)),
            ..Default::default()
        };
        let c = p.convolve_with(&noise, &opts).unwrap();
        let expected = 2.0 * noise.sf(30.005);
        assert!((c.left_clipped + c.right_clipped - expected).abs() < 1e-6);
        let pdf = c.into_pdf().unwrap();
        assert!((pdf.truncated_mass() - expected).abs() < 1e-6);
        assert!((pdf.mass() - 1.0).abs() < 1e-12);
        assert!(pdf.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gridded_convolution_checks_steps() {
        let a = GriddedPdf::from_function(GridSpec::new(0.0, 1.0, 101).unwrap(), |_| 1.0).unwrap();
        let b = GriddedPdf::from_function(GridSpec::new(0.0, 1.0, 51).unwrap(), |_| 1.0).unwrap();
        assert!(matches!(
            a.convolve_pdf(&b),
            Err(GridError::IncompatibleSteps(..))
        ));
        let c = GriddedPdf::from_function(GridSpec::new(-0.5, 0.5, 101).unwrap(), |_| 1.0).unwrap();
        let ac = a.convolve_pdf(&c).unwrap();
        assert!((ac.grid().x_min + 0.51).abs() < 1e-12);
        assert!((ac.mean() - 0.5).abs() < 1e-9);
        let (va, vc, vac) = (a.variance(), c.variance(), ac.variance());
        assert!((vac - (va + vc)).abs() < 1e-6, "{vac} {va} {vc}");
    }
}
