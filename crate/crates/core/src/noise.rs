//! The i.i.d. production noise `a_i` and its mirrored counterpart `-a_i`.

use std::f64::consts::{FRAC_1_PI, PI, SQRT_2};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::Serialize;
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum NoiseError {
    #[error("noise width must be positive and finite, got {0}")]
    NonPositiveWidth(f64),
    #[error("tabulated noise needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("tabulated x values must be strictly increasing (at row {0})")]
    NonMonotone(usize),
    #[error("tabulated densities must be finite and non-negative (at row {0})")]
    NegativeDensity(usize),
    #[error("tabulated density has zero total mass")]
    ZeroMass,
    #[error("cannot parse noise specification `{0}`")]
    BadSpec(String),
    #[error("malformed noise table at line {line}: {msg}")]
    BadTable { line: usize, msg: String },
    #[error("io error reading noise table: {0}")]
    Io(#[from] std::io::Error),
}

/// User-facing description of a noise distribution, before validation.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// Mean-zero normal with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Cauchy centred at zero with half-width at half-maximum `gamma`.
    Lorentzian { gamma: f64 },
    /// Piecewise-linear density through `(x, density)` points.
    Tabulated(Vec<(f64, f64)>),
}

impl NoiseSpec {
    /// Parses `gaussian:sigma=S`, `lorentzian:gamma=G` or `table:PATH`.
    pub fn parse(s: &str) -> Result<Self, NoiseError> {
        let bad = || NoiseError::BadSpec(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let param = |name: &str| -> Result<f64, NoiseError> {
            let (key, value) = rest.split_once('=').ok_or_else(bad)?;
            if key.trim() != name {
                return Err(bad());
            }
            value.trim().parse::<f64>().map_err(|_| bad())
        };
        match kind.trim() {
            "gaussian" | "normal" => Ok(NoiseSpec::Gaussian {
                sigma: param("sigma")?,
            }),
            "lorentzian" | "cauchy" => Ok(NoiseSpec::Lorentzian {
                gamma: param("gamma")?,
            }),
            "table" | "tabulated" => Ok(NoiseSpec::Tabulated(read_table_file(rest.trim())?)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Gaussian {
        sigma: f64,
    },
    Lorentzian {
        gamma: f64,
    },
    Tabulated {
        xs: Vec<f64>,
        densities: Vec<f64>,
        /// cumulative mass at each `xs[i]`
        cum: Vec<f64>,
    },
}

/// A validated, immutable noise distribution.
///
/// `mirrored` models represent the law of `-a`: every query is answered by the
/// base distribution evaluated at the reflected argument.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: Kind,
    mirrored: bool,
}

/// Compact description used in manifests.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NoiseSummary {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    pub mirrored: bool,
}

impl NoiseModel {
    pub fn new(spec: &NoiseSpec) -> Result<Self, NoiseError> {
        match spec {
            NoiseSpec::Gaussian { sigma } => Self::gaussian(*sigma),
            NoiseSpec::Lorentzian { gamma } => Self::lorentzian(*gamma),
            NoiseSpec::Tabulated(points) => Self::tabulated(points),
        }
    }

    pub fn gaussian(sigma: f64) -> Result<Self, NoiseError> {
        check_width(sigma)?;
        Ok(Self {
            kind: Kind::Gaussian { sigma },
            mirrored: false,
        })
    }

    pub fn lorentzian(gamma: f64) -> Result<Self, NoiseError> {
        check_width(gamma)?;
        Ok(Self {
            kind: Kind::Lorentzian { gamma },
            mirrored: false,
        })
    }

    /// Builds a piecewise-linear density through `points`, rescaled to unit
    /// trapezoidal mass.
    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self, NoiseError> {
        if points.len() < 2 {
            return Err(NoiseError::TooFewPoints(points.len()));
        }
        for (i, &(x, d)) in points.iter().enumerate() {
            if !x.is_finite() || !(d.is_finite() && d >= 0.0) {
                return Err(NoiseError::NegativeDensity(i));
            }
            if i > 0 && x <= points[i - 1].0 {
                return Err(NoiseError::NonMonotone(i));
            }
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let raw: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mass: f64 = xs
            .windows(2)
            .zip(raw.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum();
        if !(mass > 0.0) {
            return Err(NoiseError::ZeroMass);
        }
        let densities: Vec<f64> = raw.iter().map(|d| d / mass).collect();
        let mut cum = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for i in 1..xs.len() {
            acc += 0.5 * (xs[i] - xs[i - 1]) * (densities[i] + densities[i - 1]);
            cum.push(acc);
        }
        Ok(Self {
            kind: Kind::Tabulated { xs, densities, cum },
            mirrored: false,
        })
    }

    /// Loads a two-column `x,density` CSV (header optional).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self, NoiseError> {
        Self::tabulated(&read_table_file(path)?)
    }

    /// The law of `-a`.
    pub fn mirror(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            mirrored: !self.mirrored,
        }
    }

    pub fn is_mirrored(&self) -> bool {
        self.mirrored
    }

    /// True when the model has no finite variance.
    pub fn is_heavy_tailed(&self) -> bool {
        matches!(self.kind, Kind::Lorentzian { .. })
    }

    #[inline]
    fn reflect(&self, x: f64) -> f64 {
        if self.mirrored {
            -x
        } else {
            x
        }
    }

    /// Density at `x`. Tabulated models are zero outside their support.
    pub fn pdf(&self, x: f64) -> f64 {
        let x = self.reflect(x);
        match &self.kind {
            Kind::Gaussian { sigma } => {
                let u = x / sigma;
                (-0.5 * u * u).exp() / (sigma * (2.0 * PI).sqrt())
            }
            Kind::Lorentzian { gamma } => gamma * FRAC_1_PI / (x * x + gamma * gamma),
            Kind::Tabulated { xs, densities, .. } => {
                let n = xs.len();
                if !(x >= xs[0] && x <= xs[n - 1]) {
                    return 0.0;
                }
                let i = segment(xs, x);
                let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
                densities[i] + w * (densities[i + 1] - densities[i])
            }
        }
    }

    /// `P(a <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.mirrored {
            self.base_sf(-x)
        } else {
            self.base_cdf(x)
        }
    }

    /// `P(a > x)`, accurate in the far right tail.
    pub fn sf(&self, x: f64) -> f64 {
        if self.mirrored {
            self.base_cdf(-x)
        } else {
            self.base_sf(x)
        }
    }

    /// Mass in `[lo, hi]`, taking the difference on the side where it is
    /// numerically accurate.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let m = if lo >= 0.0 {
            self.sf(lo) - self.sf(hi)
        } else {
            self.cdf(hi) - self.cdf(lo)
        };
        m.max(0.0)
    }

    fn base_cdf(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { sigma } => 0.5 * erfc(-x / (sigma * SQRT_2)),
            Kind::Lorentzian { gamma } => {
                if x < 0.0 {
                    (gamma / -x).atan() * FRAC_1_PI
                } else {
                    1.0 - (gamma / x).atan() * FRAC_1_PI
                }
            }
            Kind::Tabulated { xs, densities, cum } => tab_cdf(xs, densities, cum, x),
        }
    }

    fn base_sf(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { sigma } => 0.5 * erfc(x / (sigma * SQRT_2)),
            Kind::Lorentzian { gamma } => {
                if x > 0.0 {
                    (gamma / x).atan() * FRAC_1_PI
                } else {
                    1.0 - (gamma / -x).atan() * FRAC_1_PI
                }
            }
            Kind::Tabulated { xs, densities, cum } => 1.0 - tab_cdf(xs, densities, cum, x),
        }
    }

    /// Inverse CDF for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.mirrored {
            -self.base_quantile(1.0 - p)
        } else {
            self.base_quantile(p)
        }
    }

    fn base_quantile(&self, p: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { sigma } => -sigma * SQRT_2 * erfc_inv(2.0 * p),
            Kind::Lorentzian { gamma } => gamma * (PI * (p - 0.5)).tan(),
            Kind::Tabulated { xs, densities, cum } => tab_quantile(xs, densities, cum, p),
        }
    }

    /// Interval `[lo, hi]` with at most `tol / 2` of the mass on either side.
    /// Bounded supports are returned exactly.
    pub fn tail_bounds(&self, tol: f64) -> (f64, f64) {
        let half = 0.5 * tol;
        let (lo, hi) = match &self.kind {
            Kind::Gaussian { sigma } => {
                let q = sigma * SQRT_2 * erfc_inv(2.0 * half);
                (-q, q)
            }
            Kind::Lorentzian { gamma } => {
                // sf(q) = atan(gamma / q) / pi
                let q = gamma / (PI * half).tan();
                (-q, q)
            }
            Kind::Tabulated { xs, .. } => (xs[0], xs[xs.len() - 1]),
        };
        if self.mirrored {
            (-hi, -lo)
        } else {
            (lo, hi)
        }
    }

    /// Support of a tabulated model; unbounded for the closed forms.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = match &self.kind {
            Kind::Tabulated { xs, .. } => (xs[0], xs[xs.len() - 1]),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if self.mirrored {
            (-hi, -lo)
        } else {
            (lo, hi)
        }
    }

    pub fn mean(&self) -> Option<f64> {
        let m = match &self.kind {
            Kind::Gaussian { .. } => 0.0,
            Kind::Lorentzian { .. } => return None,
            Kind::Tabulated { xs, densities, .. } => tab_raw_moments(xs, densities).0,
        };
        Some(if self.mirrored { -m } else { m })
    }

    pub fn variance(&self) -> Option<f64> {
        match &self.kind {
            Kind::Gaussian { sigma } => Some(sigma * sigma),
            Kind::Lorentzian { .. } => None,
            Kind::Tabulated { xs, densities, .. } => {
                let (m1, m2) = tab_raw_moments(xs, densities);
                Some((m2 - m1 * m1).max(0.0))
            }
        }
    }

    /// Characteristic width: sigma, gamma, or the tabulated standard deviation.
    pub fn scale(&self) -> f64 {
        match &self.kind {
            Kind::Gaussian { sigma } => *sigma,
            Kind::Lorentzian { gamma } => *gamma,
            Kind::Tabulated { .. } => self.variance().unwrap_or(0.0).sqrt(),
        }
    }

    /// One draw using the caller's generator.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = match &self.kind {
            Kind::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            Kind::Lorentzian { gamma } => {
                let u: f64 = Open01.sample(rng);
                gamma * (PI * (u - 0.5)).tan()
            }
            Kind::Tabulated { xs, densities, cum } => {
                let u: f64 = Open01.sample(rng);
                tab_quantile(xs, densities, cum, u)
            }
        };
        self.reflect(v)
    }

    /// `count` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }

    pub fn summary(&self) -> NoiseSummary {
        let mut s = NoiseSummary {
            kind: "gaussian",
            sigma: None,
            gamma: None,
            points: None,
            mirrored: self.mirrored,
        };
        match &self.kind {
            Kind::Gaussian { sigma } => s.sigma = Some(*sigma),
            Kind::Lorentzian { gamma } => {
                s.kind = "lorentzian";
                s.gamma = Some(*gamma);
            }
            Kind::Tabulated { xs, .. } => {
                s.kind = "tabulated";
                s.points = Some(xs.len());
            }
        }
        s
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mirrored {
            write!(f, "mirror(")?;
        }
        match &self.kind {
            Kind::Gaussian { sigma } => write!(f, "gaussian:sigma={sigma}")?,
            Kind::Lorentzian { gamma } => write!(f, "lorentzian:gamma={gamma}")?,
            Kind::Tabulated { xs, .. } => write!(f, "tabulated[{} points]", xs.len())?,
        }
        if self.mirrored {
            write!(f, ")")?;
        }
        Ok(())
    }
}

fn check_width(w: f64) -> Result<(), NoiseError> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(NoiseError::NonPositiveWidth(w))
    }
}

/// Index `i` with `xs[i] <= x <= xs[i + 1]`, for `x` inside the table.
fn segment(xs: &[f64], x: f64) -> usize {
    let i = xs.partition_point(|&v| v <= x);
    i.clamp(1, xs.len() - 1) - 1
}

fn tab_cdf(xs: &[f64], d: &[f64], cum: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return 0.0;
    }
    if x >= xs[n - 1] {
        return 1.0;
    }
    let i = segment(xs, x);
    let dx = xs[i + 1] - xs[i];
    let s = x - xs[i];
    let slope = (d[i + 1] - d[i]) / dx;
    (cum[i] + s * (d[i] + 0.5 * slope * s)).clamp(0.0, 1.0)
}

fn tab_quantile(xs: &[f64], d: &[f64], cum: &[f64], p: f64) -> f64 {
    let n = xs.len();
    let total = cum[n - 1];
    let target = (p * total).clamp(0.0, total);
    // first segment whose right cumulative value reaches the target
    let j = cum.partition_point(|&c| c < target).clamp(1, n - 1);
    let i = j - 1;
    let dx = xs[i + 1] - xs[i];
    let r = target - cum[i];
    let a = 0.5 * (d[i + 1] - d[i]) / dx;
    let b = d[i];
    let disc = (b * b + 4.0 * a * r).max(0.0);
    let denom = b + disc.sqrt();
    let s = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
    xs[i] + s.clamp(0.0, dx)
}

/// Exact first and second moments of the piecewise-linear density.
fn tab_raw_moments(xs: &[f64], d: &[f64]) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..xs.len() - 1 {
        let (x0, x1, d0, d1) = (xs[i], xs[i + 1], d[i], d[i + 1]);
        let h = x1 - x0;
        m1 += h / 6.0 * (x0 * (2.0 * d0 + d1) + x1 * (d0 + 2.0 * d1));
        m2 += h / 12.0
            * (d0 * (3.0 * x0 * x0 + 2.0 * x0 * x1 + x1 * x1)
                + d1 * (x0 * x0 + 2.0 * x0 * x1 + 3.0 * x1 * x1));
    }
    (m1, m2)
}

pub(crate) fn read_table_file(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>, NoiseError> {
    let file = std::fs::File::open(path)?;
    read_table(std::io::BufReader::new(file))
}

/// Parses `x,density` rows. A non-numeric first row is treated as a header.
pub fn read_table<R: BufRead>(reader: R) -> Result<Vec<(f64, f64)>, NoiseError> {
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim().trim_start_matches('\u{feff}');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (a, b) = match (cols.next(), cols.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(NoiseError::BadTable {
                    line: idx + 1,
                    msg: "expected two comma-separated columns".into(),
                })
            }
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(d)) => points.push((x, d)),
            _ if points.is_empty() && idx == 0 => continue,
            _ => {
                return Err(NoiseError::BadTable {
                    line: idx + 1,
                    msg: format!("cannot parse `{line}`"),
                })
            }
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            s += f(lo + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn closed_form_densities_at_center() {
        let g = NoiseModel::gaussian(1.0).unwrap();
        assert!((g.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let l = NoiseModel::lorentzian(1.0).unwrap();
        assert!((l.pdf(0.0) - FRAC_1_PI).abs() < 1e-15);
        assert!((l.pdf(1.0) - 0.5 * FRAC_1_PI).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(matches!(
            NoiseModel::gaussian(0.0),
            Err(NoiseError::NonPositiveWidth(_))
        ));
        assert!(NoiseModel::lorentzian(-1.0).is_err());
        assert!(NoiseModel::gaussian(f64::NAN).is_err());
        assert!(matches!(
            NoiseModel::tabulated(&[(0.0, 1.0)]),
            Err(NoiseError::TooFewPoints(1))
        ));
        assert!(matches!(
            NoiseModel::tabulated(&[(0.0, 1.0), (0.0, 1.0)]),
            Err(NoiseError::NonMonotone(1))
        ));
        assert!(matches!(
            NoiseModel::tabulated(&[(0.0, 1.0), (1.0, -1.0)]),
            Err(NoiseError::NegativeDensity(1))
        ));
        assert!(matches!(
            NoiseModel::tabulated(&[(0.0, 0.0), (1.0, 0.0)]),
            Err(NoiseError::ZeroMass)
        ));
    }

    #[test]
    fn tabulated_is_renormalized() {
        // trapezoidal mass of the raw table is 0.75 + 0.75 = 1.5
        let t = NoiseModel::tabulated(&[(-1.0, 0.5), (0.0, 1.0), (1.0, 0.5)]).unwrap();
        assert!((t.pdf(0.0) - 1.0 / 1.5).abs() < 1e-15);
        assert!((t.pdf(-1.0) - 0.5 / 1.5).abs() < 1e-15);
        assert!((t.cdf(1.0) - 1.0).abs() < 1e-12);
        assert!((t.cdf(0.0) - 0.5).abs() < 1e-12);
        assert_eq!(t.pdf(1.5), 0.0);
        assert_eq!(t.pdf(-3.0), 0.0);
        let mass = trapezoid(|x| t.pdf(x), -1.0, 1.0, 2);
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tabulated_quantile_inverts_cdf() {
        let t = NoiseModel::tabulated(&[(0.0, 0.0), (1.0, 2.0), (3.0, 1.0), (4.0, 0.0)]).unwrap();
        for &p in &[1e-6, 0.1, 0.25, 0.5, 0.77, 0.999] {
            let x = t.quantile(p);
            assert!((t.cdf(x) - p).abs() < 1e-12, "p={p} x={x}");
        }
    }

    #[test]
    fn mirror_reflects_and_is_involution() {
        let t = NoiseModel::tabulated(&[(0.0, 1.0), (0.5, 3.0), (1.0, 2.0)]).unwrap();
        let m = t.mirror();
        assert_eq!(m.support(), (-1.0, 0.0));
        for &x in &[-1.0, -0.7, -0.5, -0.2, 0.0, 0.3] {
            assert_eq!(m.pdf(x), t.pdf(-x));
        }
        assert!((m.pdf(-1.0) - t.pdf(1.0)).abs() < 1e-15);
        let mm = m.mirror();
        for i in 0..50 {
            let x = -2.0 + 0.08 * i as f64;
            assert_eq!(mm.pdf(x), t.pdf(x));
        }
        assert!((m.mean().unwrap() + t.mean().unwrap()).abs() < 1e-15);
        assert!((m.variance().unwrap() - t.variance().unwrap()).abs() < 1e-15);
        let g = NoiseModel::gaussian(0.7).unwrap();
        for &x in &[-2.0, 0.0, 0.4] {
            assert_eq!(g.mirror().pdf(x), g.pdf(x));
        }
    }

    #[test]
    fn mirror_preserves_mass() {
        let t = NoiseModel::tabulated(&[(0.2, 1.0), (0.5, 3.0), (1.5, 2.0)]).unwrap();
        let m = t.mirror();
        let mass = trapezoid(|x| m.pdf(x), -1.5, -0.2, 4000);
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((m.cdf(-0.2) - 1.0).abs() < 1e-12);
        assert!((m.sf(-1.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_mass_over_ten_sigma() {
        let g = NoiseModel::gaussian(0.3).unwrap();
        let mass = trapezoid(|x| g.pdf(x), -3.0, 3.0, 20_000);
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lorentzian_tail_mass_matches_atan() {
        let l = NoiseModel::lorentzian(1.0).unwrap();
        let big_l = 50.0;
        let outside = l.cdf(-big_l) + l.sf(big_l);
        let expected = 1.0 - 2.0 * FRAC_1_PI * (big_l / 1.0).atan();
        assert!((outside - expected).abs() < 1e-12);
        let inside = trapezoid(|x| l.pdf(x), -big_l, big_l, 200_000);
        assert!((inside + outside - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tail_bounds_hold_requested_mass() {
        for m in [
            NoiseModel::gaussian(0.4).unwrap(),
            NoiseModel::lorentzian(2.0).unwrap(),
            NoiseModel::gaussian(1.0).unwrap().mirror(),
        ] {
            let (lo, hi) = m.tail_bounds(1e-8);
            assert!((m.cdf(lo) - 5e-9).abs() < 1e-12, "{m}");
            assert!((m.sf(hi) - 5e-9).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let g = NoiseModel::gaussian(1.0).unwrap();
        let n = 1_000_000;
        let xs = g.sample(n, 11);
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn lorentzian_sample_median() {
        let l = NoiseModel::lorentzian(1.0).unwrap();
        let mut xs = l.sample(100_000, 5);
        xs.sort_by(f64::total_cmp);
        let median = 0.5 * (xs[49_999] + xs[50_000]);
        assert!(median.abs() < 0.02, "median {median}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = NoiseModel::tabulated(&[(-1.0, 0.5), (0.0, 1.0), (1.0, 0.5)]).unwrap();
        assert_eq!(t.sample(100, 3), t.sample(100, 3));
        assert_ne!(t.sample(100, 3), t.sample(100, 4));
        let m = t.mirror().sample(1000, 9);
        assert!(m.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn gaussian_histogram_chi_square() {
        // 40 equal-width bins on [-4, 4]; expected counts from the CDF.
        let g = NoiseModel::gaussian(1.0).unwrap();
        let n = 1_000_000;
        let xs = g.sample(n, 2024);
        let bins = 40;
        let (lo, hi) = (-4.0, 4.0);
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins + 2];
        for &x in &xs {
            let k = if x < lo {
                0
            } else if x >= hi {
                bins + 1
            } else {
                1 + ((x - lo) / w) as usize
            };
            counts[k] += 1;
        }
        let mut chi2 = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let p = if k == 0 {
                g.cdf(lo)
            } else if k == bins + 1 {
                g.sf(hi)
            } else {
                let a = lo + (k - 1) as f64 * w;
                g.mass_between(a, a + w)
            };
            let e = p * n as f64;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        // 41 degrees of freedom; upper 0.001 critical value is ~74.7
        assert!(chi2 < 74.7, "chi2 = {chi2}");
    }

    #[test]
    fn parses_specs_and_tables() {
        assert_eq!(
            NoiseSpec::parse("gaussian:sigma=0.5").unwrap(),
            NoiseSpec::Gaussian { sigma: 0.5 }
        );
        assert_eq!(
            NoiseSpec::parse("lorentzian:gamma=1").unwrap(),
            NoiseSpec::Lorentzian { gamma: 1.0 }
        );
        assert!(NoiseSpec::parse("gaussian:gamma=1").is_err());
        assert!(NoiseSpec::parse("uniform:w=1").is_err());
        assert!(NoiseSpec::parse("gaussian").is_err());

        let with_header = "x,density\n-1,0.5\n0,1\n1,0.5\n";
        let pts = read_table(with_header.as_bytes()).unwrap();
        assert_eq!(pts, vec![(-1.0, 0.5), (0.0, 1.0), (1.0, 0.5)]);
        let bare = "-1,0.5\n0,1\n\n1,0.5\n";
        assert_eq!(read_table(bare.as_bytes()).unwrap(), pts);
        assert!(read_table("0,1\nfoo,2\n".as_bytes()).is_err());
        assert!(read_table("0\n".as_bytes()).is_err());
    }
}
