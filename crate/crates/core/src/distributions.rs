//! Parametric kernels used by the affordance model: a von-Mises density on
//! planar unit vectors, a Beta density on `[0, 1]` and a 1D Gaussian, together
//! with the weighted estimators run by the M-step.

use crate::geometry::Vec2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use std::f64::consts::PI;
use thiserror::Error;

/// Upper bound on the von-Mises concentration.
pub const KAPPA_MAX: f64 = 1e4;
/// Variance floor for the Gaussian kernel, m².
pub const SIGMA_MIN: f64 = 1e-6;
/// Cap for Beta densities at divergent endpoints.
pub const BETA_PDF_MAX: f64 = 1e6;
/// Weighted variances at or below this are treated as a point mass.
pub const VARIANCE_EPS: f64 = 1e-12;

/// Switch from the power series to the asymptotic expansion of I₀.
const I0_SERIES_LIMIT: f64 = 15.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("{name} = {value} is outside the parameter domain")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("argument {0} outside the support [0, 1]")]
    Domain(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("total sample weight must be positive and finite")]
    NoWeight,
    #[error("sample weight {0} is negative or non-finite")]
    InvalidWeight(f64),
    #[error("no Beta distribution has mean {mean} and variance {variance}")]
    MomentMismatch { mean: f64, variance: f64 },
    #[error("weighted variance {0} is numerically zero")]
    ZeroVariance(f64),
}

/// Non-fatal estimator outcomes reported alongside fitted parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// The weighted resultant vanished; the fit fell back to the uniform density.
    DegenerateFit,
    /// The concentration hit [`KAPPA_MAX`].
    KappaCapped,
}

/// I₀(x), the modified Bessel function of the first kind of order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < I0_SERIES_LIMIT {
        i0_series(x)
    } else {
        (x - 0.5 * (2.0 * PI * x).ln()).exp() * i0_asymptotic_tail(x)
    }
}

/// ln I₀(x), finite for all finite x.
pub fn ln_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < I0_SERIES_LIMIT {
        i0_series(x).ln()
    } else {
        x - 0.5 * (2.0 * PI * x).ln() + i0_asymptotic_tail(x).ln()
    }
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// The bracketed series in I₀(x) ~ eˣ/√(2πx) · Σ ((2k−1)!!)² / (k! (8x)ᵏ).
fn i0_asymptotic_tail(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        let kf = k as f64;
        let next = term * (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * x);
        if next >= term {
            break;
        }
        term = next;
        sum += term;
        if term < 1e-17 {
            break;
        }
    }
    sum
}

/// Von-Mises parameters on planar unit vectors. The mean direction is stored
/// as an angle (radians, in `(−π, π]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VonMisesParams {
    pub mu: f64,
    pub kappa: f64,
}

impl VonMisesParams {
    pub fn new(mu: f64, kappa: f64) -> Result<Self, DistError> {
        if !mu.is_finite() {
            return Err(DistError::InvalidParameter { name: "mu", value: mu });
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(DistError::InvalidParameter { name: "kappa", value: kappa });
        }
        Ok(VonMisesParams { mu: wrap_angle(mu), kappa })
    }

    pub fn uniform() -> Self {
        VonMisesParams { mu: 0.0, kappa: 0.0 }
    }

    pub fn from_direction(direction: Vec2, kappa: f64) -> Result<Self, DistError> {
        Self::new(direction.angle(), kappa)
    }

    pub fn mean_direction(&self) -> Vec2 {
        Vec2::from_angle(self.mu)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        Self::new(self.mu, self.kappa).map(|_| ())
    }

    /// Draws a unit vector (Best–Fisher rejection sampler).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        let k = self.kappa;
        if k < 1e-8 {
            return Vec2::from_angle(rng.random_range(-PI..PI));
        }
        let tau = 1.0 + (1.0 + 4.0 * k * k).sqrt();
        let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * k);
        let r = (1.0 + rho * rho) / (2.0 * rho);
        loop {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let u3: f64 = rng.random();
            let z = (PI * u1).cos();
            let f = (1.0 + r * z) / (r + z);
            let c = k * (r - f);
            if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                let theta = f.clamp(-1.0, 1.0).acos();
                let theta = if u3 < 0.5 { -theta } else { theta };
                return Vec2::from_angle(self.mu + theta);
            }
        }
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, DistError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(DistError::InvalidParameter { name: "alpha", value: alpha });
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(DistError::InvalidParameter { name: "beta", value: beta });
        }
        Ok(BetaParams { alpha, beta })
    }

    pub fn uniform() -> Self {
        BetaParams { alpha: 1.0, beta: 1.0 }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        Self::new(self.alpha, self.beta).map(|_| ())
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// 1D Gaussian; `sigma` is the variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianParams {
    pub g: f64,
    pub sigma: f64,
}

impl GaussianParams {
    pub fn new(g: f64, sigma: f64) -> Result<Self, DistError> {
        if !g.is_finite() {
            return Err(DistError::InvalidParameter { name: "g", value: g });
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DistError::InvalidParameter { name: "sigma", value: sigma });
        }
        Ok(GaussianParams { g, sigma })
    }

    pub fn validate(&self) -> Result<(), DistError> {
        Self::new(self.g, self.sigma).map(|_| ())
    }
}

pub fn vonmises_pdf(x: Vec2, p: &VonMisesParams) -> f64 {
    vonmises_ln_pdf(x, p).exp()
}

pub fn vonmises_ln_pdf(x: Vec2, p: &VonMisesParams) -> f64 {
    VonMisesKernel::new(p).ln_pdf(x)
}

pub fn beta_pdf(d_bar: f64, p: &BetaParams) -> Result<f64, DistError> {
    BetaKernel::new(p).pdf(d_bar)
}

pub fn beta_ln_pdf(d_bar: f64, p: &BetaParams) -> Result<f64, DistError> {
    beta_pdf(d_bar, p).map(f64::ln)
}

pub fn gaussian_pdf(d: f64, p: &GaussianParams) -> f64 {
    gaussian_ln_pdf(d, p).exp()
}

pub fn gaussian_ln_pdf(d: f64, p: &GaussianParams) -> f64 {
    GaussianKernel::new(p).ln_pdf(d)
}

/// Von-Mises density with its normalizer precomputed.
#[derive(Debug, Clone, Copy)]
pub struct VonMisesKernel {
    dir: Vec2,
    kappa: f64,
    ln_norm: f64,
}

impl VonMisesKernel {
    pub fn new(p: &VonMisesParams) -> Self {
        VonMisesKernel { dir: p.mean_direction(), kappa: p.kappa, ln_norm: LN_2PI + ln_bessel_i0(p.kappa) }
    }

    pub fn ln_pdf(&self, x: Vec2) -> f64 {
        self.kappa * self.dir.dot(x) - self.ln_norm
    }

    /// Value of the uniform circular density, ln(1/2π).
    pub fn ln_uniform() -> f64 {
        -LN_2PI
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BetaKernel {
    alpha: f64,
    beta: f64,
    ln_b: f64,
}

impl BetaKernel {
    pub fn new(p: &BetaParams) -> Self {
        BetaKernel { alpha: p.alpha, beta: p.beta, ln_b: ln_beta(p.alpha, p.beta) }
    }

    /// Density with the endpoint limit convention: divergent endpoints are
    /// capped at [`BETA_PDF_MAX`].
    pub fn pdf(&self, x: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(DistError::Domain(x));
        }
        let edge = |shape: f64, other_ln: f64| -> f64 {
            if shape < 1.0 {
                BETA_PDF_MAX
            } else if shape == 1.0 {
                (other_ln - self.ln_b).exp().min(BETA_PDF_MAX)
            } else {
                0.0
            }
        };
        // at an endpoint the other factor is 1, so its log is 0
        if x == 0.0 {
            return Ok(edge(self.alpha, 0.0));
        }
        if x == 1.0 {
            return Ok(edge(self.beta, 0.0));
        }
        let ln = (self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (-x).ln_1p() - self.ln_b;
        Ok(ln.exp().min(BETA_PDF_MAX))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GaussianKernel {
    g: f64,
    sigma: f64,
    ln_norm: f64,
}

impl GaussianKernel {
    pub fn new(p: &GaussianParams) -> Self {
        GaussianKernel { g: p.g, sigma: p.sigma, ln_norm: 0.5 * (LN_2PI + p.sigma.ln()) }
    }

    pub fn ln_pdf(&self, d: f64) -> f64 {
        let z = d - self.g;
        -z * z / (2.0 * self.sigma) - self.ln_norm
    }
}

/// A value paired with its E-step responsibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample<T> {
    pub value: T,
    pub weight: f64,
}

impl<T> WeightedSample<T> {
    pub fn new(value: T, weight: f64) -> Self {
        WeightedSample { value, weight }
    }

    pub fn unit(value: T) -> Self {
        WeightedSample { value, weight: 1.0 }
    }
}

fn total_weight<T>(samples: &[WeightedSample<T>]) -> Result<f64, FitError> {
    let mut total = 0.0;
    for s in samples {
        if !(s.weight.is_finite() && s.weight >= 0.0) {
            return Err(FitError::InvalidWeight(s.weight));
        }
        total += s.weight;
    }
    if total > 0.0 && total.is_finite() {
        Ok(total)
    } else {
        Err(FitError::NoWeight)
    }
}

/// Weighted mean and (biased) variance in one fixed-order pass each.
fn weighted_moments(samples: &[WeightedSample<f64>]) -> Result<(f64, f64), FitError> {
    let w = total_weight(samples)?;
    let mean = samples.iter().map(|s| s.weight * s.value).sum::<f64>() / w;
    let var = samples.iter().map(|s| s.weight * (s.value - mean).powi(2)).sum::<f64>() / w;
    Ok((mean, var))
}

/// First-order concentration estimate from the mean resultant length,
/// κ = R̄(2 − R̄²)/(1 − R̄²), before capping.
pub fn sra_kappa(r_bar: f64) -> f64 {
    r_bar * (2.0 - r_bar * r_bar) / (1.0 - r_bar * r_bar)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VonMisesFit {
    pub params: VonMisesParams,
    pub mean_resultant_length: f64,
    pub warning: Option<FitWarning>,
}

pub fn fit_vonmises_weighted(samples: &[WeightedSample<Vec2>]) -> Result<VonMisesFit, FitError> {
    let w = total_weight(samples)?;
    let resultant = samples.iter().fold(Vec2::ZERO, |acc, s| acc + s.value * s.weight);
    let len = resultant.norm();
    let r_bar = (len / w).min(1.0);
    if len <= 1e-12 * w {
        return Ok(VonMisesFit {
            params: VonMisesParams::uniform(),
            mean_resultant_length: r_bar,
            warning: Some(FitWarning::DegenerateFit),
        });
    }
    let mu = resultant.angle();
    let raw = if r_bar < 1.0 { sra_kappa(r_bar) } else { f64::INFINITY };
    let (kappa, warning) = if raw >= KAPPA_MAX { (KAPPA_MAX, Some(FitWarning::KappaCapped)) } else { (raw, None) };
    Ok(VonMisesFit { params: VonMisesParams { mu: wrap_angle(mu), kappa }, mean_resultant_length: r_bar, warning })
}

/// Method-of-moments Beta estimate.
pub fn fit_beta_weighted(samples: &[WeightedSample<f64>]) -> Result<BetaParams, FitError> {
    let (m, v) = weighted_moments(samples)?;
    if v <= VARIANCE_EPS {
        return Err(FitError::ZeroVariance(v));
    }
    let bound = m * (1.0 - m);
    if v >= bound {
        return Err(FitError::MomentMismatch { mean: m, variance: v });
    }
    let common = bound / v - 1.0;
    Ok(BetaParams { alpha: m * common, beta: (1.0 - m) * common })
}

pub fn fit_gaussian_weighted(samples: &[WeightedSample<f64>]) -> Result<GaussianParams, FitError> {
    let (g, v) = weighted_moments(samples)?;
    Ok(GaussianParams { g, sigma: v.max(SIGMA_MIN) })
}
