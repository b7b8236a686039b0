//! Physical model description and spectral state vectors.
//!
//! The model is a one-dimensional convection-diffusion equation on [0, ell]
//! with dissipation rate `alpha` and point sources releasing random loads
//! according to independent Poisson streams.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Distribution of jump magnitudes at a source.
///
/// All shipped families have a Gaussian-dominated tail, so `exp(delta * a^2)`
/// is integrable for the recorded `delta` and exponential tilts of any slope
/// stay integrable.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkDistribution {
    /// Every jump has the fixed magnitude `a0 > 0`.
    PointMass { a0: f64 },
    /// Uniform on (0, a_max).
    Uniform { a_max: f64 },
    /// |N(0, sigma^2)|.
    HalfNormal { sigma: f64 },
}

impl MarkDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            MarkDistribution::PointMass { a0 } => *a0 > 0.0 && a0.is_finite(),
            MarkDistribution::Uniform { a_max } => *a_max > 0.0 && a_max.is_finite(),
            MarkDistribution::HalfNormal { sigma } => *sigma > 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "mark distribution parameters must be positive and finite: {self:?}"
            )))
        }
    }

    /// Mean jump magnitude.
    pub fn mean(&self) -> f64 {
        match self {
            MarkDistribution::PointMass { a0 } => *a0,
            MarkDistribution::Uniform { a_max } => 0.5 * a_max,
            MarkDistribution::HalfNormal { sigma } => {
                sigma * (2.0 / std::f64::consts::PI).sqrt()
            }
        }
    }

    /// E[a^2].
    pub fn second_moment(&self) -> f64 {
        match self {
            MarkDistribution::PointMass { a0 } => a0 * a0,
            MarkDistribution::Uniform { a_max } => a_max * a_max / 3.0,
            MarkDistribution::HalfNormal { sigma } => sigma * sigma,
        }
    }

    /// A delta for which E[exp(delta a^2)] is finite.
    ///
    /// Bounded-support families take delta = 1; the half-normal records
    /// 1/(4 sigma^2), strictly below the 1/(2 sigma^2) divergence threshold.
    pub fn sub_gaussian_delta(&self) -> f64 {
        match self {
            MarkDistribution::PointMass { .. } | MarkDistribution::Uniform { .. } => 1.0,
            MarkDistribution::HalfNormal { sigma } => 1.0 / (4.0 * sigma * sigma),
        }
    }

    /// Whether E[exp(delta a^2)] < infinity for the recorded delta.
    pub fn exp_square_integrable(&self) -> bool {
        match self {
            MarkDistribution::PointMass { .. } | MarkDistribution::Uniform { .. } => true,
            MarkDistribution::HalfNormal { sigma } => {
                self.sub_gaussian_delta() * 2.0 * sigma * sigma < 1.0
            }
        }
    }

    /// Upper end of the support, when bounded.
    pub fn support_bound(&self) -> Option<f64> {
        match self {
            MarkDistribution::PointMass { a0 } => Some(*a0),
            MarkDistribution::Uniform { a_max } => Some(*a_max),
            MarkDistribution::HalfNormal { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkDistribution::PointMass { a0 } => *a0,
            MarkDistribution::Uniform { a_max } => rng.gen::<f64>() * a_max,
            MarkDistribution::HalfNormal { sigma } => {
                let n = Normal::new(0.0, *sigma).expect("sigma validated");
                n.sample(rng).abs()
            }
        }
    }

    /// Nodes and weights (a_k, w_k) with E[f(a)] ≈ Σ_k w_k f(a_k).
    ///
    /// `tilt_hint` is the slope k of any exponential factor exp(k a) inside
    /// the integrand; it widens the quadrature window for the half-normal so
    /// the tilted mass is captured. Exact for point masses, Gauss-Legendre
    /// otherwise.
    pub fn quadrature(&self, tilt_hint: f64) -> Vec<(f64, f64)> {
        match self {
            MarkDistribution::PointMass { a0 } => vec![(*a0, 1.0)],
            MarkDistribution::Uniform { a_max } => {
                let (nodes, weights) = gauss_legendre(64);
                let half = 0.5 * a_max;
                nodes
                    .iter()
                    .zip(weights.iter())
                    .map(|(x, w)| (half * (1.0 + x), 0.5 * w))
                    .collect()
            }
            MarkDistribution::HalfNormal { sigma } => {
                let upper = (tilt_hint * sigma * sigma).max(0.0) + 12.0 * sigma;
                let norm = (2.0 / std::f64::consts::PI).sqrt() / sigma;
                let (nodes, weights) = gauss_legendre(128);
                let half = 0.5 * upper;
                nodes
                    .iter()
                    .zip(weights.iter())
                    .map(|(x, w)| {
                        let a = half * (1.0 + x);
                        (a, half * w * norm * (-a * a / (2.0 * sigma * sigma)).exp())
                    })
                    .collect()
            }
        }
    }

    /// E[f(a)] via `quadrature`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, tilt_hint: f64) -> f64 {
        self.quadrature(tilt_hint)
            .into_iter()
            .map(|(a, w)| w * f(a))
            .sum()
    }

    /// Probability mass of the interval [lo, hi] intersected with the support.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match self {
            MarkDistribution::PointMass { a0 } => {
                if lo <= *a0 && *a0 <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            MarkDistribution::Uniform { a_max } => {
                let lo = lo.max(0.0);
                let hi = hi.min(*a_max);
                ((hi - lo) / a_max).max(0.0)
            }
            MarkDistribution::HalfNormal { sigma } => {
                let lo = lo.max(0.0);
                let z = |x: f64| statrs::function::erf::erf(x / (sigma * std::f64::consts::SQRT_2));
                (z(hi) - z(lo)).max(0.0)
            }
        }
    }

    /// E[a · 1{lo <= a <= hi}].
    pub fn interval_first_moment(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match self {
            MarkDistribution::PointMass { a0 } => {
                if lo <= *a0 && *a0 <= hi {
                    *a0
                } else {
                    0.0
                }
            }
            MarkDistribution::Uniform { a_max } => {
                let lo = lo.max(0.0);
                let hi = hi.min(*a_max);
                if hi <= lo {
                    0.0
                } else {
                    (hi * hi - lo * lo) / (2.0 * a_max)
                }
            }
            MarkDistribution::HalfNormal { sigma } => {
                let lo = lo.max(0.0);
                let e = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
                (2.0 / std::f64::consts::PI).sqrt() * sigma * (e(lo) - e(hi))
            }
        }
    }
}

/// A point source along the reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    /// Site location in [0, ell].
    pub kappa: f64,
    /// Poisson release rate (1/time).
    pub rate: f64,
    /// Law of jump magnitudes.
    pub marks: MarkDistribution,
}

/// Parameters of the convection-diffusion model on [0, ell].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Diffusion coefficient D > 0.
    pub diffusion: f64,
    /// Convection velocity V.
    pub velocity: f64,
    /// Dissipation rate alpha >= 0.
    pub alpha: f64,
    /// Domain length ell > 0.
    pub ell: f64,
    pub sources: Vec<SourceSpec>,
}

impl ModelParams {
    /// Drift parameter c = V / (2D).
    pub fn c(&self) -> f64 {
        self.velocity / (2.0 * self.diffusion)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(Error::InvalidParameter("diffusion must be > 0".into()));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::InvalidParameter("ell must be > 0".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be >= 0".into()));
        }
        if !self.velocity.is_finite() {
            return Err(Error::InvalidParameter("velocity must be finite".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(0.0 <= s.kappa && s.kappa <= self.ell) {
                return Err(Error::InvalidParameter(format!(
                    "source {i}: kappa must lie in [0, ell]"
                )));
            }
            if !(s.rate > 0.0 && s.rate.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "source {i}: rate must be > 0"
                )));
            }
            s.marks.validate()?;
        }
        Ok(())
    }
}

/// A truncated spectral state: H-inner-product coordinates on modes 0..=d.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    pub coeffs: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn zeros(d: usize) -> Self {
        Self {
            coeffs: vec![0.0; d + 1],
        }
    }

    /// Unit coefficient on mode `j`, truncated at `d`.
    pub fn basis(j: usize, d: usize) -> Self {
        let mut c = Self::zeros(d);
        c.coeffs[j] = 1.0;
        c
    }

    pub fn from_vec(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Truncation level d (highest mode index).
    pub fn truncation(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += s * b;
        }
    }

    /// Plain Euclidean norm of the coefficient vector (the H = Phi_0 norm).
    pub fn h_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn sup_gap(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams {
            diffusion: 1.0,
            velocity: 0.0,
            alpha: 1.0,
            ell: std::f64::consts::PI,
            sources: vec![SourceSpec {
                kappa: std::f64::consts::FRAC_PI_2,
                rate: 1.0,
                marks: MarkDistribution::PointMass { a0: 1.0 },
            }],
        }
    }

    #[test]
    fn validation_accepts_reference_model() {
        params().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut p = params();
        p.alpha = -0.5;
        assert!(p.validate().is_err());
        let mut p = params();
        p.sources[0].kappa = 10.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn mark_moments() {
        let u = MarkDistribution::Uniform { a_max: 2.0 };
        assert_relative_eq!(u.mean(), 1.0);
        assert_relative_eq!(u.second_moment(), 4.0 / 3.0);
        let h = MarkDistribution::HalfNormal { sigma: 0.5 };
        assert_relative_eq!(h.expect(|a| a, 0.0), h.mean(), epsilon = 1e-10);
        assert_relative_eq!(h.expect(|a| a * a, 0.0), 0.25, epsilon = 1e-10);
        assert!(h.exp_square_integrable());
    }

    #[test]
    fn interval_moments_consistent_with_quadrature() {
        let h = MarkDistribution::HalfNormal { sigma: 0.6 };
        assert_relative_eq!(h.interval_mass(0.0, 50.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            h.interval_first_moment(0.0, 50.0),
            h.mean(),
            epsilon = 1e-12
        );
        // partial mass against a dense Riemann sum
        let (lo, hi) = (0.3, 1.1);
        let n = 200_000;
        let w = (hi - lo) / n as f64;
        let dens = |a: f64| {
            (2.0 / std::f64::consts::PI).sqrt() / 0.6 * (-a * a / (2.0 * 0.36)).exp()
        };
        let mut mass = 0.0;
        let mut first = 0.0;
        for k in 0..n {
            let a = lo + (k as f64 + 0.5) * w;
            mass += dens(a) * w;
            first += a * dens(a) * w;
        }
        assert_relative_eq!(h.interval_mass(lo, hi), mass, max_relative = 1e-8);
        assert_relative_eq!(h.interval_first_moment(lo, hi), first, max_relative = 1e-8);
        let u = MarkDistribution::Uniform { a_max: 2.0 };
        assert_relative_eq!(u.interval_first_moment(0.5, 1.5), (2.25 - 0.25) / 4.0);
    }

    #[test]
    fn tilted_half_normal_expectation() {
        // E[exp(k a)] for |N(0, sigma^2)| = 2 exp(k^2 s^2 / 2) Phi(k s), checked
        // against the quadrature path at a few slopes.
        let sigma: f64 = 0.7;
        let h = MarkDistribution::HalfNormal { sigma };
        for k in [0.0, 0.5, 2.0, 5.0] {
            let quad = h.expect(|a| (k * a).exp(), k);
            let exact = (k * k * sigma * sigma / 2.0).exp()
                * (1.0 + erf(k * sigma / std::f64::consts::SQRT_2));
            assert_relative_eq!(quad, exact, max_relative = 1e-5);
        }
    }

    // Abramowitz-Stegun 7.1.26, 1e-7 accurate; test-only oracle.
    fn erf(x: f64) -> f64 {
        let sign = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }
}
