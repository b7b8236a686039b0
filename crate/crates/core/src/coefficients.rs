//! Drift and jump-kernel operators in spectral coordinates.
//!
//! `CoefficientOperator` is the generic contract (coercivity, growth,
//! monotonicity, all checked numerically by `verify_conditions`);
//! `PollutantCoefficients` is the shipped concrete instance: affine drift
//! A(u)_j = −(λ_j + α) u_j + q_j and state-free jumps G(i, a)_j = a g_j^i
//! with kernel g_j^i = φ_j(κ_i) e^{−2 c κ_i}.

use crate::error::{Error, Result};
use crate::model::{ModelParams, SpectralCoeffs};
use crate::spectral::{bracket, eigenfunction_value, eigenvalue, rho_density, sobolev_norm_sq, theta_map};

/// Contract for drift/jump coefficient pairs driving the dynamics.
pub trait CoefficientOperator: Sync {
    /// Drift A(t, u).
    fn drift(&self, t: f64, u: &SpectralCoeffs) -> Result<SpectralCoeffs>;

    /// Jump amplitude G(t, u, (i, a)).
    fn jump(&self, t: f64, u: &SpectralCoeffs, i: usize, a: f64) -> Result<SpectralCoeffs>;

    /// Declared Sobolev indices (p, q), q >= p.
    fn indices(&self) -> (u32, u32);

    fn params(&self) -> &ModelParams;

    /// Mode truncation level d.
    fn dim(&self) -> usize;

    /// Whether G(t, u, m) is independent of u; enables cached compensators.
    fn jump_state_free(&self) -> bool {
        false
    }

    /// Mean jump measure q(t, u) = Σ_i f_i E_{F_i}[G(t, u, (i, a))].
    fn jump_mean(&self, t: f64, u: &SpectralCoeffs) -> Result<SpectralCoeffs> {
        let mut acc = SpectralCoeffs::zeros(self.dim());
        for (i, src) in self.params().sources.iter().enumerate() {
            for j in 0..=self.dim() {
                acc.coeffs[j] += src.rate
                    * src
                        .marks
                        .expect(|a| self.jump(t, u, i, a).map(|g| g.coeffs[j]).unwrap_or(f64::NAN), 0.0);
            }
        }
        Ok(acc)
    }
}

/// The pollutant-spread instantiation on the eigenbasis.
#[derive(Debug, Clone)]
pub struct PollutantCoefficients {
    params: ModelParams,
    d: usize,
    /// kernel[i][j] = φ_j(κ_i) e^{−2 c κ_i}
    kernel: Vec<Vec<f64>>,
    /// mean mark a_i = E_{F_i}[a]
    mean_marks: Vec<f64>,
    /// source vector q_j = Σ_i a_i f_i g_j^i
    source: SpectralCoeffs,
}

impl PollutantCoefficients {
    pub fn new(params: ModelParams, d: usize) -> Result<Self> {
        params.validate()?;
        let mut kernel = Vec::with_capacity(params.sources.len());
        let mut mean_marks = Vec::with_capacity(params.sources.len());
        let mut source = SpectralCoeffs::zeros(d);
        for src in &params.sources {
            let dens = rho_density(src.kappa, &params);
            let row: Vec<f64> = (0..=d)
                .map(|j| eigenfunction_value(j, src.kappa, &params).map(|v| v * dens))
                .collect::<Result<_>>()?;
            let a_mean = src.marks.mean();
            for j in 0..=d {
                source.coeffs[j] += a_mean * src.rate * row[j];
            }
            kernel.push(row);
            mean_marks.push(a_mean);
        }
        Ok(Self {
            params,
            d,
            kernel,
            mean_marks,
            source,
        })
    }

    /// kernel entry g_j^i.
    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        self.kernel[i][j]
    }

    pub fn kernel_row(&self, i: usize) -> &[f64] {
        &self.kernel[i]
    }

    pub fn mean_mark(&self, i: usize) -> f64 {
        self.mean_marks[i]
    }

    /// The constant source vector q.
    pub fn source(&self) -> &SpectralCoeffs {
        &self.source
    }

    /// Relaxation rate α + λ_j of mode j.
    pub fn decay_rate(&self, j: usize) -> f64 {
        self.params.alpha + eigenvalue(j, &self.params)
    }

    fn check_dim(&self, u: &SpectralCoeffs) -> Result<()> {
        if u.truncation() != self.d {
            Err(Error::DimensionMismatch {
                expected: self.d,
                got: u.truncation(),
            })
        } else {
            Ok(())
        }
    }

    fn check_source(&self, i: usize) -> Result<()> {
        if i >= self.params.sources.len() {
            Err(Error::InvalidSource {
                index: i,
                count: self.params.sources.len(),
            })
        } else {
            Ok(())
        }
    }
}

impl CoefficientOperator for PollutantCoefficients {
    fn drift(&self, _t: f64, u: &SpectralCoeffs) -> Result<SpectralCoeffs> {
        self.check_dim(u)?;
        let coeffs = (0..=self.d)
            .map(|j| -self.decay_rate(j) * u.coeffs[j] + self.source.coeffs[j])
            .collect();
        Ok(SpectralCoeffs::from_vec(coeffs))
    }

    fn jump(&self, _t: f64, _u: &SpectralCoeffs, i: usize, a: f64) -> Result<SpectralCoeffs> {
        self.check_source(i)?;
        if !(a >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jump magnitude must be nonnegative, got {a}"
            )));
        }
        Ok(SpectralCoeffs::from_vec(
            self.kernel[i].iter().map(|g| a * g).collect(),
        ))
    }

    fn indices(&self) -> (u32, u32) {
        (1, 2)
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn jump_state_free(&self) -> bool {
        true
    }

    fn jump_mean(&self, _t: f64, _u: &SpectralCoeffs) -> Result<SpectralCoeffs> {
        Ok(self.source.clone())
    }
}

/// Measured constants from a sample-based check of the operator contract.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    /// smallest K with 2 A(t,u)[θ_p u] <= K (1 + ‖u‖²_{−p}) over the samples
    pub coercivity_k: f64,
    /// smallest K with ‖A(t,u)‖²_{−q} <= K (1 + ‖u‖²_{−p})
    pub growth_drift_k: f64,
    /// smallest K with Σ_i f_i E‖G(t,u,(i,a))‖²_{−p} <= K (1 + ‖u‖²_{−p})
    pub growth_jump_k: f64,
    /// smallest K bounding the monotonicity quadratic form over sampled pairs
    pub monotonicity_k: f64,
    /// E[exp(δ a²)] finite for every source's recorded δ
    pub exp_integrable: bool,
    /// G observed independent of the state on the samples
    pub jump_state_free: bool,
}

/// Evaluate the operator contract over sampled (t, u, u') triples.
///
/// Report-only falsifier: returns the smallest constants consistent with the
/// samples; it cannot prove the conditions over the whole space.
pub fn verify_conditions(
    op: &dyn CoefficientOperator,
    samples: &[(f64, SpectralCoeffs, SpectralCoeffs)],
    _tolerance: f64,
) -> Result<ConditionReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "contract verification needs at least one sample".into(),
        ));
    }
    let (p, q) = op.indices();
    let (p, q) = (p as i32, q as i32);
    let params = op.params();
    let mut coercivity_k = f64::NEG_INFINITY;
    let mut growth_drift_k = f64::NEG_INFINITY;
    let mut growth_jump_k = f64::NEG_INFINITY;
    let mut monotonicity_k = f64::NEG_INFINITY;
    let jump_state_free = std::cell::Cell::new(true);

    for (t, u1, u2) in samples {
        let a1 = op.drift(*t, u1)?;
        let a2 = op.drift(*t, u2)?;
        let denom = 1.0 + sobolev_norm_sq(u1, -p, params);

        let coer = 2.0 * bracket(&a1, &theta_map(u1, p as u32, params), 0, params);
        coercivity_k = coercivity_k.max(coer / denom);

        growth_drift_k = growth_drift_k.max(sobolev_norm_sq(&a1, -q, params) / denom);

        let mut jump_p = 0.0;
        let mut jump_diff_q = 0.0;
        for (i, src) in params.sources.iter().enumerate() {
            jump_p += src.rate
                * src.marks.expect(
                    |a| {
                        op.jump(*t, u1, i, a)
                            .map(|g| sobolev_norm_sq(&g, -p, params))
                            .unwrap_or(f64::NAN)
                    },
                    0.0,
                );
            jump_diff_q += src.rate
                * src.marks.expect(
                    |a| {
                        let g1 = op.jump(*t, u1, i, a).unwrap();
                        let g2 = op.jump(*t, u2, i, a).unwrap();
                        if g1.sup_gap(&g2) > 0.0 {
                            jump_state_free.set(false);
                        }
                        let mut diff = g1;
                        diff.add_scaled(&g2, -1.0);
                        sobolev_norm_sq(&diff, -q, params)
                    },
                    0.0,
                );
        }
        growth_jump_k = growth_jump_k.max(jump_p / denom);

        let mut du = u1.clone();
        du.add_scaled(u2, -1.0);
        let du_q = sobolev_norm_sq(&du, -q, params);
        if du_q > 0.0 {
            let mut da = a1;
            da.add_scaled(&a2, -1.0);
            let form = 2.0 * sobolev_inner_q(&da, &du, -q, params) + jump_diff_q;
            monotonicity_k = monotonicity_k.max(form / du_q);
        }
    }

    Ok(ConditionReport {
        coercivity_k,
        growth_drift_k,
        growth_jump_k,
        monotonicity_k,
        exp_integrable: params.sources.iter().all(|s| s.marks.exp_square_integrable()),
        jump_state_free: jump_state_free.get(),
    })
}

fn sobolev_inner_q(u: &SpectralCoeffs, v: &SpectralCoeffs, n: i32, params: &ModelParams) -> f64 {
    crate::spectral::sobolev_inner(u, v, n, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkDistribution, SourceSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_params() -> ModelParams {
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
    fn drift_at_zero_is_source_vector() {
        let op = PollutantCoefficients::new(reference_params(), 8).unwrap();
        let a0 = op.drift(0.0, &SpectralCoeffs::zeros(8)).unwrap();
        for j in 0..=8 {
            assert_relative_eq!(a0.coeffs[j], op.kernel_entry(0, j), epsilon = 1e-14);
        }
        // mode 0 entry: φ_0(κ) ρ(κ) = 1/sqrt(π)
        assert_relative_eq!(
            a0.coeffs[0],
            1.0 / std::f64::consts::PI.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn drift_is_affine() {
        let op = PollutantCoefficients::new(reference_params(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = SpectralCoeffs::from_vec((0..7).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let v = SpectralCoeffs::from_vec((0..7).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let mut uv = u.clone();
        uv.add_scaled(&v, 1.0);
        let mut lhs = op.drift(0.0, &uv).unwrap();
        lhs.add_scaled(&op.drift(0.0, &u).unwrap(), -1.0);
        lhs.add_scaled(&op.drift(0.0, &v).unwrap(), -1.0);
        lhs.add_scaled(&op.drift(0.0, &SpectralCoeffs::zeros(6)).unwrap(), 1.0);
        assert!(lhs.h_norm() < 1e-12);
    }

    #[test]
    fn jump_homogeneous_and_state_free() {
        let op = PollutantCoefficients::new(reference_params(), 8).unwrap();
        let u = SpectralCoeffs::basis(3, 8);
        let v = SpectralCoeffs::zeros(8);
        let g1 = op.jump(0.0, &u, 0, 1.0).unwrap();
        let g1v = op.jump(0.5, &v, 0, 1.0).unwrap();
        assert_eq!(g1, g1v);
        let g2 = op.jump(0.0, &u, 0, 2.0).unwrap();
        for j in 0..=8 {
            assert_relative_eq!(g2.coeffs[j], 2.0 * g1.coeffs[j]);
        }
        let g0 = op.jump(0.0, &u, 0, 0.0).unwrap();
        assert!(g0.h_norm() == 0.0);
        // mode 0 at unit mark: a / sqrt(π)
        assert_relative_eq!(
            g1.coeffs[0],
            1.0 / std::f64::consts::PI.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let op = PollutantCoefficients::new(reference_params(), 8).unwrap();
        assert!(op.drift(0.0, &SpectralCoeffs::zeros(5)).is_err());
        assert!(op.jump(0.0, &SpectralCoeffs::zeros(8), 3, 1.0).is_err());
        assert!(op.jump(0.0, &SpectralCoeffs::zeros(8), 0, -1.0).is_err());
    }

    #[test]
    fn dissipativity_coefficientwise() {
        let op = PollutantCoefficients::new(reference_params(), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let u1 = SpectralCoeffs::from_vec((0..11).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let u2 = SpectralCoeffs::from_vec((0..11).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let mut da = op.drift(0.0, &u1).unwrap();
            da.add_scaled(&op.drift(0.0, &u2).unwrap(), -1.0);
            let mut du = u1.clone();
            du.add_scaled(&u2, -1.0);
            let inner = crate::spectral::sobolev_inner(&da, &du, -2, op.params());
            assert!(inner <= 1e-12);
        }
    }

    #[test]
    fn drift_growth_with_computed_constant() {
        let p = reference_params();
        let op = PollutantCoefficients::new(p.clone(), 12).unwrap();
        let (pp, q) = op.indices();
        let cmax = (0..=12)
            .map(|j| {
                let lam = eigenvalue(j, &p);
                (lam + p.alpha).powi(2) * (1.0 + lam).powi(-2 * (q as i32 - pp as i32))
            })
            .fold(0.0, f64::max);
        let a0 = op.drift(0.0, &SpectralCoeffs::zeros(12)).unwrap();
        let a0_q = sobolev_norm_sq(&a0, -(q as i32), &p);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u = SpectralCoeffs::from_vec((0..13).map(|_| rng.gen_range(-5.0..5.0)).collect());
            let au = op.drift(0.0, &u).unwrap();
            let lhs = sobolev_norm_sq(&au, -(q as i32), &p);
            let rhs = 2.0 * cmax * sobolev_norm_sq(&u, -(pp as i32), &p) + 2.0 * a0_q;
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn condition_report_reference_model() {
        let op = PollutantCoefficients::new(reference_params(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<_> = (0..100)
            .map(|_| {
                let u1 =
                    SpectralCoeffs::from_vec((0..9).map(|_| rng.gen_range(-2.0..2.0)).collect());
                let u2 =
                    SpectralCoeffs::from_vec((0..9).map(|_| rng.gen_range(-2.0..2.0)).collect());
                (rng.gen_range(0.0..1.0), u1, u2)
            })
            .collect();
        let report = verify_conditions(&op, &samples, 1e-10).unwrap();
        assert!(report.exp_integrable);
        assert!(report.jump_state_free);
        // state-free jumps contribute nothing and the drift is dissipative
        assert!(report.monotonicity_k <= 1e-10);
        assert!(report.coercivity_k.is_finite());
        assert!(report.growth_drift_k.is_finite());
        assert!(report.growth_jump_k.is_finite());
    }

    #[test]
    fn identical_states_give_zero_monotonicity_form() {
        let op = PollutantCoefficients::new(reference_params(), 4).unwrap();
        let u = SpectralCoeffs::basis(1, 4);
        let samples = vec![(0.0, u.clone(), u)];
        let report = verify_conditions(&op, &samples, 1e-10).unwrap();
        assert_eq!(report.monotonicity_k, f64::NEG_INFINITY);
    }
}
