//! Marked Poisson streams on [0, T] × sources × magnitudes, controlled
//! (intensity-tilted) sampling by thinning, the entropy cost of a tilt, and
//! the Girsanov log-weights that convert tilted-sample averages back to the
//! nominal measure.

use crate::error::{Error, Result};
use crate::model::{MarkDistribution, ModelParams};
use crate::quad::integrate_gl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Number of Gauss-Legendre nodes for time integrals of smooth tilt profiles.
const TIME_NODES: usize = 128;

/// Entropy price of tilting an intensity by the factor r.
///
/// l(r) = r ln r − r + 1, with the limit convention l(0) = 1.
pub fn entropy_l(r: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "entropy argument must be nonnegative, got {r}"
        )));
    }
    Ok(l(r))
}

pub(crate) fn l(r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else {
        r * r.ln() - r + 1.0
    }
}

/// One release event of a marked point process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub source: usize,
    pub mark: f64,
}

/// A realized marked point process on (0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    /// time-sorted events
    pub events: Vec<JumpEvent>,
    pub horizon: f64,
    pub epsilon: f64,
}

impl JumpPath {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for e in &self.events {
            if !(e.t > prev && e.t <= self.horizon) {
                return Err(Error::Invalid(format!(
                    "event times must be strictly increasing in (0, {}]",
                    self.horizon
                )));
            }
            if e.mark < 0.0 {
                return Err(Error::Invalid("marks must be nonnegative".into()));
            }
            prev = e.t;
        }
        Ok(())
    }

    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        self.events.iter().filter(|e| lo < e.t && e.t <= hi).count()
    }
}

/// A sum of decaying exponentials H(s) = Σ_k coef_k exp(−rate_k (T − s)),
/// the time profile multiplying the mark in an exponential tilt.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpSumProfile {
    /// (coef, rate) pairs with rate >= 0
    pub terms: Vec<(f64, f64)>,
    pub horizon: f64,
}

impl ExpSumProfile {
    pub fn new(terms: Vec<(f64, f64)>, horizon: f64) -> Self {
        Self { terms, horizon }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|(c, r)| c * (-r * (self.horizon - s)).exp())
            .sum()
    }

    /// Rigorous upper bound of H over [0, T]: positive terms peak at s = T,
    /// negative terms at s = 0.
    pub fn upper_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|(c, r)| {
                if *c >= 0.0 {
                    *c
                } else {
                    c * (-r * self.horizon).exp()
                }
            })
            .sum()
    }

    pub fn lower_bound(&self) -> f64 {
        -self.negated().upper_bound()
    }

    fn negated(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(c, r)| (-c, *r)).collect(),
            horizon: self.horizon,
        }
    }

    /// sup over [0, T] of |H|, via the two rigorous one-sided bounds.
    pub fn sup_abs_bound(&self) -> f64 {
        self.upper_bound().abs().max(self.lower_bound().abs())
    }
}

/// Exponential intensity tilt g(s, i, a) = exp(beta · a · H_i(s)).
#[derive(Debug, Clone, PartialEq)]
pub struct TiltControl {
    pub beta: f64,
    /// per-source time profile H_i
    pub profiles: Vec<ExpSumProfile>,
    pub horizon: f64,
    /// per-source K_i >= 0 with g(s, i, a) <= exp(a K_i) on the horizon
    mark_exponent_bounds: Vec<f64>,
}

impl TiltControl {
    pub fn new(beta: f64, profiles: Vec<ExpSumProfile>, horizon: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::InvalidParameter("tilt slope must be finite".into()));
        }
        let mark_exponent_bounds = profiles
            .iter()
            .map(|p| {
                let b = if beta >= 0.0 {
                    beta * p.upper_bound()
                } else {
                    beta * p.lower_bound()
                };
                b.max(0.0)
            })
            .collect();
        Ok(Self {
            beta,
            profiles,
            horizon,
            mark_exponent_bounds,
        })
    }

    /// Tilt exponent slope in the mark: g(s, i, a) = exp(a · slope(s, i)).
    pub fn slope(&self, s: f64, i: usize) -> f64 {
        self.beta * self.profiles[i].value(s)
    }

    pub fn mark_exponent_bound(&self, i: usize) -> f64 {
        self.mark_exponent_bounds[i]
    }
}

/// Piecewise-constant tilt on uniform time bins and uniform mark bins below a
/// per-source cap; identically 1 above the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedControl {
    pub horizon: f64,
    pub time_bins: usize,
    pub mark_bins: usize,
    /// per-source mark cap; values above it take g = 1
    pub mark_caps: Vec<f64>,
    /// values[i][time_bin][mark_bin], all within [1/bound, bound]
    pub values: Vec<Vec<Vec<f64>>>,
    pub bound: f64,
}

impl TabulatedControl {
    pub fn new(
        horizon: f64,
        mark_caps: Vec<f64>,
        values: Vec<Vec<Vec<f64>>>,
        bound: f64,
    ) -> Result<Self> {
        if !(bound >= 1.0 && bound.is_finite()) {
            return Err(Error::InvalidParameter(
                "tabulated control bound must be >= 1 and finite".into(),
            ));
        }
        let time_bins = values.first().map(|v| v.len()).unwrap_or(0);
        let mark_bins = values
            .first()
            .and_then(|v| v.first())
            .map(|v| v.len())
            .unwrap_or(0);
        if time_bins == 0 || mark_bins == 0 || values.len() != mark_caps.len() {
            return Err(Error::InvalidParameter(
                "tabulated control needs at least one time and mark bin per source".into(),
            ));
        }
        for per_source in &values {
            if per_source.len() != time_bins {
                return Err(Error::InvalidParameter(
                    "ragged tabulated control grid".into(),
                ));
            }
            for row in per_source {
                if row.len() != mark_bins {
                    return Err(Error::InvalidParameter(
                        "ragged tabulated control grid".into(),
                    ));
                }
                for &v in row {
                    if !(v >= 1.0 / bound && v <= bound) {
                        return Err(Error::InvalidParameter(format!(
                            "tabulated value {v} outside [{}, {}]",
                            1.0 / bound,
                            bound
                        )));
                    }
                }
            }
        }
        Ok(Self {
            horizon,
            time_bins,
            mark_bins,
            mark_caps,
            values,
            bound,
        })
    }

    fn value(&self, s: f64, i: usize, a: f64) -> f64 {
        if a >= self.mark_caps[i] {
            return 1.0;
        }
        let ti = ((s / self.horizon * self.time_bins as f64) as usize).min(self.time_bins - 1);
        let mi =
            ((a / self.mark_caps[i] * self.mark_bins as f64) as usize).min(self.mark_bins - 1);
        self.values[i][ti][mi]
    }
}

/// A nonnegative intensity tilt g(s, i, a) on [0, T] × sources × marks.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Constant { theta: f64 },
    Tabulated(TabulatedControl),
    Tilt(TiltControl),
}

impl Control {
    pub fn identity() -> Self {
        Control::Constant { theta: 1.0 }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        match self {
            Control::Constant { theta } => {
                if !(*theta > 0.0 && theta.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "constant control must be positive and finite".into(),
                    ));
                }
            }
            Control::Tabulated(t) => {
                if t.values.len() != params.sources.len() {
                    return Err(Error::InvalidParameter(
                        "tabulated control source count mismatch".into(),
                    ));
                }
            }
            Control::Tilt(t) => {
                if t.profiles.len() != params.sources.len() {
                    return Err(Error::InvalidParameter(
                        "tilt control source count mismatch".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, s: f64, i: usize, a: f64) -> f64 {
        match self {
            Control::Constant { theta } => *theta,
            Control::Tabulated(t) => t.value(s, i, a),
            Control::Tilt(t) => (a * t.slope(s, i)).exp(),
        }
    }

    /// Σ_i f_i ∫₀^T E_{F_i}[g(s, i, ·) − 1] ds: closed form in time for
    /// piecewise-constant controls, Gauss-Legendre for smooth tilts.
    pub fn nu_gap_integral(&self, params: &ModelParams, horizon: f64) -> f64 {
        match self {
            Control::Constant { theta } => {
                (theta - 1.0) * params.sources.iter().map(|s| s.rate).sum::<f64>() * horizon
            }
            Control::Tabulated(t) => {
                let dt = t.horizon / t.time_bins as f64;
                let mut acc = 0.0;
                for (i, src) in params.sources.iter().enumerate() {
                    let bin = t.mark_caps[i] / t.mark_bins as f64;
                    for ti in 0..t.time_bins {
                        let lo_t = ti as f64 * dt;
                        if lo_t >= horizon {
                            break;
                        }
                        let span = dt.min(horizon - lo_t);
                        for mi in 0..t.mark_bins {
                            let mass =
                                src.marks.interval_mass(mi as f64 * bin, (mi + 1) as f64 * bin);
                            acc += src.rate * span * mass * (t.values[i][ti][mi] - 1.0);
                        }
                    }
                }
                acc
            }
            Control::Tilt(t) => {
                let mut acc = 0.0;
                for (i, src) in params.sources.iter().enumerate() {
                    acc += src.rate
                        * integrate_gl(
                            |s| {
                                let k = t.slope(s, i);
                                src.marks.expect(|a| (k * a).exp() - 1.0, k.max(0.0))
                            },
                            0.0,
                            horizon,
                            TIME_NODES,
                        );
                }
                acc
            }
        }
    }
}

/// Total entropy cost L_T(g) = Σ_i f_i ∫₀^T E_{F_i}[l(g(s, i, a))] ds.
pub fn cost_lt(control: &Control, params: &ModelParams, horizon: f64) -> Result<f64> {
    control.validate(params)?;
    let cost = match control {
        Control::Constant { theta } => {
            params.sources.iter().map(|s| s.rate).sum::<f64>() * horizon * l(*theta)
        }
        Control::Tilt(t) => {
            let mut acc = 0.0;
            for (i, src) in params.sources.iter().enumerate() {
                acc += src.rate
                    * integrate_gl(
                        |s| {
                            let k = t.slope(s, i);
                            src.marks.expect(|a| l((k * a).exp()), k.max(0.0))
                        },
                        0.0,
                        horizon,
                        TIME_NODES,
                    );
            }
            acc
        }
        Control::Tabulated(t) => {
            let dt = t.horizon / t.time_bins as f64;
            let mut acc = 0.0;
            for (i, src) in params.sources.iter().enumerate() {
                let cap = t.mark_caps[i];
                let bin = cap / t.mark_bins as f64;
                for ti in 0..t.time_bins {
                    let lo_t = ti as f64 * dt;
                    if lo_t >= horizon {
                        break;
                    }
                    let span = dt.min(horizon - lo_t);
                    for mi in 0..t.mark_bins {
                        let mass = src.marks.interval_mass(mi as f64 * bin, (mi + 1) as f64 * bin);
                        acc += src.rate * span * mass * l(t.values[i][ti][mi]);
                    }
                }
            }
            acc
        }
    };
    if !cost.is_finite() {
        return Err(Error::DivergentCost(format!(
            "entropy cost evaluated to {cost}"
        )));
    }
    Ok(cost)
}

/// Sample the nominal marked Poisson stream: per source, a homogeneous
/// process of rate f_i/ε with i.i.d. marks; sources independent.
pub fn sample_prm(params: &ModelParams, epsilon: f64, horizon: f64, seed: u64) -> Result<JumpPath> {
    sample_controlled_prm(&Control::identity(), params, epsilon, horizon, seed)
}

/// Sample a stream with intensity ε⁻¹ g(s, i, a) f_i F_i(da) ds by thinning
/// a dominating homogeneous process. Deterministic given the seed.
pub fn sample_controlled_prm(
    control: &Control,
    params: &ModelParams,
    epsilon: f64,
    horizon: f64,
    seed: u64,
) -> Result<JumpPath> {
    if !(epsilon > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidParameter(
            "epsilon and horizon must be positive".into(),
        ));
    }
    control.validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<JumpEvent> = Vec::new();
    for (i, src) in params.sources.iter().enumerate() {
        match control {
            Control::Constant { theta } => {
                let rate = theta * src.rate / epsilon;
                let mut t = 0.0;
                loop {
                    t += exp_gap(&mut rng, rate);
                    if t > horizon {
                        break;
                    }
                    let mark = src.marks.sample(&mut rng);
                    events.push(JumpEvent { t, source: i, mark });
                }
            }
            Control::Tabulated(tab) => {
                let rate = tab.bound * src.rate / epsilon;
                let mut t = 0.0;
                loop {
                    t += exp_gap(&mut rng, rate);
                    if t > horizon {
                        break;
                    }
                    let mark = src.marks.sample(&mut rng);
                    let accept = control.value(t, i, mark) / tab.bound;
                    if rng.gen::<f64>() < accept {
                        events.push(JumpEvent { t, source: i, mark });
                    }
                }
            }
            Control::Tilt(tilt) => {
                let k = tilt.mark_exponent_bound(i);
                let norm = tilted_mark_normalization(&src.marks, k);
                let rate = norm * src.rate / epsilon;
                let mut t = 0.0;
                loop {
                    t += exp_gap(&mut rng, rate);
                    if t > horizon {
                        break;
                    }
                    let mark = sample_tilted_mark(&src.marks, k, &mut rng);
                    // accept with probability g(t, i, a) / exp(a K_i) <= 1
                    let accept = (mark * (tilt.slope(t, i) - k)).exp();
                    if rng.gen::<f64>() < accept {
                        events.push(JumpEvent { t, source: i, mark });
                    }
                }
            }
        }
    }
    events.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("finite event times"));
    Ok(JumpPath {
        events,
        horizon,
        epsilon,
    })
}

fn exp_gap<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

/// E[exp(K a)] under the mark law; exact where a closed form exists.
fn tilted_mark_normalization(marks: &MarkDistribution, k: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    match marks {
        MarkDistribution::PointMass { a0 } => (k * a0).exp(),
        MarkDistribution::Uniform { a_max } => ((k * a_max).exp_m1()) / (k * a_max),
        MarkDistribution::HalfNormal { .. } => marks.expect(|a| (k * a).exp(), k),
    }
}

/// Draw from the exponentially tilted mark law dF_K ∝ exp(K a) dF.
fn sample_tilted_mark<R: Rng>(marks: &MarkDistribution, k: f64, rng: &mut R) -> f64 {
    if k == 0.0 {
        return marks.sample(rng);
    }
    match marks {
        MarkDistribution::PointMass { a0 } => *a0,
        MarkDistribution::Uniform { a_max } => {
            // inverse CDF of the tilted uniform
            let u: f64 = rng.gen();
            (u * (k * a_max).exp_m1()).ln_1p() / k
        }
        MarkDistribution::HalfNormal { sigma } => {
            // tilted |N(0,σ²)| with exp(K a) is N(Kσ², σ) conditioned to a > 0
            let n = Normal::new(k * sigma * sigma, *sigma).expect("sigma validated");
            loop {
                let a = n.sample(rng);
                if a > 0.0 {
                    return a;
                }
            }
        }
    }
}

/// Precomputed Girsanov log-weight machinery for one (control, ε, T) tuple.
///
/// log dP/dQ on a path sampled under the g-tilted measure Q:
/// Σ_k −ln g(t_k, i_k, a_k) + ε⁻¹ Σ_i f_i ∫₀^T E_{F_i}[g(s, i, ·) − 1] ds.
/// The integral term is path-independent and computed once here.
#[derive(Debug, Clone)]
pub struct GirsanovWeigher {
    control: Control,
    log_norm: f64,
    epsilon: f64,
    horizon: f64,
}

impl GirsanovWeigher {
    pub fn new(
        control: Control,
        params: &ModelParams,
        epsilon: f64,
        horizon: f64,
    ) -> Result<Self> {
        control.validate(params)?;
        if !(epsilon > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidParameter(
                "epsilon and horizon must be positive".into(),
            ));
        }
        let integral = control.nu_gap_integral(params, horizon);
        Ok(Self {
            control,
            log_norm: integral / epsilon,
            epsilon,
            horizon,
        })
    }

    pub fn log_weight(&self, path: &JumpPath) -> Result<f64> {
        if path.epsilon != self.epsilon || path.horizon != self.horizon {
            return Err(Error::Invalid(
                "path sampled under different (epsilon, horizon) than the weigher".into(),
            ));
        }
        let mut acc = self.log_norm;
        for e in &path.events {
            let g = self.control.value(e.t, e.source, e.mark);
            if g <= 0.0 {
                return Err(Error::ZeroControlAtEvent);
            }
            acc -= g.ln();
        }
        Ok(acc)
    }
}

/// One-shot Girsanov log-weight; see `GirsanovWeigher` for batch use.
pub fn girsanov_log_weight(
    path: &JumpPath,
    control: &Control,
    params: &ModelParams,
    epsilon: f64,
    horizon: f64,
) -> Result<f64> {
    GirsanovWeigher::new(control.clone(), params, epsilon, horizon)?.log_weight(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::mix_seed;
    use crate::model::SourceSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_source(rate: f64, marks: MarkDistribution) -> ModelParams {
        ModelParams {
            diffusion: 1.0,
            velocity: 0.0,
            alpha: 1.0,
            ell: std::f64::consts::PI,
            sources: vec![SourceSpec {
                kappa: std::f64::consts::FRAC_PI_2,
                rate,
                marks,
            }],
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_l(1.0).unwrap(), 0.0);
        assert_eq!(entropy_l(0.0).unwrap(), 1.0);
        assert_relative_eq!(
            entropy_l(std::f64::consts::E).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert!(entropy_l(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn entropy_nonnegative_convex(r in 0.0..50.0f64, s in 0.0..50.0f64) {
            let lr = l(r);
            prop_assert!(lr >= 0.0);
            let mid = l(0.5 * (r + s));
            prop_assert!(mid <= 0.5 * (l(r) + l(s)) + 1e-12);
        }

        // ab <= exp(σ a) + l(b)/σ for positive a, b, σ
        #[test]
        fn product_entropy_inequality(
            a in 1e-6..20.0f64,
            b in 1e-6..50.0f64,
            sigma in 1e-3..5.0f64,
        ) {
            prop_assert!(a * b <= ((sigma * a).exp() - 1.0 + l(b)) / sigma + 1e-9);
        }
    }

    #[test]
    fn entropy_envelopes_on_grids() {
        // |x − 1| <= c1 l(x) on the far region, c1 = 1/l(2)
        let c1 = 1.0 / l(2.0);
        let mut x: f64 = 2.0;
        while x <= 100.0 {
            assert!((x - 1.0).abs() <= c1 * l(x) * (1.0 + 1e-12), "x = {x}");
            x += 0.25;
        }
        assert!((0.0f64 - 1.0).abs() <= c1 * l(0.0));
        // |x − 1|² / l(x) stays bounded on the near region
        let mut sup: f64 = 0.0;
        let mut x = 0.0;
        while x <= 2.0 {
            if (x - 1.0f64).abs() > 1e-8 {
                sup = sup.max((x - 1.0) * (x - 1.0) / l(x));
            }
            x += 1e-3;
        }
        assert!(sup.is_finite() && sup < 10.0, "near-envelope sup = {sup}");
    }

    #[test]
    fn nominal_event_count_mean() {
        let params = single_source(2.0, MarkDistribution::PointMass { a0: 1.0 });
        let n = 10_000;
        let mut total = 0usize;
        for k in 0..n {
            let p = sample_prm(&params, 1.0, 3.0, mix_seed(99, k)).unwrap();
            total += p.events.len();
        }
        let mean = total as f64 / n as f64;
        // Poisson(6): SE of the mean = sqrt(6/n)
        let se = (6.0f64 / n as f64).sqrt();
        assert!((mean - 6.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn halving_epsilon_doubles_counts() {
        let params = single_source(1.0, MarkDistribution::Uniform { a_max: 2.0 });
        let n = 10_000;
        let count = |eps: f64, salt: u64| -> f64 {
            (0..n)
                .map(|k| {
                    sample_prm(&params, eps, 2.0, mix_seed(salt, k))
                        .unwrap()
                        .events
                        .len() as f64
                })
                .sum::<f64>()
                / n as f64
        };
        let m1 = count(1.0, 1);
        let m2 = count(0.5, 2);
        let se = (4.0f64 / n as f64).sqrt() + (2.0f64 / n as f64).sqrt();
        assert!((m2 - 2.0 * m1).abs() < 3.0 * (2.0 * se), "m1={m1} m2={m2}");
    }

    #[test]
    fn superposition_fractions() {
        let params = ModelParams {
            sources: vec![
                SourceSpec {
                    kappa: 0.5,
                    rate: 1.0,
                    marks: MarkDistribution::PointMass { a0: 1.0 },
                },
                SourceSpec {
                    kappa: 2.0,
                    rate: 3.0,
                    marks: MarkDistribution::PointMass { a0: 1.0 },
                },
            ],
            ..single_source(1.0, MarkDistribution::PointMass { a0: 1.0 })
        };
        let mut from_second = 0usize;
        let mut total = 0usize;
        for k in 0..10_000u64 {
            let p = sample_prm(&params, 1.0, 1.0, mix_seed(5, k)).unwrap();
            total += p.events.len();
            from_second += p.events.iter().filter(|e| e.source == 1).count();
        }
        let frac = from_second as f64 / total as f64;
        assert!((frac - 0.75).abs() < 0.02, "frac = {frac}");
    }

    #[test]
    fn constant_control_scales_rate() {
        let params = single_source(1.0, MarkDistribution::PointMass { a0: 1.0 });
        let control = Control::Constant { theta: 2.5 };
        let n = 5_000;
        let mean = (0..n)
            .map(|k| {
                sample_controlled_prm(&control, &params, 1.0, 2.0, mix_seed(17, k))
                    .unwrap()
                    .events
                    .len() as f64
            })
            .sum::<f64>()
            / n as f64;
        let se = (5.0f64 / n as f64).sqrt();
        assert!((mean - 5.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn tabulated_front_loaded_control() {
        // g = 2 on the first half, 1 on the second
        let params = single_source(2.0, MarkDistribution::Uniform { a_max: 1.0 });
        let tab = TabulatedControl::new(
            1.0,
            vec![1.0],
            vec![vec![vec![2.0], vec![1.0]]],
            4.0,
        )
        .unwrap();
        let control = Control::Tabulated(tab);
        let n = 10_000;
        let (mut first, mut second) = (0.0, 0.0);
        for k in 0..n {
            let p = sample_controlled_prm(&control, &params, 1.0, 1.0, mix_seed(23, k)).unwrap();
            first += p.count_in(0.0, 0.5) as f64;
            second += p.count_in(0.5, 1.0) as f64;
        }
        let (m1, m2) = (first / n as f64, second / n as f64);
        // Poisson means 2 and 1
        let se = (2.0f64 / n as f64).sqrt() + 2.0 * (1.0f64 / n as f64).sqrt();
        assert!((m1 - 2.0 * m2).abs() < 3.0 * se, "m1={m1} m2={m2}");
    }

    /// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
    fn ks2_p(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < n && j < m {
            // advance past all observations tied at the current value so
            // the gap is only measured between distinct support points
            let t = a[i].min(b[j]);
            while i < n && a[i] <= t {
                i += 1;
            }
            while j < m && b[j] <= t {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        let lam = d * ((n * m) as f64 / (n + m) as f64).sqrt();
        let mut p = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            p += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lam * lam).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn thinned_constant_matches_direct_sampler() {
        // exercise the rejection path: constant value 1.5 stored in a table
        // with bound 3, versus the direct rate-scaled sampler
        let params = single_source(1.0, MarkDistribution::Uniform { a_max: 1.0 });
        let tab =
            TabulatedControl::new(2.0, vec![1.0], vec![vec![vec![1.5], vec![1.5]]], 3.0).unwrap();
        let thinned = Control::Tabulated(tab);
        let direct = Control::Constant { theta: 1.5 };
        let reps = 4_000u64;
        let mut counts_a = Vec::new();
        let mut counts_b = Vec::new();
        let mut gaps_a = Vec::new();
        let mut gaps_b = Vec::new();
        for k in 0..reps {
            let pa = sample_controlled_prm(&thinned, &params, 1.0, 2.0, mix_seed(31, k)).unwrap();
            let pb = sample_controlled_prm(&direct, &params, 1.0, 2.0, mix_seed(77, k)).unwrap();
            counts_a.push(pa.events.len() as f64);
            counts_b.push(pb.events.len() as f64);
            let mut prev = 0.0;
            for e in &pa.events {
                gaps_a.push(e.t - prev);
                prev = e.t;
            }
            prev = 0.0;
            for e in &pb.events {
                gaps_b.push(e.t - prev);
                prev = e.t;
            }
        }
        assert!(ks2_p(counts_a, counts_b) > 0.01);
        assert!(ks2_p(gaps_a, gaps_b) > 0.01);
    }

    #[test]
    fn tilted_identity_matches_nominal_in_distribution() {
        let params = single_source(1.5, MarkDistribution::HalfNormal { sigma: 0.8 });
        let profile = ExpSumProfile::new(vec![(0.4, 1.0)], 1.0);
        let tilt = Control::Tilt(TiltControl::new(0.0, vec![profile], 1.0).unwrap());
        let reps = 4_000u64;
        let mut counts_a = Vec::new();
        let mut counts_b = Vec::new();
        for k in 0..reps {
            counts_a.push(
                sample_controlled_prm(&tilt, &params, 1.0, 1.0, mix_seed(3, k))
                    .unwrap()
                    .events
                    .len() as f64,
            );
            counts_b.push(
                sample_prm(&params, 1.0, 1.0, mix_seed(9, k))
                    .unwrap()
                    .events
                    .len() as f64,
            );
        }
        assert!(ks2_p(counts_a, counts_b) > 0.01);
    }

    #[test]
    fn cost_identity_is_zero_and_constant_matches_hand_value() {
        let params = single_source(1.0, MarkDistribution::PointMass { a0: 1.0 });
        assert_eq!(cost_lt(&Control::identity(), &params, 2.0).unwrap(), 0.0);
        let c = cost_lt(&Control::Constant { theta: 2.0 }, &params, 2.0).unwrap();
        assert_relative_eq!(c, 2.0 * (2.0 * 2.0f64.ln() - 1.0), epsilon = 1e-13);
    }

    #[test]
    fn cost_positive_unless_identity() {
        let params = single_source(1.0, MarkDistribution::Uniform { a_max: 1.0 });
        let tab = TabulatedControl::new(
            1.0,
            vec![1.0],
            vec![vec![vec![1.0, 1.2], vec![1.0, 1.0]]],
            2.0,
        )
        .unwrap();
        let c = cost_lt(&Control::Tabulated(tab), &params, 1.0).unwrap();
        assert!(c > 0.0);
        let id_tab =
            TabulatedControl::new(1.0, vec![1.0], vec![vec![vec![1.0, 1.0], vec![1.0, 1.0]]], 2.0)
                .unwrap();
        let c0 = cost_lt(&Control::Tabulated(id_tab), &params, 1.0).unwrap();
        assert_eq!(c0, 0.0);
    }

    #[test]
    fn cost_tabulated_matches_monte_carlo() {
        let params = single_source(2.0, MarkDistribution::Uniform { a_max: 2.0 });
        let tab = TabulatedControl::new(
            1.0,
            vec![2.0],
            vec![vec![vec![1.5, 0.7], vec![2.0, 1.1]]],
            4.0,
        )
        .unwrap();
        let control = Control::Tabulated(tab);
        let exact = cost_lt(&control, &params, 1.0).unwrap();
        // MC oracle: draw (s, a) from the normalized nu_T and average l(g)
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 200_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let s = rng.gen::<f64>();
            let a = 2.0 * rng.gen::<f64>();
            let v = l(control.value(s, 0, a));
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / n as f64;
        let var = (acc2 / n as f64 - mean * mean).max(0.0);
        let mc = 2.0 * mean; // total mass f·T = 2
        let se = 2.0 * (var / n as f64).sqrt();
        assert!((mc - exact).abs() < 3.0 * se, "mc={mc} exact={exact}");
    }

    #[test]
    fn girsanov_identity_and_constant_forms() {
        let params = single_source(1.0, MarkDistribution::PointMass { a0: 1.0 });
        let path = sample_prm(&params, 0.5, 2.0, 7).unwrap();
        let w = girsanov_log_weight(&path, &Control::identity(), &params, 0.5, 2.0).unwrap();
        assert_eq!(w, 0.0);
        let theta = 1.7;
        let control = Control::Constant { theta };
        let tilted = sample_controlled_prm(&control, &params, 0.5, 2.0, 7).unwrap();
        let w = girsanov_log_weight(&tilted, &control, &params, 0.5, 2.0).unwrap();
        let expected =
            -(tilted.events.len() as f64) * theta.ln() + (1.0 / 0.5) * 2.0 * (theta - 1.0);
        assert_relative_eq!(w, expected, epsilon = 1e-10);
    }

    #[test]
    fn girsanov_weights_have_mean_one() {
        for (marks, tag) in [
            (MarkDistribution::PointMass { a0: 1.0 }, 1u64),
            (MarkDistribution::Uniform { a_max: 2.0 }, 2),
            (MarkDistribution::HalfNormal { sigma: 0.7 }, 3),
        ] {
            let params = single_source(1.0, marks);
            let profile = ExpSumProfile::new(vec![(0.5, 1.0), (-0.1, 3.0)], 1.0);
            let control = Control::Tilt(TiltControl::new(1.2, vec![profile], 1.0).unwrap());
            let weigher = GirsanovWeigher::new(control.clone(), &params, 0.5, 1.0).unwrap();
            let n = 20_000u64;
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            for k in 0..n {
                let path =
                    sample_controlled_prm(&control, &params, 0.5, 1.0, mix_seed(tag, k)).unwrap();
                let w = weigher.log_weight(&path).unwrap().exp();
                acc += w;
                acc2 += w * w;
            }
            let mean = acc / n as f64;
            let var = (acc2 / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - 1.0).abs() <= 3.0 * se,
                "marks {tag}: mean = {mean}, se = {se}"
            );
        }
    }

    #[test]
    fn profile_bounds_dominate() {
        let p = ExpSumProfile::new(vec![(0.7, 1.0), (-0.3, 5.0), (0.2, 0.0)], 2.0);
        let up = p.upper_bound();
        let lo = p.lower_bound();
        for k in 0..=400 {
            let s = 2.0 * k as f64 / 400.0;
            let v = p.value(s);
            assert!(v <= up + 1e-12 && v >= lo - 1e-12);
        }
    }
}
