//! Rate-function evaluation for endpoint events and rare-event estimators.
//!
//! An endpoint event asks whether the terminal value u_T[ψ] (path started at
//! the steady state) crosses a level m. The minimal entropy cost over
//! intensity tilts reaching m is computed two independent ways: a convex-dual
//! root-find in the single tilt slope β (the pointwise minimizer is
//! g* = exp(β h)), and a projected-Newton convex program over a
//! time × mark cell discretization. Tilted importance sampling and plain
//! Monte Carlo estimators close the loop against the simulated model.

use crate::coefficients::PollutantCoefficients;
use crate::dynamics::steady_state;
use crate::ensemble::{mean_and_stderr, mix_seed, run_indexed};
use crate::error::{Error, Result};
use crate::model::{MarkDistribution, ModelParams, SpectralCoeffs};
use crate::prm::{
    entropy_l, sample_controlled_prm, Control, ExpSumProfile, GirsanovWeigher, JumpPath,
    TiltControl,
};
use crate::quad::integrate_gl;

/// Which side of the level counts as the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ge,
    Le,
}

/// The rare event {u_T[ψ] ⋛ m} for a linear endpoint functional ψ.
#[derive(Debug, Clone)]
pub struct EndpointEvent {
    /// H-coordinates of ψ
    pub test: SpectralCoeffs,
    pub level: f64,
    pub direction: Direction,
    pub horizon: f64,
}

impl EndpointEvent {
    pub fn validate(&self) -> Result<()> {
        if self.test.h_norm() == 0.0 {
            return Err(Error::InvalidParameter(
                "endpoint functional must be nonzero".into(),
            ));
        }
        if !(self.horizon > 0.0) || !self.level.is_finite() {
            return Err(Error::InvalidParameter(
                "endpoint event needs a positive horizon and finite level".into(),
            ));
        }
        Ok(())
    }

    pub fn satisfied(&self, value: f64) -> bool {
        match self.direction {
            Direction::Ge => value >= self.level,
            Direction::Le => value <= self.level,
        }
    }
}

/// The linear response kernel of an endpoint functional:
/// h(s, i, a) = a H_i(s) with H_i(s) = Σ_j e^{−(α+λ_j)(T−s)} g_j^i ψ_j,
/// so that ũ_T^g[ψ] − ũ_T^1[ψ] = ∫∫ h (g − 1) dν_T.
#[derive(Debug, Clone)]
pub struct EndpointKernel {
    profiles: Vec<ExpSumProfile>,
    /// endpoint of the nominal (g ≡ 1) skeleton from the steady state
    pub nominal: f64,
    /// Σ_j ψ_j e^{−(α+λ_j) T} u0_j with u0 the steady state
    decay_term: f64,
    /// per-unit-mark sup bound of |H_i| over sources and the horizon
    pub profile_sup: f64,
    /// truncation defect Σ_i f_i Σ_{j > d} |ψ_j g_j^i| (0 when ψ fits in d)
    pub truncation_tail: f64,
    pub horizon: f64,
}

impl EndpointKernel {
    pub fn value(&self, s: f64, i: usize, a: f64) -> f64 {
        a * self.profiles[i].value(s)
    }

    pub fn profiles(&self) -> &[ExpSumProfile] {
        &self.profiles
    }

    /// Terminal value u_T[ψ] of the exact path with this jump realization,
    /// started from the steady state.
    pub fn endpoint_from_path(&self, path: &JumpPath) -> f64 {
        let mut v = self.decay_term;
        for e in &path.events {
            v += path.epsilon * e.mark * self.profiles[e.source].value(e.t);
        }
        v
    }
}

/// Build the endpoint kernel of an event at truncation level `d_modes`.
pub fn endpoint_kernel(
    event: &EndpointEvent,
    params: &ModelParams,
    d_modes: usize,
) -> Result<EndpointKernel> {
    event.validate()?;
    let op = PollutantCoefficients::new(params.clone(), d_modes)?;
    let steady = steady_state(params, d_modes)?;
    let horizon = event.horizon;
    let psi = &event.test.coeffs;
    let mut truncation_tail = 0.0;
    if psi.len() > d_modes + 1 {
        let wide = PollutantCoefficients::new(params.clone(), psi.len() - 1)?;
        for (i, src) in params.sources.iter().enumerate() {
            for (j, c) in psi.iter().enumerate().skip(d_modes + 1) {
                truncation_tail += src.rate * (c * wide.kernel_entry(i, j)).abs();
            }
        }
    }
    let profiles: Vec<ExpSumProfile> = (0..params.sources.len())
        .map(|i| {
            let terms = psi
                .iter()
                .enumerate()
                .take(d_modes + 1)
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| (c * op.kernel_entry(i, j), op.decay_rate(j)))
                .collect();
            ExpSumProfile::new(terms, horizon)
        })
        .collect();
    let decay_term = psi
        .iter()
        .enumerate()
        .take(d_modes + 1)
        .map(|(j, c)| c * (-op.decay_rate(j) * horizon).exp() * steady.coeffs[j])
        .sum();
    let nominal = psi
        .iter()
        .enumerate()
        .take(d_modes + 1)
        .map(|(j, c)| c * steady.coeffs[j])
        .sum();
    let profile_sup = profiles.iter().map(|p| p.sup_abs_bound()).fold(0.0, f64::max);
    Ok(EndpointKernel {
        profiles,
        nominal,
        decay_term,
        profile_sup,
        truncation_tail,
        horizon,
    })
}

/// Discretization used by the rate solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateQuadrature {
    /// Gauss-Legendre in time, mark expectations to quadrature accuracy
    Continuous { time_nodes: usize },
    /// midpoint time × mark cells shared with the grid convex program
    Cells { time_bins: usize, mark_bins: usize },
}

impl Default for RateQuadrature {
    fn default() -> Self {
        RateQuadrature::Continuous { time_nodes: 96 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    /// ν_T mass of the cell
    w: f64,
    /// kernel value at the cell representative
    h: f64,
}

/// Midpoint cells of [0, T] × marks per source; half-normal marks are binned
/// over [0, 8σ].
fn build_cells(
    kernel: &EndpointKernel,
    params: &ModelParams,
    time_bins: usize,
    mark_bins: usize,
) -> Vec<Cell> {
    let t = kernel.horizon;
    let dt = t / time_bins as f64;
    let mut cells = Vec::new();
    for (i, src) in params.sources.iter().enumerate() {
        let mark_cells: Vec<(f64, f64)> = match &src.marks {
            MarkDistribution::PointMass { a0 } => vec![(*a0, 1.0)],
            MarkDistribution::Uniform { a_max } => {
                let ba = a_max / mark_bins as f64;
                (0..mark_bins)
                    .map(|m| ((m as f64 + 0.5) * ba, 1.0 / mark_bins as f64))
                    .collect()
            }
            MarkDistribution::HalfNormal { sigma } => {
                let cap = 8.0 * sigma;
                let ba = cap / mark_bins as f64;
                (0..mark_bins)
                    .map(|m| {
                        (
                            (m as f64 + 0.5) * ba,
                            src.marks.interval_mass(m as f64 * ba, (m + 1) as f64 * ba),
                        )
                    })
                    .collect()
            }
        };
        for ti in 0..time_bins {
            let s = (ti as f64 + 0.5) * dt;
            let hprof = kernel.profiles[i].value(s);
            for &(a, mass) in &mark_cells {
                cells.push(Cell {
                    w: src.rate * dt * mass,
                    h: a * hprof,
                });
            }
        }
    }
    cells
}

/// Constraint response ρ(β) = ∫∫ h (e^{βh} − 1) dν_T, strictly increasing.
fn constraint_response(
    beta: f64,
    kernel: &EndpointKernel,
    params: &ModelParams,
    cells: Option<&[Cell]>,
    time_nodes: usize,
) -> f64 {
    match cells {
        Some(cs) => cs
            .iter()
            .map(|c| c.w * c.h * ((beta * c.h).exp() - 1.0))
            .sum(),
        None => {
            let mut acc = 0.0;
            for (i, src) in params.sources.iter().enumerate() {
                acc += src.rate
                    * integrate_gl(
                        |s| {
                            let hp = kernel.profiles[i].value(s);
                            let k = beta * hp;
                            src.marks
                                .expect(|a| a * hp * ((k * a).exp() - 1.0), k.max(0.0))
                        },
                        0.0,
                        kernel.horizon,
                        time_nodes,
                    );
            }
            acc
        }
    }
}

/// Entropy cost of the tilt g = e^{βh}.
fn tilt_cost(
    beta: f64,
    kernel: &EndpointKernel,
    params: &ModelParams,
    cells: Option<&[Cell]>,
    time_nodes: usize,
) -> f64 {
    match cells {
        Some(cs) => cs
            .iter()
            .map(|c| {
                let x = beta * c.h;
                c.w * (x.exp() * (x - 1.0) + 1.0)
            })
            .sum(),
        None => {
            let mut acc = 0.0;
            for (i, src) in params.sources.iter().enumerate() {
                acc += src.rate
                    * integrate_gl(
                        |s| {
                            let k = beta * kernel.profiles[i].value(s);
                            src.marks.expect(
                                |a| {
                                    let x = k * a;
                                    x.exp() * (x - 1.0) + 1.0
                                },
                                k.max(0.0),
                            )
                        },
                        0.0,
                        kernel.horizon,
                        time_nodes,
                    );
            }
            acc
        }
    }
}

/// ∫∫ h dν_T.
fn kernel_mass(
    kernel: &EndpointKernel,
    params: &ModelParams,
    cells: Option<&[Cell]>,
    time_nodes: usize,
) -> f64 {
    match cells {
        Some(cs) => cs.iter().map(|c| c.w * c.h).sum(),
        None => {
            let mut acc = 0.0;
            for (i, src) in params.sources.iter().enumerate() {
                acc += src.rate
                    * src.marks.mean()
                    * integrate_gl(|s| kernel.profiles[i].value(s), 0.0, kernel.horizon, time_nodes);
            }
            acc
        }
    }
}

/// Outcome of a rate-function evaluation.
#[derive(Debug, Clone)]
pub struct RateResult {
    /// minimal entropy cost I
    pub rate: f64,
    /// optimal tilt slope (Lagrange multiplier of the level constraint)
    pub beta: f64,
    /// optimal control g* = e^{βh}
    pub control: Control,
    /// skeleton endpoint reached under g*
    pub achieved_value: f64,
    /// endpoint of the nominal skeleton
    pub nominal: f64,
    pub iterations: usize,
    /// |primal cost − dual value|, identically small at the optimum
    pub duality_gap: f64,
    /// max |ln g_cell − β h_cell| over cells (grid solver only)
    pub kkt_deviation: Option<f64>,
}

/// Effective per-mark bound used for the reachability cap: the support bound
/// for bounded marks, mean + 8σ for the half-normal.
fn effective_mark_bound(marks: &MarkDistribution) -> f64 {
    match marks {
        MarkDistribution::HalfNormal { sigma } => 8.0 * sigma,
        _ => marks.support_bound().expect("bounded families"),
    }
}

/// Bound on the tilt slope keeping g = e^{βh} within the control class bound.
const CONTROL_CLASS_BOUND: f64 = 1e6;

fn beta_cap(kernel: &EndpointKernel, params: &ModelParams) -> f64 {
    let mark_bound = params
        .sources
        .iter()
        .map(|s| effective_mark_bound(&s.marks))
        .fold(0.0, f64::max);
    let sup_h = kernel.profile_sup * mark_bound;
    if sup_h <= 0.0 {
        f64::INFINITY
    } else {
        CONTROL_CLASS_BOUND.ln() / sup_h
    }
}

fn identity_rate_result(kernel: &EndpointKernel, params: &ModelParams) -> Result<RateResult> {
    let control = Control::Tilt(TiltControl::new(
        0.0,
        kernel.profiles().to_vec(),
        kernel.horizon,
    )?);
    let _ = params;
    Ok(RateResult {
        rate: 0.0,
        beta: 0.0,
        control,
        achieved_value: kernel.nominal,
        nominal: kernel.nominal,
        iterations: 0,
        duality_gap: 0.0,
        kkt_deviation: None,
    })
}

/// Rate of an endpoint event by convex duality: the cost minimizer under the
/// linear endpoint constraint is the exponential tilt g* = e^{βh}, with β the
/// root of the strictly increasing map β ↦ ρ(β) − (m − nominal).
pub fn rate_endpoint_dual(
    event: &EndpointEvent,
    params: &ModelParams,
    d_modes: usize,
    tol: f64,
    quad: RateQuadrature,
) -> Result<RateResult> {
    let kernel = endpoint_kernel(event, params, d_modes)?;
    let (cells_store, time_nodes) = match quad {
        RateQuadrature::Cells {
            time_bins,
            mark_bins,
        } => (Some(build_cells(&kernel, params, time_bins, mark_bins)), 0),
        RateQuadrature::Continuous { time_nodes } => (None, time_nodes),
    };
    let cells = cells_store.as_deref();
    let delta = event.level - kernel.nominal;
    let needs_push = match event.direction {
        Direction::Ge => delta > 0.0,
        Direction::Le => delta < 0.0,
    };
    if !needs_push || delta == 0.0 {
        return identity_rate_result(&kernel, params);
    }

    let cap = beta_cap(&kernel, params);
    let rho = |beta: f64| constraint_response(beta, &kernel, params, cells, time_nodes);
    let sign = delta.signum();
    // expand the bracket away from 0 in the needed direction
    let mut hi = sign * 1.0_f64.min(cap);
    let mut iterations = 0usize;
    while (rho(hi) - delta) * sign < 0.0 {
        iterations += 1;
        if hi.abs() >= cap {
            return Err(Error::Unattainable {
                level: event.level,
                bound: kernel.nominal + rho(sign * cap),
            });
        }
        hi = (hi * 2.0).clamp(-cap, cap);
    }
    let mut lo = 0.0;
    // bisection on the monotone constraint residual
    let scale = delta.abs().max(1.0);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        let r = rho(mid) - delta;
        if r.abs() <= tol.max(1e-13) * scale || (hi - lo).abs() <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
        if r * sign < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = mid;
    let rate = tilt_cost(beta, &kernel, params, cells, time_nodes);
    let h_mass = kernel_mass(&kernel, params, cells, time_nodes);
    let achieved = kernel.nominal + rho(beta);
    // primal cost = β Δ + β ∫h dν − ∫(e^{βh} − 1) dν at the exact optimum
    let dual_value = beta * (achieved - kernel.nominal) + beta * h_mass
        - (constraint_response(beta, &kernel, params, cells, time_nodes)
            + kernel_gap_mass(beta, &kernel, params, cells, time_nodes));
    let control = Control::Tilt(TiltControl::new(
        beta,
        kernel.profiles().to_vec(),
        kernel.horizon,
    )?);
    Ok(RateResult {
        rate,
        beta,
        control,
        achieved_value: achieved,
        nominal: kernel.nominal,
        iterations,
        duality_gap: (rate - dual_value).abs(),
        kkt_deviation: None,
    })
}

/// ∫∫ (e^{βh} − 1 − h e^{βh} + h) dν, so that
/// ∫(e^{βh} − 1)dν = constraint_response + this.
fn kernel_gap_mass(
    beta: f64,
    kernel: &EndpointKernel,
    params: &ModelParams,
    cells: Option<&[Cell]>,
    time_nodes: usize,
) -> f64 {
    match cells {
        Some(cs) => cs
            .iter()
            .map(|c| {
                let e = (beta * c.h).exp();
                c.w * ((e - 1.0) - c.h * (e - 1.0))
            })
            .sum(),
        None => {
            let mut acc = 0.0;
            for (i, src) in params.sources.iter().enumerate() {
                acc += src.rate
                    * integrate_gl(
                        |s| {
                            let hp = kernel.profiles[i].value(s);
                            let k = beta * hp;
                            src.marks.expect(
                                |a| {
                                    let e = (k * a).exp();
                                    (e - 1.0) - a * hp * (e - 1.0)
                                },
                                k.max(0.0),
                            )
                        },
                        0.0,
                        kernel.horizon,
                        time_nodes,
                    );
            }
            acc
        }
    }
}

/// Rate of an endpoint event by a discretized convex program: minimize
/// Σ w l(g) over cell values subject to Σ w h (g − 1) = Δ, by damped Newton
/// on the KKT system in (g, μ). Independent oracle for the dual solver.
pub fn rate_endpoint_grid(
    event: &EndpointEvent,
    params: &ModelParams,
    d_modes: usize,
    time_bins: usize,
    mark_bins: usize,
    tol: f64,
) -> Result<RateResult> {
    if time_bins < 2 || mark_bins < 1 {
        return Err(Error::InvalidParameter(
            "grid solver needs at least 2 time bins and 1 mark bin".into(),
        ));
    }
    let kernel = endpoint_kernel(event, params, d_modes)?;
    let cells = build_cells(&kernel, params, time_bins, mark_bins);
    let delta = event.level - kernel.nominal;
    let needs_push = match event.direction {
        Direction::Ge => delta > 0.0,
        Direction::Le => delta < 0.0,
    };
    if !needs_push || delta == 0.0 {
        let mut r = identity_rate_result(&kernel, params)?;
        r.kkt_deviation = Some(0.0);
        return Ok(r);
    }
    // reachability within the control class bound
    let reach_hi: f64 = cells
        .iter()
        .map(|c| {
            if c.h > 0.0 {
                c.w * c.h * (CONTROL_CLASS_BOUND - 1.0)
            } else {
                -c.w * c.h
            }
        })
        .sum();
    let reach_lo: f64 = cells
        .iter()
        .map(|c| {
            if c.h < 0.0 {
                c.w * c.h * (CONTROL_CLASS_BOUND - 1.0)
            } else {
                -c.w * c.h
            }
        })
        .sum();
    if delta > reach_hi || delta < reach_lo {
        return Err(Error::Unattainable {
            level: event.level,
            bound: kernel.nominal + if delta > 0.0 { reach_hi } else { reach_lo },
        });
    }

    let n = cells.len();
    let mut g = vec![1.0f64; n];
    let mut mu = 0.0f64;
    let scale = delta.abs().max(1.0);
    let mut iterations = 0usize;
    let max_iter = 200usize;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let c_res: f64 = cells
            .iter()
            .zip(&g)
            .map(|(c, gc)| c.w * c.h * (gc - 1.0))
            .sum::<f64>()
            - delta;
        // stationarity must hold unweighted so that low-mass cells also
        // carry the exact tilt
        let stat: f64 = cells
            .iter()
            .zip(&g)
            .map(|(c, gc)| (gc.ln() - mu * c.h).abs())
            .fold(0.0, f64::max);
        if c_res.abs() <= tol.max(1e-13) * scale && stat <= tol.max(1e-12) {
            converged = true;
            break;
        }
        let denom: f64 = cells
            .iter()
            .zip(&g)
            .map(|(c, gc)| c.w * c.h * c.h * gc)
            .sum();
        if !(denom > 0.0) {
            return Err(Error::RootFinder(
                "degenerate curvature in the grid program".into(),
            ));
        }
        let num: f64 = cells
            .iter()
            .zip(&g)
            .map(|(c, gc)| c.w * c.h * gc * gc.ln())
            .sum();
        let mu_new = (num - c_res) / denom;
        // Newton direction in g with positivity-preserving damping
        let mut alpha = 1.0f64;
        let dg: Vec<f64> = cells
            .iter()
            .zip(&g)
            .map(|(c, gc)| gc * (mu_new * c.h - gc.ln()))
            .collect();
        for (gc, d) in g.iter().zip(&dg) {
            if *d < 0.0 {
                alpha = alpha.min(0.95 * gc / (-d));
            }
        }
        for (gc, d) in g.iter_mut().zip(&dg) {
            *gc += alpha * d;
        }
        mu = mu_new;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual: f64::NAN,
            history: vec![],
        });
    }

    let rate: f64 = cells
        .iter()
        .zip(&g)
        .map(|(c, gc)| c.w * entropy_l(*gc).unwrap_or(f64::NAN))
        .sum();
    let kkt = cells
        .iter()
        .zip(&g)
        .filter(|(c, _)| c.w > 1e-300)
        .map(|(c, gc)| (gc.ln() - mu * c.h).abs())
        .fold(0.0, f64::max);
    let achieved: f64 = kernel.nominal
        + cells
            .iter()
            .zip(&g)
            .map(|(c, gc)| c.w * c.h * (gc - 1.0))
            .sum::<f64>();
    let control = Control::Tilt(TiltControl::new(
        mu,
        kernel.profiles().to_vec(),
        kernel.horizon,
    )?);
    Ok(RateResult {
        rate,
        beta: mu,
        control,
        achieved_value: achieved,
        nominal: kernel.nominal,
        iterations,
        duality_gap: 0.0,
        kkt_deviation: Some(kkt),
    })
}

/// A probability estimate with Monte Carlo error bars.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub p_hat: f64,
    pub std_err: f64,
    /// −ε ln p̂ (infinite when no sample hits the event)
    pub neg_eps_log_p: f64,
    pub n_samples: usize,
    /// no sample hit the event: the control likely mis-targets it
    pub all_zero: bool,
}

/// Importance-sampling estimate of P(event) with paths drawn under the
/// control and weights converting back to the nominal measure. With the
/// identity control this is exactly plain Monte Carlo, sample for sample.
pub fn estimate_is(
    event: &EndpointEvent,
    control: &Control,
    params: &ModelParams,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    workers: usize,
    d_modes: usize,
) -> Result<Estimate> {
    if n_samples < 100 {
        return Err(Error::InvalidParameter(
            "need at least 100 samples".into(),
        ));
    }
    let kernel = endpoint_kernel(event, params, d_modes)?;
    let weigher = GirsanovWeigher::new(control.clone(), params, epsilon, event.horizon)?;
    let samples = run_indexed(n_samples, workers, |k| -> Result<f64> {
        let path =
            sample_controlled_prm(control, params, epsilon, event.horizon, mix_seed(seed, k as u64))?;
        if event.satisfied(kernel.endpoint_from_path(&path)) {
            Ok(weigher.log_weight(&path)?.exp())
        } else {
            Ok(0.0)
        }
    });
    let values = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let (p_hat, std_err) = mean_and_stderr(&values);
    let all_zero = values.iter().all(|v| *v == 0.0);
    Ok(Estimate {
        p_hat,
        std_err,
        neg_eps_log_p: if p_hat > 0.0 {
            -epsilon * p_hat.ln()
        } else {
            f64::INFINITY
        },
        n_samples,
        all_zero,
    })
}

/// Plain Monte Carlo baseline: empirical frequency of the event under the
/// nominal sampler. Identical to `estimate_is` with the identity control.
pub fn estimate_plain(
    event: &EndpointEvent,
    params: &ModelParams,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    workers: usize,
    d_modes: usize,
) -> Result<Estimate> {
    estimate_is(
        event,
        &Control::identity(),
        params,
        epsilon,
        n_samples,
        seed,
        workers,
        d_modes,
    )
}

/// One row of the decay diagnostic −ε ln p̂(ε) vs the rate I.
#[derive(Debug, Clone)]
pub struct DiagnosticRow {
    pub epsilon: f64,
    pub p_hat: f64,
    pub std_err: f64,
    pub neg_eps_log_p: f64,
    pub rate: f64,
    pub relative_gap: f64,
}

/// Tabulate the decay of the tilted importance-sampling estimate toward the
/// rate over a list of noise scales. The trend is reported, not enforced.
pub fn ldp_diagnostic(
    event: &EndpointEvent,
    params: &ModelParams,
    epsilons: &[f64],
    n_samples: usize,
    seed: u64,
    workers: usize,
    d_modes: usize,
) -> Result<Vec<DiagnosticRow>> {
    let rate = rate_endpoint_dual(event, params, d_modes, 1e-12, RateQuadrature::default())?;
    epsilons
        .iter()
        .enumerate()
        .map(|(idx, &eps)| {
            let est = estimate_is(
                event,
                &rate.control,
                params,
                eps,
                n_samples,
                mix_seed(seed, idx as u64),
                workers,
                d_modes,
            )?;
            let gap = if rate.rate > 0.0 {
                (est.neg_eps_log_p - rate.rate).abs() / rate.rate
            } else {
                est.neg_eps_log_p.abs()
            };
            Ok(DiagnosticRow {
                epsilon: eps,
                p_hat: est.p_hat,
                std_err: est.std_err,
                neg_eps_log_p: est.neg_eps_log_p,
                rate: rate.rate,
                relative_gap: gap,
            })
        })
        .collect()
}
