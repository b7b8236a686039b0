//! Path generation and deterministic skeleton solving.
//!
//! Three routes produce trajectories of the small-noise model: exact
//! mode-by-mode sampling (the drift is affine and the jumps state-free, so
//! the compensator cancels the source term and each mode decays between
//! jumps), generic event-driven Euler stepping, and Galerkin + Picard
//! iteration for the controlled skeleton equation. Closed forms (steady
//! state, explicit tilted skeleton) and an energy-identity diagnostic
//! complete the module.

use crate::coefficients::{CoefficientOperator, PollutantCoefficients};
use crate::error::{Error, Result};
use crate::model::{MarkDistribution, ModelParams, SpectralCoeffs};
use crate::prm::{sample_prm, Control, JumpPath};
use crate::quad::integrate_gl;
use crate::spectral::{bracket, sobolev_inner, sobolev_norm_sq, theta_map};

/// How a `PathGrid` was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Exact,
    Euler,
    Picard,
    ClosedForm,
}

/// A trajectory sampled on an increasing time grid.
#[derive(Debug, Clone)]
pub struct PathGrid {
    pub times: Vec<f64>,
    pub states: Vec<SpectralCoeffs>,
    pub integrator: Integrator,
    pub epsilon: f64,
    pub seed: Option<u64>,
    /// left-limit states at each jump of the associated `JumpPath`
    pub pre_jump_states: Vec<SpectralCoeffs>,
}

impl PathGrid {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty grid")
    }

    pub fn endpoint(&self) -> &SpectralCoeffs {
        self.states.last().expect("nonempty grid")
    }

    /// sup over shared grid indices of the coefficient sup-gap.
    pub fn sup_gap(&self, other: &PathGrid) -> f64 {
        self.states
            .iter()
            .zip(other.states.iter())
            .map(|(a, b)| a.sup_gap(b))
            .fold(0.0, f64::max)
    }

    /// sup over grid times of ‖state − reference‖²_n.
    pub fn sup_sq_gap_to(&self, reference: &SpectralCoeffs, n: i32, params: &ModelParams) -> f64 {
        self.states
            .iter()
            .map(|s| {
                let mut d = s.clone();
                d.add_scaled(reference, -1.0);
                sobolev_norm_sq(&d, n, params)
            })
            .fold(0.0, f64::max)
    }
}

/// Uniform grid 0 = t_0 < … < t_m = horizon.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    let m = intervals.max(1);
    (0..=m).map(|k| horizon * k as f64 / m as f64).collect()
}

/// (1 − exp(−r t)) / r, with the r → 0 limit t.
pub fn relax(rate: f64, t: f64) -> f64 {
    if rate.abs() < 1e-12 {
        t
    } else {
        -(-rate * t).exp_m1() / rate
    }
}

/// Stationary solution of the noiseless equation: mode j equals
/// Σ_i a_i f_i g_j^i / (α + λ_j).
pub fn steady_state(params: &ModelParams, d_modes: usize) -> Result<SpectralCoeffs> {
    if params.alpha < 1e-12 && !params.sources.is_empty() {
        return Err(Error::Resonance);
    }
    if params.sources.is_empty() {
        return Ok(SpectralCoeffs::zeros(d_modes));
    }
    let op = PollutantCoefficients::new(params.clone(), d_modes)?;
    let coeffs = (0..=d_modes)
        .map(|j| op.source().coeffs[j] / op.decay_rate(j))
        .collect();
    Ok(SpectralCoeffs::from_vec(coeffs))
}

/// The noiseless flow u⁰(t): mode j relaxes from u0_j toward q_j/(α+λ_j).
pub fn noiseless_flow(
    params: &ModelParams,
    u0: &SpectralCoeffs,
    t: f64,
) -> Result<SpectralCoeffs> {
    let d = u0.truncation();
    let op = PollutantCoefficients::new(params.clone(), d)?;
    let coeffs = (0..=d)
        .map(|j| {
            let r = op.decay_rate(j);
            (-r * t).exp() * u0.coeffs[j] + op.source().coeffs[j] * relax(r, t)
        })
        .collect();
    Ok(SpectralCoeffs::from_vec(coeffs))
}

/// Evaluate the exact solution of the small-noise equation on `times` for a
/// fixed jump realization.
///
/// The compensator of the scaled noise cancels the deterministic source in
/// the drift, leaving per mode
/// u_j(t) = exp(−(α+λ_j) t) u_j(0) + ε Σ_{t_k ≤ t} a_k g_j^{i_k} exp(−(α+λ_j)(t−t_k)).
/// Values depend only on absolute times, so grid refinement reproduces
/// shared points bit for bit.
pub fn exact_path_from_jumps(
    params: &ModelParams,
    u0: &SpectralCoeffs,
    jumps: &JumpPath,
    times: &[f64],
) -> Result<PathGrid> {
    jumps.validate()?;
    let d = u0.truncation();
    let op = PollutantCoefficients::new(params.clone(), d)?;
    let eps = jumps.epsilon;
    let eval = |t: f64| -> SpectralCoeffs {
        let coeffs = (0..=d)
            .map(|j| {
                let r = op.decay_rate(j);
                let mut v = (-r * t).exp() * u0.coeffs[j];
                for e in &jumps.events {
                    if e.t > t {
                        break;
                    }
                    v += eps * e.mark * op.kernel_entry(e.source, j) * (-r * (t - e.t)).exp();
                }
                v
            })
            .collect();
        SpectralCoeffs::from_vec(coeffs)
    };
    let eval_left = |t: f64| -> SpectralCoeffs {
        let coeffs = (0..=d)
            .map(|j| {
                let r = op.decay_rate(j);
                let mut v = (-r * t).exp() * u0.coeffs[j];
                for e in &jumps.events {
                    if e.t >= t {
                        break;
                    }
                    v += eps * e.mark * op.kernel_entry(e.source, j) * (-r * (t - e.t)).exp();
                }
                v
            })
            .collect();
        SpectralCoeffs::from_vec(coeffs)
    };
    let states = times.iter().map(|&t| eval(t)).collect();
    let pre_jump_states = jumps.events.iter().map(|e| eval_left(e.t)).collect();
    Ok(PathGrid {
        times: times.to_vec(),
        states,
        integrator: Integrator::Exact,
        epsilon: eps,
        seed: None,
        pre_jump_states,
    })
}

/// Sample a jump realization and evaluate the exact path on a uniform grid.
pub fn simulate_exact(
    params: &ModelParams,
    epsilon: f64,
    u0: &SpectralCoeffs,
    horizon: f64,
    grid_intervals: usize,
    seed: u64,
) -> Result<(PathGrid, JumpPath)> {
    let jumps = sample_prm(params, epsilon, horizon, seed)?;
    let times = uniform_grid(horizon, grid_intervals);
    let mut path = exact_path_from_jumps(params, u0, &jumps, &times)?;
    path.seed = Some(seed);
    Ok((path, jumps))
}

/// Event-driven explicit Euler for a fixed jump realization.
///
/// Between events the state advances with the compensated drift
/// A(t, u) − q̄(t, u); each jump is applied at its exact time.
pub fn euler_path_from_jumps(
    op: &dyn CoefficientOperator,
    u0: &SpectralCoeffs,
    jumps: &JumpPath,
    dt: f64,
    guard: f64,
) -> Result<PathGrid> {
    let horizon = jumps.horizon;
    if !(dt > 0.0 && dt <= horizon) {
        return Err(Error::InvalidParameter(format!(
            "step {dt} must lie in (0, {horizon}]"
        )));
    }
    jumps.validate()?;
    let eps = jumps.epsilon;
    let n = (horizon / dt).round().max(1.0) as usize;
    let grid = uniform_grid(horizon, n);

    let mut state = u0.clone();
    let mut t = 0.0;
    let mut states = Vec::with_capacity(n + 1);
    states.push(state.clone());
    let mut pre_jump_states = Vec::with_capacity(jumps.events.len());
    let mut next_event = 0usize;

    for k in 1..=n {
        let node = grid[k];
        loop {
            let stop = if next_event < jumps.events.len() && jumps.events[next_event].t <= node {
                jumps.events[next_event].t
            } else {
                node
            };
            if stop > t {
                let step = stop - t;
                let mut rate = op.drift(t, &state)?;
                rate.add_scaled(&op.jump_mean(t, &state)?, -1.0);
                state.add_scaled(&rate, step);
                t = stop;
                if !state.is_finite() || state.h_norm() > guard {
                    return Err(Error::BlowUp {
                        t,
                        norm: state.h_norm(),
                        guard,
                    });
                }
            }
            if next_event < jumps.events.len() && jumps.events[next_event].t == t {
                let e = jumps.events[next_event];
                pre_jump_states.push(state.clone());
                let g = op.jump(t, &state, e.source, e.mark)?;
                state.add_scaled(&g, eps);
                next_event += 1;
            } else {
                break;
            }
        }
        states.push(state.clone());
    }

    Ok(PathGrid {
        times: grid,
        states,
        integrator: Integrator::Euler,
        epsilon: eps,
        seed: None,
        pre_jump_states,
    })
}

/// Sample a jump realization and integrate it with the Euler scheme.
pub fn simulate_euler(
    op: &dyn CoefficientOperator,
    epsilon: f64,
    u0: &SpectralCoeffs,
    horizon: f64,
    dt: f64,
    seed: u64,
    guard: f64,
) -> Result<(PathGrid, JumpPath)> {
    let jumps = sample_prm(op.params(), epsilon, horizon, seed)?;
    let mut path = euler_path_from_jumps(op, u0, &jumps, dt, guard)?;
    path.seed = Some(seed);
    Ok((path, jumps))
}

/// First iterate of the Picard solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialIterate {
    Zero,
    StartValue,
}

/// Convergence record of a Picard solve.
#[derive(Debug, Clone)]
pub struct PicardReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// sup over the grid of ‖x(t)‖_{−q}
    pub sup_norm: f64,
    /// ln of the Gronwall a-priori bound (‖x₀‖ + drive) e^{κ T}
    pub log_apriori_bound: f64,
    pub bound_satisfied: bool,
}

/// E_{F_i}[a g(s, i, a)] for one source under a control.
pub(crate) fn control_mark_mean(
    control: &Control,
    marks: &MarkDistribution,
    s: f64,
    i: usize,
) -> f64 {
    match control {
        Control::Constant { theta } => theta * marks.mean(),
        Control::Tilt(t) => {
            let k = t.slope(s, i);
            marks.expect(|a| a * (k * a).exp(), k.max(0.0))
        }
        Control::Tabulated(t) => {
            let bin = t.mark_caps[i] / t.mark_bins as f64;
            let mut acc = marks.interval_first_moment(t.mark_caps[i], f64::INFINITY);
            for mi in 0..t.mark_bins {
                acc += control.value(s, i, (mi as f64 + 0.5) * bin)
                    * marks.interval_first_moment(mi as f64 * bin, (mi + 1) as f64 * bin);
            }
            acc
        }
    }
}

/// Σ_i f_i E_{F_i}[G(s, u, (i, a)) (g(s, i, a) − 1)], the controlled jump
/// compensator entering the skeleton equation.
fn controlled_jump_mean(
    op: &dyn CoefficientOperator,
    control: &Control,
    s: f64,
    u: &SpectralCoeffs,
) -> Result<SpectralCoeffs> {
    let mut acc = SpectralCoeffs::zeros(op.dim());
    for (i, src) in op.params().sources.iter().enumerate() {
        let hint = match control {
            Control::Tilt(t) => t.slope(s, i).max(0.0),
            _ => 0.0,
        };
        for (a, w) in src.marks.quadrature(hint) {
            let gap = control.value(s, i, a) - 1.0;
            if gap != 0.0 {
                let g = op.jump(s, u, i, a)?;
                acc.add_scaled(&g, src.rate * w * gap);
            }
        }
    }
    Ok(acc)
}

/// Solve the controlled skeleton equation
/// x(t) = u0 + ∫₀^t A(s, x(s)) ds + ∫₀^t Σ_i f_i E[G(s, x, (i,a))(g−1)] ds
/// by windowed plain Picard iteration on a uniform grid (trapezoid
/// quadrature). Windows are sized so each iteration is a contraction even
/// for stiff truncations.
pub fn solve_skeleton_picard(
    control: &Control,
    op: &dyn CoefficientOperator,
    u0: &SpectralCoeffs,
    horizon: f64,
    dt: f64,
    tol: f64,
    max_iter: usize,
    init: InitialIterate,
) -> Result<(PathGrid, PicardReport)> {
    control.validate(op.params())?;
    if u0.truncation() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: u0.truncation(),
        });
    }
    if !(dt > 0.0 && dt <= horizon && tol > 0.0) {
        return Err(Error::InvalidParameter(
            "need 0 < dt <= horizon and tol > 0".into(),
        ));
    }
    let n = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / n as f64;
    let times = uniform_grid(horizon, n);

    let stiffness = drift_stiffness(op);
    let window_steps = if stiffness * h > 0.0 {
        ((0.5 / (stiffness * h)).floor() as usize).clamp(1, n)
    } else {
        n
    };
    let n_windows = n.div_ceil(window_steps);
    let window_tol = (tol / n_windows as f64).max(1e-14);

    // state-free jumps let the compensator be cached across iterations
    let cached: Option<Vec<SpectralCoeffs>> = if op.jump_state_free() {
        let probe = SpectralCoeffs::zeros(op.dim());
        Some(
            times
                .iter()
                .map(|&s| controlled_jump_mean(op, control, s, &probe))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let force = |s_idx: usize, x: &SpectralCoeffs| -> Result<SpectralCoeffs> {
        let mut f = op.drift(times[s_idx], x)?;
        match &cached {
            Some(c) => f.add_scaled(&c[s_idx], 1.0),
            None => f.add_scaled(&controlled_jump_mean(op, control, times[s_idx], x)?, 1.0),
        }
        Ok(f)
    };

    let mut states: Vec<SpectralCoeffs> = vec![u0.clone(); n + 1];
    let mut total_iterations = 0usize;
    let mut residual = f64::INFINITY;

    let mut w_start = 0usize;
    while w_start < n {
        let w_end = (w_start + window_steps).min(n);
        let start_state = states[w_start].clone();
        // initial iterate on the window
        for k in (w_start + 1)..=w_end {
            states[k] = match init {
                InitialIterate::Zero if w_start == 0 => SpectralCoeffs::zeros(op.dim()),
                _ => start_state.clone(),
            };
        }
        let mut converged = false;
        let mut history = Vec::new();
        for _ in 0..max_iter {
            total_iterations += 1;
            residual = 0.0;
            let mut prev_force = force(w_start, &start_state)?;
            let mut acc = start_state.clone();
            for k in (w_start + 1)..=w_end {
                let cur_force = force(k, &states[k])?;
                acc.add_scaled(&prev_force, 0.5 * h);
                acc.add_scaled(&cur_force, 0.5 * h);
                residual = residual.max(acc.sup_gap(&states[k]));
                states[k] = acc.clone();
                prev_force = force(k, &states[k])?;
            }
            history.push(residual);
            if residual < window_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: total_iterations,
                residual,
                history,
            });
        }
        w_start = w_end;
    }

    let (_, q) = op.indices();
    let sup_norm = states
        .iter()
        .map(|s| sobolev_norm_sq(s, -(q as i32), op.params()).sqrt())
        .fold(0.0, f64::max);
    let report = apriori_report(op, control, u0, horizon, stiffness, sup_norm)
        .map(|(log_bound, ok)| PicardReport {
            iterations: total_iterations,
            final_residual: residual,
            sup_norm,
            log_apriori_bound: log_bound,
            bound_satisfied: ok,
        })?;

    Ok((
        PathGrid {
            times,
            states,
            integrator: Integrator::Picard,
            epsilon: 0.0,
            seed: None,
            pre_jump_states: Vec::new(),
        },
        report,
    ))
}

fn drift_stiffness(op: &dyn CoefficientOperator) -> f64 {
    // Lipschitz bound of the drift on the truncation: probe each basis
    // direction (exact for affine drifts, a floor estimate otherwise).
    let zero = SpectralCoeffs::zeros(op.dim());
    let a0 = match op.drift(0.0, &zero) {
        Ok(v) => v,
        Err(_) => return 0.0,
    };
    let mut lip: f64 = 0.0;
    for j in 0..=op.dim() {
        if let Ok(mut aj) = op.drift(0.0, &SpectralCoeffs::basis(j, op.dim())) {
            aj.add_scaled(&a0, -1.0);
            lip = lip.max(aj.h_norm());
        }
    }
    lip
}

fn apriori_report(
    op: &dyn CoefficientOperator,
    control: &Control,
    u0: &SpectralCoeffs,
    horizon: f64,
    stiffness: f64,
    sup_norm: f64,
) -> Result<(f64, bool)> {
    let (_, q) = op.indices();
    let params = op.params();
    let a0 = op.drift(0.0, &SpectralCoeffs::zeros(op.dim()))?;
    let drive = horizon * sobolev_norm_sq(&a0, -(q as i32), params).sqrt();
    let m0 = controlled_jump_mean(op, control, 0.0, &SpectralCoeffs::zeros(op.dim()))?;
    let m_drive = horizon * sobolev_norm_sq(&m0, -(q as i32), params).sqrt();
    let cost = crate::prm::cost_lt(control, params, horizon)?;
    let kappa = stiffness + 1.0;
    let base = sobolev_norm_sq(u0, -(q as i32), params).sqrt() + drive + m_drive + cost;
    let log_bound = (base + f64::MIN_POSITIVE).ln() + kappa * horizon;
    let ok = sup_norm <= 0.0 || sup_norm.ln() <= log_bound;
    Ok((log_bound, ok))
}

/// Closed-form controlled skeleton from the stationary start:
/// mode j at time t is Σ_i f_i g_j^i [∫₀^t e^{−(α+λ_j)(t−s)} E[a g(s,i,a)] ds
/// + e^{−(α+λ_j) t} a_i/(α+λ_j)].
pub fn skeleton_closed_form(
    control: &Control,
    params: &ModelParams,
    u0: &SpectralCoeffs,
    horizon: f64,
    grid_intervals: usize,
    d_modes: usize,
) -> Result<PathGrid> {
    control.validate(params)?;
    let steady = steady_state(params, d_modes)?;
    if u0.truncation() != d_modes || u0.sup_gap(&steady) > 1e-8 {
        return Err(Error::Invalid(
            "the closed-form skeleton assumes the stationary start".into(),
        ));
    }
    let op = PollutantCoefficients::new(params.clone(), d_modes)?;
    let times = uniform_grid(horizon, grid_intervals);
    let states = times
        .iter()
        .map(|&t| {
            let coeffs = (0..=d_modes)
                .map(|j| {
                    let r = op.decay_rate(j);
                    let mut v = 0.0;
                    for (i, src) in params.sources.iter().enumerate() {
                        let time_int = decay_weighted_mark_mean(control, params, i, j, r, t);
                        v += src.rate
                            * op.kernel_entry(i, j)
                            * (time_int + (-r * t).exp() * op.mean_mark(i) / r);
                    }
                    v
                })
                .collect();
            SpectralCoeffs::from_vec(coeffs)
        })
        .collect();
    Ok(PathGrid {
        times,
        states,
        integrator: Integrator::ClosedForm,
        epsilon: 0.0,
        seed: None,
        pre_jump_states: Vec::new(),
    })
}

/// ∫₀^t e^{−r (t−s)} E_{F_i}[a g(s, i, a)] ds, closed form in time for
/// piecewise-constant controls, Gauss-Legendre on the decay window otherwise.
fn decay_weighted_mark_mean(
    control: &Control,
    params: &ModelParams,
    i: usize,
    _j: usize,
    r: f64,
    t: f64,
) -> f64 {
    let marks = &params.sources[i].marks;
    match control {
        Control::Constant { theta } => theta * marks.mean() * relax(r, t),
        Control::Tabulated(tab) => {
            let dt = tab.horizon / tab.time_bins as f64;
            let mut acc = 0.0;
            for ti in 0..tab.time_bins {
                let s0 = (ti as f64 * dt).min(t);
                let s1 = ((ti + 1) as f64 * dt).min(t);
                if s1 <= s0 {
                    break;
                }
                let mid = 0.5 * (s0 + s1);
                let ea = control_mark_mean(control, marks, mid, i);
                acc += ea * (-r * (t - s1)).exp() * relax(r, s1 - s0);
            }
            acc
        }
        Control::Tilt(_) => {
            let lo = if r > 0.0 { (t - 40.0 / r).max(0.0) } else { 0.0 };
            integrate_gl(
                |s| (-r * (t - s)).exp() * control_mark_mean(control, marks, s, i),
                lo,
                t,
                64,
            )
        }
    }
}

/// sup over grid times of the defect in the pathwise energy identity
/// ‖X_t‖²_{−p} = ‖X₀‖²_{−p} + 2∫ (A − q̄)(X_s)[θ_p X_s] ds
///            + Σ_{t_k ≤ t} (ε² ‖G_k‖²_{−p} + 2ε ⟨G_k, X_{t_k−}⟩_{−p}),
/// with the time integral on the trapezoid rule over the path grid and the
/// jump terms summed exactly from the recorded left limits.
pub fn energy_residual(
    path: &PathGrid,
    jumps: &JumpPath,
    op: &dyn CoefficientOperator,
    p: u32,
) -> Result<f64> {
    if path.pre_jump_states.len() != jumps.events.len()
        || path.epsilon != jumps.epsilon
        || (path.horizon() - jumps.horizon).abs() > 1e-12
    {
        return Err(Error::Invalid(
            "path and jump realization do not belong together".into(),
        ));
    }
    let params = op.params();
    let eps = path.epsilon;
    let pi = p as i32;
    let norm0 = sobolev_norm_sq(&path.states[0], -pi, params);

    // integrand of the drift term at the grid states
    let drift_term = |idx: usize| -> Result<f64> {
        let t = path.times[idx];
        let x = &path.states[idx];
        let mut b = op.drift(t, x)?;
        b.add_scaled(&op.jump_mean(t, x)?, -1.0);
        Ok(2.0 * bracket(&b, &theta_map(x, p, params), 0, params))
    };

    let mut residual: f64 = 0.0;
    let mut integral = 0.0;
    let mut prev = drift_term(0)?;
    let mut next_event = 0usize;
    let mut jump_sum = 0.0;
    for idx in 0..path.times.len() {
        if idx > 0 {
            let cur = drift_term(idx)?;
            integral += 0.5 * (path.times[idx] - path.times[idx - 1]) * (prev + cur);
            prev = cur;
        }
        while next_event < jumps.events.len() && jumps.events[next_event].t <= path.times[idx] {
            let e = jumps.events[next_event];
            let left = &path.pre_jump_states[next_event];
            let g = op.jump(e.t, left, e.source, e.mark)?;
            jump_sum += eps * eps * sobolev_norm_sq(&g, -pi, params)
                + 2.0 * eps * sobolev_inner(&g, left, -pi, params);
            next_event += 1;
        }
        let lhs = sobolev_norm_sq(&path.states[idx], -pi, params);
        residual = residual.max((lhs - (norm0 + integral + jump_sum)).abs());
    }
    Ok(residual)
}
