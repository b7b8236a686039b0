//! Batch front door for the simulator and large-deviations toolkit.
//!
//! Every run is driven by a TOML config plus a handful of orchestration
//! flags, and writes CSV outputs together with a manifest sufficient to
//! replay the run. Outputs are byte-identical for a fixed config and seed,
//! independent of the worker count.

mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::{EstimationMode, RunConfig};
use sha2::{Digest, Sha256};
use spde_ldp::io::{format_full, jump_path_to_csv, path_grid_to_csv};
use spde_ldp::prm::cost_lt;
use spde_ldp::spectral::gram_matrix;
use spde_ldp::{
    endpoint_kernel, entropy_l, estimate_plain, ldp_diagnostic, mix_seed, rate_endpoint_dual,
    rate_endpoint_grid, run_indexed, sample_controlled_prm, simulate_euler, simulate_exact,
    skeleton_closed_form, solve_skeleton_picard, steady_state, verify_conditions,
    Control, Error, GirsanovWeigher, InitialIterate, PollutantCoefficients,
    RateQuadrature, RateResult, SpectralCoeffs,
};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_UNATTAINABLE: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_VALIDATION: u8 = 5;

#[derive(Parser)]
#[command(name = "spde-ldp", version, about = "Spectral jump-diffusion simulator and rare-event toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// output directory (overrides the config's output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads for ensembles; results do not depend on this
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// integrator / solver selection where applicable
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// also run the independent oracle (grid rate solver) and report the gap
    #[arg(long, global = true)]
    cross_check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// sample one noise realization and write its path and jumps
    Simulate,
    /// solve the controlled deterministic skeleton
    Skeleton,
    /// write the stationary solution of the noiseless equation
    Steady,
    /// evaluate the rate of the configured endpoint event
    Rate,
    /// estimate the event probability over the configured noise scales
    Estimate,
    /// run the self-validation suite
    Validate,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Mode {
    Exact,
    Euler,
    Picard,
    ClosedForm,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Unattainable { .. } => EXIT_UNATTAINABLE,
            Error::NonConvergence { .. }
            | Error::BlowUp { .. }
            | Error::Resonance
            | Error::RootFinder(_)
            | Error::DivergentCost(_)
            | Error::ZeroControlAtEvent => EXIT_SOLVER,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: format!("io: {e}"),
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    config_sha256: String,
    out_dir: PathBuf,
    workers: usize,
    mode: Option<Mode>,
    cross_check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", cli.config.display())))?;
    let cfg = RunConfig::parse(&text).map_err(Failure::config)?;
    let out_dir = cli
        .out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let ctx = Ctx {
        config_sha256: hex_digest(text.as_bytes()),
        cfg,
        out_dir,
        workers: cli.workers.max(1),
        mode: cli.mode,
        cross_check: cli.cross_check,
    };
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Skeleton => cmd_skeleton(&ctx),
        Command::Steady => cmd_steady(&ctx),
        Command::Rate => cmd_rate(&ctx),
        Command::Estimate => cmd_estimate(&ctx),
        Command::Validate => cmd_validate(&ctx),
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(ctx: &Ctx, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::write(ctx.out_dir.join(name), contents)?;
    Ok(())
}

fn write_manifest(ctx: &Ctx, command: &str, seed: Option<u64>) -> Result<(), Failure> {
    let mut m = String::new();
    m.push_str(&format!("command = \"{command}\"\n"));
    m.push_str(&format!("config_sha256 = \"{}\"\n", ctx.config_sha256));
    if let Some(seed) = seed {
        m.push_str(&format!("seed = {seed}\n"));
    }
    m.push_str(&format!("version = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    write_file(ctx, "manifest.toml", &m)
}

fn require_estimation(ctx: &Ctx) -> Result<&config::EstimationSection, Failure> {
    ctx.cfg
        .estimation
        .as_ref()
        .ok_or_else(|| Failure::config("this command needs an [estimation] section (epsilons, n_samples, seed)"))
}

fn require_event(ctx: &Ctx) -> Result<spde_ldp::EndpointEvent, Failure> {
    ctx.cfg
        .endpoint_event()
        .ok_or_else(|| Failure::config("this command needs an [event] section"))
}

fn cmd_simulate(ctx: &Ctx) -> Result<(), Failure> {
    let est = require_estimation(ctx)?;
    let params = ctx.cfg.params();
    let num = &ctx.cfg.numerics;
    let epsilon = est.epsilons[0];
    let u0 = steady_state(&params, num.d_modes)?;
    let (path, jumps) = match ctx.mode.unwrap_or(Mode::Exact) {
        Mode::Exact => simulate_exact(
            &params,
            epsilon,
            &u0,
            num.horizon,
            num.grid_intervals,
            est.seed,
        )?,
        Mode::Euler => {
            let op = PollutantCoefficients::new(params.clone(), num.d_modes)?;
            simulate_euler(&op, epsilon, &u0, num.horizon, num.dt, est.seed, 1e9)?
        }
        _ => {
            return Err(Failure::config(
                "simulate supports --mode exact or euler",
            ))
        }
    };
    write_file(ctx, "path.csv", &path_grid_to_csv(&path))?;
    write_file(ctx, "jumps.csv", &jump_path_to_csv(&jumps))?;
    write_manifest(ctx, "simulate", Some(est.seed))
}

fn cmd_skeleton(ctx: &Ctx) -> Result<(), Failure> {
    let params = ctx.cfg.params();
    let num = &ctx.cfg.numerics;
    let control = ctx.cfg.explicit_control().unwrap_or_else(Control::identity);
    let u0 = steady_state(&params, num.d_modes)?;
    let path = match ctx.mode.unwrap_or(Mode::Picard) {
        Mode::Picard => {
            let op = PollutantCoefficients::new(params.clone(), num.d_modes)?;
            let (path, _) = solve_skeleton_picard(
                &control,
                &op,
                &u0,
                num.horizon,
                num.dt,
                num.tol,
                num.max_iter,
                InitialIterate::StartValue,
            )?;
            path
        }
        Mode::ClosedForm => skeleton_closed_form(
            &control,
            &params,
            &u0,
            num.horizon,
            num.grid_intervals,
            num.d_modes,
        )?,
        _ => {
            return Err(Failure::config(
                "skeleton supports --mode picard or closed-form",
            ))
        }
    };
    write_file(ctx, "skeleton.csv", &path_grid_to_csv(&path))?;
    write_manifest(ctx, "skeleton", None)
}

fn cmd_steady(ctx: &Ctx) -> Result<(), Failure> {
    let params = ctx.cfg.params();
    let ss = steady_state(&params, ctx.cfg.numerics.d_modes)?;
    let mut csv = String::from("mode,coeff\n");
    for (j, c) in ss.coeffs.iter().enumerate() {
        csv.push_str(&format!("{j},{}\n", format_full(*c)));
    }
    write_file(ctx, "steady.csv", &csv)?;
    write_manifest(ctx, "steady", None)
}

fn solve_rate(ctx: &Ctx) -> Result<RateResult, Failure> {
    let event = require_event(ctx)?;
    let params = ctx.cfg.params();
    Ok(rate_endpoint_dual(
        &event,
        &params,
        ctx.cfg.numerics.d_modes,
        1e-12,
        RateQuadrature::default(),
    )?)
}

fn cmd_rate(ctx: &Ctx) -> Result<(), Failure> {
    let event = require_event(ctx)?;
    let params = ctx.cfg.params();
    let d = ctx.cfg.numerics.d_modes;
    let dual = match rate_endpoint_dual(&event, &params, d, 1e-12, RateQuadrature::default()) {
        Ok(r) => r,
        Err(Error::Unattainable { level, bound }) => {
            let report = format!(
                "status = \"unattainable\"\nlevel = {}\nreachable_bound = {}\n",
                format_full(level),
                format_full(bound)
            );
            write_file(ctx, "rate.txt", &report)?;
            write_manifest(ctx, "rate", None)?;
            return Err(Failure::from(Error::Unattainable { level, bound }));
        }
        Err(e) => return Err(e.into()),
    };
    let mut report = String::from("status = \"ok\"\n");
    report.push_str(&format!("nominal = {}\n", format_full(dual.nominal)));
    report.push_str(&format!("level = {}\n", format_full(event.level)));
    report.push_str(&format!("beta = {}\n", format_full(dual.beta)));
    report.push_str(&format!("rate = {}\n", format_full(dual.rate)));
    report.push_str(&format!(
        "achieved_value = {}\n",
        format_full(dual.achieved_value)
    ));
    report.push_str(&format!("iterations = {}\n", dual.iterations));
    report.push_str(&format!(
        "duality_gap = {}\n",
        format_full(dual.duality_gap)
    ));
    if ctx.cross_check {
        let grid = rate_endpoint_grid(&event, &params, d, 64, 64, 1e-10)?;
        let gap = (dual.rate - grid.rate).abs() / dual.rate.max(1e-300);
        report.push_str(&format!("grid_rate = {}\n", format_full(grid.rate)));
        report.push_str(&format!("grid_beta = {}\n", format_full(grid.beta)));
        report.push_str(&format!(
            "grid_kkt_deviation = {}\n",
            format_full(grid.kkt_deviation.unwrap_or(f64::NAN))
        ));
        report.push_str(&format!("cross_check_gap = {}\n", format_full(gap)));
        println!("cross-check relative gap: {gap:e}");
    }
    write_file(ctx, "rate.txt", &report)?;

    // the optimal tilt sampled on the output grid: per-source log-slope
    // H_i(s) such that g*(s, i, a) = exp(beta a H_i(s))
    let kernel = endpoint_kernel(&event, &params, d)?;
    let n = ctx.cfg.numerics.grid_intervals;
    let mut csv = String::from("s");
    for i in 0..params.sources.len() {
        csv.push_str(&format!(",slope_{i},g_at_unit_mark_{i}"));
    }
    csv.push('\n');
    for k in 0..=n {
        let s = event.horizon * k as f64 / n as f64;
        csv.push_str(&format_full(s));
        for i in 0..params.sources.len() {
            let h = kernel.value(s, i, 1.0);
            csv.push(',');
            csv.push_str(&format_full(dual.beta * h));
            csv.push(',');
            csv.push_str(&format_full((dual.beta * h).exp()));
        }
        csv.push('\n');
    }
    write_file(ctx, "control.csv", &csv)?;
    write_manifest(ctx, "rate", None)
}

fn cmd_estimate(ctx: &Ctx) -> Result<(), Failure> {
    let event = require_event(ctx)?;
    let est = require_estimation(ctx)?;
    let params = ctx.cfg.params();
    let d = ctx.cfg.numerics.d_modes;
    let mut csv = String::from("epsilon,p_hat,std_err,neg_eps_log_p,rate,gap\n");
    match est.mode {
        EstimationMode::Is => {
            let rows = ldp_diagnostic(
                &event,
                &params,
                &est.epsilons,
                est.n_samples,
                est.seed,
                ctx.workers,
                d,
            )?;
            for r in rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    format_full(r.epsilon),
                    format_full(r.p_hat),
                    format_full(r.std_err),
                    format_full(r.neg_eps_log_p),
                    format_full(r.rate),
                    format_full(r.relative_gap)
                ));
            }
        }
        EstimationMode::Plain => {
            let rate = solve_rate(ctx)?;
            for (idx, &eps) in est.epsilons.iter().enumerate() {
                let e = estimate_plain(
                    &event,
                    &params,
                    eps,
                    est.n_samples,
                    mix_seed(est.seed, idx as u64),
                    ctx.workers,
                    d,
                )?;
                let gap = if rate.rate > 0.0 {
                    (e.neg_eps_log_p - rate.rate).abs() / rate.rate
                } else {
                    e.neg_eps_log_p.abs()
                };
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    format_full(eps),
                    format_full(e.p_hat),
                    format_full(e.std_err),
                    format_full(e.neg_eps_log_p),
                    format_full(rate.rate),
                    format_full(gap)
                ));
            }
        }
    }
    write_file(ctx, "estimate.csv", &csv)?;
    write_manifest(ctx, "estimate", Some(est.seed))
}

fn cmd_validate(ctx: &Ctx) -> Result<(), Failure> {
    let params = ctx.cfg.params();
    let d = ctx.cfg.numerics.d_modes.min(16);
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("check {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // eigenbasis orthonormality under the weighted inner product
    let gram = gram_matrix(&params, 8, 4_000);
    let mut dev: f64 = 0.0;
    for (j, row) in gram.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let expect = if j == k { 1.0 } else { 0.0 };
            dev = dev.max((v - expect).abs());
        }
    }
    check("orthonormality", dev <= 1e-6, format!("max deviation {dev:e}"));

    // structural conditions of the coefficient operators
    let op = PollutantCoefficients::new(params.clone(), d)?;
    let mut samples = Vec::new();
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
        ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    };
    for _ in 0..12 {
        let mk = |f: &mut dyn FnMut() -> f64| {
            SpectralCoeffs::from_vec((0..=d).map(|_| f()).collect())
        };
        samples.push((0.0, mk(&mut next), mk(&mut next)));
    }
    match verify_conditions(&op, &samples, 1e-8) {
        Ok(report) => {
            check(
                "coercivity",
                report.coercivity_k.is_finite(),
                format!("K = {:.6}", report.coercivity_k),
            );
            check(
                "growth",
                report.growth_drift_k.is_finite() && report.growth_jump_k.is_finite(),
                format!(
                    "drift K = {:.6}, jump K = {:.6}",
                    report.growth_drift_k, report.growth_jump_k
                ),
            );
            check(
                "monotonicity",
                report.monotonicity_k <= 1e-8,
                format!("K = {:e}", report.monotonicity_k),
            );
            check(
                "mark_integrability",
                report.exp_integrable,
                "E[exp(delta a^2)] finite for every source".into(),
            );
        }
        Err(e) => check("conditions", false, e.to_string()),
    }

    // pathwise energy balance on a sampled trajectory
    if params.sources.is_empty() || params.alpha >= 1e-12 {
        let ss = steady_state(&params, d.min(8))?;
        let small_op = PollutantCoefficients::new(params.clone(), d.min(8))?;
        let (path, jumps) = simulate_exact(&params, 0.2, &ss, 1.0, 2_000, 17)?;
        let res = spde_ldp::energy_residual(&path, &jumps, &small_op, 1)?;
        check("energy_identity", res <= 1e-2, format!("residual {res:e}"));
    }

    // likelihood weights under a nontrivial tilt average to one
    if !params.sources.is_empty() {
        let control = Control::Constant { theta: 1.4 };
        let weigher = GirsanovWeigher::new(control.clone(), &params, 0.5, 1.0)?;
        let n = 4_000;
        let weights = run_indexed(n, ctx.workers, |k| {
            let path =
                sample_controlled_prm(&control, &params, 0.5, 1.0, mix_seed(23, k as u64)).unwrap();
            weigher.log_weight(&path).unwrap().exp()
        });
        let (mean, se) = spde_ldp::mean_and_stderr(&weights);
        check(
            "mean_one_weights",
            (mean - 1.0).abs() <= 5.0 * se.max(1e-12),
            format!("mean {mean:.6} +- {se:.6}"),
        );
        let cost = cost_lt(&control, &params, 1.0)?;
        check("tilt_cost_positive", cost > 0.0, format!("cost {cost:.6}"));
    }

    // entropy inequality spot checks
    let l = |r: f64| entropy_l(r).unwrap();
    let mut ok = true;
    for i in 0..2_000 {
        let a = (i % 97) as f64 / 97.0;
        let b = 50.0 * ((i % 89) as f64 / 89.0);
        let sigma = 1e-3 + 5.0 * ((i % 83) as f64 / 83.0);
        ok &= a * b <= (sigma * a).exp() + l(b) / sigma + 1e-12;
    }
    check("entropy_inequality", ok, "2000 grid triples".into());

    write_manifest(ctx, "validate", None)?;
    if all_ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VALIDATION,
            message: "validation suite reported failures".into(),
        })
    }
}
