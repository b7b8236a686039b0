//! Spectral simulator and large-deviations toolkit for a jump-driven
//! convection-diffusion model on an interval.
//!
//! The state is expanded in the eigenbasis of the drift operator
//! L = D d²/dx² − V d/dx with no-flux boundary conditions on [0, ℓ].
//! Pollutant mass arrives at fixed source locations at Poisson event times
//! with random marks; between events every mode decays at its own rate.
//! On top of the simulator the crate provides entropy-cost rate functions
//! for endpoint events, tilted importance sampling with exact likelihood
//! weights, and deterministic parallel ensembles.
//!
//! Module map:
//! - [`spectral`]: eigenvalues, eigenfunctions, weighted Sobolev norms
//! - [`model`]: parameters, mark distributions, coefficient vectors
//! - [`coefficients`]: drift and jump operators, structural condition checks
//! - [`prm`]: Poisson random measures, controls, entropy cost, Girsanov weights
//! - [`dynamics`]: exact/Euler simulation, skeletons, energy identity
//! - [`ldp`]: rate functions and rare-event estimators
//! - [`ensemble`]: deterministic seeding and worker-count-invariant reductions
//! - [`io`]: full-precision CSV serialization
//! - [`quad`]: quadrature building blocks

pub mod coefficients;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod ldp;
pub mod model;
pub mod prm;
pub mod quad;
pub mod spectral;

pub use coefficients::{verify_conditions, CoefficientOperator, ConditionReport, PollutantCoefficients};
pub use dynamics::{
    energy_residual, euler_path_from_jumps, exact_path_from_jumps, noiseless_flow, simulate_euler,
    simulate_exact, skeleton_closed_form, solve_skeleton_picard, steady_state, uniform_grid,
    InitialIterate, Integrator, PathGrid, PicardReport,
};
pub use ensemble::{mean_and_stderr, mix_seed, pairwise_sum, run_indexed};
pub use error::{Error, Result};
pub use ldp::{
    endpoint_kernel, estimate_is, estimate_plain, ldp_diagnostic, rate_endpoint_dual,
    rate_endpoint_grid, DiagnosticRow, Direction, EndpointEvent, EndpointKernel, Estimate,
    RateQuadrature, RateResult,
};
pub use model::{MarkDistribution, ModelParams, SourceSpec, SpectralCoeffs};
pub use prm::{
    cost_lt, entropy_l, girsanov_log_weight, sample_controlled_prm, sample_prm, Control,
    ExpSumProfile, GirsanovWeigher, JumpEvent, JumpPath, TabulatedControl, TiltControl,
};
