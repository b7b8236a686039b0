//! Run configuration: a single TOML file with nested sections.
//!
//! All science parameters live in the file so runs diff cleanly; command-line
//! flags only select the subcommand, worker count, and output location.
//! The random seed is mandatory: there is no wall-clock default.

use serde::Deserialize;
use spde_ldp::{
    Control, Direction, EndpointEvent, MarkDistribution, ModelParams, SourceSpec, SpectralCoeffs,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    pub event: Option<EventSection>,
    pub estimation: Option<EstimationSection>,
    pub control: Option<ControlSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub diffusion: f64,
    pub velocity: f64,
    pub alpha: f64,
    pub ell: f64,
    #[serde(default)]
    pub sources: Vec<SourceSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub kappa: f64,
    pub rate: f64,
    pub marks: MarksSection,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarksSection {
    Point { a0: f64 },
    Uniform { a_max: f64 },
    HalfNormal { sigma: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "default_d_modes")]
    pub d_modes: usize,
    #[serde(default = "default_grid_intervals")]
    pub grid_intervals: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_d_modes() -> usize {
    32
}
fn default_grid_intervals() -> usize {
    256
}
fn default_dt() -> f64 {
    1e-3
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    200
}
fn default_horizon() -> f64 {
    1.0
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            d_modes: default_d_modes(),
            grid_intervals: default_grid_intervals(),
            dt: default_dt(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    /// coefficients of the linear endpoint functional in the eigenbasis
    pub psi: Vec<f64>,
    pub level: f64,
    pub direction: DirectionSection,
    pub horizon: f64,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSection {
    Ge,
    Le,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    pub epsilons: Vec<f64>,
    pub n_samples: usize,
    /// mandatory for reproducibility
    pub seed: u64,
    #[serde(default)]
    pub mode: EstimationMode,
}

#[derive(Debug, Deserialize, Clone, Copy, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    #[default]
    Is,
    Plain,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSection {
    Identity,
    Constant { theta: f64 },
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| format!("config parse: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        self.params()
            .validate()
            .map_err(|e| format!("model section: {e}"))?;
        if !(self.numerics.d_modes >= 1
            && self.numerics.grid_intervals >= 1
            && self.numerics.dt > 0.0
            && self.numerics.tol > 0.0
            && self.numerics.max_iter >= 1
            && self.numerics.horizon > 0.0)
        {
            return Err("numerics section: all fields must be positive".into());
        }
        if let Some(ev) = &self.event {
            self.endpoint_event_from(ev)
                .validate()
                .map_err(|e| format!("event section: {e}"))?;
        }
        if let Some(est) = &self.estimation {
            if est.epsilons.is_empty() || est.epsilons.iter().any(|e| !(*e > 0.0)) {
                return Err("estimation section: epsilons must be a nonempty positive list".into());
            }
            if est.n_samples == 0 {
                return Err("estimation section: n_samples must be at least 1".into());
            }
        }
        if let Some(ControlSection::Constant { theta }) = &self.control {
            if !(*theta > 0.0 && theta.is_finite()) {
                return Err("control section: theta must be positive and finite".into());
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            diffusion: self.model.diffusion,
            velocity: self.model.velocity,
            alpha: self.model.alpha,
            ell: self.model.ell,
            sources: self
                .model
                .sources
                .iter()
                .map(|s| SourceSpec {
                    kappa: s.kappa,
                    rate: s.rate,
                    marks: match &s.marks {
                        MarksSection::Point { a0 } => MarkDistribution::PointMass { a0: *a0 },
                        MarksSection::Uniform { a_max } => {
                            MarkDistribution::Uniform { a_max: *a_max }
                        }
                        MarksSection::HalfNormal { sigma } => {
                            MarkDistribution::HalfNormal { sigma: *sigma }
                        }
                    },
                })
                .collect(),
        }
    }

    fn endpoint_event_from(&self, ev: &EventSection) -> EndpointEvent {
        EndpointEvent {
            test: SpectralCoeffs::from_vec(ev.psi.clone()),
            level: ev.level,
            direction: match ev.direction {
                DirectionSection::Ge => Direction::Ge,
                DirectionSection::Le => Direction::Le,
            },
            horizon: ev.horizon,
        }
    }

    pub fn endpoint_event(&self) -> Option<EndpointEvent> {
        self.event.as_ref().map(|ev| self.endpoint_event_from(ev))
    }

    pub fn explicit_control(&self) -> Option<Control> {
        self.control.as_ref().map(|c| match c {
            ControlSection::Identity => Control::identity(),
            ControlSection::Constant { theta } => Control::Constant { theta: *theta },
        })
    }
}
