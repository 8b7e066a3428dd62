//! Experiment configuration.
//!
//! Every field has a default, so an empty file reproduces the reference
//! study. Relative paths are resolved against the directory of the config
//! file.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use srm_commutation::commutation::{ConventionalTsf, TsfKind};
use srm_commutation::gp::{GpOptions, DEFAULT_MU};
use srm_commutation::motor::TorqueGainModel;
use srm_commutation::sim::{DiscreteController, SimOptions, DEFAULT_M_SIM, DEFAULT_TS};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Motor model TOML; the bundled model when absent.
    pub motor: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub synthesis: SynthesisConfig,
    pub gp: GpConfig,
    pub simulation: SimulationConfig,
    pub baseline: BaselineConfig,
    pub sweep_beta: SweepBetaConfig,
    pub ripple: RippleConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub mu: u32,
    pub length_factors: Option<Vec<f64>>,
    pub signal_factors: Option<Vec<f64>>,
    pub noise_factors: Option<Vec<f64>>,
    pub max_evals: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    /// Denominator with an exact pole at 1.
    Integrator,
    /// Denominator coefficients exactly as printed.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Teeth per second.
    pub velocities: Vec<f64>,
    pub m_sim: usize,
    pub controller: ControllerChoice,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: String,
    /// Electrical radians.
    pub overlap: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBetaConfig {
    pub betas: Vec<f64>,
    /// Teeth per second.
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RippleConfig {
    /// Rad/s; the nominal velocity of the synthesis grid when absent.
    pub velocity: Option<f64>,
    /// Requested torque scaling the absolute ripple columns (Nm).
    pub torque: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Teeth per second.
    pub velocity: f64,
    /// `sine`, `cubic`, `linear`, `optimal` or `table`.
    pub commutation: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            motor: None,
            output_dir: PathBuf::from("out"),
            synthesis: SynthesisConfig::default(),
            gp: GpConfig::default(),
            simulation: SimulationConfig::default(),
            baseline: BaselineConfig::default(),
            sweep_beta: SweepBetaConfig::default(),
            ripple: RippleConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n: 150,
            m: 15,
            beta: 1000.0,
            ts: DEFAULT_TS,
        }
    }
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            length_factors: None,
            signal_factors: None,
            noise_factors: None,
            max_evals: None,
        }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            velocities: vec![0.5, 1.0, 2.0, 4.0, 5.0, 8.0, 10.0, 12.0, 15.0, 20.0],
            m_sim: DEFAULT_M_SIM,
            controller: ControllerChoice::Integrator,
        }
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: "sine".into(),
            overlap: PI / 6.0,
            saturation: ConventionalTsf::DEFAULT_SATURATION,
        }
    }
}

impl Default for SweepBetaConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0],
            velocity: 8.0,
        }
    }
}

impl Default for RippleConfig {
    fn default() -> Self {
        Self {
            velocity: None,
            torque: 1.0,
        }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            velocity: 8.0,
            commutation: "optimal".into(),
        }
    }
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse, resolve relative paths against the file's directory, validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = toml::from_str::<Self>(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &config.motor {
            if m.is_relative() {
                config.motor = Some(base.join(m));
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if let Some(m) = &self.motor {
            if !m.is_file() {
                return bad(format!("motor model {} does not exist", m.display()));
            }
        }
        let s = &self.synthesis;
        if s.n < 2 {
            return bad(format!("synthesis.n must be at least 2, got {}", s.n));
        }
        if s.m < 1 {
            return bad("synthesis.m must be at least 1".into());
        }
        if !(s.beta >= 0.0 && s.beta.is_finite()) {
            return bad(format!(
                "synthesis.beta must be finite and nonnegative, got {}",
                s.beta
            ));
        }
        if !positive_finite(s.ts) {
            return bad(format!("synthesis.ts must be positive, got {}", s.ts));
        }
        for (name, list) in [
            ("gp.length_factors", &self.gp.length_factors),
            ("gp.signal_factors", &self.gp.signal_factors),
            ("gp.noise_factors", &self.gp.noise_factors),
        ] {
            if let Some(l) = list {
                if l.is_empty() || !l.iter().all(|x| positive_finite(*x)) {
                    return bad(format!(
                        "{name} must be a nonempty list of positive numbers"
                    ));
                }
            }
        }
        if self.gp.max_evals == Some(0) {
            return bad("gp.max_evals must be positive".into());
        }
        let sim = &self.simulation;
        if sim.velocities.is_empty() || !sim.velocities.iter().all(|v| positive_finite(*v)) {
            return bad("simulation.velocities must be a nonempty list of positive numbers".into());
        }
        if sim.m_sim < 1 {
            return bad("simulation.m_sim must be at least 1".into());
        }
        self.baseline_kind()?;
        if !(self.baseline.overlap > 0.0 && self.baseline.overlap < 2.0 * PI / 3.0) {
            return bad(format!(
                "baseline.overlap must lie in (0, 2pi/3), got {}",
                self.baseline.overlap
            ));
        }
        if !positive_finite(self.baseline.saturation) {
            return bad(format!(
                "baseline.saturation must be positive, got {}",
                self.baseline.saturation
            ));
        }
        let sb = &self.sweep_beta;
        if sb.betas.is_empty() || !sb.betas.iter().all(|b| *b >= 0.0 && b.is_finite()) {
            return bad("sweep_beta.betas must be a nonempty list of nonnegative numbers".into());
        }
        if !positive_finite(sb.velocity) {
            return bad("sweep_beta.velocity must be positive".into());
        }
        if let Some(v) = self.ripple.velocity {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("ripple.velocity must be nonnegative, got {v}"));
            }
        }
        if !(self.ripple.torque.is_finite() && self.ripple.torque != 0.0) {
            return bad("ripple.torque must be finite and nonzero".into());
        }
        if !positive_finite(self.simulate.velocity) {
            return bad("simulate.velocity must be positive".into());
        }
        crate::pipeline::Method::parse(&self.simulate.commutation).ok_or_else(|| {
            CliError::Config(format!(
                "unknown simulate.commutation `{}`",
                self.simulate.commutation
            ))
        })?;
        Ok(())
    }

    pub fn baseline_kind(&self) -> Result<TsfKind, CliError> {
        self.baseline.kind.parse().map_err(|_| {
            CliError::Config(format!("unknown baseline.kind `{}`", self.baseline.kind))
        })
    }

    pub fn load_model(&self) -> Result<TorqueGainModel, CliError> {
        let model = match &self.motor {
            Some(path) => TorqueGainModel::load(path)?,
            None => TorqueGainModel::default_model(),
        };
        model.ensure_valid()?;
        Ok(model)
    }

    pub fn gp_options(&self) -> GpOptions {
        let mut opts = GpOptions {
            mu: self.gp.mu,
            ..GpOptions::default()
        };
        if let Some(l) = &self.gp.length_factors {
            opts.length_factors = l.clone();
        }
        if let Some(s) = &self.gp.signal_factors {
            opts.signal_factors = s.clone();
        }
        if let Some(n) = &self.gp.noise_factors {
            opts.noise_factors = n.clone();
        }
        if let Some(e) = self.gp.max_evals {
            opts.max_evals = e;
        }
        opts
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            ts: self.synthesis.ts,
            m_sim: self.simulation.m_sim,
        }
    }

    pub fn controller(&self) -> DiscreteController {
        match self.simulation.controller {
            ControllerChoice::Integrator => DiscreteController::default(),
            ControllerChoice::Printed => DiscreteController::as_printed(),
        }
    }
}
