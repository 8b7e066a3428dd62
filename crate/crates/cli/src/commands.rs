//! The CLI verbs. Each writes only into the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use srm_commutation::commutation::{CommutationFunction, TsfKind};
use srm_commutation::gp;
use srm_commutation::ripple::nominal_velocity;
use srm_commutation::sim::{open_loop_ripple, SimMetrics};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::{self, Method, Synthesis};

pub const VELOCITY_SWEEP_FILE: &str = "velocity_sweep.csv";
pub const BETA_SWEEP_FILE: &str = "beta_sweep.csv";
pub const RIPPLE_FILE: &str = "ripple.csv";
pub const SIMULATION_FILE: &str = "simulation.csv";
pub const METRICS_FILE: &str = "metrics.txt";

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write every file to a temporary name first and rename once all writes
/// succeeded, so a failure leaves no partial outputs.
pub fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(CliError::io(&tmp, e));
        }
        staged.push((tmp, dir.join(name)));
    }
    let mut out = Vec::with_capacity(staged.len());
    for (tmp, dest) in staged {
        fs::rename(&tmp, &dest).map_err(|e| CliError::io(&dest, e))?;
        out.push(dest);
    }
    Ok(out)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))
}

/// Solve both signs, fit the GPs and write tables, model file and report.
pub fn cmd_synth(config: &ExperimentConfig) -> Result<Synthesis, CliError> {
    let model = config.load_model()?;
    let s = pipeline::synthesize(&model, &config.synthesis, &config.gp_options())?;
    let [pos, neg] = s.table_files();
    write_outputs(
        &config.output_dir,
        &[
            (pipeline::TABLE_FILE, pos.to_text()?.into_bytes()),
            (pipeline::TABLE_NEG_FILE, neg.to_text()?.into_bytes()),
            (pipeline::GP_FILE, gp::persist::to_text(&s.gp).into_bytes()),
            (pipeline::MOTOR_FILE, model.to_toml_string().into_bytes()),
            (pipeline::REPORT_FILE, s.report().into_bytes()),
        ],
    )?;
    Ok(s)
}

/// One row of the velocity sweep.
#[derive(Debug, Clone)]
pub struct VelocityCell {
    pub teeth_per_s: f64,
    pub method: Method,
    pub outcome: Result<SimMetrics, String>,
}

pub fn velocity_cells(config: &ExperimentConfig) -> Result<Vec<VelocityCell>, CliError> {
    let model = config.load_model()?;
    let artifacts = pipeline::artifacts(config, &model)?;
    let mut jobs: Vec<(f64, Method)> = config
        .simulation
        .velocities
        .iter()
        .flat_map(|v| Method::SWEEP.map(|m| (*v, m)))
        .collect();
    jobs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    jobs.dedup();
    jobs.into_par_iter()
        .map(|(v, method)| -> Result<VelocityCell, CliError> {
            let com = pipeline::commutation(method, config, &model, &artifacts)?;
            let outcome =
                pipeline::simulate_metrics(config, &model, com.as_ref(), v).map_err(|e| {
                    log::warn!("{} at {v} teeth/s failed: {e}", method.name());
                    e.to_string()
                });
            Ok(VelocityCell {
                teeth_per_s: v,
                method,
                outcome,
            })
        })
        .collect()
}

/// Closed-loop RMS error and energy for every velocity and method.
pub fn cmd_sweep_velocity(config: &ExperimentConfig) -> Result<Vec<VelocityCell>, CliError> {
    let cells = velocity_cells(config)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| match &c.outcome {
            Ok(m) => vec![
                c.teeth_per_s.to_string(),
                c.method.name().into(),
                real(m.rms_error),
                real(m.energy),
                "ok".into(),
            ],
            Err(e) => vec![
                c.teeth_per_s.to_string(),
                c.method.name().into(),
                String::new(),
                String::new(),
                format!("error: {e}"),
            ],
        })
        .collect();
    let bytes = csv_bytes(
        &[
            "v_teeth_per_s",
            "commutation",
            "rms_error",
            "energy",
            "status",
        ],
        &rows,
    )?;
    write_outputs(&config.output_dir, &[(VELOCITY_SWEEP_FILE, bytes)])?;
    Ok(cells)
}

/// One row of the beta sweep.
#[derive(Debug, Clone)]
pub struct BetaCell {
    pub beta: f64,
    pub outcome: Result<BetaMetrics, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaMetrics {
    pub rms_ratio_sine_over_opt: f64,
    pub energy_ratio_opt_over_sine: f64,
    /// `|AF - 1|_2` of the positive-torque solution.
    pub ripple_norm: f64,
    /// `|F|_1` of the positive-torque solution.
    pub power_norm: f64,
}

pub fn beta_cells(config: &ExperimentConfig) -> Result<Vec<BetaCell>, CliError> {
    let model = config.load_model()?;
    let v = config.sweep_beta.velocity;
    let reference = pipeline::baseline(config, &model, config.baseline_kind()?)?;
    let base = pipeline::simulate_metrics(config, &model, &reference, v)?;
    let gp_options = config.gp_options();
    let mut betas = config.sweep_beta.betas.clone();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    Ok(betas
        .into_par_iter()
        .map(|beta| {
            let outcome = (|| -> Result<BetaMetrics, CliError> {
                let mut synthesis = config.synthesis.clone();
                synthesis.beta = beta;
                let s = pipeline::synthesize(&model, &synthesis, &gp_options)?;
                let opt = pipeline::simulate_metrics(config, &model, &s.gp, v)?;
                Ok(BetaMetrics {
                    rms_ratio_sine_over_opt: base.rms_error / opt.rms_error,
                    energy_ratio_opt_over_sine: opt.energy / base.energy,
                    ripple_norm: s.solutions[0].ripple,
                    power_norm: s.solutions[0].power,
                })
            })()
            .map_err(|e| {
                log::warn!("beta {beta} failed: {e}");
                e.to_string()
            });
            BetaCell { beta, outcome }
        })
        .collect())
}

/// Ratios against the baseline and the trade-off norms for every beta.
pub fn cmd_sweep_beta(config: &ExperimentConfig) -> Result<Vec<BetaCell>, CliError> {
    let cells = beta_cells(config)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| match &c.outcome {
            Ok(m) => vec![
                c.beta.to_string(),
                real(m.rms_ratio_sine_over_opt),
                real(m.energy_ratio_opt_over_sine),
                real(m.ripple_norm),
                real(m.power_norm),
                "ok".into(),
            ],
            Err(e) => vec![
                c.beta.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("error: {e}"),
            ],
        })
        .collect();
    let bytes = csv_bytes(
        &[
            "beta",
            "rms_ratio_sine_over_opt",
            "energy_ratio_opt_over_sine",
            "ripple_norm",
            "power_norm",
            "status",
        ],
        &rows,
    )?;
    write_outputs(&config.output_dir, &[(BETA_SWEEP_FILE, bytes)])?;
    Ok(cells)
}

/// Open-loop ripple traces on the `N M + 1` subsample grid.
#[derive(Debug, Clone)]
pub struct RippleTraces {
    pub velocity: f64,
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub sine: Vec<f64>,
    pub table: Vec<f64>,
    pub optimal: Vec<f64>,
}

pub fn ripple_traces(config: &ExperimentConfig) -> Result<RippleTraces, CliError> {
    let model = config.load_model()?;
    let artifacts = pipeline::artifacts(config, &model)?;
    let s = &config.synthesis;
    let velocity = config
        .ripple
        .velocity
        .unwrap_or_else(|| nominal_velocity(model.n_teeth(), s.n, s.ts));
    let start = artifacts.table.grid()[0] / f64::from(model.n_teeth());
    let target = config.ripple.torque.signum();
    let sine = pipeline::baseline(config, &model, TsfKind::Sine)?;
    let trace = |f: &dyn CommutationFunction| {
        open_loop_ripple(&model, f, velocity, s.ts, s.m, s.n, start, target)
    };
    let len = s.n * s.m + 1;
    let t: Vec<f64> = (0..len).map(|i| i as f64 * s.ts / s.m as f64).collect();
    Ok(RippleTraces {
        velocity,
        phi: t.iter().map(|t| start + velocity * t).collect(),
        t,
        sine: trace(&sine),
        table: trace(&artifacts.table),
        optimal: trace(&artifacts.gp),
    })
}

/// Relative and absolute inter-sample ripple of the sine baseline and of
/// the optimal table and GP commutations.
pub fn cmd_ripple(config: &ExperimentConfig) -> Result<RippleTraces, CliError> {
    let tr = ripple_traces(config)?;
    let scale = config.ripple.torque.abs();
    let rows: Vec<Vec<String>> = (0..tr.t.len())
        .map(|i| {
            vec![
                i.to_string(),
                real(tr.t[i]),
                real(tr.phi[i]),
                real(tr.sine[i]),
                real(tr.table[i]),
                real(tr.optimal[i]),
                real(scale * tr.sine[i]),
                real(scale * tr.table[i]),
                real(scale * tr.optimal[i]),
            ]
        })
        .collect();
    let bytes = csv_bytes(
        &[
            "index",
            "t",
            "phi",
            "sine_rel",
            "table_rel",
            "optimal_rel",
            "sine_abs",
            "table_abs",
            "optimal_abs",
        ],
        &rows,
    )?;
    write_outputs(&config.output_dir, &[(RIPPLE_FILE, bytes)])?;
    Ok(tr)
}

/// One closed-loop run with the substep series and its metrics.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<SimMetrics, CliError> {
    let model = config.load_model()?;
    let method = Method::parse(&config.simulate.commutation).ok_or_else(|| {
        CliError::Config(format!(
            "unknown commutation `{}`",
            config.simulate.commutation
        ))
    })?;
    let com: Box<dyn CommutationFunction> = match method.tsf_kind() {
        Some(kind) => Box::new(pipeline::baseline(config, &model, kind)?),
        None => {
            let artifacts = pipeline::artifacts(config, &model)?;
            pipeline::commutation(method, config, &model, &artifacts)?
        }
    };
    let result = pipeline::simulate(config, &model, com.as_ref(), config.simulate.velocity)?;
    let metrics = result.metrics()?;
    let mut series = Vec::new();
    result.write_csv(&mut series)?;
    let header = format!(
        "commutation = {}\nvelocity_teeth_per_s = {}\nm_sim = {}\n",
        method.name(),
        config.simulate.velocity,
        config.simulation.m_sim
    );
    write_outputs(
        &config.output_dir,
        &[
            (SIMULATION_FILE, series),
            (METRICS_FILE, (header + &metrics.to_text()).into_bytes()),
        ],
    )?;
    Ok(metrics)
}
