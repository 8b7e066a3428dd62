//! Synthesis of optimal commutation artifacts and single simulation cells.

use std::fs;
use std::path::Path;
use std::time::Instant;

use srm_commutation::commutation::{
    CommutationFunction, CommutationTable, ConventionalTsf, TsfKind,
};
use srm_commutation::gp::{self, CoilFitReport, GpCommutation, GpOptions};
use srm_commutation::motor::{TorqueGainModel, COILS};
use srm_commutation::ripple::{self, RippleProblem, RippleSolution, SolverOptions, TorqueSign};
use srm_commutation::sim::{self, ReferenceProfile, SimMetrics, SimResult};
use srm_commutation::table_io::TableFile;

use crate::config::{ExperimentConfig, SynthesisConfig};
use crate::error::CliError;

pub const TABLE_FILE: &str = "table.csv";
pub const TABLE_NEG_FILE: &str = "table_neg.csv";
pub const GP_FILE: &str = "gp_model.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const MOTOR_FILE: &str = "motor.toml";

/// Commutation methods compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Sine,
    Cubic,
    Linear,
    /// GP interpolation of the optimal grid values.
    Optimal,
    /// Piecewise-linear interpolation of the optimal grid values.
    Table,
}

impl Method {
    /// Methods of the velocity sweep, in output order.
    pub const SWEEP: [Method; 4] = [Method::Sine, Method::Cubic, Method::Linear, Method::Optimal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sine => "sine",
            Method::Cubic => "cubic",
            Method::Linear => "linear",
            Method::Optimal => "optimal",
            Method::Table => "table",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Method::Sine,
            Method::Cubic,
            Method::Linear,
            Method::Optimal,
            Method::Table,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }

    pub fn tsf_kind(self) -> Option<TsfKind> {
        match self {
            Method::Sine => Some(TsfKind::Sine),
            Method::Cubic => Some(TsfKind::Cubic),
            Method::Linear => Some(TsfKind::Linear),
            Method::Optimal | Method::Table => None,
        }
    }
}

/// Solutions of both torque signs and the commutation functions built on them.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub model: TorqueGainModel,
    pub problems: [RippleProblem; 2],
    pub solutions: [RippleSolution; 2],
    pub table: CommutationTable,
    pub gp: GpCommutation,
    pub gp_reports: [[CoilFitReport; COILS]; 2],
}

/// Training angles of the GP fit: the grid in mechanical radians.
pub fn training_angles(model: &TorqueGainModel, grid: &[f64]) -> Vec<f64> {
    let n_t = f64::from(model.n_teeth());
    grid.iter().map(|t| t / n_t).collect()
}

pub fn synthesize(
    model: &TorqueGainModel,
    synthesis: &SynthesisConfig,
    gp_options: &GpOptions,
) -> Result<Synthesis, CliError> {
    let started = Instant::now();
    let solve_sign = |sign| -> Result<(RippleProblem, RippleSolution), CliError> {
        let problem = RippleProblem::assemble(
            model,
            synthesis.n,
            synthesis.m,
            synthesis.beta,
            synthesis.ts,
            sign,
        )?;
        let solution = ripple::solve(&problem, &SolverOptions::default(), None)?;
        Ok((problem, solution))
    };
    let (pos_problem, pos) = solve_sign(TorqueSign::Positive)?;
    let (neg_problem, neg) = solve_sign(TorqueSign::Negative)?;
    log::info!(
        "beta {}: solved both signs in {:.2} s ({} and {} iterations)",
        synthesis.beta,
        started.elapsed().as_secs_f64(),
        pos.iterations,
        neg.iterations
    );

    let angles = training_angles(model, pos_problem.grid());
    let period = model.spatial_period();
    let pos_fit = gp::fit(&angles, &pos.values, period, gp_options)?;
    let neg_fit = gp::fit(&angles, &neg.values, period, gp_options)?;
    log::info!(
        "beta {}: synthesis done in {:.2} s",
        synthesis.beta,
        started.elapsed().as_secs_f64()
    );

    let table = pos_problem.to_table(&pos, Some(&neg))?;
    Ok(Synthesis {
        model: model.clone(),
        problems: [pos_problem, neg_problem],
        solutions: [pos, neg],
        table,
        gp: GpCommutation {
            positive: pos_fit.model,
            negative: Some(neg_fit.model),
        },
        gp_reports: [pos_fit.reports, neg_fit.reports],
    })
}

impl Synthesis {
    pub fn table_files(&self) -> [TableFile; 2] {
        [0, 1].map(|s| TableFile::from_solution(&self.problems[s], &self.solutions[s]))
    }

    /// Human-readable summary of residuals, hyperparameters and clamping.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let p = &self.problems[0];
        out.push_str(&format!(
            "grid points N = {}\nsubsamples M = {}\nbeta = {}\nTs = {:e} s\nnominal velocity = {:.12e} rad/s\n",
            p.n(),
            p.m(),
            p.beta(),
            p.ts(),
            p.velocity()
        ));
        for s in 0..2 {
            let sol = &self.solutions[s];
            let sign = self.problems[s].sign().name();
            out.push_str(&format!(
                "\n[{sign} torque]\nobjective = {:.12e}\npower |F|_1 = {:.12e}\nripple |AF - t|_2 = {:.12e}\n\
                 max grid torque error = {:.3e}\nprojected gradient = {:.3e}\niterations = {}\nconverged = {}\n",
                sol.objective, sol.power, sol.ripple, sol.equality_residual, sol.projected_gradient, sol.iterations, sol.converged
            ));
            for (c, r) in self.gp_reports[s].iter().enumerate() {
                out.push_str(&format!(
                    "coil {}: mu {} length_scale {:.6e} signal_var {:.6e} noise_var {:.6e} log_marginal {:.6e} \
                     jitter {:.1e} max_interp_error {:.3e} (relative {:.3e}) clamp {:.3e} evals {}\n",
                    c + 1,
                    r.hyper.mu,
                    r.hyper.length_scale,
                    r.hyper.signal_var,
                    r.hyper.noise_var,
                    r.log_marginal,
                    r.jitter,
                    r.max_interp_error,
                    r.relative_interp_error(),
                    r.clamp_magnitude,
                    r.evals
                ));
            }
        }
        out
    }
}

/// Optimal commutation artifacts, loaded or freshly synthesized.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub table: CommutationTable,
    pub gp: GpCommutation,
}

impl From<&Synthesis> for Artifacts {
    fn from(s: &Synthesis) -> Self {
        Self {
            table: s.table.clone(),
            gp: s.gp.clone(),
        }
    }
}

fn metadata_matches(file: &TableFile, synthesis: &SynthesisConfig) -> bool {
    let get = |k: &str| file.metadata.get(k).map(String::as_str);
    get("N") == Some(synthesis.n.to_string().as_str())
        && get("M") == Some(synthesis.m.to_string().as_str())
        && get("beta").and_then(|b| b.parse::<f64>().ok()) == Some(synthesis.beta)
        && get("Ts").and_then(|b| b.parse::<f64>().ok()) == Some(synthesis.ts)
}

/// Artifacts from a previous `synth` run in `dir` when they match the
/// configuration, otherwise `None`.
pub fn load_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    model: &TorqueGainModel,
) -> Result<Option<Artifacts>, CliError> {
    let files = [TABLE_FILE, TABLE_NEG_FILE, GP_FILE, MOTOR_FILE].map(|f| dir.join(f));
    if !files.iter().all(|f| f.is_file()) {
        return Ok(None);
    }
    let motor = fs::read_to_string(&files[3]).map_err(|e| CliError::io(&files[3], e))?;
    if motor != model.to_toml_string() {
        log::warn!(
            "{} was synthesized for another motor model; resynthesizing",
            dir.display()
        );
        return Ok(None);
    }
    let pos = TableFile::load(&files[0])?;
    let neg = TableFile::load(&files[1])?;
    if !metadata_matches(&pos, &config.synthesis) || !metadata_matches(&neg, &config.synthesis) {
        log::warn!(
            "{} holds tables for other synthesis settings; resynthesizing",
            dir.display()
        );
        return Ok(None);
    }
    let table = CommutationTable::new(model.geometry(), pos.grid, pos.values, Some(neg.values))?;
    let gp = gp::persist::load(&files[2])?;
    Ok(Some(Artifacts { table, gp }))
}

/// Saved artifacts when they fit the configuration, else a new synthesis.
pub fn artifacts(
    config: &ExperimentConfig,
    model: &TorqueGainModel,
) -> Result<Artifacts, CliError> {
    if let Some(a) = load_artifacts(&config.output_dir, config, model)? {
        log::info!("using artifacts in {}", config.output_dir.display());
        return Ok(a);
    }
    let s = synthesize(model, &config.synthesis, &config.gp_options())?;
    Ok(Artifacts::from(&s))
}

pub fn baseline(
    config: &ExperimentConfig,
    model: &TorqueGainModel,
    kind: TsfKind,
) -> Result<ConventionalTsf, CliError> {
    Ok(ConventionalTsf::new(
        model.clone(),
        kind,
        config.baseline.overlap,
        config.baseline.saturation,
    )?)
}

/// Commutation function of `method`.
pub fn commutation(
    method: Method,
    config: &ExperimentConfig,
    model: &TorqueGainModel,
    artifacts: &Artifacts,
) -> Result<Box<dyn CommutationFunction>, CliError> {
    Ok(match (method, method.tsf_kind()) {
        (_, Some(kind)) => Box::new(baseline(config, model, kind)?),
        (Method::Optimal, None) => Box::new(artifacts.gp.clone()),
        _ => Box::new(artifacts.table.clone()),
    })
}

/// Closed-loop run along the reference profile for `teeth_per_s`.
pub fn simulate(
    config: &ExperimentConfig,
    model: &TorqueGainModel,
    commutation: &dyn CommutationFunction,
    teeth_per_s: f64,
) -> Result<SimResult, CliError> {
    let profile = ReferenceProfile::from_teeth_per_second(teeth_per_s, model.spatial_period())?;
    let mut controller = config.controller();
    Ok(sim::run_closed_loop(
        model,
        commutation,
        &mut controller,
        &profile,
        &config.sim_options(),
    )?)
}

pub fn simulate_metrics(
    config: &ExperimentConfig,
    model: &TorqueGainModel,
    commutation: &dyn CommutationFunction,
    teeth_per_s: f64,
) -> Result<SimMetrics, CliError> {
    Ok(simulate(config, model, commutation, teeth_per_s)?.metrics()?)
}
