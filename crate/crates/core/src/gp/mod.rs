//! Gaussian process regression of commutation shares.
//!
//! Each coil's share is modelled as `f_c(phi) = k_c(phi, Phi) alpha_c` with a
//! periodic-warped Matérn kernel. Weights solve `(K + sigma_n^2 I) alpha = F`,
//! and the kernel hyperparameters maximize the log marginal likelihood.

pub mod kernel;
pub mod nelder_mead;
pub mod persist;

use std::f64::consts::{PI, TAU};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use thiserror::Error;

use crate::commutation::CommutationFunction;
use crate::motor::COILS;

pub use kernel::{chord, gram, gram_from_chords, warp, warp_all, MaternPoly, MaternSpec};
use nelder_mead::{NelderMeadOptions, NelderMeadResult};

/// Matérn smoothness index used for commutation fits.
pub const DEFAULT_MU: u32 = 3;

/// Box for every optimized hyperparameter.
pub const HYPER_MIN: f64 = 1e-10;
pub const HYPER_MAX: f64 = 1e10;

/// First jitter level and cap, relative to the signal variance.
pub const JITTER_START: f64 = 1e-12;
pub const JITTER_MAX: f64 = 1e-6;

/// Clamping below zero larger than this fraction of `max |F|` is logged.
pub const CLAMP_WARN_FRACTION: f64 = 1e-6;

/// Probe points per training interval for fit diagnostics.
pub const PROBES_PER_INTERVAL: usize = 8;

/// Hyperparameters whose regularized kernel matrix has a larger condition
/// number are rejected by the search; beyond it the likelihood is dominated
/// by rounding.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("kernel matrix is ill-conditioned (condition estimate {condition:.3e}) even with jitter {jitter:.3e}")]
    IllConditioned { condition: f64, jitter: f64 },
    #[error("need at least {needed} training points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{0}")]
    Shape(String),
    #[error("invalid hyperparameter: {0}")]
    Parameter(String),
    #[error("hyperparameter search failed: every start point failed to factorize")]
    AllStartsFailed,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("model file is truncated: missing {0}")]
    Truncated(String),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Kernel hyperparameters of one coil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub mu: u32,
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Hyperparams {
    pub fn spec(&self) -> MaternSpec {
        MaternSpec::new(self.mu, self.length_scale, self.signal_var)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        for (name, v) in [
            ("length_scale", self.length_scale),
            ("signal_var", self.signal_var),
            ("noise_var", self.noise_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GpError::Parameter(format!(
                    "{name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }

    fn to_log(self) -> [f64; 3] {
        [
            self.length_scale.ln(),
            self.signal_var.ln(),
            self.noise_var.ln(),
        ]
    }

    fn from_log(mu: u32, x: &[f64]) -> Self {
        Self {
            mu,
            length_scale: x[0].exp(),
            signal_var: x[1].exp(),
            noise_var: x[2].exp(),
        }
    }
}

/// `max(share, 0)`.
pub fn clamp_share(x: f64) -> f64 {
    x.max(0.0)
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let eig = a.symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factor of `K + (noise_var + jitter) I`, escalating jitter from 0
/// through `JITTER_START * scale` by factors of ten up to `JITTER_MAX * scale`.
pub fn factorize(
    k: &DMatrix<f64>,
    noise_var: f64,
    scale: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise_var + jitter;
        }
        if let Some(chol) = Cholesky::new(a.clone()) {
            let diag_ok = (0..n).all(|i| {
                let d = chol.l_dirty()[(i, i)];
                d > 0.0 && d.is_finite()
            });
            if diag_ok {
                return Ok((chol, jitter));
            }
        }
        let next = if jitter == 0.0 {
            JITTER_START * scale
        } else {
            jitter * 10.0
        };
        if next > JITTER_MAX * scale * (1.0 + 1e-9) {
            return Err(GpError::IllConditioned {
                condition: condition_estimate(&a),
                jitter,
            });
        }
        jitter = next;
    }
}

fn signal_scale(k: &DMatrix<f64>) -> f64 {
    let d = k.diagonal().max();
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Weights solving `(K + noise_var I) alpha = targets`, with the jitter used.
pub fn fit_weights(
    targets: &[f64],
    k: &DMatrix<f64>,
    noise_var: f64,
) -> Result<(Vec<f64>, f64), GpError> {
    if k.nrows() != targets.len() || k.ncols() != targets.len() {
        return Err(GpError::Shape(format!(
            "kernel is {}x{}, targets have {} entries",
            k.nrows(),
            k.ncols(),
            targets.len()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(GpError::Parameter(format!(
            "noise_var = {noise_var} must be positive"
        )));
    }
    let (chol, jitter) = factorize(k, noise_var, signal_scale(k))?;
    let alpha = chol.solve(&DVector::from_column_slice(targets));
    Ok((alpha.as_slice().to_vec(), jitter))
}

fn log_marginal_from_chol(chol: &Cholesky<f64, Dyn>, targets: &[f64]) -> f64 {
    let n = targets.len();
    let f = DVector::from_column_slice(targets);
    let alpha = chol.solve(&f);
    let log_det_half: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    -0.5 * f.dot(&alpha) - log_det_half - 0.5 * n as f64 * (TAU).ln()
}

/// Log marginal likelihood of `targets` at `angles` under `hyper`.
pub fn log_marginal(
    targets: &[f64],
    angles: &[f64],
    period: f64,
    hyper: &Hyperparams,
) -> Result<f64, GpError> {
    hyper.validate()?;
    if targets.len() != angles.len() {
        return Err(GpError::Shape(format!(
            "{} targets for {} angles",
            targets.len(),
            angles.len()
        )));
    }
    let k = gram(angles, &hyper.spec(), period);
    let (chol, _) = factorize(&k, hyper.noise_var, hyper.signal_var)?;
    Ok(log_marginal_from_chol(&chol, targets))
}

/// Evaluates the log marginal likelihood repeatedly on fixed data.
///
/// Training angles that are `period / N`-uniform give a circulant Gram
/// matrix, whose eigenvalues are the real DFT of its first row, so the
/// likelihood costs `O(N^2)` without a factorization. Other angle sets use
/// the Cholesky path.
struct Likelihood<'a> {
    targets: &'a [f64],
    chords: DMatrix<f64>,
    circulant: Option<Circulant>,
}

struct Circulant {
    first_row: Vec<f64>,
    cos: Vec<f64>,
    power: Vec<f64>,
}

fn is_uniform(angles: &[f64], period: f64) -> bool {
    let n = angles.len();
    let step = period / n as f64;
    angles.iter().enumerate().all(|(i, &a)| {
        let d = (a - angles[0] - i as f64 * step) / period;
        (d - d.round()).abs() <= 1e-12
    })
}

impl<'a> Likelihood<'a> {
    fn new(targets: &'a [f64], angles: &[f64], period: f64) -> Self {
        let chords = kernel::chord_matrix(&warp_all(angles, period));
        let n = angles.len();
        let circulant = is_uniform(angles, period).then(|| {
            let cos: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).cos()).collect();
            let power = (0..n)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, &f) in targets.iter().enumerate() {
                        let a = TAU * ((j * k) % n) as f64 / n as f64;
                        re += f * a.cos();
                        im -= f * a.sin();
                    }
                    re * re + im * im
                })
                .collect();
            Circulant {
                first_row: chords.row(0).iter().copied().collect(),
                cos,
                power,
            }
        });
        Self {
            targets,
            chords,
            circulant,
        }
    }

    fn eval(&self, hyper: &Hyperparams) -> Option<f64> {
        match &self.circulant {
            Some(c) => self.eval_circulant(c, hyper),
            None => {
                let mut k = gram_from_chords(&self.chords, &hyper.spec());
                for i in 0..k.nrows() {
                    k[(i, i)] += hyper.noise_var;
                }
                let chol = Cholesky::new(k)?;
                let diag = chol.l_dirty().diagonal();
                let (lo, hi) = (diag.min(), diag.max());
                if !(lo > 0.0) || (hi / lo).powi(2) > MAX_CONDITION {
                    return None;
                }
                Some(log_marginal_from_chol(&chol, self.targets))
            }
        }
    }

    fn eval_circulant(&self, c: &Circulant, hyper: &Hyperparams) -> Option<f64> {
        let n = c.first_row.len();
        let poly = MaternPoly::new(hyper.mu);
        let inv_l = hyper.length_scale.recip();
        let row: Vec<f64> = c
            .first_row
            .iter()
            .map(|&d| hyper.signal_var * poly.correlation(d * inv_l))
            .collect();
        let lambdas: Vec<f64> = (0..n)
            .map(|k| {
                row.iter()
                    .enumerate()
                    .map(|(j, r)| r * c.cos[(j * k) % n])
                    .sum::<f64>()
                    + hyper.noise_var
            })
            .collect();
        let lo = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = lambdas.iter().copied().fold(0.0, f64::max);
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return None;
        }
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for (p, lambda) in c.power.iter().zip(&lambdas) {
            quad += p / lambda;
            log_det += lambda.ln();
        }
        Some(-0.5 * quad / n as f64 - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln())
    }
}

/// Start grid and local search settings of [`optimize_hyperparams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GpOptions {
    pub mu: u32,
    /// Multiples of the mean warped spacing.
    pub length_factors: Vec<f64>,
    /// Multiples of the target variance.
    pub signal_factors: Vec<f64>,
    pub noise_factors: Vec<f64>,
    pub max_evals: usize,
    pub diameter_tol: f64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            length_factors: vec![0.1, 1.0, 10.0],
            signal_factors: vec![0.1, 1.0, 10.0],
            noise_factors: vec![1e-6, 1e-4, 1e-2],
            max_evals: 2000,
            diameter_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StartResult {
    pub start: Hyperparams,
    pub start_value: f64,
    pub best: Hyperparams,
    pub best_value: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizedHyperparams {
    pub hyper: Hyperparams,
    pub log_marginal: f64,
    pub starts: Vec<StartResult>,
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Mean chordal distance between consecutive warped training points, in
/// angle order around the circle.
pub fn mean_warped_spacing(angles: &[f64], period: f64) -> f64 {
    let mut turns: Vec<f64> = angles
        .iter()
        .map(|a| {
            let t = a / period;
            t - t.floor()
        })
        .collect();
    turns.sort_by(f64::total_cmp);
    let n = turns.len();
    let total: f64 = (0..n)
        .map(|i| {
            let gap = if i + 1 < n {
                turns[i + 1] - turns[i]
            } else {
                turns[0] + 1.0 - turns[i]
            };
            2.0 * (PI * gap).sin()
        })
        .sum();
    total / n as f64
}

/// Maximize the log marginal likelihood over `(ell, sigma_f^2, sigma_n^2)`
/// with Nelder-Mead in log space from a fixed start grid. Ties go to the
/// earliest start.
pub fn optimize_hyperparams(
    targets: &[f64],
    angles: &[f64],
    period: f64,
    options: &GpOptions,
) -> Result<OptimizedHyperparams, GpError> {
    if targets.len() < 3 {
        return Err(GpError::TooFewPoints {
            needed: 3,
            got: targets.len(),
        });
    }
    if targets.len() != angles.len() {
        return Err(GpError::Shape(format!(
            "{} targets for {} angles",
            targets.len(),
            angles.len()
        )));
    }
    let var = match variance(targets) {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let spacing = mean_warped_spacing(angles, period);
    let mu = options.mu;
    let mut starts = Vec::new();
    for &lf in &options.length_factors {
        for &sf in &options.signal_factors {
            for &nf in &options.noise_factors {
                starts.push(Hyperparams {
                    mu,
                    length_scale: (lf * spacing).clamp(HYPER_MIN, HYPER_MAX),
                    signal_var: (sf * var).clamp(HYPER_MIN, HYPER_MAX),
                    noise_var: (nf * var).clamp(HYPER_MIN, HYPER_MAX),
                });
            }
        }
    }
    let likelihood = Likelihood::new(targets, angles, period);
    let nm = NelderMeadOptions {
        initial_step: 1.0,
        diameter_tol: options.diameter_tol,
        max_evals: options.max_evals,
    };
    let lo = [HYPER_MIN.ln(); 3];
    let hi = [HYPER_MAX.ln(); 3];
    let results: Vec<StartResult> = starts
        .par_iter()
        .map(|start| {
            let objective = |x: &[f64]| {
                likelihood
                    .eval(&Hyperparams::from_log(mu, x))
                    .map_or(f64::INFINITY, |v| -v)
            };
            let start_value = likelihood.eval(start).unwrap_or(f64::NEG_INFINITY);
            let NelderMeadResult {
                x,
                value,
                evals,
                converged,
            } = nelder_mead::minimize(objective, &start.to_log(), &lo, &hi, &nm);
            StartResult {
                start: *start,
                start_value,
                best: Hyperparams::from_log(mu, &x),
                best_value: -value,
                evals,
                converged,
            }
        })
        .collect();
    let mut best: Option<&StartResult> = None;
    for r in &results {
        if r.best_value.is_finite() && best.map_or(true, |b| r.best_value > b.best_value) {
            best = Some(r);
        }
    }
    let best = best.ok_or(GpError::AllStartsFailed)?;
    Ok(OptimizedHyperparams {
        hyper: best.best,
        log_marginal: best.best_value,
        starts: results,
    })
}

/// Fitted GP of one coil.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilGp {
    pub hyper: Hyperparams,
    pub weights: Vec<f64>,
}

/// Three per-coil GPs on shared training angles (mechanical radians).
#[derive(Debug, Clone)]
pub struct GpModel {
    period: f64,
    angles: Vec<f64>,
    warped: Vec<[f64; 2]>,
    coils: [CoilGp; COILS],
    polys: [MaternPoly; COILS],
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.period == other.period && self.angles == other.angles && self.coils == other.coils
    }
}

impl GpModel {
    pub fn new(period: f64, angles: Vec<f64>, coils: [CoilGp; COILS]) -> Result<Self, GpError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(GpError::Parameter(format!(
                "period = {period} must be positive"
            )));
        }
        if angles.is_empty() {
            return Err(GpError::TooFewPoints { needed: 1, got: 0 });
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(GpError::Parameter("training angles must be finite".into()));
        }
        for (c, coil) in coils.iter().enumerate() {
            coil.hyper.validate()?;
            if coil.weights.len() != angles.len() {
                return Err(GpError::Shape(format!(
                    "coil {c} has {} weights for {} training angles",
                    coil.weights.len(),
                    angles.len()
                )));
            }
        }
        let warped = warp_all(&angles, period);
        let polys = [0, 1, 2].map(|c| MaternPoly::new(coils[c].hyper.mu));
        Ok(Self {
            period,
            angles,
            warped,
            coils,
            polys,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn coil(&self, c: usize) -> &CoilGp {
        &self.coils[c]
    }

    /// Posterior mean of coil `c` at `phi`, before clamping.
    pub fn predict(&self, phi: f64, coil: usize) -> f64 {
        let x = warp(phi, self.period);
        let gp = &self.coils[coil];
        let poly = &self.polys[coil];
        let inv_l = gp.hyper.length_scale.recip();
        self.warped
            .iter()
            .zip(&gp.weights)
            .map(|(xi, w)| w * poly.correlation(chord(&x, xi) * inv_l))
            .sum::<f64>()
            * gp.hyper.signal_var
    }

    /// Posterior means of all coils at `phi`, before clamping.
    pub fn predict_all(&self, phi: f64) -> [f64; COILS] {
        let x = warp(phi, self.period);
        let inv_l = self.coils.each_ref().map(|g| g.hyper.length_scale.recip());
        let mut out = [0.0; COILS];
        for (i, xi) in self.warped.iter().enumerate() {
            let d = chord(&x, xi);
            for c in 0..COILS {
                out[c] += self.coils[c].weights[i] * self.polys[c].correlation(d * inv_l[c]);
            }
        }
        for c in 0..COILS {
            out[c] *= self.coils[c].hyper.signal_var;
        }
        out
    }
}

/// Diagnostics of one coil's fit.
#[derive(Debug, Clone, Copy)]
pub struct CoilFitReport {
    pub hyper: Hyperparams,
    pub log_marginal: f64,
    pub jitter: f64,
    /// `max_i |predict(theta_i) - F_i|`.
    pub max_interp_error: f64,
    /// `max_i |F_i|`.
    pub max_target: f64,
    /// Largest amount removed by clamping on a dense probe grid.
    pub clamp_magnitude: f64,
    pub evals: usize,
}

impl CoilFitReport {
    pub fn relative_interp_error(&self) -> f64 {
        if self.max_target > 0.0 {
            self.max_interp_error / self.max_target
        } else {
            self.max_interp_error
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpFit {
    pub model: GpModel,
    pub reports: [CoilFitReport; COILS],
}

/// Fit one GP per coil through `targets[i][c]` at `angles[i]`.
pub fn fit(
    angles: &[f64],
    targets: &[[f64; COILS]],
    period: f64,
    options: &GpOptions,
) -> Result<GpFit, GpError> {
    if angles.len() != targets.len() {
        return Err(GpError::Shape(format!(
            "{} target rows for {} angles",
            targets.len(),
            angles.len()
        )));
    }
    let per_coil: Vec<Result<(CoilGp, CoilFitReport), GpError>> = (0..COILS)
        .into_par_iter()
        .map(|c| {
            let f: Vec<f64> = targets.iter().map(|r| r[c]).collect();
            let opt = optimize_hyperparams(&f, angles, period, options)?;
            let k = gram(angles, &opt.hyper.spec(), period);
            let (weights, jitter) = fit_weights(&f, &k, opt.hyper.noise_var)?;
            let evals = opt.starts.iter().map(|s| s.evals).sum();
            let gp = CoilGp {
                hyper: opt.hyper,
                weights,
            };
            let report = CoilFitReport {
                hyper: opt.hyper,
                log_marginal: opt.log_marginal,
                jitter,
                max_interp_error: 0.0,
                max_target: f.iter().fold(0.0, |m, v| m.max(v.abs())),
                clamp_magnitude: 0.0,
                evals,
            };
            Ok((gp, report))
        })
        .collect();
    let mut gps = Vec::with_capacity(COILS);
    let mut reports = Vec::with_capacity(COILS);
    for r in per_coil {
        let (gp, report) = r?;
        gps.push(gp);
        reports.push(report);
    }
    let coils: [CoilGp; COILS] = gps.try_into().expect("three coils");
    let mut reports: [CoilFitReport; COILS] = reports.try_into().expect("three coils");
    let model = GpModel::new(period, angles.to_vec(), coils)?;

    for (i, &a) in angles.iter().enumerate() {
        let p = model.predict_all(a);
        for c in 0..COILS {
            let r = &mut reports[c];
            r.max_interp_error = r.max_interp_error.max((p[c] - targets[i][c]).abs());
        }
    }
    let probes = PROBES_PER_INTERVAL * angles.len();
    for k in 0..probes {
        let p = model.predict_all(period * k as f64 / probes as f64);
        for c in 0..COILS {
            reports[c].clamp_magnitude = reports[c].clamp_magnitude.max(-p[c]);
        }
    }
    let overall_max = reports.iter().fold(0.0f64, |m, r| m.max(r.max_target));
    for (c, r) in reports.iter().enumerate() {
        if r.clamp_magnitude > CLAMP_WARN_FRACTION * overall_max {
            log::warn!(
                "coil {}: GP prediction dips to -{:.3e} between training points; clamped to 0",
                c + 1,
                r.clamp_magnitude
            );
        }
    }
    Ok(GpFit { model, reports })
}

/// Continuous commutation function from fitted GPs, clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GpCommutation {
    pub positive: GpModel,
    pub negative: Option<GpModel>,
}

impl CommutationFunction for GpCommutation {
    fn period(&self) -> f64 {
        self.positive.period()
    }
    fn shares(&self, phi: f64) -> [f64; COILS] {
        self.positive.predict_all(phi).map(clamp_share)
    }
    /// Zero when no negative-torque model was fitted.
    fn shares_neg(&self, phi: f64) -> [f64; COILS] {
        match &self.negative {
            Some(m) => m.predict_all(phi).map(clamp_share),
            None => [0.0; COILS],
        }
    }
}
