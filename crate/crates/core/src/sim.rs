//! Sampled-data simulation of the motor in closed and open loop.
//!
//! The plant `G(s) = 1/(s (s + 1))` is driven by the motor torque
//! `T(t) = g(phi(t)) . u_k`, where `u_k` is computed from the sampled rotor
//! angle and held over the sample interval. Integration uses fixed-step RK4
//! with `g` re-evaluated at every stage.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::commutation::{commute, CommutationFunction};
use crate::motor::{dot, TorqueGainModel, COILS};

/// Default sample time (s).
pub const DEFAULT_TS: f64 = 1e-3;
/// Default RK4 substeps per sample.
pub const DEFAULT_M_SIM: usize = 20;
/// Teeth covered by the constant-acceleration phase of the reference.
pub const ACCEL_TEETH: f64 = 5.0;
/// Teeth covered by the constant-velocity phase of the reference.
pub const CONST_TEETH: f64 = 15.0;
/// Rotor angle beyond which a run is declared unstable (rad).
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation diverged at t = {t:.6} s (|phi| > {DIVERGENCE_LIMIT:e} rad)")]
    Unstable { t: f64 },
    #[error("invalid simulation parameter: {0}")]
    Parameter(String),
    #[error("metric window [{start:.6}, {end:.6}] s is not covered by the recorded series")]
    ShortSeries { start: f64, end: f64 },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// `phi - 2 pi floor((phi + pi) / 2 pi)`, in `[-pi, pi)`.
pub fn wrap_relative(phi: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    phi - TAU * ((phi + PI) / TAU).floor()
}

/// State derivative of `G(s) = 1/(s (s + 1))` in the realization
/// `x' = [[0, 1], [0, -1]] x + [0, 1] T`, `y = x_1`.
pub fn plant_derivative(x: [f64; 2], torque: f64) -> [f64; 2] {
    [x[1], -x[1] + torque]
}

pub trait Controller: Send {
    /// Torque request for error sample `e_k`.
    fn step(&mut self, e: f64) -> f64;
    /// Clear all internal states.
    fn reset(&mut self);
}

/// Direct-form difference equation of a rational `C(z)` in powers of `z^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteController {
    num: Vec<f64>,
    den: Vec<f64>,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl DiscreteController {
    pub const NUMERATOR: [f64; 3] = [6.72e5, -1.1e6, 4.51e5];
    /// `(z - 1)(z - 0.0296)`.
    pub const DENOMINATOR: [f64; 3] = [1.0, -1.0296, 0.0296];
    /// Denominator with the middle coefficient rounded to two decimals.
    pub const DENOMINATOR_PRINTED: [f64; 3] = [1.0, -1.03, 0.0296];

    pub fn new(num: &[f64], den: &[f64]) -> Result<Self, SimError> {
        if num.is_empty() || den.is_empty() {
            return Err(SimError::Parameter(
                "controller polynomials must be nonempty".into(),
            ));
        }
        if den[0] == 0.0 || !den[0].is_finite() {
            return Err(SimError::Parameter(
                "leading denominator coefficient must be nonzero".into(),
            ));
        }
        if num.iter().chain(den).any(|c| !c.is_finite()) {
            return Err(SimError::Parameter(
                "controller coefficients must be finite".into(),
            ));
        }
        let a0 = den[0];
        Ok(Self {
            num: num.iter().map(|c| c / a0).collect(),
            den: den.iter().map(|c| c / a0).collect(),
            inputs: vec![0.0; num.len()],
            outputs: vec![0.0; den.len()],
        })
    }

    /// Controller with the coefficients exactly as rounded in print.
    pub fn as_printed() -> Self {
        Self::new(&Self::NUMERATOR, &Self::DENOMINATOR_PRINTED).expect("valid coefficients")
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }
}

impl Default for DiscreteController {
    fn default() -> Self {
        Self::new(&Self::NUMERATOR, &Self::DENOMINATOR).expect("valid coefficients")
    }
}

impl Controller for DiscreteController {
    fn step(&mut self, e: f64) -> f64 {
        self.inputs.rotate_right(1);
        self.inputs[0] = e;
        let mut y: f64 = self.num.iter().zip(&self.inputs).map(|(b, x)| b * x).sum();
        y -= self.den[1..]
            .iter()
            .zip(&self.outputs)
            .map(|(a, y)| a * y)
            .sum::<f64>();
        self.outputs.rotate_right(1);
        self.outputs[0] = y;
        y
    }

    fn reset(&mut self) {
        self.inputs.fill(0.0);
        self.outputs.fill(0.0);
    }
}

/// Plays back a fixed torque sequence, ignoring the error; zero afterwards.
#[derive(Debug, Clone)]
pub struct Feedforward {
    sequence: Vec<f64>,
    k: usize,
}

impl Feedforward {
    pub fn new(sequence: Vec<f64>) -> Self {
        Self { sequence, k: 0 }
    }
}

impl Controller for Feedforward {
    fn step(&mut self, _e: f64) -> f64 {
        let y = self.sequence.get(self.k).copied().unwrap_or(0.0);
        self.k += 1;
        y
    }

    fn reset(&mut self) {
        self.k = 0;
    }
}

/// Constant acceleration over [`ACCEL_TEETH`] teeth up to `velocity`, then
/// constant velocity over [`CONST_TEETH`] teeth, then hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceProfile {
    /// Final velocity (rad/s).
    pub velocity: f64,
    /// Tooth pitch (rad).
    pub period: f64,
    /// Extra time simulated after the profile ends (s).
    pub hold: f64,
}

impl ReferenceProfile {
    pub fn new(velocity: f64, period: f64) -> Result<Self, SimError> {
        if !(velocity >= 0.0 && velocity.is_finite()) {
            return Err(SimError::Parameter(format!(
                "velocity {velocity} must be nonnegative"
            )));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(SimError::Parameter(format!(
                "period {period} must be positive"
            )));
        }
        Ok(Self {
            velocity,
            period,
            hold: 0.0,
        })
    }

    /// Profile from a velocity in teeth per second.
    pub fn from_teeth_per_second(teeth_per_s: f64, period: f64) -> Result<Self, SimError> {
        Self::new(teeth_per_s * period, period)
    }

    /// Zero reference lasting `duration` seconds.
    pub fn stationary(period: f64, duration: f64) -> Result<Self, SimError> {
        let mut p = Self::new(0.0, period)?;
        p.hold = duration;
        Ok(p)
    }

    pub fn acceleration(&self) -> f64 {
        self.velocity.powi(2) / (2.0 * ACCEL_TEETH * self.period)
    }

    /// Duration of the acceleration phase.
    pub fn accel_time(&self) -> f64 {
        if self.velocity > 0.0 {
            2.0 * ACCEL_TEETH * self.period / self.velocity
        } else {
            0.0
        }
    }

    /// Duration of the constant-velocity phase.
    pub fn const_time(&self) -> f64 {
        if self.velocity > 0.0 {
            CONST_TEETH * self.period / self.velocity
        } else {
            0.0
        }
    }

    /// End of the constant-velocity phase.
    pub fn motion_end(&self) -> f64 {
        self.accel_time() + self.const_time()
    }

    pub fn end_time(&self) -> f64 {
        self.motion_end() + self.hold
    }

    /// Position and velocity at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if self.velocity == 0.0 || t <= 0.0 {
            return (0.0, 0.0);
        }
        let ta = self.accel_time();
        let te = self.motion_end();
        if t < ta {
            let a = self.acceleration();
            (0.5 * a * t * t, a * t)
        } else if t < te {
            (
                ACCEL_TEETH * self.period + self.velocity * (t - ta),
                self.velocity,
            )
        } else {
            ((ACCEL_TEETH + CONST_TEETH) * self.period, 0.0)
        }
    }

    /// Last tooth of the constant-velocity phase.
    pub fn last_tooth_window(&self) -> (f64, f64) {
        let end = self.motion_end();
        (
            end - self.period / self.velocity.max(f64::MIN_POSITIVE),
            end,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub ts: f64,
    pub m_sim: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            ts: DEFAULT_TS,
            m_sim: DEFAULT_M_SIM,
        }
    }
}

/// Values at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimPoint {
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub torque_ref: f64,
    pub torque: f64,
    pub u: [f64; COILS],
}

impl SimPoint {
    pub fn error(&self) -> f64 {
        self.r - self.phi
    }

    pub fn torque_ripple(&self) -> f64 {
        self.torque - self.torque_ref
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimMetrics {
    /// RMS of `r - phi` over the last tooth of constant velocity (rad).
    pub rms_error: f64,
    /// RMS of `T - T*` over the same window (Nm).
    pub rms_torque_ripple: f64,
    /// `|| (T - T*) / |T*| ||_2` over the window's substeps.
    pub relative_ripple_norm: f64,
    /// `sum_k ||u_k||_1 Ts` over the whole run (A^2 s).
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub options: SimOptions,
    pub profile: ReferenceProfile,
    /// Uniform grid of spacing `Ts / M_sim`.
    pub substeps: Vec<SimPoint>,
    /// Values at the sample instants, with the torque just after the update.
    pub samples: Vec<SimPoint>,
}

fn add(x: [f64; 2], k: [f64; 2], h: f64) -> [f64; 2] {
    [x[0] + h * k[0], x[1] + h * k[1]]
}

/// Closed-loop run from rest until the reference profile ends.
pub fn run_closed_loop<F, C>(
    model: &TorqueGainModel,
    commutation: &F,
    controller: &mut C,
    profile: &ReferenceProfile,
    options: &SimOptions,
) -> Result<SimResult, SimError>
where
    F: CommutationFunction + ?Sized,
    C: Controller + ?Sized,
{
    if !(options.ts > 0.0) || options.m_sim == 0 {
        return Err(SimError::Parameter(format!(
            "need Ts > 0 and M_sim >= 1, got Ts = {} and M_sim = {}",
            options.ts, options.m_sim
        )));
    }
    controller.reset();
    let ts = options.ts;
    let m = options.m_sim;
    let h = ts / m as f64;
    let n_samples = (profile.end_time() / ts - 1e-9).ceil().max(0.0) as usize;
    let torque_at = |x: [f64; 2], u: &[f64; COILS]| dot(&model.eval_g(x[0]), u);

    let mut x = [0.0; 2];
    let mut substeps = Vec::with_capacity(n_samples * m + 1);
    let mut samples = Vec::with_capacity(n_samples + 1);
    let mut last = (0.0, [0.0; COILS]);
    for k in 0..n_samples {
        let tk = k as f64 * ts;
        let (r, _) = profile.eval(tk);
        let torque_ref = controller.step(r - x[0]);
        let u = commute(commutation, x[0], torque_ref);
        samples.push(SimPoint {
            t: tk,
            r,
            phi: x[0],
            torque_ref,
            torque: torque_at(x, &u),
            u,
        });
        for i in 0..m {
            let t = tk + i as f64 * h;
            substeps.push(SimPoint {
                t,
                r: profile.eval(t).0,
                phi: x[0],
                torque_ref,
                torque: torque_at(x, &u),
                u,
            });
            let k1 = plant_derivative(x, torque_at(x, &u));
            let x2 = add(x, k1, 0.5 * h);
            let k2 = plant_derivative(x2, torque_at(x2, &u));
            let x3 = add(x, k2, 0.5 * h);
            let k3 = plant_derivative(x3, torque_at(x3, &u));
            let x4 = add(x, k3, h);
            let k4 = plant_derivative(x4, torque_at(x4, &u));
            for j in 0..2 {
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if !(x[0].abs() <= DIVERGENCE_LIMIT) {
                return Err(SimError::Unstable { t: t + h });
            }
        }
        last = (torque_ref, u);
    }
    let t_end = n_samples as f64 * ts;
    let (torque_ref, u) = last;
    substeps.push(SimPoint {
        t: t_end,
        r: profile.eval(t_end).0,
        phi: x[0],
        torque_ref,
        torque: torque_at(x, &u),
        u,
    });
    Ok(SimResult {
        options: *options,
        profile: *profile,
        substeps,
        samples,
    })
}

/// Trapezoid integral of `f` over `[start, end]` on the substep series,
/// interpolating linearly at the window edges.
fn integrate<G: Fn(&SimPoint) -> f64>(points: &[SimPoint], start: f64, end: f64, f: G) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let lo = a.t.max(start);
        let hi = b.t.min(end);
        if hi <= lo {
            continue;
        }
        let (fa, fb) = (f(a), f(b));
        let at = |t: f64| fa + (fb - fa) * (t - a.t) / (b.t - a.t);
        total += 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    total
}

impl SimResult {
    pub fn metrics(&self) -> Result<SimMetrics, SimError> {
        let (start, end) = self.profile.last_tooth_window();
        self.metrics_over(start, end)
    }

    /// Metrics with the RMS window `[start, end]`.
    pub fn metrics_over(&self, start: f64, end: f64) -> Result<SimMetrics, SimError> {
        let first = self.substeps.first().map_or(f64::INFINITY, |p| p.t);
        let last = self.substeps.last().map_or(f64::NEG_INFINITY, |p| p.t);
        let tol = 1e-9 * self.options.ts;
        if !(end > start) || start < first - tol || end > last + tol {
            return Err(SimError::ShortSeries { start, end });
        }
        let span = end - start;
        let rms_error =
            (integrate(&self.substeps, start, end, |p| p.error().powi(2)) / span).sqrt();
        let rms_torque_ripple =
            (integrate(&self.substeps, start, end, |p| p.torque_ripple().powi(2)) / span).sqrt();
        let relative_ripple_norm = self
            .substeps
            .iter()
            .filter(|p| p.t >= start && p.t <= end && p.torque_ref.abs() > 0.0)
            .map(|p| (p.torque_ripple() / p.torque_ref.abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(SimMetrics {
            rms_error,
            rms_torque_ripple,
            relative_ripple_norm,
            energy: self.energy(),
        })
    }

    pub fn energy(&self) -> f64 {
        self.samples
            .iter()
            .map(|p| p.u.iter().map(|v| v.abs()).sum::<f64>())
            .sum::<f64>()
            * self.options.ts
    }

    /// Substep series as CSV with columns `t,r,phi,e,Tstar,T,u1,u2,u3`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r", "phi", "e", "Tstar", "T", "u1", "u2", "u3"])?;
        for p in &self.substeps {
            let row = [
                p.t,
                p.r,
                p.phi,
                p.error(),
                p.torque_ref,
                p.torque,
                p.u[0],
                p.u[1],
                p.u[2],
            ];
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

impl SimMetrics {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "rms_error = {:.16e}\nrms_torque_ripple = {:.16e}\nrelative_ripple_norm = {:.16e}\nenergy = {:.16e}\n",
            self.rms_error, self.rms_torque_ripple, self.relative_ripple_norm, self.energy
        )
    }
}

/// Relative torque ripple `g(phi(t)) . f(phi(t_k)) - target` for constant
/// velocity `phi(t) = start_angle + v t`, on the subsample grid
/// `t = k Ts + j Ts / M` for `k < n_samples`, `j < M`, plus the sample
/// instant `n_samples Ts`. `target` is `+1` for the positive shares and `-1`
/// for the negative ones.
pub fn open_loop_ripple<F: CommutationFunction + ?Sized>(
    model: &TorqueGainModel,
    commutation: &F,
    velocity: f64,
    ts: f64,
    m: usize,
    n_samples: usize,
    start_angle: f64,
    target: f64,
) -> Vec<f64> {
    let shares = |phi: f64| {
        if target >= 0.0 {
            commutation.shares(phi)
        } else {
            commutation.shares_neg(phi)
        }
    };
    let mut out = Vec::with_capacity(n_samples * m + 1);
    for k in 0..n_samples {
        let f = shares(start_angle + velocity * k as f64 * ts);
        for j in 0..m {
            let t = k as f64 * ts + j as f64 * ts / m as f64;
            out.push(dot(&model.eval_g(start_angle + velocity * t), &f) - target);
        }
    }
    let phi = start_angle + velocity * n_samples as f64 * ts;
    out.push(dot(&model.eval_g(phi), &shares(phi)) - target);
    out
}
