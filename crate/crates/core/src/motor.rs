//! Torque-gain model of a three-coil switched reluctance motor.
//!
//! Neglecting saturation, coil `c` produces torque `g_c(phi) * i_c^2`, where
//! `g_c = 1/2 dL_c/dphi` is periodic in the rotor angle with one tooth pitch
//! as period. The model stores each `g_c` as a harmonic series in electrical
//! angle `theta_e = n_teeth * phi`, which makes periodicity exact and lets the
//! optimizer evaluate `g` at arbitrary subsample angles.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of coils (phases) of the motor.
pub const COILS: usize = 3;

/// Default coverage margin used by [`TorqueGainModel::validate`] (Nm/A^2).
pub const DEFAULT_G_MIN: f64 = 1e-3;

/// Probe points per spatial period used by validation.
pub const PROBES_PER_PERIOD: usize = 4096;

const DEFAULT_MODEL_TOML: &str = include_str!("../configs/default_motor.toml");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("n_teeth must be at least 1")]
    ZeroTeeth,
    #[error("coil {coil}: harmonic order must be at least 1")]
    ZeroHarmonicOrder { coil: usize },
    #[error("coil {coil}: non-finite harmonic coefficient")]
    NonFinite { coil: usize },
    #[error("expected {COILS} coils, found {0}")]
    CoilCount(usize),
    #[error("squared current u[{index}] = {value} is negative")]
    NegativeSquaredCurrent { index: usize, value: f64 },
    #[error("model validation failed: {0}")]
    Invalid(String),
    #[error("failed to parse motor config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to read motor config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Rotor tooth count and the derived spatial period `p = 2 pi / n_teeth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotorGeometry {
    n_teeth: u32,
}

impl MotorGeometry {
    pub fn new(n_teeth: u32) -> Result<Self, ModelError> {
        if n_teeth == 0 {
            return Err(ModelError::ZeroTeeth);
        }
        Ok(Self { n_teeth })
    }

    pub fn n_teeth(&self) -> u32 {
        self.n_teeth
    }

    /// One tooth pitch in mechanical radians.
    pub fn spatial_period(&self) -> f64 {
        TAU / f64::from(self.n_teeth)
    }

    /// Electrical angle in `[0, 2 pi)` of a mechanical angle.
    ///
    /// The reduction goes through the tooth count `phi / p` so that `phi` and
    /// `phi + p` land on the same electrical angle up to one ulp of the tooth
    /// count, instead of accumulating `n_teeth * phi` rounding.
    pub fn electrical_angle(&self, phi: f64) -> f64 {
        let teeth = phi / self.spatial_period();
        let frac = teeth - teeth.floor();
        TAU * frac
    }
}

/// One term `amplitude * sin(order * theta_e + phase)` of a coil's series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub order: u32,
    /// Nm/A^2.
    pub amplitude: f64,
    /// Electrical radians.
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoilConfig {
    #[serde(default)]
    harmonics: Vec<Harmonic>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    n_teeth: u32,
    coils: Vec<CoilConfig>,
}

/// Per-coil torque per squared current, `g_c(phi)` in Nm/A^2.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueGainModel {
    geometry: MotorGeometry,
    coils: [Vec<Harmonic>; COILS],
}

impl TorqueGainModel {
    pub fn new(n_teeth: u32, coils: [Vec<Harmonic>; COILS]) -> Result<Self, ModelError> {
        let geometry = MotorGeometry::new(n_teeth)?;
        for (coil, series) in coils.iter().enumerate() {
            for h in series {
                if h.order == 0 {
                    return Err(ModelError::ZeroHarmonicOrder { coil: coil + 1 });
                }
                if !h.amplitude.is_finite() || !h.phase.is_finite() {
                    return Err(ModelError::NonFinite { coil: coil + 1 });
                }
            }
        }
        Ok(Self { geometry, coils })
    }

    /// The bundled default model: `K_c sin(theta_e - 2 pi (c-1)/3 + delta_c)`
    /// with `K = [1.0, 0.9, 1.1]`, `delta = [0, 0.1, -0.1]` and 131 teeth.
    pub fn default_model() -> Self {
        Self::from_toml_str(DEFAULT_MODEL_TOML).expect("bundled motor config is valid")
    }

    pub fn default_config_text() -> &'static str {
        DEFAULT_MODEL_TOML
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let config: ModelConfig = toml::from_str(text)?;
        if config.coils.len() != COILS {
            return Err(ModelError::CoilCount(config.coils.len()));
        }
        let mut it = config.coils.into_iter().map(|c| c.harmonics);
        let coils = [
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
        ];
        Self::new(config.n_teeth, coils)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let config = ModelConfig {
            n_teeth: self.geometry.n_teeth,
            coils: self
                .coils
                .iter()
                .map(|h| CoilConfig {
                    harmonics: h.clone(),
                })
                .collect(),
        };
        toml::to_string(&config).expect("model config serializes")
    }

    pub fn geometry(&self) -> MotorGeometry {
        self.geometry
    }

    pub fn n_teeth(&self) -> u32 {
        self.geometry.n_teeth
    }

    pub fn spatial_period(&self) -> f64 {
        self.geometry.spatial_period()
    }

    pub fn harmonics(&self, coil: usize) -> &[Harmonic] {
        &self.coils[coil]
    }

    /// `[g_1, g_2, g_3]` at mechanical angle `phi`.
    pub fn eval_g(&self, phi: f64) -> [f64; COILS] {
        self.eval_g_electrical(self.geometry.electrical_angle(phi))
    }

    /// `[g_1, g_2, g_3]` at electrical angle `theta_e`.
    pub fn eval_g_electrical(&self, theta_e: f64) -> [f64; COILS] {
        let mut g = [0.0; COILS];
        for (gc, series) in g.iter_mut().zip(&self.coils) {
            *gc = series
                .iter()
                .map(|h| h.amplitude * (f64::from(h.order) * theta_e + h.phase).sin())
                .sum();
        }
        g
    }

    /// Rotor torque `g(phi) . u` for squared coil currents `u`.
    pub fn torque(&self, phi: f64, u: [f64; COILS]) -> Result<f64, ModelError> {
        if let Some((index, &value)) = u.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(ModelError::NegativeSquaredCurrent { index, value });
        }
        Ok(dot(&self.eval_g(phi), &u))
    }

    /// Probe-grid check of periodicity and torque coverage.
    pub fn validate(&self, g_min: f64) -> ValidationReport {
        let p = self.spatial_period();
        let mut periodicity_residual: f64 = 0.0;
        let mut positive_margin = f64::INFINITY;
        let mut negative_margin = f64::INFINITY;
        let mut failures = Vec::new();
        for i in 0..PROBES_PER_PERIOD {
            let phi = p * i as f64 / PROBES_PER_PERIOD as f64;
            let g = self.eval_g(phi);
            let shifted = self.eval_g(phi + p);
            for c in 0..COILS {
                periodicity_residual = periodicity_residual.max((g[c] - shifted[c]).abs());
            }
            let max_g = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min_g = g.iter().copied().fold(f64::INFINITY, f64::min);
            positive_margin = positive_margin.min(max_g);
            negative_margin = negative_margin.min(-min_g);
            if max_g < g_min || min_g > -g_min {
                failures.push(CoverageFailure { phi, max_g, min_g });
            }
        }
        ValidationReport {
            g_min,
            periodicity_residual,
            positive_margin,
            negative_margin,
            failures,
        }
    }

    /// [`validate`](Self::validate) with the default margin, as a `Result`.
    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let report = self.validate(DEFAULT_G_MIN);
        if report.passed() {
            Ok(())
        } else {
            Err(ModelError::Invalid(report.summary()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageFailure {
    pub phi: f64,
    pub max_g: f64,
    pub min_g: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub g_min: f64,
    /// Largest `|g(phi) - g(phi + p)|` over the probe grid.
    pub periodicity_residual: f64,
    /// `min_phi max_c g_c(phi)`; must be at least `g_min`.
    pub positive_margin: f64,
    /// `min_phi -min_c g_c(phi)`; must be at least `g_min`.
    pub negative_margin: f64,
    pub failures: Vec<CoverageFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.periodicity_residual <= 1e-12
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "periodicity residual {:.3e}, positive margin {:.6}, negative margin {:.6} (g_min {:.1e})",
            self.periodicity_residual, self.positive_margin, self.negative_margin, self.g_min
        );
        if let Some(f) = self.failures.first() {
            s.push_str(&format!(
                "; {} probe angles lack coverage, first at phi = {:.6e} (max g {:.3e}, min g {:.3e})",
                self.failures.len(),
                f.phi,
                f.max_g,
                f.min_g
            ));
        }
        s
    }
}

pub(crate) fn dot(a: &[f64; COILS], b: &[f64; COILS]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn reference_default(phi: f64) -> [f64; 3] {
        let k = [1.0, 0.9, 1.1];
        let delta = [0.0, 0.1, -0.1];
        let mut g = [0.0; 3];
        for c in 0..3 {
            g[c] = k[c] * (131.0 * phi - 2.0 * PI * c as f64 / 3.0 + delta[c]).sin();
        }
        g
    }

    #[test]
    fn bundled_config_matches_closed_form() {
        let model = TorqueGainModel::default_model();
        assert_eq!(model.n_teeth(), 131);
        for i in 0..200 {
            let phi = -0.3 + 0.0031 * i as f64;
            let (a, b) = (model.eval_g(phi), reference_default(phi));
            for c in 0..3 {
                assert_abs_diff_eq!(a[c], b[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn quarter_period_peak_and_zero() {
        let model = TorqueGainModel::default_model();
        let p = model.spatial_period();
        assert_abs_diff_eq!(model.eval_g(p / 4.0)[0], 1.0, epsilon = 1e-15);
        assert_eq!(model.eval_g(0.0)[0], 0.0);
    }

    #[test]
    fn shift_by_period_is_identical() {
        let model = TorqueGainModel::default_model();
        let p = model.spatial_period();
        for phi in [0.0, 0.001, 0.013, -0.02] {
            let (a, b) = (model.eval_g(phi), model.eval_g(phi + p));
            for c in 0..3 {
                assert_abs_diff_eq!(a[c], b[c], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn torque_examples() {
        let model = TorqueGainModel::default_model();
        let p = model.spatial_period();
        assert_eq!(model.torque(0.3, [0.0; 3]).unwrap(), 0.0);
        assert_eq!(
            model.torque(0.3, [1.0, 0.0, 0.0]).unwrap(),
            model.eval_g(0.3)[0]
        );
        assert_abs_diff_eq!(
            model.torque(p / 4.0, [2.0, 0.0, 0.0]).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            model.torque(0.0, [1.0, -0.5, 0.0]),
            Err(ModelError::NegativeSquaredCurrent { index: 1, .. })
        ));
    }

    #[test]
    fn default_model_passes_validation() {
        let report = TorqueGainModel::default_model().validate(DEFAULT_G_MIN);
        assert!(report.passed(), "{}", report.summary());
        assert!(report.positive_margin > 0.4);
        assert!(report.negative_margin > 0.4);
    }

    #[test]
    fn single_coil_model_fails_coverage() {
        let coil1 = vec![Harmonic {
            order: 1,
            amplitude: 1.0,
            phase: 0.0,
        }];
        let model = TorqueGainModel::new(131, [coil1, vec![], vec![]]).unwrap();
        let report = model.validate(DEFAULT_G_MIN);
        assert!(!report.passed());
        // Where g_1 <= 0 no coil can push forward.
        let p = model.spatial_period();
        let back = report
            .failures
            .iter()
            .find(|f| f.phi > 0.6 * p && f.phi < 0.9 * p)
            .unwrap();
        assert!(back.max_g < DEFAULT_G_MIN);
        // One coil never offers both signs, so every probe fails.
        assert_eq!(report.failures.len(), PROBES_PER_PERIOD);
        assert!(model.ensure_valid().is_err());
    }

    #[test]
    fn zero_order_rejected() {
        let bad = vec![Harmonic {
            order: 0,
            amplitude: 1.0,
            phase: 0.0,
        }];
        assert!(matches!(
            TorqueGainModel::new(131, [vec![], bad, vec![]]),
            Err(ModelError::ZeroHarmonicOrder { coil: 2 })
        ));
        assert!(matches!(MotorGeometry::new(0), Err(ModelError::ZeroTeeth)));
    }

    #[test]
    fn unknown_config_field_is_an_error() {
        let text = "n_teeth = 8\nfoo = 1\ncoils = []\n";
        assert!(matches!(
            TorqueGainModel::from_toml_str(text),
            Err(ModelError::Parse(_))
        ));
        let text = "n_teeth = 8\n[[coils]]\n[[coils.harmonics]]\norder = 1\namplitude = 1.0\nphase = 0.0\ngain = 2\n";
        assert!(TorqueGainModel::from_toml_str(text).is_err());
    }

    #[test]
    fn config_round_trip() {
        let model = TorqueGainModel::default_model();
        let again = TorqueGainModel::from_toml_str(&model.to_toml_string()).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn coils_are_pairwise_distinct() {
        let model = TorqueGainModel::default_model();
        let p = model.spatial_period();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let max_diff = (0..500)
                .map(|i| {
                    let g = model.eval_g(p * i as f64 / 500.0);
                    (g[a] - g[b]).abs()
                })
                .fold(0.0, f64::max);
            assert!(max_diff > 0.1);
        }
    }

    proptest! {
        #[test]
        fn periodic_for_random_models(
            n_teeth in 1u32..200,
            amps in proptest::collection::vec(-2.0f64..2.0, 3),
            orders in proptest::collection::vec(1u32..5, 3),
            phases in proptest::collection::vec(-4.0f64..4.0, 3),
            phi in -std::f64::consts::PI..std::f64::consts::PI,
        ) {
            let coils = [0, 1, 2].map(|c| vec![Harmonic { order: orders[c], amplitude: amps[c], phase: phases[c] }]);
            let model = TorqueGainModel::new(n_teeth, coils).unwrap();
            let (a, b) = (model.eval_g(phi), model.eval_g(phi + model.spatial_period()));
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() <= 1e-12);
            }
        }

        #[test]
        fn torque_is_linear_in_u(
            phi in -1.0f64..1.0,
            u1 in proptest::array::uniform3(0.0f64..5.0),
            u2 in proptest::array::uniform3(0.0f64..5.0),
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
        ) {
            let model = TorqueGainModel::default_model();
            let mix = [0, 1, 2].map(|c| a * u1[c] + b * u2[c]);
            let lhs = model.torque(phi, mix).unwrap();
            let rhs = a * model.torque(phi, u1).unwrap() + b * model.torque(phi, u2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
