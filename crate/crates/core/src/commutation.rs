//! Commutation functions: rotor angle and requested torque to squared coil
//! currents.
//!
//! A commutation function is described by two share vectors per angle, the
//! squared currents per newton-metre for a positive and for a negative torque
//! request. [`commute`] scales the one matching the sign of the request, so
//! the output stays a valid vector of squared currents for either sign.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motor::{dot, MotorGeometry, TorqueGainModel, COILS};

#[derive(Debug, Error)]
pub enum CommutationError {
    #[error("torque sharing argument {0} outside [0, 1]")]
    RiseArgument(f64),
    #[error("overlap {0} rad must lie in (0, 2pi/3) electrical")]
    Overlap(f64),
    #[error("saturation level {0} must be positive")]
    Saturation(f64),
    #[error("invalid commutation table: {0}")]
    Table(String),
}

/// Angle-dependent current shares for unit positive and unit negative torque.
pub trait CommutationFunction: Send + Sync {
    /// Spatial period in mechanical radians.
    fn period(&self) -> f64;

    /// Squared currents (A^2) that should produce +1 Nm at `phi`.
    fn shares(&self, phi: f64) -> [f64; COILS];

    /// Squared currents (A^2) that should produce -1 Nm at `phi`.
    fn shares_neg(&self, phi: f64) -> [f64; COILS];
}

impl<T: CommutationFunction + ?Sized> CommutationFunction for &T {
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn shares(&self, phi: f64) -> [f64; COILS] {
        (**self).shares(phi)
    }
    fn shares_neg(&self, phi: f64) -> [f64; COILS] {
        (**self).shares_neg(phi)
    }
}

impl<T: CommutationFunction + ?Sized> CommutationFunction for Box<T> {
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn shares(&self, phi: f64) -> [f64; COILS] {
        (**self).shares(phi)
    }
    fn shares_neg(&self, phi: f64) -> [f64; COILS] {
        (**self).shares_neg(phi)
    }
}

/// Squared currents for torque request `torque_ref` at angle `phi`.
pub fn commute<F: CommutationFunction + ?Sized>(f: &F, phi: f64, torque_ref: f64) -> [f64; COILS] {
    let (shares, scale) = if torque_ref >= 0.0 {
        (f.shares(phi), torque_ref)
    } else {
        (f.shares_neg(phi), -torque_ref)
    };
    shares.map(|s| (s * scale).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsfKind {
    Sine,
    Cubic,
    Linear,
}

impl TsfKind {
    pub const ALL: [TsfKind; 3] = [TsfKind::Sine, TsfKind::Cubic, TsfKind::Linear];

    pub fn name(self) -> &'static str {
        match self {
            TsfKind::Sine => "sine",
            TsfKind::Cubic => "cubic",
            TsfKind::Linear => "linear",
        }
    }
}

impl std::str::FromStr for TsfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sine" => Ok(TsfKind::Sine),
            "cubic" => Ok(TsfKind::Cubic),
            "linear" => Ok(TsfKind::Linear),
            other => Err(format!("unknown torque sharing kind '{other}'")),
        }
    }
}

/// Rising edge of a torque sharing function, mapping `[0, 1]` onto `[0, 1]`.
pub fn tsf_rise(kind: TsfKind, x: f64) -> Result<f64, CommutationError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(CommutationError::RiseArgument(x));
    }
    Ok(rise_unchecked(kind, x))
}

fn rise_unchecked(kind: TsfKind, x: f64) -> f64 {
    match kind {
        TsfKind::Sine => 0.5 - 0.5 * (PI * x).cos(),
        TsfKind::Cubic => x * x * (3.0 - 2.0 * x),
        TsfKind::Linear => x,
    }
}

/// Clamp `x` to `[-a, a]`.
pub fn saturate(x: f64, a: f64) -> f64 {
    x.clamp(-a, a)
}

/// Wrap an angle to `[-pi, pi)`.
fn wrap_pi(x: f64) -> f64 {
    x - TAU * ((x + PI) / TAU).floor()
}

/// Conventional torque-sharing commutation: each coil conducts over a window
/// of `2pi/3 + overlap` electrical radians, with rising and falling ramps of
/// width `overlap`, and its share is divided by `g_c` (saturated at `a`).
#[derive(Debug, Clone)]
pub struct ConventionalTsf {
    kind: TsfKind,
    overlap: f64,
    saturation: f64,
    model: TorqueGainModel,
    /// Electrical center of coil 1's positive-torque window.
    anchor: f64,
}

impl ConventionalTsf {
    /// Overlap used in the reference study, pi/6 electrical.
    pub const DEFAULT_OVERLAP: f64 = PI / 6.0;
    /// Saturation level used in the reference study, A^2/Nm.
    pub const DEFAULT_SATURATION: f64 = 3.0;

    pub fn new(
        model: TorqueGainModel,
        kind: TsfKind,
        overlap: f64,
        saturation: f64,
    ) -> Result<Self, CommutationError> {
        if !(overlap > 0.0 && overlap < TAU / 3.0) {
            return Err(CommutationError::Overlap(overlap));
        }
        if !(saturation > 0.0) || !saturation.is_finite() {
            return Err(CommutationError::Saturation(saturation));
        }
        let anchor = window_anchor(&model);
        Ok(Self {
            kind,
            overlap,
            saturation,
            model,
            anchor,
        })
    }

    pub fn with_defaults(model: TorqueGainModel, kind: TsfKind) -> Self {
        Self::new(model, kind, Self::DEFAULT_OVERLAP, Self::DEFAULT_SATURATION)
            .expect("default TSF parameters are valid")
    }

    pub fn kind(&self) -> TsfKind {
        self.kind
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn saturation(&self) -> f64 {
        self.saturation
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn model(&self) -> &TorqueGainModel {
        &self.model
    }

    fn window_share(&self, theta_e: f64, center: f64) -> f64 {
        let half = 0.5 * (TAU / 3.0 + self.overlap);
        let d = wrap_pi(theta_e - center);
        if d.abs() >= half {
            0.0
        } else if d < -half + self.overlap {
            rise_unchecked(self.kind, (d + half) / self.overlap)
        } else if d > half - self.overlap {
            1.0 - rise_unchecked(self.kind, (d - half + self.overlap) / self.overlap)
        } else {
            1.0
        }
    }

    fn center(&self, coil: usize) -> f64 {
        self.anchor + TAU * coil as f64 / 3.0
    }

    /// Positive-torque share of `coil` (0-based) at electrical angle `theta_e`.
    pub fn share(&self, theta_e: f64, coil: usize) -> f64 {
        self.window_share(theta_e, self.center(coil))
    }

    /// Negative-torque share; windows are shifted by half an electrical period.
    pub fn share_neg(&self, theta_e: f64, coil: usize) -> f64 {
        self.window_share(theta_e, self.center(coil) + PI)
    }

    /// `share_c(theta_e) * sat(1/g_c(phi))`, clamped at zero.
    pub fn eval_conventional(&self, phi: f64) -> [f64; COILS] {
        let theta_e = self.model.geometry().electrical_angle(phi);
        let g = self.model.eval_g_electrical(theta_e);
        let mut out = [0.0; COILS];
        for c in 0..COILS {
            let s = self.share(theta_e, c);
            if s > 0.0 {
                out[c] = (s * saturate(g[c].recip(), self.saturation)).max(0.0);
            }
        }
        out
    }

    /// Mirror of [`eval_conventional`](Self::eval_conventional) for -1 Nm,
    /// using `sat(1/|g_c|)` on the windows where `g_c < 0`.
    pub fn eval_conventional_neg(&self, phi: f64) -> [f64; COILS] {
        let theta_e = self.model.geometry().electrical_angle(phi);
        let g = self.model.eval_g_electrical(theta_e);
        let mut out = [0.0; COILS];
        for c in 0..COILS {
            let s = self.share_neg(theta_e, c);
            if s > 0.0 {
                out[c] = (s * saturate((-g[c]).recip(), self.saturation)).max(0.0);
            }
        }
        out
    }
}

impl CommutationFunction for ConventionalTsf {
    fn period(&self) -> f64 {
        self.model.spatial_period()
    }
    fn shares(&self, phi: f64) -> [f64; COILS] {
        self.eval_conventional(phi)
    }
    fn shares_neg(&self, phi: f64) -> [f64; COILS] {
        self.eval_conventional_neg(phi)
    }
}

/// Electrical angle where `g_c` peaks, by probing and golden-section refinement.
fn argmax_electrical(model: &TorqueGainModel, coil: usize) -> f64 {
    const PROBES: usize = 2048;
    let f = |t: f64| model.eval_g_electrical(t)[coil];
    let step = TAU / PROBES as f64;
    let best = (0..PROBES)
        .map(|i| i as f64 * step)
        .fold((0.0, f64::NEG_INFINITY), |acc, t| {
            let v = f(t);
            if v > acc.1 {
                (t, v)
            } else {
                acc
            }
        })
        .0;
    let (mut lo, mut hi) = (best - step, best + step);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - inv_phi * (hi - lo);
        let b = lo + inv_phi * (hi - lo);
        if f(a) >= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    // golden section stalls near sqrt(eps); finish with Newton on f'
    let h = 1e-5;
    let mut t = 0.5 * (lo + hi);
    for _ in 0..3 {
        let (fm, f0, fp) = (f(t - h), f(t), f(t + h));
        let d2 = (fp - 2.0 * f0 + fm) / (h * h);
        if !(d2 < 0.0) {
            break;
        }
        let dt = -(fp - fm) / (2.0 * h) / d2;
        if dt.abs() > step {
            break;
        }
        t += dt;
    }
    t
}

/// Circular mean of the per-coil peak angles after removing the nominal
/// 2pi/3 coil spacing. For a model with evenly spaced coils this is the peak
/// of coil 1.
fn window_anchor(model: &TorqueGainModel) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    let mut any = false;
    for coil in 0..COILS {
        if model.harmonics(coil).iter().all(|h| h.amplitude == 0.0) {
            continue;
        }
        let offset = argmax_electrical(model, coil) - TAU * coil as f64 / 3.0;
        s += offset.sin();
        c += offset.cos();
        any = true;
    }
    if !any || (s == 0.0 && c == 0.0) {
        return FRAC_PI_2;
    }
    s.atan2(c)
}

/// Commutation by periodic linear interpolation of grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutationTable {
    geometry: MotorGeometry,
    /// Electrical angles, uniform, spanning one period.
    grid: Vec<f64>,
    positive: Vec<[f64; COILS]>,
    negative: Option<Vec<[f64; COILS]>>,
}

impl CommutationTable {
    pub fn new(
        geometry: MotorGeometry,
        grid: Vec<f64>,
        positive: Vec<[f64; COILS]>,
        negative: Option<Vec<[f64; COILS]>>,
    ) -> Result<Self, CommutationError> {
        let n = grid.len();
        if n < 2 {
            return Err(CommutationError::Table(format!(
                "grid has {n} points, need at least 2"
            )));
        }
        let spacing = TAU / n as f64;
        for (i, w) in grid.windows(2).enumerate() {
            if (w[1] - w[0] - spacing).abs() > 1e-9 {
                return Err(CommutationError::Table(format!(
                    "grid is not uniform with spacing 2pi/{n} at index {}",
                    i + 1
                )));
            }
        }
        let check = |values: &[[f64; COILS]], label: &str| -> Result<(), CommutationError> {
            if values.len() != n {
                return Err(CommutationError::Table(format!(
                    "{label} table has {} rows, grid has {n}",
                    values.len()
                )));
            }
            if let Some(i) = values
                .iter()
                .position(|r| r.iter().any(|v| !(*v >= -1e-12)))
            {
                return Err(CommutationError::Table(format!(
                    "{label} table row {i} has a negative or non-finite value"
                )));
            }
            Ok(())
        };
        check(&positive, "positive")?;
        if let Some(neg) = &negative {
            check(neg, "negative")?;
        }
        let clamp = |v: Vec<[f64; COILS]>| -> Vec<[f64; COILS]> {
            v.into_iter().map(|r| r.map(|x| x.max(0.0))).collect()
        };
        Ok(Self {
            geometry,
            grid,
            positive: clamp(positive),
            negative: negative.map(clamp),
        })
    }

    pub fn geometry(&self) -> MotorGeometry {
        self.geometry
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn positive(&self) -> &[[f64; COILS]] {
        &self.positive
    }

    pub fn negative(&self) -> Option<&[[f64; COILS]]> {
        self.negative.as_deref()
    }

    fn interpolate(&self, values: &[[f64; COILS]], phi: f64) -> [f64; COILS] {
        let n = self.grid.len();
        let theta = self.geometry.electrical_angle(phi);
        let x = (theta - self.grid[0]).rem_euclid(TAU) / TAU * n as f64;
        let i = x.floor();
        let w = x - i;
        let i = (i as usize) % n;
        let j = (i + 1) % n;
        let (a, b) = (values[i], values[j]);
        [0, 1, 2].map(|c| (1.0 - w) * a[c] + w * b[c])
    }
}

impl CommutationFunction for CommutationTable {
    fn period(&self) -> f64 {
        self.geometry.spatial_period()
    }
    fn shares(&self, phi: f64) -> [f64; COILS] {
        self.interpolate(&self.positive, phi)
    }
    /// Zero when the table carries no negative-torque values.
    fn shares_neg(&self, phi: f64) -> [f64; COILS] {
        match &self.negative {
            Some(neg) => self.interpolate(neg, phi),
            None => [0.0; COILS],
        }
    }
}

/// Rescales another commutation function so that `g(phi) . f(phi) = +-1`
/// holds exactly at every angle where the wrapped shares produce torque of
/// the right sign.
#[derive(Debug, Clone)]
pub struct Rescaled<C> {
    inner: C,
    model: TorqueGainModel,
}

impl<C: CommutationFunction> Rescaled<C> {
    pub fn new(inner: C, model: TorqueGainModel) -> Self {
        Self { inner, model }
    }
}

impl<C: CommutationFunction> CommutationFunction for Rescaled<C> {
    fn period(&self) -> f64 {
        self.inner.period()
    }
    fn shares(&self, phi: f64) -> [f64; COILS] {
        let s = self.inner.shares(phi);
        let t = dot(&self.model.eval_g(phi), &s);
        if t > 0.0 {
            s.map(|v| v / t)
        } else {
            s
        }
    }
    fn shares_neg(&self, phi: f64) -> [f64; COILS] {
        let s = self.inner.shares_neg(phi);
        let t = -dot(&self.model.eval_g(phi), &s);
        if t > 0.0 {
            s.map(|v| v / t)
        } else {
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sine_tsf() -> ConventionalTsf {
        ConventionalTsf::with_defaults(TorqueGainModel::default_model(), TsfKind::Sine)
    }

    #[test]
    fn rise_examples() {
        assert_abs_diff_eq!(tsf_rise(TsfKind::Sine, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(tsf_rise(TsfKind::Cubic, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(tsf_rise(TsfKind::Linear, 0.25).unwrap(), 0.25);
        for kind in TsfKind::ALL {
            assert_eq!(tsf_rise(kind, 0.0).unwrap(), 0.0);
            assert_abs_diff_eq!(tsf_rise(kind, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        }
        assert!(tsf_rise(TsfKind::Sine, 1.01).is_err());
        assert!(tsf_rise(TsfKind::Linear, -0.1).is_err());
    }

    #[test]
    fn rise_is_monotone() {
        for kind in TsfKind::ALL {
            let mut prev = 0.0;
            for i in 0..=1000 {
                let v = tsf_rise(kind, i as f64 / 1000.0).unwrap();
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(10.0, 3.0), 3.0);
        assert_eq!(saturate(-10.0, 3.0), -3.0);
        assert_eq!(saturate(0.2, 3.0), 0.2);
    }

    #[test]
    fn rejects_bad_parameters() {
        let model = TorqueGainModel::default_model();
        assert!(ConventionalTsf::new(model.clone(), TsfKind::Sine, 0.0, 3.0).is_err());
        assert!(ConventionalTsf::new(model.clone(), TsfKind::Sine, 2.1, 3.0).is_err());
        assert!(ConventionalTsf::new(model, TsfKind::Sine, 0.5, 0.0).is_err());
    }

    #[test]
    fn anchor_is_coil_one_peak_for_default_model() {
        assert_abs_diff_eq!(sine_tsf().anchor(), FRAC_PI_2, epsilon = 1e-9);
    }

    #[test]
    fn window_center_is_plateau() {
        let tsf = sine_tsf();
        for c in 0..3 {
            let center = tsf.anchor() + TAU * c as f64 / 3.0;
            assert_eq!(tsf.share(center, c), 1.0);
            assert_eq!(tsf.share_neg(center + PI, c), 1.0);
        }
    }

    #[test]
    fn shift_maps_coil_one_onto_coil_two() {
        let tsf = sine_tsf();
        for i in 0..360 {
            let t = i as f64 * TAU / 360.0;
            assert_abs_diff_eq!(
                tsf.share(t, 0),
                tsf.share(t + TAU / 3.0, 1),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                tsf.share(t, 1),
                tsf.share(t + TAU / 3.0, 2),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn peak_of_coil_one_gets_unit_share() {
        let tsf = sine_tsf();
        let p = tsf.model().spatial_period();
        let f = tsf.eval_conventional(p / 4.0);
        assert_abs_diff_eq!(f[0], 1.0, epsilon = 1e-12);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 0.0);
    }

    #[test]
    fn saturation_where_gain_vanishes_inside_window() {
        // g_1 = 0.1 sin(theta) is small inside coil 1's whole window.
        let weak = TorqueGainModel::new(
            131,
            [
                vec![crate::Harmonic {
                    order: 1,
                    amplitude: 0.1,
                    phase: 0.0,
                }],
                vec![crate::Harmonic {
                    order: 1,
                    amplitude: 1.0,
                    phase: -TAU / 3.0,
                }],
                vec![crate::Harmonic {
                    order: 1,
                    amplitude: 1.0,
                    phase: -2.0 * TAU / 3.0,
                }],
            ],
        )
        .unwrap();
        let tsf = ConventionalTsf::with_defaults(weak, TsfKind::Sine);
        let p = tsf.model().spatial_period();
        let f = tsf.eval_conventional(p / 4.0);
        assert_eq!(f[0], 3.0);
    }

    #[test]
    fn unit_torque_where_unsaturated() {
        for kind in TsfKind::ALL {
            let tsf = ConventionalTsf::with_defaults(TorqueGainModel::default_model(), kind);
            let model = tsf.model().clone();
            let p = model.spatial_period();
            let mut checked = 0;
            for i in 0..5000 {
                let phi = p * i as f64 / 5000.0;
                let theta = model.geometry().electrical_angle(phi);
                let g = model.eval_g(phi);
                let active_ok =
                    (0..3).all(|c| tsf.share(theta, c) == 0.0 || g[c].abs() >= 1.0 / 3.0);
                if active_ok {
                    let f = tsf.eval_conventional(phi);
                    assert!((dot(&g, &f) - 1.0).abs() <= 1e-10, "{kind:?} at {phi}");
                    checked += 1;
                }
                let active_ok =
                    (0..3).all(|c| tsf.share_neg(theta, c) == 0.0 || g[c].abs() >= 1.0 / 3.0);
                if active_ok {
                    let f = tsf.eval_conventional_neg(phi);
                    assert!((dot(&g, &f) + 1.0).abs() <= 1e-10);
                }
            }
            assert!(checked > 4000);
        }
    }

    #[test]
    fn commute_scales_and_selects_sign() {
        struct Fixed;
        impl CommutationFunction for Fixed {
            fn period(&self) -> f64 {
                1.0
            }
            fn shares(&self, _: f64) -> [f64; 3] {
                [0.5, 0.0, 0.2]
            }
            fn shares_neg(&self, _: f64) -> [f64; 3] {
                [0.0, 0.7, 0.0]
            }
        }
        assert_eq!(commute(&Fixed, 0.0, 2.0), [1.0, 0.0, 0.4]);
        assert_eq!(commute(&Fixed, 0.0, 0.0), [0.0, 0.0, 0.0]);
        assert_eq!(commute(&Fixed, 0.0, -1.0), [0.0, 0.7, 0.0]);
    }

    #[test]
    fn negative_request_produces_negative_torque() {
        let model = TorqueGainModel::default_model();
        let tsf = Rescaled::new(sine_tsf(), model.clone());
        for i in 0..100 {
            let phi = 0.0007 * i as f64;
            let u = commute(&tsf, phi, -1.0);
            assert_abs_diff_eq!(model.torque(phi, u).unwrap(), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn table_interpolates_and_validates() {
        let geometry = MotorGeometry::new(4).unwrap();
        let grid = vec![-PI, -FRAC_PI_2, 0.0, FRAC_PI_2];
        let values = vec![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ];
        let table = CommutationTable::new(geometry, grid.clone(), values.clone(), None).unwrap();
        let p = geometry.spatial_period();
        // electrical -pi/4 is halfway between rows 1 and 2
        let phi = -PI / 4.0 / 4.0;
        let s = table.shares(phi);
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], 0.5, epsilon = 1e-12);
        let s2 = table.shares(phi + p);
        for c in 0..3 {
            assert_abs_diff_eq!(s[c], s2[c], epsilon = 1e-12);
        }
        assert_eq!(table.shares_neg(phi), [0.0; 3]);

        let mut bad = values.clone();
        bad[2][1] = -0.1;
        assert!(CommutationTable::new(geometry, grid.clone(), bad, None).is_err());
        assert!(CommutationTable::new(geometry, vec![0.0, 1.0, 2.0, 3.0], values, None).is_err());
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(theta in -20.0f64..20.0, k in 0usize..3) {
            let kind = TsfKind::ALL[k];
            let tsf = ConventionalTsf::with_defaults(TorqueGainModel::default_model(), kind);
            let sum: f64 = (0..3).map(|c| tsf.share(theta, c)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let sum_neg: f64 = (0..3).map(|c| tsf.share_neg(theta, c)).sum();
            prop_assert!((sum_neg - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn conventional_is_periodic_and_nonnegative(phi in -3.0f64..3.0, k in 0usize..3, torque in -5.0f64..5.0) {
            let tsf = ConventionalTsf::with_defaults(TorqueGainModel::default_model(), TsfKind::ALL[k]);
            let p = tsf.period();
            let (a, b) = (tsf.shares(phi), tsf.shares(phi + p));
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() <= 1e-12);
            }
            prop_assert!(commute(&tsf, phi, torque).iter().all(|u| *u >= 0.0));
        }
    }
}
