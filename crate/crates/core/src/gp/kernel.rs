//! Periodic Matérn kernel.
//!
//! Angles are mapped onto the unit circle, `x = [sin 2 pi phi / p, cos 2 pi phi / p]`,
//! and a Matérn kernel of half-integer order `mu + 1/2` is applied to the
//! chordal distance between the warped points. Any function built from this
//! kernel is exactly `p`-periodic.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

/// Map an angle onto the unit circle with period `period`.
pub fn warp(phi: f64, period: f64) -> [f64; 2] {
    let q = (phi / period).floor();
    // single rounding for phi - q p
    let mut r = (-q).mul_add(period, phi);
    if r < 0.0 {
        r += period;
    } else if r >= period {
        r -= period;
    }
    let angle = TAU * (r / period);
    let (s, c) = angle.sin_cos();
    [s, c]
}

/// Chordal distance between two warped points.
pub fn chord(x: &[f64; 2], y: &[f64; 2]) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
}

/// Matérn covariance with smoothness index `mu` (order `mu + 1/2`),
/// length-scale and signal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternSpec {
    pub mu: u32,
    pub length_scale: f64,
    pub signal_var: f64,
}

impl MaternSpec {
    pub fn new(mu: u32, length_scale: f64, signal_var: f64) -> Self {
        debug_assert!(length_scale > 0.0 && signal_var > 0.0);
        Self {
            mu,
            length_scale,
            signal_var,
        }
    }

    /// Covariance at scaled distance `rho = r / length_scale`.
    pub fn covariance_at(&self, rho: f64) -> f64 {
        self.signal_var * MaternPoly::new(self.mu).correlation(rho)
    }

    /// Covariance between two warped points.
    pub fn covariance(&self, x: &[f64; 2], y: &[f64; 2]) -> f64 {
        self.covariance_at(chord(x, y) / self.length_scale)
    }
}

/// Precomputed polynomial factor of the half-integer Matérn kernel:
///
/// ```text
/// k(rho) = exp(-s rho) * mu!/(2 mu)! * sum_{i=0}^{mu} (mu+i)! / (i! (mu-i)!) * (2 s rho)^(mu-i)
/// ```
///
/// with `s = sqrt(2 mu + 1)`.
#[derive(Debug, Clone)]
pub struct MaternPoly {
    scale: f64,
    /// Coefficients from the highest power of `2 s rho` down to the constant.
    coeffs: Vec<f64>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl MaternPoly {
    pub fn new(mu: u32) -> Self {
        let raw: Vec<f64> = (0..=mu)
            .map(|i| factorial(mu + i) / (factorial(i) * factorial(mu - i)))
            .collect();
        // the constant term equals (2 mu)!/mu!, so dividing by it gives k(0) = 1 exactly
        let coeffs = raw.iter().map(|c| c / raw[mu as usize]).collect();
        Self {
            scale: f64::from(2 * mu + 1).sqrt(),
            coeffs,
        }
    }

    pub fn correlation(&self, rho: f64) -> f64 {
        let z = 2.0 * self.scale * rho;
        let poly = self.coeffs.iter().fold(0.0, |acc, c| acc * z + c);
        (-self.scale * rho).exp() * poly
    }
}

/// Warp every angle.
pub fn warp_all(angles: &[f64], period: f64) -> Vec<[f64; 2]> {
    angles.iter().map(|&a| warp(a, period)).collect()
}

/// Symmetric matrix of chordal distances between warped points.
pub fn chord_matrix(warped: &[[f64; 2]]) -> DMatrix<f64> {
    let n = warped.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = chord(&warped[i], &warped[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Gram matrix from precomputed chordal distances.
pub fn gram_from_chords(chords: &DMatrix<f64>, spec: &MaternSpec) -> DMatrix<f64> {
    let n = chords.nrows();
    let poly = MaternPoly::new(spec.mu);
    let inv_l = spec.length_scale.recip();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.signal_var;
        for j in (i + 1)..n {
            let v = spec.signal_var * poly.correlation(chords[(i, j)] * inv_l);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gram matrix of the periodic kernel on `angles`.
pub fn gram(angles: &[f64], spec: &MaternSpec, period: f64) -> DMatrix<f64> {
    gram_from_chords(&chord_matrix(&warp_all(angles, period)), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn warp_examples() {
        let p = 0.7;
        let w = warp(0.0, p);
        assert_eq!(w, [0.0, 1.0]);
        let w = warp(p / 4.0, p);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn matern_examples() {
        let spec = MaternSpec::new(1, 1.0, 1.0);
        let s3 = 3f64.sqrt();
        assert_abs_diff_eq!(
            spec.covariance_at(1.0),
            (1.0 + s3) * (-s3).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(spec.covariance_at(1.0), 0.483_358, epsilon = 1e-6);
        for mu in 0..6 {
            let spec = MaternSpec::new(mu, 0.3, 2.5);
            let x = warp(0.123, 1.0);
            assert_eq!(spec.covariance(&x, &x), 2.5);
        }
    }

    /// Textbook closed forms of Matérn 1/2, 3/2 and 5/2.
    fn closed_form(mu: u32, r: f64) -> f64 {
        match mu {
            0 => (-r).exp(),
            1 => (1.0 + 3f64.sqrt() * r) * (-3f64.sqrt() * r).exp(),
            2 => (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-5f64.sqrt() * r).exp(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn gram_examples() {
        let spec = MaternSpec::new(3, 0.5, 1.7);
        let k = gram(&[0.2], &spec, 1.0);
        assert_eq!(k.shape(), (1, 1));
        assert_eq!(k[(0, 0)], 1.7);
        let p = 0.4;
        let k = gram(&[0.1, 0.1 + p, 0.25, 0.33], &spec, p);
        for j in 0..4 {
            assert_abs_diff_eq!(k[(0, j)], k[(1, j)], epsilon = 1e-12);
        }
        assert_eq!(k, k.transpose());
    }

    proptest! {
        #[test]
        fn matches_closed_forms(mu in 0u32..3, r in 0.0f64..6.0) {
            let poly = MaternPoly::new(mu);
            prop_assert!((poly.correlation(r) - closed_form(mu, r)).abs() <= 1e-12);
        }

        #[test]
        fn gram_is_psd(angles in proptest::collection::vec(-5.0f64..5.0, 1..50), ls in 0.05f64..3.0, mu in 0u32..5) {
            let spec = MaternSpec::new(mu, ls, 1.3);
            let k = gram(&angles, &spec, 0.9);
            let eig = k.symmetric_eigenvalues();
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-10 * 1.3, "min eigenvalue {}", min);
            for i in 0..angles.len() {
                prop_assert_eq!(k[(i, i)], 1.3);
            }
        }

        #[test]
        fn warp_is_unit_and_periodic(phi in -5.0f64..5.0, p in 0.05f64..7.0) {
            let a = warp(phi, p);
            prop_assert!((a[0].hypot(a[1]) - 1.0).abs() <= 1e-15);
            let b = warp(phi + p, p);
            prop_assert!(chord(&a, &b) <= 1e-12);
        }
    }
}
