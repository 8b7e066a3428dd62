//! Bounded Nelder-Mead minimizer used for kernel hyperparameters.
//!
//! Trial points are clamped into the box. The search stops when every vertex
//! lies within `diameter_tol` of the best one (infinity norm) or after
//! `max_evals` function evaluations. Failed evaluations should return
//! `f64::INFINITY`.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub diameter_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            diameter_tol: 1e-8,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &NelderMeadOptions,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp(&mut start);
    let v0 = eval(&start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut x = start.clone();
        // step away from the bound if the start sits on it
        x[i] += if x[i] + options.initial_step <= upper[i] {
            options.initial_step
        } else {
            -options.initial_step
        };
        clamp(&mut x);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < options.diameter_tol {
            converged = true;
            break;
        }
        if evals >= options.max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += x[i] / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n)
                .map(|i| centroid[i] + t * (worst.0[i] - centroid[i]))
                .collect();
            clamp(&mut p);
            p
        };

        let reflected = along(-REFLECT);
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded = along(-EXPAND);
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let p = along(-CONTRACT);
            let v = eval(&p, &mut evals);
            (p, v)
        } else {
            let p = along(CONTRACT);
            let v = eval(&p, &mut evals);
            (p, v)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for i in 0..n {
                x[i] = best[i] + SHRINK * (x[i] - best[i]);
            }
            *v = eval(x, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let r = minimize(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + (x[2] - 0.5).powi(2),
            &[0.0, 0.0, 0.0],
            &[-10.0; 3],
            &[10.0; 3],
            &NelderMeadOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.x[1] + 2.0).abs() < 1e-6);
        assert!((r.x[2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[-5.0; 2],
            &[5.0; 2],
            &NelderMeadOptions {
                max_evals: 5000,
                ..Default::default()
            },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_bounds_and_failures() {
        let r = minimize(
            |x| {
                if x[0] < -1.0 {
                    f64::INFINITY
                } else {
                    x[0] + x[1] * x[1]
                }
            },
            &[3.0, 1.0],
            &[-0.5, -4.0],
            &[4.0, 4.0],
            &NelderMeadOptions::default(),
        );
        assert!((r.x[0] + 0.5).abs() < 1e-7);
        assert!(r.x[1].abs() < 1e-4);
    }

    #[test]
    fn eval_cap_stops_search() {
        let r = minimize(
            |x| x[0] * x[0] + x[1] * x[1],
            &[3.0, 3.0],
            &[-10.0; 2],
            &[10.0; 2],
            &NelderMeadOptions {
                max_evals: 10,
                ..Default::default()
            },
        );
        assert!(!r.converged);
        assert!(r.evals <= 12);
    }
}
